fn main() {
    std::process::exit(widenet::cli::run(std::env::args_os()));
}
