//! Command-line entry point. Exit status: 0 on success, 1 when a requested
//! check fails or a computation breaks down, 2 on usage or configuration
//! errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde_json::{json, Value};

use crate::analysis::{self, Setup, SweepExtras};
use crate::config::{self, ExperimentConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::io::{self, fmt_real, real_row};
use crate::kernel;
use crate::limit_ode::{self, GaussianSampler};
use crate::network;
use crate::seed::{self, Purpose};
use crate::sgd::{self, SgdConfig, TestFunction};

/// Significance level of the Gaussianity check.
pub const KS_LEVEL: f64 = 0.01;
/// Largest accepted sup-distance between RK4 and the spectral solution.
pub const RK4_TOLERANCE: f64 = 1e-8;

/// Output file names, in report order.
pub const OUTPUTS: [&str; 5] = ["simulate.json", "kernel.json", "ode.json", "gauss_test.json", "sweep.json"];

#[derive(Parser, Debug)]
#[command(name = "widenet", version, about = "Wide single-layer network SGD versus its kernel ODE limit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one network and record h_t on the dataset.
    Simulate(Flags),
    /// Estimate the limit kernel A and check positive definiteness.
    Kernel(Flags),
    /// Solve the limit ODE from a Gaussian initial condition.
    Ode(Flags),
    /// KS test of the initial output against its Gaussian limit.
    #[command(name = "gauss-test")]
    GaussTest(Flags),
    /// Width sweep of coupled deviation, stationarity and martingale variance.
    Sweep(Flags),
    /// Summarize the JSON outputs found in the output directory.
    Report(Flags),
}

#[derive(Args, Debug, Default)]
struct Flags {
    /// key = value configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
    /// tanh or sigmoid.
    #[arg(long)]
    activation: Option<String>,
    /// zero or uniform:<half-width>.
    #[arg(long = "c-law")]
    c_law: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long = "T")]
    horizon: Option<String>,
    #[arg(long = "N")]
    n: Option<String>,
    /// Comma-separated widths.
    #[arg(long = "Ns")]
    ns: Option<String>,
    #[arg(long)]
    replicas: Option<String>,
    #[arg(long = "n-mc")]
    n_mc: Option<String>,
    #[arg(long = "grid-points")]
    grid_points: Option<String>,
    #[arg(long)]
    dt: Option<String>,
    #[arg(long = "n-nodes")]
    n_nodes: Option<String>,
    #[arg(long = "pd-threshold")]
    pd_threshold: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long = "x-index")]
    x_index: Option<String>,
    #[arg(long = "martingale-Ns")]
    martingale_ns: Option<String>,
    #[arg(long = "martingale-replicas")]
    martingale_replicas: Option<String>,
    /// Exit with status 1 when the subcommand's check fails.
    #[arg(long)]
    check: bool,
}

impl Flags {
    fn overrides(&self) -> BTreeMap<String, String> {
        let pairs = [
            ("seed", &self.seed),
            ("out", &self.out),
            ("workers", &self.workers),
            ("dataset", &self.dataset),
            ("activation", &self.activation),
            ("c_law", &self.c_law),
            ("alpha", &self.alpha),
            ("T", &self.horizon),
            ("N", &self.n),
            ("Ns", &self.ns),
            ("replicas", &self.replicas),
            ("n_mc", &self.n_mc),
            ("grid_points", &self.grid_points),
            ("dt", &self.dt),
            ("n_nodes", &self.n_nodes),
            ("pd_threshold", &self.pd_threshold),
            ("seeds", &self.seeds),
            ("x_index", &self.x_index),
            ("martingale_Ns", &self.martingale_ns),
            ("martingale_replicas", &self.martingale_replicas),
        ];
        let mut m: BTreeMap<String, String> = pairs
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect();
        if self.check {
            m.insert("check".into(), "true".into());
        }
        m
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical(_) | Error::Overflow { .. } | Error::StepSize(_) => 1,
        _ => 2,
    }
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(command: Command) -> Result<bool> {
    let (name, flags) = match &command {
        Command::Simulate(f) => ("simulate", f),
        Command::Kernel(f) => ("kernel", f),
        Command::Ode(f) => ("ode", f),
        Command::GaussTest(f) => ("gauss-test", f),
        Command::Sweep(f) => ("sweep", f),
        Command::Report(f) => ("report", f),
    };
    let file = match &flags.config {
        Some(p) => config::read_file(p)?,
        None => BTreeMap::new(),
    };
    let cfg = ExperimentConfig::resolve(&file, &flags.overrides())?;
    let ds = if name == "report" {
        None
    } else {
        Some(Dataset::from_csv(cfg.dataset_path()?)?)
    };
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.workers)))?;
    let passed = pool.install(|| match (name, ds.as_ref()) {
        ("report", _) => report(&cfg),
        ("simulate", Some(ds)) => simulate(&cfg, ds),
        ("kernel", Some(ds)) => kernel_cmd(&cfg, ds),
        ("ode", Some(ds)) => ode(&cfg, ds),
        ("gauss-test", Some(ds)) => gauss_test(&cfg, ds),
        (_, Some(ds)) => sweep(&cfg, ds),
        (_, None) => unreachable!("dataset loaded for every non-report subcommand"),
    })?;
    Ok(passed || !cfg.check)
}

fn numbered(prefix: &str, m: usize) -> Vec<String> {
    (1..=m).map(|i| format!("{prefix}{i}")).collect()
}

fn with_meta(cfg: &ExperimentConfig, mut body: serde_json::Map<String, Value>, passed: bool) -> Value {
    body.insert("config".into(), json!(cfg.echo()));
    body.insert("seed".into(), json!(cfg.seed));
    body.insert("passed".into(), json!(passed));
    Value::Object(body)
}

fn object(v: Value) -> serde_json::Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => serde_json::Map::new(),
    }
}

fn simulate(cfg: &ExperimentConfig, ds: &Dataset) -> Result<bool> {
    let law = cfg.law();
    let p0 = network::init(cfg.n, ds.dim(), &law, &mut seed::substream(cfg.seed, Purpose::Init, 0))?;
    let sc = SgdConfig::with_grid(cfg.alpha, cfg.horizon, cfg.grid_points, cfg.seed)?;
    let traj = sgd::train(&p0, cfg.activation, ds, &sc)?;
    let mut header = vec!["t".to_string()];
    header.extend(numbered("h_", ds.len()));
    header.push("c_max".into());
    let rows: Vec<Vec<String>> = (0..traj.times.len())
        .map(|j| {
            let mut r = vec![traj.times[j]];
            r.extend(&traj.h[j]);
            r.push(traj.c_max[j]);
            real_row(&r)
        })
        .collect();
    io::write_csv(&cfg.out.join("trajectory.csv"), &header, &rows)?;
    let final_loss = network::loss(&traj.final_params, cfg.activation, ds);
    let body = object(json!({
        "N": cfg.n,
        "step_count": traj.step_count,
        "final_loss": final_loss,
        "g_abs_max": traj.g_abs_max,
        "c_max": traj.c_max.last().copied().unwrap_or(0.0),
    }));
    io::write_json(&cfg.out.join("simulate.json"), &with_meta(cfg, body, true))?;
    println!("simulate: N={} steps={} final loss {}", cfg.n, traj.step_count, fmt_real(final_loss));
    Ok(true)
}

fn matrix_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<String>> {
    (0..m.nrows())
        .map(|i| real_row(&m.row(i).iter().copied().collect::<Vec<_>>()))
        .collect()
}

fn kernel_cmd(cfg: &ExperimentConfig, ds: &Dataset) -> Result<bool> {
    let law = cfg.law();
    let kseed = analysis::kernel_seed(cfg.seed);
    let k = kernel::estimate_a(&law, cfg.activation, ds, cfg.alpha, cfg.n_mc, kseed)?;
    let pd = kernel::check_pd(&k.a, cfg.pd_threshold)?;
    let warnings: Vec<String> = kernel::degeneracy_warnings(cfg.activation, &ds.inputs())
        .iter()
        .map(|w| w.to_string())
        .collect();
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let quadrature_deviation = if ds.dim() == 1 {
        let q = kernel::quadrature_a_1d(&law, cfg.activation, ds, cfg.alpha, cfg.n_nodes)?;
        json!((q - &k.a).amax())
    } else {
        Value::Null
    };
    let header = numbered("a_", ds.len());
    io::write_csv(&cfg.out.join("kernel.csv"), &header, &matrix_rows(&k.a))?;
    io::write_csv(&cfg.out.join("kernel_stderr.csv"), &header, &matrix_rows(&k.stderr))?;
    let body = object(json!({
        "alpha": k.alpha,
        "n_mc": k.n_mc,
        "kernel_seed": kseed,
        "lambda_min": pd.lambda_min,
        "lambda_max": pd.lambda_max,
        "eigenvalues": pd.eigenvalues,
        "max_stderr": k.max_stderr(),
        "pd_threshold": pd.threshold,
        "is_pd": pd.is_pd,
        "warnings": warnings,
        "quadrature_max_deviation": quadrature_deviation,
    }));
    io::write_json(&cfg.out.join("kernel.json"), &with_meta(cfg, body, pd.is_pd))?;
    println!(
        "kernel: M={} lambda_min={} lambda_max={} positive definite: {}",
        ds.len(),
        fmt_real(pd.lambda_min),
        fmt_real(pd.lambda_max),
        pd.is_pd
    );
    Ok(pd.is_pd)
}

fn ode(cfg: &ExperimentConfig, ds: &Dataset) -> Result<bool> {
    let law = cfg.law();
    let k = kernel::estimate_a(&law, cfg.activation, ds, cfg.alpha, cfg.n_mc, analysis::kernel_seed(cfg.seed))?;
    let sigma = network::init_output_covariance(
        &law,
        cfg.activation,
        ds,
        cfg.n_mc,
        seed::derive(cfg.seed, Purpose::Covariance, 0),
    )?;
    let h0 = GaussianSampler::new(&sigma.value)?.sample(&mut seed::substream(cfg.seed, Purpose::InitialCondition, 0));
    let y = DVector::from_vec(ds.targets());
    let sol = limit_ode::solve_spectral(&k.a, &y, &h0)?;
    let mut header = vec!["t".to_string()];
    header.extend(numbered("h_", ds.len()));
    header.push("J".into());
    header.push("max_error".into());
    let times = sgd::uniform_grid(cfg.horizon, cfg.grid_points);
    let rows: Vec<Vec<String>> = times
        .iter()
        .map(|&t| {
            let h = sol.eval(t);
            let mut r = vec![t];
            r.extend(h.iter());
            r.push(limit_ode::objective_j(&k.a, &y, &h));
            r.push((&h - &y).amax());
            real_row(&r)
        })
        .collect();
    io::write_csv(&cfg.out.join("ode_path.csv"), &header, &rows)?;
    let path = limit_ode::solve_rk4(&k.a, &y, &h0, cfg.dt, cfg.horizon)?;
    let rk4 = limit_ode::path_deviation(&path, &sol);
    let passed = rk4 <= RK4_TOLERANCE;
    let body = object(json!({
        "eigenvalues": sol.eigenvalues.iter().copied().collect::<Vec<_>>(),
        "lambda_min": sol.lambda_min(),
        "lambda_max": sol.lambda_max(),
        "h0": h0.iter().copied().collect::<Vec<_>>(),
        "y_hat": ds.targets(),
        "J_initial": limit_ode::objective_j(&k.a, &y, &h0),
        "J_final": limit_ode::objective_j(&k.a, &y, &sol.eval(cfg.horizon)),
        "final_error": limit_ode::long_time_error(&sol, cfg.horizon),
        "rk4_deviation": rk4,
        "rk4_tolerance": RK4_TOLERANCE,
    }));
    io::write_json(&cfg.out.join("ode.json"), &with_meta(cfg, body, passed))?;
    println!(
        "ode: max error at T {} | RK4 deviation {}",
        fmt_real(limit_ode::long_time_error(&sol, cfg.horizon)),
        fmt_real(rk4)
    );
    Ok(passed)
}

fn gauss_test(cfg: &ExperimentConfig, ds: &Dataset) -> Result<bool> {
    let r = analysis::gaussianity_test(cfg.n, cfg.seeds, &cfg.law(), cfg.activation, ds, cfg.x_index, cfg.seed)?;
    let passed = r.ks.p_value > KS_LEVEL;
    let mut body = object(serde_json::to_value(&r)?);
    body.insert("significance".into(), json!(KS_LEVEL));
    io::write_json(&cfg.out.join("gauss_test.json"), &with_meta(cfg, body, passed))?;
    println!(
        "gauss-test: N={} seeds={} D={} p={}",
        r.n,
        r.n_seeds,
        fmt_real(r.ks.statistic),
        fmt_real(r.ks.p_value)
    );
    Ok(passed)
}

fn sweep(cfg: &ExperimentConfig, ds: &Dataset) -> Result<bool> {
    let setup = Setup {
        act: cfg.activation,
        law: cfg.law(),
        ds: ds.clone(),
        alpha: cfg.alpha,
        horizon: cfg.horizon,
        grid_points: cfg.grid_points,
    };
    let extras = SweepExtras {
        martingale: (!cfg.martingale_ns.is_empty()).then(|| (cfg.martingale_ns.clone(), cfg.martingale_replicas)),
        gaussianity: None,
    };
    let rep = analysis::convergence_sweep(&setup, &cfg.ns, cfg.replicas, cfg.n_mc, cfg.seed, &extras)?;
    let checks = rep.checks();
    let passed = checks.iter().all(|c| c.passed);

    let dev_rows: Vec<Vec<String>> = rep
        .deviation
        .iter()
        .map(|r| vec![r.n.to_string(), fmt_real(r.mean), fmt_real(r.stderr)])
        .collect();
    let header = ["N", "mean_deviation", "stderr"].map(String::from);
    io::write_csv(&cfg.out.join("sweep_deviation.csv"), &header, &dev_rows)?;

    let mut header = vec!["N".to_string()];
    header.extend(TestFunction::CATALOG.iter().map(|f| f.name().to_string()));
    let gap_rows: Vec<Vec<String>> = rep
        .stationarity
        .iter()
        .map(|r| {
            let mut row = vec![r.n.to_string()];
            row.extend(real_row(&r.mean_gaps));
            row
        })
        .collect();
    io::write_csv(&cfg.out.join("sweep_stationarity.csv"), &header, &gap_rows)?;

    if !rep.martingale.is_empty() {
        let rows: Vec<Vec<String>> = rep
            .martingale
            .iter()
            .map(|m| vec![m.n_units.to_string(), m.replicas.to_string(), fmt_real(m.variance)])
            .collect();
        let header = ["N", "replicas", "variance"].map(String::from);
        io::write_csv(&cfg.out.join("sweep_martingale.csv"), &header, &rows)?;
    }

    let mut body = object(serde_json::to_value(&rep)?);
    body.insert("checks".into(), serde_json::to_value(&checks)?);
    io::write_json(&cfg.out.join("sweep.json"), &with_meta(cfg, body, passed))?;
    for c in &checks {
        println!("sweep: {} {} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(passed)
}

fn get_f64(v: &Value, key: &str) -> String {
    v.get(key).and_then(Value::as_f64).map_or_else(|| "n/a".into(), fmt_real)
}

fn get_raw(v: &Value, key: &str) -> String {
    v.get(key).map_or_else(|| "n/a".into(), |x| x.to_string())
}

fn verdict(v: &Value) -> &'static str {
    match v.get("passed").and_then(Value::as_bool) {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "n/a",
    }
}

/// Human-readable summary of every known output present in `dir`.
pub fn render_report(dir: &Path) -> Result<(String, bool)> {
    let mut text = String::new();
    let mut all_passed = true;
    let mut found = 0;
    for name in OUTPUTS {
        let path = dir.join(name);
        if !path.is_file() {
            continue;
        }
        found += 1;
        let v = io::read_json(&path)?;
        all_passed &= v.get("passed").and_then(Value::as_bool).unwrap_or(true);
        let _ = writeln!(text, "== {name} [{}] seed {}", verdict(&v), get_raw(&v, "seed"));
        match name {
            "simulate.json" => {
                let _ = writeln!(text, "N {} steps {}", get_raw(&v, "N"), get_raw(&v, "step_count"));
                let _ = writeln!(text, "final loss {}", get_f64(&v, "final_loss"));
            }
            "kernel.json" => {
                let _ = writeln!(text, "lambda_min {}", get_f64(&v, "lambda_min"));
                let _ = writeln!(text, "lambda_max {}", get_f64(&v, "lambda_max"));
                let _ = writeln!(text, "max stderr {}", get_f64(&v, "max_stderr"));
                let _ = writeln!(text, "positive definite {}", get_raw(&v, "is_pd"));
                if let Some(ws) = v.get("warnings").and_then(Value::as_array) {
                    for w in ws {
                        let _ = writeln!(text, "warning: {}", w.as_str().unwrap_or(""));
                    }
                }
            }
            "ode.json" => {
                let _ = writeln!(text, "lambda_min {}", get_f64(&v, "lambda_min"));
                let _ = writeln!(text, "final error {}", get_f64(&v, "final_error"));
                let _ = writeln!(text, "J initial {} final {}", get_f64(&v, "J_initial"), get_f64(&v, "J_final"));
                let _ = writeln!(text, "RK4 deviation {}", get_f64(&v, "rk4_deviation"));
            }
            "gauss_test.json" => {
                let _ = writeln!(text, "N {} seeds {}", get_raw(&v, "n"), get_raw(&v, "n_seeds"));
                let ks = v.get("ks").cloned().unwrap_or(Value::Null);
                let _ = writeln!(text, "KS statistic {} p-value {}", get_f64(&ks, "statistic"), get_f64(&ks, "p_value"));
                let _ = writeln!(text, "standardized mean {}", get_f64(&v, "standardized_mean"));
            }
            _ => {
                if let Some(rows) = v.get("deviation").and_then(Value::as_array) {
                    for r in rows {
                        let _ = writeln!(
                            text,
                            "N {} deviation {} +- {}",
                            get_raw(r, "n"),
                            get_f64(r, "mean"),
                            get_f64(r, "stderr")
                        );
                    }
                }
                let _ = writeln!(text, "slope {}", get_f64(&v, "slope"));
                if let Some(ms) = v.get("martingale").and_then(Value::as_array) {
                    for m in ms {
                        let _ = writeln!(
                            text,
                            "martingale N {} variance {}",
                            get_raw(m, "n_units"),
                            get_f64(m, "variance")
                        );
                    }
                }
                if let Some(cs) = v.get("checks").and_then(Value::as_array) {
                    for c in cs {
                        let ok = c.get("passed").and_then(Value::as_bool).unwrap_or(false);
                        let name = c.get("name").and_then(Value::as_str).unwrap_or("");
                        let _ = writeln!(text, "{} {name}", if ok { "PASS" } else { "FAIL" });
                    }
                }
            }
        }
        text.push('\n');
    }
    if found == 0 {
        return Err(Error::Config(format!("no outputs to report in {}", dir.display())));
    }
    Ok((text, all_passed))
}

fn report(cfg: &ExperimentConfig) -> Result<bool> {
    let (text, passed) = render_report(&cfg.out)?;
    io::write_atomic(&cfg.out.join("report.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(passed)
}
