//! Discrete-time SGD with learning rate `alpha / N`, trajectory recording of
//! the time-rescaled output `h_t^N = g^N_{floor(N t)}`, empirical-measure
//! pairings and the martingale fluctuation probe.

use rayon::prelude::*;
use serde::Serialize;

use crate::activation::Activation;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::network::{self, dot, InitLaw, Params};
use crate::seed::{self, Purpose};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SgdConfig {
    /// Limit learning-rate constant; the per-step rate is `alpha / N`.
    pub alpha: f64,
    /// Time horizon `T`; `floor(T N)` steps are taken.
    pub horizon: f64,
    /// Sorted times in `[0, T]` at which `h` is recorded.
    pub record_times: Vec<f64>,
    /// Seed of the data-sampling stream.
    pub seed: u64,
}

impl SgdConfig {
    pub fn new(alpha: f64, horizon: f64, record_times: Vec<f64>, seed: u64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Config(format!("T must be finite and > 0, got {horizon}")));
        }
        if record_times.iter().any(|&t| !(0.0..=horizon).contains(&t)) {
            return Err(Error::Config("record times must lie in [0, T]".into()));
        }
        if record_times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("record times must be sorted".into()));
        }
        Ok(SgdConfig {
            alpha,
            horizon,
            record_times,
            seed,
        })
    }

    /// `n_points` equally spaced record times from `0` to `T` inclusive.
    pub fn with_grid(alpha: f64, horizon: f64, n_points: usize, seed: u64) -> Result<Self> {
        SgdConfig::new(alpha, horizon, uniform_grid(horizon, n_points), seed)
    }

    /// Records after every step of a width-`n` run.
    pub fn every_step(alpha: f64, horizon: f64, n: usize, seed: u64) -> Result<Self> {
        let steps = step_count(horizon, n);
        let times = (0..=steps).map(|k| k as f64 / n as f64).collect();
        SgdConfig::new(alpha, horizon, times, seed)
    }

    /// Per-step learning rate `alpha^N = alpha / N`.
    pub fn step_rate(&self, n: usize) -> f64 {
        self.alpha / n as f64
    }
}

pub fn uniform_grid(horizon: f64, n_points: usize) -> Vec<f64> {
    match n_points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => {
            let last = (n_points - 1) as f64;
            (0..n_points)
                .map(|k| if k + 1 == n_points { horizon } else { horizon * k as f64 / last })
                .collect()
        }
    }
}

/// `floor(T N)`.
pub fn step_count(horizon: f64, n: usize) -> usize {
    step_index(horizon, n)
}

/// `floor(N t)`, with a relative `1e-12` allowance so that `t = k / N`
/// computed in floating point maps back to `k`.
pub fn step_index(t: f64, n: usize) -> usize {
    let nt = n as f64 * t;
    let k = nt.floor();
    if (k + 1.0) - nt <= 1e-12 * nt.max(1.0) {
        (k + 1.0) as usize
    } else {
        k as usize
    }
}

/// Parameter increments of one SGD step, evaluated at the pre-step state.
#[derive(Debug, Clone, PartialEq)]
pub struct Increment {
    pub dc: Vec<f64>,
    pub dw: Vec<f64>,
    /// `g^N(x)` before the step.
    pub output: f64,
}

/// `dC^i = (lr / sqrt N) (y - g) σ(W^i·x)` and
/// `dW^i = (lr / sqrt N) (y - g) C^i σ'(W^i·x) x`, both from the pre-step state.
pub fn sgd_increment(p: &Params, act: Activation, x: &[f64], y: f64, lr: f64) -> Increment {
    let n = p.width();
    let d = p.dim();
    let mut feats = Vec::with_capacity(n);
    let mut sum = 0.0;
    for i in 0..n {
        let (s, ds) = act.eval_with_d1(dot(p.w_row(i), x));
        sum += p.c[i] * s;
        feats.push((s, ds));
    }
    let output = sum * p.scale();
    let coef = lr / (n as f64).sqrt() * (y - output);
    let mut dc = Vec::with_capacity(n);
    let mut dw = Vec::with_capacity(n * d);
    for (i, &(s, ds)) in feats.iter().enumerate() {
        dc.push(coef * s);
        let a = coef * p.c[i] * ds;
        dw.extend(x.iter().map(|&xj| a * xj));
    }
    Increment { dc, dw, output }
}

/// Applies one step in place and returns the pre-step output `g^N(x)`.
pub fn sgd_step_in_place(p: &mut Params, act: Activation, x: &[f64], y: f64, lr: f64) -> f64 {
    let n = p.width();
    let d = p.dim();
    let mut feats = Vec::with_capacity(n);
    let mut sum = 0.0;
    for i in 0..n {
        let (s, ds) = act.eval_with_d1(dot(p.w_row(i), x));
        sum += p.c[i] * s;
        feats.push((s, ds));
    }
    let output = sum * p.scale();
    let coef = lr / (n as f64).sqrt() * (y - output);
    for (i, &(s, ds)) in feats.iter().enumerate() {
        let c_old = p.c[i];
        p.c[i] = c_old + coef * s;
        let a = coef * c_old * ds;
        for (w, &xj) in p.w[i * d..(i + 1) * d].iter_mut().zip(x) {
            *w += a * xj;
        }
    }
    output
}

/// One SGD step with rate `lr` (already `alpha / N`).
pub fn sgd_step(p: &Params, act: Activation, x: &[f64], y: f64, lr: f64) -> Params {
    let mut next = p.clone();
    sgd_step_in_place(&mut next, act, x, y, lr);
    next
}

/// Half squared single-sample loss `0.5 (y - g^N(x))^2`.
fn half_sq_loss(p: &Params, act: Activation, x: &[f64], y: f64) -> f64 {
    let r = y - network::forward(p, act, x);
    0.5 * r * r
}

/// Largest relative gap between the applied SGD increment and
/// `-lr * grad[0.5 (y - g)^2]`, the gradient taken by central differences.
pub fn gradient_identity_check(
    p: &Params,
    act: Activation,
    x: &[f64],
    y: f64,
    lr: f64,
    h_fd: f64,
) -> Result<f64> {
    if !(1e-7..=1e-4).contains(&h_fd) {
        return Err(Error::Config(format!(
            "finite-difference step must lie in [1e-7, 1e-4], got {h_fd}"
        )));
    }
    let inc = sgd_increment(p, act, x, y, lr);
    let mut probe = p.clone();
    let mut worst: f64 = 0.0;
    let mut check = |applied: f64, grad: f64| {
        let dev = (applied + lr * grad).abs() / (applied.abs() + 1e-12);
        worst = worst.max(dev);
    };
    for i in 0..p.width() {
        let orig = probe.c[i];
        probe.c[i] = orig + h_fd;
        let up = half_sq_loss(&probe, act, x, y);
        probe.c[i] = orig - h_fd;
        let down = half_sq_loss(&probe, act, x, y);
        probe.c[i] = orig;
        check(inc.dc[i], (up - down) / (2.0 * h_fd));
    }
    for k in 0..p.w.len() {
        let orig = probe.w[k];
        probe.w[k] = orig + h_fd;
        let up = half_sq_loss(&probe, act, x, y);
        probe.w[k] = orig - h_fd;
        let down = half_sq_loss(&probe, act, x, y);
        probe.w[k] = orig;
        check(inc.dw[k], (up - down) / (2.0 * h_fd));
    }
    Ok(worst)
}

/// Recorded path of `h_t^N` with the parameter-bound monitors.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `h[j] = g^N` on the dataset at step `floor(N t_j)`.
    pub h: Vec<Vec<f64>>,
    /// Running `max_{i, k' <= k} |C^i_{k'}|` at each record.
    pub c_max: Vec<f64>,
    /// `mean_i |W^i_k|` at each record.
    pub w_mean_norm: Vec<f64>,
    /// Running `max_k |g^N_k(x_k)|` over the sampled points.
    pub g_abs_max: f64,
    pub step_count: usize,
    pub final_params: Params,
}

fn max_abs(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn mean_row_norm(p: &Params) -> f64 {
    let n = p.width();
    let total: f64 = (0..n).map(|i| dot(p.w_row(i), p.w_row(i)).sqrt()).sum();
    total / n as f64
}

/// Runs `floor(T N)` SGD steps from `p0`, sampling data i.i.d. from the
/// dataset with the stream derived from `cfg.seed`.
pub fn train(p0: &Params, act: Activation, ds: &Dataset, cfg: &SgdConfig) -> Result<Trajectory> {
    if p0.dim() != ds.dim() {
        return Err(Error::Validation(format!(
            "parameter dimension {} does not match dataset dimension {}",
            p0.dim(),
            ds.dim()
        )));
    }
    let n = p0.width();
    let lr = cfg.step_rate(n);
    let steps = step_count(cfg.horizon, n);
    let record_steps: Vec<usize> = cfg
        .record_times
        .iter()
        .map(|&t| step_index(t, n).min(steps))
        .collect();

    let mut rng = seed::substream(cfg.seed, Purpose::Data, 0);
    let mut p = p0.clone();
    let mut c_max = max_abs(&p.c);
    let mut g_abs_max: f64 = 0.0;
    let mut traj = Trajectory {
        times: Vec::with_capacity(record_steps.len()),
        h: Vec::with_capacity(record_steps.len()),
        c_max: Vec::with_capacity(record_steps.len()),
        w_mean_norm: Vec::with_capacity(record_steps.len()),
        g_abs_max: 0.0,
        step_count: steps,
        final_params: p0.clone(),
    };
    let mut next_record = 0;
    for k in 0..=steps {
        while next_record < record_steps.len() && record_steps[next_record] == k {
            traj.times.push(cfg.record_times[next_record]);
            traj.h.push(network::forward_all(&p, act, ds));
            traj.c_max.push(c_max);
            traj.w_mean_norm.push(mean_row_norm(&p));
            next_record += 1;
        }
        if k == steps {
            break;
        }
        let (x, y) = ds.sample_pair(&mut rng);
        let g = sgd_step_in_place(&mut p, act, x, y, lr);
        g_abs_max = g_abs_max.max(g.abs());
        c_max = c_max.max(max_abs(&p.c));
        if !c_max.is_finite() || !g.is_finite() || p.w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Overflow {
                step: k,
                detail: format!("non-finite parameter (alpha = {}, N = {n})", cfg.alpha),
            });
        }
    }
    traj.g_abs_max = g_abs_max;
    traj.final_params = p;
    Ok(traj)
}

/// Upper bound on `max |C^i_k|` over a run, from telescoping the `C` update:
/// each step moves `C^i` by at most `(alpha/N^{3/2}) sup|σ| (max|y| + max|g|)`.
/// The bound drops the `1/sqrt(N)` gain and so holds for every `N >= 1`.
pub fn c_max_bound(c0_max: f64, alpha: f64, horizon: f64, act: Activation, y_max: f64, g_max: f64) -> f64 {
    c0_max + alpha * horizon * act.bounds().value * (y_max + g_max)
}

/// `<f, nu> = (1/N) sum_i f(C^i, W^i)`.
pub fn measure_pairing(p: &Params, f: impl Fn(f64, &[f64]) -> f64) -> f64 {
    let total: f64 = (0..p.width()).map(|i| f(p.c[i], p.w_row(i))).sum();
    total / p.width() as f64
}

/// Fixed catalog of bounded test functions on `(c, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    One,
    C,
    CSquared,
    TanhW1,
    CTanhW1,
    WNormCapped,
}

impl TestFunction {
    pub const CATALOG: [TestFunction; 6] = [
        TestFunction::One,
        TestFunction::C,
        TestFunction::CSquared,
        TestFunction::TanhW1,
        TestFunction::CTanhW1,
        TestFunction::WNormCapped,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TestFunction::One => "one",
            TestFunction::C => "c",
            TestFunction::CSquared => "c_squared",
            TestFunction::TanhW1 => "tanh_w1",
            TestFunction::CTanhW1 => "c_tanh_w1",
            TestFunction::WNormCapped => "w_norm_min_10",
        }
    }

    pub fn is_constant(self) -> bool {
        self == TestFunction::One
    }

    pub fn eval(self, c: f64, w: &[f64]) -> f64 {
        match self {
            TestFunction::One => 1.0,
            TestFunction::C => c,
            TestFunction::CSquared => c * c,
            TestFunction::TanhW1 => w[0].tanh(),
            TestFunction::CTanhW1 => c * w[0].tanh(),
            TestFunction::WNormCapped => dot(w, w).sqrt().min(10.0),
        }
    }

    pub fn pair(self, p: &Params) -> f64 {
        measure_pairing(p, |c, w| self.eval(c, w))
    }
}

/// Across-replica variance of the terminal martingale sum at one width.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleProbe {
    pub n_units: usize,
    pub replicas: usize,
    /// Largest per-component variance.
    pub variance: f64,
    pub per_component: Vec<f64>,
}

/// Changes of `g^N` on every dataset point if the step used sample `j`, for
/// every `j`. Row `j` of the result has length `M`.
fn candidate_increments(p: &Params, act: Activation, ds: &Dataset, lr: f64) -> Vec<Vec<f64>> {
    let n = p.width();
    let d = p.dim();
    let m = ds.len();
    let inputs = ds.inputs();
    // feats[i * m + k] = σ(W^i · x_k), dfeats likewise for σ'
    let mut feats = vec![0.0; n * m];
    let mut dfeats = vec![0.0; n * m];
    for i in 0..n {
        for (k, x) in inputs.iter().enumerate() {
            let (s, ds_) = act.eval_with_d1(dot(p.w_row(i), x));
            feats[i * m + k] = s;
            dfeats[i * m + k] = ds_;
        }
    }
    let scale = p.scale();
    let outputs: Vec<f64> = (0..m)
        .map(|k| {
            let mut sum = 0.0;
            for i in 0..n {
                sum += p.c[i] * feats[i * m + k];
            }
            sum * scale
        })
        .collect();
    let mut w_new = vec![0.0; d];
    (0..m)
        .map(|j| {
            let xj = inputs[j];
            let coef = lr / (n as f64).sqrt() * (ds.sample(j).y - outputs[j]);
            let mut delta = vec![0.0; m];
            for i in 0..n {
                let c_old = p.c[i];
                let c_new = c_old + coef * feats[i * m + j];
                let a = coef * c_old * dfeats[i * m + j];
                for (wn, (&w, &x)) in w_new.iter_mut().zip(p.w_row(i).iter().zip(xj)) {
                    *wn = w + a * x;
                }
                for (k, x) in inputs.iter().enumerate() {
                    delta[k] += c_new * act.eval(dot(&w_new, x)) - c_old * feats[i * m + k];
                }
            }
            for v in &mut delta {
                *v *= scale;
            }
            delta
        })
        .collect()
}

/// Terminal martingale fluctuation: each step contributes the realized change
/// of `g^N` on the dataset minus its conditional mean given the current
/// state, the mean being the exact average over the `M` possible samples.
pub fn martingale_variance_probe(
    act: Activation,
    ds: &Dataset,
    law: &InitLaw,
    n: usize,
    cfg: &SgdConfig,
    n_replicas: usize,
) -> Result<MartingaleProbe> {
    if n_replicas < 2 {
        return Err(Error::Config("martingale probe needs at least two replicas".into()));
    }
    let m = ds.len();
    let lr = cfg.step_rate(n);
    let steps = step_count(cfg.horizon, n);
    let sums: Vec<Vec<f64>> = (0..n_replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let rs = seed::derive(cfg.seed, Purpose::Martingale, r as u64);
            let mut p = network::init(n, ds.dim(), law, &mut seed::substream(rs, Purpose::Init, 0))?;
            let mut rng = seed::substream(rs, Purpose::Data, 0);
            let mut fluct = vec![0.0; m];
            for k in 0..steps {
                let cand = candidate_increments(&p, act, ds, lr);
                let j = ds.sample_index(&mut rng);
                for (c, f) in fluct.iter_mut().enumerate() {
                    let mean = cand.iter().map(|row| row[c]).sum::<f64>() / m as f64;
                    *f += cand[j][c] - mean;
                }
                let s = ds.sample(j);
                sgd_step_in_place(&mut p, act, &s.x, s.y, lr);
                if !p.is_finite() {
                    return Err(Error::Overflow {
                        step: k,
                        detail: format!("martingale probe replica {r}, N = {n}"),
                    });
                }
            }
            Ok(fluct)
        })
        .collect::<Result<_>>()?;
    let per_component: Vec<f64> = (0..m)
        .map(|c| {
            let col: Vec<f64> = sums.iter().map(|s| s[c]).collect();
            stats::sample_variance(&col)
        })
        .collect();
    let variance = per_component.iter().cloned().fold(0.0, f64::max);
    Ok(MartingaleProbe {
        n_units: n,
        replicas: n_replicas,
        variance,
        per_component,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;
    use crate::network::CLaw;
    use proptest::prelude::*;

    fn dataset(points: &[(&[f64], f64)]) -> Dataset {
        Dataset::new(points.iter().map(|(x, y)| Sample::new(x.to_vec(), *y)).collect()).unwrap()
    }

    fn small_ds() -> Dataset {
        dataset(&[
            (&[1.0, 0.5], 1.0),
            (&[-0.5, 1.0], -0.5),
            (&[0.3, -1.2], 0.8),
        ])
    }

    fn uniform() -> InitLaw {
        InitLaw::new(CLaw::uniform(1.0).unwrap())
    }

    /// Straight transcription of the update, one unit at a time, with the
    /// right-hand sides frozen at the pre-step values.
    fn oracle_step(c: &mut [f64], w: &mut [Vec<f64>], act: Activation, x: &[f64], y: f64, alpha_n: f64) {
        let n = c.len();
        let sqrt_n = (n as f64).sqrt();
        let mut g = 0.0;
        for i in 0..n {
            let mut z = 0.0;
            for j in 0..x.len() {
                z += w[i][j] * x[j];
            }
            g += c[i] * act.eval(z);
        }
        g *= 1.0 / sqrt_n;
        let c_pre = c.to_vec();
        let w_pre = w.to_vec();
        for i in 0..n {
            let mut z = 0.0;
            for j in 0..x.len() {
                z += w_pre[i][j] * x[j];
            }
            c[i] = c_pre[i] + alpha_n / sqrt_n * (y - g) * act.eval(z);
            for j in 0..x.len() {
                w[i][j] = w_pre[i][j] + alpha_n / sqrt_n * (y - g) * c_pre[i] * act.d1(z) * x[j];
            }
        }
    }

    fn rows(p: &Params) -> Vec<Vec<f64>> {
        (0..p.width()).map(|i| p.w_row(i).to_vec()).collect()
    }

    #[test]
    fn zero_output_weights_leave_w_fixed() {
        let mut rng = seed::stream(3);
        let p = network::init(5, 2, &InitLaw::zero_output(), &mut rng).unwrap();
        let x = [0.7, -0.2];
        let y = 1.5;
        let lr = 0.2;
        let q = sgd_step(&p, Activation::Tanh, &x, y, lr);
        assert_eq!(q.w, p.w);
        for i in 0..5 {
            let expected = lr / 5f64.sqrt() * y * dot(p.w_row(i), &x).tanh();
            assert_eq!(q.c[i], expected);
        }
    }

    #[test]
    fn zero_rate_is_identity() {
        let mut rng = seed::stream(4);
        let p = network::init(6, 2, &uniform(), &mut rng).unwrap();
        assert_eq!(sgd_step(&p, Activation::Sigmoid, &[0.1, 0.2], 3.0, 0.0), p);
    }

    #[test]
    fn five_steps_match_oracle_bitwise() {
        let ds = small_ds();
        let mut rng = seed::stream(21);
        for act in Activation::ALL {
            let mut p = network::init(3, 2, &uniform(), &mut rng).unwrap();
            let mut c = p.c.clone();
            let mut w = rows(&p);
            let alpha_n = 0.9 / 3.0;
            for k in 0..5 {
                let s = ds.sample(k % 3);
                sgd_step_in_place(&mut p, act, &s.x, s.y, alpha_n);
                oracle_step(&mut c, &mut w, act, &s.x, s.y, alpha_n);
            }
            assert_eq!(p.c, c);
            assert_eq!(rows(&p), w);
        }
    }

    #[test]
    fn increment_agrees_with_step() {
        let mut rng = seed::stream(5);
        let p = network::init(4, 3, &uniform(), &mut rng).unwrap();
        let x = [0.3, -0.4, 1.1];
        let inc = sgd_increment(&p, Activation::Tanh, &x, 0.2, 0.25);
        let q = sgd_step(&p, Activation::Tanh, &x, 0.2, 0.25);
        for i in 0..4 {
            assert_eq!(q.c[i], p.c[i] + inc.dc[i]);
        }
        for k in 0..12 {
            assert_eq!(q.w[k], p.w[k] + inc.dw[k]);
        }
        assert_eq!(inc.output, network::forward(&p, Activation::Tanh, &x));
    }

    #[test]
    fn gradient_identity_random_state() {
        let mut rng = seed::stream(6);
        let p = network::init(4, 2, &uniform(), &mut rng).unwrap();
        let dev = gradient_identity_check(&p, Activation::Tanh, &[0.8, -1.3], 0.6, 0.25, 1e-5).unwrap();
        assert!(dev <= 1e-5, "{dev}");
    }

    #[test]
    fn gradient_identity_degenerate_cases() {
        let mut rng = seed::stream(7);
        let p = network::init(4, 2, &InitLaw::zero_output(), &mut rng).unwrap();
        // C = 0: both sides of the W block vanish exactly
        let inc = sgd_increment(&p, Activation::Tanh, &[0.5, 0.5], 1.0, 0.25);
        assert!(inc.dw.iter().all(|&v| v == 0.0));
        assert!(gradient_identity_check(&p, Activation::Tanh, &[0.5, 0.5], 1.0, 0.25, 1e-5).unwrap() <= 1e-5);

        // residual zero => zero update
        let q = network::init(4, 2, &uniform(), &mut rng).unwrap();
        let x = [0.2, 0.9];
        let y = network::forward(&q, Activation::Sigmoid, &x);
        let inc = sgd_increment(&q, Activation::Sigmoid, &x, y, 0.25);
        assert!(inc.dc.iter().chain(&inc.dw).all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_identity_rejects_bad_step() {
        let mut rng = seed::stream(8);
        let p = network::init(2, 1, &uniform(), &mut rng).unwrap();
        assert!(gradient_identity_check(&p, Activation::Tanh, &[1.0], 0.0, 0.5, 1e-2).is_err());
    }

    #[test]
    fn zero_alpha_trajectory_is_constant() {
        let ds = small_ds();
        let mut rng = seed::stream(9);
        let p = network::init(20, 2, &uniform(), &mut rng).unwrap();
        let cfg = SgdConfig::with_grid(0.0, 1.0, 5, 1).unwrap();
        let traj = train(&p, Activation::Tanh, &ds, &cfg).unwrap();
        let h0 = network::forward_all(&p, Activation::Tanh, &ds);
        assert_eq!(traj.h.len(), 5);
        assert!(traj.h.iter().all(|h| *h == h0));
        assert_eq!(traj.step_count, 20);
    }

    #[test]
    fn no_steps_gives_single_record() {
        let ds = small_ds();
        let mut rng = seed::stream(10);
        let p = network::init(10, 2, &uniform(), &mut rng).unwrap();
        let cfg = SgdConfig::every_step(1.0, 0.05, 10, 1).unwrap();
        let traj = train(&p, Activation::Tanh, &ds, &cfg).unwrap();
        assert_eq!(traj.step_count, 0);
        assert_eq!(traj.times, vec![0.0]);
        assert_eq!(traj.final_params, p);
    }

    #[test]
    fn train_matches_oracle_loop() {
        let ds = small_ds();
        let mut rng = seed::stream(11);
        let p = network::init(3, 2, &uniform(), &mut rng).unwrap();
        let cfg = SgdConfig::with_grid(1.0, 1.0, 2, 77).unwrap();
        let traj = train(&p, Activation::Tanh, &ds, &cfg).unwrap();

        let mut c = p.c.clone();
        let mut w = rows(&p);
        let mut data = seed::substream(77, Purpose::Data, 0);
        for _ in 0..3 {
            let (x, y) = ds.sample_pair(&mut data);
            oracle_step(&mut c, &mut w, Activation::Tanh, x, y, 1.0 / 3.0);
        }
        assert_eq!(traj.final_params.c, c);
        assert_eq!(rows(&traj.final_params), w);
        assert_eq!(*traj.h.last().unwrap(), network::forward_all(&traj.final_params, Activation::Tanh, &ds));
    }

    #[test]
    fn records_land_on_floor_steps() {
        let ds = small_ds();
        let mut rng = seed::stream(12);
        let p = network::init(10, 2, &uniform(), &mut rng).unwrap();
        let every = SgdConfig::every_step(1.0, 1.0, 10, 5).unwrap();
        let full = train(&p, Activation::Tanh, &ds, &every).unwrap();
        assert_eq!(full.h.len(), 11);
        let sparse = SgdConfig::new(1.0, 1.0, vec![0.0, 0.25, 0.35, 1.0], 5).unwrap();
        let part = train(&p, Activation::Tanh, &ds, &sparse).unwrap();
        // floor(10 * 0.25) = 2, floor(10 * 0.35) = 3
        assert_eq!(part.h[1], full.h[2]);
        assert_eq!(part.h[2], full.h[3]);
        assert_eq!(part.h[3], full.h[10]);
        assert!(part.c_max.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn step_index_handles_grid_rounding() {
        for n in [3usize, 7, 250, 1000, 4000] {
            for k in 0..=2 * n {
                assert_eq!(step_index(k as f64 / n as f64, n), k);
            }
        }
        assert_eq!(step_index(0.35, 10), 3);
        assert_eq!(step_count(2.0, 250), 500);
    }

    #[test]
    fn train_is_deterministic() {
        let ds = small_ds();
        let law = uniform();
        let p = network::init(50, 2, &law, &mut seed::stream(13)).unwrap();
        let cfg = SgdConfig::with_grid(1.0, 1.0, 11, 99).unwrap();
        let a = train(&p, Activation::Sigmoid, &ds, &cfg).unwrap();
        let b = train(&p, Activation::Sigmoid, &ds, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn absurd_rate_overflows_with_step() {
        let ds = small_ds();
        let p = network::init(4, 2, &uniform(), &mut seed::stream(14)).unwrap();
        let cfg = SgdConfig::with_grid(1e308, 10.0, 2, 1).unwrap();
        match train(&p, Activation::Tanh, &ds, &cfg) {
            Err(Error::Overflow { step, .. }) => assert!(step < 40),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn output_weights_stay_below_telescoped_bound() {
        let ds = small_ds();
        let y_max = ds.targets().iter().fold(0.0f64, |m, y| m.max(y.abs()));
        for act in Activation::ALL {
            for alpha in [0.5, 2.0, 10.0] {
                let p = network::init(200, 2, &uniform(), &mut seed::stream(15)).unwrap();
                let cfg = SgdConfig::with_grid(alpha, 1.0, 6, 2).unwrap();
                let traj = train(&p, act, &ds, &cfg).unwrap();
                let bound = c_max_bound(max_abs(&p.c), alpha, 1.0, act, y_max, traj.g_abs_max);
                let last = *traj.c_max.last().unwrap();
                assert!(last.is_finite() && last <= bound, "{act} alpha={alpha}: {last} > {bound}");
                assert!(traj.w_mean_norm.iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn pairings() {
        let p = network::init(100, 2, &InitLaw::zero_output(), &mut seed::stream(16)).unwrap();
        assert_eq!(measure_pairing(&p, |_, _| 1.0), 1.0);
        assert_eq!(TestFunction::C.pair(&p), 0.0);
        let n = 10_000;
        let q = network::init(n, 2, &uniform(), &mut seed::stream(17)).unwrap();
        let vals: Vec<f64> = q.c.iter().map(|c| c * c).collect();
        let se = (stats::sample_variance(&vals) / n as f64).sqrt();
        assert!((TestFunction::CSquared.pair(&q) - 1.0 / 3.0).abs() < 4.0 * se);
    }

    #[test]
    fn martingale_probe_degenerate_cases() {
        let one = dataset(&[(&[0.5, -0.5], 1.0)]);
        let cfg = SgdConfig::with_grid(1.0, 1.0, 2, 3).unwrap();
        let probe = martingale_variance_probe(Activation::Tanh, &one, &uniform(), 40, &cfg, 30).unwrap();
        assert!(probe.variance < 1e-20);

        let cfg0 = SgdConfig::with_grid(0.0, 1.0, 2, 3).unwrap();
        let probe = martingale_variance_probe(Activation::Tanh, &small_ds(), &uniform(), 40, &cfg0, 30).unwrap();
        assert_eq!(probe.variance, 0.0);
    }

    #[test]
    fn candidate_increment_matches_forward_difference() {
        let ds = small_ds();
        let p = network::init(30, 2, &uniform(), &mut seed::stream(18)).unwrap();
        let lr = 0.3 / 30.0;
        let cand = candidate_increments(&p, Activation::Tanh, &ds, lr);
        for (j, row) in cand.iter().enumerate() {
            let s = ds.sample(j);
            let q = sgd_step(&p, Activation::Tanh, &s.x, s.y, lr);
            let before = network::forward_all(&p, Activation::Tanh, &ds);
            let after = network::forward_all(&q, Activation::Tanh, &ds);
            for k in 0..ds.len() {
                assert!((row[k] - (after[k] - before[k])).abs() < 1e-14);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn gradient_identity_holds(
            n in 1usize..=8,
            d in 1usize..=3,
            seed_v in 0u64..10_000,
            tanh in any::<bool>(),
        ) {
            let act = if tanh { Activation::Tanh } else { Activation::Sigmoid };
            let mut rng = seed::stream(seed_v);
            let p = network::init(n, d, &uniform(), &mut rng).unwrap();
            let x: Vec<f64> = (0..d).map(|k| 0.3 + 0.4 * k as f64 - 0.9 * (seed_v % 3) as f64 / 3.0).collect();
            let dev = gradient_identity_check(&p, act, &x, 0.7, 1.0 / n as f64, 1e-5).unwrap();
            prop_assert!(dev <= 1e-5, "dev = {}", dev);
        }
    }
}
