//! Statistical experiments comparing finite-width SGD with the limit ODE:
//! coupled trajectory deviation across widths, stationarity of the parameter
//! measure, Gaussianity of the initial output and martingale scaling.
//!
//! Every replica draws from streams derived from `(master seed, N, replica)`,
//! so results do not depend on how replicas are scheduled across threads.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::activation::Activation;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{self, init_output_variance};
use crate::limit_ode;
use crate::network::{self, InitLaw, Params};
use crate::seed::{self, Purpose};
use crate::sgd::{self, MartingaleProbe, SgdConfig, TestFunction};
use crate::stats::{self, KsResult};

pub const MIN_REPLICAS: usize = 10;
pub const MIN_GAUSSIANITY_SEEDS: usize = 200;
/// Gauss–Hermite rule used for the analytic initial-output variance.
pub const VARIANCE_NODES: usize = 128;
/// Interval the fitted log-log slope of the mean deviation must fall in.
pub const SLOPE_RANGE: (f64, f64) = (-0.8, -0.25);

/// Model and training settings shared by all replicas of an experiment.
#[derive(Debug, Clone)]
pub struct Setup {
    pub act: Activation,
    pub law: InitLaw,
    pub ds: Dataset,
    pub alpha: f64,
    pub horizon: f64,
    /// Number of equally spaced comparison times in `[0, T]`.
    pub grid_points: usize,
}

impl Setup {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::Config(format!("T must be finite and > 0, got {}", self.horizon)));
        }
        if self.grid_points < 2 {
            return Err(Error::Config("grid needs at least two points".into()));
        }
        Ok(())
    }

    fn sgd_config(&self, seed: u64) -> Result<SgdConfig> {
        SgdConfig::with_grid(self.alpha, self.horizon, self.grid_points, seed)
    }

    fn targets(&self) -> DVector<f64> {
        DVector::from_vec(self.ds.targets())
    }
}

/// Seed of replica `r` at width `n`.
pub fn replica_seed(master: u64, n: usize, r: usize) -> u64 {
    seed::derive(seed::derive(master, Purpose::Replica, n as u64), Purpose::Replica, r as u64)
}

/// Seed of the kernel estimate shared by a whole sweep.
pub fn kernel_seed(master: u64) -> u64 {
    seed::derive(master, Purpose::Kernel, 0)
}

#[derive(Debug, Clone, PartialEq)]
struct ReplicaOutcome {
    deviation: f64,
    gaps: Vec<f64>,
}

fn run_replica(n: usize, rs: u64, setup: &Setup, a: Option<&DMatrix<f64>>) -> Result<ReplicaOutcome> {
    let p0 = network::init(n, setup.ds.dim(), &setup.law, &mut seed::substream(rs, Purpose::Init, 0))?;
    let traj = sgd::train(&p0, setup.act, &setup.ds, &setup.sgd_config(rs)?)?;
    let deviation = match a {
        Some(a) => {
            let h0 = DVector::from_vec(network::forward_all(&p0, setup.act, &setup.ds));
            let sol = limit_ode::solve_spectral(a, &setup.targets(), &h0)?;
            sup_deviation(&traj.times, &traj.h, &sol)
        }
        None => 0.0,
    };
    Ok(ReplicaOutcome {
        deviation,
        gaps: stationarity_gaps(&p0, &traj.final_params),
    })
}

fn sup_deviation(times: &[f64], h: &[Vec<f64>], sol: &limit_ode::OdeSolution) -> f64 {
    let mut worst: f64 = 0.0;
    for (&t, row) in times.iter().zip(h) {
        let lim = sol.eval(t);
        for (v, l) in row.iter().zip(lim.iter()) {
            worst = worst.max((v - l).abs());
        }
    }
    worst
}

/// `|<f, mu_T> - <f, mu_0>|` for every catalog test function.
pub fn stationarity_gaps(p0: &Params, p_final: &Params) -> Vec<f64> {
    TestFunction::CATALOG
        .iter()
        .map(|f| (f.pair(p_final) - f.pair(p0)).abs())
        .collect()
}

/// Sup over the grid of `max_x |h_t^N(x) - h_t(x)|`, where the limit path
/// starts from the realized initial output of the same network.
pub fn coupled_deviation(n: usize, replica_seed: u64, setup: &Setup, a: &DMatrix<f64>) -> Result<f64> {
    setup.validate()?;
    Ok(run_replica(n, replica_seed, setup, Some(a))?.deviation)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelSummary {
    pub n_mc: usize,
    pub seed: u64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub max_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarityRow {
    pub n: usize,
    /// Mean gap per test function, in catalog order.
    pub mean_gaps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationRow {
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    pub deviations: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub ns: Vec<usize>,
    pub replicas: usize,
    pub kernel: KernelSummary,
    pub deviation: Vec<DeviationRow>,
    /// `None` when some mean deviation is not strictly positive.
    pub slope: Option<f64>,
    pub test_functions: Vec<&'static str>,
    pub stationarity: Vec<StationarityRow>,
    pub martingale: Vec<MartingaleProbe>,
    pub gaussianity: Option<GaussianityResult>,
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

impl SweepReport {
    pub fn mean_deviations(&self) -> Vec<f64> {
        self.deviation.iter().map(|r| r.mean).collect()
    }

    /// Mean gap of test function `k` across widths.
    pub fn gap_series(&self, k: usize) -> Vec<f64> {
        self.stationarity.iter().map(|r| r.mean_gaps[k]).collect()
    }

    pub fn checks(&self) -> Vec<Check> {
        let means = self.mean_deviations();
        let mut out = vec![
            Check {
                name: "deviation_decreasing".into(),
                passed: strictly_decreasing(&means),
                detail: format!("{means:?}"),
            },
            Check {
                name: "deviation_slope".into(),
                passed: self
                    .slope
                    .is_some_and(|s| (SLOPE_RANGE.0..=SLOPE_RANGE.1).contains(&s)),
                detail: match self.slope {
                    Some(s) => format!("{s:.4} (expected in [{}, {}])", SLOPE_RANGE.0, SLOPE_RANGE.1),
                    None => "not applicable".into(),
                },
            },
        ];
        for (k, f) in TestFunction::CATALOG.iter().enumerate() {
            let series = self.gap_series(k);
            let passed = if f.is_constant() {
                series.iter().all(|&g| g == 0.0)
            } else {
                strictly_decreasing(&series)
            };
            out.push(Check {
                name: format!("stationarity_{}", f.name()),
                passed,
                detail: format!("{series:?}"),
            });
        }
        out
    }
}

/// Optional parts of a sweep.
#[derive(Debug, Clone, Default)]
pub struct SweepExtras {
    /// Widths and replica count for the martingale probe.
    pub martingale: Option<(Vec<usize>, usize)>,
    /// `(width, seeds, sample index)` for a Gaussianity test.
    pub gaussianity: Option<(usize, usize, usize)>,
}

fn check_widths(ns: &[usize], min_len: usize) -> Result<()> {
    if ns.len() < min_len {
        return Err(Error::Config(format!("need at least {min_len} widths, got {}", ns.len())));
    }
    if ns[0] == 0 || ns.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("widths must be positive and strictly increasing".into()));
    }
    Ok(())
}

fn check_replicas(replicas: usize) -> Result<()> {
    if replicas < MIN_REPLICAS {
        return Err(Error::Config(format!(
            "need at least {MIN_REPLICAS} replicas, got {replicas}"
        )));
    }
    Ok(())
}

fn run_width(n: usize, replicas: usize, master: u64, setup: &Setup, a: Option<&DMatrix<f64>>) -> Result<Vec<ReplicaOutcome>> {
    (0..replicas)
        .into_par_iter()
        .map(|r| run_replica(n, replica_seed(master, n, r), setup, a))
        .collect()
}

fn mean_gaps(n: usize, outcomes: &[ReplicaOutcome]) -> StationarityRow {
    let k = TestFunction::CATALOG.len();
    let mean_gaps = (0..k)
        .map(|j| stats::mean(&outcomes.iter().map(|o| o.gaps[j]).collect::<Vec<_>>()))
        .collect();
    StationarityRow { n, mean_gaps }
}

/// Runs `replicas` coupled trajectories at each width against one shared
/// kernel estimate and fits the log-log slope of the mean deviation.
pub fn convergence_sweep(
    setup: &Setup,
    ns: &[usize],
    replicas: usize,
    n_mc: usize,
    master: u64,
    extras: &SweepExtras,
) -> Result<SweepReport> {
    setup.validate()?;
    check_widths(ns, 3)?;
    check_replicas(replicas)?;
    let kseed = kernel_seed(master);
    let k = kernel::estimate_a(&setup.law, setup.act, &setup.ds, setup.alpha, n_mc, kseed)?;
    let pd = kernel::check_pd(&k.a, kernel::DEFAULT_PD_THRESHOLD)?;
    let mut deviation = Vec::with_capacity(ns.len());
    let mut stationarity = Vec::with_capacity(ns.len());
    for &n in ns {
        let outcomes = run_width(n, replicas, master, setup, Some(&k.a))?;
        let devs: Vec<f64> = outcomes.iter().map(|o| o.deviation).collect();
        deviation.push(DeviationRow {
            n,
            mean: stats::mean(&devs),
            stderr: (stats::sample_variance(&devs) / replicas as f64).sqrt(),
            deviations: devs,
        });
        stationarity.push(mean_gaps(n, &outcomes));
    }
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let means: Vec<f64> = deviation.iter().map(|r| r.mean).collect();
    let martingale = match &extras.martingale {
        Some((mns, mreps)) => martingale_scaling(setup, mns, *mreps, master)?,
        None => Vec::new(),
    };
    let gaussianity = match extras.gaussianity {
        Some((n, seeds, idx)) => Some(gaussianity_test(n, seeds, &setup.law, setup.act, &setup.ds, idx, master)?),
        None => None,
    };
    Ok(SweepReport {
        ns: ns.to_vec(),
        replicas,
        kernel: KernelSummary {
            n_mc,
            seed: kseed,
            lambda_min: pd.lambda_min,
            lambda_max: pd.lambda_max,
            max_stderr: k.max_stderr(),
        },
        deviation,
        slope: stats::loglog_slope(&xs, &means),
        test_functions: TestFunction::CATALOG.iter().map(|f| f.name()).collect(),
        stationarity,
        martingale,
        gaussianity,
    })
}

/// Mean stationarity gaps per width without the limit comparison.
pub fn stationarity_decay(setup: &Setup, ns: &[usize], replicas: usize, master: u64) -> Result<Vec<StationarityRow>> {
    setup.validate()?;
    check_widths(ns, 2)?;
    check_replicas(replicas)?;
    ns.iter()
        .map(|&n| Ok(mean_gaps(n, &run_width(n, replicas, master, setup, None)?)))
        .collect()
}

/// Martingale probe at each width with replica seeds derived from `master`.
pub fn martingale_scaling(setup: &Setup, ns: &[usize], replicas: usize, master: u64) -> Result<Vec<MartingaleProbe>> {
    setup.validate()?;
    ns.iter()
        .map(|&n| {
            let cfg = SgdConfig::new(
                setup.alpha,
                setup.horizon,
                Vec::new(),
                seed::derive(master, Purpose::Martingale, n as u64),
            )?;
            sgd::martingale_variance_probe(setup.act, &setup.ds, &setup.law, n, &cfg, replicas)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianityResult {
    pub n: usize,
    pub n_seeds: usize,
    pub x_index: usize,
    /// Limiting variance used for standardization.
    pub variance: f64,
    pub ks: KsResult,
    pub standardized_mean: f64,
}

/// KS test of the standardized initial outputs `g_0^N(x) / sqrt(Sigma_xx)`
/// over `n_seeds` independent initializations against `N(0, 1)`.
pub fn gaussianity_test(
    n: usize,
    n_seeds: usize,
    law: &InitLaw,
    act: Activation,
    ds: &Dataset,
    x_index: usize,
    master: u64,
) -> Result<GaussianityResult> {
    if law.c.is_degenerate() {
        return Err(Error::Unsupported(
            "initial output is identically zero when C is degenerate".into(),
        ));
    }
    if n == 0 {
        return Err(Error::Config("width must be positive".into()));
    }
    if n_seeds < MIN_GAUSSIANITY_SEEDS {
        return Err(Error::Config(format!(
            "need at least {MIN_GAUSSIANITY_SEEDS} seeds, got {n_seeds}"
        )));
    }
    if x_index >= ds.len() {
        return Err(Error::Config(format!(
            "sample index {x_index} out of range for {} samples",
            ds.len()
        )));
    }
    let x = &ds.sample(x_index).x;
    let variance = init_output_variance(law, act, x, VARIANCE_NODES)?;
    if variance.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Unsupported(format!(
            "limiting variance at sample {x_index} is zero"
        )));
    }
    let sd = variance.sqrt();
    let base = seed::derive(master, Purpose::Gaussianity, n as u64);
    let z: Vec<f64> = (0..n_seeds)
        .into_par_iter()
        .map(|s| -> Result<f64> {
            let p = network::init(n, ds.dim(), law, &mut seed::substream(base, Purpose::Init, s as u64))?;
            Ok(network::forward(&p, act, x) / sd)
        })
        .collect::<Result<_>>()?;
    Ok(GaussianityResult {
        n,
        n_seeds,
        x_index,
        variance,
        ks: stats::ks_test_std_normal(&z),
        standardized_mean: stats::mean(&z),
    })
}
