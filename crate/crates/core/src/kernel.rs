//! The limit matrix
//! `A_{x,x'} = (alpha/M) E[σ(w·x)σ(w·x') + c^2 σ'(w·x)σ'(w·x') x·x']`
//! over `(c, w) ~ mu_0`: a Monte-Carlo estimator for any input dimension, a
//! Gauss–Hermite oracle for `d = 1`, and positive-definiteness diagnostics.
//!
//! `c` and `w` are independent under every supported law, so `E[c^2]` is
//! applied in closed form and only `w` is sampled.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::activation::{Activation, Symmetry};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::network::{dot, symmetric_from_upper, InitLaw, MIN_MC_SAMPLES};
use crate::quadrature::GaussHermite;
use crate::stats;

/// Default relative positive-definiteness threshold, `lambda_min > 1e-8 lambda_max`.
pub const DEFAULT_PD_THRESHOLD: f64 = 1e-8;

/// Minimum Gauss–Hermite rule size for the `d = 1` oracle.
pub const MIN_QUADRATURE_NODES: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub a: DMatrix<f64>,
    /// Per-entry Monte-Carlo standard error (zero for quadrature).
    pub stderr: DMatrix<f64>,
    pub alpha: f64,
    pub n_mc: usize,
}

impl KernelMatrix {
    pub fn size(&self) -> usize {
        self.a.nrows()
    }

    pub fn max_stderr(&self) -> f64 {
        self.stderr.iter().cloned().fold(0.0, f64::max)
    }
}

fn check_inputs(inputs: &[&[f64]]) -> Result<usize> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Validation("kernel needs at least one input".into()))?;
    let d = first.len();
    if d == 0 || inputs.iter().any(|x| x.len() != d) {
        return Err(Error::Validation("kernel inputs must share a positive dimension".into()));
    }
    Ok(d)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::Config(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    Ok(())
}

fn gram(inputs: &[&[f64]]) -> Vec<f64> {
    let m = inputs.len();
    let mut g = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            g[i * m + j] = dot(inputs[i], inputs[j]);
        }
    }
    g
}

/// Monte-Carlo estimate of `A` from `n_mc` draws of `w ~ N(0, I_d)`.
pub fn estimate_a(
    law: &InitLaw,
    act: Activation,
    ds: &Dataset,
    alpha: f64,
    n_mc: usize,
    seed: u64,
) -> Result<KernelMatrix> {
    estimate_a_at(law, act, &ds.inputs(), alpha, n_mc, seed)
}

/// [`estimate_a`] on raw inputs. Inputs need not be distinct, which is what
/// the singularity checks rely on.
pub fn estimate_a_at(
    law: &InitLaw,
    act: Activation,
    inputs: &[&[f64]],
    alpha: f64,
    n_mc: usize,
    seed: u64,
) -> Result<KernelMatrix> {
    let d = check_inputs(inputs)?;
    check_alpha(alpha)?;
    if n_mc < MIN_MC_SAMPLES {
        return Err(Error::Config(format!(
            "n_mc must be at least {MIN_MC_SAMPLES}, got {n_mc}"
        )));
    }
    let m = inputs.len();
    let ec2 = law.c.second_moment();
    let xx = gram(inputs);
    let moments = stats::monte_carlo(n_mc, seed, m * (m + 1) / 2, |rng, scratch, buf| {
        draw_normal(rng, scratch, d);
        for x in inputs {
            let (s, ds) = act.eval_with_d1(dot(&scratch[..d], x));
            scratch.push(s);
            scratch.push(ds);
        }
        let f = &scratch[d..];
        let mut k = 0;
        for i in 0..m {
            for j in i..m {
                let mut v = f[2 * i] * f[2 * j];
                if ec2 != 0.0 {
                    v += ec2 * f[2 * i + 1] * f[2 * j + 1] * xx[i * m + j];
                }
                buf[k] = v;
                k += 1;
            }
        }
    });
    let scale = alpha / m as f64;
    let mean: Vec<f64> = moments.mean.iter().map(|v| v * scale).collect();
    let se: Vec<f64> = moments.std_error().iter().map(|v| v * scale).collect();
    Ok(KernelMatrix {
        a: symmetric_from_upper(m, &mean),
        stderr: symmetric_from_upper(m, &se),
        alpha,
        n_mc,
    })
}

fn draw_normal(rng: &mut impl Rng, scratch: &mut Vec<f64>, d: usize) {
    scratch.clear();
    for _ in 0..d {
        scratch.push(rng.sample(StandardNormal));
    }
}

/// Deterministic `A` for scalar inputs and `w ~ N(0, 1)` by an `n_nodes`
/// Gauss–Hermite rule.
///
/// Convergence is fast only while `σ(w x)` is analytic in a wide strip:
/// tanh and sigmoid have poles at imaginary distance `pi / (2|x|)` and
/// `pi / |x|`, so for `|x|` of order one or more the error decays like
/// `exp(-c sqrt(n_nodes))` rather than geometrically.
pub fn quadrature_a_1d(
    law: &InitLaw,
    act: Activation,
    ds: &Dataset,
    alpha: f64,
    n_nodes: usize,
) -> Result<DMatrix<f64>> {
    quadrature_a_1d_at(law, act, &ds.inputs(), alpha, n_nodes)
}

pub fn quadrature_a_1d_at(
    law: &InitLaw,
    act: Activation,
    inputs: &[&[f64]],
    alpha: f64,
    n_nodes: usize,
) -> Result<DMatrix<f64>> {
    quadrature_1d_with(inputs, alpha, law.c.second_moment(), n_nodes, |z| act.eval_with_d1(z))
}

fn quadrature_1d_with(
    inputs: &[&[f64]],
    alpha: f64,
    ec2: f64,
    n_nodes: usize,
    feature: impl Fn(f64) -> (f64, f64),
) -> Result<DMatrix<f64>> {
    let d = check_inputs(inputs)?;
    if d != 1 {
        return Err(Error::Unsupported(format!(
            "quadrature oracle needs scalar inputs, got d = {d}"
        )));
    }
    check_alpha(alpha)?;
    if n_nodes < MIN_QUADRATURE_NODES {
        return Err(Error::Config(format!(
            "quadrature needs at least {MIN_QUADRATURE_NODES} nodes, got {n_nodes}"
        )));
    }
    let gh = GaussHermite::new(n_nodes)?;
    let m = inputs.len();
    let xs: Vec<f64> = inputs.iter().map(|x| x[0]).collect();
    let mut upper = Vec::with_capacity(m * (m + 1) / 2);
    for i in 0..m {
        for j in i..m {
            let (a, b) = (xs[i], xs[j]);
            let v = gh.std_normal_expectation(|w| {
                let (sa, da) = feature(w * a);
                let (sb, db) = feature(w * b);
                sa * sb + ec2 * da * db * a * b
            });
            upper.push(v * alpha / m as f64);
        }
    }
    Ok(symmetric_from_upper(m, &upper))
}

/// `E[c^2] E[σ(w·x)^2]` for `w ~ N(0, I_d)`: the variance of the limiting
/// initial output at `x`. Reduces to one dimension since `w·x ~ N(0, |x|^2)`.
pub fn init_output_variance(law: &InitLaw, act: Activation, x: &[f64], n_nodes: usize) -> Result<f64> {
    let gh = GaussHermite::new(n_nodes)?;
    let r = dot(x, x).sqrt();
    let e = gh.std_normal_expectation(|z| {
        let s = act.eval(r * z);
        s * s
    });
    Ok(law.c.second_moment() * e)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdReport {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Relative threshold: positive definite iff `lambda_min > threshold * lambda_max`.
    pub threshold: f64,
    pub is_pd: bool,
}

/// Symmetric eigendecomposition of `a` and a relative PD verdict.
pub fn check_pd(a: &DMatrix<f64>, threshold: f64) -> Result<PdReport> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(Error::Validation("kernel matrix must be square and non-empty".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("kernel matrix has non-finite entries".into()));
    }
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(a.clone()).eigenvalues.iter().cloned().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let lambda_min = eigenvalues[0];
    let lambda_max = *eigenvalues.last().unwrap_or(&lambda_min);
    Ok(PdReport {
        is_pd: lambda_max > 0.0 && lambda_min > threshold * lambda_max,
        eigenvalues,
        lambda_min,
        lambda_max,
        threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovarianceCheck {
    /// `max |E[U U^T] - A|` over entries.
    pub max_abs_deviation: f64,
    /// Largest deviation in units of the combined standard error (zero when
    /// both errors vanish).
    pub max_standardized: f64,
}

/// Compares `A` with the second-moment matrix of `U(x) = sqrt(alpha/M) σ(W·x)`
/// (valid when `C = 0`). Equal seeds share one sample stream.
pub fn covariance_representation_check(
    law: &InitLaw,
    act: Activation,
    ds: &Dataset,
    alpha: f64,
    n_mc: usize,
    seed_a: u64,
    seed_u: u64,
) -> Result<CovarianceCheck> {
    if !law.c.is_degenerate() {
        return Err(Error::Unsupported(
            "covariance representation holds only for C = 0".into(),
        ));
    }
    let inputs = ds.inputs();
    let d = ds.dim();
    let m = inputs.len();
    let k = estimate_a_at(law, act, &inputs, alpha, n_mc, seed_a)?;
    let root = (alpha / m as f64).sqrt();
    let u = stats::monte_carlo(n_mc, seed_u, m * (m + 1) / 2, |rng, scratch, buf| {
        draw_normal(rng, scratch, d);
        for x in &inputs {
            let v = root * act.eval(dot(&scratch[..d], x));
            scratch.push(v);
        }
        let f = &scratch[d..];
        let mut k = 0;
        for i in 0..m {
            for j in i..m {
                buf[k] = f[i] * f[j];
                k += 1;
            }
        }
    });
    let uu = symmetric_from_upper(m, &u.mean);
    let uu_se = symmetric_from_upper(m, &u.std_error());
    let mut max_abs_deviation: f64 = 0.0;
    let mut max_standardized: f64 = 0.0;
    for i in 0..m {
        for j in 0..m {
            let dev = (uu[(i, j)] - k.a[(i, j)]).abs();
            max_abs_deviation = max_abs_deviation.max(dev);
            let se = (uu_se[(i, j)].powi(2) + k.stderr[(i, j)].powi(2)).sqrt();
            if se > 0.0 {
                max_standardized = max_standardized.max(dev / se);
            }
        }
    }
    Ok(CovarianceCheck {
        max_abs_deviation,
        max_standardized,
    })
}

/// Input configurations that make the features `σ(w·x^(i))` linearly
/// dependent, so that `A` is singular although the inputs are distinct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelWarning {
    /// Odd σ vanishes identically at `x = 0`.
    ZeroSample { index: usize },
    /// Odd σ: `σ(w·(-x)) = -σ(w·x)`.
    AntipodalPair { first: usize, second: usize },
    /// `σ(z) + σ(-z) = 1`: two of {zero sample, antipodal pair} span the
    /// same constant function.
    ConstantCombination { indices: Vec<usize> },
}

impl fmt::Display for KernelWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelWarning::ZeroSample { index } => {
                write!(f, "sample {index} is the origin; σ(w·0) vanishes for odd σ and A is singular")
            }
            KernelWarning::AntipodalPair { first, second } => write!(
                f,
                "samples {first} and {second} are antipodal; their features are proportional and A is singular"
            ),
            KernelWarning::ConstantCombination { indices } => write!(
                f,
                "samples {indices:?} each generate the constant feature (σ(z)+σ(-z)=1); A is singular"
            ),
        }
    }
}

fn canonical(v: f64) -> u64 {
    if v == 0.0 {
        0
    } else {
        v.to_bits()
    }
}

fn is_negation(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(&x, &y)| canonical(x) == canonical(-y))
}

pub fn degeneracy_warnings(act: Activation, inputs: &[&[f64]]) -> Vec<KernelWarning> {
    let m = inputs.len();
    let zeros: Vec<usize> = (0..m).filter(|&i| inputs[i].iter().all(|&v| v == 0.0)).collect();
    let mut pairs = Vec::new();
    for i in 0..m {
        if zeros.contains(&i) {
            continue;
        }
        for j in i + 1..m {
            if is_negation(inputs[i], inputs[j]) {
                pairs.push((i, j));
            }
        }
    }
    match act.symmetry() {
        Symmetry::Odd => zeros
            .into_iter()
            .map(|index| KernelWarning::ZeroSample { index })
            .chain(
                pairs
                    .into_iter()
                    .map(|(first, second)| KernelWarning::AntipodalPair { first, second }),
            )
            .collect(),
        Symmetry::OddAboutHalf => {
            if zeros.len() + pairs.len() >= 2 {
                let mut indices: Vec<usize> = zeros;
                for (a, b) in pairs {
                    indices.push(a);
                    indices.push(b);
                }
                indices.sort_unstable();
                vec![KernelWarning::ConstantCombination { indices }]
            } else {
                Vec::new()
            }
        }
    }
}
