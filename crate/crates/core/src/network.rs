//! Finite-width parameter state, the `1/sqrt(N)`-scaled forward pass and the
//! initialization law.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::activation::Activation;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::stats;

/// Minimum Monte-Carlo sample count for covariance and kernel estimates.
pub const MIN_MC_SAMPLES: usize = 10_000;

/// Law of the output weights `C^i` at initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CLaw {
    /// `C^i = 0` exactly.
    PointMass,
    /// `C^i ~ U(-half_width, half_width)`.
    Uniform { half_width: f64 },
}

impl CLaw {
    pub fn uniform(half_width: f64) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::Config(format!(
                "uniform c_law needs a finite positive half-width, got {half_width}"
            )));
        }
        Ok(CLaw::Uniform { half_width })
    }

    /// `E[c^2]`.
    pub fn second_moment(self) -> f64 {
        match self {
            CLaw::PointMass => 0.0,
            CLaw::Uniform { half_width } => half_width * half_width / 3.0,
        }
    }

    pub fn is_degenerate(self) -> bool {
        matches!(self, CLaw::PointMass)
    }

    /// Point mass draws nothing; uniform consumes one `f64`.
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            CLaw::PointMass => 0.0,
            CLaw::Uniform { half_width } => {
                let u: f64 = rng.random();
                half_width * (2.0 * u - 1.0)
            }
        }
    }
}

impl fmt::Display for CLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CLaw::PointMass => f.write_str("zero"),
            CLaw::Uniform { half_width } => write!(f, "uniform:{half_width}"),
        }
    }
}

impl FromStr for CLaw {
    type Err = Error;

    /// Accepts `zero` (or `point_mass`) and `uniform:<a>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.split_once(':') {
            None if s == "zero" || s == "point_mass" => Ok(CLaw::PointMass),
            Some(("uniform", a)) => {
                let a: f64 = a
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad uniform half-width `{a}`")))?;
                CLaw::uniform(a)
            }
            _ => Err(Error::Config(format!(
                "unknown c_law `{s}`; expected `zero` or `uniform:<half-width>`"
            ))),
        }
    }
}

/// Product law `mu_0 = law(C) x N(0, I_d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InitLaw {
    pub c: CLaw,
}

impl InitLaw {
    pub fn new(c: CLaw) -> Self {
        InitLaw { c }
    }

    /// `C = 0`, `W ~ N(0, I)`.
    pub fn zero_output() -> Self {
        InitLaw { c: CLaw::PointMass }
    }
}

/// `theta = (C^1..C^N, W^1..W^N)`, with `W` stored row-major (`N x d`).
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub c: Vec<f64>,
    pub w: Vec<f64>,
    dim: usize,
}

impl Params {
    pub fn from_parts(c: Vec<f64>, w: Vec<f64>, dim: usize) -> Result<Self> {
        if c.is_empty() || dim == 0 || w.len() != c.len() * dim {
            return Err(Error::Validation(format!(
                "inconsistent parameter shapes: {} output weights, {} input weights, d = {dim}",
                c.len(),
                w.len()
            )));
        }
        Ok(Params { c, w, dim })
    }

    pub fn width(&self) -> usize {
        self.c.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn w_row(&self, i: usize) -> &[f64] {
        &self.w[i * self.dim..(i + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.c.iter().chain(&self.w).all(|v| v.is_finite())
    }

    /// Output scale `1/sqrt(N)`.
    pub fn scale(&self) -> f64 {
        1.0 / (self.width() as f64).sqrt()
    }
}

/// Dot product accumulated left to right from `0.0`.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Draws `(C^i, W^i)` i.i.d. from `law`, unit by unit.
pub fn init<R: Rng + ?Sized>(n: usize, dim: usize, law: &InitLaw, rng: &mut R) -> Result<Params> {
    if n == 0 {
        return Err(Error::Config("network width N must be at least 1".into()));
    }
    if dim == 0 {
        return Err(Error::Config("input dimension must be at least 1".into()));
    }
    let mut c = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n * dim);
    for _ in 0..n {
        c.push(law.c.sample(rng));
        for _ in 0..dim {
            w.push(rng.sample::<f64, _>(StandardNormal));
        }
    }
    Ok(Params { c, w, dim })
}

/// `g^N(x) = (1/sqrt(N)) sum_i C^i σ(W^i · x)`, summed in unit order.
pub fn forward(p: &Params, act: Activation, x: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), p.dim);
    let mut sum = 0.0;
    for (i, &c) in p.c.iter().enumerate() {
        sum += c * act.eval(dot(p.w_row(i), x));
    }
    sum * p.scale()
}

pub fn forward_all(p: &Params, act: Activation, ds: &Dataset) -> Vec<f64> {
    ds.samples().iter().map(|s| forward(p, act, &s.x)).collect()
}

/// Empirical squared loss `(1/M) sum_i (y_i - g(x_i))^2`.
pub fn loss(p: &Params, act: Activation, ds: &Dataset) -> f64 {
    let sum: f64 = ds
        .samples()
        .iter()
        .map(|s| {
            let r = s.y - forward(p, act, &s.x);
            r * r
        })
        .sum();
    sum / ds.len() as f64
}

/// Monte-Carlo estimate of a symmetric `M x M` second-moment matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMatrix {
    pub value: DMatrix<f64>,
    pub stderr: DMatrix<f64>,
    pub n_mc: usize,
}

/// Fills the upper triangle (row-major, `i <= j`) into full symmetric matrices.
pub(crate) fn symmetric_from_upper(m: usize, upper: &[f64]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m, m);
    let mut k = 0;
    for i in 0..m {
        for j in i..m {
            out[(i, j)] = upper[k];
            out[(j, i)] = upper[k];
            k += 1;
        }
    }
    out
}

/// Covariance of the limiting initial output,
/// `Sigma_{x,x'} = E[c^2 σ(w·x) σ(w·x')]`, by direct sampling of `(c, w)`.
pub fn init_output_covariance(
    law: &InitLaw,
    act: Activation,
    ds: &Dataset,
    n_mc: usize,
    seed: u64,
) -> Result<MomentMatrix> {
    if n_mc < MIN_MC_SAMPLES {
        return Err(Error::Config(format!(
            "n_mc must be at least {MIN_MC_SAMPLES}, got {n_mc}"
        )));
    }
    let inputs = ds.inputs();
    let m = inputs.len();
    let d = ds.dim();
    let n_pairs = m * (m + 1) / 2;
    let c_law = law.c;
    let moments = stats::monte_carlo(n_mc, seed, n_pairs, |rng, scratch, buf| {
        let c = c_law.sample(rng);
        scratch.clear();
        for _ in 0..d {
            scratch.push(rng.sample(StandardNormal));
        }
        for x in &inputs {
            let s = act.eval(dot(&scratch[..d], x));
            scratch.push(s);
        }
        let feats = &scratch[d..];
        let c2 = c * c;
        let mut k = 0;
        for i in 0..m {
            for j in i..m {
                buf[k] = c2 * feats[i] * feats[j];
                k += 1;
            }
        }
    });
    Ok(MomentMatrix {
        value: symmetric_from_upper(m, &moments.mean),
        stderr: symmetric_from_upper(m, &moments.std_error()),
        n_mc,
    })
}
