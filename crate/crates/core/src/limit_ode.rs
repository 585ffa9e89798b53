//! The limiting linear ODE `dh/dt = A (y_hat - h)` with a Gaussian initial
//! condition: exact spectral solution, an RK4 cross-check and the quadratic
//! objective `J(y, h) = (y - h)^T A (y - h)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;
const NOISE_EIGEN: f64 = 16.0 * f64::EPSILON;

fn check_square_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Validation(format!("{what} must be square")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("{what} has non-finite entries")));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > SYMMETRY_TOL * scale {
        return Err(Error::Validation(format!("{what} is not symmetric")));
    }
    Ok(())
}

fn check_len(v: &DVector<f64>, m: usize, what: &str) -> Result<()> {
    if v.len() != m {
        return Err(Error::Validation(format!("{what} has length {}, expected {m}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical(format!("{what} has non-finite entries")));
    }
    Ok(())
}

/// Draws from `N(0, Sigma)` through the spectral square root
/// `Q diag(sqrt(max(lambda, 0)))`.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    root: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        check_square_symmetric(sigma, "covariance")?;
        let eig = SymmetricEigen::new(sigma.clone());
        let lmin = eig.eigenvalues.min();
        if lmin < -PSD_TOL * eig.eigenvalues.amax().max(1.0) {
            return Err(Error::Validation(format!(
                "covariance is not positive semidefinite (lambda_min = {lmin:e})"
            )));
        }
        // eigenvalues at the solver's roundoff level are treated as zero so
        // that rank-deficient covariances keep their support exactly
        let floor = NOISE_EIGEN * eig.eigenvalues.amax() * sigma.nrows() as f64;
        let mut root = eig.eigenvectors;
        for (k, &l) in eig.eigenvalues.iter().enumerate() {
            let s = if l > floor { l.sqrt() } else { 0.0 };
            root.column_mut(k).scale_mut(s);
        }
        Ok(GaussianSampler { root })
    }

    pub fn dim(&self) -> usize {
        self.root.nrows()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> DVector<f64> {
        let z = DVector::from_fn(self.root.ncols(), |_, _| rng.sample(StandardNormal));
        &self.root * z
    }
}

pub fn sample_h0(sigma: &DMatrix<f64>, rng: &mut impl Rng) -> Result<DVector<f64>> {
    Ok(GaussianSampler::new(sigma)?.sample(rng))
}

/// Closed-form solution `h(t) = y_hat + Q exp(-Lambda t) Q^T (h0 - y_hat)`.
#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub a: DMatrix<f64>,
    pub y_hat: DVector<f64>,
    pub h0: DVector<f64>,
    pub eigenvalues: DVector<f64>,
    /// Orthonormal columns.
    pub eigenvectors: DMatrix<f64>,
    /// `Q^T (h0 - y_hat)`.
    pub coeffs: DVector<f64>,
}

pub fn solve_spectral(a: &DMatrix<f64>, y_hat: &DVector<f64>, h0: &DVector<f64>) -> Result<OdeSolution> {
    check_square_symmetric(a, "A")?;
    let m = a.nrows();
    check_len(y_hat, m, "y_hat")?;
    check_len(h0, m, "h0")?;
    let eig = SymmetricEigen::new(a.clone());
    let coeffs = eig.eigenvectors.transpose() * (h0 - y_hat);
    Ok(OdeSolution {
        a: a.clone(),
        y_hat: y_hat.clone(),
        h0: h0.clone(),
        eigenvalues: eig.eigenvalues,
        eigenvectors: eig.eigenvectors,
        coeffs,
    })
}

impl OdeSolution {
    pub fn dim(&self) -> usize {
        self.y_hat.len()
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        if t == 0.0 {
            return self.h0.clone();
        }
        let decayed = self
            .coeffs
            .zip_map(&self.eigenvalues, |c, l| c * (-l * t).exp());
        &self.y_hat + &self.eigenvectors * decayed
    }

    /// Evolves an arbitrary state `h` for time `t` under the same ODE.
    pub fn flow(&self, h: &DVector<f64>, t: f64) -> DVector<f64> {
        let c = self.eigenvectors.transpose() * (h - &self.y_hat);
        let decayed = c.zip_map(&self.eigenvalues, |c, l| c * (-l * t).exp());
        &self.y_hat + &self.eigenvectors * decayed
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues.max()
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues.min()
    }
}

/// `(y - h)^T A (y - h)`.
pub fn objective_j(a: &DMatrix<f64>, y: &DVector<f64>, h: &DVector<f64>) -> f64 {
    let r = y - h;
    r.dot(&(a * &r))
}

/// `max_i |h_i(t) - y_hat_i|`.
pub fn long_time_error(sol: &OdeSolution, t: f64) -> f64 {
    (sol.eval(t) - &sol.y_hat).amax()
}

#[derive(Debug, Clone)]
pub struct OdePath {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

/// Classical RK4 on `h' = A (y_hat - h)` over `[0, horizon]` with
/// `ceil(horizon / dt)` equal steps; every step is recorded.
pub fn solve_rk4(
    a: &DMatrix<f64>,
    y_hat: &DVector<f64>,
    h0: &DVector<f64>,
    dt: f64,
    horizon: f64,
) -> Result<OdePath> {
    check_square_symmetric(a, "A")?;
    let m = a.nrows();
    check_len(y_hat, m, "y_hat")?;
    check_len(h0, m, "h0")?;
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(Error::Config(format!("horizon must be finite and >= 0, got {horizon}")));
    }
    let lmax = if m == 0 {
        0.0
    } else {
        SymmetricEigen::new(a.clone()).eigenvalues.max()
    };
    let limit = 0.1 / lmax.max(1.0);
    if !(dt > 0.0 && dt <= limit) {
        return Err(Error::StepSize(format!(
            "dt = {dt} outside (0, {limit}] for lambda_max = {lmax}"
        )));
    }
    let steps = ((horizon / dt) - 1e-9).ceil().max(0.0) as usize;
    let h = if steps == 0 { 0.0 } else { horizon / steps as f64 };
    let rhs = |s: &DVector<f64>| a * (y_hat - s);
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut s = h0.clone();
    times.push(0.0);
    states.push(s.clone());
    for k in 1..=steps {
        let k1 = rhs(&s);
        let k2 = rhs(&(&s + &k1 * (0.5 * h)));
        let k3 = rhs(&(&s + &k2 * (0.5 * h)));
        let k4 = rhs(&(&s + &k3 * h));
        s += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::StepSize(format!("non-finite state at step {k}")));
        }
        times.push(k as f64 * h);
        states.push(s.clone());
    }
    Ok(OdePath { times, states })
}

/// Sup over the path's grid of the max-norm distance to the spectral solution.
pub fn path_deviation(path: &OdePath, sol: &OdeSolution) -> f64 {
    path.times
        .iter()
        .zip(&path.states)
        .map(|(&t, s)| (s - sol.eval(t)).amax())
        .fold(0.0, f64::max)
}
