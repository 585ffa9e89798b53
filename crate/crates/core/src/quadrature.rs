//! Gauss–Hermite rules for expectations over a standard normal.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Nodes and weights for `∫ e^{-t²} f(t) dt ≈ Σ w_k f(t_k)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub–Welsch: nodes are the eigenvalues of the symmetric Jacobi matrix
    /// with off-diagonal `sqrt(k/2)`, weights are `sqrt(pi)` times the squared
    /// first eigenvector components.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("Gauss-Hermite rule needs at least one node".into()));
        }
        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let b = (k as f64 / 2.0).sqrt();
            jacobi[(k - 1, k)] = b;
            jacobi[(k, k - 1)] = b;
        }
        let eig = SymmetricEigen::new(jacobi);
        let mu0 = std::f64::consts::PI.sqrt();
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|k| {
                let v0 = eig.eigenvectors[(0, k)];
                (eig.eigenvalues[k], mu0 * v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // The rule is symmetric; enforce it exactly.
        for k in 0..n / 2 {
            let j = n - 1 - k;
            let t = 0.5 * (pairs[j].0 - pairs[k].0);
            let w = 0.5 * (pairs[j].1 + pairs[k].1);
            pairs[k] = (-t, w);
            pairs[j] = (t, w);
        }
        if n % 2 == 1 {
            pairs[n / 2].0 = 0.0;
        }
        let (nodes, weights) = pairs.into_iter().unzip();
        Ok(GaussHermite { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[f(Z)]` for `Z ~ N(0, 1)`, via `Z = sqrt(2) t`.
    pub fn std_normal_expectation(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        let sqrt2 = std::f64::consts::SQRT_2;
        let sum: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(sqrt2 * t))
            .sum();
        sum / std::f64::consts::PI.sqrt()
    }
}
