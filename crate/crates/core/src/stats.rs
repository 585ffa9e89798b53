//! Small statistics toolkit: chunked Monte-Carlo moments, the one-sample
//! Kolmogorov–Smirnov test and a log-log slope fit.

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::seed::{self, Purpose, Rng};

/// Samples per Monte-Carlo chunk. Fixed so that chunk boundaries, and hence
/// the merged result, never depend on the number of workers.
pub const MC_CHUNK: usize = 1 << 14;

/// Running mean and centred second moment for a vector of quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryMoments {
    pub count: u64,
    pub mean: Vec<f64>,
    m2: Vec<f64>,
}

impl EntryMoments {
    pub fn new(len: usize) -> Self {
        EntryMoments {
            count: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    pub fn push(&mut self, values: &[f64]) {
        self.count += 1;
        let inv = 1.0 / self.count as f64;
        for ((mean, m2), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(values) {
            let delta = v - *mean;
            *mean += delta * inv;
            *m2 += delta * (v - *mean);
        }
    }

    /// Chan et al. pairwise merge.
    pub fn merge(&mut self, other: &EntryMoments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        for k in 0..self.mean.len() {
            let delta = other.mean[k] - self.mean[k];
            self.mean[k] += delta * nb / n;
            self.m2[k] += other.m2[k] + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }

    /// Unbiased sample variance per entry.
    pub fn variance(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![0.0; self.mean.len()];
        }
        let denom = (self.count - 1) as f64;
        self.m2.iter().map(|m| (m / denom).max(0.0)).collect()
    }

    /// Standard error of each mean.
    pub fn std_error(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.variance().into_iter().map(|v| (v / n).sqrt()).collect()
    }
}

/// Averages `len` quantities over `n` samples. `draw` fills the output buffer
/// for one sample from the given stream; the second argument is scratch space
/// reused within a chunk. Chunk `k` uses substream `(seed, k)`.
pub fn monte_carlo<F>(n: usize, seed: u64, len: usize, draw: F) -> EntryMoments
where
    F: Fn(&mut Rng, &mut Vec<f64>, &mut [f64]) + Sync,
{
    let n_chunks = n.div_ceil(MC_CHUNK);
    let chunks: Vec<EntryMoments> = (0..n_chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = seed::substream(seed, Purpose::Chunk, k as u64);
            let size = MC_CHUNK.min(n - k * MC_CHUNK);
            let mut acc = EntryMoments::new(len);
            let mut buf = vec![0.0; len];
            let mut scratch = Vec::new();
            for _ in 0..size {
                draw(&mut rng, &mut scratch, &mut buf);
                acc.push(&buf);
            }
            acc
        })
        .collect();
    let mut total = EntryMoments::new(len);
    for c in &chunks {
        total.merge(c);
    }
    total
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn std_normal_cdf(x: f64) -> f64 {
    // parameters are valid constants
    Normal::new(0.0, 1.0).expect("standard normal").cdf(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Two-sided one-sample KS test of `sample` against `N(0, 1)`.
pub fn ks_test_std_normal(sample: &[f64]) -> KsResult {
    let mut xs: Vec<f64> = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = std_normal_cdf(x);
        d = d.max(f - i as f64 / nf).max((i + 1) as f64 / nf - f);
    }
    let sqrt_n = nf.sqrt();
    let p_value = if n == 0 {
        1.0
    } else {
        kolmogorov_sf((sqrt_n + 0.12 + 0.11 / sqrt_n) * d)
    };
    KsResult {
        statistic: d,
        p_value,
        n,
    }
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi-transformed series converges fast for small lambda.
        let pi = std::f64::consts::PI;
        let c = -pi * pi / (8.0 * lambda * lambda);
        let mut sum = 0.0;
        for k in 1..=20 {
            let j = (2 * k - 1) as f64;
            sum += (c * j * j).exp();
        }
        (1.0 - (2.0 * pi).sqrt() / lambda * sum).clamp(0.0, 1.0)
    } else {
        let mut sum = 0.0;
        let mut sign = 1.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            sum += sign * term;
            if term < 1e-300 {
                break;
            }
            sign = -sign;
        }
        (2.0 * sum).clamp(0.0, 1.0)
    }
}

/// Least-squares slope of `ln y` against `ln x`. `None` when any value is not
/// strictly positive or fewer than two points are given.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    if xs.iter().chain(ys).any(|&v| !(v.is_finite() && v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = mean(&lx);
    let my = mean(&ly);
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}
