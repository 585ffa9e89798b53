//! The fixed training set and uniform sampling from it.

use std::collections::HashSet;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Sample {
    pub fn new(x: impl Into<Vec<f64>>, y: f64) -> Self {
        Sample { x: x.into(), y }
    }
}

/// `M >= 1` labelled points with pairwise distinct inputs, all of dimension `d`.
///
/// Index order is the construction order and is never changed; targets,
/// kernel rows and network outputs all use it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    dim: usize,
}

// -0.0 and 0.0 compare equal as reals, so they must share a key.
fn canonical_bits(v: f64) -> u64 {
    if v == 0.0 {
        0
    } else {
        v.to_bits()
    }
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Validation("dataset must contain at least one sample".into()))?;
        let dim = first.x.len();
        if dim == 0 {
            return Err(Error::Validation("input dimension must be at least 1".into()));
        }
        let mut seen: HashSet<Vec<u64>> = HashSet::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != dim {
                return Err(Error::Validation(format!(
                    "sample {i} has dimension {}, expected {dim}",
                    s.x.len()
                )));
            }
            if !s.y.is_finite() || s.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("sample {i} has a non-finite value")));
            }
            let key: Vec<u64> = s.x.iter().map(|&v| canonical_bits(v)).collect();
            if !seen.insert(key) {
                return Err(Error::Validation(format!(
                    "sample {i} duplicates an earlier input {:?}",
                    s.x
                )));
            }
        }
        Ok(Dataset { samples, dim })
    }

    /// Reads `x_1,...,x_d,y` rows with a mandatory header line.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_error(path, 0, e))?;
        let headers = reader.headers().map_err(|e| csv_error(path, 1, e))?.clone();
        if headers.len() < 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row: 1,
                message: "header must name at least one input column and the target y".into(),
            });
        }
        let mut samples = Vec::new();
        for (i, record) in reader.records().enumerate() {
            // header is row 1
            let row = i + 2;
            let record = record.map_err(|e| csv_error(path, row, e))?;
            let mut values = Vec::with_capacity(record.len());
            for field in record.iter() {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    row,
                    message: format!("cannot parse `{field}` as a number"),
                })?;
                values.push(v);
            }
            if values.len() != headers.len() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row,
                    message: format!("expected {} columns, found {}", headers.len(), values.len()),
                });
            }
            let y = values.pop().unwrap_or_default();
            samples.push(Sample { x: values, y });
        }
        Dataset::new(samples).map_err(|e| match e {
            Error::Validation(message) => Error::Parse {
                path: path.to_path_buf(),
                row: 0,
                message,
            },
            other => other,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, index: usize) -> &Sample {
        &self.samples[index]
    }

    pub fn inputs(&self) -> Vec<&[f64]> {
        self.samples.iter().map(|s| s.x.as_slice()).collect()
    }

    /// `(y^(1), ..., y^(M))` in dataset order.
    pub fn targets(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.y).collect()
    }

    /// Uniform index in `0..M` from exactly one `u64` draw.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let m = self.samples.len();
        ((u * m as f64) as usize).min(m - 1)
    }

    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (&[f64], f64) {
        let s = &self.samples[self.sample_index(rng)];
        (&s.x, s.y)
    }
}

fn csv_error(path: &Path, row: usize, e: csv::Error) -> Error {
    let row = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(row);
    Error::Parse {
        path: path.to_path_buf(),
        row,
        message: e.to_string(),
    }
}
