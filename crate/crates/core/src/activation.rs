//! Bounded, twice continuously differentiable activations.
//!
//! Only activations with finite `sup|σ|`, `sup|σ'|` and `sup|σ''|` are
//! accepted; the SGD bounds and the limit kernel both rely on that. Adding a
//! new entry means adding a variant, its three derivatives, its bounds and its
//! [`Symmetry`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
}

/// Uniform bounds on the activation and its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Reflection symmetry of the activation.
///
/// Used to flag datasets for which the features `σ(w·x)` are linearly
/// dependent even though all inputs are distinct.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Symmetry {
    /// `σ(-z) = -σ(z)`
    Odd,
    /// `σ(-z) = 1 - σ(z)`
    OddAboutHalf,
}

impl Activation {
    pub const ALL: [Activation; 2] = [Activation::Tanh, Activation::Sigmoid];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    #[inline]
    pub fn eval(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    #[inline]
    pub fn d1(self, z: f64) -> f64 {
        self.eval_with_d1(z).1
    }

    #[inline]
    pub fn d2(self, z: f64) -> f64 {
        let (s, ds) = self.eval_with_d1(z);
        match self {
            Activation::Tanh => -2.0 * s * ds,
            Activation::Sigmoid => ds * (1.0 - 2.0 * s),
        }
    }

    /// `(σ(z), σ'(z))` from one transcendental evaluation. Bitwise equal to
    /// `(self.eval(z), self.d1(z))`.
    #[inline]
    pub fn eval_with_d1(self, z: f64) -> (f64, f64) {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                (t, 1.0 - t * t)
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                (s, s * (1.0 - s))
            }
        }
    }

    pub fn bounds(self) -> Bounds {
        let sqrt3 = 3f64.sqrt();
        match self {
            // |tanh''| peaks at tanh(z) = 1/sqrt(3)
            Activation::Tanh => Bounds {
                value: 1.0,
                d1: 1.0,
                d2: 4.0 / (3.0 * sqrt3),
            },
            // |σ''| peaks at σ(z) = 1/2 ± 1/(2 sqrt(3))
            Activation::Sigmoid => Bounds {
                value: 1.0,
                d1: 0.25,
                d2: 1.0 / (6.0 * sqrt3),
            },
        }
    }

    pub fn symmetry(self) -> Symmetry {
        match self {
            Activation::Tanh => Symmetry::Odd,
            Activation::Sigmoid => Symmetry::OddAboutHalf,
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Config(format!(
                "unknown activation `{other}`; valid names: tanh, sigmoid \
                 (unbounded activations such as relu are not supported)"
            ))),
        }
    }
}

/// Looks up a catalog entry by name.
pub fn make_activation(name: &str) -> Result<Activation, Error> {
    name.parse()
}
