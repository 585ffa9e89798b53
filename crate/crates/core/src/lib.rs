//! Finite-width simulation of single-layer networks with `1/sqrt(N)` output
//! scaling trained by plain SGD, together with the limiting linear kernel ODE
//! and the statistical experiments that compare the two.
//!
//! The modules mirror the pipeline:
//!
//! * [`dataset`] and [`activation`] hold the fixed inputs.
//! * [`network`] and [`sgd`] simulate the finite-`N` system.
//! * [`kernel`] and [`limit_ode`] build and solve the `N -> inf` limit.
//! * [`analysis`] runs the sweeps; [`cli`] wires everything to files.

pub mod activation;
pub mod analysis;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod io;
pub mod kernel;
pub mod limit_ode;
pub mod network;
pub mod quadrature;
pub mod seed;
pub mod sgd;
pub mod stats;

pub use activation::Activation;
pub use dataset::{Dataset, Sample};
pub use error::{Error, Result};
pub use kernel::KernelMatrix;
pub use limit_ode::OdeSolution;
pub use network::{CLaw, InitLaw, Params};
pub use sgd::{SgdConfig, Trajectory};
