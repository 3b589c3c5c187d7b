//! Functional regression toolkit.
//!
//! Two estimation pipelines share a discretized Hilbert-space layer:
//!
//! - [`bayes`]: generalized least squares for surface time series whose errors
//!   follow an autoregressive Hilbertian process of order one, with a
//!   Bayesian plug-in estimate of the autocorrelation spectrum.
//! - [`spatial`]: frequency-domain generalized least squares for curves
//!   indexed by a regular two-dimensional lattice, with a window-smoothed
//!   periodogram estimate of the spectral density operator.

pub mod arh;
pub mod bayes;
pub mod cli;
pub mod error;
pub mod fnspace;
pub mod preprocess;
pub mod report;
pub mod spatial;
pub mod synth;

pub use error::{Error, Result};
