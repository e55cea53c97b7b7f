//! Alert detection in three-dimensional response data.
//!
//! A parametric mean model `f(x1, x2; θ)` and a log-linear standard-deviation
//! model `log σ(x1, x2) = g(x1, x2; ϑ)` are fitted jointly by maximum
//! likelihood. A nested two-level parametric bootstrap then yields
//! simultaneous confidence bands over a fixed-covariate slice, or confidence
//! planes over the whole covariate rectangle, and alerts are read off where
//! the band crosses a threshold λ.
//!
//! Modules:
//!
//! * [`model`]: mean families, σ model, datasets, hypotheses, Δ.
//! * [`estimator`]: joint ML fit and the θ-only fit.
//! * [`bootstrap`]: data simulation and the nested bootstrap bands.
//! * [`alert`]: test decisions, alert curves, MED contours, span metrics.
//! * [`simlab`]: simulation scenarios and Monte Carlo studies.
//! * [`io`]: CSV/JSON formats and analysis configuration.

pub mod alert;
pub mod bootstrap;
pub mod error;
pub mod estimator;
pub mod io;
pub mod model;
pub mod rng;
pub mod simlab;

pub use error::{Error, Result};
