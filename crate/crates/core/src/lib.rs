//! Integrated covariance estimation from asynchronous high-frequency tick
//! data, together with the spectral machinery needed to compare estimator
//! spectra against their limiting spectral distributions.
//!
//! The crate is organised bottom-up:
//!
//! - [`tickdata`]: asynchronous tick series and panels, CSV ingestion.
//! - [`sync`]: refresh-time sampling, pairwise synchronization with retained
//!   arrival times, interval configurations and overlaps.
//! - [`estimators`]: realized, Hayashi-Yoshida and scaled realized covariance.
//! - [`spectral`]: symmetric eigen-decomposition, empirical spectral
//!   distributions, Stieltjes transforms and their inversion.
//! - [`lsd`]: fixed-point solvers for the limiting Stieltjes transform in the
//!   `p/n -> c > 0` and `p/n -> 0` regimes.
//! - [`simgen`]: Monte Carlo generation of asynchronous panels.

pub mod error;
pub mod estimators;
pub mod format;
pub mod lsd;
pub mod simgen;
pub mod spectral;
pub mod sync;
pub mod tickdata;

pub use nalgebra;
pub use num_complex;

pub use error::{Error, Result};
pub use estimators::{CovMatrix, EstimatorKind};
pub use spectral::{EigenSystem, SpectralMeasure};
pub use tickdata::{TickPanel, TickSeries};
