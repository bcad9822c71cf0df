//! Heteroscedastic aleatoric uncertainty estimation for regression.
//!
//! A network with a signal head `y` and a certainty head `w` is trained either
//! with a joint negative log-likelihood, where the certainty chases the
//! model's own (shrinking, overfit) training residuals, or with a separated
//! loss `|y - y*| + lambda (exp(w) r_tilde - w)` in which `r_tilde` is an
//! out-of-fold residual computed beforehand by leave-one-fold-out models.
//! The predicted absolute error of a sample is `exp(-w)`.
//!
//! Modules:
//!
//! - [`netcore`]: dense network, analytic backpropagation, Adam/SGD, training loop.
//! - [`losses`]: the five loss variants and the certainty-to-error mapping.
//! - [`folds`]: fold plans, the virtual-residual pipeline and its cache file.
//! - [`metrics`]: RMSE, eRMSE and PiR.
//! - [`data`]: the step-function simulation, CSV loading, splitting.
//! - [`harness`]: experiment configuration, runs, reports.

pub mod data;
pub mod error;
pub mod folds;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod netcore;
pub mod rng;

pub use error::{Error, Result};
