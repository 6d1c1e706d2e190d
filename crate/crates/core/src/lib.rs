//! Panel monitoring with bootstrap-calibrated CUSUM charts and SVM-based
//! fault characterization.
//!
//! The crate works on a panel of `N` processes observed on a shared regular
//! time grid. Each process is modelled as a common signal times (or plus) a
//! process-specific factor. The pipeline:
//!
//! 1. [`panel`] estimates the common signal and removes it along with slow
//!    process levels.
//! 2. [`selection`] picks a pool of stable, in-control processes.
//! 3. [`pattern`] estimates the in-control mean and spread over time and
//!    standardizes every process against it.
//! 4. [`cusum`] monitors the standardized residuals.
//! 5. [`design`] calibrates control limits with a block bootstrap and picks
//!    the allowance and shift size.
//! 6. [`svm`] trains models that predict the size and shape of a shift from
//!    the residuals just before an alert.
//! 7. [`pipeline`] ties it together into a persisted bundle and a monitor.

pub mod config;
pub mod cusum;
pub mod design;
pub mod error;
pub mod fixture;
pub mod panel;
pub mod pattern;
pub mod pipeline;
pub mod selection;
pub mod rng;
pub mod shift;
pub mod stats;
pub mod svm;

pub use error::{Error, Result};
