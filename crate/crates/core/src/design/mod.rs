//! Offline chart design: bootstrap resampling, Monte-Carlo run lengths,
//! control-limit search, shift-size estimation and allowance selection.

pub mod allowance;
pub mod benchmark;
pub mod arl;
pub mod arma;
pub mod bootstrap;
pub mod calibrate;
pub mod shift_size;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use allowance::{optimize_allowance, AllowanceCandidate, AllowanceResult};
pub use benchmark::{design_benchmark, BenchmarkConfig, ComparisonRow, ComparisonTable, Generator, Method};
pub use arl::{estimate_arl, first_alert, ArlEstimate, Limits, MonteCarlo};
pub use bootstrap::{BootstrapSource, ResamplingMode};
pub use calibrate::{calibrate_control_limit, calibrate_iid, BisectionStep, CalibrationSettings, DesignResult, LimitSymmetry};
pub use shift_size::{estimate_shift_size, ShiftSizeResult, ShiftSizeSettings};

use crate::error::{Error, Result};

/// Persisted summary of a chart design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub scheme: ResamplingMode,
    pub k: f64,
    pub h_plus: f64,
    pub h_minus: f64,
    pub arl0_target: f64,
    pub achieved_arl0: f64,
    pub censored_fraction: f64,
    pub converged: bool,
    pub bisection: Vec<BisectionStep>,
    pub seed: u64,
    pub shift_size: Option<ShiftSizeResult>,
    pub allowance: Option<Vec<AllowanceCandidate>>,
    pub warnings: Vec<String>,
}

impl DesignReport {
    pub fn new(scheme: ResamplingMode, settings: &CalibrationSettings, design: &DesignResult) -> Self {
        DesignReport {
            scheme,
            k: design.chart.k,
            h_plus: design.chart.h_plus,
            h_minus: design.chart.h_minus,
            arl0_target: settings.arl0_target,
            achieved_arl0: design.achieved_arl0,
            censored_fraction: design.censored_fraction,
            converged: design.converged,
            bisection: design.iterations.clone(),
            seed: settings.seed,
            shift_size: None,
            allowance: None,
            warnings: design.warnings.clone(),
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path.display().to_string(), e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }
}
