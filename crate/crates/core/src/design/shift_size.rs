//! Iterative estimate of the typical shift size in out-of-control data.

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::arl::{first_alert, Limits};
use super::bootstrap::BootstrapSource;
use super::calibrate::{calibrate_control_limit, CalibrationSettings};
use crate::cusum::{montgomery_estimate, GapPolicy};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, replication_rng};
use crate::stats::quantile_mut;

const MODULE: &str = "bootstrap-design";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSizeSettings {
    pub delta0: f64,
    /// Stop once successive estimates differ by at most this much.
    pub rho: f64,
    pub quantile: f64,
    pub max_outer_iterations: usize,
    pub calibration: CalibrationSettings,
}

impl Default for ShiftSizeSettings {
    fn default() -> Self {
        ShiftSizeSettings {
            delta0: 1.0,
            rho: 0.05,
            quantile: 0.5,
            max_outer_iterations: 10,
            calibration: CalibrationSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftSizeStep {
    pub delta_in: f64,
    pub k: f64,
    pub h: f64,
    pub alerts: usize,
    pub delta_out: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSizeResult {
    pub delta: f64,
    pub converged: bool,
    pub steps: Vec<ShiftSizeStep>,
}

/// Absolute shift estimates at the first alert of each out-of-control
/// bootstrap replication.
pub fn shift_estimates(oc: &BootstrapSource, limits: &Limits, replications: usize, censor_at: usize, seed: u64) -> Vec<f64> {
    (0..replications)
        .into_par_iter()
        .filter_map(|b| {
            let mut rng = replication_rng(seed, b as u64);
            let (_, alert) = first_alert(oc.stream(&mut rng).take(censor_at), limits)?;
            montgomery_estimate(&alert, limits.k).ok().map(f64::abs)
        })
        .collect()
}

pub fn estimate_shift_size(ic: &BootstrapSource, oc: &BootstrapSource, settings: &ShiftSizeSettings) -> Result<ShiftSizeResult> {
    if !(settings.delta0 > 0.0) {
        return Err(Error::config(MODULE, "initial shift size must be positive"));
    }
    if !(0.0..=1.0).contains(&settings.quantile) {
        return Err(Error::config(MODULE, "shift quantile must lie in [0, 1]"));
    }
    let cal = &settings.calibration;
    let oc_seed = derive_seed(cal.seed, "shift-size-oc");
    let mut delta = settings.delta0;
    let mut steps = Vec::new();
    for _ in 0..settings.max_outer_iterations.max(1) {
        let k = delta / 2.0;
        let design = calibrate_control_limit(ic, k, cal, GapPolicy::ResetAlways)?;
        let limits = Limits { k, h_plus: design.chart.h_plus, h_minus: design.chart.h_minus };
        let mut est = shift_estimates(oc, &limits, cal.replications, cal.censor_at(), oc_seed);
        if est.is_empty() {
            return Err(Error::data(
                MODULE,
                format!("no alerts on out-of-control data at δ = {delta}; it is indistinguishable from in-control"),
            ));
        }
        let next = quantile_mut(&mut est, settings.quantile);
        info!("shift size iteration: δ {delta} -> {next} ({} alerts)", est.len());
        steps.push(ShiftSizeStep { delta_in: delta, k, h: limits.h_plus, alerts: est.len(), delta_out: next });
        let done = (next - delta).abs() <= settings.rho;
        delta = next;
        if done {
            return Ok(ShiftSizeResult { delta, converged: true, steps });
        }
    }
    Ok(ShiftSizeResult { delta, converged: false, steps })
}
