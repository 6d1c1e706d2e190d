//! Choice of the input-window length `m` from detection delays.

use log::warn;
use serde::{Deserialize, Serialize};

use super::MODULE;
use crate::cusum::GapPolicy;
use crate::design::arl::{estimate_arl, Limits, MonteCarlo};
use crate::design::bootstrap::BootstrapSource;
use crate::design::calibrate::{calibrate_control_limit, CalibrationSettings};
use crate::error::{Error, Result};
use crate::shift::ShiftSpec;
use crate::stats::nearest_rank;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSelection {
    pub m: usize,
    pub limits: Limits,
    pub run_lengths: Vec<u32>,
    pub censored_fraction: f64,
    pub warnings: Vec<String>,
}

/// Calibrates a chart with `k = δ_min/2`, then picks `m` as the
/// `quantile`-th run length after an in-control `+δ_min` jump at time 0.
pub fn select_window_m(
    source: &BootstrapSource,
    delta_min: f64,
    quantile: f64,
    settings: &CalibrationSettings,
    shortest_period: Option<f64>,
) -> Result<WindowSelection> {
    if !(delta_min > 0.0) {
        return Err(Error::config(MODULE, format!("delta_min must be > 0, got {delta_min}")));
    }
    let k = delta_min / 2.0;
    let design = calibrate_control_limit(source, k, settings, GapPolicy::ResetAlways)?;
    let limits = Limits { k, h_plus: design.chart.h_plus, h_minus: design.chart.h_minus };
    select_window_m_for_chart(source, &limits, delta_min, quantile, &settings.monte_carlo(), shortest_period)
}

/// As [`select_window_m`] with the chart given.
pub fn select_window_m_for_chart(
    source: &BootstrapSource,
    limits: &Limits,
    delta_min: f64,
    quantile: f64,
    mc: &MonteCarlo,
    shortest_period: Option<f64>,
) -> Result<WindowSelection> {
    if !(0.0..=1.0).contains(&quantile) || quantile == 0.0 {
        return Err(Error::config(MODULE, format!("window quantile must lie in (0, 1], got {quantile}")));
    }
    let est = estimate_arl(source, limits, Some(&ShiftSpec::jump(delta_min, 0)), mc)?;
    let mut sorted: Vec<usize> = est.run_lengths.iter().map(|&r| r as usize).collect();
    sorted.sort_unstable();
    let m = nearest_rank(&sorted, quantile);
    let mut warnings = Vec::new();
    if m >= mc.censor_at {
        warnings.push(format!(
            "the {quantile} quantile of the run length falls on censored runs ({:.1}% censored); m set to the horizon {}",
            est.censored_fraction * 100.0,
            mc.censor_at
        ));
    }
    if let Some(period) = shortest_period {
        if m as f64 > period / 2.0 {
            warnings.push(format!("m = {m} exceeds half the shortest oscillation period ({period})"));
        }
    }
    for w in &warnings {
        warn!("{w}");
    }
    Ok(WindowSelection { m, limits: *limits, run_lengths: est.run_lengths, censored_fraction: est.censored_fraction, warnings })
}
