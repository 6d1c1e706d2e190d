//! Monte-Carlo run-length estimation on bootstrap series.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bootstrap::BootstrapSource;
use crate::cusum::{check, cusum_step, AlertEvent, ChartState};
use crate::error::{Error, Result};
use crate::rng::replication_rng;
use crate::shift::ShiftSpec;

const MODULE: &str = "bootstrap-design";

/// Fraction of censored runs above which an ARL estimate is flagged.
pub const CENSORING_WARN_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub k: f64,
    pub h_plus: f64,
    pub h_minus: f64,
}

impl Limits {
    pub fn symmetric(k: f64, h: f64) -> Self {
        Limits { k, h_plus: h, h_minus: -h }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub replications: usize,
    /// Series length; runs without an alert are recorded at this value.
    pub censor_at: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArlEstimate {
    pub arl: f64,
    pub run_lengths: Vec<u32>,
    pub censored_fraction: f64,
    pub series_length: usize,
}

impl ArlEstimate {
    fn from_run_lengths(run_lengths: Vec<u32>, series_length: usize) -> Self {
        let total: u64 = run_lengths.iter().map(|&r| u64::from(r)).sum();
        let censored = run_lengths.iter().filter(|&&r| r as usize >= series_length).count();
        let n = run_lengths.len() as f64;
        ArlEstimate {
            arl: total as f64 / n,
            censored_fraction: censored as f64 / n,
            run_lengths,
            series_length,
        }
    }

    pub fn std_error(&self) -> f64 {
        let n = self.run_lengths.len() as f64;
        if n < 2.0 {
            return f64::NAN;
        }
        let var = self.run_lengths.iter().map(|&r| (f64::from(r) - self.arl).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    }

    pub fn heavily_censored(&self) -> bool {
        self.censored_fraction > CENSORING_WARN_FRACTION
    }
}

/// Runs a chart from the zero state over `values` until the first alert.
/// Returns the one-based run length and the alert, or `None` if the series
/// ends first.
pub fn first_alert(values: impl Iterator<Item = f64>, limits: &Limits) -> Option<(usize, AlertEvent)> {
    let mut state = ChartState::default();
    for (t, x) in values.enumerate() {
        state = cusum_step(state, x, limits.k);
        if let Some(alert) = check(&state, limits.h_plus, limits.h_minus, t).into_iter().flatten().next() {
            return Some((t + 1, alert));
        }
    }
    None
}

pub(crate) fn validate_mc(mc: &MonteCarlo) -> Result<()> {
    if mc.replications == 0 || mc.censor_at == 0 {
        return Err(Error::config(MODULE, "replications and series length must be at least 1"));
    }
    if mc.censor_at > u32::MAX as usize {
        return Err(Error::config(MODULE, "series length too large"));
    }
    Ok(())
}

/// Replication `b` of a bootstrap chart run: first alert within the censoring
/// horizon, with the shift (if any) superposed from time index 0.
pub(crate) fn replicate(
    source: &BootstrapSource,
    limits: &Limits,
    shift: Option<&ShiftSpec>,
    mc: &MonteCarlo,
    b: usize,
) -> Option<(usize, AlertEvent)> {
    let mut rng = replication_rng(mc.seed, b as u64);
    let stream = source.stream(&mut rng).take(mc.censor_at);
    match shift {
        None => first_alert(stream, limits),
        Some(s) => first_alert(stream.enumerate().map(|(t, x)| x + s.value_at(t)), limits),
    }
}

pub fn estimate_arl(
    source: &BootstrapSource,
    limits: &Limits,
    shift: Option<&ShiftSpec>,
    mc: &MonteCarlo,
) -> Result<ArlEstimate> {
    validate_mc(mc)?;
    let run_lengths: Vec<u32> = (0..mc.replications)
        .into_par_iter()
        .map(|b| replicate(source, limits, shift, mc, b).map_or(mc.censor_at, |(rl, _)| rl) as u32)
        .collect();
    Ok(ArlEstimate::from_run_lengths(run_lengths, mc.censor_at))
}

/// ARL over run lengths produced by an arbitrary per-replication simulator,
/// used where the in-control series is not a bootstrap of residuals.
pub fn estimate_arl_with<F>(mc: &MonteCarlo, run: F) -> Result<ArlEstimate>
where
    F: Fn(&mut crate::rng::ReplicationRng) -> Option<usize> + Sync,
{
    validate_mc(mc)?;
    let run_lengths: Vec<u32> = (0..mc.replications)
        .into_par_iter()
        .map(|b| {
            let mut rng = replication_rng(mc.seed, b as u64);
            run(&mut rng).map_or(mc.censor_at, |rl| rl.min(mc.censor_at)) as u32
        })
        .collect();
    Ok(ArlEstimate::from_run_lengths(run_lengths, mc.censor_at))
}
