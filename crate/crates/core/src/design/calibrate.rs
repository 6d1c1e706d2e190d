//! Control-limit search by bisection on the bootstrap ARL.

use log::warn;
use serde::{Deserialize, Serialize};

use super::arl::{estimate_arl, estimate_arl_with, ArlEstimate, Limits, MonteCarlo};
use super::bootstrap::BootstrapSource;
use crate::cusum::{CalibratedChart, GapPolicy, Provenance};
use crate::error::{Error, Result};
use crate::rng::ReplicationRng;

const MODULE: &str = "bootstrap-design";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitSymmetry {
    /// `h⁻ = −h⁺`, calibrated jointly on the two-sided chart.
    Symmetric,
    /// Each side calibrated alone to twice the target.
    Asymmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSettings {
    pub arl0_target: f64,
    /// Accepted |ARL̂ − target|, as a fraction of the target.
    pub tolerance_fraction: f64,
    pub h_lower: f64,
    pub h_upper: f64,
    pub max_iterations: usize,
    pub max_widenings: usize,
    pub replications: usize,
    /// Censoring horizon as a multiple of the target.
    pub censor_multiple: f64,
    pub symmetry: LimitSymmetry,
    pub seed: u64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            arl0_target: 200.0,
            tolerance_fraction: 0.05,
            h_lower: 0.5,
            h_upper: 50.0,
            max_iterations: 40,
            max_widenings: 8,
            replications: 2000,
            censor_multiple: 10.0,
            symmetry: LimitSymmetry::Symmetric,
            seed: 0,
        }
    }
}

impl CalibrationSettings {
    pub fn censor_at(&self) -> usize {
        (self.censor_multiple * self.arl0_target).ceil() as usize
    }

    pub fn monte_carlo(&self) -> MonteCarlo {
        MonteCarlo {
            replications: self.replications,
            censor_at: self.censor_at(),
            seed: self.seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.arl0_target >= 1.0) {
            return Err(Error::config(MODULE, format!("ARL0 target must be >= 1, got {}", self.arl0_target)));
        }
        if !(self.tolerance_fraction > 0.0) {
            return Err(Error::config(MODULE, "ARL tolerance must be positive"));
        }
        if !(self.h_lower > 0.0 && self.h_lower < self.h_upper) {
            return Err(Error::config(
                MODULE,
                format!("need 0 < h_L < h_U, got [{}, {}]", self.h_lower, self.h_upper),
            ));
        }
        if self.censor_at() as f64 <= self.arl0_target {
            return Err(Error::config(MODULE, "censoring horizon must exceed the ARL0 target"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisectionStep {
    pub h: f64,
    pub arl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    pub chart: CalibratedChart,
    pub iterations: Vec<BisectionStep>,
    pub converged: bool,
    /// Two-sided ARL of the returned chart.
    pub achieved_arl0: f64,
    pub censored_fraction: f64,
    pub warnings: Vec<String>,
}

/// Bisection for one side (or both, when symmetric): `arl_at(h)` must be
/// nondecreasing in `h`.
fn bisect_steps(
    target: f64,
    settings: &CalibrationSettings,
    mut arl_at: impl FnMut(f64) -> Result<ArlEstimate>,
    trace: &mut Vec<BisectionStep>,
) -> Result<(f64, bool)> {
    let tol = settings.tolerance_fraction * target;
    let (mut lo, mut hi) = (settings.h_lower, settings.h_upper);
    let mut record = |h: f64, trace: &mut Vec<BisectionStep>| -> Result<f64> {
        let a = arl_at(h)?.arl;
        trace.push(BisectionStep { h, arl: a });
        Ok(a)
    };

    let mut arl_lo = record(lo, trace)?;
    let mut widen = 0;
    while arl_lo >= target {
        if (arl_lo - target).abs() <= tol {
            return Ok((lo, true));
        }
        if widen == settings.max_widenings {
            return Err(Error::data(
                MODULE,
                format!(
                    "ARL at h_L = {lo} is {arl_lo}, not below the target {target}; \
                     the residual source may be degenerate (near-constant)"
                ),
            ));
        }
        hi = lo;
        lo /= 4.0;
        widen += 1;
        arl_lo = record(lo, trace)?;
    }
    let mut arl_hi = record(hi, trace)?;
    widen = 0;
    while arl_hi <= target {
        if (arl_hi - target).abs() <= tol {
            return Ok((hi, true));
        }
        if widen == settings.max_widenings {
            return Err(Error::data(
                MODULE,
                format!(
                    "ARL at h_U = {hi} is only {arl_hi}, below the target {target}; \
                     increase the censoring horizon or the upper bound"
                ),
            ));
        }
        lo = hi;
        hi *= 4.0;
        widen += 1;
        arl_hi = record(hi, trace)?;
    }

    for _ in 0..settings.max_iterations {
        let mid = 0.5 * (lo + hi);
        let a = record(mid, trace)?;
        if (a - target).abs() <= tol {
            return Ok((mid, true));
        }
        if a < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let best = trace
        .iter()
        .min_by(|a, b| (a.arl - target).abs().total_cmp(&(b.arl - target).abs()))
        .map_or(0.5 * (lo + hi), |s| s.h);
    Ok((best, false))
}

fn bisect(
    target: f64,
    settings: &CalibrationSettings,
    arl_at: impl FnMut(f64) -> Result<ArlEstimate>,
    trace: &mut Vec<BisectionStep>,
) -> Result<(f64, bool)> {
    let mut steps = Vec::new();
    let out = bisect_steps(target, settings, arl_at, &mut steps);
    trace.extend(steps);
    out
}

/// Calibrates against an arbitrary in-control simulator, e.g. i.i.d. draws
/// from a fitted parametric law.
pub fn calibrate_with<F>(k: f64, settings: &CalibrationSettings, gap_policy: GapPolicy, arl: F) -> Result<DesignResult>
where
    F: Fn(&Limits, &MonteCarlo) -> Result<ArlEstimate>,
{
    settings.validate()?;
    if !(k > 0.0) {
        return Err(Error::config(MODULE, format!("allowance k must be > 0, got {k}")));
    }
    let mc = settings.monte_carlo();
    let mut trace = Vec::new();
    let (h_plus, h_minus, converged) = match settings.symmetry {
        LimitSymmetry::Symmetric => {
            let (h, c) = bisect(settings.arl0_target, settings, |h| arl(&Limits::symmetric(k, h), &mc), &mut trace)?;
            (h, -h, c)
        }
        LimitSymmetry::Asymmetric => {
            let one_sided = 2.0 * settings.arl0_target;
            let mut s = settings.clone();
            s.arl0_target = one_sided;
            let (hp, cp) = bisect(
                one_sided,
                &s,
                |h| arl(&Limits { k, h_plus: h, h_minus: f64::NEG_INFINITY }, &mc),
                &mut trace,
            )?;
            let (hm, cm) = bisect(
                one_sided,
                &s,
                |h| arl(&Limits { k, h_plus: f64::INFINITY, h_minus: -h }, &mc),
                &mut trace,
            )?;
            (hp, -hm, cp && cm)
        }
    };
    let limits = Limits { k, h_plus, h_minus };
    let final_est = arl(&limits, &mc)?;
    let mut warnings = Vec::new();
    if !converged {
        warnings.push(format!(
            "control-limit search did not reach ARL0 {} within tolerance; best h = {h_plus} gives {}",
            settings.arl0_target, final_est.arl
        ));
    }
    if final_est.heavily_censored() {
        warnings.push(format!(
            "{:.1}% of runs censored at L = {}; ARL estimate is biased low",
            100.0 * final_est.censored_fraction,
            final_est.series_length
        ));
    }
    for w in &warnings {
        warn!("{w}");
    }
    Ok(DesignResult {
        chart: CalibratedChart {
            k,
            h_plus,
            h_minus,
            gap_policy,
            provenance: Some(Provenance {
                arl0_target: settings.arl0_target,
                replications: settings.replications,
                block_length: None,
                seed: settings.seed,
            }),
        },
        iterations: trace,
        converged,
        achieved_arl0: final_est.arl,
        censored_fraction: final_est.censored_fraction,
        warnings,
    })
}

pub fn calibrate_control_limit(
    source: &BootstrapSource,
    k: f64,
    settings: &CalibrationSettings,
    gap_policy: GapPolicy,
) -> Result<DesignResult> {
    let mut result = calibrate_with(k, settings, gap_policy, |lim, mc| estimate_arl(source, lim, None, mc))?;
    if let (Some(p), super::bootstrap::ResamplingMode::MovingBlock { block_length }) =
        (result.chart.provenance.as_mut(), source.mode())
    {
        p.block_length = Some(block_length);
    }
    Ok(result)
}

/// Calibrates on i.i.d. draws from `draw`.
pub fn calibrate_iid<D>(k: f64, settings: &CalibrationSettings, draw: D) -> Result<DesignResult>
where
    D: Fn(&mut ReplicationRng) -> f64 + Sync,
{
    calibrate_with(k, settings, GapPolicy::ResetAlways, |lim, mc| {
        estimate_arl_with(mc, |rng| {
            super::arl::first_alert((0..mc.censor_at).map(|_| draw(rng)), lim).map(|(rl, _)| rl)
        })
    })
}
