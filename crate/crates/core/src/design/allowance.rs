//! Grid search for the allowance that detects a given jump fastest.

use log::warn;
use serde::{Deserialize, Serialize};

use super::arl::{estimate_arl, Limits};
use super::bootstrap::BootstrapSource;
use super::calibrate::{calibrate_control_limit, CalibrationSettings, DesignResult};
use crate::cusum::GapPolicy;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::shift::ShiftSpec;

const MODULE: &str = "bootstrap-design";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllowanceCandidate {
    pub k: f64,
    pub h: f64,
    pub arl1: f64,
    pub arl1_std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllowanceResult {
    pub design: DesignResult,
    pub arl1: f64,
    pub candidates: Vec<AllowanceCandidate>,
    pub warnings: Vec<String>,
}

pub fn optimize_allowance(
    ic: &BootstrapSource,
    delta: f64,
    k_grid: &[f64],
    settings: &CalibrationSettings,
    gap_policy: GapPolicy,
) -> Result<AllowanceResult> {
    if k_grid.is_empty() {
        return Err(Error::config(MODULE, "allowance grid is empty"));
    }
    if let Some(k) = k_grid.iter().find(|k| !(**k > 0.0)) {
        return Err(Error::config(MODULE, format!("allowance grid values must be > 0, got {k}")));
    }
    let shift = ShiftSpec::jump(delta, 0);
    let mut mc = settings.monte_carlo();
    mc.seed = derive_seed(settings.seed, "allowance-arl1");
    let mut best: Option<(AllowanceCandidate, DesignResult)> = None;
    let mut candidates = Vec::new();
    let mut warnings = Vec::new();
    for &k in k_grid {
        let design = match calibrate_control_limit(ic, k, settings, gap_policy) {
            Ok(d) => d,
            Err(e) => {
                let msg = format!("allowance k = {k} skipped: {e}");
                warn!("{msg}");
                warnings.push(msg);
                continue;
            }
        };
        let limits = Limits { k, h_plus: design.chart.h_plus, h_minus: design.chart.h_minus };
        let est = estimate_arl(ic, &limits, Some(&shift), &mc)?;
        let cand = AllowanceCandidate { k, h: limits.h_plus, arl1: est.arl, arl1_std_error: est.std_error() };
        let better = match &best {
            None => true,
            Some((b, _)) => {
                cand.arl1 < b.arl1
                    || (cand.arl1 == b.arl1 && (k - delta / 2.0).abs() < (b.k - delta / 2.0).abs())
            }
        };
        candidates.push(cand.clone());
        if better {
            best = Some((cand, design));
        }
    }
    let (cand, design) = best.ok_or_else(|| {
        Error::non_convergence(MODULE, format!("control-limit calibration failed for every allowance in {k_grid:?}"))
    })?;
    Ok(AllowanceResult { design, arl1: cand.arl1, candidates, warnings })
}
