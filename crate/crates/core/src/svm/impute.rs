use serde::{Deserialize, Serialize};

use super::MODULE;
use crate::error::{Error, Result};
use crate::pattern::ResidualSeries;

/// Windows with fewer valid entries than this are not fed to a model.
pub const MIN_VALID_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputVector {
    pub values: Vec<f64>,
    pub valid_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome")]
pub enum Imputed {
    Ready(InputVector),
    Rejected { valid_fraction: f64 },
}

impl Imputed {
    pub fn ready(self) -> Option<InputVector> {
        match self {
            Imputed::Ready(v) => Some(v),
            Imputed::Rejected { .. } => None,
        }
    }
}

/// Fills gaps in a window: leading gaps take the first valid value,
/// interior gaps are interpolated linearly, trailing gaps carry the last
/// valid value forward.
pub fn impute_window(window: &[Option<f64>]) -> Imputed {
    let valid: Vec<usize> = (0..window.len()).filter(|&i| window[i].is_some()).collect();
    let valid_fraction = if window.is_empty() { 0.0 } else { valid.len() as f64 / window.len() as f64 };
    if valid.is_empty() || valid_fraction < MIN_VALID_FRACTION {
        return Imputed::Rejected { valid_fraction };
    }
    let mut values = vec![0.0; window.len()];
    let first = valid[0];
    let last = valid[valid.len() - 1];
    let at = |i: usize| window[i].unwrap_or(f64::NAN);
    values[..first].fill(at(first));
    for pair in valid.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (va, vb) = (at(a), at(b));
        values[a] = va;
        for (i, v) in values.iter_mut().enumerate().take(b).skip(a + 1) {
            let w = (i - a) as f64 / (b - a) as f64;
            *v = va + w * (vb - va);
        }
    }
    values[last..].fill(at(last));
    Imputed::Ready(InputVector { values, valid_fraction })
}

/// The window `τ−m+1 ..= τ` of a residual series, imputed.
pub fn impute_input_vector(residuals: &ResidualSeries, tau: usize, m: usize) -> Result<Imputed> {
    if m == 0 {
        return Err(Error::config(MODULE, "input window m must be positive"));
    }
    if tau + 1 < m || tau >= residuals.values.len() {
        return Err(Error::data(
            MODULE,
            format!(
                "window of length {m} ending at {tau} does not fit in series {} of length {}",
                residuals.process_id,
                residuals.values.len()
            ),
        ));
    }
    Ok(impute_window(&residuals.values[tau + 1 - m..=tau]))
}
