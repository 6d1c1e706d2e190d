//! Deterministic shift shapes superposed on residuals.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftForm {
    Jump,
    Trend,
    Oscillation,
}

impl ShiftForm {
    pub const ALL: [ShiftForm; 3] = [ShiftForm::Jump, ShiftForm::Trend, ShiftForm::Oscillation];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ShiftForm> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ShiftForm::Jump => "jump",
            ShiftForm::Trend => "trend",
            ShiftForm::Oscillation => "oscillation",
        }
    }
}

impl std::fmt::Display for ShiftForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ShiftForm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown shift form {s:?}"))
    }
}

/// Trend shape constants: `(δ / TREND_SCALE) · t^TREND_POWER`.
pub const TREND_SCALE: f64 = 150.0;
pub const TREND_POWER: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub form: ShiftForm,
    pub delta: f64,
    pub onset: usize,
    /// Oscillation frequency η in `sin(η π t)`.
    pub eta_freq: f64,
}

impl ShiftSpec {
    pub fn jump(delta: f64, onset: usize) -> Self {
        ShiftSpec { form: ShiftForm::Jump, delta, onset, eta_freq: 0.0 }
    }

    /// Offset added to the residual at time `t`. Trends grow from the
    /// onset; oscillations use the absolute time index for their phase.
    pub fn value_at(&self, t: usize) -> f64 {
        if t < self.onset {
            return 0.0;
        }
        match self.form {
            ShiftForm::Jump => self.delta,
            ShiftForm::Trend => self.delta / TREND_SCALE * ((t - self.onset) as f64).powf(TREND_POWER),
            ShiftForm::Oscillation => (self.eta_freq * std::f64::consts::PI * t as f64).sin() * self.delta,
        }
    }
}
