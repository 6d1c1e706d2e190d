//! Flat key-value pipeline configuration.
//!
//! A config file is TOML with top-level keys only. `preset = "sunspot"`
//! starts from a named preset; every other key overrides one field. Unknown
//! keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cusum::GapPolicy;
use crate::design::{CalibrationSettings, LimitSymmetry, ShiftSizeSettings};
use crate::error::{Error, Result};
use crate::panel::{DecompositionSettings, ModelMode};
use crate::pattern::PatternEstimator;
use crate::selection::ClusterMethod;
use crate::svm::{Kernel, SolverConfig, SvmConfig};

const MODULE: &str = "cli-app";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Auto {
    Auto,
}

/// Either a fixed value or `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AutoOr<T> {
    Auto(Auto),
    Value(T),
}

impl<T: Copy> AutoOr<T> {
    pub fn value(self) -> Option<T> {
        match self {
            AutoOr::Auto(_) => None,
            AutoOr::Value(v) => Some(v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    Knn,
    Boxcar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,

    pub mode: ModelMode,
    pub smoothing_window: usize,
    pub level_window: usize,
    pub min_count: usize,
    pub min_valid_fraction: f64,

    pub pattern_estimator: PatternKind,
    pub pattern_k: usize,
    pub pattern_delta: usize,

    pub cluster_method: ClusterMethod,
    pub robust_score: bool,
    pub min_obs: usize,
    /// Apply the adaptive Shewhart filter to P1 before pattern estimation
    /// and chart calibration.
    pub shewhart_filter: bool,
    pub iqr_multiple: f64,

    pub delta_min: AutoOr<f64>,
    pub delta0: f64,
    pub shift_quantile: f64,
    pub rho: f64,
    pub max_outer_iterations: usize,

    pub k: AutoOr<f64>,
    pub k_grid: Vec<f64>,
    pub arl0_target: f64,
    pub calibration_tolerance: f64,
    pub replications: usize,
    /// Censoring horizon L as a multiple of the ARL₀ target.
    pub censor_multiple: f64,
    pub block_length: usize,
    /// Longest gap G the chart carries its statistics across; 0 resets at every gap.
    pub max_gap: usize,
    pub asymmetric_limits: bool,

    pub m: AutoOr<usize>,
    pub window_quantile: f64,
    pub lambda: f64,
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub half_normal_scale: f64,
    pub n_instances: usize,
    pub train_fraction: f64,
    pub svm_tolerance: f64,
    pub svm_max_iterations: usize,
    pub cache_mb: usize,

    pub restart_on_alert: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            preset: None,
            mode: ModelMode::Multiplicative,
            smoothing_window: 1,
            level_window: 240,
            min_count: crate::panel::DEFAULT_MIN_COUNT,
            min_valid_fraction: crate::panel::DEFAULT_MIN_VALID_FRACTION,
            pattern_estimator: PatternKind::Knn,
            pattern_k: 200,
            pattern_delta: 27,
            cluster_method: ClusterMethod::KMeans,
            robust_score: true,
            min_obs: crate::selection::DEFAULT_MIN_OBS,
            shewhart_filter: true,
            iqr_multiple: 1.0,
            delta_min: AutoOr::Value(1.0),
            delta0: 1.0,
            shift_quantile: 0.5,
            rho: 0.05,
            max_outer_iterations: 10,
            k: AutoOr::Value(0.5),
            k_grid: vec![0.25, 0.5, 0.75, 1.0],
            arl0_target: 200.0,
            calibration_tolerance: 0.05,
            replications: 2000,
            censor_multiple: 10.0,
            block_length: 50,
            max_gap: 0,
            asymmetric_limits: false,
            m: AutoOr::Value(25),
            window_quantile: 0.7,
            lambda: 10.0,
            epsilon: 0.001,
            gamma: None,
            half_normal_scale: 2.0,
            n_instances: 5000,
            train_fraction: 0.8,
            svm_tolerance: 1e-3,
            svm_max_iterations: 10_000_000,
            cache_mb: 1024,
            restart_on_alert: true,
            seed: 0,
        }
    }
}

pub const PRESETS: [&str; 1] = ["sunspot"];

impl PipelineConfig {
    /// Named preset; `sunspot` pins the values used for the daily sunspot
    /// station panel.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "sunspot" => Ok(PipelineConfig {
                preset: Some(name.to_string()),
                mode: ModelMode::Multiplicative,
                smoothing_window: 27,
                level_window: 240,
                pattern_estimator: PatternKind::Knn,
                pattern_k: 200,
                cluster_method: ClusterMethod::KMeans,
                iqr_multiple: 1.0,
                delta_min: AutoOr::Value(1.5),
                k: AutoOr::Value(0.75),
                arl0_target: 200.0,
                block_length: 27,
                max_gap: 27,
                m: AutoOr::Value(25),
                lambda: 10.0,
                epsilon: 0.001,
                n_instances: 63_000,
                ..PipelineConfig::default()
            }),
            other => Err(Error::config(MODULE, format!("unknown preset `{other}`; known presets: {PRESETS:?}"))),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut user: toml::Table = text.parse().map_err(|e| Error::config(MODULE, format!("invalid config: {e}")))?;
        let preset = match user.remove("preset") {
            None => None,
            Some(toml::Value::String(s)) => Some(s),
            Some(v) => return Err(Error::config(MODULE, format!("preset must be a string, got {v}"))),
        };
        let base = match &preset {
            Some(name) => Self::preset(name)?,
            None => Self::default(),
        };
        let mut table = toml::Table::try_from(&base).map_err(|e| Error::config(MODULE, e.to_string()))?;
        table.extend(user);
        let cfg: PipelineConfig = table.try_into().map_err(|e: toml::de::Error| Error::config(MODULE, e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(MODULE, e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(MODULE, m));
        if self.smoothing_window == 0 || self.level_window == 0 {
            return bad("smoothing_window and level_window must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.min_valid_fraction) {
            return bad(format!("min_valid_fraction must lie in [0, 1], got {}", self.min_valid_fraction));
        }
        if self.pattern_estimator == PatternKind::Knn && self.pattern_k < 2 {
            return bad("pattern_k must be >= 2".into());
        }
        if self.pattern_estimator == PatternKind::Boxcar && self.pattern_delta == 0 {
            return bad("pattern_delta must be >= 1".into());
        }
        if !(self.iqr_multiple >= 0.0) {
            return bad(format!("iqr_multiple must be >= 0, got {}", self.iqr_multiple));
        }
        if let Some(d) = self.delta_min.value() {
            if !(d > 0.0) {
                return bad(format!("delta_min must be > 0 or \"auto\", got {d}"));
            }
        }
        if let Some(k) = self.k.value() {
            if !(k > 0.0) {
                return bad(format!("k must be > 0 or \"auto\", got {k}"));
            }
        } else if self.k_grid.is_empty() || self.k_grid.iter().any(|k| !(*k > 0.0)) {
            return bad("k = \"auto\" needs a nonempty k_grid of positive values".into());
        }
        if !(self.delta0 > 0.0) || !(self.rho >= 0.0) || !(0.0..=1.0).contains(&self.shift_quantile) {
            return bad("delta0 must be > 0, rho >= 0 and shift_quantile in [0, 1]".into());
        }
        if !(self.arl0_target >= 1.0) {
            return bad(format!("arl0_target must be >= 1, got {}", self.arl0_target));
        }
        if !(self.calibration_tolerance > 0.0) || self.replications == 0 || !(self.censor_multiple >= 1.0) {
            return bad("calibration_tolerance > 0, replications >= 1 and censor_multiple >= 1 are required".into());
        }
        if self.block_length == 0 {
            return bad("block_length must be >= 1".into());
        }
        if let Some(m) = self.m.value() {
            if m < 2 {
                return bad(format!("m must be >= 2 or \"auto\", got {m}"));
            }
        }
        if !(self.window_quantile > 0.0 && self.window_quantile <= 1.0) {
            return bad(format!("window_quantile must lie in (0, 1], got {}", self.window_quantile));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        if self.n_instances < 10 {
            return bad(format!("n_instances must be >= 10, got {}", self.n_instances));
        }
        if !(self.half_normal_scale >= 0.0) {
            return bad("half_normal_scale must be >= 0".into());
        }
        self.svm_config(25).validate()
    }

    pub fn decomposition(&self) -> DecompositionSettings {
        DecompositionSettings {
            mode: self.mode,
            smoothing_window: self.smoothing_window,
            level_window: self.level_window,
            min_count: self.min_count,
            min_valid_fraction: self.min_valid_fraction,
        }
    }

    pub fn pattern(&self) -> PatternEstimator {
        match self.pattern_estimator {
            PatternKind::Knn => PatternEstimator::Knn { k: self.pattern_k },
            PatternKind::Boxcar => PatternEstimator::Boxcar { delta: self.pattern_delta },
        }
    }

    pub fn gap_policy(&self) -> GapPolicy {
        if self.max_gap == 0 { GapPolicy::ResetAlways } else { GapPolicy::PropagateUpTo(self.max_gap) }
    }

    pub fn calibration(&self) -> CalibrationSettings {
        CalibrationSettings {
            arl0_target: self.arl0_target,
            tolerance_fraction: self.calibration_tolerance,
            replications: self.replications,
            censor_multiple: self.censor_multiple,
            symmetry: if self.asymmetric_limits { LimitSymmetry::Asymmetric } else { LimitSymmetry::Symmetric },
            seed: self.seed,
            ..CalibrationSettings::default()
        }
    }

    pub fn shift_size(&self) -> ShiftSizeSettings {
        ShiftSizeSettings {
            delta0: self.delta0,
            rho: self.rho,
            quantile: self.shift_quantile,
            max_outer_iterations: self.max_outer_iterations,
            calibration: self.calibration(),
        }
    }

    /// SVM settings for window length `m`; `gamma` defaults to `1/m`.
    pub fn svm_config(&self, m: usize) -> SvmConfig {
        SvmConfig {
            lambda: self.lambda,
            epsilon: self.epsilon,
            kernel: Kernel::Rbf { gamma: self.gamma.unwrap_or(1.0 / m.max(1) as f64) },
            m,
            solver: SolverConfig { tolerance: self.svm_tolerance, max_iterations: self.svm_max_iterations, cache_mb: self.cache_mb },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sunspot_preset_pins_values() {
        let c = PipelineConfig::from_toml_str("preset = \"sunspot\"\n").unwrap();
        assert_eq!(c.mode, ModelMode::Multiplicative);
        assert_eq!((c.smoothing_window, c.level_window, c.pattern_k), (27, 240, 200));
        assert_eq!(c.cluster_method, ClusterMethod::KMeans);
        assert_eq!(c.iqr_multiple, 1.0);
        assert_eq!(c.delta_min, AutoOr::Value(1.5));
        assert_eq!(c.k, AutoOr::Value(0.75));
        assert_eq!((c.arl0_target, c.block_length, c.max_gap), (200.0, 27, 27));
        assert_eq!(c.m, AutoOr::Value(25));
        assert_eq!((c.lambda, c.epsilon), (10.0, 0.001));
        assert_eq!(c.gap_policy(), GapPolicy::PropagateUpTo(27));
        assert_eq!(c.preset.as_deref(), Some("sunspot"));
    }

    #[test]
    fn keys_override_preset() {
        let c = PipelineConfig::from_toml_str("preset = \"sunspot\"\nreplications = 300\ndelta_min = \"auto\"\nk = 0.6\n").unwrap();
        assert_eq!(c.replications, 300);
        assert_eq!(c.delta_min, AutoOr::Auto(Auto::Auto));
        assert_eq!(c.k.value(), Some(0.6));
        assert_eq!(c.block_length, 27);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        let e = PipelineConfig::from_toml_str("blocklength = 3\n").unwrap_err();
        assert!(e.to_string().contains("blocklength"), "{e}");
        assert_eq!(e.exit_code(), 2);
        assert!(PipelineConfig::from_toml_str("preset = \"moon\"\n").is_err());
        assert!(PipelineConfig::from_toml_str("k = -1.0\n").is_err());
        assert!(PipelineConfig::from_toml_str("m = \"sometimes\"\n").is_err());
        assert!(PipelineConfig::from_toml_str("[table]\nx = 1\n").is_err());
    }

    #[test]
    fn roundtrip_through_toml() {
        let c = PipelineConfig::preset("sunspot").unwrap();
        let text = c.to_toml_string().unwrap();
        assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), c);
        let d = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml_str(&d.to_toml_string().unwrap()).unwrap(), d);
    }
}
