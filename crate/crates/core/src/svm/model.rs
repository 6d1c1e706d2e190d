use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::impute::InputVector;
use super::kernel::Kernel;
use super::{SvmConfig, MODULE};
use crate::error::{Error, Result};
use crate::shift::ShiftForm;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A single kernel expansion `f(x) = Σ c_i K(s_i, x) + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Machine {
    pub support_vectors: Vec<Vec<f64>>,
    pub coefficients: Vec<f64>,
    pub bias: f64,
    /// `(positive, negative)` class pair of a one-vs-one machine.
    pub classes: Option<(usize, usize)>,
    pub objective: f64,
    pub iterations: usize,
    pub kkt_gap: f64,
    pub converged: bool,
}

impl Machine {
    pub fn decision(&self, kernel: &Kernel, x: &[f64]) -> f64 {
        let mut f = 0.0;
        for (sv, c) in self.support_vectors.iter().zip(&self.coefficients) {
            f += c * kernel.eval(sv, x);
        }
        f + self.bias
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ModelKind {
    Regression,
    Classification { n_classes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub n_train: usize,
    pub n_test: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub kind: ModelKind,
    pub kernel: Kernel,
    pub m: usize,
    pub lambda: f64,
    pub epsilon: f64,
    pub machines: Vec<Machine>,
    pub metadata: TrainingMetadata,
}

impl TrainedModel {
    pub(crate) fn new(kind: ModelKind, config: &SvmConfig, machines: Vec<Machine>, n_train: usize) -> Self {
        TrainedModel {
            format_version: MODEL_FORMAT_VERSION,
            kind,
            kernel: config.kernel,
            m: config.m,
            lambda: config.lambda,
            epsilon: config.epsilon,
            machines,
            metadata: TrainingMetadata { n_train, n_test: 0, seed: None },
        }
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.m {
            return Err(Error::data(MODULE, format!("input vector has length {}, model expects m = {}", x.len(), self.m)));
        }
        Ok(())
    }

    pub fn n_support_vectors(&self) -> usize {
        self.machines.iter().map(|m| m.support_vectors.len()).sum()
    }

    /// Regression output; errors on a classifier.
    pub fn predict_value(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        match self.kind {
            ModelKind::Regression => Ok(self.machines[0].decision(&self.kernel, x)),
            ModelKind::Classification { .. } => Err(Error::config(MODULE, "predict_value called on a classifier")),
        }
    }

    /// One-vs-one vote. Ties go to the class with the largest summed margin,
    /// then to the lowest index.
    pub fn predict_class(&self, x: &[f64]) -> Result<usize> {
        self.check_len(x)?;
        let ModelKind::Classification { n_classes } = self.kind else {
            return Err(Error::config(MODULE, "predict_class called on a regressor"));
        };
        let mut votes = vec![0usize; n_classes];
        let mut margin = vec![0.0; n_classes];
        for machine in &self.machines {
            let Some((a, b)) = machine.classes else { continue };
            let d = machine.decision(&self.kernel, x);
            if d > 0.0 {
                votes[a] += 1;
            } else {
                votes[b] += 1;
            }
            margin[a] += d;
            margin[b] -= d;
        }
        let mut best = 0;
        for c in 1..n_classes {
            if votes[c] > votes[best] || (votes[c] == votes[best] && margin[c] > margin[best]) {
                best = c;
            }
        }
        Ok(best)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::json("svm model", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Version {
            format_version: u32,
        }
        let v: Version = serde_json::from_str(text).map_err(|e| Error::json("svm model", e))?;
        if v.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::data(
                MODULE,
                format!("model format version {} is not supported (expected {MODEL_FORMAT_VERSION})", v.format_version),
            ));
        }
        serde_json::from_str(text).map_err(|e| Error::json("svm model", e))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_json()?).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_json(&text)
    }
}

/// Per-alert predictions from a regressor and classifier pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Characterization {
    pub delta: f64,
    /// `|δ̂| < δ_min`; the raw value is still reported.
    pub below_floor: bool,
    pub form: ShiftForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Characterizer {
    pub regressor: TrainedModel,
    pub classifier: TrainedModel,
    pub delta_min: f64,
}

impl Characterizer {
    pub fn new(regressor: TrainedModel, classifier: TrainedModel, delta_min: f64) -> Result<Self> {
        if regressor.kind != ModelKind::Regression || !matches!(classifier.kind, ModelKind::Classification { .. }) {
            return Err(Error::config(MODULE, "characterizer needs a regressor and a classifier"));
        }
        if regressor.m != classifier.m {
            return Err(Error::config(MODULE, format!("window lengths differ: {} vs {}", regressor.m, classifier.m)));
        }
        Ok(Characterizer { regressor, classifier, delta_min })
    }

    pub fn m(&self) -> usize {
        self.regressor.m
    }

    pub fn characterize(&self, v: &InputVector) -> Result<Characterization> {
        let delta = self.regressor.predict_value(&v.values)?;
        let class = self.classifier.predict_class(&v.values)?;
        let form = ShiftForm::from_index(class)
            .ok_or_else(|| Error::data(MODULE, format!("classifier produced unknown class {class}")))?;
        Ok(Characterization { delta, below_floor: delta.abs() < self.delta_min, form })
    }
}
