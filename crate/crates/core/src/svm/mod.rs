//! Support-vector models that characterize a detected shift.
//!
//! An ε-insensitive regressor predicts the shift magnitude and a one-vs-one
//! classifier predicts its form. Both read the `m` residuals that end at
//! the alert. Both are solved in the dual with the pairwise solver in
//! [`smo`], using box bound `C = λ`: dividing the primal
//! `½‖w‖² + λ·(1/M)·Σ L_ε` by `1/M` leaves the same minimizer with `λ`
//! absorbed into the box, so λ is passed straight through as `C`.

mod impute;
mod kernel;
mod metrics;
mod model;
pub(crate) mod smo;
mod synth;
mod window;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use impute::{impute_input_vector, impute_window, InputVector, Imputed, MIN_VALID_FRACTION};
pub use kernel::Kernel;
pub use metrics::{evaluate_classifier, evaluate_regressor, ClassificationMetrics, RegressionMetrics};
pub use model::{Characterization, Characterizer, Machine, ModelKind, TrainedModel, TrainingMetadata, MODEL_FORMAT_VERSION};
pub use smo::{solve_dual, DualProblem, Solution, SolverSettings};
pub use synth::{split_train_test, synthesize_training_set, LabeledInstance, SynthesisSettings, TrainingSet};
pub use window::{select_window_m, select_window_m_for_chart, WindowSelection};

use crate::error::{Error, Result};
use kernel::KernelRows;
use smo::Problem;

const MODULE: &str = "svm-engine";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Kernel-row cache budget in MiB, shared by concurrently trained machines.
    pub cache_mb: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { tolerance: 1e-3, max_iterations: 10_000_000, cache_mb: 1024 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epsilon: f64,
    pub kernel: Kernel,
    pub m: usize,
    pub solver: SolverConfig,
}

impl SvmConfig {
    /// λ = 10, ε = 0.001 and an RBF kernel with `gamma = 1/m`.
    pub fn for_window(m: usize) -> Self {
        SvmConfig {
            lambda: 10.0,
            epsilon: 0.001,
            kernel: Kernel::Rbf { gamma: 1.0 / m.max(1) as f64 },
            m,
            solver: SolverConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::config(MODULE, format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::config(MODULE, format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if let Kernel::Rbf { gamma } = self.kernel {
            if !(gamma > 0.0 && gamma.is_finite()) {
                return Err(Error::config(MODULE, format!("RBF gamma must be > 0, got {gamma}")));
            }
        }
        if self.m < 2 {
            return Err(Error::config(MODULE, format!("input window m must be >= 2, got {}", self.m)));
        }
        if !(self.solver.tolerance > 0.0) || self.solver.max_iterations == 0 {
            return Err(Error::config(MODULE, "solver tolerance and max_iterations must be positive"));
        }
        Ok(())
    }

    fn settings(&self) -> SolverSettings {
        SolverSettings { tolerance: self.solver.tolerance, max_iterations: self.solver.max_iterations }
    }
}

fn flatten(x: &[Vec<f64>], m: usize) -> Result<Vec<f64>> {
    if let Some((i, v)) = x.iter().enumerate().find(|(_, v)| v.len() != m) {
        return Err(Error::data(MODULE, format!("instance {i} has length {}, expected m = {m}", v.len())));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::data(MODULE, "training inputs contain non-finite values"));
    }
    Ok(x.concat())
}

fn machine_from(data: &[f64], m: usize, coef: impl Iterator<Item = (usize, f64)>, rho: f64, sol: &Solution) -> Machine {
    let (mut support_vectors, mut coefficients) = (Vec::new(), Vec::new());
    for (i, c) in coef {
        if c != 0.0 {
            support_vectors.push(data[i * m..(i + 1) * m].to_vec());
            coefficients.push(c);
        }
    }
    Machine {
        support_vectors,
        coefficients,
        bias: -rho,
        classes: None,
        objective: sol.objective,
        iterations: sol.iterations,
        kkt_gap: sol.kkt_gap,
        converged: sol.converged,
    }
}

/// Solves the ε-insensitive regression dual.
pub fn train_svr(x: &[Vec<f64>], y: &[f64], config: &SvmConfig) -> Result<TrainedModel> {
    config.validate()?;
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::data(MODULE, format!("regression needs >= 2 labelled instances, got {n} inputs and {} labels", y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::data(MODULE, "regression labels contain non-finite values"));
    }
    let data = flatten(x, config.m)?;
    let (machine, sol) = solve_svr(&data, y, config, config.solver.cache_mb << 20);
    if !sol.converged {
        warn!("regression solver hit max_iterations; final KKT violation {:.3e}", sol.kkt_gap);
    }
    Ok(TrainedModel::new(ModelKind::Regression, config, vec![machine], n))
}

fn solve_svr(data: &[f64], y: &[f64], config: &SvmConfig, cache_bytes: usize) -> (Machine, Solution) {
    let n = y.len();
    let mut rows = KernelRows::new(config.kernel, data, config.m, cache_bytes);
    let eps = config.epsilon;
    let p = y.iter().map(|v| eps - v).chain(y.iter().map(|v| eps + v)).collect();
    let sign = std::iter::repeat_n(1, n).chain(std::iter::repeat_n(-1, n)).collect();
    let point = (0..2 * n).map(|i| i % n).collect();
    let prob = Problem { rows: &mut rows, p, y: sign, c: config.lambda, point };
    let sol = smo::solve(prob, config.settings());
    let coef = (0..n).map(|i| (i, sol.alpha[i] - sol.alpha[i + n]));
    let machine = machine_from(data, config.m, coef, sol.rho, &sol);
    (machine, sol)
}

/// Solves one binary soft-margin machine with labels `±1`.
fn solve_binary(data: &[f64], y: &[i8], config: &SvmConfig, cache_bytes: usize) -> (Machine, Solution) {
    let n = y.len();
    let mut rows = KernelRows::new(config.kernel, data, config.m, cache_bytes);
    let prob = Problem { rows: &mut rows, p: vec![-1.0; n], y: y.to_vec(), c: config.lambda, point: (0..n).collect() };
    let sol = smo::solve(prob, config.settings());
    let coef = (0..n).map(|i| (i, f64::from(y[i]) * sol.alpha[i]));
    let machine = machine_from(data, config.m, coef, sol.rho, &sol);
    (machine, sol)
}

/// One-vs-one multi-class classifier over labels `0..n_classes`.
pub fn train_svc(x: &[Vec<f64>], labels: &[usize], n_classes: usize, config: &SvmConfig) -> Result<TrainedModel> {
    config.validate()?;
    if labels.len() != x.len() {
        return Err(Error::data(MODULE, format!("{} inputs but {} labels", x.len(), labels.len())));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::data(MODULE, format!("label {l} outside 0..{n_classes}")));
    }
    let present: Vec<usize> = (0..n_classes).filter(|c| labels.contains(c)).collect();
    if present.len() < 2 {
        return Err(Error::data(MODULE, format!("classification needs >= 2 classes present, found {}", present.len())));
    }
    if present.len() < n_classes {
        warn!("only {} of {n_classes} classes present in training data", present.len());
    }
    let m = config.m;
    flatten(x, m)?;
    let pairs: Vec<(usize, usize)> =
        present.iter().enumerate().flat_map(|(a, &ca)| present[a + 1..].iter().map(move |&cb| (ca, cb))).collect();
    let share = (config.solver.cache_mb << 20) / pairs.len().min(rayon::current_num_threads()).max(1);
    let machines: Vec<Machine> = pairs
        .par_iter()
        .map(|&(ca, cb)| {
            let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == ca || labels[i] == cb).collect();
            let data: Vec<f64> = idx.iter().flat_map(|&i| x[i].iter().copied()).collect();
            let y: Vec<i8> = idx.iter().map(|&i| if labels[i] == ca { 1 } else { -1 }).collect();
            let (mut machine, sol) = solve_binary(&data, &y, config, share);
            if !sol.converged {
                warn!("classifier {ca} vs {cb} hit max_iterations; final KKT violation {:.3e}", sol.kkt_gap);
            }
            machine.classes = Some((ca, cb));
            machine
        })
        .collect();
    Ok(TrainedModel::new(ModelKind::Classification { n_classes }, config, machines, x.len()))
}

#[cfg(test)]
mod tests;
