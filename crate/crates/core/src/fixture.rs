//! Synthetic panels for tests and demonstrations.
//!
//! Every process follows `X_i(t) = c(t) · (1 + s · (σ_i ε_i(t) + f_i(t)))`
//! in the multiplicative mode, or `c(t) + s · (σ_i ε_i(t) + f_i(t))` in the
//! additive one. Here `c` is a seasonal common signal, `ε` is unit-variance
//! AR(1) noise, `σ_i` separates stable from unstable processes and `f_i`
//! holds planted shifts in units of the stable noise.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{ModelMode, Panel, Series};
use crate::rng::{derive_seed, replication_rng};
use crate::shift::{ShiftForm, ShiftSpec};

const MODULE: &str = "cli-app";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedShift {
    pub process: String,
    pub form: ShiftForm,
    pub delta: f64,
    pub onset: usize,
    #[serde(default)]
    pub eta_freq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixtureSpec {
    pub n_stable: usize,
    pub n_unstable: usize,
    pub n_times: usize,
    pub sigma_stable: f64,
    pub sigma_unstable: f64,
    /// Random jumps planted in each unstable process.
    pub unstable_jumps: usize,
    /// Jump size range for unstable processes, in stable-noise units.
    pub unstable_jump_size: (f64, f64),
    pub ar_phi: f64,
    pub mode: ModelMode,
    pub base_level: f64,
    /// Relative size `s` of process deviations.
    pub noise_scale: f64,
    pub signal_amplitude: f64,
    pub signal_period: f64,
    pub missing_fraction: f64,
    pub planted: Vec<PlantedShift>,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            n_stable: 15,
            n_unstable: 6,
            n_times: 2000,
            sigma_stable: 1.0,
            sigma_unstable: 5.0,
            unstable_jumps: 3,
            unstable_jump_size: (3.0, 8.0),
            ar_phi: 0.0,
            mode: ModelMode::Multiplicative,
            base_level: 100.0,
            noise_scale: 0.02,
            signal_amplitude: 0.3,
            signal_period: 365.0,
            missing_fraction: 0.0,
            planted: Vec::new(),
            seed: 0,
        }
    }
}

pub fn stable_id(i: usize) -> String {
    format!("stable_{i:02}")
}

pub fn unstable_id(i: usize) -> String {
    format!("unstable_{i:02}")
}

impl FixtureSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::config(MODULE, format!("invalid fixture spec: {}", e.message())))
    }

    pub fn ids(&self) -> Vec<String> {
        (0..self.n_stable).map(stable_id).chain((0..self.n_unstable).map(unstable_id)).collect()
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(MODULE, m.to_string()));
        if self.n_stable + self.n_unstable < 2 || self.n_times < 2 {
            return bad("fixture needs at least 2 processes and 2 time points");
        }
        if !(self.ar_phi.abs() < 1.0) {
            return bad("ar_phi must lie in (-1, 1)");
        }
        if !(0.0..1.0).contains(&self.missing_fraction) {
            return bad("missing_fraction must lie in [0, 1)");
        }
        if self.mode == ModelMode::Multiplicative && !(self.base_level > 0.0 && self.signal_amplitude.abs() < 1.0) {
            return bad("multiplicative fixtures need base_level > 0 and |signal_amplitude| < 1");
        }
        let ids = self.ids();
        if let Some(p) = self.planted.iter().find(|p| !ids.contains(&p.process)) {
            return Err(Error::config(MODULE, format!("planted shift targets unknown process `{}`", p.process)));
        }
        Ok(())
    }

    /// Deviation `σ_i ε_i(t) + f_i(t)` of every process, before scaling.
    pub fn deviations(&self) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let ids = self.ids();
        let mut out = Vec::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            let mut rng = replication_rng(self.seed, i as u64);
            let stable = i < self.n_stable;
            let sigma = if stable { self.sigma_stable } else { self.sigma_unstable };
            let innov_sd = (1.0 - self.ar_phi * self.ar_phi).sqrt();
            let mut e: f64 = StandardNormal.sample(&mut rng);
            let mut dev = Vec::with_capacity(self.n_times);
            for _ in 0..self.n_times {
                dev.push(sigma * e);
                let z: f64 = StandardNormal.sample(&mut rng);
                e = self.ar_phi * e + innov_sd * z;
            }
            if !stable {
                for _ in 0..self.unstable_jumps {
                    let onset = rng.random_range(0..self.n_times);
                    let (lo, hi) = self.unstable_jump_size;
                    let size = rng.random_range(lo..=hi) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    dev[onset..].iter_mut().for_each(|v| *v += size);
                }
            }
            for p in self.planted.iter().filter(|p| &p.process == id) {
                let spec = ShiftSpec { form: p.form, delta: p.delta, onset: p.onset, eta_freq: p.eta_freq.unwrap_or(0.04) };
                for (t, v) in dev.iter_mut().enumerate() {
                    *v += spec.value_at(t) * self.sigma_stable;
                }
            }
            out.push(dev);
        }
        Ok(out)
    }

    pub fn common_signal(&self) -> Vec<f64> {
        (0..self.n_times)
            .map(|t| {
                let season = self.signal_amplitude * (2.0 * std::f64::consts::PI * t as f64 / self.signal_period).sin();
                match self.mode {
                    ModelMode::Multiplicative => self.base_level * (1.0 + season),
                    ModelMode::Additive => self.base_level + self.base_level * season,
                }
            })
            .collect()
    }

    pub fn generate(&self) -> Result<Panel> {
        let dev = self.deviations()?;
        let c = self.common_signal();
        let mut miss = replication_rng(derive_seed(self.seed, "fixture-missing"), 0);
        let rows: Vec<Series> = dev
            .iter()
            .map(|d| {
                d.iter()
                    .zip(&c)
                    .map(|(d, c)| {
                        let x = match self.mode {
                            ModelMode::Multiplicative => c * (1.0 + self.noise_scale * d),
                            ModelMode::Additive => c + self.base_level * self.noise_scale * d,
                        };
                        (self.missing_fraction == 0.0 || !miss.random_bool(self.missing_fraction)).then_some(x)
                    })
                    .collect()
            })
            .collect();
        let times = (0..self.n_times).map(|t| t as f64).collect();
        Panel::new(self.ids(), times, rows)
    }
}
