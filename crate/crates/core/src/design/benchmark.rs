//! Bootstrap versus parametric chart design on serially correlated data.
//!
//! For each generator, a design sample of series is drawn. The bootstrap arm
//! calibrates on moving blocks of the standardized sample and monitors new
//! series directly. The parametric arm fits an ARMA(2,2) model and a
//! Student-t law to its residuals, calibrates on i.i.d. t draws, and
//! monitors the ARMA residuals of new series. Both arms are then scored by
//! the in-control ARL they actually achieve on fresh series.

use std::io::Write;
use std::path::Path;

use log::{info, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::arl::{estimate_arl_with, first_alert, Limits, MonteCarlo};
use super::arma::{fit_arma, fit_student_t, Arma};
use super::bootstrap::{BootstrapSource, ResamplingMode};
use super::calibrate::{calibrate_control_limit, calibrate_iid, CalibrationSettings};
use crate::cusum::GapPolicy;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, replication_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    /// ARMA(3,3) plus a small linear trend.
    Arma33Trend,
    /// ARMA(3,3) plus trend plus short-period seasonality.
    Arma33TrendSeasonal,
    /// ARMA(1,1) with φ = 0.8, θ = 0.2.
    Arma11Positive,
    /// ARMA(1,1) with φ = −0.8, θ = 0.2.
    Arma11Negative,
    /// i.i.d. Gaussian noise.
    WhiteNoise,
}

impl Generator {
    pub const ALL: [Generator; 5] = [
        Generator::Arma33Trend,
        Generator::Arma33TrendSeasonal,
        Generator::Arma11Positive,
        Generator::Arma11Negative,
        Generator::WhiteNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Generator::Arma33Trend => "arma33_trend",
            Generator::Arma33TrendSeasonal => "arma33_trend_seasonal",
            Generator::Arma11Positive => "arma11_phi0.8",
            Generator::Arma11Negative => "arma11_phi-0.8",
            Generator::WhiteNoise => "white_noise",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub generators: Vec<Generator>,
    pub targets: Vec<f64>,
    pub replications: usize,
    pub block_length: usize,
    pub k: f64,
    pub n_series: usize,
    pub series_length: usize,
    pub trend_slope: f64,
    pub season_amplitude: f64,
    /// One period of the seasonal pattern; each series starts at a random phase.
    pub season_profile: Vec<f64>,
    pub arma33_ar: Vec<f64>,
    pub arma33_ma: Vec<f64>,
    /// Residuals discarded at the start of each new series while the ARMA
    /// filter warms up.
    pub warm_up: usize,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            generators: Generator::ALL.to_vec(),
            targets: vec![100.0, 200.0, 400.0],
            replications: 2000,
            block_length: 50,
            k: 0.75,
            n_series: 40,
            series_length: 500,
            trend_slope: 0.001,
            season_amplitude: 1.5,
            season_profile: vec![1.0, -0.6, 0.4, -1.2, 0.8, 0.2, -0.6],
            arma33_ar: vec![0.3, 0.0, 0.0],
            arma33_ma: vec![0.0, 0.0, -0.8],
            warm_up: 50,
            seed: 2024,
        }
    }
}

impl BenchmarkConfig {
    fn model(&self, g: Generator) -> Arma {
        match g {
            Generator::Arma33Trend | Generator::Arma33TrendSeasonal => {
                Arma::new(self.arma33_ar.clone(), self.arma33_ma.clone())
            }
            Generator::Arma11Positive => Arma::new(vec![0.8], vec![0.2]),
            Generator::Arma11Negative => Arma::new(vec![-0.8], vec![0.2]),
            Generator::WhiteNoise => Arma::new(vec![], vec![]),
        }
    }

    /// One series of length `n` from generator `g`. The trend restarts every
    /// `series_length` samples, so a long stream is a run of design-length
    /// records with continuous noise rather than an ever-growing drift.
    pub fn generate<R: Rng + ?Sized>(&self, g: Generator, n: usize, rng: &mut R) -> Vec<f64> {
        let mut x = self.model(g).simulate(n, 1.0, 200, rng);
        let (trend, season) = match g {
            Generator::Arma33Trend => (true, false),
            Generator::Arma33TrendSeasonal => (true, true),
            _ => (false, false),
        };
        let phase = if season { rng.random_range(0..self.season_profile.len()) } else { 0 };
        for (t, v) in x.iter_mut().enumerate() {
            if trend {
                *v += self.trend_slope * (t % self.series_length) as f64;
            }
            if season {
                *v += self.season_amplitude * self.season_profile[(t + phase) % self.season_profile.len()];
            }
        }
        x
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config("bootstrap-design", m.to_string()));
        if self.targets.is_empty() || self.targets.iter().any(|t| !(*t >= 1.0)) {
            return bad("targets must be a nonempty list of values >= 1");
        }
        if self.n_series == 0 || self.series_length < self.block_length || self.block_length == 0 {
            return bad("need at least one design series at least as long as the block length");
        }
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if self.season_profile.is_empty() || self.season_profile.iter().any(|v| !v.is_finite()) {
            return bad("season profile must be a nonempty list of finite values");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mbb,
    Parametric,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mbb => "mbb",
            Method::Parametric => "parametric",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub generator: Generator,
    pub method: Method,
    pub target_arl0: f64,
    /// `None` when the arm could not be designed (e.g. ARMA fit failure).
    pub achieved_arl0: Option<f64>,
    pub h: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn get(&self, g: Generator, m: Method, target: f64) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.generator == g && r.method == m && r.target_arl0 == target)
    }

    pub fn to_csv_writer(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "generator,method,target_arl0,achieved_arl0,h")?;
        let opt = |v: Option<f64>| v.map_or_else(|| "failed".to_string(), |v| v.to_string());
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.generator.name(),
                r.method.name(),
                r.target_arl0,
                opt(r.achieved_arl0),
                opt(r.h)
            )?;
        }
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.to_csv_writer(std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }
}

struct Standardizer {
    location: f64,
    scale: f64,
}

impl Standardizer {
    fn apply(&self, v: f64) -> f64 {
        (v - self.location) / self.scale
    }
}

fn mean_sd(x: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = x.clone().count() as f64;
    let mean = x.clone().sum::<f64>() / n;
    let var = x.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn run_generator(cfg: &BenchmarkConfig, g: Generator, rows: &mut Vec<ComparisonRow>) -> Result<()> {
    let seed = derive_seed(cfg.seed, g.name());
    let mut rng = replication_rng(seed, u64::MAX);
    let design: Vec<Vec<f64>> = (0..cfg.n_series).map(|_| cfg.generate(g, cfg.series_length, &mut rng)).collect();

    // Bootstrap arm.
    let (loc, sd) = mean_sd(design.iter().flatten().copied());
    let st = Standardizer { location: loc, scale: sd };
    let segments: Vec<Vec<f64>> = design.iter().map(|s| s.iter().map(|&v| st.apply(v)).collect()).collect();
    let source = BootstrapSource::from_segments(segments, ResamplingMode::MovingBlock { block_length: cfg.block_length })?;

    // Parametric arm.
    let parametric = fit_arma(&design, 2, 2).and_then(|arma| {
        let resid: Vec<f64> = design.iter().flat_map(|s| arma.residuals(s).split_off(cfg.warm_up.min(s.len()))).collect();
        let t = fit_student_t(&resid)?;
        info!("{}: ARMA(2,2) {:?}, t fit {:?}", g.name(), arma, t);
        Ok((arma, t))
    });
    let parametric = match parametric {
        Ok(fit) => Some(fit),
        Err(e) => {
            warn!("{}: parametric fit failed: {e}", g.name());
            None
        }
    };

    for (ti, &target) in cfg.targets.iter().enumerate() {
        let settings = CalibrationSettings {
            arl0_target: target,
            replications: cfg.replications,
            seed: derive_seed(seed, &format!("calibrate-{ti}")),
            ..Default::default()
        };
        let eval = MonteCarlo {
            replications: cfg.replications,
            censor_at: settings.censor_at(),
            seed: derive_seed(seed, &format!("evaluate-{ti}")),
        };
        let span = eval.censor_at + cfg.warm_up;

        let mbb = calibrate_control_limit(&source, cfg.k, &settings, GapPolicy::ResetAlways).and_then(|d| {
            let limits = Limits { k: cfg.k, h_plus: d.chart.h_plus, h_minus: d.chart.h_minus };
            let est = estimate_arl_with(&eval, |rng| {
                let x = cfg.generate(g, span, rng);
                first_alert(x[cfg.warm_up..].iter().map(|&v| st.apply(v)), &limits).map(|(rl, _)| rl)
            })?;
            Ok((d.chart.h_plus, est.arl))
        });
        if let Err(e) = &mbb {
            warn!("{} target {target}: bootstrap arm failed: {e}", g.name());
        }
        rows.push(ComparisonRow {
            generator: g,
            method: Method::Mbb,
            target_arl0: target,
            achieved_arl0: mbb.as_ref().ok().map(|r| r.1),
            h: mbb.as_ref().ok().map(|r| r.0),
        });

        let par = parametric.as_ref().map(|(arma, t)| -> Result<(f64, f64)> {
            let d = calibrate_iid(cfg.k, &settings, |rng| t.sample_standardized(rng))?;
            let limits = Limits { k: cfg.k, h_plus: d.chart.h_plus, h_minus: d.chart.h_minus };
            let est = estimate_arl_with(&eval, |rng| {
                let x = cfg.generate(g, span, rng);
                let e = arma.residuals(&x);
                first_alert(e[cfg.warm_up..].iter().map(|&v| (v - t.location) / t.scale), &limits).map(|(rl, _)| rl)
            })?;
            Ok((d.chart.h_plus, est.arl))
        });
        let par = match par {
            Some(Ok(r)) => Some(r),
            Some(Err(e)) => {
                warn!("{} target {target}: parametric arm failed: {e}", g.name());
                None
            }
            None => None,
        };
        rows.push(ComparisonRow {
            generator: g,
            method: Method::Parametric,
            target_arl0: target,
            achieved_arl0: par.map(|r| r.1),
            h: par.map(|r| r.0),
        });
    }
    Ok(())
}

pub fn design_benchmark(cfg: &BenchmarkConfig) -> Result<ComparisonTable> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &g in &cfg.generators {
        run_generator(cfg, g, &mut rows)?;
    }
    Ok(ComparisonTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_noise_row_is_near_target_for_both_arms() {
        let cfg = BenchmarkConfig {
            generators: vec![Generator::WhiteNoise],
            targets: vec![100.0],
            replications: 600,
            ..Default::default()
        };
        let table = design_benchmark(&cfg).unwrap();
        for m in [Method::Mbb, Method::Parametric] {
            let a = table.get(Generator::WhiteNoise, m, 100.0).unwrap().achieved_arl0.unwrap();
            assert!((a / 100.0 - 1.0).abs() < 0.25, "{m:?}: {a}");
        }
        let mut out = Vec::new();
        table.to_csv_writer(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("generator,method,target_arl0,achieved_arl0,h\nwhite_noise,mbb,100,"));
    }

    #[test]
    fn seasonality_and_trend_are_added() {
        let cfg = BenchmarkConfig { arma33_ar: vec![], arma33_ma: vec![], ..Default::default() };
        let mut a = replication_rng(1, 0);
        let mut b = replication_rng(1, 0);
        let plain = cfg.generate(Generator::Arma33Trend, 20, &mut a);
        let seasonal = cfg.generate(Generator::Arma33TrendSeasonal, 20, &mut b);
        let diff: Vec<f64> = plain.iter().zip(&seasonal).map(|(p, s)| s - p).collect();
        for t in 0..13 {
            assert!((diff[t] - diff[t + 7]).abs() < 1e-9);
        }
        let scaled: Vec<f64> = cfg.season_profile.iter().map(|v| v * cfg.season_amplitude).collect();
        let phase = (0..7).find(|&p| (0..7).all(|t| (diff[t] - scaled[(t + p) % 7]).abs() < 1e-9));
        assert!(phase.is_some(), "{diff:?}");
    }
}
