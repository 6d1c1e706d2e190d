use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::MODULE;
use crate::config::PipelineConfig;
use crate::cusum::CalibratedChart;
use crate::design::DesignReport;
use crate::error::{Error, Result};
use crate::pattern::IcPattern;
use crate::selection::Pools;
use crate::svm::{ClassificationMetrics, Characterizer, RegressionMetrics, TrainedModel, WindowSelection};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const DESIGN: &str = "design.json";
const WINDOW: &str = "window.json";
const SVR: &str = "svr.json";
const SVC: &str = "svc.json";
const METRICS: &str = "metrics.json";
const CONFUSION: &str = "confusion.csv";
const POOLS: &str = "pools.csv";
const PATTERN: &str = "pattern.csv";
const CONFIG: &str = "config.toml";
const SUMMARY: &str = "summary.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub crate_version: String,
    pub config: PipelineConfig,
    pub process_ids: Vec<String>,
    pub n_times: usize,
    pub delta_min: f64,
    pub m: usize,
    pub chart: CalibratedChart,
    pub pools: Pools,
    pub filter_removed: usize,
    pub filter_examined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmMetrics {
    pub n_train: usize,
    pub n_test: usize,
    pub redraw_rate: f64,
    pub regression: RegressionMetrics,
    pub classification: ClassificationMetrics,
}

/// Everything `calibrate` produces. The calibration-time pattern and time
/// grid are kept for inspection only; monitoring re-estimates the pattern.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub manifest: Manifest,
    pub times: Vec<f64>,
    pub pattern: IcPattern,
    pub design: DesignReport,
    pub window: Option<WindowSelection>,
    pub svr: TrainedModel,
    pub svc: TrainedModel,
    pub metrics: SvmMetrics,
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(name, e))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn read_json<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<T> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

/// Reads `format_version` from a JSON artifact and refuses any other version.
pub(crate) fn check_version(dir: &Path, name: &str, what: &str, expected: u32) -> Result<()> {
    #[derive(Deserialize)]
    struct Version {
        format_version: u32,
    }
    let v: Version = read_json(dir, name)?;
    if v.format_version != expected {
        return Err(Error::data(
            MODULE,
            format!(
                "{what} at {} has format version {} but this build reads version {expected}; re-run the command that produced it",
                dir.display(),
                v.format_version
            ),
        ));
    }
    Ok(())
}

impl Bundle {
    pub fn characterizer(&self) -> Result<Characterizer> {
        Characterizer::new(self.svr.clone(), self.svc.clone(), self.manifest.delta_min)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(dir, MANIFEST, &self.manifest)?;
        write_json(dir, DESIGN, &self.design)?;
        if let Some(w) = &self.window {
            write_json(dir, WINDOW, w)?;
        }
        write_json(dir, METRICS, &self.metrics)?;
        self.svr.write_json(dir.join(SVR))?;
        self.svc.write_json(dir.join(SVC))?;
        let mut confusion = Vec::new();
        self.metrics.classification.write_csv(&mut confusion)?;
        let path = dir.join(CONFUSION);
        fs::write(&path, confusion).map_err(|e| Error::io(&path, e))?;
        self.manifest.pools.write_csv(dir.join(POOLS))?;
        self.pattern.write_csv(&self.times, dir.join(PATTERN))?;
        let path = dir.join(CONFIG);
        fs::write(&path, self.manifest.config.to_toml_string()?).map_err(|e| Error::io(&path, e))?;
        let path = dir.join(SUMMARY);
        fs::write(&path, self.summary()).map_err(|e| Error::io(&path, e))
    }

    /// Loads a bundle directory, refusing any other format version.
    pub fn read(dir: impl AsRef<Path>) -> Result<Bundle> {
        let dir = dir.as_ref();
        check_version(dir, MANIFEST, "bundle", BUNDLE_FORMAT_VERSION)?;
        let manifest: Manifest = read_json(dir, MANIFEST)?;
        let window = if dir.join(WINDOW).exists() { Some(read_json(dir, WINDOW)?) } else { None };
        let svr = TrainedModel::read_json(dir.join(SVR))?;
        let svc = TrainedModel::read_json(dir.join(SVC))?;
        if svr.m != manifest.m || svc.m != manifest.m {
            return Err(Error::data(MODULE, format!("bundle models disagree with the manifest window m = {}", manifest.m)));
        }
        let (times, pattern) = read_pattern_csv(&dir.join(PATTERN), manifest.config.pattern())?;
        Ok(Bundle {
            design: read_json(dir, DESIGN)?,
            metrics: read_json(dir, METRICS)?,
            manifest,
            times,
            pattern,
            window,
            svr,
            svc,
        })
    }

    /// Human-readable summary; contains no timings or paths, so identical
    /// inputs give identical text.
    pub fn summary(&self) -> String {
        let man = &self.manifest;
        let cfg = &man.config;
        let mut s = String::new();
        let _ = writeln!(s, "panelwatch calibration bundle (format {})", man.format_version);
        if let Some(p) = &cfg.preset {
            let _ = writeln!(s, "preset: {p}");
        }
        let _ = writeln!(s, "seed: {}", cfg.seed);
        let _ = writeln!(s, "panel: {} processes x {} times", man.process_ids.len(), man.n_times);
        let _ = writeln!(s, "P1 ({}): {}", man.pools.p1.len(), man.pools.p1.join(", "));
        let _ = writeln!(s, "P2 ({}): {}", man.pools.p2.len(), man.pools.p2.join(", "));
        if !man.pools.ineligible.is_empty() {
            let _ = writeln!(s, "ineligible ({}): {}", man.pools.ineligible.len(), man.pools.ineligible.join(", "));
        }
        let frac = if man.filter_examined == 0 { 0.0 } else { man.filter_removed as f64 / man.filter_examined as f64 };
        let _ = writeln!(
            s,
            "shewhart filter: removed {} of {} pool observations ({:.2}%)",
            man.filter_removed,
            man.filter_examined,
            100.0 * frac
        );
        match &self.design.shift_size {
            Some(r) => {
                let _ = writeln!(
                    s,
                    "delta_min: {:.4} (auto, {} after {} iterations)",
                    man.delta_min,
                    if r.converged { "converged" } else { "not converged" },
                    r.steps.len()
                );
            }
            None => {
                let _ = writeln!(s, "delta_min: {:.4}", man.delta_min);
            }
        }
        match &self.design.allowance {
            Some(c) => {
                let grid: Vec<String> = c.iter().map(|c| format!("k={} ARL1={:.2}", c.k, c.arl1)).collect();
                let _ = writeln!(s, "k: {} (auto; {})", man.chart.k, grid.join(", "));
            }
            None => {
                let _ = writeln!(s, "k: {}", man.chart.k);
            }
        }
        let _ = writeln!(s, "h+: {:.6}", man.chart.h_plus);
        let _ = writeln!(s, "h-: {:.6}", man.chart.h_minus);
        let _ = writeln!(
            s,
            "ARL0: target {}, achieved {:.2}, censored {:.2}%{}",
            self.design.arl0_target,
            self.design.achieved_arl0,
            100.0 * self.design.censored_fraction,
            if self.design.converged { "" } else { " (bisection did not converge)" }
        );
        match &self.window {
            Some(w) => {
                let _ = writeln!(s, "m: {} (auto, run-length quantile {})", man.m, cfg.window_quantile);
                for warning in &w.warnings {
                    let _ = writeln!(s, "  warning: {warning}");
                }
            }
            None => {
                let _ = writeln!(s, "m: {}", man.m);
            }
        }
        let met = &self.metrics;
        let _ = writeln!(
            s,
            "training set: {} train / {} test, redraw rate {:.2}%",
            met.n_train,
            met.n_test,
            100.0 * met.redraw_rate
        );
        let _ = writeln!(
            s,
            "SVR: MAPE {:.2}, NRMSE {:.4}, {} support vectors",
            met.regression.mape,
            met.regression.nrmse,
            self.svr.n_support_vectors()
        );
        let _ = writeln!(
            s,
            "SVC: accuracy {:.2}%, {} support vectors",
            met.classification.accuracy,
            self.svc.n_support_vectors()
        );
        if let Some((t, p, n)) = met.classification.dominant_confusion() {
            let names = &met.classification.class_names;
            let _ = writeln!(
                s,
                "SVC dominant confusion: {} predicted as {} ({} cases, {:.2}% of all)",
                names[t],
                names[p],
                n,
                100.0 * n as f64 / met.classification.total().max(1) as f64
            );
        }
        for w in self.design.warnings.iter().chain(&man.pools.warnings) {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}

fn read_pattern_csv(path: &Path, estimator: crate::pattern::PatternEstimator) -> Result<(Vec<f64>, IcPattern)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::data(MODULE, format!("{}: {e}", path.display())))?;
    let (mut times, mut mu0, mut sigma0) = (Vec::new(), Vec::new(), Vec::new());
    let cell = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| Error::data(MODULE, format!("{}: bad number {s:?}", path.display())))
        }
    };
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::data(MODULE, format!("{}: {e}", path.display())))?;
        if rec.len() != 3 {
            return Err(Error::data(MODULE, format!("{}: expected 3 columns", path.display())));
        }
        times.push(cell(&rec[0])?.unwrap_or(f64::NAN));
        mu0.push(cell(&rec[1])?);
        sigma0.push(cell(&rec[2])?);
    }
    Ok((times, IcPattern { mu0, sigma0, estimator, alignment: crate::panel::Alignment::Centered }))
}
