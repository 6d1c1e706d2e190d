use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bundle::check_version;
use super::{Bundle, MODULE, SIGMA_FLOOR};
use crate::cusum::{montgomery_estimate, run_chart, run_chart_values, AlertEvent, CalibratedChart, Side};
use crate::error::{Error, Result};
use crate::panel::{decompose, Alignment, Panel, Series};
use crate::pattern::{estimate_ic_pattern, fmt_opt, standardize, IcPattern, ResidualSeries};
use crate::shift::ShiftForm;
use crate::svm::{impute_input_vector, Characterizer, Imputed};

pub const REPORT_FORMAT_VERSION: u32 = 1;

const REPORT: &str = "report.json";
const ALERTS: &str = "alerts.csv";
const SUMMARY: &str = "summary.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    P2,
    /// In `P1` but not `P2`.
    P1,
    /// Known at calibration, in neither pool.
    Outside,
    /// Not part of the calibration panel.
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome")]
pub enum AlertOutcome {
    Characterized { delta: f64, form: ShiftForm, below_floor: bool, valid_fraction: f64 },
    /// Too few observed residuals in the input window.
    InputVectorRejected { valid_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertRecord {
    pub index: usize,
    pub time: f64,
    pub side: Side,
    pub statistic: f64,
    pub n_nonzero: usize,
    /// Rough CUSUM-based shift size, when defined.
    pub cusum_estimate: Option<f64>,
    #[serde(flatten)]
    pub outcome: AlertOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessReport {
    pub id: String,
    pub membership: Membership,
    pub eta_tilde: Series,
    pub eta_hat: Series,
    pub residuals: Series,
    pub c_plus: Vec<f64>,
    pub c_minus: Vec<f64>,
    pub alerts: Vec<AlertRecord>,
    /// Share of observed time points at which the chart, run without
    /// restarts, is beyond a control limit.
    pub alert_time_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitoringReport {
    pub format_version: u32,
    pub chart: CalibratedChart,
    pub m: usize,
    pub delta_min: f64,
    pub restart_on_alert: bool,
    pub p1: Vec<String>,
    pub p2: Vec<String>,
    pub times: Vec<f64>,
    pub pattern: IcPattern,
    pub processes: Vec<ProcessReport>,
    pub warnings: Vec<String>,
}

fn alert_time_fraction(values: &[Option<f64>], chart: &CalibratedChart) -> f64 {
    let run = run_chart_values(values, chart, false);
    let observed = values.iter().filter(|v| v.is_some()).count();
    if observed == 0 {
        return 0.0;
    }
    let beyond = (0..values.len())
        .filter(|&t| values[t].is_some() && (run.c_plus[t] > chart.h_plus || run.c_minus[t] < chart.h_minus))
        .count();
    beyond as f64 / observed as f64
}

fn characterize_alert(
    residuals: &ResidualSeries,
    alert: &AlertEvent,
    characterizer: &Characterizer,
) -> Result<AlertOutcome> {
    let m = characterizer.m();
    if alert.time + 1 < m {
        // The window reaches back before the first sample; those count as missing.
        let observed = residuals.values[..=alert.time].iter().filter(|v| v.is_some()).count();
        return Ok(AlertOutcome::InputVectorRejected { valid_fraction: observed as f64 / m as f64 });
    }
    Ok(match impute_input_vector(residuals, alert.time, m)? {
        Imputed::Ready(v) => {
            let c = characterizer.characterize(&v)?;
            AlertOutcome::Characterized {
                delta: c.delta,
                form: c.form,
                below_floor: c.below_floor,
                valid_fraction: v.valid_fraction,
            }
        }
        Imputed::Rejected { valid_fraction } => AlertOutcome::InputVectorRejected { valid_fraction },
    })
}

/// Monitors every process of `panel` against a calibration bundle. All
/// estimates use past and current samples only, so the output up to time
/// `t` does not depend on later observations.
pub fn monitor(panel: &Panel, bundle: &Bundle, restart_on_alert: bool) -> Result<MonitoringReport> {
    let man = &bundle.manifest;
    let cfg = &man.config;
    let mut warnings = Vec::new();
    let present = |ids: &[String]| -> Vec<String> { ids.iter().filter(|id| panel.index_of(id).is_some()).cloned().collect() };
    let p1 = present(&man.pools.p1);
    let p2 = present(&man.pools.p2);
    if p2.is_empty() {
        return Err(Error::data(MODULE, "none of the bundle's P2 processes appear in the monitored panel"));
    }
    if p2.len() < man.pools.p2.len() {
        warnings.push(format!("{} of {} P2 processes are missing from the panel", man.pools.p2.len() - p2.len(), man.pools.p2.len()));
    }

    let detrended = decompose(panel, &cfg.decomposition(), Alignment::LeftSided)?;
    let filtered = super::shewhart(&detrended, &p1, cfg)?;
    let pattern = estimate_ic_pattern(&filtered.filtered, &p2, cfg.pattern(), Alignment::LeftSided)?;
    let standardized = standardize(&detrended, &pattern, SIGMA_FLOOR)?;
    let characterizer = bundle.characterizer()?;
    let chart = &man.chart;

    for id in panel.ids() {
        if !man.process_ids.contains(id) {
            let w = format!("process {id} was not in the calibration panel; monitored against the pooled pattern");
            warn!("{w}");
            warnings.push(w);
        }
    }

    let times = panel.times();
    let processes = standardized
        .residuals
        .par_iter()
        .enumerate()
        .map(|(i, res)| -> Result<ProcessReport> {
            let id = &res.process_id;
            let membership = if !man.process_ids.contains(id) {
                Membership::Unknown
            } else if man.pools.in_p2(id) {
                Membership::P2
            } else if man.pools.in_p1(id) {
                Membership::P1
            } else {
                Membership::Outside
            };
            let run = run_chart(res, chart, restart_on_alert);
            let alerts = run
                .alerts
                .iter()
                .map(|a| {
                    Ok(AlertRecord {
                        index: a.time,
                        time: times[a.time],
                        side: a.side,
                        statistic: a.statistic,
                        n_nonzero: a.n_nonzero,
                        cusum_estimate: montgomery_estimate(a, chart.k).ok(),
                        outcome: characterize_alert(res, a, &characterizer)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ProcessReport {
                id: id.clone(),
                membership,
                eta_tilde: detrended.eta_tilde[i].clone(),
                eta_hat: detrended.eta_hat[i].clone(),
                alert_time_fraction: alert_time_fraction(&res.values, chart),
                residuals: res.values.clone(),
                c_plus: run.c_plus,
                c_minus: run.c_minus,
                alerts,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(MonitoringReport {
        format_version: REPORT_FORMAT_VERSION,
        chart: chart.clone(),
        m: man.m,
        delta_min: man.delta_min,
        restart_on_alert,
        p1,
        p2,
        times: times.to_vec(),
        pattern,
        processes,
        warnings,
    })
}

/// Characterizes the window of `m` residuals ending at index `tau`.
pub fn characterize_at(residuals: &ResidualSeries, tau: usize, characterizer: &Characterizer) -> Result<AlertOutcome> {
    let m = characterizer.m();
    if tau >= residuals.values.len() {
        return Err(Error::data(MODULE, format!("index {tau} is past the end of the series ({} points)", residuals.values.len())));
    }
    if tau + 1 < m {
        return Err(Error::data(MODULE, format!("index {tau} leaves fewer than m = {m} residuals before it")));
    }
    let event = AlertEvent { time: tau, side: Side::Upper, statistic: 0.0, n_nonzero: 0 };
    characterize_alert(residuals, &event, characterizer)
}

impl MonitoringReport {
    pub fn process(&self, id: &str) -> Result<&ProcessReport> {
        self.processes.iter().find(|p| p.id == id).ok_or_else(|| {
            let known: Vec<&str> = self.processes.iter().map(|p| p.id.as_str()).collect();
            Error::data(MODULE, format!("process `{id}` is not in the report; known processes: {}", known.join(", ")))
        })
    }

    /// All alerts in time order, ties in process order.
    pub fn alert_stream(&self) -> Vec<(&str, &AlertRecord)> {
        let mut all: Vec<(usize, &str, &AlertRecord)> = self
            .processes
            .iter()
            .enumerate()
            .flat_map(|(i, p)| p.alerts.iter().map(move |a| (i, p.id.as_str(), a)))
            .collect();
        all.sort_by_key(|(i, _, a)| (a.index, *i));
        all.into_iter().map(|(_, id, a)| (id, a)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::json("monitoring report", e))
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(REPORT);
        fs::write(&path, self.to_json()? + "\n").map_err(|e| Error::io(&path, e))?;
        let path = dir.join(ALERTS);
        fs::write(&path, self.alerts_csv()).map_err(|e| Error::io(&path, e))?;
        let path = dir.join(SUMMARY);
        fs::write(&path, self.summary()).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        check_version(dir, REPORT, "monitoring report", REPORT_FORMAT_VERSION)?;
        let path = dir.join(REPORT);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    /// `process,index,time,side,statistic,cusum_estimate,delta,form,rejected`
    pub fn alerts_csv(&self) -> String {
        let mut s = String::from("process,index,time,side,statistic,cusum_estimate,delta,form,rejected\n");
        for (id, a) in self.alert_stream() {
            let (delta, form, rejected) = match &a.outcome {
                AlertOutcome::Characterized { delta, form, .. } => (delta.to_string(), form.name(), false),
                AlertOutcome::InputVectorRejected { .. } => (String::new(), "", true),
            };
            let _ = writeln!(
                s,
                "{id},{},{},{},{},{},{delta},{form},{rejected}",
                a.index,
                a.time,
                a.side,
                a.statistic,
                fmt_opt(a.cusum_estimate)
            );
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "panelwatch monitoring report (format {})", self.format_version);
        let _ = writeln!(
            s,
            "chart: k = {}, h+ = {:.6}, h- = {:.6}, m = {}, restart on alert: {}",
            self.chart.k, self.chart.h_plus, self.chart.h_minus, self.m, self.restart_on_alert
        );
        let _ = writeln!(s, "{} processes x {} times", self.processes.len(), self.times.len());
        let _ = writeln!(s, "process,membership,alerts,rejected,alert_time_fraction");
        for p in &self.processes {
            let rejected = p.alerts.iter().filter(|a| matches!(a.outcome, AlertOutcome::InputVectorRejected { .. })).count();
            let membership = serde_json::to_value(p.membership).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            let _ = writeln!(s, "{},{membership},{},{rejected},{:.4}", p.id, p.alerts.len(), p.alert_time_fraction);
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}
