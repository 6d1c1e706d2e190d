use std::fs;
use std::path::{Path, PathBuf};

use super::monitor::{AlertOutcome, MonitoringReport};
use super::MODULE;
use crate::error::{Error, Result};
use crate::panel::Series;
use crate::pattern::{fmt_opt, ResidualSeries};

/// The four files written by [`export_plotdata`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlotFiles {
    pub eta: PathBuf,
    pub residuals: PathBuf,
    pub cusum: PathBuf,
    pub alerts: PathBuf,
}

fn signed_sqrt(c: f64) -> f64 {
    c.signum() * c.abs().sqrt()
}

fn write(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the per-process plot data: the level-free deviations, the
/// residuals, the CUSUM statistics in signed square-root scale with their
/// limits, and one row per alert. Files are named `<id>_eta.csv`,
/// `<id>_residuals.csv`, `<id>_cusum.csv` and `<id>_alerts.csv`.
pub fn export_plotdata(report: &MonitoringReport, process_id: &str, out_dir: impl AsRef<Path>) -> Result<PlotFiles> {
    let p = report.process(process_id)?;
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = PlotFiles {
        eta: dir.join(format!("{process_id}_eta.csv")),
        residuals: dir.join(format!("{process_id}_residuals.csv")),
        cusum: dir.join(format!("{process_id}_cusum.csv")),
        alerts: dir.join(format!("{process_id}_alerts.csv")),
    };
    let times = &report.times;

    let mut eta = String::from("time,eta_tilde,eta_hat\n");
    for (t, time) in times.iter().enumerate() {
        eta += &format!("{time},{},{}\n", fmt_opt(p.eta_tilde[t]), fmt_opt(p.eta_hat[t]));
    }
    write(&files.eta, eta)?;

    let mut res = String::from("time,residual,mu0,sigma0\n");
    for (t, time) in times.iter().enumerate() {
        res += &format!(
            "{time},{},{},{}\n",
            fmt_opt(p.residuals[t]),
            fmt_opt(report.pattern.mu0[t]),
            fmt_opt(report.pattern.sigma0[t])
        );
    }
    write(&files.residuals, res)?;

    let chart = &report.chart;
    let (upper, lower) = (signed_sqrt(chart.h_plus), signed_sqrt(chart.h_minus));
    let mut cusum = String::from("time,sqrt_c_plus,sqrt_c_minus,upper_limit,lower_limit\n");
    for (t, time) in times.iter().enumerate() {
        cusum += &format!("{time},{},{},{upper},{lower}\n", signed_sqrt(p.c_plus[t]), signed_sqrt(p.c_minus[t]));
    }
    write(&files.cusum, cusum)?;

    let mut alerts = String::from("time,side,delta,form,rejected\n");
    for a in &p.alerts {
        match &a.outcome {
            AlertOutcome::Characterized { delta, form, .. } => alerts += &format!("{},{},{delta},{form},false\n", a.time, a.side),
            AlertOutcome::InputVectorRejected { .. } => alerts += &format!("{},{},,,true\n", a.time, a.side),
        }
    }
    write(&files.alerts, alerts)?;
    Ok(files)
}

/// Reads a residual trace with a `time` column and a `residual` column
/// (extra columns are ignored; empty cells are missing). This is the format
/// of the `_residuals.csv` plot file.
pub fn read_residual_csv(path: impl AsRef<Path>) -> Result<(Vec<f64>, ResidualSeries)> {
    let path = path.as_ref();
    let err = |m: String| Error::data(MODULE, format!("{}: {m}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    let headers = reader.headers().map_err(|e| err(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(tc), Some(rc)) = (col("time"), col("residual")) else {
        return Err(err("expected `time` and `residual` columns".into()));
    };
    let mut times = Vec::new();
    let mut values: Series = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let cell = |c: usize| rec.get(c).map(str::trim).unwrap_or("");
        let t: f64 = cell(tc).parse().map_err(|_| err(format!("line {}: bad time {:?}", line + 2, cell(tc))))?;
        let r = match cell(rc) {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|_| err(format!("line {}: bad residual {s:?}", line + 2)))?),
        };
        times.push(t);
        values.push(r);
    }
    if times.is_empty() {
        return Err(err("no rows".into()));
    }
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok((times, ResidualSeries { process_id: id, values }))
}
