//! Panel data model and the common-signal / individual-level decomposition.
//!
//! A [`Panel`] holds `N` equally spaced series observed on a shared time grid,
//! with `None` marking a missing observation. The decomposition follows two
//! steps: the cross-sectional median `ĉ(t)` is removed (by division in the
//! multiplicative model, by subtraction in the additive one) and then each
//! series' slowly varying level is estimated with a moving average and
//! subtracted.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

const MODULE: &str = "panel-core";

/// One series with explicit gaps.
pub type Series = Vec<Option<f64>>;

/// Minimum number of observed processes for a cross-sectional median.
pub const DEFAULT_MIN_COUNT: usize = 3;
/// Minimum fraction of observed points in a moving-average window.
pub const DEFAULT_MIN_VALID_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    ids: Vec<String>,
    times: Vec<f64>,
    rows: Vec<Series>,
}

impl Panel {
    /// Builds a panel, checking shape, finiteness and the uniform time grid.
    pub fn new(ids: Vec<String>, times: Vec<f64>, rows: Vec<Series>) -> Result<Self> {
        if ids.len() < 2 {
            return Err(Error::config(
                MODULE,
                format!("a panel needs at least 2 processes, got {}", ids.len()),
            ));
        }
        if times.is_empty() {
            return Err(Error::data(MODULE, "a panel needs at least one time point"));
        }
        if rows.len() != ids.len() {
            return Err(Error::data(
                MODULE,
                format!("{} ids but {} rows", ids.len(), rows.len()),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::data(MODULE, format!("duplicate process id {dup:?}")));
        }
        for (id, row) in ids.iter().zip(&rows) {
            if row.len() != times.len() {
                return Err(Error::data(
                    MODULE,
                    format!("process {id}: {} values for {} times", row.len(), times.len()),
                ));
            }
            if row.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::data(MODULE, format!("process {id}: non-finite observation")));
            }
        }
        check_time_grid(&times)?;
        Ok(Panel { ids, times, rows })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn rows(&self) -> &[Series] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &Series {
        &self.rows[i]
    }

    pub fn n_processes(&self) -> usize {
        self.ids.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn time_step(&self) -> f64 {
        if self.times.len() < 2 {
            1.0
        } else {
            self.times[1] - self.times[0]
        }
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|p| p == id)
    }

    /// Observed mask, `true` where a value is present.
    pub fn mask(&self) -> Vec<Vec<bool>> {
        self.rows
            .iter()
            .map(|r| r.iter().map(Option::is_some).collect())
            .collect()
    }

    /// The first `len` time points.
    pub fn truncated(&self, len: usize) -> Result<Panel> {
        let len = len.min(self.n_times());
        Panel::new(
            self.ids.clone(),
            self.times[..len].to_vec(),
            self.rows.iter().map(|r| r[..len].to_vec()).collect(),
        )
    }

    /// Applies a per-series transform, keeping ids and times.
    pub fn map_rows(&self, mut f: impl FnMut(&Series) -> Series) -> Result<Panel> {
        Panel::new(self.ids.clone(), self.times.clone(), self.rows.iter().map(&mut f).collect())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Panel> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Panel::from_csv_reader(file)
    }

    /// Parses `time,<id1>,<id2>,...` with empty cells as missing values.
    pub fn from_csv_reader(reader: impl Read) -> Result<Panel> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::data(MODULE, format!("unreadable header: {e}")))?
            .clone();
        if header.len() < 3 || !header[0].eq_ignore_ascii_case("time") {
            return Err(Error::data(
                MODULE,
                "header must be `time,<id1>,<id2>,...` with at least two process ids",
            ));
        }
        let ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut times = Vec::new();
        let mut rows: Vec<Series> = vec![Vec::new(); ids.len()];
        for (k, record) in rdr.records().enumerate() {
            let line = k + 2;
            let record =
                record.map_err(|e| Error::data(MODULE, format!("line {line}: {e}")))?;
            if record.len() != header.len() {
                return Err(Error::data(
                    MODULE,
                    format!(
                        "line {line}: expected {} fields, found {} (ragged row)",
                        header.len(),
                        record.len()
                    ),
                ));
            }
            let t: f64 = record[0].parse().map_err(|_| {
                Error::data(MODULE, format!("line {line}: invalid time `{}`", &record[0]))
            })?;
            times.push(t);
            for (j, cell) in record.iter().skip(1).enumerate() {
                let value = if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                    None
                } else {
                    let v: f64 = cell.parse().map_err(|_| {
                        Error::data(
                            MODULE,
                            format!("line {line}, column `{}`: invalid number `{cell}`", ids[j]),
                        )
                    })?;
                    Some(v)
                };
                rows[j].push(value);
            }
        }
        Panel::new(ids, times, rows)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.to_csv_writer(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn to_csv_writer(&self, mut w: impl Write) -> std::io::Result<()> {
        write!(w, "time")?;
        for id in &self.ids {
            write!(w, ",{id}")?;
        }
        writeln!(w)?;
        for (t, time) in self.times.iter().enumerate() {
            write!(w, "{time}")?;
            for row in &self.rows {
                match row[t] {
                    Some(v) => write!(w, ",{v}")?,
                    None => write!(w, ",")?,
                }
            }
            writeln!(w)?;
        }
        w.flush()
    }
}

fn check_time_grid(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::data(MODULE, "non-finite time value"));
    }
    if times.len() < 2 {
        return Ok(());
    }
    let step = times[1] - times[0];
    if step <= 0.0 {
        return Err(Error::data(MODULE, "time column must be strictly increasing"));
    }
    for (k, w) in times.windows(2).enumerate() {
        let d = w[1] - w[0];
        if d <= 0.0 {
            return Err(Error::data(
                MODULE,
                format!("time column must be strictly increasing (row {})", k + 2),
            ));
        }
        if ((d - step) / step).abs() > 1e-9 {
            return Err(Error::data(
                MODULE,
                format!(
                    "irregular time step at row {}: {d} differs from {step}",
                    k + 2
                ),
            ));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    Additive,
    Multiplicative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Window of `w` samples around `t` (even widths lean one sample to the past).
    Centered,
    /// Past and current samples only.
    LeftSided,
}

impl Alignment {
    /// Inclusive index range of a length-`window` window anchored at `t`,
    /// before truncation to `0..len`.
    pub(crate) fn bounds(self, t: usize, window: usize) -> (isize, isize) {
        let t = t as isize;
        let w = window as isize;
        match self {
            Alignment::Centered => {
                let lo = t - w / 2;
                (lo, lo + w - 1)
            }
            Alignment::LeftSided => (t - w + 1, t),
        }
    }
}

/// Result of the two-step decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct DetrendedPanel {
    pub ids: Vec<String>,
    pub times: Vec<f64>,
    /// Ratio (or difference) to the common signal, before level removal.
    pub eta_tilde: Vec<Series>,
    /// Level-free deviations; the quantity that gets monitored.
    pub eta_hat: Vec<Series>,
    pub common_signal: Series,
    pub levels: Vec<Series>,
}

impl DetrendedPanel {
    pub fn n_processes(&self) -> usize {
        self.ids.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn mask(&self) -> Vec<Vec<bool>> {
        self.eta_hat
            .iter()
            .map(|r| r.iter().map(Option::is_some).collect())
            .collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|p| p == id)
    }

    pub fn observed_count(&self, i: usize) -> usize {
        self.eta_hat[i].iter().flatten().count()
    }
}

/// Cross-sectional median at each time over observed entries; `None` where
/// fewer than `min_count` processes are observed.
pub fn estimate_common_signal(panel: &Panel, min_count: usize) -> Result<Series> {
    if panel.n_processes() < 2 {
        return Err(Error::config(MODULE, "the common signal needs N >= 2 processes"));
    }
    let min_count = min_count.max(1);
    let mut buf = Vec::with_capacity(panel.n_processes());
    Ok((0..panel.n_times())
        .map(|t| {
            buf.clear();
            buf.extend(panel.rows.iter().filter_map(|r| r[t]));
            (buf.len() >= min_count).then(|| stats::median_mut(&mut buf))
        })
        .collect())
}

/// `X / ĉ` (multiplicative, missing where `ĉ <= 0`) or `X - ĉ` (additive).
pub fn remove_common_signal(panel: &Panel, c_hat: &[Option<f64>], mode: ModelMode) -> Result<Panel> {
    if c_hat.len() != panel.n_times() {
        return Err(Error::data(
            MODULE,
            format!("common signal has length {}, panel has {} times", c_hat.len(), panel.n_times()),
        ));
    }
    panel.map_rows(|row| {
        row.iter()
            .zip(c_hat)
            .map(|(x, c)| match (x, c, mode) {
                (Some(x), Some(c), ModelMode::Multiplicative) if *c > 0.0 => Some(x / c),
                (Some(x), Some(c), ModelMode::Additive) => Some(x - c),
                _ => None,
            })
            .collect()
    })
}

/// Moving average over observed values. Windows are truncated at the series
/// edges; the output is missing when fewer than `min_valid_fraction` of the
/// in-range window points are observed.
pub fn ma_filter(
    series: &[Option<f64>],
    window: usize,
    alignment: Alignment,
    min_valid_fraction: f64,
) -> Result<Series> {
    let n = series.len();
    if window == 0 {
        return Err(Error::config(MODULE, "moving-average window must be >= 1"));
    }
    if window > n {
        return Err(Error::config(
            MODULE,
            format!("moving-average window {window} exceeds series length {n}"),
        ));
    }
    // Prefix sums make every window O(1).
    let mut sum = vec![0.0; n + 1];
    let mut cnt = vec![0usize; n + 1];
    for (t, v) in series.iter().enumerate() {
        sum[t + 1] = sum[t] + v.unwrap_or(0.0);
        cnt[t + 1] = cnt[t] + usize::from(v.is_some());
    }
    Ok((0..n)
        .map(|t| {
            let (lo, hi) = alignment.bounds(t, window);
            let lo = lo.max(0) as usize;
            let hi = (hi.min(n as isize - 1)) as usize;
            let in_range = hi + 1 - lo;
            let observed = cnt[hi + 1] - cnt[lo];
            if observed == 0 || (observed as f64) < min_valid_fraction * in_range as f64 {
                None
            } else {
                Some((sum[hi + 1] - sum[lo]) / observed as f64)
            }
        })
        .collect())
}

/// Subtracts each series' moving-average level: `η̂ = η̃ − η̃★`.
pub fn remove_levels(
    eta_tilde: &Panel,
    level_window: usize,
    alignment: Alignment,
    min_valid_fraction: f64,
) -> Result<(Vec<Series>, Vec<Series>)> {
    let mut eta_hat = Vec::with_capacity(eta_tilde.n_processes());
    let mut levels = Vec::with_capacity(eta_tilde.n_processes());
    for row in eta_tilde.rows() {
        let level = ma_filter(row, level_window, alignment, min_valid_fraction)?;
        eta_hat.push(
            row.iter()
                .zip(&level)
                .map(|(x, l)| Some(x.as_ref()? - l.as_ref()?))
                .collect(),
        );
        levels.push(level);
    }
    Ok((eta_hat, levels))
}

/// Settings for the full decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionSettings {
    pub mode: ModelMode,
    /// Short smoothing applied to raw observations first; 1 disables it.
    pub smoothing_window: usize,
    pub level_window: usize,
    pub min_count: usize,
    pub min_valid_fraction: f64,
}

impl Default for DecompositionSettings {
    fn default() -> Self {
        DecompositionSettings {
            mode: ModelMode::Multiplicative,
            smoothing_window: 1,
            level_window: 240,
            min_count: DEFAULT_MIN_COUNT,
            min_valid_fraction: DEFAULT_MIN_VALID_FRACTION,
        }
    }
}

/// Smoothing, common-signal removal and level removal in one pass. Use
/// `Alignment::LeftSided` for anything that has to be causal.
pub fn decompose(
    panel: &Panel,
    settings: &DecompositionSettings,
    alignment: Alignment,
) -> Result<DetrendedPanel> {
    let smoothed = if settings.smoothing_window > 1 {
        let w = settings.smoothing_window.min(panel.n_times());
        let mut err = None;
        let p = panel.map_rows(|r| {
            ma_filter(r, w, alignment, settings.min_valid_fraction).unwrap_or_else(|e| {
                err = Some(e);
                r.clone()
            })
        })?;
        if let Some(e) = err {
            return Err(e);
        }
        p
    } else {
        panel.clone()
    };
    let c_hat = estimate_common_signal(&smoothed, settings.min_count)?;
    let eta_tilde = remove_common_signal(&smoothed, &c_hat, settings.mode)?;
    let level_window = settings.level_window.min(panel.n_times());
    let (eta_hat, levels) =
        remove_levels(&eta_tilde, level_window, alignment, settings.min_valid_fraction)?;
    Ok(DetrendedPanel {
        ids: panel.ids().to_vec(),
        times: panel.times().to_vec(),
        eta_tilde: eta_tilde.rows().to_vec(),
        eta_hat,
        common_signal: c_hat,
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn panel_from(cols: &[&[Option<f64>]]) -> Panel {
        let n = cols.len();
        let t = cols[0].len();
        Panel::new(
            (0..n).map(|i| format!("p{i}")).collect(),
            (0..t).map(|t| t as f64).collect(),
            cols.iter().map(|c| c.to_vec()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn common_signal_examples() {
        let p = panel_from(&[&[Some(2.0)], &[Some(4.0)], &[Some(6.0)]]);
        assert_eq!(estimate_common_signal(&p, 3).unwrap(), vec![Some(4.0)]);
        let p = panel_from(&[&[Some(2.0)], &[Some(4.0)], &[Some(6.0)], &[Some(100.0)]]);
        assert_eq!(estimate_common_signal(&p, 3).unwrap(), vec![Some(5.0)]);
        let p = panel_from(&[&[Some(3.0)], &[None], &[None]]);
        assert_eq!(estimate_common_signal(&p, 2).unwrap(), vec![None]);
    }

    #[test]
    fn single_process_is_rejected() {
        let err = Panel::new(vec!["a".into()], vec![0.0], vec![vec![Some(1.0)]]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let rows = vec![vec![Some(1.0)]; 3];
        let err = Panel::new(vec!["a".into(), "b".into(), "a".into()], vec![0.0], rows).unwrap_err();
        assert!(err.to_string().contains("\"a\""));
    }

    #[test]
    fn common_signal_removal() {
        let p = panel_from(&[&[Some(6.0)], &[Some(6.0)]]);
        let m = remove_common_signal(&p, &[Some(4.0)], ModelMode::Multiplicative).unwrap();
        assert_eq!(m.row(0)[0], Some(1.5));
        let m = remove_common_signal(&p, &[Some(0.0)], ModelMode::Multiplicative).unwrap();
        assert_eq!(m.row(0)[0], None);
        let a = remove_common_signal(&p, &[Some(4.0)], ModelMode::Additive).unwrap();
        assert_eq!(a.row(0)[0], Some(2.0));
    }

    #[test]
    fn ma_filter_examples() {
        let s: Series = [1.0, 2.0, 3.0, 4.0, 5.0].iter().map(|&v| Some(v)).collect();
        let c = ma_filter(&s, 3, Alignment::Centered, 0.5).unwrap();
        assert_eq!(c, vec![Some(1.5), Some(2.0), Some(3.0), Some(4.0), Some(4.5)]);
        let l = ma_filter(&s, 3, Alignment::LeftSided, 0.5).unwrap();
        assert_eq!(l, vec![Some(1.0), Some(1.5), Some(2.0), Some(3.0), Some(4.0)]);
    }

    #[test]
    fn ma_filter_with_gap_truncates_edges() {
        // Edge windows hold two in-range points, one observed: 1/2 >= 0.5.
        let s = vec![Some(1.0), None, Some(3.0)];
        let out = ma_filter(&s, 3, Alignment::Centered, 0.5).unwrap();
        assert_eq!(out, vec![Some(1.0), Some(2.0), Some(3.0)]);
        let out = ma_filter(&s, 3, Alignment::Centered, 0.6).unwrap();
        assert_eq!(out, vec![None, Some(2.0), None]);
    }

    #[test]
    fn ma_filter_window_too_long() {
        let s = vec![Some(1.0); 3];
        assert!(matches!(
            ma_filter(&s, 4, Alignment::Centered, 0.5),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn level_removal_examples() {
        let p = panel_from(&[&[Some(0.0), Some(0.0), Some(6.0), Some(0.0), Some(0.0)], &[Some(2.0); 5]]);
        let (eta, lvl) = remove_levels(&p, 5, Alignment::Centered, 0.5).unwrap();
        assert!((lvl[0][2].unwrap() - 1.2).abs() < 1e-12);
        assert!((eta[0][2].unwrap() - 4.8).abs() < 1e-12);
        assert!(eta[1].iter().all(|v| *v == Some(0.0)));
        assert!(lvl[1].iter().all(|v| *v == Some(2.0)));

        let lin: Vec<Option<f64>> = (0..9).map(|t| Some(t as f64)).collect();
        let p = panel_from(&[&lin, &lin]);
        let (eta, _) = remove_levels(&p, 3, Alignment::Centered, 0.5).unwrap();
        for v in &eta[0][1..8] {
            assert!(v.unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn csv_roundtrip_and_validation() {
        let text = "time,a,b,c\n0,1,2,\n1,3,,4\n2,5,6,7\n";
        let p = Panel::from_csv_reader(text.as_bytes()).unwrap();
        assert_eq!(p.ids(), ["a", "b", "c"]);
        assert_eq!(p.row(1), &vec![Some(2.0), None, Some(6.0)]);
        let mut out = Vec::new();
        p.to_csv_writer(&mut out).unwrap();
        assert_eq!(Panel::from_csv_reader(out.as_slice()).unwrap(), p);

        let ragged = "time,a,b\n0,1,2\n1,3\n";
        let err = Panel::from_csv_reader(ragged.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");

        let irregular = "time,a,b\n0,1,2\n1,3,4\n3,3,4\n";
        assert!(Panel::from_csv_reader(irregular.as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn additive_roundtrip(vals in prop::collection::vec(prop::option::weighted(0.8, -1e3f64..1e3), 12)) {
            let rows: Vec<Series> = vals.chunks(4).map(|c| c.to_vec()).collect();
            let p = Panel::new(vec!["a".into(), "b".into(), "c".into()], (0..4).map(f64::from).collect(), rows).unwrap();
            let c = estimate_common_signal(&p, 1).unwrap();
            let e = remove_common_signal(&p, &c, ModelMode::Additive).unwrap();
            for i in 0..3 {
                for t in 0..4 {
                    if let (Some(x), Some(c)) = (p.row(i)[t], c[t]) {
                        prop_assert!((e.row(i)[t].unwrap() + c - x).abs() <= 1e-12 * x.abs().max(1.0));
                    }
                }
            }
        }

        #[test]
        fn multiplicative_roundtrip(vals in prop::collection::vec(0.1f64..1e3, 12)) {
            let rows: Vec<Series> = vals.chunks(4).map(|c| c.iter().map(|&v| Some(v)).collect()).collect();
            let p = Panel::new(vec!["a".into(), "b".into(), "c".into()], (0..4).map(f64::from).collect(), rows).unwrap();
            let c = estimate_common_signal(&p, 3).unwrap();
            let e = remove_common_signal(&p, &c, ModelMode::Multiplicative).unwrap();
            for i in 0..3 {
                for t in 0..4 {
                    let back = e.row(i)[t].unwrap() * c[t].unwrap();
                    prop_assert!((back - p.row(i)[t].unwrap()).abs() <= 1e-12 * back.abs().max(1.0));
                }
            }
        }

        #[test]
        fn median_breakdown(base in prop::collection::vec(-10.0f64..10.0, 4), wild in -1e6f64..1e6) {
            let mut rows: Vec<Series> = base.iter().map(|&v| vec![Some(v)]).collect();
            rows.push(vec![Some(wild)]);
            let p = Panel::new((0..5).map(|i| i.to_string()).collect(), vec![0.0], rows).unwrap();
            let c = estimate_common_signal(&p, 3).unwrap()[0].unwrap();
            let lo = base.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = base.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(c >= lo && c <= hi);
        }

        #[test]
        fn centered_ma_of_constant(c in -100.0f64..100.0, w in 1usize..10, mask in prop::collection::vec(any::<bool>(), 10)) {
            let s: Series = mask.iter().map(|&m| m.then_some(c)).collect();
            let out = ma_filter(&s, w, Alignment::Centered, 0.0).unwrap();
            for (o, m) in out.iter().zip(&mask) {
                if *m {
                    prop_assert!((o.unwrap() - c).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn level_removed_series_has_zero_local_mean(vals in prop::collection::vec(-5.0f64..5.0, 30)) {
            // Interior points of a linear-plus-noise series: the MA of η̂ with the
            // same window vanishes only for locally linear input, so check the
            // weaker identity on a linear series with the noise as offset.
            let lin: Series = (0..30).map(|t| Some(0.3 * t as f64 + vals[0])).collect();
            let p = Panel::new(vec!["a".into(), "b".into()], (0..30).map(f64::from).collect(), vec![lin.clone(), lin]).unwrap();
            let (eta, _) = remove_levels(&p, 5, Alignment::Centered, 0.5).unwrap();
            let again = ma_filter(&eta[0], 5, Alignment::Centered, 0.5).unwrap();
            for v in &again[4..26] {
                prop_assert!(v.unwrap().abs() < 1e-9);
            }
        }
    }
}
