//! In-control pattern estimation and standardization.
//!
//! The time-varying in-control mean `μ̂₀(t)` and standard deviation `σ̂₀(t)`
//! are pooled over the very stable processes of `P2`, either over a boxcar
//! window of `Δ` samples or over the `K` temporally nearest observed points.
//! Every process is then standardized against them.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{Alignment, DetrendedPanel, Series};

const MODULE: &str = "ic-patterns";

pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PatternEstimator {
    Boxcar { delta: usize },
    Knn { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcPattern {
    pub mu0: Series,
    pub sigma0: Series,
    pub estimator: PatternEstimator,
    pub alignment: Alignment,
}

impl IcPattern {
    pub fn len(&self) -> usize {
        self.mu0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu0.is_empty()
    }

    /// `time,mu0,sigma0`
    pub fn write_csv(&self, times: &[f64], path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        self.to_csv_writer(times, &mut out).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn to_csv_writer(&self, times: &[f64], mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "time,mu0,sigma0")?;
        for ((t, m), s) in times.iter().zip(&self.mu0).zip(&self.sigma0) {
            writeln!(w, "{t},{},{}", fmt_opt(*m), fmt_opt(*s))?;
        }
        Ok(())
    }
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn pool_indices(detrended: &DetrendedPanel, p2: &[String]) -> Result<Vec<usize>> {
    if p2.is_empty() {
        return Err(Error::config(MODULE, "pattern pool P2 is empty"));
    }
    let mut idx: Vec<usize> = p2
        .iter()
        .map(|id| {
            detrended
                .index_of(id)
                .ok_or_else(|| Error::data(MODULE, format!("P2 member {id} not in panel")))
        })
        .collect::<Result<_>>()?;
    idx.sort_unstable();
    Ok(idx)
}

fn mean_and_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    (Some(mu), Some(var.sqrt()))
}

/// Boxcar estimate: mean and population variance over all observed
/// `(process, time)` pairs of `P2` inside the window around `t`. The
/// variance is centered on `μ̂₀(t)` itself.
pub fn estimate_ic_pattern_boxcar(
    detrended: &DetrendedPanel,
    p2: &[String],
    delta: usize,
    alignment: Alignment,
) -> Result<IcPattern> {
    if delta == 0 {
        return Err(Error::config(MODULE, "boxcar window must be >= 1"));
    }
    let members = pool_indices(detrended, p2)?;
    let n = detrended.n_times();
    let mut mu0 = Vec::with_capacity(n);
    let mut sigma0 = Vec::with_capacity(n);
    let mut buf = Vec::new();
    for t in 0..n {
        let (lo, hi) = alignment.bounds(t, delta);
        let lo = lo.max(0) as usize;
        let hi = hi.min(n as isize - 1) as usize;
        buf.clear();
        for &i in &members {
            buf.extend(detrended.eta_hat[i][lo..=hi].iter().flatten());
        }
        let (m, s) = mean_and_sd(&buf);
        mu0.push(m);
        sigma0.push(s);
    }
    Ok(IcPattern {
        mu0,
        sigma0,
        estimator: PatternEstimator::Boxcar { delta },
        alignment,
    })
}

/// K-nearest-neighbour estimate: the support at `t` is the `k` observed
/// `P2` points closest in time. Ties go to the earlier time, then to the
/// lower process index. `LeftSided` only considers times `<= t`.
pub fn estimate_ic_pattern_knn(
    detrended: &DetrendedPanel,
    p2: &[String],
    k: usize,
    alignment: Alignment,
) -> Result<IcPattern> {
    if k < 2 {
        return Err(Error::config(MODULE, "K-NN pattern needs k >= 2"));
    }
    let members = pool_indices(detrended, p2)?;
    let n = detrended.n_times();
    let total: usize = members.iter().map(|&i| detrended.observed_count(i)).sum();
    if total < k {
        return Err(Error::config(
            MODULE,
            format!("K-NN pattern needs k = {k} observed P2 points, only {total} exist"),
        ));
    }
    // Observed P2 values per time slot, in process order.
    let slots: Vec<Vec<f64>> = (0..n)
        .map(|t| members.iter().filter_map(|&i| detrended.eta_hat[i][t]).collect())
        .collect();

    let mut mu0 = Vec::with_capacity(n);
    let mut sigma0 = Vec::with_capacity(n);
    let mut buf = Vec::with_capacity(k);
    for t in 0..n {
        buf.clear();
        let take = |slot: &[f64], buf: &mut Vec<f64>| {
            let room = k - buf.len();
            buf.extend(slot.iter().take(room));
        };
        take(&slots[t], &mut buf);
        let mut d = 1;
        while buf.len() < k {
            let past = t.checked_sub(d);
            let future = (alignment == Alignment::Centered && t + d < n).then_some(t + d);
            if past.is_none() && future.is_none() {
                break;
            }
            if let Some(p) = past {
                take(&slots[p], &mut buf);
            }
            if let Some(f) = future {
                if buf.len() < k {
                    take(&slots[f], &mut buf);
                }
            }
            d += 1;
        }
        let (m, s) = mean_and_sd(&buf);
        mu0.push(m);
        sigma0.push(s);
    }
    Ok(IcPattern {
        mu0,
        sigma0,
        estimator: PatternEstimator::Knn { k },
        alignment,
    })
}

pub fn estimate_ic_pattern(
    detrended: &DetrendedPanel,
    p2: &[String],
    estimator: PatternEstimator,
    alignment: Alignment,
) -> Result<IcPattern> {
    match estimator {
        PatternEstimator::Boxcar { delta } => estimate_ic_pattern_boxcar(detrended, p2, delta, alignment),
        PatternEstimator::Knn { k } => estimate_ic_pattern_knn(detrended, p2, k, alignment),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSeries {
    pub process_id: String,
    pub values: Series,
}

impl ResidualSeries {
    pub fn observed(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().flatten().copied()
    }

    /// Maximal runs of consecutive observed values.
    pub fn segments(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        let mut cur = Vec::new();
        for v in &self.values {
            match v {
                Some(x) => cur.push(*x),
                None if !cur.is_empty() => out.push(std::mem::take(&mut cur)),
                None => {}
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub residuals: Vec<ResidualSeries>,
    /// Observed points dropped because `σ̂₀` was at or below the floor.
    pub floor_hits: usize,
}

/// `ε̂ = (η̂ − μ̂₀) / σ̂₀` for every process.
pub fn standardize(detrended: &DetrendedPanel, pattern: &IcPattern, sigma_floor: f64) -> Result<Standardized> {
    if pattern.len() != detrended.n_times() {
        return Err(Error::data(
            MODULE,
            format!("pattern length {} != panel length {}", pattern.len(), detrended.n_times()),
        ));
    }
    let mut floor_hits = 0;
    let residuals = detrended
        .ids
        .iter()
        .zip(&detrended.eta_hat)
        .map(|(id, row)| {
            let values = row
                .iter()
                .zip(pattern.mu0.iter().zip(&pattern.sigma0))
                .map(|(x, (m, s))| {
                    let (x, m, s) = (x.as_ref()?, m.as_ref()?, s.as_ref()?);
                    if *s <= sigma_floor {
                        floor_hits += 1;
                        None
                    } else {
                        Some((x - m) / s)
                    }
                })
                .collect();
            ResidualSeries {
                process_id: id.clone(),
                values,
            }
        })
        .collect();
    if floor_hits > 0 {
        log::warn!("{MODULE}: {floor_hits} observations dropped where sigma0 <= {sigma_floor}");
    }
    Ok(Standardized { residuals, floor_hits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn detrended(rows: Vec<Series>) -> DetrendedPanel {
        let n = rows.len();
        let t = rows[0].len();
        DetrendedPanel {
            ids: (0..n).map(|i| format!("p{i}")).collect(),
            times: (0..t).map(|t| t as f64).collect(),
            eta_tilde: rows.clone(),
            levels: rows.clone(),
            common_signal: vec![Some(1.0); t],
            eta_hat: rows,
        }
    }

    fn some(v: &[f64]) -> Series {
        v.iter().map(|&x| Some(x)).collect()
    }

    fn ids(d: &DetrendedPanel) -> Vec<String> {
        d.ids.clone()
    }

    #[test]
    fn boxcar_examples() {
        let d = detrended(vec![some(&[3.0; 4]), some(&[3.0; 4])]);
        let p = estimate_ic_pattern_boxcar(&d, &ids(&d), 3, Alignment::Centered).unwrap();
        assert!(p.mu0.iter().all(|m| *m == Some(3.0)));
        assert!(p.sigma0.iter().all(|s| *s == Some(0.0)));

        let d = detrended(vec![some(&[0.0; 3]), some(&[2.0; 3])]);
        let p = estimate_ic_pattern_boxcar(&d, &ids(&d), 1, Alignment::Centered).unwrap();
        assert!(p.mu0.iter().all(|m| *m == Some(1.0)));
        assert!(p.sigma0.iter().all(|s| *s == Some(1.0)));

        let d = detrended(vec![some(&[0.0, 6.0, 0.0]), some(&[0.0; 3])]);
        let p = estimate_ic_pattern_boxcar(&d, &["p0".to_string()], 3, Alignment::Centered).unwrap();
        assert_eq!(p.mu0[1], Some(2.0));
        assert!((p.sigma0[1].unwrap().powi(2) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn knn_examples() {
        let d = detrended(vec![some(&[1.0, 2.0, 4.0, 8.0]), some(&[0.0, 1.0, 5.0, 2.0])]);
        let knn = estimate_ic_pattern_knn(&d, &ids(&d), 2, Alignment::Centered).unwrap();
        let box1 = estimate_ic_pattern_boxcar(&d, &ids(&d), 1, Alignment::Centered).unwrap();
        assert_eq!(knn.mu0, box1.mu0);
        assert_eq!(knn.sigma0, box1.sigma0);

        let d = detrended(vec![vec![Some(1.0), None, Some(3.0)], vec![None; 3]]);
        let p = estimate_ic_pattern_knn(&d, &["p0".to_string()], 2, Alignment::Centered).unwrap();
        assert_eq!(p.mu0[1], Some(2.0));

        let d = detrended(vec![some(&[1.0, 5.0, 3.0, 7.0]), some(&[0.0; 4])]);
        let p = estimate_ic_pattern_knn(&d, &["p0".to_string()], 4, Alignment::Centered).unwrap();
        assert!(p.mu0.iter().all(|m| *m == Some(4.0)));

        assert!(matches!(
            estimate_ic_pattern_knn(&d, &["p0".to_string()], 5, Alignment::Centered),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn standardize_examples() {
        let d = detrended(vec![some(&[2.0, 1.0, 3.0]), some(&[0.0; 3])]);
        let pattern = IcPattern {
            mu0: some(&[1.0, 1.0, 1.0]),
            sigma0: vec![Some(0.5), Some(0.5), Some(0.0)],
            estimator: PatternEstimator::Boxcar { delta: 1 },
            alignment: Alignment::Centered,
        };
        let s = standardize(&d, &pattern, DEFAULT_SIGMA_FLOOR).unwrap();
        assert_eq!(s.residuals[0].values, vec![Some(2.0), Some(0.0), None]);
        assert_eq!(s.floor_hits, 2);
    }

    #[test]
    fn knn_with_pool_size_times_window_matches_boxcar() {
        let rows: Vec<Series> = (0..3)
            .map(|i| some(&(0..20).map(|t| ((t * 7 + i * 3) % 11) as f64).collect::<Vec<_>>()))
            .collect();
        let d = detrended(rows);
        let delta = 5;
        let b = estimate_ic_pattern_boxcar(&d, &ids(&d), delta, Alignment::Centered).unwrap();
        let k = estimate_ic_pattern_knn(&d, &ids(&d), 3 * delta, Alignment::Centered).unwrap();
        for t in 2..18 {
            assert!((b.mu0[t].unwrap() - k.mu0[t].unwrap()).abs() < 1e-12);
            assert!((b.sigma0[t].unwrap() - k.sigma0[t].unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn left_sided_pattern_is_causal() {
        let base: Vec<Series> = (0..3)
            .map(|i| some(&(0..30).map(|t| ((t + i) % 5) as f64).collect::<Vec<_>>()))
            .collect();
        let mut poisoned = base.clone();
        for row in poisoned.iter_mut() {
            for v in row[15..].iter_mut() {
                *v = Some(1e9);
            }
        }
        let (a, b) = (detrended(base), detrended(poisoned));
        for est in [PatternEstimator::Knn { k: 12 }, PatternEstimator::Boxcar { delta: 7 }] {
            let pa = estimate_ic_pattern(&a, &ids(&a), est, Alignment::LeftSided).unwrap();
            let pb = estimate_ic_pattern(&b, &ids(&b), est, Alignment::LeftSided).unwrap();
            assert_eq!(pa.mu0[..15], pb.mu0[..15]);
            assert_eq!(pa.sigma0[..15], pb.sigma0[..15]);
        }
    }

    proptest! {
        #[test]
        fn boxcar_support_is_standardized(vals in prop::collection::vec(-3.0f64..3.0, 40)) {
            let rows: Vec<Series> = vals.chunks(10).map(some).collect();
            let d = detrended(rows.clone());
            let delta = 3;
            let p = estimate_ic_pattern_boxcar(&d, &ids(&d), delta, Alignment::Centered).unwrap();
            for t in 1..9 {
                let (m, s) = (p.mu0[t].unwrap(), p.sigma0[t].unwrap());
                prop_assume!(s > 1e-6);
                let z: Vec<f64> = rows.iter().flat_map(|r| r[t - 1..=t + 1].iter().map(|v| (v.unwrap() - m) / s)).collect();
                let mean = z.iter().sum::<f64>() / z.len() as f64;
                let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64;
                prop_assert!(mean.abs() < 1e-6);
                prop_assert!((var - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn residuals_are_affine_invariant(vals in prop::collection::vec(-3.0f64..3.0, 30), a in 0.1f64..10.0, b in -5.0f64..5.0) {
            let rows: Vec<Series> = vals.chunks(10).map(some).collect();
            let moved: Vec<Series> = rows.iter().map(|r| r.iter().map(|v| v.map(|x| a * x + b)).collect()).collect();
            let (d1, d2) = (detrended(rows), detrended(moved));
            let pool = vec!["p0".to_string(), "p1".to_string()];
            let est = PatternEstimator::Knn { k: 6 };
            let r1 = standardize(&d1, &estimate_ic_pattern(&d1, &pool, est, Alignment::Centered).unwrap(), 1e-12).unwrap();
            let r2 = standardize(&d2, &estimate_ic_pattern(&d2, &pool, est, Alignment::Centered).unwrap(), 1e-12).unwrap();
            for (x, y) in r1.residuals.iter().zip(&r2.residuals) {
                for (u, v) in x.values.iter().zip(&y.values) {
                    match (u, v) {
                        (Some(u), Some(v)) => prop_assert!((u - v).abs() < 1e-6 * (1.0 + u.abs())),
                        (None, None) => {}
                        _ => prop_assert!(false, "mask changed"),
                    }
                }
            }
        }
    }
}
