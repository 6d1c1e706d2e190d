//! Self-selection of in-control processes.
//!
//! Every process gets a stability score, the scores are split into two
//! clusters, and the low-score cluster becomes the calibration pool `P1`.
//! Clustering again inside `P1` yields the smaller pattern pool `P2`.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::DetrendedPanel;
use crate::stats;

const MODULE: &str = "ic-selection";

pub const DEFAULT_MIN_OBS: usize = 30;
const KMEANS_RESTARTS: usize = 50;
const GMM_MAX_ITER: usize = 200;
const GMM_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMethod {
    KMeans,
    GaussianMixtureEm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityScore {
    pub process_id: String,
    pub mse: f64,
}

/// Robust form: `med_t(η̂)² + iqr_t(η̂)`. Plain form: mean of `η̂²`.
pub fn score_series(values: &[f64], robust: bool) -> f64 {
    if robust {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let med = stats::quantile_sorted(&v, 0.5);
        med * med + stats::iqr_sorted(&v)
    } else {
        values.iter().map(|x| x * x).sum::<f64>() / values.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub scores: Vec<StabilityScore>,
    /// Processes with fewer than `min_obs` observed points.
    pub ineligible: Vec<String>,
}

pub fn stability_score(detrended: &DetrendedPanel, robust: bool, min_obs: usize) -> Result<ScoreReport> {
    let mut scores = Vec::new();
    let mut ineligible = Vec::new();
    for (id, row) in detrended.ids.iter().zip(&detrended.eta_hat) {
        let obs: Vec<f64> = row.iter().flatten().copied().collect();
        if obs.len() < min_obs.max(1) {
            ineligible.push(id.clone());
        } else {
            scores.push(StabilityScore {
                process_id: id.clone(),
                mse: score_series(&obs, robust),
            });
        }
    }
    if scores.is_empty() {
        return Err(Error::data(
            MODULE,
            format!("no process has the {min_obs} observed points needed for scoring"),
        ));
    }
    Ok(ScoreReport { scores, ineligible })
}

/// Two-group split of 1-D scores; indices refer to the input slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub low: Vec<usize>,
    pub high: Vec<usize>,
    /// Set when the data could not be split and everything was labeled IC.
    pub degenerate: bool,
}

pub fn cluster_two(scores: &[f64], method: ClusterMethod, seed: u64) -> Partition {
    let distinct = {
        let mut v = scores.to_vec();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    };
    if distinct < 2 {
        log::warn!("{MODULE}: scores are identical; every process is labeled in-control");
        return Partition {
            low: (0..scores.len()).collect(),
            high: Vec::new(),
            degenerate: true,
        };
    }
    let labels = match method {
        ClusterMethod::KMeans => kmeans_two(scores, seed),
        ClusterMethod::GaussianMixtureEm => gmm_two(scores),
    };
    let low: Vec<usize> = (0..scores.len()).filter(|&i| !labels[i]).collect();
    let high: Vec<usize> = (0..scores.len()).filter(|&i| labels[i]).collect();
    if low.is_empty() || high.is_empty() {
        log::warn!("{MODULE}: clustering produced an empty group; every process is labeled in-control");
        return Partition {
            low: (0..scores.len()).collect(),
            high: Vec::new(),
            degenerate: true,
        };
    }
    Partition {
        low,
        high,
        degenerate: false,
    }
}

/// Returns `true` for members of the high (out-of-control) group.
fn kmeans_two(x: &[f64], seed: u64) -> Vec<bool> {
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<bool>)> = None;
    for restart in 0..KMEANS_RESTARTS {
        let (mut c0, mut c1) = if restart == 0 {
            (min, max)
        } else {
            let a = x[rng.random_range(0..x.len())];
            let b = x[rng.random_range(0..x.len())];
            let jitter = (max - min) * 1e-3 * rng.random::<f64>();
            (a.min(b), a.max(b) + jitter)
        };
        let mut labels = vec![false; x.len()];
        for _ in 0..100 {
            let mut changed = false;
            for (l, &v) in labels.iter_mut().zip(x) {
                let hi = (v - c1).abs() < (v - c0).abs();
                changed |= *l != hi;
                *l = hi;
            }
            let (s0, n0, s1, n1) = labels.iter().zip(x).fold((0.0, 0, 0.0, 0), |acc, (&l, &v)| {
                if l {
                    (acc.0, acc.1, acc.2 + v, acc.3 + 1)
                } else {
                    (acc.0 + v, acc.1 + 1, acc.2, acc.3)
                }
            });
            if n0 == 0 || n1 == 0 {
                break;
            }
            c0 = s0 / n0 as f64;
            c1 = s1 / n1 as f64;
            if !changed {
                break;
            }
        }
        let n1 = labels.iter().filter(|&&l| l).count();
        if n1 == 0 || n1 == x.len() {
            continue;
        }
        let wcss: f64 = labels
            .iter()
            .zip(x)
            .map(|(&l, &v)| if l { (v - c1).powi(2) } else { (v - c0).powi(2) })
            .sum();
        if best.as_ref().is_none_or(|(b, _)| wcss < *b) {
            // Relabel so that `true` is always the higher-centered group.
            let labels = if c1 < c0 {
                labels.iter().map(|l| !l).collect()
            } else {
                labels
            };
            best = Some((wcss, labels));
        }
    }
    best.map(|(_, l)| l).unwrap_or_else(|| vec![false; x.len()])
}

fn gmm_two(x: &[f64]) -> Vec<bool> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).max(1e-300);
    let floor = var * 1e-6;
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut mu = [stats::quantile_sorted(&sorted, 0.25), stats::quantile_sorted(&sorted, 0.75)];
    if mu[0] == mu[1] {
        mu = [sorted[0], sorted[sorted.len() - 1]];
    }
    let mut sigma2 = [var, var];
    let mut w: [f64; 2] = [0.5, 0.5];
    let mut resp = vec![[0.5, 0.5]; x.len()];
    let mut prev_ll = f64::NEG_INFINITY;
    for _ in 0..GMM_MAX_ITER {
        let mut ll = 0.0;
        for (r, &v) in resp.iter_mut().zip(x) {
            let lp = [0, 1].map(|c| {
                w[c].ln() - 0.5 * (2.0 * std::f64::consts::PI * sigma2[c]).ln()
                    - (v - mu[c]).powi(2) / (2.0 * sigma2[c])
            });
            let m = lp[0].max(lp[1]);
            let lse = m + ((lp[0] - m).exp() + (lp[1] - m).exp()).ln();
            ll += lse;
            *r = [(lp[0] - lse).exp(), (lp[1] - lse).exp()];
        }
        for c in 0..2 {
            let nc: f64 = resp.iter().map(|r| r[c]).sum();
            if nc < 1e-12 {
                continue;
            }
            w[c] = nc / n;
            mu[c] = resp.iter().zip(x).map(|(r, v)| r[c] * v).sum::<f64>() / nc;
            sigma2[c] = (resp.iter().zip(x).map(|(r, v)| r[c] * (v - mu[c]).powi(2)).sum::<f64>() / nc)
                .max(floor);
        }
        if (ll - prev_ll).abs() < GMM_TOL * ll.abs().max(1.0) {
            break;
        }
        prev_ll = ll;
    }
    // Lower center is IC; equal centers fall back to the lower variance.
    let ic = if mu[0] != mu[1] {
        usize::from(mu[0] > mu[1])
    } else {
        usize::from(sigma2[0] > sigma2[1])
    };
    let oc = 1 - ic;
    resp.iter().map(|r| r[oc] > r[ic]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pools {
    pub p1: Vec<String>,
    pub p2: Vec<String>,
    pub scores: Vec<StabilityScore>,
    pub ineligible: Vec<String>,
    pub method: ClusterMethod,
    pub warnings: Vec<String>,
}

impl Pools {
    pub fn in_p1(&self, id: &str) -> bool {
        self.p1.iter().any(|p| p == id)
    }

    pub fn in_p2(&self, id: &str) -> bool {
        self.p2.iter().any(|p| p == id)
    }

    /// `process_id,score,in_p1,in_p2`
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        self.to_csv_writer(&mut out).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn to_csv_writer(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "process_id,score,in_p1,in_p2")?;
        for s in &self.scores {
            writeln!(
                w,
                "{},{},{},{}",
                s.process_id,
                s.mse,
                self.in_p1(&s.process_id),
                self.in_p2(&s.process_id)
            )?;
        }
        for id in &self.ineligible {
            writeln!(w, "{id},,false,false")?;
        }
        Ok(())
    }
}

/// Nested pools from already computed scores.
pub fn select_pools_from_scores(
    scores: Vec<StabilityScore>,
    ineligible: Vec<String>,
    method: ClusterMethod,
    seed: u64,
) -> Result<Pools> {
    if scores.len() < 2 {
        return Err(Error::data(
            MODULE,
            format!("pool selection needs at least 2 scored processes, got {}", scores.len()),
        ));
    }
    let mut warnings = Vec::new();
    if scores.len() < 4 {
        warnings.push(format!(
            "only {} scored processes; nested clustering is likely degenerate",
            scores.len()
        ));
    }
    let values: Vec<f64> = scores.iter().map(|s| s.mse).collect();
    let first = cluster_two(&values, method, seed);
    if first.degenerate {
        warnings.push("first clustering degenerate: all scored processes placed in P1".into());
    }
    let p1_idx = first.low;
    let p2_idx = if p1_idx.len() == 1 {
        warnings.push("P1 has a single process; P2 := P1".into());
        p1_idx.clone()
    } else {
        let sub: Vec<f64> = p1_idx.iter().map(|&i| values[i]).collect();
        let second = cluster_two(&sub, method, seed.wrapping_add(1));
        if second.degenerate {
            warnings.push("second clustering degenerate: P2 := P1".into());
        }
        second.low.iter().map(|&j| p1_idx[j]).collect()
    };
    for w in &warnings {
        log::warn!("{MODULE}: {w}");
    }
    Ok(Pools {
        p1: p1_idx.iter().map(|&i| scores[i].process_id.clone()).collect(),
        p2: p2_idx.iter().map(|&i| scores[i].process_id.clone()).collect(),
        scores,
        ineligible,
        method,
        warnings,
    })
}

pub fn select_pools(
    detrended: &DetrendedPanel,
    method: ClusterMethod,
    robust: bool,
    min_obs: usize,
    seed: u64,
) -> Result<Pools> {
    if detrended.n_processes() < 4 {
        return Err(Error::config(
            MODULE,
            format!("pool selection needs N >= 4 processes, got {}", detrended.n_processes()),
        ));
    }
    let report = stability_score(detrended, robust, min_obs)?;
    select_pools_from_scores(report.scores, report.ineligible, method, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterReport {
    pub filtered: DetrendedPanel,
    pub removed: usize,
    pub examined: usize,
}

impl FilterReport {
    pub fn removed_fraction(&self) -> f64 {
        if self.examined == 0 {
            0.0
        } else {
            self.removed as f64 / self.examined as f64
        }
    }
}

/// Drops pool observations outside `median ± iqr_multiple · IQR` of the pool
/// cross-section at each time. Times with fewer than four observed pool
/// values are left untouched.
pub fn adaptive_shewhart_filter(
    detrended: &DetrendedPanel,
    pool: &[String],
    iqr_multiple: f64,
) -> Result<FilterReport> {
    if pool.is_empty() {
        return Err(Error::config(MODULE, "adaptive Shewhart filter needs a nonempty pool"));
    }
    if iqr_multiple.is_nan() || iqr_multiple < 0.0 {
        return Err(Error::config(MODULE, "iqr_multiple must be a nonnegative number"));
    }
    let members: Vec<usize> = pool
        .iter()
        .map(|id| {
            detrended
                .index_of(id)
                .ok_or_else(|| Error::data(MODULE, format!("pool member {id} not in panel")))
        })
        .collect::<Result<_>>()?;
    let mut filtered = detrended.clone();
    let mut removed = 0;
    let mut examined = 0;
    let mut buf = Vec::with_capacity(members.len());
    for t in 0..detrended.n_times() {
        buf.clear();
        buf.extend(members.iter().filter_map(|&i| detrended.eta_hat[i][t]));
        examined += buf.len();
        if buf.len() < 4 || iqr_multiple.is_infinite() {
            continue;
        }
        buf.sort_by(f64::total_cmp);
        let med = stats::quantile_sorted(&buf, 0.5);
        let half = iqr_multiple * stats::iqr_sorted(&buf);
        for &i in &members {
            if let Some(v) = detrended.eta_hat[i][t] {
                if v < med - half || v > med + half {
                    filtered.eta_hat[i][t] = None;
                    removed += 1;
                }
            }
        }
    }
    Ok(FilterReport {
        filtered,
        removed,
        examined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive 1-D two-cluster optimum: try every interval split of the
    /// sorted values and keep the lowest within-cluster sum of squares.
    fn best_split(x: &[f64]) -> Vec<usize> {
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
        let ss = |idx: &[usize]| {
            let m = idx.iter().map(|&i| x[i]).sum::<f64>() / idx.len() as f64;
            idx.iter().map(|&i| (x[i] - m).powi(2)).sum::<f64>()
        };
        let mut best = (f64::INFINITY, 0);
        for cut in 1..x.len() {
            let s = ss(&order[..cut]) + ss(&order[cut..]);
            if s < best.0 {
                best = (s, cut);
            }
        }
        let mut low = order[..best.1].to_vec();
        low.sort();
        low
    }

    fn detrended(rows: Vec<Vec<Option<f64>>>) -> DetrendedPanel {
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

    #[test]
    fn score_examples() {
        // med 0.2, IQR 0.3 (type-7 quartiles 0.05 and 0.35).
        let v = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, -0.1];
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        assert!((stats::iqr_sorted(&s) - 0.3).abs() < 1e-12);
        assert!((score_series(&v, true) - 0.34).abs() < 1e-12);
        assert_eq!(score_series(&[0.0; 5], true), 0.0);
        assert!((score_series(&[-1.0, 0.0, 1.0], false) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn kmeans_examples() {
        let x = [0.1, 0.12, 0.11, 0.9, 0.95];
        let p = cluster_two(&x, ClusterMethod::KMeans, 1);
        assert_eq!(p.low, best_split(&x));
        assert_eq!(p.low, vec![0, 1, 2]);

        let p = cluster_two(&[0.3; 3], ClusterMethod::KMeans, 1);
        assert!(p.degenerate);
        assert_eq!(p.low, vec![0, 1, 2]);

        let p = cluster_two(&[0.1, 5.0], ClusterMethod::KMeans, 1);
        assert_eq!(p.low, vec![0]);
    }

    #[test]
    fn gmm_splits_obvious_groups() {
        let x = [0.1, 0.12, 0.11, 0.13, 0.9, 0.95, 1.3];
        let p = cluster_two(&x, ClusterMethod::GaussianMixtureEm, 0);
        assert_eq!(p.low, vec![0, 1, 2, 3]);
    }

    #[test]
    fn pools_from_tied_scores() {
        let scores = [0.1, 0.1, 10.0, 10.0]
            .iter()
            .enumerate()
            .map(|(i, &m)| StabilityScore { process_id: format!("p{i}"), mse: m })
            .collect();
        let pools = select_pools_from_scores(scores, vec![], ClusterMethod::KMeans, 3).unwrap();
        assert_eq!(pools.p1, vec!["p0", "p1"]);
        assert_eq!(pools.p2, vec!["p0", "p1"]);
        assert!(!pools.warnings.is_empty());
    }

    #[test]
    fn identical_rows_degenerate() {
        let row: Vec<Option<f64>> = (0..40).map(|t| Some((t as f64 * 0.7).sin())).collect();
        let d = detrended(vec![row; 5]);
        let pools = select_pools(&d, ClusterMethod::KMeans, true, 30, 0).unwrap();
        assert_eq!(pools.p1.len(), 5);
        assert_eq!(pools.p2.len(), 5);
        assert!(pools.warnings.len() >= 2);
    }

    #[test]
    fn ineligible_processes_are_reported() {
        let full: Vec<Option<f64>> = (0..40).map(|t| Some(t as f64 * 0.01)).collect();
        let sparse: Vec<Option<f64>> = (0..40).map(|t| (t < 10).then_some(0.0)).collect();
        let d = detrended(vec![full.clone(), full.clone(), full, sparse]);
        let r = stability_score(&d, true, 30).unwrap();
        assert_eq!(r.ineligible, vec!["p3"]);
        assert_eq!(r.scores.len(), 3);
    }

    #[test]
    fn shewhart_examples() {
        let d = detrended(vec![
            vec![Some(0.0)],
            vec![Some(0.1)],
            vec![Some(-0.1)],
            vec![Some(5.0)],
        ]);
        let pool: Vec<String> = d.ids.clone();
        let r = adaptive_shewhart_filter(&d, &pool, 1.0).unwrap();
        assert_eq!(r.filtered.eta_hat[3][0], None);
        assert_eq!(r.removed, 1);

        let same = detrended(vec![vec![Some(2.0)]; 5]);
        let r = adaptive_shewhart_filter(&same, &same.ids, 1.0).unwrap();
        assert_eq!(r.removed, 0);

        let r = adaptive_shewhart_filter(&d, &pool, f64::INFINITY).unwrap();
        assert_eq!(r.filtered, d);

        // Three observed pool values: IQR unreliable, nothing touched.
        let small = detrended(vec![vec![Some(0.0)], vec![Some(0.1)], vec![Some(9.0)], vec![None]]);
        let r = adaptive_shewhart_filter(&small, &small.ids, 1.0).unwrap();
        assert_eq!(r.removed, 0);
    }

    proptest! {
        #[test]
        fn kmeans_is_an_optimal_interval_split(x in prop::collection::vec(0.0f64..10.0, 2..12)) {
            let p = cluster_two(&x, ClusterMethod::KMeans, 7);
            if !p.degenerate {
                let max_low = p.low.iter().map(|&i| x[i]).fold(f64::NEG_INFINITY, f64::max);
                let min_high = p.high.iter().map(|&i| x[i]).fold(f64::INFINITY, f64::min);
                prop_assert!(max_low <= min_high);
                let ss = |idx: &[usize]| {
                    let m = idx.iter().map(|&i| x[i]).sum::<f64>() / idx.len() as f64;
                    idx.iter().map(|&i| (x[i] - m).powi(2)).sum::<f64>()
                };
                let opt = best_split(&x);
                let opt_high: Vec<usize> = (0..x.len()).filter(|i| !opt.contains(i)).collect();
                let got = ss(&p.low) + ss(&p.high);
                let best = ss(&opt) + ss(&opt_high);
                prop_assert!(got <= best + 1e-9);
            }
        }

        #[test]
        fn nested_pool_means(x in prop::collection::vec(0.0f64..10.0, 4..15)) {
            let scores: Vec<StabilityScore> = x.iter().enumerate()
                .map(|(i, &m)| StabilityScore { process_id: i.to_string(), mse: m }).collect();
            let pools = select_pools_from_scores(scores, vec![], ClusterMethod::KMeans, 1).unwrap();
            let mean = |ids: &[String]| ids.iter().map(|id| x[id.parse::<usize>().unwrap()]).sum::<f64>() / ids.len() as f64;
            let all = x.iter().sum::<f64>() / x.len() as f64;
            prop_assert!(mean(&pools.p2) <= mean(&pools.p1) + 1e-12);
            prop_assert!(mean(&pools.p1) <= all + 1e-12);
            prop_assert!(pools.p2.iter().all(|p| pools.p1.contains(p)));
        }

        #[test]
        fn robust_score_resists_outliers(base in prop::collection::vec(-1.0f64..1.0, 40), spike in 20.0f64..100.0) {
            let mut bumped = base.clone();
            for v in bumped.iter_mut().take(5) {
                *v += spike;
            }
            let dr = (score_series(&bumped, true) - score_series(&base, true)).abs();
            let dn = (score_series(&bumped, false) - score_series(&base, false)).abs();
            prop_assert!(dr < dn);
        }

        #[test]
        fn shewhart_keeps_the_median_observation(vals in prop::collection::vec(-5.0f64..5.0, 5), c in 0.0f64..3.0) {
            let d = detrended(vals.iter().map(|&v| vec![Some(v)]).collect());
            let r = adaptive_shewhart_filter(&d, &d.ids, c).unwrap();
            let mut s = vals.clone();
            s.sort_by(f64::total_cmp);
            let med = s[2];
            let idx = vals.iter().position(|&v| v == med).unwrap();
            prop_assert!(r.filtered.eta_hat[idx][0].is_some());
        }
    }
}
