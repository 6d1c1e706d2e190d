//! Small order-statistic helpers shared by the robust estimators.

/// Median of a non-empty slice; the slice is reordered in place.
pub(crate) fn median_mut(values: &mut [f64]) -> f64 {
    quantile_mut(values, 0.5)
}

/// Linear-interpolation quantile (the "type 7" definition used by R and
/// numpy). Reorders `values`; panics on an empty slice.
pub(crate) fn quantile_mut(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    values.sort_by(f64::total_cmp);
    quantile_sorted(values, q)
}

pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Interquartile range (Q3 - Q1) with type-7 quantiles.
pub(crate) fn iqr_sorted(sorted: &[f64]) -> f64 {
    quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25)
}

/// Nearest-rank quantile of integer run lengths: the smallest value whose
/// empirical CDF reaches `q`.
pub(crate) fn nearest_rank(sorted: &[usize], q: f64) -> usize {
    let n = sorted.len();
    let rank = (q.clamp(0.0, 1.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Lag-`lag` sample autocorrelation (biased autocovariance estimator).
pub fn autocorrelation(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    if n <= lag {
        return f64::NAN;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let cov: f64 = x[..n - lag]
        .iter()
        .zip(&x[lag..])
        .map(|(a, b)| (a - mean) * (b - mean))
        .sum();
    cov / var
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median_mut(&mut [6.0, 2.0, 4.0]), 4.0);
        assert_eq!(median_mut(&mut [2.0, 100.0, 4.0, 6.0]), 5.0);
    }

    #[test]
    fn type7_quartiles() {
        let mut v = [0.0, 0.1, -0.1, 5.0];
        v.sort_by(f64::total_cmp);
        assert!((quantile_sorted(&v, 0.25) + 0.025).abs() < 1e-12);
        assert!((quantile_sorted(&v, 0.75) - 1.325).abs() < 1e-12);
    }

    #[test]
    fn nearest_rank_edges() {
        let v = [1, 2, 3, 4];
        assert_eq!(nearest_rank(&v, 0.0), 1);
        assert_eq!(nearest_rank(&v, 0.5), 2);
        assert_eq!(nearest_rank(&v, 0.51), 3);
        assert_eq!(nearest_rank(&v, 1.0), 4);
    }
}
