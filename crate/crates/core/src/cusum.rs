//! Two-sided CUSUM on standardized residuals.
//!
//! ```text
//! C⁺ⱼ = max(0, C⁺ⱼ₋₁ + ε̂ − k)
//! C⁻ⱼ = min(0, C⁻ⱼ₋₁ + ε̂ + k)
//! ```
//!
//! An alert fires when `C⁺ > h⁺` or `C⁻ < h⁻`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pattern::ResidualSeries;

const MODULE: &str = "cusum-chart";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "max_gap")]
pub enum GapPolicy {
    /// Zero both statistics at every missing value.
    ResetAlways,
    /// Hold the state across gaps of at most this many samples.
    PropagateUpTo(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub arl0_target: f64,
    pub replications: usize,
    pub block_length: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedChart {
    pub k: f64,
    pub h_plus: f64,
    pub h_minus: f64,
    pub gap_policy: GapPolicy,
    pub provenance: Option<Provenance>,
}

impl CalibratedChart {
    pub fn new(k: f64, h_plus: f64, h_minus: f64, gap_policy: GapPolicy) -> Result<Self> {
        let chart = CalibratedChart {
            k,
            h_plus,
            h_minus,
            gap_policy,
            provenance: None,
        };
        chart.validate()?;
        Ok(chart)
    }

    pub fn symmetric(k: f64, h: f64) -> Result<Self> {
        Self::new(k, h, -h, GapPolicy::ResetAlways)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) {
            return Err(Error::config(MODULE, format!("allowance k must be > 0, got {}", self.k)));
        }
        if !(self.h_minus < 0.0 && self.h_plus > 0.0) {
            return Err(Error::config(
                MODULE,
                format!("limits must satisfy h- < 0 < h+, got ({}, {})", self.h_minus, self.h_plus),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Upper,
    Lower,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Upper => "upper",
            Side::Lower => "lower",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ChartState {
    pub c_plus: f64,
    pub c_minus: f64,
    /// Steps with `C⁺ > 0` since it last hit zero.
    pub n_plus: usize,
    /// Steps with `C⁻ < 0` since it last hit zero.
    pub n_minus: usize,
    pub j: usize,
    pub gap_run: usize,
}

impl ChartState {
    pub fn reset(&mut self) {
        *self = ChartState { j: self.j, ..ChartState::default() };
    }
}

pub fn cusum_step(state: ChartState, residual: f64, k: f64) -> ChartState {
    let c_plus = (state.c_plus + residual - k).max(0.0);
    let c_minus = (state.c_minus + residual + k).min(0.0);
    ChartState {
        c_plus,
        c_minus,
        n_plus: if c_plus > 0.0 { state.n_plus + 1 } else { 0 },
        n_minus: if c_minus < 0.0 { state.n_minus + 1 } else { 0 },
        j: state.j + 1,
        gap_run: 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlertEvent {
    /// Index into the monitored series.
    pub time: usize,
    pub side: Side,
    pub statistic: f64,
    pub n_nonzero: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartRun {
    pub alerts: Vec<AlertEvent>,
    /// Statistic values after each step (after any reset at that step).
    pub c_plus: Vec<f64>,
    pub c_minus: Vec<f64>,
}

/// Alerts raised by `state` against the chart limits, upper side first.
pub(crate) fn check(state: &ChartState, h_plus: f64, h_minus: f64, time: usize) -> [Option<AlertEvent>; 2] {
    [
        (state.c_plus > h_plus).then_some(AlertEvent {
            time,
            side: Side::Upper,
            statistic: state.c_plus,
            n_nonzero: state.n_plus,
        }),
        (state.c_minus < h_minus).then_some(AlertEvent {
            time,
            side: Side::Lower,
            statistic: state.c_minus,
            n_nonzero: state.n_minus,
        }),
    ]
}

pub fn run_chart(residuals: &ResidualSeries, chart: &CalibratedChart, restart_on_alert: bool) -> ChartRun {
    run_chart_values(&residuals.values, chart, restart_on_alert)
}

pub fn run_chart_values(values: &[Option<f64>], chart: &CalibratedChart, restart_on_alert: bool) -> ChartRun {
    let mut state = ChartState::default();
    let mut alerts = Vec::new();
    let mut c_plus = Vec::with_capacity(values.len());
    let mut c_minus = Vec::with_capacity(values.len());
    for (t, v) in values.iter().enumerate() {
        match v {
            Some(x) => {
                state = cusum_step(state, *x, chart.k);
                let fired = check(&state, chart.h_plus, chart.h_minus, t);
                let any = fired.iter().any(Option::is_some);
                alerts.extend(fired.into_iter().flatten());
                if any && restart_on_alert {
                    state.reset();
                }
            }
            None => {
                state.gap_run += 1;
                let reset = match chart.gap_policy {
                    GapPolicy::ResetAlways => true,
                    GapPolicy::PropagateUpTo(g) => state.gap_run > g,
                };
                if reset {
                    let gap_run = state.gap_run;
                    state.reset();
                    state.gap_run = gap_run;
                }
            }
        }
        c_plus.push(state.c_plus);
        c_minus.push(state.c_minus);
    }
    ChartRun {
        alerts,
        c_plus,
        c_minus,
    }
}

/// Rough shift size at an alert, in residual standard-deviation units:
/// `k + C⁺/N⁺` on the upper side and `C⁻/N⁻ − k` on the lower side.
///
/// For a constant shift `δ` beyond the allowance, `C⁻ = n(δ + k)` after `n`
/// nonzero steps, so the lower form returns `δ` exactly.
pub fn montgomery_estimate(alert: &AlertEvent, k: f64) -> Result<f64> {
    if alert.n_nonzero == 0 {
        return Err(Error::data(MODULE, "shift estimate undefined: statistic never left zero"));
    }
    let n = alert.n_nonzero as f64;
    Ok(match alert.side {
        Side::Upper => k + alert.statistic / n,
        Side::Lower => alert.statistic / n - k,
    })
}

/// The lower-side estimate in its commonly printed form `−k − C⁻/N⁻`. It
/// is kept only to document that it does not recover planted shifts; use
/// [`montgomery_estimate`].
pub fn montgomery_estimate_printed(alert: &AlertEvent, k: f64) -> Result<f64> {
    match alert.side {
        Side::Upper => montgomery_estimate(alert, k),
        Side::Lower => {
            if alert.n_nonzero == 0 {
                return Err(Error::data(MODULE, "shift estimate undefined: statistic never left zero"));
            }
            Ok(-k - alert.statistic / alert.n_nonzero as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chart(k: f64, h: f64) -> CalibratedChart {
        CalibratedChart::symmetric(k, h).unwrap()
    }

    fn series(v: &[Option<f64>]) -> ResidualSeries {
        ResidualSeries { process_id: "x".into(), values: v.to_vec() }
    }

    #[test]
    fn step_examples() {
        let mut s = ChartState::default();
        let mut ups = vec![];
        for _ in 0..3 {
            s = cusum_step(s, 1.0, 0.5);
            ups.push(s.c_plus);
            assert_eq!(s.c_minus, 0.0);
        }
        assert_eq!(ups, vec![0.5, 1.0, 1.5]);

        let mut s = ChartState::default();
        for _ in 0..5 {
            s = cusum_step(s, 0.0, 0.3);
            assert_eq!((s.c_plus, s.c_minus), (0.0, 0.0));
        }

        let s1 = cusum_step(ChartState::default(), -2.0, 0.75);
        let s2 = cusum_step(s1, -2.0, 0.75);
        assert_eq!((s1.c_minus, s2.c_minus), (-1.25, -2.5));
        assert_eq!(s2.n_minus, 2);
    }

    #[test]
    fn run_examples() {
        let run = run_chart(&series(&[Some(0.0); 10]), &chart(0.5, 1.0), true);
        assert!(run.alerts.is_empty());
        assert!(run.c_plus.iter().chain(&run.c_minus).all(|&c| c == 0.0));

        let run = run_chart(&series(&[Some(3.0); 3]), &chart(0.75, 4.0), false);
        assert_eq!(run.c_plus[..2], [2.25, 4.5]);
        assert_eq!(run.alerts[0].time, 1);
        assert_eq!(run.alerts[0].side, Side::Upper);

        let run = run_chart(&series(&[Some(3.0), None, Some(3.0), Some(3.0)]), &chart(0.75, 4.0), false);
        assert_eq!(run.c_plus, vec![2.25, 0.0, 2.25, 4.5]);
        assert_eq!(run.alerts.len(), 1);
        assert_eq!(run.alerts[0].time, 3);
    }

    #[test]
    fn short_gaps_propagate() {
        let mut c = chart(0.75, 4.0);
        c.gap_policy = GapPolicy::PropagateUpTo(1);
        let run = run_chart(&series(&[Some(3.0), None, Some(3.0)]), &c, false);
        assert_eq!(run.c_plus, vec![2.25, 2.25, 4.5]);
        assert_eq!(run.alerts[0].time, 2);
        let run = run_chart(&series(&[Some(3.0), None, None, Some(3.0)]), &c, false);
        assert_eq!(run.c_plus, vec![2.25, 2.25, 0.0, 2.25]);
        assert!(run.alerts.is_empty());
    }

    #[test]
    fn restart_consumes_alert_observation() {
        let run = run_chart(&series(&[Some(3.0); 4]), &chart(0.75, 4.0), true);
        assert_eq!(run.c_plus, vec![2.25, 0.0, 2.25, 0.0]);
        assert_eq!(run.alerts.iter().map(|a| a.time).collect::<Vec<_>>(), vec![1, 3]);
    }

    #[test]
    fn montgomery_examples() {
        let up = AlertEvent { time: 0, side: Side::Upper, statistic: 8.5, n_nonzero: 4 };
        assert_eq!(montgomery_estimate(&up, 0.75).unwrap(), 2.875);
        let lo = AlertEvent { time: 0, side: Side::Lower, statistic: -11.0, n_nonzero: 4 };
        assert_eq!(montgomery_estimate(&lo, 0.75).unwrap(), -3.5);
        let none = AlertEvent { n_nonzero: 0, ..up };
        assert!(montgomery_estimate(&none, 0.75).is_err());
    }

    #[test]
    fn constant_shift_is_recovered_exactly() {
        // Constant-shift oracle: ε̂ ≡ δ gives C = n(δ ∓ k) after n steps.
        for (delta, k) in [(2.0, 0.75), (-2.0, 0.75), (3.0, 0.5), (-1.25, 0.25)] {
            let run = run_chart_values(&vec![Some(delta); 50], &chart(k, 6.0), false);
            let a = run.alerts[0];
            assert_eq!(montgomery_estimate(&a, k).unwrap(), delta);
        }
        // The printed lower form returns +0.5 for δ = −2, k = 0.75.
        let run = run_chart_values(&vec![Some(-2.0); 50], &chart(0.75, 6.0), false);
        assert_eq!(montgomery_estimate_printed(&run.alerts[0], 0.75).unwrap(), 0.5);
    }

    #[test]
    fn invalid_limits() {
        assert!(CalibratedChart::new(0.5, 1.0, 1.0, GapPolicy::ResetAlways).is_err());
        assert!(CalibratedChart::new(0.0, 1.0, -1.0, GapPolicy::ResetAlways).is_err());
    }

    proptest! {
        #[test]
        fn statistics_keep_their_sign(x in prop::collection::vec(-5.0f64..5.0, 1..60), k in 0.01f64..2.0) {
            let mut s = ChartState::default();
            for v in x {
                s = cusum_step(s, v, k);
                prop_assert!(s.c_plus >= 0.0 && s.c_minus <= 0.0);
            }
        }

        #[test]
        fn upper_statistic_is_monotone(x in prop::collection::vec(-3.0f64..3.0, 1..40), bump in prop::collection::vec(0.0f64..2.0, 40)) {
            let (mut a, mut b) = (ChartState::default(), ChartState::default());
            for (v, d) in x.iter().zip(&bump) {
                a = cusum_step(a, *v, 0.5);
                b = cusum_step(b, v + d, 0.5);
                prop_assert!(b.c_plus >= a.c_plus);
            }
        }

        #[test]
        fn constant_shift_identity(delta in 0.6f64..5.0, n in 1usize..30) {
            let k = 0.5;
            let mut s = ChartState::default();
            for _ in 0..n {
                s = cusum_step(s, delta, k);
            }
            prop_assert!((s.c_plus - n as f64 * (delta - k)).abs() < 1e-9 * n as f64);
            prop_assert_eq!(s.n_plus, n);
        }

        #[test]
        fn gap_policies_agree_without_gaps(x in prop::collection::vec(-3.0f64..3.0, 1..80), g in 0usize..10) {
            let v: Vec<Option<f64>> = x.into_iter().map(Some).collect();
            let a = chart(0.5, 2.0);
            let mut b = a.clone();
            b.gap_policy = GapPolicy::PropagateUpTo(g);
            prop_assert_eq!(run_chart_values(&v, &a, true).alerts, run_chart_values(&v, &b, true).alerts);
        }

        #[test]
        fn restart_keeps_first_alert(x in prop::collection::vec(prop::option::weighted(0.9, -3.0f64..3.0), 1..80)) {
            let c = chart(0.5, 2.0);
            let a = run_chart_values(&x, &c, true).alerts.first().copied();
            let b = run_chart_values(&x, &c, false).alerts.first().copied();
            prop_assert_eq!(a, b);
        }
    }
}
