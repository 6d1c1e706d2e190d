//! Labelled shift instances for training the characterization models.
//!
//! Each instance is a bootstrap series of in-control residuals with one
//! shift superposed. Jumps and oscillations start at `t = m`, trends at
//! `t = 0`. The chart starts from its zero state at a random `s ∈ [m, 2m]`
//! and the stored input is the `m` values ending at its first alert.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::MODULE;
use crate::cusum::CalibratedChart;
use crate::design::arl::{first_alert, Limits};
use crate::design::bootstrap::BootstrapSource;
use crate::error::{Error, Result};
use crate::rng::replication_rng;
use crate::shift::{ShiftForm, ShiftSpec};

/// Give up on an instance after this many draws without an alert.
const MAX_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisSettings {
    pub m: usize,
    pub delta_min: f64,
    pub n_instances: usize,
    /// Scale of the half-normal excess `|δ| − δ_min`.
    pub half_normal_scale: f64,
    /// Oscillation frequency η in `sin(ηπt)δ`; `None` means `1/m`.
    pub eta_freq: Option<f64>,
    /// Series run this many multiples of `m` past the chart start.
    pub horizon_multiple: usize,
    pub seed: u64,
}

impl Default for SynthesisSettings {
    fn default() -> Self {
        SynthesisSettings {
            m: 25,
            delta_min: 1.5,
            n_instances: 1000,
            half_normal_scale: 2.0,
            eta_freq: None,
            horizon_multiple: 10,
            seed: 0,
        }
    }
}

impl SynthesisSettings {
    pub fn eta(&self) -> f64 {
        self.eta_freq.unwrap_or(1.0 / self.m.max(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub values: Vec<f64>,
    pub shift: ShiftSpec,
    pub start: usize,
    pub alert_time: usize,
}

impl LabeledInstance {
    pub fn delta(&self) -> f64 {
        self.shift.delta
    }

    pub fn form(&self) -> ShiftForm {
        self.shift.form
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub instances: Vec<LabeledInstance>,
    /// Draws discarded because the chart never alerted.
    pub redraws: usize,
}

impl TrainingSet {
    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.instances.iter().map(|i| i.values.clone()).collect()
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.instances.iter().map(LabeledInstance::delta).collect()
    }

    pub fn forms(&self) -> Vec<usize> {
        self.instances.iter().map(|i| i.form().index()).collect()
    }

    pub fn redraw_rate(&self) -> f64 {
        let total = self.instances.len() + self.redraws;
        if total == 0 { 0.0 } else { self.redraws as f64 / total as f64 }
    }
}

fn draw_shift<R: Rng + ?Sized>(settings: &SynthesisSettings, rng: &mut R) -> ShiftSpec {
    let form = ShiftForm::ALL[rng.random_range(0..3)];
    let excess: f64 = Normal::new(0.0, settings.half_normal_scale).map_or(0.0, |n| n.sample(rng));
    let magnitude = settings.delta_min + excess.abs();
    let delta = if rng.random_bool(0.5) { magnitude } else { -magnitude };
    let onset = if form == ShiftForm::Trend { 0 } else { settings.m };
    ShiftSpec { form, delta, onset, eta_freq: settings.eta() }
}

/// One instance, or `None` after [`MAX_ATTEMPTS`] draws; the second value
/// counts draws without an alert.
fn draw_instance(
    source: &BootstrapSource,
    limits: &Limits,
    settings: &SynthesisSettings,
    i: usize,
) -> (Option<LabeledInstance>, usize) {
    let m = settings.m;
    let mut rng = replication_rng(settings.seed, i as u64);
    for attempt in 0..MAX_ATTEMPTS {
        let shift = draw_shift(settings, &mut rng);
        let start = rng.random_range(m..=2 * m);
        let len = start + settings.horizon_multiple * m;
        let series: Vec<f64> = source.resample(len, &mut rng).iter().enumerate().map(|(t, x)| x + shift.value_at(t)).collect();
        if let Some((rl, _)) = first_alert(series[start..].iter().copied(), limits) {
            let tau = start + rl - 1;
            let values = series[tau + 1 - m..=tau].to_vec();
            return (Some(LabeledInstance { values, shift, start, alert_time: tau }), attempt);
        }
    }
    (None, MAX_ATTEMPTS)
}

pub fn synthesize_training_set(
    source: &BootstrapSource,
    chart: &CalibratedChart,
    settings: &SynthesisSettings,
) -> Result<TrainingSet> {
    if settings.m < 2 {
        return Err(Error::config(MODULE, format!("input window m must be >= 2, got {}", settings.m)));
    }
    if !(settings.delta_min > 0.0) || !(settings.half_normal_scale >= 0.0) {
        return Err(Error::config(MODULE, "delta_min must be > 0 and the half-normal scale >= 0"));
    }
    if settings.horizon_multiple == 0 || settings.n_instances == 0 {
        return Err(Error::config(MODULE, "horizon_multiple and n_instances must be positive"));
    }
    chart.validate()?;
    let limits = Limits { k: chart.k, h_plus: chart.h_plus, h_minus: chart.h_minus };
    let draws: Vec<(Option<LabeledInstance>, usize)> =
        (0..settings.n_instances).into_par_iter().map(|i| draw_instance(source, &limits, settings, i)).collect();
    let redraws = draws.iter().map(|d| d.1).sum();
    let failed = draws.iter().filter(|d| d.0.is_none()).count();
    let set = TrainingSet { instances: draws.into_iter().filter_map(|d| d.0).collect(), redraws };
    if failed > 0 || set.redraw_rate() > 0.5 {
        return Err(Error::data(
            MODULE,
            format!(
                "{:.0}% of synthesized instances never alerted; delta_min = {} is too small for the chart (k = {}, h+ = {})",
                set.redraw_rate() * 100.0,
                settings.delta_min,
                chart.k,
                chart.h_plus
            ),
        ));
    }
    Ok(set)
}

/// First `⌊fraction·n⌉` instances train, the rest test. Instances are drawn
/// from independent streams, so an index split keeps the two sets disjoint.
pub fn split_train_test(set: &TrainingSet, train_fraction: f64) -> (Vec<LabeledInstance>, Vec<LabeledInstance>) {
    let n = set.instances.len();
    let cut = ((n as f64) * train_fraction.clamp(0.0, 1.0)).round() as usize;
    (set.instances[..cut].to_vec(), set.instances[cut..].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::bootstrap::ResamplingMode;
    use rand::SeedableRng;
    use rand_distr::StandardNormal;

    fn gaussian_source(seed: u64) -> BootstrapSource {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..20_000).map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect();
        BootstrapSource::from_segments(vec![x], ResamplingMode::MovingBlock { block_length: 27 }).unwrap()
    }

    #[test]
    fn instances_follow_onset_rules() {
        let src = gaussian_source(1);
        let chart = CalibratedChart::symmetric(0.75, 3.5).unwrap();
        let s = SynthesisSettings { n_instances: 300, seed: 4, ..Default::default() };
        let set = synthesize_training_set(&src, &chart, &s).unwrap();
        assert_eq!(set.instances.len(), 300);
        for inst in &set.instances {
            assert_eq!(inst.values.len(), 25);
            assert!(inst.delta().abs() >= 1.5);
            assert!((25..=50).contains(&inst.start));
            assert!(inst.alert_time >= inst.start);
            let onset = if inst.form() == ShiftForm::Trend { 0 } else { 25 };
            assert_eq!(inst.shift.onset, onset);
            assert_eq!(inst.shift.eta_freq, 1.0 / 25.0);
        }
        let again = synthesize_training_set(&src, &chart, &s).unwrap();
        assert_eq!(set, again);
    }

    #[test]
    fn planted_jump_shows_in_late_window_entries() {
        let src = gaussian_source(2);
        let chart = CalibratedChart::symmetric(0.75, 3.5).unwrap();
        let s = SynthesisSettings { n_instances: 1000, seed: 5, half_normal_scale: 0.0, delta_min: 2.0, ..Default::default() };
        let set = synthesize_training_set(&src, &chart, &s).unwrap();
        let jumps: Vec<&LabeledInstance> = set.instances.iter().filter(|i| i.form() == ShiftForm::Jump && i.delta() > 0.0).collect();
        assert!(jumps.len() > 100);
        // The window ends at the alert and starts after the onset once s ≥ m.
        let late: Vec<f64> = jumps.iter().flat_map(|i| i.values[20..].iter().copied()).collect();
        let mean = late.iter().sum::<f64>() / late.len() as f64;
        assert!((mean - 2.0).abs() < 0.5, "{mean}");
    }

    #[test]
    fn undetectable_shifts_error() {
        let src = gaussian_source(3);
        let chart = CalibratedChart::symmetric(0.75, 1e6).unwrap();
        let s = SynthesisSettings { n_instances: 5, ..Default::default() };
        let err = synthesize_training_set(&src, &chart, &s).unwrap_err();
        assert!(err.to_string().contains("too small"));
    }

    #[test]
    fn balanced_forms() {
        let src = gaussian_source(6);
        let chart = CalibratedChart::symmetric(0.75, 3.5).unwrap();
        let s = SynthesisSettings { n_instances: 3000, seed: 8, ..Default::default() };
        let set = synthesize_training_set(&src, &chart, &s).unwrap();
        for f in ShiftForm::ALL {
            let share = set.instances.iter().filter(|i| i.form() == f).count() as f64 / 3000.0;
            assert!((share - 1.0 / 3.0).abs() < 0.03, "{f}: {share}");
        }
        let (train, test) = split_train_test(&set, 0.8);
        assert_eq!((train.len(), test.len()), (2400, 600));
    }
}
