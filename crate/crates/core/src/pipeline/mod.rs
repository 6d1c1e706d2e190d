//! End-to-end calibration and monitoring.
//!
//! [`calibrate`] runs the offline stages on a historical panel and returns a
//! [`Bundle`] that is written as a directory of versioned files. [`monitor`]
//! replays a panel against a bundle with causal (left-sided) estimates and
//! produces a [`MonitoringReport`].

mod bundle;
mod export;
mod monitor;

use log::info;

pub use bundle::{Bundle, Manifest, SvmMetrics, BUNDLE_FORMAT_VERSION};
pub use export::{export_plotdata, read_residual_csv, PlotFiles};
pub use monitor::{
    characterize_at, monitor, AlertOutcome, AlertRecord, Membership, MonitoringReport, ProcessReport,
    REPORT_FORMAT_VERSION,
};

use crate::config::PipelineConfig;
use crate::cusum::CalibratedChart;
use crate::design::{
    calibrate_control_limit, estimate_shift_size, optimize_allowance, BootstrapSource, DesignReport, Limits,
    ResamplingMode,
};
use crate::error::{Error, Result};
use crate::panel::{decompose, Alignment, DetrendedPanel, Panel};
use crate::pattern::{estimate_ic_pattern, standardize, ResidualSeries};
use crate::rng::derive_seed;
use crate::selection::{adaptive_shewhart_filter, select_pools, FilterReport};
use crate::svm::{
    evaluate_classifier, evaluate_regressor, select_window_m_for_chart, split_train_test, synthesize_training_set,
    train_svc, train_svr, SynthesisSettings, TrainedModel, TrainingMetadata,
};

const MODULE: &str = "cli-app";

/// Residual points with `σ̂₀` at or below this are treated as missing.
pub const SIGMA_FLOOR: f64 = 1e-12;

pub(crate) fn resampling_mode(block_length: usize) -> ResamplingMode {
    if block_length <= 1 {
        ResamplingMode::SingleObservation
    } else {
        ResamplingMode::MovingBlock { block_length }
    }
}

fn pick(residuals: &[ResidualSeries], keep: impl Fn(&str) -> bool) -> Vec<ResidualSeries> {
    residuals.iter().filter(|r| keep(&r.process_id)).cloned().collect()
}

/// The adaptive Shewhart filter on `pool`, or an untouched copy when the
/// configuration turns it off.
fn shewhart(detrended: &DetrendedPanel, pool: &[String], config: &PipelineConfig) -> Result<FilterReport> {
    if config.shewhart_filter {
        adaptive_shewhart_filter(detrended, pool, config.iqr_multiple)
    } else {
        Ok(FilterReport { filtered: detrended.clone(), removed: 0, examined: 0 })
    }
}

/// Runs every offline stage on a historical panel.
pub fn calibrate(panel: &Panel, config: &PipelineConfig) -> Result<Bundle> {
    config.validate()?;
    let seed = config.seed;

    let detrended = decompose(panel, &config.decomposition(), Alignment::Centered)?;
    let pools = select_pools(
        &detrended,
        config.cluster_method,
        config.robust_score,
        config.min_obs,
        derive_seed(seed, "pools"),
    )?;
    info!("pools: |P1| = {}, |P2| = {}", pools.p1.len(), pools.p2.len());
    let filter = shewhart(&detrended, &pools.p1, config)?;
    let pattern = estimate_ic_pattern(&filter.filtered, &pools.p2, config.pattern(), Alignment::Centered)?;
    let ic_residuals = standardize(&filter.filtered, &pattern, SIGMA_FLOOR)?;
    let mode = resampling_mode(config.block_length);
    let ic = BootstrapSource::from_residuals(&pick(&ic_residuals.residuals, |id| pools.in_p1(id)), mode)?;

    let settings = config.calibration();
    let gap_policy = config.gap_policy();

    let shift_size = match config.delta_min.value() {
        Some(_) => None,
        None => {
            let all = standardize(&detrended, &pattern, SIGMA_FLOOR)?;
            let oc_series = pick(&all.residuals, |id| !pools.in_p1(id));
            if oc_series.is_empty() {
                return Err(Error::data(MODULE, "delta_min = \"auto\" needs processes outside P1"));
            }
            let oc = BootstrapSource::from_residuals(&oc_series, mode)?;
            let result = estimate_shift_size(&ic, &oc, &config.shift_size())?;
            info!("shift size converged to {:.4} ({} outer iterations)", result.delta, result.steps.len());
            Some(result)
        }
    };
    let delta_min = config.delta_min.value().unwrap_or_else(|| shift_size.as_ref().map_or(f64::NAN, |s| s.delta));

    let (design, allowance) = match config.k.value() {
        Some(k) => (calibrate_control_limit(&ic, k, &settings, gap_policy)?, None),
        None => {
            let r = optimize_allowance(&ic, delta_min, &config.k_grid, &settings, gap_policy)?;
            (r.design, Some(r.candidates))
        }
    };
    let chart = design.chart.clone();
    info!("chart: k = {}, h+ = {:.4}, h- = {:.4}, ARL0 = {:.1}", chart.k, chart.h_plus, chart.h_minus, design.achieved_arl0);
    let mut report = DesignReport::new(mode, &settings, &design);
    report.shift_size = shift_size;
    report.allowance = allowance;

    let window = match config.m.value() {
        Some(_) => None,
        None => {
            let limits = Limits { k: chart.k, h_plus: chart.h_plus, h_minus: chart.h_minus };
            Some(select_window_m_for_chart(&ic, &limits, delta_min, config.window_quantile, &settings.monte_carlo(), None)?)
        }
    };
    let m = config.m.value().or(window.as_ref().map(|w| w.m)).unwrap_or(2).max(2);

    let (svr, svc, metrics) = train_models(&ic, &chart, config, delta_min, m)?;
    Ok(Bundle {
        manifest: Manifest {
            format_version: BUNDLE_FORMAT_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            process_ids: panel.ids().to_vec(),
            n_times: panel.n_times(),
            delta_min,
            m,
            chart,
            pools,
            filter_removed: filter.removed,
            filter_examined: filter.examined,
        },
        times: panel.times().to_vec(),
        pattern,
        design: report,
        window,
        svr,
        svc,
        metrics,
    })
}

fn train_models(
    ic: &BootstrapSource,
    chart: &CalibratedChart,
    config: &PipelineConfig,
    delta_min: f64,
    m: usize,
) -> Result<(TrainedModel, TrainedModel, SvmMetrics)> {
    let synth_seed = derive_seed(config.seed, "synthesis");
    let settings = SynthesisSettings {
        m,
        delta_min,
        n_instances: config.n_instances,
        half_normal_scale: config.half_normal_scale,
        seed: synth_seed,
        ..SynthesisSettings::default()
    };
    let set = synthesize_training_set(ic, chart, &settings)?;
    let (train, test) = split_train_test(&set, config.train_fraction);
    if train.len() < 2 || test.is_empty() {
        return Err(Error::config(MODULE, "train_fraction leaves an empty training or test set"));
    }
    let svm = config.svm_config(m);
    let x: Vec<Vec<f64>> = train.iter().map(|i| i.values.clone()).collect();
    info!("training SVR and SVC on {} instances (m = {m})", x.len());
    let mut svr = train_svr(&x, &train.iter().map(|i| i.delta()).collect::<Vec<_>>(), &svm)?;
    let mut svc = train_svc(&x, &train.iter().map(|i| i.form().index()).collect::<Vec<_>>(), 3, &svm)?;
    let meta = TrainingMetadata { n_train: train.len(), n_test: test.len(), seed: Some(synth_seed) };
    svr.metadata = meta.clone();
    svc.metadata = meta;

    let delta_pred = test.iter().map(|i| svr.predict_value(&i.values)).collect::<Result<Vec<_>>>()?;
    let form_pred = test.iter().map(|i| svc.predict_class(&i.values)).collect::<Result<Vec<_>>>()?;
    let regression = evaluate_regressor(&test.iter().map(|i| i.delta()).collect::<Vec<_>>(), &delta_pred)?;
    let names: Vec<&str> = crate::shift::ShiftForm::ALL.iter().map(|f| f.name()).collect();
    let classification = evaluate_classifier(&test.iter().map(|i| i.form().index()).collect::<Vec<_>>(), &form_pred, &names)?;
    let metrics = SvmMetrics {
        n_train: train.len(),
        n_test: test.len(),
        redraw_rate: set.redraw_rate(),
        regression,
        classification,
    };
    Ok((svr, svc, metrics))
}
