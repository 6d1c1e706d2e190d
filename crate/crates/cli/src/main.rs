use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use panelwatch::config::PipelineConfig;
use panelwatch::design::{design_benchmark, BenchmarkConfig};
use panelwatch::fixture::FixtureSpec;
use panelwatch::panel::Panel;
use panelwatch::pipeline::{self, AlertOutcome, Bundle, MonitoringReport};
use panelwatch::{Error, Result};

/// Environment variable that caps the worker-thread count.
const THREADS_ENV: &str = "PANELWATCH_THREADS";

#[derive(Parser)]
#[command(name = "panelwatch", version, about = "CUSUM monitoring of time-series panels")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the offline stages and write a calibration bundle.
    Calibrate {
        #[arg(long)]
        panel: PathBuf,
        /// TOML configuration; `preset = "sunspot"` starts from the built-in preset.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monitor a panel against a bundle and write a report directory.
    Monitor {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep accumulating after an alert instead of restarting the chart.
        #[arg(long)]
        no_restart: bool,
    },
    /// Predict the size and form of a shift from the residuals ending at a time.
    Characterize {
        #[arg(long)]
        bundle: PathBuf,
        /// CSV with `time` and `residual` columns.
        #[arg(long)]
        residuals: PathBuf,
        /// Time value (as written in the `time` column) of the last residual.
        #[arg(long)]
        at: f64,
    },
    /// Write the four plot-data files of one process.
    ExportPlotdata {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        process: String,
        /// Output directory; defaults to `<report>/plotdata`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare bootstrap and parametric chart designs on simulated series.
    BenchAppendixB {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        replications: Option<usize>,
        /// Comma-separated ARL0 targets.
        #[arg(long, value_delimiter = ',')]
        targets: Option<Vec<f64>>,
        #[arg(long)]
        seed: Option<u64>,
        /// CSV output path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic panel CSV.
    GenFixture {
        /// TOML fixture spec; defaults when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// CSV output path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn config_thread_pool() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::config("cli-app", format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::config("cli-app", format!("could not size the thread pool: {e}")))
}

fn write_output(out: Option<&PathBuf>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, bytes).map_err(|e| Error::io(p, e)),
        None => std::io::stdout().write_all(bytes).map_err(|e| Error::io("<stdout>", e)),
    }
}

fn find_time(times: &[f64], at: f64) -> Result<usize> {
    times.iter().position(|&t| t == at).ok_or_else(|| {
        let (lo, hi) = (times.first().copied().unwrap_or(f64::NAN), times.last().copied().unwrap_or(f64::NAN));
        Error::data("cli-app", format!("time {at} not found in the residual file (times run from {lo} to {hi})"))
    })
}

fn run(cli: Cli) -> Result<()> {
    config_thread_pool()?;
    match cli.command {
        Command::Calibrate { panel, config, out } => {
            let cfg = PipelineConfig::load(&config)?;
            let panel = Panel::read_csv(&panel)?;
            let bundle = pipeline::calibrate(&panel, &cfg)?;
            bundle.write(&out)?;
            print!("{}", bundle.summary());
            info!("bundle written to {}", out.display());
        }
        Command::Monitor { panel, bundle, out, no_restart } => {
            let bundle = Bundle::read(&bundle)?;
            let panel = Panel::read_csv(&panel)?;
            let report = pipeline::monitor(&panel, &bundle, !no_restart && bundle.manifest.config.restart_on_alert)?;
            let mut stdout = std::io::stdout().lock();
            for (id, a) in report.alert_stream() {
                let what = match &a.outcome {
                    AlertOutcome::Characterized { delta, form, below_floor, .. } => {
                        format!("delta={delta:.3} form={form}{}", if *below_floor { " below_floor" } else { "" })
                    }
                    AlertOutcome::InputVectorRejected { valid_fraction } => {
                        format!("input_vector_rejected valid_fraction={valid_fraction:.2}")
                    }
                };
                writeln!(stdout, "alert time={} process={id} side={} {what}", a.time, a.side)
                    .map_err(|e| Error::io("<stdout>", e))?;
            }
            report.write(&out)?;
            info!("report written to {}", out.display());
        }
        Command::Characterize { bundle, residuals, at } => {
            let bundle = Bundle::read(&bundle)?;
            let (times, series) = pipeline::read_residual_csv(&residuals)?;
            let tau = find_time(&times, at)?;
            let outcome = pipeline::characterize_at(&series, tau, &bundle.characterizer()?)?;
            let text = serde_json::to_string_pretty(&outcome).map_err(|e| Error::json("characterization", e))?;
            println!("{text}");
        }
        Command::ExportPlotdata { report, process, out } => {
            let rep = MonitoringReport::read(&report)?;
            let dir = out.unwrap_or_else(|| report.join("plotdata"));
            let files = pipeline::export_plotdata(&rep, &process, &dir)?;
            for f in [files.eta, files.residuals, files.cusum, files.alerts] {
                println!("{}", f.display());
            }
        }
        Command::BenchAppendixB { config, replications, targets, seed, out } => {
            let mut cfg = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                    toml::from_str::<BenchmarkConfig>(&text)
                        .map_err(|e| Error::config("cli-app", format!("invalid benchmark config: {}", e.message())))?
                }
                None => BenchmarkConfig::default(),
            };
            if let Some(b) = replications {
                cfg.replications = b;
            }
            if let Some(t) = targets {
                cfg.targets = t;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let table = design_benchmark(&cfg)?;
            let mut csv = Vec::new();
            table.to_csv_writer(&mut csv).map_err(|e| Error::io("<csv>", e))?;
            write_output(out.as_ref(), &csv)?;
        }
        Command::GenFixture { spec, out } => {
            let spec = match spec {
                Some(p) => FixtureSpec::load(&p)?,
                None => FixtureSpec::default(),
            };
            let panel = spec.generate()?;
            let mut csv = Vec::new();
            panel.to_csv_writer(&mut csv).map_err(|e| Error::io("<csv>", e))?;
            write_output(out.as_ref(), &csv)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("hint: {}", e.hint());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
