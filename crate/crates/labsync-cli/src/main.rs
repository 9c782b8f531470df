//! `labsync` command line: batch access to the simulator, device sync,
//! vibration decoding, lag estimation and the full verification pipeline.
//!
//! Machine-readable JSON goes to stdout; human-readable diagnostics go to
//! stderr. Exit codes: 0 success, 1 verification found mismatches or failed
//! quality checks, 2 input or usage error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use labsync::codec::{decode_all, DecodeThresholds, PulseTiming};
use labsync::error::Error;
use labsync::session::{
    fit_device_clocks, run_pipeline, run_pipeline_opts, SessionData, VerificationReport,
};
use labsync::sim::{simulate, ScenarioKind, ScenarioParams};
use labsync::xcorr::LagQuality;

#[derive(Parser)]
#[command(
    name = "labsync",
    version,
    about = "Verify vibration-encoded test metadata and synchronize IMU, motion-capture and force-plate recordings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    Gait,
    Balance,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Acceleration,
    Force,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic session into a directory.
    Simulate {
        #[arg(long, value_enum)]
        scenario: Scenario,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for the manifest, streams and ground truth.
        #[arg(long)]
        out: PathBuf,
        /// Parameter overrides as dotted key=value pairs, e.g.
        /// `--set duration=60 --set injected_lag.waist=0.05`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Fit per-device clock models from the two perturbation events.
    SyncDevices {
        #[arg(long)]
        manifest: PathBuf,
        /// Also write the models JSON to this path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode vibration frames from an accelerometer stream CSV.
    DecodeVibration {
        #[arg(long)]
        stream: PathBuf,
        /// Explicit thresholds as `lower,upper` (estimated when omitted).
        #[arg(long)]
        thresholds: Option<String>,
    },
    /// Estimate the residual lag for one test execution.
    EstimateLag {
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        manifest: PathBuf,
        /// Test label of the annotation to analyse.
        #[arg(long)]
        test: String,
    },
    /// Metadata verification only (no lag estimation).
    Verify {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Full pipeline: sync, decode, verify, estimate lags, emit report.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Simulate {
            scenario,
            seed,
            out,
            set,
        } => {
            let mut params = match scenario {
                Scenario::Gait => ScenarioParams::gait(seed),
                Scenario::Balance => ScenarioParams::balance(seed),
            };
            for kv in &set {
                apply_override(&mut params, kv).map_err(Error::InvalidScenario)?;
            }
            let session = simulate(&params)?;
            session.write_to_dir(&out)?;
            let summary = serde_json::json!({
                "out_dir": out,
                "manifest": "manifest.json",
                "ground_truth": "ground_truth.json",
                "codes": session.ground_truth.codes,
                "frame_onsets": session.ground_truth.frame_onsets,
                "injected_lag": session.ground_truth.injected_lag,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            eprintln!(
                "wrote {} streams to {}",
                session.streams.len(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::SyncDevices { manifest, out } => {
            let session = SessionData::load(&manifest)?;
            let (models, warnings) = fit_device_clocks(&session)?;
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            let json = serde_json::to_string_pretty(&models)?;
            if let Some(path) = out {
                std::fs::write(&path, &json)?;
                eprintln!("clock models written to {}", path.display());
            }
            println!("{json}");
            Ok(ExitCode::SUCCESS)
        }
        Command::DecodeVibration { stream, thresholds } => {
            let series = labsync::session::read_series_csv(&stream, None, 1.0)?;
            let magnitude = match series.channel_count() {
                1 => series,
                3 => series.magnitude()?,
                n => {
                    return Err(Error::ChannelCount {
                        expected: 3,
                        got: n,
                    });
                }
            };
            let thresholds = thresholds
                .map(|t| -> Result<DecodeThresholds, Error> {
                    let (lo, hi) = t.split_once(',').ok_or_else(|| {
                        Error::Manifest("--thresholds expects `lower,upper`".into())
                    })?;
                    let parse = |s: &str| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Manifest(format!("bad threshold value {s:?}")))
                    };
                    DecodeThresholds::new(parse(lo)?, parse(hi)?)
                })
                .transpose()?;
            let (frames, warnings) = decode_all(&magnitude, &PulseTiming::default(), thresholds)?;
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", serde_json::to_string_pretty(&frames)?);
            eprintln!("decoded {} frame(s)", frames.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::EstimateLag {
            method,
            manifest,
            test,
        } => {
            let session = SessionData::load(&manifest)?;
            let report = run_pipeline(&session)?;
            let entry = report
                .entries
                .iter()
                .find(|e| {
                    e.annotation
                        .as_ref()
                        .map(|a| a.test_label == test)
                        .unwrap_or(false)
                })
                .ok_or_else(|| {
                    Error::Manifest(format!("no annotation labelled {test:?} in the manifest"))
                })?;
            let lag = match method {
                Method::Acceleration => entry.lag_acceleration,
                Method::Force => entry.lag_force,
            }
            .ok_or_else(|| {
                Error::Manifest(format!(
                    "the required streams for the {} method are not available",
                    match method {
                        Method::Acceleration => "acceleration",
                        Method::Force => "force",
                    }
                ))
            })?;
            println!("{}", serde_json::to_string_pretty(&lag)?);
            eprintln!(
                "lag {:+.4} s (peak correlation {:.3}, quality {:?})",
                lag.lag, lag.peak_correlation, lag.quality
            );
            Ok(if lag.quality == LagQuality::Ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Verify { manifest, report } => {
            let session = SessionData::load(&manifest)?;
            let result = run_pipeline_opts(&session, false)?;
            emit_report(&result, report.as_deref())?;
            Ok(exit_for(&result))
        }
        Command::Run { manifest, report } => {
            let session = SessionData::load(&manifest)?;
            let result = run_pipeline(&session)?;
            emit_report(&result, report.as_deref())?;
            Ok(exit_for(&result))
        }
    }
}

fn emit_report(report: &VerificationReport, path: Option<&std::path::Path>) -> Result<(), Error> {
    let json = report.to_json();
    if let Some(path) = path {
        std::fs::write(path, &json)?;
        eprintln!("report written to {}", path.display());
    }
    println!("{json}");
    let s = &report.summary;
    eprintln!(
        "{} entries: {} match, {} mismatch, {} missing vibration, {} missing annotation",
        report.entries.len(),
        s.matches,
        s.mismatches,
        s.missing_vibration,
        s.missing_annotation
    );
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn exit_for(report: &VerificationReport) -> ExitCode {
    if report.has_problems() {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

/// Apply one `key=value` override onto the scenario parameters. Dotted
/// paths reach the per-device maps: `injected_lag.<id>`, `clock.<id>.skew`,
/// `clock.<id>.offset`.
fn apply_override(params: &mut ScenarioParams, kv: &str) -> Result<(), String> {
    let (key, value) = kv
        .split_once('=')
        .ok_or_else(|| format!("override {kv:?} is not of the form key=value"))?;
    let parse_f64 = |v: &str| {
        v.parse::<f64>()
            .map_err(|_| format!("override {key}: {v:?} is not a number"))
    };
    match key {
        "duration" => params.duration = parse_f64(value)?,
        "gait_frequency" => params.gait_frequency = parse_f64(value)?,
        "gait_amplitude" => params.gait_amplitude = parse_f64(value)?,
        "sway_frequency" => params.sway_frequency = parse_f64(value)?,
        "sway_amplitude" => params.sway_amplitude = parse_f64(value)?,
        "noise_accel" => params.noise_accel = parse_f64(value)?,
        "noise_gyro" => params.noise_gyro = parse_f64(value)?,
        "noise_force" => params.noise_force = parse_f64(value)?,
        "noise_marker" => params.noise_marker = parse_f64(value)?,
        "mass" => params.mass = parse_f64(value)?,
        "event_gap" => params.event_gap = Some(parse_f64(value)?),
        "test_code" => {
            params.test_code = value
                .parse::<u8>()
                .map_err(|_| format!("override test_code: {value:?} is not a 4-bit code"))?;
        }
        "test_label" => params.test_label = value.to_string(),
        "kind" => {
            params.kind = match value {
                "gait" => ScenarioKind::Gait,
                "balance" => ScenarioKind::Balance,
                other => return Err(format!("unknown scenario kind {other:?}")),
            };
        }
        _ => {
            if let Some(device) = key.strip_prefix("injected_lag.") {
                let entry = params
                    .devices
                    .get_mut(device)
                    .ok_or_else(|| format!("unknown device {device:?}"))?;
                entry.injected_lag = parse_f64(value)?;
            } else if let Some(rest) = key.strip_prefix("clock.") {
                let (device, field) = rest
                    .split_once('.')
                    .ok_or_else(|| format!("override {key:?}: expected clock.<id>.<field>"))?;
                let entry = params
                    .devices
                    .get_mut(device)
                    .ok_or_else(|| format!("unknown device {device:?}"))?;
                match field {
                    "skew" => entry.clock.skew = parse_f64(value)?,
                    "offset" => entry.clock.offset = parse_f64(value)?,
                    other => return Err(format!("unknown clock field {other:?}")),
                }
            } else {
                return Err(format!("unknown override key {key:?}"));
            }
        }
    }
    Ok(())
}
