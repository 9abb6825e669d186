use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Error};
use clap::{Parser, Subcommand};
use log::info;

use radar_autocal_core::calibfile::{read_calibration_file, write_calibration_file};
use radar_autocal_core::config::PipelineConfig;
use radar_autocal_core::eval::{metrics_json, write_diagnostics};
use radar_autocal_core::ingest::{load_session, read_radar_log};
use radar_autocal_core::pipeline::{self, format_report, PipelineError};
use radar_autocal_core::sim::{generate_scenario, write_scenario, ScenarioConfig};

#[derive(Parser)]
#[command(name = "radar-autocal", version, about = "Extrinsic calibration of roadside radars from vehicle passes")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the sensor pose from a recording.
    Calibrate {
        #[arg(long)]
        radar: PathBuf,
        #[arg(long)]
        pose: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override a config value, e.g. `--set cluster.eps=2.5`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Score a calibration against a second recording.
    Evaluate {
        #[arg(long)]
        radar: PathBuf,
        #[arg(long)]
        pose: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Generate a synthetic recording with known truth.
    Simulate {
        /// Scenario TOML; the built-in canonical scenario when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print summary statistics of a radar log.
    Inspect {
        #[arg(long)]
        radar: PathBuf,
    },
}

/// An error with the process exit code it maps to.
struct Failure {
    code: u8,
    err: Error,
}

impl Failure {
    fn new(code: u8, err: impl Into<Error>) -> Self {
        Self { code, err: err.into() }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = e.exit_code() as u8;
        let stage = e.stage();
        Self::new(code, Error::new(e).context(format!("stage `{stage}` failed")))
    }
}

type Res<T> = Result<T, Failure>;

/// Config and output failures exit with 1.
fn io<T>(r: anyhow::Result<T>) -> Res<T> {
    r.map_err(|e| Failure::new(1, e))
}

fn load_config(path: Option<&Path>, set: &[String]) -> Res<PipelineConfig> {
    let text = match path {
        Some(p) => io(fs::read_to_string(p).with_context(|| format!("reading config {}", p.display())))?,
        None => String::new(),
    };
    io(PipelineConfig::with_overrides(&text, set).context("loading config"))
}

fn write(path: &Path, contents: &str) -> Res<()> {
    io(fs::write(path, contents).with_context(|| format!("writing {}", path.display())))
}

fn create_dir(dir: &Path) -> Res<()> {
    io(fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())))
}

fn calibrate(radar: &Path, pose: &Path, config: Option<&Path>, out: &Path, set: &[String]) -> Res<()> {
    let cfg = load_config(config, set)?;
    let session = load_session(radar, pose).map_err(|e| Failure::from(PipelineError::from(e)))?;
    info!("loaded {} frames, {} pose samples", session.radar.len(), session.pose.len());
    let run = pipeline::calibrate(&session, &cfg)?;

    create_dir(out)?;
    io(write_calibration_file(out.join("calibration.json"), &run.calibration_file()).map_err(Error::from))?;
    write(&out.join("report.txt"), &format_report(&run.report))?;
    let generated_at = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut json = serde_json::json!({ "generated_at": generated_at, "config": cfg });
    json["report"] = serde_json::to_value(&run.report).expect("report serializes");
    write(&out.join("report.json"), &format!("{}\n", serde_json::to_string_pretty(&json).expect("json")))?;
    print!("{}", format_report(&run.report));
    Ok(())
}

fn evaluate(radar: &Path, pose: &Path, calib: &Path, config: Option<&Path>, out: &Path, set: &[String]) -> Res<()> {
    let cfg = load_config(config, set)?;
    let calib = read_calibration_file(calib)
        .and_then(|f| f.to_calibration())
        .map_err(|e| Failure::new(2, Error::new(e).context("reading calibration")))?;
    let session = load_session(radar, pose).map_err(|e| Failure::from(PipelineError::from(e)))?;
    let metrics = pipeline::evaluate(&session, &calib, &cfg)?;

    create_dir(out)?;
    let json = metrics_json(&metrics);
    write(&out.join("metrics.json"), &json)?;
    let path = out.join("diagnostics.csv");
    let file = io(fs::File::create(&path).with_context(|| format!("writing {}", path.display())))?;
    io(write_diagnostics(&metrics, file).map_err(Error::from))?;
    print!("{json}");
    Ok(())
}

fn simulate(scenario: Option<&Path>, out: &Path) -> Res<()> {
    let cfg = match scenario {
        Some(p) => {
            let text = io(fs::read_to_string(p).with_context(|| format!("reading scenario {}", p.display())))?;
            io(ScenarioConfig::from_toml(&text).map_err(Error::from))?
        }
        None => ScenarioConfig::canonical(),
    };
    let scenario = io(generate_scenario(&cfg).map_err(Error::from))?;
    create_dir(out)?;
    let files = io(write_scenario(out, &scenario).map_err(Error::from))?;
    println!(
        "{} radar frames, {} pose samples\n{}\n{}\n{}\n{}",
        scenario.frames.len(),
        scenario.poses.len(),
        files.radar.display(),
        files.pose.display(),
        files.truth.display(),
        files.labels.display()
    );
    Ok(())
}

fn inspect(radar: &Path) -> Res<()> {
    let frames = read_radar_log(radar).map_err(|e| Failure::from(PipelineError::from(e)))?;
    let n_targets: usize = frames.iter().map(|f| f.targets.len()).sum();
    let (t0, t1) = (frames[0].t, frames[frames.len() - 1].t);
    let duration = t1.seconds_since(t0);
    let all = || frames.iter().flat_map(|f| f.targets.iter());
    let ranges: Vec<f64> = all().map(|t| t.position.norm()).collect();
    let max_per_frame = frames.iter().map(|f| f.targets.len()).max().unwrap_or(0);
    let moving = all().filter(|t| t.v_rad.abs() >= PipelineConfig::default().cluster.v_min).count();
    println!("frames            {}", frames.len());
    println!("duration          {duration:.3} s");
    if duration > 0.0 {
        println!("frame rate        {:.2} Hz", (frames.len() - 1) as f64 / duration);
    }
    println!("targets           {n_targets} ({moving} moving)");
    println!("targets/frame     mean {:.2}, max {max_per_frame}", n_targets as f64 / frames.len() as f64);
    if !ranges.is_empty() {
        let lo = ranges.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ranges.iter().copied().fold(0.0, f64::max);
        println!("range             {lo:.2} .. {hi:.2} m");
    }
    Ok(())
}

/// Joins the error chain, skipping causes already spelled out by their parent.
fn render(e: &Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let r = match &cli.cmd {
        Command::Calibrate { radar, pose, config, out, set } => calibrate(radar, pose, config.as_deref(), out, set),
        Command::Evaluate { radar, pose, calib, config, out, set } => {
            evaluate(radar, pose, calib, config.as_deref(), out, set)
        }
        Command::Simulate { scenario, out } => simulate(scenario.as_deref(), out),
        Command::Inspect { radar } => inspect(radar),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", render(&f.err));
            ExitCode::from(f.code)
        }
    }
}
