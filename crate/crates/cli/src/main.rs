//! `kneesim`: run scripted sessions, analyse logs, serve live sessions.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use kneesim_core::analysis::{
    kinematic_summary, render_summary, spatiotemporal_with, summarize_trials, GaitMetrics, KinematicSummary, SdConvention,
};
use kneesim_core::config::{load_config, load_default_config, ConfigError, SessionConfig, CONFIG_DIR_ENV};
use kneesim_core::logs::{self, LogError};
use kneesim_core::model::{ParticipantProfile, Placement};
use kneesim_core::server::{serve, ServeOptions};
use kneesim_core::session::{scripted_session, EventScript, SessionOutput};

const SENSOR_LOG: &str = "sensor_log.csv";
const STATE_LOG: &str = "state_log.csv";
const WALKWAY: &str = "walkway.csv";
const SUMMARY: &str = "summary.csv";

#[derive(Parser)]
#[command(name = "kneesim", version, about = "Powered knee prosthesis gait simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scripted closed-loop session and write its logs.
    Simulate {
        /// Session config; defaults to $KNEESIM_CONFIG_DIR/session.toml, then the built-in default.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Event script: one `t, request_mode, Mode` per line.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Simulated seconds.
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
        /// Overrides the config's noise seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Compute gait metrics from walkway records and optional sensor/state logs.
    Analyze {
        /// Walkway CSV, one per trial.
        #[arg(long, required = true)]
        walkway: Vec<PathBuf>,
        #[arg(long, requires = "state_log")]
        sensor_log: Option<PathBuf>,
        #[arg(long, requires = "sensor_log")]
        state_log: Option<PathBuf>,
        /// Required unless the log headers record it.
        #[arg(long)]
        placement: Option<Placement>,
        #[arg(long, default_value = "TF01")]
        participant: String,
        #[arg(long, default_value = "self-selected")]
        condition: String,
        #[arg(long, value_enum, default_value_t = Sd::Population)]
        sd: Sd,
        /// Emit JSON instead of tables.
        #[arg(long)]
        json: bool,
    },
    /// Run a live session with WebSocket telemetry and command intake.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Simulated seconds per wall-clock second; 0 runs unpaced.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Stop after this many simulated seconds; runs until killed otherwise.
        #[arg(long)]
        duration: Option<f64>,
        /// Write the session logs here when a --duration run ends.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Print the built-in default session config as TOML.
    DefaultConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sd {
    Population,
    Sample,
}

impl From<Sd> for SdConvention {
    fn from(sd: Sd) -> Self {
        match sd {
            Sd::Population => SdConvention::Population,
            Sd::Sample => SdConvention::Sample,
        }
    }
}

/// Failure carrying its process exit code: 2 for unusable inputs, 1 otherwise.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(error: E) -> Self {
        Self { code: 1, error: error.into() }
    }
}

fn input_error(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, error: error.into() }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Simulate {
            config,
            script,
            duration,
            seed,
            out_dir,
        } => simulate(config.as_deref(), script.as_deref(), duration, seed, &out_dir),
        Cmd::Analyze {
            walkway,
            sensor_log,
            state_log,
            placement,
            participant,
            condition,
            sd,
            json,
        } => {
            let logs = sensor_log.zip(state_log);
            let request = AnalyzeRequest {
                walkways: &walkway,
                logs: logs.as_ref().map(|(a, b)| (a.as_path(), b.as_path())),
                placement,
                participant: ParticipantProfile {
                    id: participant,
                    ..ParticipantProfile::default()
                },
                condition: &condition,
                sd: sd.into(),
            };
            analyze(&request, json)
        }
        Cmd::Serve {
            config,
            port,
            host,
            speed,
            duration,
            out_dir,
        } => run_server(config.as_deref(), &format!("{host}:{port}"), speed, duration, out_dir.as_deref()),
        Cmd::DefaultConfig => SessionConfig::default()
            .to_toml()
            .map(|text| print!("{text}"))
            .map_err(Failure::from),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("kneesim: {error:#}");
            ExitCode::from(code)
        }
    }
}

fn read_config(path: Option<&Path>) -> Result<SessionConfig, Failure> {
    match path {
        Some(path) => load_config(path).map_err(input_error),
        None => load_default_config()
            .map_err(|e: ConfigError| input_error(anyhow::Error::new(e).context(format!("loading config via {CONFIG_DIR_ENV}")))),
    }
}

fn simulate(
    config: Option<&Path>,
    script: Option<&Path>,
    duration: f64,
    seed: Option<u64>,
    out_dir: &Path,
) -> Result<(), Failure> {
    let mut cfg = read_config(config)?;
    if let Some(seed) = seed {
        cfg.noise.seed = seed;
    }
    let script = match script {
        Some(path) => fs::read_to_string(path)
            .with_context(|| format!("reading script {}", path.display()))
            .and_then(|text| text.parse::<EventScript>().with_context(|| format!("script {}", path.display())))
            .map_err(input_error)?,
        None => EventScript::default(),
    };
    let output = scripted_session(&cfg, &script, duration).map_err(input_error)?;
    write_outputs(&cfg, &output, out_dir)?;
    if output.summary.is_empty() {
        eprintln!("kneesim: run did not cover the walkway; summary is empty");
    } else {
        print!("{}", render_summary(&output.summary));
    }
    Ok(())
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_outputs(cfg: &SessionConfig, output: &SessionOutput, out_dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let placement = cfg.placement();
    logs::write_sensor_log(create(out_dir, SENSOR_LOG)?, placement, &output.sensor_log).context(SENSOR_LOG)?;
    logs::write_state_log(create(out_dir, STATE_LOG)?, placement, &output.state_log).context(STATE_LOG)?;
    logs::write_walkway(create(out_dir, WALKWAY)?, Some(placement), &output.walkway).context(WALKWAY)?;
    logs::write_summary(create(out_dir, SUMMARY)?, &output.summary).context(SUMMARY)?;
    Ok(())
}

struct AnalyzeRequest<'a> {
    walkways: &'a [PathBuf],
    logs: Option<(&'a Path, &'a Path)>,
    placement: Option<Placement>,
    participant: ParticipantProfile,
    condition: &'a str,
    sd: SdConvention,
}

#[derive(serde::Serialize)]
struct AnalyzeReport {
    trials: Vec<GaitMetrics>,
    summary: kneesim_core::analysis::SummaryRow,
    kinematics: Option<KinematicSummary>,
}

fn open<T>(path: &Path, read: impl FnOnce(BufReader<File>) -> Result<T, LogError>) -> Result<T, Failure> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display())).map_err(input_error)?;
    read(BufReader::new(file))
        .with_context(|| path.display().to_string())
        .map_err(input_error)
}

/// Settles on one placement: the flag when given, else the one recorded in
/// the headers. A header that disagrees is refused.
fn reconcile(flag: Option<Placement>, recorded: &[(PathBuf, Placement)]) -> Result<Placement, Failure> {
    let expected = match (flag, recorded.first()) {
        (Some(p), _) => p,
        (None, Some((_, p))) => *p,
        (None, None) => return Err(input_error(anyhow!("no placement recorded in the logs; pass --placement"))),
    };
    for (path, found) in recorded {
        if *found != expected {
            return Err(input_error(anyhow!(
                "placement mismatch: {expected} requested, {} recorded {found}",
                path.display()
            )));
        }
    }
    Ok(expected)
}

fn analyze(req: &AnalyzeRequest, json: bool) -> Result<(), Failure> {
    let mut recorded = Vec::new();
    let mut records = Vec::new();
    for path in req.walkways {
        let (placement, record) = open(path, logs::read_walkway)?;
        if let Some(p) = placement {
            recorded.push((path.clone(), p));
        }
        records.push((path, record));
    }
    let logs = match req.logs {
        Some((sensor_path, state_path)) => {
            let sensor = open(sensor_path, logs::read_sensor_log)?;
            let state = open(state_path, logs::read_state_log)?;
            recorded.push((sensor_path.to_path_buf(), sensor.0));
            recorded.push((state_path.to_path_buf(), state.0));
            Some((sensor, state))
        }
        None => None,
    };
    let placement = reconcile(req.placement, &recorded)?;

    let trials = records
        .iter()
        .map(|(path, record)| {
            spatiotemporal_with(record, &req.participant, req.sd).with_context(|| path.display().to_string())
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let summary = summarize_trials(&trials, placement, req.condition, req.sd)?;
    let kinematics = match &logs {
        Some(((sp, sensor), (tp, state))) => Some(kinematic_summary((*sp, sensor), (*tp, state), placement)?),
        None => None,
    };

    let report = AnalyzeReport {
        trials,
        summary,
        kinematics,
    };
    let mut out = std::io::stdout().lock();
    if json {
        serde_json::to_writer_pretty(&mut out, &report)?;
        writeln!(out)?;
    } else {
        write!(out, "{}", render_report(req, &report))?;
    }
    Ok(())
}

fn render_report(req: &AnalyzeRequest, report: &AnalyzeReport) -> String {
    let mut out = String::new();
    for (path, m) in req.walkways.iter().zip(&report.trials) {
        out += &format!(
            "trial {}: speed {:.3} m/s, cadence {:.1} steps/min\n",
            path.display(),
            m.speed,
            m.cadence
        );
        out += &format!(
            "  {:<6} {:>9} {:>17} {:>17} {:>15} {:>15} {:>17}\n",
            "limb", "footfalls", "step time s", "step length m", "swing %", "stance %", "step width m"
        );
        for (name, limb) in [("left", &m.left), ("right", &m.right)] {
            out += &format!(
                "  {:<6} {:>9} {:>8.3} ± {:<6.3} {:>8.3} ± {:<6.3} {:>7.1} ± {:<5.1} {:>7.1} ± {:<5.1} {:>8.3} ± {:.3}\n",
                name,
                limb.footfalls,
                limb.step_time.mean,
                limb.step_time.sd,
                limb.step_length.mean,
                limb.step_length.sd,
                limb.swing_pct.mean,
                limb.swing_pct.sd,
                limb.stance_pct.mean,
                limb.stance_pct.sd,
                limb.step_width.mean,
                limb.step_width.sd
            );
        }
        let s = &m.symmetry;
        out += &format!(
            "  SI     step time {:.3}, step length {:.3}, swing {:.3}, stance {:.3}, step width {:.3}\n",
            s.step_time, s.step_length, s.swing_pct, s.stance_pct, s.step_width
        );
    }
    out += "\n";
    out += &render_summary(std::slice::from_ref(&report.summary));
    if let Some(k) = &report.kinematics {
        out += &format!(
            "\nknee kinematics ({}, {} steady cycles)\n  ROM {:.1} ± {:.1} deg\n  peak velocity {:.0} ± {:.0} deg/s\n  stance moment {:.2} ± {:.2} Nm (mean |M| {:.2} Nm)\n",
            k.placement,
            k.cycles,
            k.rom.mean,
            k.rom.sd,
            k.peak_velocity.mean,
            k.peak_velocity.sd,
            k.stance_moment.mean,
            k.stance_moment.sd,
            k.stance_moment_abs
        );
    }
    out
}

fn run_server(
    config: Option<&Path>,
    addr: &str,
    speed: f64,
    duration: Option<f64>,
    out_dir: Option<&Path>,
) -> Result<(), Failure> {
    let cfg = read_config(config)?;
    if out_dir.is_some() && duration.is_none() {
        return Err(input_error(anyhow!("--out-dir needs --duration")));
    }
    let options = ServeOptions {
        speed,
        duration,
        ..ServeOptions::default()
    };
    let server = serve(cfg.clone(), addr, options)?;
    eprintln!("kneesim: serving on ws://{}/", server.local_addr());
    let output = server.wait()?;
    if let Some(dir) = out_dir {
        write_outputs(&cfg, &output, dir)?;
    }
    Ok(())
}
