use super::config::ExperimentConfig;
use super::experiments::{run_balance, run_identify, run_lqr, run_pipeline, run_track, IdentifiedModel, RunOutput};
use super::telemetry::{write_csv_file, Metrics, RunStatus, RunSummary};
use crate::error::{Error, Result};
use crate::plant::{LinearParams, PlantMode};
use clap::{Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ABORT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

pub const MODEL_FILE: &str = "identified_model.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlantArg {
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// PID double-loop balance on both planes.
    Balance,
    /// Excited P-loop record and closed-loop identification.
    Identify,
    /// LQR balance from an initial tilt.
    Lqr,
    /// LQR + MPC reference tracking on the y plane.
    Track,
    /// Balance, identify, LQR and track, feeding the identified model forward.
    Pipeline,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Balance => "balance",
            Command::Identify => "identify",
            Command::Lqr => "lqr",
            Command::Track => "track",
            Command::Pipeline => "pipeline",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ballbot", about = "Planar ballbot simulation: balance, identify, LQR and MPC tracking experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON experiment configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for telemetry, summaries and the identified model.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Seed for the sensor noise and the identification multistart.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run length in seconds (overrides the per-experiment default).
    #[arg(long, global = true)]
    pub duration: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub plant: Option<PlantArg>,
    #[arg(long, global = true, value_enum)]
    pub noise: Option<OnOff>,
    /// Design LQR and MPC on the true plant model instead of the identified one.
    #[arg(long, global = true)]
    pub use_truth: bool,
    /// Identified-model JSON used by `lqr` and `track` (default: the true plant model).
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
}

impl Cli {
    /// Configuration after applying command-line overrides.
    pub fn resolve_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.set_seed(seed);
        }
        if let Some(d) = self.duration {
            cfg.run.duration = Some(d);
        }
        if let Some(p) = self.plant {
            cfg.plant.mode = match p {
                PlantArg::Linear => PlantMode::Linear,
                PlantArg::Nonlinear => PlantMode::Nonlinear,
            };
        }
        if let Some(n) = self.noise {
            cfg.plant.noise = n == OnOff::On;
        }
        cfg.run.use_truth |= self.use_truth;
        cfg.validate()?;
        Ok(cfg)
    }

    fn design_model(&self, cfg: &ExperimentConfig) -> Result<LinearParams> {
        match &self.model {
            Some(path) if !cfg.run.use_truth => Ok(IdentifiedModel::load(path)?.model),
            _ => cfg.truth_model(),
        }
    }
}

fn write_run(out: &Path, name: &str, run: &RunOutput) -> Result<()> {
    write_csv_file(&run.telemetry, &out.join(format!("{name}_telemetry.csv")))?;
    run.summary.write_json(&out.join(format!("{name}_summary.json")))
}

fn exit_code(summaries: &[&RunSummary]) -> i32 {
    if summaries.iter().all(|s| s.status == RunStatus::Completed) {
        EXIT_OK
    } else {
        EXIT_ABORT
    }
}

fn execute(cli: &Cli, cfg: &ExperimentConfig) -> Result<i32> {
    let out = &cli.out;
    match cli.command {
        Command::Balance => {
            let run = run_balance(cfg)?;
            write_run(out, "balance", &run)?;
            Ok(exit_code(&[&run.summary]))
        }
        Command::Identify => {
            let id = run_identify(cfg)?;
            write_run(out, "identify", &id.run)?;
            if let Some(m) = &id.model {
                m.write_json(&out.join(MODEL_FILE))?;
            }
            Ok(exit_code(&[&id.run.summary]))
        }
        Command::Lqr => {
            let run = run_lqr(cfg, &cli.design_model(cfg)?)?;
            write_run(out, "lqr", &run)?;
            Ok(exit_code(&[&run.summary]))
        }
        Command::Track => {
            let run = run_track(cfg, &cli.design_model(cfg)?)?;
            write_run(out, "track", &run)?;
            Ok(exit_code(&[&run.summary]))
        }
        Command::Pipeline => {
            let p = run_pipeline(cfg)?;
            write_run(out, "balance", &p.balance)?;
            write_run(out, "identify", &p.identify.run)?;
            if let Some(m) = &p.identify.model {
                m.write_json(&out.join(MODEL_FILE))?;
            }
            write_run(out, "lqr", &p.lqr)?;
            write_run(out, "track", &p.track)?;
            Ok(exit_code(&p.summaries()))
        }
    }
}

/// Summary left behind when the run never started.
fn config_error_summary(cli: &Cli, message: String) -> RunSummary {
    RunSummary {
        experiment: cli.command.name().to_string(),
        status: RunStatus::ConfigError,
        abort: None,
        message: Some(message),
        metrics: Metrics::default(),
        seed: cli.seed.unwrap_or(0),
        config_hash: String::new(),
    }
}

/// Runs the parsed command and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    if let Err(e) = std::fs::create_dir_all(&cli.out) {
        eprintln!("error: cannot create output directory {}: {e}", cli.out.display());
        return EXIT_CONFIG;
    }
    let outcome = cli.resolve_config().and_then(|cfg| execute(cli, &cfg));
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let summary = config_error_summary(cli, e.to_string());
            let path = cli.out.join(format!("{}_summary.json", cli.command.name()));
            if let Err(w) = summary.write_json(&path) {
                eprintln!("error: cannot write {}: {w}", path.display());
            }
            match e {
                Error::Config(_) => EXIT_CONFIG,
                _ => EXIT_ABORT,
            }
        }
    }
}

/// Parses `args` (including the program name) and runs; usage errors exit with code 2.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_CONFIG
            } else {
                EXIT_OK
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply() {
        let cli = Cli::try_parse_from(["ballbot", "track", "--seed", "9", "--noise", "off", "--duration", "3", "--plant", "nonlinear"]).unwrap();
        let cfg = cli.resolve_config().unwrap();
        assert_eq!((cfg.run.seed, cfg.plant.sensor.seed, cfg.id.seed), (9, 9, 9));
        assert!(!cfg.plant.noise);
        assert_eq!(cfg.run.duration, Some(3.0));
        assert_eq!(cfg.plant.mode, PlantMode::Nonlinear);
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        assert_eq!(main_with_args(["ballbot", "balance", "--bogus"]), EXIT_CONFIG);
    }

    #[test]
    fn bad_config_exits_two_and_leaves_a_summary() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("cfg.json");
        std::fs::write(&cfg, r#"{"run": {"sead": 3}}"#).unwrap();
        let out = dir.path().join("out");
        let code = main_with_args(["ballbot", "balance", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code, EXIT_CONFIG);
        let text = std::fs::read_to_string(out.join("balance_summary.json")).unwrap();
        assert!(text.contains("config_error") && text.contains("run.sead"), "{text}");
    }
}
