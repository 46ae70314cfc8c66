//! `mqrm`: reproducible thermometry runs from JSON configs.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mqrm::PrecisionMode;
use serde::Serialize;
use serde_json::{json, Value};

use commands::OutDir;
use config::{ExactConfig, IdealConfig, PeakRatioConfig, QfiConfig, SpectrumConfig, WishartConfig};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
}

impl From<mqrm::Error> for CliError {
    fn from(e: mqrm::Error) -> Self {
        use mqrm::Error as E;
        match e {
            E::Numerical(_) | E::NotConverged(_) | E::NoDarkStates => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "mqrm", version, about = "Thermal QFI of the multilevel quantum Rabi model")]
struct Cli {
    /// Command config (JSON); a manifest from an earlier run is accepted too.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Override the random seed of sampling commands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (speed only; results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override the precision mode of QFI evaluations.
    #[arg(long, global = true, value_parser = parse_precision)]
    precision: Option<PrecisionMode>,
    #[command(subcommand)]
    command: Command,
}

fn parse_precision(s: &str) -> Result<PrecisionMode, String> {
    s.parse().map_err(|e: mqrm::Error| e.to_string())
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Adiabatic and exact spectra over a coupling sweep.
    Spectrum,
    /// Adiabatic QFI curve, optionally with the exact oracle.
    Qfi,
    /// Exact spectrum and optional exact QFI.
    Exact,
    /// Ideal-thermometer table and curves.
    Ideal,
    /// Wishart modal eigenvalues and Monte Carlo histograms.
    Wishart,
    /// Monte Carlo ensemble heatmap.
    Ensemble,
    /// Bright-dark peak against the matched ideal probe.
    PeakRatio,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Qfi => "qfi",
            Command::Exact => "exact",
            Command::Ideal => "ideal",
            Command::Wishart => "wishart",
            Command::Ensemble => "ensemble",
            Command::PeakRatio => "peak-ratio",
        }
    }
}

fn required(cli: &Cli) -> Result<&Path, CliError> {
    cli.config.as_deref().ok_or_else(|| CliError::Config(format!("'{}' needs --config", cli.command.name())))
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn resolved<T: Serialize>(cfg: &T) -> Value {
    serde_json::to_value(cfg).unwrap_or(Value::Null)
}

fn dispatch(cli: &Cli, out: &mut OutDir) -> Result<Value, CliError> {
    let name = cli.command.name();
    match cli.command {
        Command::Spectrum => {
            let path = required(cli)?;
            let mut cfg: SpectrumConfig = config::load(path, name)?;
            let model = cfg.model.resolve(&config_dir(path))?;
            cfg.model = config::ModelSource::Inline(model.clone());
            commands::spectrum(&cfg, &model, out)?;
            Ok(resolved(&cfg))
        }
        Command::Qfi => {
            let path = required(cli)?;
            let mut cfg: QfiConfig = config::load(path, name)?;
            let model = cfg.model.resolve(&config_dir(path))?;
            cfg.model = config::ModelSource::Inline(model.clone());
            cfg.precision = commands::precision_override(cfg.precision, cli.precision);
            commands::qfi(&cfg, &model, out)?;
            Ok(resolved(&cfg))
        }
        Command::Exact => {
            let path = required(cli)?;
            let mut cfg: ExactConfig = config::load(path, name)?;
            let model = cfg.model.resolve(&config_dir(path))?;
            cfg.model = config::ModelSource::Inline(model.clone());
            cfg.precision = commands::precision_override(cfg.precision, cli.precision);
            commands::exact(&cfg, &model, out)?;
            Ok(resolved(&cfg))
        }
        Command::Ideal => {
            let cfg: IdealConfig = match &cli.config {
                Some(p) => config::load(p, name)?,
                None => IdealConfig::default(),
            };
            commands::ideal(&cfg, out)?;
            Ok(resolved(&cfg))
        }
        Command::Wishart => {
            let mut cfg: WishartConfig = match &cli.config {
                Some(p) => config::load(p, name)?,
                None => WishartConfig::default(),
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            commands::wishart(&cfg, out)?;
            Ok(resolved(&cfg))
        }
        Command::Ensemble => {
            let mut spec = config::ensemble_spec(required(cli)?)?;
            if let Some(s) = cli.seed {
                spec.master_seed = s;
            }
            commands::ensemble(&spec, out)?;
            Ok(resolved(&spec))
        }
        Command::PeakRatio => {
            let cfg: PeakRatioConfig = config::load(required(cli)?, name)?;
            commands::peak_ratio(&cfg, out)?;
            Ok(resolved(&cfg))
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {n} worker threads: {e}")))?;
    }
    let mut out = OutDir::new(&cli.out)?;
    let config = dispatch(cli, &mut out)?;
    let record = out.finish();
    let mut manifest = json!({
        "command": cli.command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "outputs": record.outputs,
    });
    if let Value::Object(map) = &mut manifest {
        map.extend(record.extra);
    }
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Config(e.to_string()))? + "\n";
    let path = cli.out.join("manifest.json");
    std::fs::write(&path, text).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mqrm: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
