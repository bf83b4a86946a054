//! Command-line front end for the guiding-center reduction pipeline.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Schema or value error in the run configuration (exit 2).
    Config(String),
    /// Domain or numeric failure inside the pipeline (exit 3).
    Numeric(gyroreduce::Error),
    Io(String),
}

impl From<gyroreduce::Error> for CliError {
    fn from(e: gyroreduce::Error) -> Self {
        use gyroreduce::Error as E;
        match e {
            E::InvalidScaling(_) | E::InvalidArgument(_) | E::UnsupportedOrder(_) | E::UnsupportedScenario { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Numeric(other),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numeric(e) => write!(f, "numeric failure: {e}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) | CliError::Io(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "gyroreduce", version, about = "Guiding-center reduction of charged-particle dynamics")]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV and JSON artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for random probe points and initial states.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print machine-readable JSON instead of a summary.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a full orbit and report energy drift.
    Orbit,
    /// Check Poisson-structure identities, Darboux brackets and the key theorem.
    VerifyStructure,
    /// Build the Darboux map and check brackets and the k series.
    Darboux,
    /// Apply the first-order Lie transform and check residuals.
    Lie,
    /// Compare a full orbit with the reduced system.
    Compare,
    /// Convergence orders over the configured epsilon sweep.
    Sweep,
    /// Print the scenario registry.
    ListScenarios,
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    let cfg = load(cli)?;
    if let Command::ListScenarios = cli.command {
        let entries = commands::list_scenarios(&cfg);
        if cli.json {
            println!("{}", serde_json::to_string_pretty(&entries).expect("registry serializes"));
        } else {
            print!("{}", commands::describe(&entries));
        }
        return Ok(true);
    }
    let rep = match cli.command {
        Command::Orbit => commands::orbit(&cfg)?,
        Command::VerifyStructure => commands::verify_structure(&cfg)?,
        Command::Darboux => commands::darboux(&cfg)?,
        Command::Lie => commands::lie(&cfg)?,
        Command::Compare => commands::compare(&cfg)?,
        Command::Sweep => commands::sweep(&cfg)?,
        Command::ListScenarios => unreachable!(),
    };
    let text = commands::write_report(&cfg, &rep)?;
    if cli.json {
        println!("{text}");
    } else {
        print!("{}", rep.summary());
    }
    Ok(rep.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("gyroreduce: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
