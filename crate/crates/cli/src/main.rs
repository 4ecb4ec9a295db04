//! Command-line front end: run a configuration, run a figure preset, or
//! validate a configuration file.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 invariant
//! violation, 3 IO error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ehfusion::config::parse_config;
use ehfusion::presets::{preset, Scale, PRESET_NAMES};
use ehfusion::report::{run_config, run_preset, PresetReport};
use ehfusion::sim::Scenario;
use ehfusion::Error;

#[derive(Parser)]
#[command(name = "ehfusion", version, about = "Energy-harvesting sensor network estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the trials of one configuration file.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a figure preset.
    Preset {
        name: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "desk")]
        scale: String,
    },
    /// Parse and check a configuration file without running it.
    Validate { config: PathBuf },
}

enum Failure {
    Usage(String),
    Invariant(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Invariant(_) => 2,
            Failure::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Invariant(m) | Failure::Io(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config { .. } | Error::InvalidArgument(_) => Failure::Usage(msg),
            Error::ContractViolation(_) | Error::Internal(_) => Failure::Invariant(msg),
            Error::Io(_) | Error::Csv(_) => Failure::Io(msg),
        }
    }
}

fn check(report: &PresetReport) -> Result<(), Failure> {
    print!("{}", report.table());
    let lower = report.lower_violations();
    if lower > 0 {
        eprintln!("warning: {lower} node-slots below the theorem's lower battery bound");
    }
    match report.upper_violations() {
        0 => Ok(()),
        n => Err(Failure::Invariant(format!(
            "{n} node-slots above the upper battery bound"
        ))),
    }
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run { config, out } => {
            let cfg = parse_config(&config)?;
            check(&run_config(&cfg, &out)?)
        }
        Command::Preset {
            name,
            out,
            seed,
            scale,
        } => {
            let scale: Scale = scale.parse()?;
            if !PRESET_NAMES.contains(&name.as_str()) {
                return Err(Failure::Usage(format!(
                    "unknown preset `{name}`\nvalid presets:\n  {}",
                    PRESET_NAMES.join("\n  ")
                )));
            }
            check(&run_preset(&preset(&name, scale, seed)?, &out)?)
        }
        Command::Validate { config } => {
            let cfg = parse_config(&config)?;
            let s = Scenario::<f64>::build(&cfg)?;
            println!(
                "ok: {} nodes, {} trials of {} slots, {}, energy unit {:e} J",
                s.node_count(),
                cfg.sim.trials,
                cfg.sim.horizon,
                cfg.control.algorithm.name(),
                s.energy_unit_j
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
