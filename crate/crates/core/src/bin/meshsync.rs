use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use meshsync::commands::{cmd_preset_dump, cmd_report, cmd_run, cmd_sweep};
use meshsync::scenario::{preset, Scenario, PRESETS};

#[derive(Parser)]
#[command(name = "meshsync", version, about = "Simulate the slot-based self-healing mesh protocol")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one realization and write its log and CSVs.
    Run {
        #[command(flatten)]
        source: Source,
        /// Defaults to the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "MESHSYNC_OUT", default_value = "out")]
        out: PathBuf,
    },
    /// Run many realizations in parallel and aggregate the collision curve.
    Sweep {
        #[command(flatten)]
        source: Source,
        /// Base seed; realization i uses seed ^ i.
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to the scenario's realization count.
        #[arg(long)]
        realizations: Option<u32>,
        /// Worker threads (0 = one per core).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long, env = "MESHSYNC_OUT", default_value = "out")]
        out: PathBuf,
    },
    /// Summarize the runs and sweeps found under a directory.
    Report {
        #[arg(long, env = "MESHSYNC_OUT", default_value = "out")]
        out: PathBuf,
    },
    /// Print a preset scenario as JSON, or write it to --out.
    PresetDump {
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// List the preset names.
        #[arg(long)]
        list: bool,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Built-in preset name.
    #[arg(long)]
    preset: Option<String>,
}

impl Source {
    fn load(&self) -> Result<Scenario> {
        match (&self.scenario, &self.preset) {
            (Some(path), _) => Ok(Scenario::from_file(path)?),
            (None, Some(name)) => Ok(preset(name)?),
            (None, None) => bail!("one of --scenario or --preset is required"),
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { source, seed, out } => {
            let scenario = source.load()?;
            let seed = seed.unwrap_or(scenario.seed);
            let summary = cmd_run(&scenario, seed, &out).with_context(|| format!("run into {}", out.display()))?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Sweep { source, seed, realizations, jobs, out } => {
            let mut scenario = source.load()?;
            if let Some(seed) = seed {
                scenario.seed = seed;
            }
            let realizations = realizations.unwrap_or(scenario.realizations);
            if realizations == 0 {
                bail!("--realizations must be at least 1");
            }
            cmd_sweep(&scenario, realizations, jobs, &out).with_context(|| format!("sweep into {}", out.display()))?;
            print!("{}", cmd_report(&out)?);
        }
        Command::Report { out } => print!("{}", cmd_report(&out)?),
        Command::PresetDump { preset: name, out, list } => {
            if list {
                for p in PRESETS {
                    println!("{p}");
                }
                return Ok(());
            }
            let Some(name) = name else { bail!("--preset is required unless --list is given") };
            let json = cmd_preset_dump(&preset(&name)?, out.as_deref())?;
            if out.is_none() {
                println!("{json}");
            }
        }
    }
    Ok(())
}
