//! Command-line entry point.
//!
//! Exit codes: 0 success, 2 configuration error, 3 every rollout diverged.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use alice_bench::config::ExperimentConfig;
use alice_bench::run::{compare, run, RunError};
use alice_bench::{preset, PRESET_NAMES};

const EXIT_CONFIG: u8 = 2;
const EXIT_ALL_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "alice-bench", version, about = "Online-control benchmark harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment described by a JSON config file.
    Run {
        /// Path to the experiment JSON document.
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a built-in experiment preset.
    Preset {
        /// One of: exp1, exp2, exp3, exp1_noiseless.
        name: String,
        /// Override the number of Monte-Carlo seeds.
        #[arg(long)]
        seeds: Option<usize>,
        /// Override the rollout horizon.
        #[arg(long)]
        horizon: Option<usize>,
        /// Override the output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Override the base seed.
        #[arg(long)]
        base_seed: Option<u64>,
        /// Also emit SVG line plots.
        #[arg(long)]
        svg: bool,
    },
    /// Print the comparison table of a finished run directory.
    Compare {
        #[arg(long)]
        run_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, String> {
    match cli.cmd {
        Cmd::Run { config } => {
            let dto = ExperimentConfig::from_path(&config).map_err(|e| e.to_string())?;
            execute_and_report(dto)
        }
        Cmd::Preset {
            name,
            seeds,
            horizon,
            out_dir,
            base_seed,
            svg,
        } => {
            let mut dto = preset(&name).map_err(|e| {
                format!("{e}; available presets: {}", PRESET_NAMES.join(", "))
            })?;
            if let Some(s) = seeds {
                dto.seeds = alice_bench::SeedSpec::Count(s);
            }
            if let Some(h) = horizon {
                dto.horizon = h;
            }
            if let Some(d) = out_dir {
                dto.out_dir = d;
            }
            if let Some(b) = base_seed {
                dto.base_seed = b;
            }
            if svg {
                dto.emit_svg = true;
            }
            execute_and_report(dto)
        }
        Cmd::Compare { run_dir } => {
            let table = compare(&run_dir).map_err(|e| e.to_string())?;
            print!("{table}");
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn execute_and_report(dto: ExperimentConfig) -> Result<ExitCode, String> {
    let cfg = dto.resolve().map_err(|e| e.to_string())?;
    let output = match run(&cfg) {
        Ok(output) => output,
        Err(RunError::Config(msg)) => return Err(msg),
        Err(RunError::Io(e)) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::FAILURE);
        }
    };
    let total: usize = output.seed_runs.iter().map(|sr| sr.rollouts.len()).sum();
    let diverged: usize = output
        .seed_runs
        .iter()
        .flat_map(|sr| sr.rollouts.iter())
        .filter(|r| r.diverged_at.is_some())
        .count();
    println!(
        "{} rollouts ({} diverged) -> {}",
        total,
        diverged,
        cfg.out_dir.display()
    );
    match compare(&cfg.out_dir) {
        Ok(table) => print!("{table}"),
        Err(e) => eprintln!("warning: cannot render comparison table: {e}"),
    }
    if output.all_rollouts_diverged() {
        return Ok(ExitCode::from(EXIT_ALL_DIVERGED));
    }
    Ok(ExitCode::SUCCESS)
}
