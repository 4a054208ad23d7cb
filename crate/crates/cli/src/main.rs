//! `camtraj`: scene synthesis, grounding, camera optimization, evaluation
//! and rendering from the command line.

mod artifacts;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{EvalArgs, GroundArgs, Mode, OptimizeArgs, RenderArgs, SynthArgs};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "camtraj", version, about = "Language-grounded camera trajectories over Gaussian splat scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a procedural scene from a TOML spec or the built-in benchmark.
    Synth {
        #[arg(long, conflicts_with = "benchmark")]
        spec: Option<PathBuf>,
        #[arg(long)]
        benchmark: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Write little-endian binary records instead of text.
        #[arg(long)]
        binary: bool,
        /// Also write the benchmark's query file here.
        #[arg(long)]
        queries_out: Option<PathBuf>,
        /// Also write a config with the grounding filter for this scene.
        #[arg(long)]
        config_out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Ground every query to a binary channel and print a summary.
    Ground {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Optimize a single pose, a trajectory, or a batch of SGLD samples.
    Optimize {
        #[arg(long, value_enum, default_value_t = Mode::Trajectory)]
        mode: Mode,
        #[arg(long)]
        scene: PathBuf,
        /// Query file, needed only to name prompts by label.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score trajectories and write report.csv and report.txt.
    Eval {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long = "trajectory", required = true)]
        trajectories: Vec<PathBuf>,
        /// Row name per trajectory; defaults to the basis kind.
        #[arg(long = "label")]
        labels: Vec<String>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Accepted for a uniform interface; evaluation is deterministic.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render keyframes of a trajectory, or every pose of a pose document.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long, required_unless_present = "pose", conflicts_with = "pose")]
        trajectory: Option<PathBuf>,
        #[arg(long)]
        pose: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(command: Command) -> Result<String, CliError> {
    match command {
        Command::Synth { spec, benchmark, seed, out, binary, queries_out, config_out, config } => {
            commands::synth(&SynthArgs { spec, benchmark, seed, out, binary, queries_out, config_out, config })
        }
        Command::Ground { scene, queries, out, config } => commands::ground(&GroundArgs { scene, queries, out, config }),
        Command::Optimize { mode, scene, queries, out, seed, config } => {
            commands::optimize(&OptimizeArgs { scene, queries, mode, out, seed, config })
        }
        Command::Eval { scene, queries, trajectories, labels, out, config, seed: _ } => {
            commands::eval(&EvalArgs { scene, queries, trajectories, labels, out, config })
        }
        Command::Render { scene, queries, trajectory, pose, out, config, seed: _ } => {
            commands::render(&RenderArgs { scene, queries, trajectory, pose, out, config })
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
    match run(cli.command) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
