//! `ifbounds` command-line front end.
//!
//! Exit codes: 0 ok, 2 config/schema error, 3 sampler failure, 4 oracle
//! refusal, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ifbounds::experiment::{run, Command, ExperimentConfig, RunOptions};

#[derive(Debug, Parser)]
#[command(name = "ifbounds", version, about = "Interface free-energy bounds for coupled subsystems")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Two-sided bounds from the coupled and decoupled chains
    Bounds(Common),
    /// Bounds along the alpha grid
    Curve(Common),
    /// Exact reference values as a JSON fixture
    Oracle(Common),
    /// Exponential averaging vs thermodynamic integration over repeated seeds
    Compare(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (JSON)
    #[arg(long)]
    config: PathBuf,

    /// Output path prefix; overrides `outputs` in the config
    #[arg(long)]
    output: Option<String>,

    /// Base seed; overrides `seed` in the config
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads. Does not change any output byte.
    #[arg(long, default_value_t = 1)]
    workers: usize,

    /// Use exact oracle means instead of sampling
    #[arg(long)]
    oracle_fed: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, name, args) = match cli.command {
        Cmd::Bounds(a) => (Command::Bounds, "bounds", a),
        Cmd::Curve(a) => (Command::Curve, "curve", a),
        Cmd::Oracle(a) => (Command::Oracle, "oracle", a),
        Cmd::Compare(a) => (Command::Compare, "compare", a),
    };
    // --workers and --output are left out so fixtures do not depend on them
    let mut command_line = format!("ifbounds {name} --config {}", args.config.display());
    if let Some(s) = args.seed {
        command_line.push_str(&format!(" --seed {s}"));
    }
    if args.oracle_fed {
        command_line.push_str(" --oracle-fed");
    }
    let opts = RunOptions {
        output: args.output,
        seed: args.seed,
        workers: args.workers,
        oracle_fed: args.oracle_fed,
        command_line,
    };
    let result = ExperimentConfig::load(&args.config).and_then(|cfg| run(command, &cfg, &opts));
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
