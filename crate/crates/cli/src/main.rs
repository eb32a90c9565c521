//! `teleop`: offline replay, benchmarking and parameter comparison for the
//! teleoperation planner, plus the live session service.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "teleop",
    version,
    about = "Slosh-aware receding-horizon teleoperation planner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Directory with robot.toml, P1.toml and P2.toml overriding the built-in files.
    #[arg(long, env = "TELEOP_CONFIG_DIR", global = true)]
    config_dir: Option<PathBuf>,
    /// Operator recording (JSON lines); defaults to the bundled aggressive sweep.
    #[arg(long, global = true)]
    recording: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out", global = true)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Replay a recording and write the cycle log and a metrics summary.
    Replay {
        /// Parameter set: P1, P2 or a TOML file.
        #[arg(long, default_value = "P2")]
        params: String,
        #[command(flatten)]
        common: Common,
    },
    /// Time the loop over the recording and report solve-time statistics.
    Bench {
        #[arg(long, default_value = "P2")]
        params: String,
        /// Number of loop cycles (targets hold after the recording ends).
        #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
        cycles: u64,
        /// Perturb the recorded positions with seeded sub-millimeter noise.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Replay one recording under two parameter sets and write plot-ready CSV.
    Compare {
        #[arg(long, default_value = "P1")]
        params_a: String,
        #[arg(long, default_value = "P2")]
        params_b: String,
        #[command(flatten)]
        common: Common,
    },
    /// Write the bundled aggressive sweep recording to a file.
    Fixture {
        /// Destination file.
        #[arg(long, default_value = "aggressive_sweep.jsonl")]
        path: PathBuf,
    },
    /// Run the WebSocket session service.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Parameter set new sessions start with (P1 or P2).
        #[arg(long, default_value = "P2")]
        params: String,
        #[arg(long, env = "TELEOP_CONFIG_DIR")]
        config_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Replay { params, common } => commands::replay(&common, &params),
        Command::Bench {
            params,
            cycles,
            seed,
            common,
        } => commands::bench(&common, &params, cycles as usize, seed),
        Command::Compare {
            params_a,
            params_b,
            common,
        } => commands::compare(&common, &params_a, &params_b),
        Command::Fixture { path } => commands::fixture(&path),
        Command::Serve {
            host,
            port,
            params,
            config_dir,
        } => commands::serve(&host, port, &params, config_dir.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
