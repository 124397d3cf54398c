//! `incsg`: generate synthetic scenes, train, evaluate, export predicted
//! graphs and run gradient checks.
//!
//! Exit codes: 0 success, 1 I/O or internal error, 2 configuration error,
//! 3 data error, 4 numeric failure (non-finite loss, failed gradient check).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use incsg::Error;
use log::error;

use config::Overrides;

#[derive(Parser)]
#[command(name = "incsg", version, about = "Incremental 3D semantic scene graph prediction")]
struct Cli {
    /// More log output (-v debug, -vv trace); RUST_LOG takes precedence.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as train/val/test scene files.
    Gen {
        #[command(flatten)]
        o: Overrides,
    },
    /// Train a model; writes model.ckpt, history.jsonl and resumable state.
    Train {
        #[command(flatten)]
        o: Overrides,
        /// Continue from the state saved in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint frame by frame and print the metric report.
    Eval {
        #[command(flatten)]
        o: Overrides,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scene file; defaults to the configured split of the dataset.
        #[arg(long)]
        scenes: Option<PathBuf>,
    },
    /// Export the predicted global graph after every frame as JSON lines.
    Predict {
        #[command(flatten)]
        o: Overrides,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
    },
    /// Finite-difference check of every layer and model variant.
    Gradcheck {
        #[command(flatten)]
        o: Overrides,
        /// Corrupt the analytic gradient of this input (for testing the checker).
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parameter(_) => 2,
        Error::Data(_) | Error::Json(_) | Error::Generation(_) => 3,
        Error::Numeric(_) => 4,
        _ => 1,
    }
}

fn run(command: Command) -> incsg::Result<()> {
    match command {
        Command::Gen { o } => commands::gen(&o.resolve()?, o.out.as_deref()),
        Command::Train { o, resume } => {
            let out = o.out.clone().unwrap_or_else(|| PathBuf::from("run"));
            commands::train_cmd(&o.resolve()?, &out, resume)
        }
        Command::Eval { o, checkpoint, scenes } => {
            commands::eval(&o.resolve()?, &checkpoint, scenes.as_deref(), o.out.as_deref())
        }
        Command::Predict { o, checkpoint, scenes } => {
            commands::predict(&o.resolve()?, &checkpoint, &scenes, o.out.as_deref())
        }
        Command::Gradcheck { o, corrupt } => commands::gradcheck(&o.resolve()?, corrupt, o.out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = ["info", "debug", "trace"][usize::from(cli.verbose.min(2))];
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
