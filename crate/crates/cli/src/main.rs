//! Command-line entry point. Exit codes: 0 success, 2 usage/config error,
//! 3 data or checkpoint error, 4 numeric failure.

mod args;
mod commands;

use clap::Parser;

use args::{Cli, Command};
use electroprune::error::Error;

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => commands::cmd_train(&cli.out_dir, a),
        Command::Finetune(a) => commands::cmd_finetune(&cli.out_dir, a),
        Command::Prune(a) => commands::cmd_prune(&cli.out_dir, a),
        Command::Eval(a) => commands::cmd_eval(a),
        Command::Sweep(a) => commands::cmd_sweep(&cli.out_dir, a),
        Command::Inspect(a) => commands::cmd_inspect(&cli.out_dir, a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Plan(_) => 2,
        Error::Data(_) | Error::Checkpoint(_) | Error::Shape { .. } | Error::Structure { .. } => 3,
        Error::Numeric { .. } => 4,
    }
}
