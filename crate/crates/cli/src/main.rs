//! `protoad` command-line tool. Results go to stdout or `--out`; progress
//! goes to stderr. Exit codes: 0 success, 2 bad input, 3 numerical failure.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use protoad::Error;

use args::{Cli, Command};
use commands::Log;

fn run(cli: &Cli) -> anyhow::Result<()> {
    let log = Log::new(cli.quiet);
    match &cli.command {
        Command::Fit(a) => commands::fit_cmd(cli, a, &log),
        Command::Score(a) => commands::score_cmd(cli, a, &log),
        Command::Eval(a) => commands::eval_cmd(cli, a),
        Command::SelectK(a) => commands::select_k_cmd(cli, a, &log),
        Command::Synth(a) => commands::synth_cmd(cli, a, &log),
        Command::Experiment(a) => commands::experiment_cmd(cli, a, &log),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_numerical() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
