//! `dmfd`: train and evaluate deformable-manipulation agents.

mod cli;
mod commands;
mod config;
mod errors;
mod jobs;
mod plot;
mod runner;

use clap::Parser;

use cli::{Cli, Command};
use errors::CliError;

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenDemos(args) => commands::cmd_gen_demos(args),
        Command::Train(args) => commands::cmd_train(args),
        Command::Eval(args) => commands::cmd_eval(args),
        Command::Ablate(args) => commands::cmd_ablate(args),
        Command::Plot(args) => plot::cmd_plot(args),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
