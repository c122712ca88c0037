//! `lcta` command-line front end. Exit status: 0 on success, 1 on a data or
//! I/O error, 2 on a usage error.

mod cli;
mod output;
mod stages;

use std::process::ExitCode;

use clap::Parser;

use cli::{Cli, Command};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LCTA_LOG", "warn")).init();

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

    let result = match &cli.command {
        Command::Simulate(a) => stages::run_simulate(a),
        Command::Calibrate(a) => stages::run_calibrate(a),
        Command::Classify(a) => stages::run_classify(a),
        Command::Regress(a) => stages::run_regress(a),
        Command::Encode(a) => stages::run_encode(a),
        Command::Report(a) => stages::run_report(a),
        Command::Pipeline(a) => stages::run_pipeline(a),
    };
    match result {
        Ok(written) => {
            for path in written {
                println!("{}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
