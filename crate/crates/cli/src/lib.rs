//! Command-line front end for the gaze mapping network.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod overlay;

use clap::Parser;

pub use args::{Cli, Command};
pub use error::{CliError, CliResult, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, EXIT_VERIFICATION};

/// Run a parsed command and return its process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Train(a) => commands::train(a).map(|_| EXIT_OK),
        Command::Eval(a) => commands::eval(a).map(|_| EXIT_OK),
        Command::Predict(a) => commands::predict(a).map(|_| EXIT_OK),
        Command::Synth(a) => commands::synth(a).map(|_| EXIT_OK),
        Command::Gradcheck(a) => commands::gradcheck(a).map(|r| if r.passed() { EXIT_OK } else { EXIT_VERIFICATION }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

/// Parse `argv` and run; usage errors exit with [`EXIT_USAGE`].
pub fn run_from<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(argv) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_OK
            }
        }
    }
}
