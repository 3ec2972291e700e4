mod args;
mod commands;
mod error;
mod input;
mod report;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use error::{CliError, EXIT_INPUT};

fn run(cli: &Cli) -> Result<i32, CliError> {
    if let Some(w) = cli.common.workers {
        if w == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {w} workers: {e}")))?;
    }
    match &cli.command {
        Command::CheckModel(a) => commands::check_model(&cli.common, a),
        Command::CheckPrior(a) => commands::check_prior(&cli.common, a),
        Command::Elicit(a) => commands::elicit_prior(&cli.common, a),
        Command::Posterior(a) => commands::posterior(&cli.common, a),
        Command::Consistency(a) => commands::consistency(&cli.common, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
