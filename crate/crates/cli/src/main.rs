//! `diffeo` command-line driver.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O or file-format error,
//! 3 numerical failure (divergence, non-convergence, rank loss).

mod args;
mod commands;
mod error;
mod output;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use error::CliError;

fn run(cli: &Cli) -> Result<output::Summary, CliError> {
    match &cli.command {
        Command::Synth(a) => commands::synth(a, cli.seed),
        Command::Register(a) => commands::register(a),
        Command::Validate(a) => commands::validate(a),
        Command::Log(a) => commands::log(a),
        Command::Exp(a) => commands::exp(a),
        Command::Sqrt(a) => commands::sqrt(a),
        Command::Invert(a) => commands::invert_cmd(a),
        Command::Compose(a) => commands::compose_cmd(a),
        Command::Roots(a) => commands::roots(a),
        Command::Jacobian(a) => commands::jacobian(a),
        Command::FitBasis(a) => commands::fit_basis_cmd(a),
        Command::Encode(a) => commands::encode_cmd(a),
        Command::Decode(a) => commands::decode_cmd(a),
        Command::Modes(a) => commands::modes(a),
        Command::Losses(a) => commands::losses(a),
        Command::Atlas(a) => commands::atlas(a, cli.seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let line = rendered
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments");
            eprintln!("{line}");
            return ExitCode::from(1);
        }
    };

    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not configure the thread pool: {e}");
            return ExitCode::from(1);
        }
    }

    let result = run(&cli).and_then(|summary| {
        if let Some(path) = &cli.json_summary {
            summary.write(path)?;
        }
        Ok(summary)
    });
    match result {
        Ok(summary) => {
            summary.print_metrics();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
