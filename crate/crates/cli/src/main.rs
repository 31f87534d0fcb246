use std::io::{self, Write};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use tracing_subscriber::EnvFilter;

use relmem_cli::error::EXIT_USAGE;
use relmem_cli::{Cli, CliError};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    ExitCode::SUCCESS
                }
                _ => {
                    let rendered = e.to_string();
                    let first = rendered.lines().next().unwrap_or("invalid arguments");
                    let message = first.strip_prefix("error: ").unwrap_or(first);
                    eprintln!("{}", CliError::usage(format!("{message} (see --help)")));
                    ExitCode::from(EXIT_USAGE)
                }
            };
        }
    };

    let default_level = if matches!(cli.command, relmem_cli::cli::Command::Serve(_)) { "info" } else { "warn" };
    let filter = EnvFilter::try_from_env("RELMEM_LOG").unwrap_or_else(|_| EnvFilter::new(default_level));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(io::stderr).init();

    let stdout = io::stdout();
    let mut out = stdout.lock();
    let result = relmem_cli::run(cli, &mut out);
    let _ = out.flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit)
        }
    }
}
