use std::process::ExitCode;

use clap::Parser;
use ehrqa_cli::{execute, Cli, EXIT_FAILURE};
use tracing_subscriber::EnvFilter;

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .json()
        .with_writer(std::io::stderr)
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let mut stdout = std::io::stdout().lock();
    let code = match execute(&cli, &mut stdout) {
        Ok(code) => code,
        Err(e) => {
            tracing::error!(error = format!("{e:#}"), "command failed");
            EXIT_FAILURE
        }
    };
    ExitCode::from(code as u8)
}
