mod args;
mod commands;
mod config;
mod rundir;

use std::process::ExitCode;

use clap::{CommandFactory, Parser};

use args::Cli;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration; exit status 2.
    Usage(String),
    /// The command was well formed but failed; exit status 1.
    Domain(String),
}

macro_rules! domain_errors {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Domain(e.to_string())
            }
        })*
    };
}

domain_errors!(
    eicl::error::Error,
    eicl::corpus::CorpusError,
    eicl::tensor::TensorError,
    eicl::retrieval::RetrievalError,
    eicl::decision::DecisionError,
    eicl::llm::LlmError,
    eicl::probe::ProbeError,
    eicl::eval::EvalError,
    std::io::Error,
    csv::Error,
    serde_json::Error
);

fn init_logging(cli: &Cli) {
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else {
        match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            2 => log::LevelFilter::Debug,
            _ => log::LevelFilter::Trace,
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_env("EICL_LOG")
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli);
    match commands::execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            let mut cmd = Cli::command();
            let _ = cmd.error(clap::error::ErrorKind::ValueValidation, msg).print();
            ExitCode::from(2)
        }
        Err(CliError::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
