//! `freqshot` command-line front end.
//!
//! Failures print one JSON line on stderr,
//! `{"error":{"kind":..,"message":..,"field":..}}`, and exit with status 1.

mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;
use freqshot::Error;
use serde_json::json;

use crate::args::{Cli, Command};

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Shape(_) => "shape",
        Error::InvalidArgument(_) => "invalid_argument",
        Error::Config { .. } => "config",
        Error::NonHermitian { .. } => "non_hermitian",
        Error::Manifest(_) => "manifest",
        Error::InsufficientImages { .. } => "insufficient_images",
        Error::Checkpoint(_) => "checkpoint",
        Error::Io { .. } => "io",
        Error::Image { .. } => "image",
        Error::Json(_) => "json",
        Error::Csv(_) => "csv",
    }
}

fn error_line(e: &Error) -> String {
    let field = match e {
        Error::Config { field, .. } => Some(field.as_str()),
        _ => None,
    };
    json!({ "error": { "kind": error_kind(e), "message": e.to_string(), "field": field } }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let threads = cli.threads.max(1);
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Augment(a) => commands::augment(a),
        Command::Decompose(a) => commands::decompose(a),
        Command::Train(a) => commands::train(a, threads),
        Command::Eval(a) => commands::eval(a, threads),
        Command::Probe(a) => commands::probe(a),
        Command::Mmd(a) => commands::mmd(a),
        Command::Ablate(a) => commands::ablate(a, threads),
        Command::ExportFilters(a) => commands::export_filters(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
