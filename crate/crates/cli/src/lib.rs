//! `pointlift` command line: one subcommand per pipeline stage.
//!
//! Stages share a bundle directory and a work directory of artifacts (see
//! [`commands::files`]). Each successful run prints one JSON summary line on
//! standard output; failures print `{"error": code, "message": ...}` on
//! standard error and exit 1 (validation), 2 (I/O) or 3 (backend).

pub mod args;
pub mod commands;
pub mod error;

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::Parser;

pub use args::{Cli, Command};
pub use error::CliError;

/// Runs a parsed command line.
pub fn execute(cli: &Cli) -> Result<serde_json::Value, CliError> {
    let cfg = cli.pipeline.resolve()?;
    if cfg.threads > 0 {
        // fails only if a pool already exists, e.g. a second call in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Ingest(a) => commands::ingest(a),
        Command::Filter(a) => commands::filter(a, &cfg),
        Command::Segment(a) => commands::segment(a, &cfg),
        Command::Edit(a) => commands::edit(a, &cfg),
        Command::Project(a) => commands::project(a, &cfg),
        Command::Render(a) => commands::render(a, &cfg),
        Command::Eval(a) => commands::eval(a, &cfg),
        Command::Serve(a) => {
            init_logging();
            commands::serve(a, &cfg)
        }
    }
}

fn init_logging() {
    use tracing_subscriber::EnvFilter;
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

/// Parses `argv`, runs it and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", CliError::validation("usage", first).to_json_line());
            return 1;
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            e.exit_code()
        }
    }
}
