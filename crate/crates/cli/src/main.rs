//! `noise-witness` command line.

mod args;
mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use args::Command;

#[derive(Parser, Debug)]
#[command(name = "noise-witness", version, about = "Dephasing-noise generation, Ramsey analytics and regime witnesses")]
struct Cli {
    /// Worker threads for ensembles and multi-start fits (outputs do not
    /// depend on it).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Directory for artifacts and the manifest.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    action: Action,
}

#[derive(Subcommand, Debug)]
enum Action {
    #[command(flatten)]
    Run(Command),
    /// Re-run the command stored in a manifest.
    Replay {
        manifest: PathBuf,
    },
}

/// Failure with its exit status: 1 for a failed validation or fit, 2 for
/// bad input.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    pub fn failed(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<noise_witness::Error> for Failure {
    fn from(e: noise_witness::Error) -> Self {
        use noise_witness::Error as E;
        let code = match e {
            E::FitNonConvergence { .. } | E::Unidentifiable { .. } | E::QuadratureNonConvergence { .. } => 1,
            E::Io(_) => 1,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::failed(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global() {
            eprintln!("warning: {e}");
        }
    }
    let result = match cli.action {
        Action::Run(cmd) => commands::resolve(cmd).and_then(|cmd| commands::execute(&cmd, &cli.out)),
        Action::Replay { manifest } => manifest::replay(&manifest, &cli.out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
