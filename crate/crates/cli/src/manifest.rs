//! Run manifests: the resolved command, its hash and the digests of every
//! artifact it wrote.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::Command;
use crate::commands;
use crate::Failure;

pub const FILE: &str = "manifest.json";

#[derive(Serialize, Deserialize, Debug)]
pub struct Output {
    pub file: String,
    pub sha256: String,
}

#[derive(Serialize, Deserialize, Debug)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub command: Command,
    pub outputs: Vec<Output>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(p: &Path) -> Result<String, Failure> {
    Ok(hex(&Sha256::digest(fs::read(p)?)))
}

pub fn config_hash(cmd: &Command) -> Result<String, Failure> {
    Ok(hex(&Sha256::digest(serde_json::to_vec(cmd)?)))
}

fn seed_of(cmd: &Command) -> Option<u64> {
    match cmd {
        Command::Generate(a) => a.seed.seed,
        Command::Correlate(a) => a.seed.seed,
        Command::Simulate(a) => a.seed.seed,
        Command::Validate(a) => a.seed.seed,
        _ => None,
    }
}

pub fn write(cmd: &Command, out: &Path, files: &[String]) -> Result<(), Failure> {
    let outputs = files
        .iter()
        .map(|f| {
            Ok(Output {
                file: f.clone(),
                sha256: sha256_file(&out.join(f))?,
            })
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    let m = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(cmd)?,
        seed: seed_of(cmd),
        command: cmd.clone(),
        outputs,
    };
    let mut text = serde_json::to_string_pretty(&m)?;
    text.push('\n');
    fs::write(out.join(FILE), text)?;
    Ok(())
}

/// Re-runs the stored command into `out` and checks every artifact digest.
pub fn replay(path: &Path, out: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let h = config_hash(&m.command)?;
    if h != m.config_hash {
        return Err(Failure::usage(format!(
            "config_hash: stored {} but the command hashes to {h}",
            m.config_hash
        )));
    }
    let outcome = commands::run(&m.command, out)?;
    let mut mismatched = Vec::new();
    for o in &m.outputs {
        if !outcome.files.contains(&o.file) || sha256_file(&out.join(&o.file))? != o.sha256 {
            mismatched.push(o.file.clone());
        }
    }
    if !mismatched.is_empty() {
        return Err(Failure::failed(format!("replay differs in: {}", mismatched.join(", "))));
    }
    println!("replay ok: {} outputs identical", m.outputs.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    fn parse(args: &[&str]) -> Command {
        #[derive(Parser)]
        struct P {
            #[command(subcommand)]
            c: Command,
        }
        P::parse_from(std::iter::once("x").chain(args.iter().copied())).c
    }

    #[test]
    fn config_hash_tracks_the_command() {
        let a = parse(&["analytic", "--delta", "0.1", "--tc", "2"]);
        let b = parse(&["analytic", "--delta", "0.1", "--tc", "2"]);
        let c = parse(&["analytic", "--delta", "0.1", "--tc", "3"]);
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_ne!(config_hash(&a).unwrap(), config_hash(&c).unwrap());
        assert_eq!(config_hash(&a).unwrap().len(), 64);
    }

    #[test]
    fn seed_only_for_stochastic_commands() {
        assert_eq!(seed_of(&parse(&["simulate", "--delta", "0.1", "--tc", "2", "--seed", "5"])), Some(5));
        assert_eq!(seed_of(&parse(&["analytic", "--delta", "0.1", "--tc", "2"])), None);
    }
}
