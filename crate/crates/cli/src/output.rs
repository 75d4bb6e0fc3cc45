//! Output artifacts and the provenance block carried by each of them.

use crate::{CliError, Scenario};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::Path;

pub const TOOL: &str = "polent";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub command: String,
}

impl Provenance {
    pub fn new(scenario: &Scenario, command: &str) -> Self {
        let hash = Sha256::digest(scenario.canonical_json().as_bytes());
        Self {
            tool: TOOL,
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: hex::encode(hash),
            seed: scenario.seed,
            command: command.to_string(),
        }
    }

    /// `key = value` lines for CSV comment headers.
    pub fn comment_lines(&self) -> Vec<String> {
        vec![
            format!("tool = {}", self.tool),
            format!("version = {}", self.version),
            format!("config_sha256 = {}", self.config_sha256),
            format!("seed = {}", self.seed.map(|s| s.to_string()).unwrap_or_else(|| "none".into())),
            format!("command = {}", self.command),
        ]
    }

    pub fn csv_header(&self) -> String {
        self.comment_lines().iter().map(|l| format!("# {l}\n")).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

/// One output file.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

impl Artifact {
    pub fn new(name: impl Into<String>, contents: impl Into<String>) -> Self {
        Self { name: name.into(), contents: contents.into() }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable output");
    s.push('\n');
    s
}

/// Writes artifacts into `dir`, or to stdout separated by file markers.
pub fn emit(artifacts: &[Artifact], dir: Option<&Path>) -> Result<(), CliError> {
    match dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
            for a in artifacts {
                let path = dir.join(&a.name);
                std::fs::write(&path, &a.contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            }
        }
        None => {
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            let many = artifacts.len() > 1;
            for a in artifacts {
                if many {
                    writeln!(out, "==> {} <==", a.name).map_err(|e| CliError::Io(e.to_string()))?;
                }
                out.write_all(a.contents.as_bytes()).map_err(|e| CliError::Io(e.to_string()))?;
            }
        }
    }
    Ok(())
}
