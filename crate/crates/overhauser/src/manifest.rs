//! Run manifests and replay.
//!
//! A manifest holds everything a run depends on: the resolved config, the
//! command with its input files, the output format and seed. It holds no
//! timestamps or output paths, so a faithful replay reproduces the manifest
//! itself byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::commands::{execute, Command};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::formats::{sha256_hex, Format};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub format: Format,
    pub seed: u64,
    pub config_sha256: String,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    /// Relative to the output directory.
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn new(
        command: Command,
        config: RunConfig,
        format: Format,
        inputs: Vec<FileDigest>,
        outputs: Vec<FileDigest>,
    ) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: crate::VERSION.into(),
            command,
            format,
            seed: config.seed,
            config_sha256: config.sha256(),
            config,
            inputs,
            outputs,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Json {
            path: path.into(),
            source: e,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub manifest: Manifest,
    pub identical: Vec<PathBuf>,
}

/// Re-executes the run recorded at `manifest_path` into `out` and checks
/// every output digest. Inputs must still hash to their recorded values.
pub fn replay(manifest_path: &Path, out: &Path) -> Result<ReplayReport> {
    let recorded = Manifest::load(manifest_path)?;
    if recorded.config.sha256() != recorded.config_sha256 {
        return Err(CliError::Config(
            "embedded config does not match its hash".into(),
        ));
    }
    for input in &recorded.inputs {
        let bytes = fs::read(&input.path).map_err(|e| CliError::io(&input.path, e))?;
        if sha256_hex(&bytes) != input.sha256 {
            return Err(CliError::Config(format!(
                "input {} changed since the run",
                input.path.display()
            )));
        }
    }
    let fresh = execute(&recorded.command, &recorded.config, recorded.format, out)?;
    let mut mismatched: Vec<String> = recorded
        .outputs
        .iter()
        .filter(|f| !fresh.outputs.contains(f))
        .map(|f| f.path.display().to_string())
        .collect();
    mismatched.extend(
        fresh
            .outputs
            .iter()
            .filter(|f| !recorded.outputs.iter().any(|r| r.path == f.path))
            .map(|f| format!("{} (new)", f.path.display())),
    );
    if recorded.version != fresh.version {
        mismatched.push(format!("version {} -> {}", recorded.version, fresh.version));
    }
    if !mismatched.is_empty() {
        return Err(CliError::ReplayMismatch(mismatched));
    }
    Ok(ReplayReport {
        identical: fresh.outputs.iter().map(|f| f.path.clone()).collect(),
        manifest: fresh,
    })
}
