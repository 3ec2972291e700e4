//! Report envelopes and artifact files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Hex SHA-256 of the compact JSON encoding of `config`.
pub fn config_hash(config: &Value) -> String {
    let bytes = serde_json::to_vec(config).expect("JSON values always serialize");
    Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Serialize)]
pub struct Envelope<'a, R: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_hash: String,
    pub seed: u64,
    pub config: &'a Value,
    pub verdict: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_check: Option<&'a str>,
    pub report: &'a R,
}

impl<'a, R: Serialize> Envelope<'a, R> {
    pub fn new(command: &'static str, seed: u64, config: &'a Value, verdict: &'a str, report: &'a R) -> Self {
        Self {
            tool: "cmcheck",
            version: cmcheck::VERSION,
            command,
            config_hash: config_hash(config),
            seed,
            config,
            verdict,
            model_check: None,
            report,
        }
    }
}

/// Output directory, created on first write.
#[derive(Debug, Clone)]
pub struct OutDir(PathBuf);

impl OutDir {
    pub fn new(path: PathBuf) -> Self {
        Self(path)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    fn ensure(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.0).map_err(|e| CliError::io(&self.0, e))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
        text.push('\n');
        self.write_text(name, &text)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        self.ensure()?;
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

pub fn display(path: &Path) -> String {
    path.display().to_string()
}
