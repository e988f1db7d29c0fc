//! Output directory bookkeeping and content hashes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Row-major nested vectors for JSON export.
pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Writes files under a root and remembers the hash of each one.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: BTreeMap<String, String>,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self, CliError> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| CliError::validation(format!("{}: {e}", root.display())))?;
        Ok(Self { root, written: BTreeMap::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::validation(format!("{}: {e}", parent.display())))?;
        }
        std::fs::write(&path, bytes).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        self.written.insert(rel.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    pub fn write_text(&mut self, rel: &str, text: &str) -> Result<PathBuf, CliError> {
        self.write(rel, text.as_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::numerical(e.to_string()))?;
        text.push('\n');
        self.write_text(rel, &text)
    }

    pub fn write_matrix(&mut self, rel: &str, m: &DMatrix<f64>) -> Result<PathBuf, CliError> {
        self.write_text(rel, &shapecov::io::matrix_to_csv(m))
    }

    pub fn hashes(&self) -> &BTreeMap<String, String> {
        &self.written
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_sha256: String,
    /// `complete`, or the stage at which the run stopped.
    pub status: String,
    /// Input label → hash; paths are omitted so relocated inputs give the same manifest.
    pub inputs: BTreeMap<String, String>,
    pub outputs: &'a BTreeMap<String, String>,
}

impl<'a> Manifest<'a> {
    pub fn new(config_text: &str, inputs: BTreeMap<String, String>, out: &'a OutputDir) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: sha256_hex(config_text.as_bytes()),
            status: "complete".into(),
            inputs,
            outputs: out.hashes(),
        }
    }
}
