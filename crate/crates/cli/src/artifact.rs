//! Reading inputs and writing outputs with provenance metadata.
//!
//! JSON outputs carry a `meta` object. CSV and JSON-lines outputs get a
//! `<file>.manifest.json` sidecar, and `generate` writes one `manifest.json`
//! per output directory. Nothing time-dependent is recorded, so reruns with
//! the same inputs produce byte-identical files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Hash of the effective configuration in its canonical JSON form. Output
/// locations are left out so the same experiment hashes the same wherever it
/// is written.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let mut config = config.clone();
    config.paths.out = None;
    config.paths.out_dir = None;
    let canonical = serde_json::to_vec(&config).expect("configuration serializes");
    sha256_hex(&canonical)
}

#[derive(Debug, Clone)]
pub struct Provenance {
    pub command: &'static str,
    pub seed: Option<u64>,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(command: &'static str, config: &ExperimentConfig) -> Self {
        Self {
            command,
            seed: config.seed,
            config_hash: config_hash(config),
        }
    }

    pub fn meta(&self) -> Value {
        json!({
            "tool": "topotrack",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "seed": self.seed,
            "config_hash": self.config_hash,
        })
    }

    /// Sidecar listing the given files with their content hashes.
    pub fn write_manifest(
        &self,
        path: &Path,
        files: &[PathBuf],
        extra: Value,
    ) -> Result<(), CliError> {
        let mut listed = Vec::new();
        for f in files {
            let bytes = std::fs::read(f).map_err(|e| runtime(f, e))?;
            listed.push(json!({
                "file": f.file_name().map(|n| n.to_string_lossy().into_owned()),
                "sha256": sha256_hex(&bytes),
            }));
        }
        let mut doc = self.meta();
        doc["files"] = Value::Array(listed);
        if !extra.is_null() {
            doc["details"] = extra;
        }
        write_json(path, &doc)
    }

    /// Sidecar for a single CSV or JSON-lines output.
    pub fn write_sidecar(&self, output: &Path, extra: Value) -> Result<(), CliError> {
        self.write_manifest(&sidecar_path(output), &[output.to_path_buf()], extra)
    }
}

pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn runtime(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

pub fn open_input(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))
}

pub fn read_input(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

/// Runs `body` against a buffered writer for `path`; write failures are runtime errors.
pub fn write_with<F>(path: &Path, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<(), CliError>,
{
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| runtime(dir, e))?;
    }
    let file = File::create(path).map_err(|e| runtime(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).map_err(|e| match e {
        CliError::Input(m) => CliError::Runtime(m),
        other => other,
    })?;
    w.flush().map_err(|e| runtime(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_with(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| runtime(path, e))?;
        writeln!(w).map_err(|e| runtime(path, e))
    })
}
