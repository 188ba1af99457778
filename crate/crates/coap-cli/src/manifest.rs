//! Run manifests: a human-readable key-value record of what a command did.
//!
//! Schema (one `key = value` pair per line):
//!
//! ```text
//! command = <subcommand name>
//! software_version = <crate version>
//! wall_time_seconds = <real>
//! config.<name> = <resolved value>     # one line per configuration field
//! input.<file name> = sha256:<hex>     # one line per input file
//! output = <path>                      # one line per produced file
//! ```
//!
//! The config section records every default actually used, so replaying
//! the command with those values reproduces the outputs.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::CliError;

pub struct RunManifest {
    command: String,
    config: Vec<(String, String)>,
    input_hashes: Vec<(String, String)>,
    outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            config: Vec::new(),
            input_hashes: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn config(&mut self, key: &str, value: impl ToString) {
        self.config.push((key.to_string(), value.to_string()));
    }

    /// Hash an input file's content (sha256) into the manifest.
    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let digest = Sha256::digest(&bytes);
        let name = path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.input_hashes.push((name, format!("sha256:{digest:x}")));
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Write the manifest, listing itself as the final output.
    pub fn write(mut self, path: &Path, wall_time_seconds: f64) -> Result<(), CliError> {
        self.outputs.push(path.display().to_string());
        let mut out = String::new();
        out.push_str(&format!("command = {}\n", self.command));
        out.push_str(&format!("software_version = {}\n", env!("CARGO_PKG_VERSION")));
        out.push_str(&format!("wall_time_seconds = {wall_time_seconds:.6}\n"));
        for (k, v) in &self.config {
            out.push_str(&format!("config.{k} = {v}\n"));
        }
        for (name, digest) in &self.input_hashes {
            out.push_str(&format!("input.{name} = {digest}\n"));
        }
        for o in &self.outputs {
            out.push_str(&format!("output = {o}\n"));
        }
        std::fs::write(path, out).map_err(|e| CliError::io(path, e))
    }
}
