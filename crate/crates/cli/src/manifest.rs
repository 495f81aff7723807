use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const FILE_NAME: &str = "manifest.json";

/// Provenance of one command's outputs. Holds no timestamps so identical
/// runs write identical manifests.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub format: &'static str,
    pub command: &'a str,
    pub tool_version: &'static str,
    pub seed: Option<u64>,
    /// SHA-256 of the resolved config as written next to the outputs.
    pub config_sha256: Option<String>,
    /// SHA-256 of every output file, keyed by file name.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl<'a> Manifest<'a> {
    pub fn new(command: &'a str, seed: Option<u64>, config_text: Option<&str>) -> Self {
        Self {
            format: "fairagent-manifest/1",
            command,
            tool_version: env!("CARGO_PKG_VERSION"),
            seed,
            config_sha256: config_text.map(|t| sha256_hex(t.as_bytes())),
            outputs: BTreeMap::new(),
        }
    }

    /// Writes `bytes` to `dir/name` and records its hash.
    pub fn write_file(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        fs::write(dir.join(name), bytes)?;
        self.outputs.insert(name.to_owned(), sha256_hex(bytes));
        Ok(())
    }

    pub fn finish(self, dir: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        fs::write(dir.join(FILE_NAME), text + "\n")
    }
}
