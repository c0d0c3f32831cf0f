//! The output directory of one command: artifacts, resolved config and manifest.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::settings::Settings;

pub const RESOLVED_CONFIG: &str = "config.resolved";
pub const MANIFEST: &str = "manifest.json";

pub struct OutputDir {
    root: PathBuf,
    files: BTreeSet<String>,
}

#[derive(Serialize)]
struct ManifestEntry {
    name: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    files: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl OutputDir {
    pub fn create(root: PathBuf) -> Result<Self, CliError> {
        std::fs::create_dir_all(&root)
            .map_err(|e| CliError::Io(format!("cannot create output directory {}: {e}", root.display())))?;
        Ok(OutputDir { root, files: BTreeSet::new() })
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        self.files.insert(name.to_string());
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }

    /// Writes the resolved settings and a manifest of everything written.
    pub fn finish(mut self, command: &str, settings: &Settings) -> Result<(), CliError> {
        self.write(RESOLVED_CONFIG, settings.resolved_text())?;
        let files = self
            .files
            .iter()
            .map(|name| {
                let bytes = std::fs::read(self.root.join(name))?;
                Ok(ManifestEntry { name: name.clone(), bytes: bytes.len() as u64, sha256: sha256_hex(&bytes) })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let manifest = Manifest { command, version: env!("CARGO_PKG_VERSION"), files };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.root.join(MANIFEST);
        std::fs::write(&path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
