//! Output directory bookkeeping and the run manifest.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use simplex_stdp::export::sha256_hex;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Versions {
    #[serde(rename = "simplex-stdp")]
    pub library: &'static str,
    #[serde(rename = "simplex-stdp-cli")]
    pub cli: &'static str,
}

impl Versions {
    pub fn current() -> Self {
        Versions {
            library: simplex_stdp::VERSION,
            cli: env!("CARGO_PKG_VERSION"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub scenario: String,
    pub versions: Versions,
    pub seed: u64,
    pub config_digest: String,
    pub config: Value,
    pub files: Vec<FileEntry>,
}

/// Writes files under one root and records their digests.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root).map_err(|e| CliError::Output(format!("{}: {e}", root.display())))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    /// Renders `fill` into `relative` (slash-separated) and records it.
    pub fn write<F>(&mut self, relative: &str, fill: F) -> CliResult<()>
    where
        F: FnOnce(&mut Vec<u8>) -> simplex_stdp::Result<()>,
    {
        let mut bytes = Vec::new();
        fill(&mut bytes)?;
        self.write_bytes(relative, bytes)
    }

    pub fn write_json<T: Serialize>(&mut self, relative: &str, value: &T) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        bytes.push(b'\n');
        self.write_bytes(relative, bytes)
    }

    pub fn write_text(&mut self, relative: &str, text: &str) -> CliResult<()> {
        self.write_bytes(relative, text.as_bytes().to_vec())
    }

    pub fn write_bytes(&mut self, relative: &str, bytes: Vec<u8>) -> CliResult<()> {
        let path = self.root.join(relative);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::Output(format!("{}: {e}", parent.display())))?;
        }
        let mut file = std::fs::File::create(&path).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
        file.write_all(&bytes)
            .map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
        self.files.push(FileEntry {
            path: relative.to_string(),
            bytes: bytes.len(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish(mut self, scenario: &str, seed: u64, config: Value) -> CliResult<Manifest> {
        let config_digest = simplex_stdp::export::digest(&config)?;
        let manifest = Manifest {
            scenario: scenario.to_string(),
            versions: Versions::current(),
            seed,
            config_digest,
            config,
            files: std::mem::take(&mut self.files),
        };
        self.write_json("manifest.json", &manifest)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_digests_and_nested_paths() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(&dir.path().join("a")).unwrap();
        out.write_text("sub/x.txt", "abc").unwrap();
        assert_eq!(
            out.files()[0].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let manifest = out.finish("landscape-grid", 4, serde_json::json!({"k": 1})).unwrap();
        assert_eq!(manifest.files.len(), 1);
        let text = std::fs::read_to_string(dir.path().join("a/manifest.json")).unwrap();
        assert!(text.contains("\"sub/x.txt\""));
        assert_eq!(std::fs::read_to_string(dir.path().join("a/sub/x.txt")).unwrap(), "abc");
    }

    #[test]
    fn unwritable_root_is_an_output_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        assert_eq!(OutputDir::create(&blocker.join("child")).unwrap_err().exit_code(), 73);
    }
}
