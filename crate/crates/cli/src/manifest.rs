//! Run manifests and atomic output files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to re-run a subcommand and check its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub seed: u64,
    pub wall_time_seconds: f64,
    pub threads: usize,
    /// `--out` of the original run; output names are derived from it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    /// Labels of the random streams derived from the seed.
    #[serde(default)]
    pub streams: Vec<String>,
    pub outputs: Vec<OutputRecord>,
    /// Fully resolved job description; replaying runs exactly this.
    pub job: toml::Table,
    /// Derived quantities worth keeping next to the outputs.
    #[serde(default)]
    pub results: toml::Table,
}

impl RunManifest {
    pub fn to_text(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and a rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Io(e.error))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Files written by one run, with their digests.
#[derive(Debug, Default)]
pub struct Outputs {
    pub records: Vec<OutputRecord>,
}

impl Outputs {
    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)?;
        self.records.push(OutputRecord {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }
}

/// `<out>.manifest`
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

/// `<prefix>.<ext>`
pub fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}
