//! Run directories: staged next to their final path and renamed into place
//! on success, so a directory either holds a complete run or does not exist.

use std::fs;
use std::path::{Path, PathBuf};

use ncsim::config::ExperimentConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const REPORT: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to re-run a command exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Command line after the program name.
    pub args: Vec<String>,
    pub seed: u64,
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub inputs: Vec<InputFile>,
}

pub fn file_digest(path: &Path) -> Result<InputFile, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(InputFile {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

pub struct RunDir {
    target: PathBuf,
    staging: PathBuf,
    force: bool,
}

impl RunDir {
    /// Refuses an existing target unless `force`; nothing is removed until commit.
    pub fn create(target: &Path, force: bool) -> Result<Self, CliError> {
        if target.exists() && !force {
            return Err(CliError::Exists(target.to_path_buf()));
        }
        let name = target
            .file_name()
            .ok_or_else(|| CliError::Usage(format!("output path {} has no final component", target.display())))?;
        let mut staged = name.to_os_string();
        staged.push(format!(".partial-{}", std::process::id()));
        let staging = target.with_file_name(staged);
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| CliError::io(&staging, e))?;
        }
        fs::create_dir_all(&staging).map_err(|e| CliError::io(&staging, e))?;
        Ok(Self {
            target: target.to_path_buf(),
            staging,
            force,
        })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.staging.join(file)
    }

    pub fn write(&self, file: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        let p = self.path(file);
        fs::write(&p, contents).map_err(|e| CliError::io(&p, e))
    }

    pub fn write_json<T: Serialize>(&self, file: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(e.to_string()))?;
        text.push('\n');
        self.write(file, text)
    }

    pub fn commit(self) -> Result<PathBuf, CliError> {
        if self.target.exists() {
            if !self.force {
                return Err(CliError::Exists(self.target.clone()));
            }
            fs::remove_dir_all(&self.target).map_err(|e| CliError::io(&self.target, e))?;
        }
        fs::rename(&self.staging, &self.target).map_err(|e| CliError::io(&self.target, e))?;
        Ok(self.target.clone())
    }

    pub fn abandon(self) {
        let _ = fs::remove_dir_all(&self.staging);
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Core(ncsim::Error::Config(format!("{}: {e}", path.display()))))
}
