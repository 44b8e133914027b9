//! Output directory bookkeeping and the per-command run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ersinv::io::write_atomic;
use ersinv::profile::RunProfile;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{read_failed, write_failed, CliError};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Serialize)]
pub struct Seeds {
    pub dataset: u64,
    pub train: u64,
}

/// Written as `run-<command>.json` next to the command's outputs. Holds no
/// timestamps, so reruns with identical inputs give identical bytes.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    pub profile: RunProfile,
    pub seeds: Seeds,
    pub threads: usize,
    /// Command-specific arguments.
    pub args: BTreeMap<String, String>,
    /// Input name to SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output file name to SHA-256.
    pub outputs: BTreeMap<String, String>,
}

/// Collects atomically written outputs and input digests for one command.
pub struct Run {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    pub fn new(
        command: &str,
        dir: &Path,
        profile: &RunProfile,
        threads: usize,
    ) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| write_failed(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                command: command.into(),
                version: env!("CARGO_PKG_VERSION"),
                profile: profile.clone(),
                seeds: Seeds {
                    dataset: profile.dataset.seed,
                    train: profile.train.seed,
                },
                threads,
                args: BTreeMap::new(),
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
            },
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn arg(&mut self, key: &str, value: impl ToString) {
        self.manifest.args.insert(key.into(), value.to_string());
    }

    pub fn input_digest(&mut self, name: impl Into<String>, digest: String) {
        self.manifest.inputs.insert(name.into(), digest);
    }

    /// Reads `path` whole and records its digest.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = std::fs::read(path).map_err(|e| read_failed(path, e))?;
        self.input_digest(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes).map_err(|e| write_failed(&path, e))?;
        self.manifest.outputs.insert(name.into(), sha256_hex(bytes));
        Ok(path)
    }

    /// Records a file some other writer already put under the output directory.
    pub fn record(&mut self, name: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| read_failed(&path, e))?;
        self.manifest
            .outputs
            .insert(name.into(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn finish(self) -> Result<PathBuf, CliError> {
        let path = self.dir.join(format!("run-{}.json", self.manifest.command));
        let mut json =
            serde_json::to_vec_pretty(&self.manifest).map_err(|e| write_failed(&path, e))?;
        json.push(b'\n');
        write_atomic(&path, &json).map_err(|e| write_failed(&path, e))?;
        Ok(path)
    }
}
