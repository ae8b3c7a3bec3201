use std::path::{Path, PathBuf};

use memometer::{Config, Dataset};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub role: String,
    pub paths: Vec<PathBuf>,
    pub n: usize,
    pub dim: usize,
    /// SHA-256 over ids, shape and sample bytes.
    pub fingerprint: String,
}

impl DatasetRecord {
    pub fn new(role: &str, paths: &[PathBuf], ds: &Dataset) -> Self {
        Self {
            role: role.into(),
            paths: paths.to_vec(),
            n: ds.len(),
            dim: ds.dim(),
            fingerprint: ds.fingerprint(),
        }
    }

    /// A tabular input such as a growth CSV, fingerprinted by its bytes.
    pub fn file(role: &str, path: &Path, n: usize, dim: usize) -> Result<Self, Failure> {
        Ok(Self {
            role: role.into(),
            paths: vec![path.to_path_buf()],
            n,
            dim,
            fingerprint: sha256_file(path)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name, as given.
    pub args: Vec<String>,
    /// Working directory the arguments are relative to.
    pub cwd: PathBuf,
    pub seed: u64,
    pub provider: String,
    pub config: Config,
    pub datasets: Vec<DatasetRecord>,
    pub outputs: Vec<OutputRecord>,
    pub timing: Timing,
    pub threads: usize,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("reading manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("manifest {}: {e}", path.display())))
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, Failure> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        std::fs::write(&path, text + "\n").map_err(|e| Failure::Data(format!("writing {}: {e}", path.display())))?;
        Ok(path)
    }
}

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Data(format!("reading {}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}
