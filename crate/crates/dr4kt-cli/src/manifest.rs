//! Run manifests: one per output directory, recording the command, the
//! resolved config, input digests, the seed, tool version and timestamps,
//! plus a digest of every data file the command wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use dr4kt_core::checkpoint::file_sha256;
use dr4kt_core::error::{Error, Result};
use dr4kt_core::training::ExperimentConfig;

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: Option<ExperimentConfig>,
    /// Input path -> sha256 of its contents (directories: digest of their
    /// manifest when present, else skipped).
    pub inputs: BTreeMap<String, String>,
    /// Output file (relative to the run dir) -> sha256.
    pub outputs: BTreeMap<String, String>,
    pub written_unix_secs: u64,
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else if path.file_name().and_then(|n| n.to_str()) != Some(MANIFEST_FILE) {
            out.push(path);
        }
    }
    Ok(())
}

/// Digest the directory's data files and write the manifest. Two runs with
/// identical inputs and seed produce identical `outputs` maps.
pub fn write(
    dir: &Path,
    argv: &[String],
    inputs: &[PathBuf],
    seed: Option<u64>,
    config: Option<&ExperimentConfig>,
) -> Result<()> {
    let mut input_digests = BTreeMap::new();
    for input in inputs {
        let digest = if input.is_dir() {
            let inner = input.join(MANIFEST_FILE);
            if inner.exists() {
                file_sha256(&inner)?
            } else {
                continue;
            }
        } else {
            file_sha256(input)?
        };
        input_digests.insert(input.display().to_string(), digest);
    }

    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    files.sort();
    let mut outputs = BTreeMap::new();
    for file in files {
        let rel = file
            .strip_prefix(dir)
            .unwrap_or(&file)
            .to_string_lossy()
            .to_string();
        outputs.insert(rel, file_sha256(&file)?);
    }

    let manifest = RunManifest {
        command: argv.to_vec(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config: config.cloned(),
        inputs: input_digests,
        outputs,
        written_unix_secs: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}
