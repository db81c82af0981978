//! Run manifests: what a job was asked to do, what it read and what it wrote.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ewcgan_core::digest::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Diverged,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub digest: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            digest: sha256_hex(&bytes),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub command: String,
    pub config_digest: String,
    /// The full job description; rerunning it reproduces `outputs`.
    pub job: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the manifest's directory.
    pub outputs: Vec<FileDigest>,
    pub wall_clock_seconds: f64,
    pub status: Status,
    pub error: Option<String>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(path, e))
    }

    /// Existing manifest in `dir` with status ok, if any.
    pub fn completed(dir: &Path) -> Option<Self> {
        Self::load(&dir.join(MANIFEST_FILE))
            .ok()
            .filter(|m| m.status == Status::Ok)
    }
}

/// Runs `job` inside `dir`, which receives the named outputs, then records a
/// manifest. Failures are recorded too and returned to the caller.
pub fn execute<J, T>(
    dir: &Path,
    run_id: &str,
    command: &str,
    job: &J,
    inputs: &[PathBuf],
    run: impl FnOnce(&Path) -> Result<(T, Vec<&'static str>)>,
) -> Result<(T, Manifest)>
where
    J: Serialize,
{
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let inputs = inputs
        .iter()
        .map(|p| FileDigest::of(p))
        .collect::<Result<Vec<_>>>()?;
    let start = Instant::now();
    let outcome = run(dir);
    let mut manifest = Manifest {
        run_id: run_id.to_string(),
        command: command.to_string(),
        config_digest: ewcgan_core::digest::json_digest(job),
        job: serde_json::to_value(job).expect("job serializes"),
        inputs,
        outputs: Vec::new(),
        wall_clock_seconds: 0.0,
        status: Status::Ok,
        error: None,
    };
    let result = match outcome {
        Ok((value, files)) => {
            for f in files {
                let d = FileDigest::of(&dir.join(f))?;
                manifest.outputs.push(FileDigest {
                    path: PathBuf::from(f),
                    digest: d.digest,
                });
            }
            Ok(value)
        }
        Err(e) => {
            manifest.status = match &e {
                CliError::Core(ewcgan_core::Error::Divergence { .. }) => Status::Diverged,
                _ => Status::Failed,
            };
            manifest.error = Some(e.to_string());
            Err(e)
        }
    };
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    manifest.save(dir)?;
    result.map(|v| (v, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_outputs_and_failures() {
        let dir = tempfile::tempdir().unwrap();
        let (v, m) = execute(dir.path(), "r", "test", &("job", 1), &[], |d| {
            std::fs::write(d.join("a.txt"), "hello").unwrap();
            Ok((5, vec!["a.txt"]))
        })
        .unwrap();
        assert_eq!(v, 5);
        assert_eq!(m.status, Status::Ok);
        assert_eq!(m.outputs[0].digest, sha256_hex(b"hello"));
        assert_eq!(Manifest::completed(dir.path()).unwrap().outputs, m.outputs);

        let failed = tempfile::tempdir().unwrap();
        let err = execute::<_, ()>(failed.path(), "r", "test", &1, &[], |_| {
            Err(CliError::Core(ewcgan_core::Error::Divergence {
                iteration: 3,
                detail: "x".into(),
            }))
        });
        assert!(err.is_err());
        let m = Manifest::load(&failed.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(m.status, Status::Diverged);
        assert!(Manifest::completed(failed.path()).is_none());
    }
}
