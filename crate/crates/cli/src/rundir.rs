//! Run directories and manifests.
//!
//! A run directory is claimed atomically (`create_dir`) under the name
//! `<command>-<seed>-<timestamp>`, with a numeric suffix when two runs land
//! in the same second. `manifest.json` is written last, after the command
//! succeeded, so its presence marks a completed run.

use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, ExecSpec};

pub const MANIFEST_FILE: &str = "manifest.json";

/// One input file with the SHA-256 it had when the run executed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputFile {
    pub name: String,
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to replay a run: the resolved spec, where its artifacts
/// went, and the hashes of what it read.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub created_utc: String,
    pub out_parent: PathBuf,
    pub inputs: Vec<InputFile>,
    pub spec: ExecSpec,
}

impl Manifest {
    pub fn new(spec: &ExecSpec, out_parent: &Path, inputs: Vec<InputFile>) -> Self {
        Manifest {
            tool: "molshift".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            created_utc: Utc::now().format("%Y-%m-%dT%H:%M:%SZ").to_string(),
            out_parent: out_parent.to_path_buf(),
            inputs,
            spec: spec.clone(),
        }
    }
}

/// A freshly created, uniquely named run directory.
#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    /// Create `<parent>/<command>-<seed>-<timestamp>[-<n>]`.
    pub fn create(parent: &Path, command: &str, seed: u64) -> Result<RunDir, CliError> {
        fs::create_dir_all(parent).map_err(|e| {
            CliError::Usage(format!(
                "cannot create output directory {}: {e}",
                parent.display()
            ))
        })?;
        let stamp = Utc::now().format("%Y%m%dT%H%M%SZ");
        let base = format!("{command}-{seed}-{stamp}");
        for attempt in 1u32.. {
            let name = if attempt == 1 {
                base.clone()
            } else {
                format!("{base}-{attempt}")
            };
            let path = parent.join(&name);
            match fs::create_dir(&path) {
                Ok(()) => return Ok(RunDir { path }),
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
                Err(e) => {
                    return Err(CliError::Usage(format!(
                        "cannot create run directory {}: {e}",
                        path.display()
                    )))
                }
            }
        }
        unreachable!("suffix loop always returns");
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Path of an artifact inside the run directory.
    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Buffered writer for a new artifact inside the run directory.
    pub fn create_file(&self, name: &str) -> Result<BufWriter<fs::File>, CliError> {
        let path = self.file(name);
        let file = fs::File::create(&path).map_err(|e| {
            CliError::Usage(format!("cannot write {}: {e}", path.display()))
        })?;
        Ok(BufWriter::new(file))
    }

    /// Write a whole artifact at once.
    pub fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.file(name);
        fs::write(&path, contents)
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
    }

    pub fn write_manifest(&self, manifest: &Manifest) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(manifest)
            .expect("manifest serialization cannot fail");
        self.write(MANIFEST_FILE, &(text + "\n"))
    }
}

/// Hex SHA-256 of a file's contents.
pub fn sha256_hex(path: &Path) -> io::Result<String> {
    let mut file = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write as _;
        write!(out, "{b:02x}").expect("writing to a String cannot fail");
    }
    Ok(out)
}

/// Flush helper so CSV writers report failures as usage errors.
pub fn finish<W: Write>(mut w: BufWriter<W>, what: &str) -> Result<(), CliError> {
    w.flush()
        .map_err(|e| CliError::Usage(format!("cannot write {what}: {e}")))
}
