//! Staged, all-or-nothing artifact writing and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::failure::{Failure, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Failure::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Artifacts collected in memory and written only once the whole run has
/// succeeded. Each file goes to a temporary sibling first and is renamed
/// into place.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.files.push((path, bytes));
    }

    pub fn add_text(&mut self, path: PathBuf, text: String) {
        self.add(path, text.into_bytes());
    }

    /// `(file name, sha256)` of every staged artifact.
    pub fn checksums(&self) -> BTreeMap<String, String> {
        self.files
            .iter()
            .map(|(p, b)| (p.display().to_string(), sha256_hex(b)))
            .collect()
    }

    pub fn commit(self) -> Result<Vec<PathBuf>> {
        for (path, _) in &self.files {
            let parent = parent_dir(path);
            if !parent.is_dir() {
                return Err(Failure::config(format!(
                    "output directory `{}` does not exist",
                    parent.display()
                )));
            }
        }
        let mut staged = Vec::with_capacity(self.files.len());
        for (path, bytes) in &self.files {
            let tmp = temp_name(path);
            let write = || -> std::io::Result<()> {
                let mut f = fs::File::create(&tmp)?;
                f.write_all(bytes)?;
                f.sync_all()
            };
            if let Err(e) = write() {
                let _ = fs::remove_file(&tmp);
                for t in &staged {
                    let _ = fs::remove_file(t);
                }
                return Err(Failure::io(path, e));
            }
            staged.push(tmp);
        }
        for ((path, _), tmp) in self.files.iter().zip(&staged) {
            fs::rename(tmp, path).map_err(|e| Failure::io(path, e))?;
        }
        Ok(self.files.into_iter().map(|(p, _)| p).collect())
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn temp_name(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    parent_dir(path).join(format!(".{name}.partial"))
}

/// Record of one run: the resolved configuration, input and output
/// checksums. Feeding it back through `--config` repeats the run.
#[derive(Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config: BTreeMap<&'a str, &'a C>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl<'a, C: Serialize> Manifest<'a, C> {
    pub fn new(command: &'a str, config: &'a C) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: BTreeMap::from([(command, config)]),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), file_sha256(path)?);
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|s| s + "\n")
            .map_err(|e| Failure::data(format!("manifest: {e}")))
    }
}
