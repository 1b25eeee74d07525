//! Run manifests, content hashes and atomic output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

pub fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256(&bytes))
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, dir.join(name))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// Arguments that reproduce the run, without output directory or threads.
    pub replay: Vec<String>,
    pub inputs: Vec<FileHash>,
    /// Hash over the replay arguments and every input hash.
    pub config_hash: String,
    pub outputs: Vec<FileHash>,
}

/// A command's named output files.
#[derive(Debug, Default)]
pub struct Outputs {
    pub files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into()));
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.add(name, s);
        Ok(())
    }
}

impl Manifest {
    pub fn new(command: &str, seed: u64, replay: Vec<String>, inputs: &[PathBuf]) -> Result<Self, CliError> {
        let inputs = inputs
            .iter()
            .map(|p| Ok(FileHash { path: p.display().to_string(), sha256: hash_file(p)? }))
            .collect::<Result<Vec<_>, CliError>>()?;
        let mut h = Sha256::new();
        for a in &replay {
            h.update(a.as_bytes());
            h.update([0]);
        }
        for i in &inputs {
            h.update(i.sha256.as_bytes());
        }
        Ok(Manifest {
            schema_version: 1,
            tool: "gfc".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            replay,
            inputs,
            config_hash: hex::encode(h.finalize()),
            outputs: Vec::new(),
        })
    }

    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST);
        let text =
            fs::read_to_string(&path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Writes every output and then the manifest listing their hashes.
    pub fn write(mut self, dir: &Path, outputs: &Outputs) -> Result<(), CliError> {
        for (name, bytes) in &outputs.files {
            write_atomic(dir, name, bytes)?;
            self.outputs.push(FileHash { path: name.clone(), sha256: sha256(bytes) });
        }
        let mut s = serde_json::to_string_pretty(&self)?;
        s.push('\n');
        write_atomic(dir, MANIFEST, s.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_temporary() {
        let dir = tempfile::tempdir().unwrap();
        write_atomic(dir.path(), "a.txt", b"one").unwrap();
        write_atomic(dir.path(), "a.txt", b"two").unwrap();
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from("a.txt")]);
        assert_eq!(fs::read(dir.path().join("a.txt")).unwrap(), b"two");
    }

    #[test]
    fn known_digest() {
        assert_eq!(sha256(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
