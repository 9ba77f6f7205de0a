//! Configuration, snapshot files, CSV tables and output-directory locking.

pub mod config;
pub mod csv;
pub mod snapshot_file;

use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

pub use config::{AssemblySection, FamilySection, RunConfig};
pub use snapshot_file::{
    read_snapshot, read_snapshot_file, sidecar_json, write_snapshot, write_snapshot_file, SnapshotHeader,
    FORMAT_VERSION, MAGIC,
};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum IoError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("unsupported snapshot format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
    #[error("output directory {0} is locked by another run")]
    Locked(String),
}

impl From<std::io::Error> for IoError {
    fn from(e: std::io::Error) -> Self {
        IoError::Io(e.to_string())
    }
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
    _file: File,
}

pub const LOCK_NAME: &str = ".granpack.lock";

impl DirLock {
    /// Creates the directory if needed and takes its lock file.
    pub fn acquire(dir: &Path) -> Result<Self, IoError> {
        std::fs::create_dir_all(dir).map_err(|e| IoError::Io(format!("{}: {e}", dir.display())))?;
        let path = dir.join(LOCK_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(file) => Ok(Self { path, _file: file }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(IoError::Locked(dir.display().to_string()))
            }
            Err(e) => Err(IoError::Io(format!("{}: {e}", path.display()))),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Writes `contents` to `path`, naming the file in any error.
pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), IoError> {
    std::fs::write(path, contents).map_err(|e| IoError::Io(format!("{}: {e}", path.display())))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
