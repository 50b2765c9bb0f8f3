//! One-writer guard for a run directory.
//!
//! Two orchestrators sharing a manifest would interleave stage writes,
//! so any command that mutates a workdir takes this lock first. The
//! lock is a `create_new` file, removed on drop; a process killed hard
//! leaves it behind, and the error message says what to delete.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::PipelineError;

pub const LOCK_FILE_NAME: &str = ".qspipe.lock";

/// Held for the lifetime of a workdir-mutating command.
#[derive(Debug)]
pub struct WorkdirLock {
    path: PathBuf,
}

impl WorkdirLock {
    pub fn acquire(workdir: &Path) -> Result<Self, PipelineError> {
        std::fs::create_dir_all(workdir).map_err(|e| super::io_error(workdir, e))?;
        let path = workdir.join(LOCK_FILE_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut file) => {
                // Advisory content only; staleness is judged by the
                // operator, not by the pipeline.
                let _ = writeln!(file, "pid {}", std::process::id());
                Ok(WorkdirLock { path })
            }
            Err(error) if error.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(PipelineError::Locked { path: path.display().to_string() })
            }
            Err(error) => Err(super::io_error(&path, error)),
        }
    }
}

impl Drop for WorkdirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
