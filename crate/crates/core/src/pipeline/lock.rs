use std::fs::{File, OpenOptions, TryLockError};
use std::io::Write;
use std::path::{Path, PathBuf};

use super::PipelineError;

/// Exclusive advisory lock on a file, held until drop. The operating system
/// drops it when the process dies.
#[derive(Debug)]
pub struct FileLock {
    file: File,
    path: PathBuf,
}

impl FileLock {
    fn open(path: &Path) -> Result<File, PipelineError> {
        OpenOptions::new()
            .create(true)
            .truncate(false)
            .read(true)
            .write(true)
            .open(path)
            .map_err(|e| PipelineError::io(path, e))
    }

    /// `None` when another holder has it.
    pub fn try_acquire(path: &Path) -> Result<Option<Self>, PipelineError> {
        let mut file = Self::open(path)?;
        match file.try_lock() {
            Ok(()) => {}
            Err(TryLockError::WouldBlock) => return Ok(None),
            Err(TryLockError::Error(e)) => return Err(PipelineError::io(path, e)),
        }
        file.set_len(0).map_err(|e| PipelineError::io(path, e))?;
        writeln!(file, "{}", std::process::id()).map_err(|e| PipelineError::io(path, e))?;
        Ok(Some(FileLock {
            file,
            path: path.to_path_buf(),
        }))
    }

    /// Waits for the lock.
    pub fn acquire(path: &Path) -> Result<Self, PipelineError> {
        let file = Self::open(path)?;
        file.lock().map_err(|e| PipelineError::io(path, e))?;
        Ok(FileLock {
            file,
            path: path.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Drop for FileLock {
    fn drop(&mut self) {
        let _ = self.file.unlock();
    }
}
