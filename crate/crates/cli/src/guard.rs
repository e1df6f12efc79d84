//! Cleanup of partial outputs: a failed command must not leave artifacts.

use std::path::{Path, PathBuf};

/// Tracks the artifact paths a command creates; unless `commit` is called,
/// dropping the guard removes them (files and directories alike).
pub struct OutputGuard {
    paths: Vec<PathBuf>,
    committed: bool,
}

impl OutputGuard {
    pub fn new() -> Self {
        Self {
            paths: Vec::new(),
            committed: false,
        }
    }

    /// Registers a path for removal on failure. Register before creating, so
    /// an error mid-write still cleans up.
    pub fn track(&mut self, path: impl Into<PathBuf>) {
        self.paths.push(path.into());
    }

    /// Keeps all tracked artifacts.
    pub fn commit(mut self) {
        self.committed = true;
    }

    /// Ensures `dir` exists; tracks it only when this call created it, so a
    /// pre-existing directory is never deleted on failure.
    pub fn ensure_dir(&mut self, dir: &Path) -> nvf_core::Result<()> {
        if dir.exists() {
            if !dir.is_dir() {
                return Err(nvf_core::Error::Config(format!(
                    "output path {} exists and is not a directory",
                    dir.display()
                )));
            }
            return Ok(());
        }
        self.track(dir);
        std::fs::create_dir_all(dir)?;
        Ok(())
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        // Deepest-first so files go before their directories; removal is
        // best-effort (the original error matters more).
        for path in self.paths.iter().rev() {
            if path.is_dir() {
                let _ = std::fs::remove_dir_all(path);
            } else {
                let _ = std::fs::remove_file(path);
            }
        }
    }
}
