//! Artifact writing: atomic per-file writes (temp + rename) grouped into a
//! run-level set, so a failed run leaves no partial outputs behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use liouville_dmd::{Error, Result};

/// Writes `bytes` to `path` atomically via a sibling temp file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let io_err = |source: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

/// A group of output files committed one by one; on failure the caller
/// discards everything written so far.
pub struct ArtifactSet {
    written: Vec<PathBuf>,
}

impl ArtifactSet {
    pub fn new() -> Self {
        Self {
            written: Vec::new(),
        }
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)?;
        self.written.push(path.to_path_buf());
        Ok(())
    }

    /// Removes every artifact this set has written.
    pub fn discard(&self) {
        for path in &self.written {
            let _ = fs::remove_file(path);
        }
    }
}

/// 17 significant digits: round-trips every f64 exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// log10 with the magnitude floored at 1e-12.
pub fn log_magnitude(mag: f64) -> f64 {
    mag.max(1e-12).log10()
}
