use std::fs::{File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::api::{DiagnoseRequest, WireEntry};
use crate::config::FsyncPolicy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisLogEntry {
    /// UTC, RFC 3339.
    pub timestamp: String,
    pub request: DiagnoseRequest,
    pub entries: Vec<WireEntry>,
    pub fingerprint: String,
}

/// Append-only JSON-lines log with a single serialized writer.
#[derive(Debug)]
pub struct DiagnosisLog {
    path: PathBuf,
    file: Mutex<File>,
    fsync: FsyncPolicy,
}

impl DiagnosisLog {
    pub fn open(path: &Path, fsync: FsyncPolicy) -> std::io::Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(DiagnosisLog { path: path.to_path_buf(), file: Mutex::new(file), fsync })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one line and returns the byte offset it starts at.
    pub fn append(&self, entry: &DiagnosisLogEntry) -> std::io::Result<u64> {
        let mut line = serde_json::to_vec(entry).map_err(std::io::Error::other)?;
        line.push(b'\n');
        let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
        let offset = f.seek(SeekFrom::End(0))?;
        f.write_all(&line)?;
        if self.fsync == FsyncPolicy::Always {
            f.sync_data()?;
        }
        Ok(offset)
    }
}

pub fn read_log(path: &Path) -> std::io::Result<Vec<DiagnosisLogEntry>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
        .collect()
}
