//! Append-only JSON Lines results log.
//!
//! Each line is one [`ExperimentLogEntry`]. A line is written with a single
//! `write_all` on an append-mode file, then flushed and synced before the
//! caller acknowledges the result. Readers ignore a trailing line that has no
//! newline yet, so a crash mid-write never surfaces a partial entry.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use pqn_core::chsh::{ChshResult, ChshSettings};
use pqn_core::counting::CountRecord;
use serde::{Deserialize, Serialize};

use crate::error::{NetError, NetResult};

pub const SOFTWARE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentLogEntry {
    pub timestamp: DateTime<Utc>,
    pub session_id: u64,
    pub settings: ChshSettings,
    /// The 16 records in measurement order; empty for fallback results.
    pub records: Vec<CountRecord>,
    pub result: ChshResult,
    pub live: bool,
    pub software_version: String,
}

impl ExperimentLogEntry {
    pub fn new(session_id: u64, records: Vec<CountRecord>, result: ChshResult) -> Self {
        ExperimentLogEntry {
            timestamp: Utc::now(),
            session_id,
            settings: result.settings,
            records,
            live: result.live,
            result,
            software_version: SOFTWARE_VERSION.to_owned(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LogFilter {
    pub live: Option<bool>,
    pub session_id: Option<u64>,
}

impl LogFilter {
    pub fn matches(&self, e: &ExperimentLogEntry) -> bool {
        self.live.is_none_or(|l| e.live == l) && self.session_id.is_none_or(|s| e.session_id == s)
    }
}

#[derive(Debug)]
pub struct ResultsLog {
    path: PathBuf,
    file: File,
}

impl ResultsLog {
    /// Opens (creating if needed) for appending. Fails if the path is not
    /// writable.
    pub fn open(path: &Path) -> NetResult<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| NetError::Log(format!("{}: {e}", path.display())))?;
        Ok(ResultsLog { path: path.to_owned(), file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, entry: &ExperimentLogEntry) -> NetResult<()> {
        let mut line = serde_json::to_vec(entry).map_err(|e| NetError::Log(e.to_string()))?;
        line.push(b'\n');
        let io = |e: std::io::Error| NetError::Log(format!("{}: {e}", self.path.display()));
        self.file.write_all(&line).map_err(io)?;
        self.file.flush().map_err(io)?;
        self.file.sync_data().map_err(io)
    }
}

/// Entries matching `filter`, in file order. A missing file reads as empty.
pub fn read_log(path: &Path, filter: &LogFilter) -> NetResult<Vec<ExperimentLogEntry>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(NetError::Log(format!("{}: {e}", path.display()))),
    };
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut line = Vec::new();
    let mut number = 0;
    loop {
        line.clear();
        let n = reader.read_until(b'\n', &mut line).map_err(|e| NetError::Log(e.to_string()))?;
        if n == 0 || line.last() != Some(&b'\n') {
            break;
        }
        number += 1;
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let entry: ExperimentLogEntry =
            serde_json::from_slice(&line).map_err(|e| NetError::Log(format!("line {number}: {e}")))?;
        if filter.matches(&entry) {
            out.push(entry);
        }
    }
    Ok(out)
}
