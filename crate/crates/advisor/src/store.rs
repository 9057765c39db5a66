//! Append-only JSON-lines event store.
//!
//! Every line is one [`Record`]. Appends are a single `write` of a complete line
//! followed by `fsync`, so a crash can at worst leave a torn final line, which
//! [`EventStore::open`] discards.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::patient::Profile;
use titration_core::Minutes;

pub const STORE_FILE: &str = "events.jsonl";

#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    PatientCreated { profile: Profile },
    FbgLogged { time: Minutes, fbg: f64 },
    DoseLogged { time: Minutes, units: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub seq: u64,
    pub patient: String,
    pub event: Event,
}

struct Inner {
    file: File,
    next_seq: u64,
}

pub struct EventStore {
    path: PathBuf,
    inner: Mutex<Inner>,
}

impl EventStore {
    /// Open (creating if needed) the store in `dir` and return its records.
    pub fn open(dir: &Path) -> Result<(Self, Vec<Record>)> {
        let store_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ServiceError::Store { path, source }
        };
        std::fs::create_dir_all(dir).map_err(store_err(dir))?;
        let path = dir.join(STORE_FILE);
        let records = if path.exists() { read_records(&path)? } else { Vec::new() };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(store_err(&path))?;
        let next_seq = records.last().map_or(1, |r| r.seq + 1);
        Ok((
            Self {
                path,
                inner: Mutex::new(Inner { file, next_seq }),
            },
            records,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn peek_seq(&self) -> u64 {
        self.inner.lock().next_seq
    }

    /// Durably append one event and return its record.
    pub fn append(&self, patient: &str, event: Event) -> Result<Record> {
        let mut inner = self.inner.lock();
        let record = Record {
            seq: inner.next_seq,
            patient: patient.to_string(),
            event,
        };
        let mut line = serde_json::to_string(&record).map_err(|e| ServiceError::Invalid(e.to_string()))?;
        line.push('\n');
        let io = |source| ServiceError::Store {
            path: self.path.clone(),
            source,
        };
        inner.file.write_all(line.as_bytes()).map_err(io)?;
        inner.file.sync_data().map_err(io)?;
        inner.next_seq += 1;
        Ok(record)
    }
}

fn read_records(path: &Path) -> Result<Vec<Record>> {
    let file = File::open(path).map_err(|source| ServiceError::Store {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = BufReader::new(file);
    let mut records: Vec<Record> = Vec::new();
    let mut line = String::new();
    let mut lineno = 0;
    let mut valid_len = 0u64;
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|source| ServiceError::Store {
            path: path.to_path_buf(),
            source,
        })?;
        if n == 0 {
            break;
        }
        lineno += 1;
        if !line.ends_with('\n') {
            tracing::warn!(path = %path.display(), line = lineno, "discarding torn final record");
            break;
        }
        let corrupt = |reason: String| ServiceError::Corrupt {
            path: path.to_path_buf(),
            line: lineno,
            reason,
        };
        let record: Record = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
        if records.last().is_some_and(|last| record.seq <= last.seq) {
            return Err(corrupt(format!("sequence number {} out of order", record.seq)));
        }
        records.push(record);
        valid_len += n as u64;
    }
    let len = std::fs::metadata(path).map(|m| m.len()).unwrap_or(valid_len);
    if len > valid_len {
        let file = OpenOptions::new().write(true).open(path).map_err(|source| ServiceError::Store {
            path: path.to_path_buf(),
            source,
        })?;
        file.set_len(valid_len).map_err(|source| ServiceError::Store {
            path: path.to_path_buf(),
            source,
        })?;
    }
    Ok(records)
}
