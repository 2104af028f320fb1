//! Append-only JSONL log of reviewer verdicts.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    ConfirmedOutlier,
    ValidData,
    Unsure,
}

impl Verdict {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "confirmed-outlier" => Some(Verdict::ConfirmedOutlier),
            "valid-data" => Some(Verdict::ValidData),
            "unsure" => Some(Verdict::Unsure),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub doc_id: String,
    pub verdict: Verdict,
    pub note: String,
    pub timestamp: DateTime<Utc>,
}

/// Exclusive handle on the log file; held for the lifetime of the service.
#[derive(Debug)]
pub struct VerdictLog {
    path: PathBuf,
    file: File,
    last_timestamp: Option<DateTime<Utc>>,
}

impl VerdictLog {
    /// Opens (creating if needed) and locks the log, returning it with the
    /// records already stored.
    pub fn open(path: &Path) -> Result<(Self, Vec<VerdictRecord>), ServiceError> {
        let io = |source| ServiceError::Log {
            path: path.to_path_buf(),
            source,
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .read(true)
            .open(path)
            .map_err(io)?;
        file.try_lock().map_err(|_| ServiceError::LogLocked(path.to_path_buf()))?;
        let records = read_records(path)?;
        let last_timestamp = records.last().map(|r| r.timestamp);
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
                last_timestamp,
            },
            records,
        ))
    }

    /// Appends one record and fsyncs before returning. Timestamps never go
    /// backwards: a clock earlier than the last entry is clamped to it.
    pub fn append(&mut self, doc_id: &str, verdict: Verdict, note: &str) -> Result<VerdictRecord, ServiceError> {
        let now = Utc::now();
        let timestamp = match self.last_timestamp {
            Some(last) if last > now => last,
            _ => now,
        };
        let record = VerdictRecord {
            doc_id: doc_id.to_string(),
            verdict,
            note: note.to_string(),
            timestamp,
        };
        let mut line = serde_json::to_string(&record).expect("record serializes");
        line.push('\n');
        let io = |source| ServiceError::Log {
            path: self.path.clone(),
            source,
        };
        self.file.write_all(line.as_bytes()).map_err(io)?;
        self.file.sync_data().map_err(io)?;
        self.last_timestamp = Some(timestamp);
        Ok(record)
    }
}

pub fn read_records(path: &Path) -> Result<Vec<VerdictRecord>, ServiceError> {
    let file = File::open(path).map_err(|source| ServiceError::Log {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| ServiceError::Log {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: VerdictRecord = serde_json::from_str(&line).map_err(|e| ServiceError::Input(format!(
            "{} line {}: {e}",
            path.display(),
            i + 1
        )))?;
        out.push(rec);
    }
    Ok(out)
}
