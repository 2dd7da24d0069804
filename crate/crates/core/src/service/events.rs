//! Append-only JSON-lines event log with a per-session hash chain.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{Aspirations, CareerStage, ComparisonOutcome, Gender, VenueId};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("event log {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("event log line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RespondentMeta {
    pub field: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub career_stage: Option<CareerStage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prestige_decile: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<Gender>,
    /// Venues the respondent has published in; seeds the discovery history pool.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub publications: Vec<VenueId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Discovery,
    Comparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event_type", content = "payload", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    SessionCreated { respondent: RespondentMeta, ordinal: u64, scheduler_seed: u64 },
    AspirationsSet { aspirations: Aspirations },
    DiscoveryAnswer { venue: VenueId, liked: bool },
    DirectAdd { venue: VenueId },
    ComparisonAnswer { first: VenueId, second: VenueId, outcome: ComparisonOutcome },
    Undo {},
    StageCompleted { stage: Stage },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub timestamp: String,
    pub session_id: String,
    pub seq: u64,
    #[serde(flatten)]
    pub kind: EventKind,
    pub prev_hash: String,
    pub hash: String,
}

pub const GENESIS_HASH: &str = "";

impl SessionEvent {
    /// Builds the next event of a session chained onto `prev_hash`.
    pub fn new(session_id: &str, seq: u64, kind: EventKind, prev_hash: &str) -> Self {
        let mut e = SessionEvent {
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            session_id: session_id.to_string(),
            seq,
            kind,
            prev_hash: prev_hash.to_string(),
            hash: String::new(),
        };
        e.hash = e.compute_hash();
        e
    }

    pub fn compute_hash(&self) -> String {
        let body = serde_json::to_string(&self.kind).expect("event kinds serialize");
        let mut h = Sha256::new();
        for part in [self.prev_hash.as_str(), &self.seq.to_string(), &self.session_id, &self.timestamp, &body] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

/// Writer over the log file. Every append is flushed and synced before it returns.
pub struct EventLog {
    path: PathBuf,
    file: File,
    appended: u64,
}

impl EventLog {
    /// Opens (creating if needed) and reads back every complete event. A torn
    /// final line, left by a crash mid-write, is cut off.
    pub fn open(path: &Path) -> Result<(Self, Vec<SessionEvent>), LogError> {
        let io_err = |source| LogError::Io { path: path.to_path_buf(), source };
        let mut file =
            OpenOptions::new().read(true).append(true).create(true).open(path).map_err(io_err)?;
        let (events, good_len) = read_events(&mut file)?;
        let len = file.metadata().map_err(io_err)?.len();
        if good_len < len {
            log::warn!("discarding {} bytes of a torn final event in {}", len - good_len, path.display());
            file.set_len(good_len).map_err(io_err)?;
            file.sync_all().map_err(io_err)?;
        }
        verify_chains(&events)?;
        let appended = events.len() as u64;
        Ok((EventLog { path: path.to_path_buf(), file, appended }, events))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Number of events in the log.
    pub fn len(&self) -> u64 {
        self.appended
    }

    pub fn is_empty(&self) -> bool {
        self.appended == 0
    }

    pub fn append(&mut self, event: &SessionEvent) -> Result<(), LogError> {
        let io_err = |source| LogError::Io { path: self.path.clone(), source };
        let mut line = serde_json::to_vec(event).expect("events serialize");
        line.push(b'\n');
        self.file.write_all(&line).map_err(io_err)?;
        self.file.sync_data().map_err(io_err)?;
        self.appended += 1;
        Ok(())
    }
}

fn read_events(file: &mut File) -> Result<(Vec<SessionEvent>, u64), LogError> {
    file.seek(SeekFrom::Start(0)).map_err(|source| LogError::Io { path: PathBuf::new(), source })?;
    let mut reader = BufReader::new(&mut *file);
    let mut events = Vec::new();
    let mut offset = 0u64;
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(|source| LogError::Io { path: PathBuf::new(), source })?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let complete = buf.ends_with('\n');
        match serde_json::from_str::<SessionEvent>(buf.trim_end()) {
            Ok(e) if complete => {
                events.push(e);
                offset += n as u64;
            }
            // an unterminated last line is a torn write
            _ if !complete => break,
            Ok(_) => unreachable!(),
            Err(err) => return Err(LogError::Corrupt { line: line_no, message: err.to_string() }),
        }
    }
    Ok((events, offset))
}

/// Checks sequence numbers and hash links of every session.
pub fn verify_chains(events: &[SessionEvent]) -> Result<(), LogError> {
    let mut last: HashMap<&str, (u64, &str)> = HashMap::new();
    for (i, e) in events.iter().enumerate() {
        let line = i + 1;
        let corrupt = |message: String| LogError::Corrupt { line, message };
        if e.compute_hash() != e.hash {
            return Err(corrupt(format!("hash mismatch in session {}", e.session_id)));
        }
        match last.get(e.session_id.as_str()) {
            None if e.seq != 0 || e.prev_hash != GENESIS_HASH => {
                return Err(corrupt(format!("session {} does not start at seq 0", e.session_id)))
            }
            Some(&(seq, hash)) if e.seq != seq + 1 || e.prev_hash != hash => {
                return Err(corrupt(format!("broken chain in session {}", e.session_id)))
            }
            _ => {}
        }
        last.insert(&e.session_id, (e.seq, &e.hash));
    }
    Ok(())
}
