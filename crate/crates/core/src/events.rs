//! In-process status bus.
//!
//! Events are appended to a log with a global sequence number and a
//! per-subject sequence number. Consumers poll with `since(seq)` or block in
//! [`EventBus::wait_since`] (long polling). An optional JSON-lines file
//! mirrors the log for replay.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::clock::{Clock, Millis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    #[serde(rename = "claim.submitted")]
    ClaimSubmitted,
    #[serde(rename = "claim.fulfilled")]
    ClaimFulfilled,
    #[serde(rename = "claim.aborted")]
    ClaimAborted,
    #[serde(rename = "unit.reconciled")]
    UnitReconciled,
    #[serde(rename = "unit.dismissed")]
    UnitDismissed,
    #[serde(rename = "unit.cleaned")]
    UnitCleaned,
    #[serde(rename = "unit.error")]
    UnitError,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::ClaimSubmitted => "claim.submitted",
            EventKind::ClaimFulfilled => "claim.fulfilled",
            EventKind::ClaimAborted => "claim.aborted",
            EventKind::UnitReconciled => "unit.reconciled",
            EventKind::UnitDismissed => "unit.dismissed",
            EventKind::UnitCleaned => "unit.cleaned",
            EventKind::UnitError => "unit.error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusEvent {
    /// Global position in the log, starting at 1.
    pub seq: u64,
    pub kind: EventKind,
    pub subject: String,
    /// Position among the events of the same subject, starting at 1.
    #[serde(rename = "subjectSeq")]
    pub subject_seq: u64,
    pub timestamp: Millis,
    #[serde(default)]
    pub payload: Value,
}

#[derive(Debug, Default)]
struct Log {
    events: Vec<StatusEvent>,
    subject_seq: std::collections::HashMap<String, u64>,
    file: Option<File>,
}

#[derive(Debug)]
pub struct EventBus {
    log: Mutex<Log>,
    appended: Condvar,
    clock: Arc<dyn Clock>,
}

impl EventBus {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self {
            log: Mutex::new(Log::default()),
            appended: Condvar::new(),
            clock,
        }
    }

    /// Opens a bus mirrored to an append-only JSON-lines file, replaying any
    /// events already in it.
    pub fn with_log_file(clock: Arc<dyn Clock>, path: &Path) -> std::io::Result<Self> {
        let bus = Self::new(clock);
        {
            let mut log = bus.log.lock();
            if path.exists() {
                for line in BufReader::new(File::open(path)?).lines() {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let ev: StatusEvent = serde_json::from_str(&line)
                        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
                    log.subject_seq.insert(ev.subject.clone(), ev.subject_seq);
                    log.events.push(ev);
                }
            }
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            log.file = Some(OpenOptions::new().create(true).append(true).open(path)?);
        }
        Ok(bus)
    }

    pub fn publish(&self, kind: EventKind, subject: &str, payload: Value) -> u64 {
        let mut log = self.log.lock();
        let seq = log.events.len() as u64 + 1;
        let subject_seq = {
            let n = log.subject_seq.entry(subject.to_owned()).or_insert(0);
            *n += 1;
            *n
        };
        let event = StatusEvent {
            seq,
            kind,
            subject: subject.to_owned(),
            subject_seq,
            timestamp: self.clock.now_ms(),
            payload,
        };
        if let Some(f) = log.file.as_mut() {
            let line = serde_json::to_string(&event).expect("event serializes");
            if let Err(e) = writeln!(f, "{line}") {
                tracing::warn!("event log write failed: {e}");
            }
        }
        tracing::debug!(seq, kind = kind.as_str(), subject, "event");
        log.events.push(event);
        drop(log);
        self.appended.notify_all();
        seq
    }

    /// Events with `seq > since`.
    pub fn since(&self, since: u64) -> Vec<StatusEvent> {
        let log = self.log.lock();
        log.events.iter().skip(since as usize).cloned().collect()
    }

    /// Like [`since`](Self::since) but blocks up to `timeout` for at least
    /// one new event.
    pub fn wait_since(&self, since: u64, timeout: Duration) -> Vec<StatusEvent> {
        let deadline = Instant::now() + timeout;
        let mut log = self.log.lock();
        while log.events.len() as u64 <= since {
            if self.appended.wait_until(&mut log, deadline).timed_out() {
                break;
            }
        }
        log.events.iter().skip(since as usize).cloned().collect()
    }

    pub fn last_seq(&self) -> u64 {
        self.log.lock().events.len() as u64
    }
}
