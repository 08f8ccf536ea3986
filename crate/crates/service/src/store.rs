//! Append-only event log plus periodic snapshots, as plain files in one
//! directory. The log is never rewritten; a snapshot only saves replay time.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use mpi_core::matching::LinkageConfig;
use mpi_core::registry::{Command, Outcome, Registry, RegistryError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EVENT_LOG_FILE: &str = "events.log";
pub const RECEIPTS_FILE: &str = "receipts.log";
const SNAPSHOT_PREFIX: &str = "snapshot-";
const SNAPSHOT_SUFFIX: &str = ".mpi";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt {file} line {line}: {reason}")]
    Corrupt { file: String, line: usize, reason: String },
    #[error("replay of event {seq} failed: {reason}")]
    Replay { seq: u64, reason: String },
}

#[derive(Debug, Error)]
pub enum CommitError {
    #[error(transparent)]
    Rejected(#[from] RegistryError),
    #[error("storage failure, state reloaded from disk: {0}")]
    Storage(#[from] StoreError),
}

/// A stored HL7 acknowledgement, replayed for a repeated control id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub key: String,
    /// The response in ER7, re-encoded on the way out when XML was asked for.
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPayload {
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intake: Option<Receipt>,
}

/// `seq<TAB>timestamp<TAB>actor<TAB>event-type<TAB>payload`
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub seq: u64,
    pub at: DateTime<Utc>,
    pub actor: String,
    pub payload: EventPayload,
}

impl EventRecord {
    pub fn event_type(&self) -> &'static str {
        self.payload.command.event_type()
    }

    pub fn to_line(&self) -> String {
        let payload = serde_json::to_string(&self.payload).expect("payload serializes");
        format!(
            "{}\t{}\t{}\t{}\t{}\n",
            self.seq,
            self.at.to_rfc3339_opts(SecondsFormat::AutoSi, true),
            self.actor,
            self.event_type(),
            payload
        )
    }

    pub fn parse_line(line: &str) -> Result<EventRecord, String> {
        let cols: Vec<&str> = line.splitn(5, '\t').collect();
        if cols.len() != 5 {
            return Err("expected 5 tab-separated columns".into());
        }
        let seq = cols[0].parse().map_err(|_| format!("bad seq {:?}", cols[0]))?;
        let at = DateTime::parse_from_rfc3339(cols[1])
            .map_err(|e| format!("bad timestamp: {e}"))?
            .with_timezone(&Utc);
        let payload: EventPayload = serde_json::from_str(cols[4]).map_err(|e| format!("bad payload: {e}"))?;
        if payload.command.event_type() != cols[3] {
            return Err(format!("event type {:?} does not match payload", cols[3]));
        }
        Ok(EventRecord {
            seq,
            at,
            actor: cols[2].to_string(),
            payload,
        })
    }
}

/// Reads a line-oriented file, truncating a torn final line (one without
/// its newline), and returns the complete lines plus an append handle.
pub(crate) fn open_lines(path: &Path) -> io::Result<(File, Vec<String>)> {
    let mut text = match fs::read(path) {
        Ok(bytes) => bytes,
        Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e),
    };
    let keep = text.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let torn = keep < text.len();
    text.truncate(keep);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    if torn {
        file.set_len(keep as u64)?;
        file.sync_all()?;
    }
    let text = String::from_utf8(text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    Ok((file, text.lines().map(str::to_string).collect()))
}

pub(crate) fn append_line(file: &mut File, line: &str) -> io::Result<()> {
    file.write_all(line.as_bytes())?;
    file.flush()?;
    file.sync_data()
}

fn snapshot_name(seq: u64) -> String {
    format!("{SNAPSHOT_PREFIX}{seq:012}{SNAPSHOT_SUFFIX}")
}

fn snapshots(dir: &Path) -> io::Result<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(seq) = name
            .strip_prefix(SNAPSHOT_PREFIX)
            .and_then(|r| r.strip_suffix(SNAPSHOT_SUFFIX))
            .and_then(|s| s.parse::<u64>().ok())
        {
            out.push((seq, entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

/// What reopening found: events replayed on top of the snapshot, with the
/// outcome each produced.
#[derive(Debug, Default)]
pub struct Recovery {
    pub snapshot_seq: u64,
    pub tail: Vec<(EventRecord, Outcome)>,
}

pub struct Store {
    dir: PathBuf,
    config: LinkageConfig,
    registry: Registry,
    events: File,
    last_seq: u64,
    snapshot_every: u64,
    last_snapshot: u64,
    receipts_file: File,
    receipts: HashMap<String, String>,
}

impl Store {
    /// Opens (or creates) the store in `dir`, replaying the latest snapshot
    /// and the log tail after it. `snapshot_every` of 0 disables snapshots.
    pub fn open(dir: &Path, config: LinkageConfig, snapshot_every: u64) -> Result<(Store, Recovery), StoreError> {
        fs::create_dir_all(dir)?;
        let (events, lines) = open_lines(&dir.join(EVENT_LOG_FILE))?;
        let mut records = Vec::with_capacity(lines.len());
        let mut receipts = HashMap::new();
        for (i, line) in lines.iter().enumerate() {
            let corrupt = |reason: String| StoreError::Corrupt {
                file: EVENT_LOG_FILE.into(),
                line: i + 1,
                reason,
            };
            let record = EventRecord::parse_line(line).map_err(corrupt)?;
            if record.seq != i as u64 + 1 {
                return Err(corrupt(format!("seq {} out of order", record.seq)));
            }
            if let Some(r) = &record.payload.intake {
                receipts.insert(r.key.clone(), r.response.clone());
            }
            records.push(record);
        }
        let last_seq = records.len() as u64;

        let (receipts_file, receipt_lines) = open_lines(&dir.join(RECEIPTS_FILE))?;
        for (i, line) in receipt_lines.iter().enumerate() {
            let r: Receipt = serde_json::from_str(line).map_err(|e| StoreError::Corrupt {
                file: RECEIPTS_FILE.into(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            receipts.insert(r.key, r.response);
        }

        let mut registry = Registry::new(config.clone());
        let mut snapshot_seq = 0;
        if let Some((seq, path)) = snapshots(dir)?.into_iter().rev().find(|(seq, _)| *seq <= last_seq) {
            let text = fs::read_to_string(&path)?;
            registry = Registry::from_snapshot(&text, config.clone()).map_err(|reason| StoreError::Corrupt {
                file: path.display().to_string(),
                line: 1,
                reason,
            })?;
            snapshot_seq = seq;
        }
        let mut recovery = Recovery {
            snapshot_seq,
            tail: Vec::new(),
        };
        for record in records.into_iter().skip(snapshot_seq as usize) {
            let outcome = registry
                .apply(&record.actor, record.at, record.payload.command.clone())
                .map_err(|e| StoreError::Replay {
                    seq: record.seq,
                    reason: e.to_string(),
                })?;
            recovery.tail.push((record, outcome));
        }
        let store = Store {
            dir: dir.to_path_buf(),
            config,
            registry,
            events,
            last_seq,
            snapshot_every,
            last_snapshot: snapshot_seq,
            receipts_file,
            receipts,
        };
        Ok((store, recovery))
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn receipt(&self, key: &str) -> Option<&str> {
        self.receipts.get(key).map(String::as_str)
    }

    /// Applies `command`; on success appends it to the log (flushed to disk
    /// before returning) and returns its outcome and sequence number.
    pub fn commit(
        &mut self,
        actor: &str,
        at: DateTime<Utc>,
        command: Command,
        intake: Option<Receipt>,
    ) -> Result<(Outcome, u64), CommitError> {
        self.commit_with(actor, at, command, |_| intake)
    }

    /// As [`Store::commit`], with the intake receipt built from the outcome
    /// so that it is written in the same log line as the mutation.
    pub fn commit_with(
        &mut self,
        actor: &str,
        at: DateTime<Utc>,
        command: Command,
        receipt: impl FnOnce(&Outcome) -> Option<Receipt>,
    ) -> Result<(Outcome, u64), CommitError> {
        let outcome = self.registry.apply(actor, at, command.clone())?;
        let intake = receipt(&outcome);
        let record = EventRecord {
            seq: self.last_seq + 1,
            at,
            actor: actor.to_string(),
            payload: EventPayload { command, intake },
        };
        if let Err(e) = append_line(&mut self.events, &record.to_line()) {
            // The in-memory registry is ahead of the disk; rebuild it.
            self.reload()?;
            return Err(CommitError::Storage(e.into()));
        }
        self.last_seq = record.seq;
        if let Some(r) = record.payload.intake {
            self.receipts.insert(r.key, r.response);
        }
        Ok((outcome, record.seq))
    }

    /// Keeps the response to an intake that changed nothing.
    pub fn record_receipt(&mut self, receipt: Receipt) -> Result<(), StoreError> {
        let line = serde_json::to_string(&receipt).expect("receipt serializes") + "\n";
        append_line(&mut self.receipts_file, &line)?;
        self.receipts.insert(receipt.key, receipt.response);
        Ok(())
    }

    /// Writes a snapshot when `snapshot_every` events have passed since the last.
    pub fn maybe_snapshot(&mut self) -> Result<bool, StoreError> {
        if self.snapshot_every == 0 || self.last_seq < self.last_snapshot + self.snapshot_every {
            return Ok(false);
        }
        self.write_snapshot()?;
        Ok(true)
    }

    /// Atomically writes the snapshot for the current sequence number and
    /// removes older ones.
    pub fn write_snapshot(&mut self) -> Result<(), StoreError> {
        let final_path = self.dir.join(snapshot_name(self.last_seq));
        let tmp = self.dir.join(format!("{}.tmp", snapshot_name(self.last_seq)));
        {
            let mut f = File::create(&tmp)?;
            f.write_all(self.registry.snapshot().as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &final_path)?;
        if let Ok(d) = File::open(&self.dir) {
            let _ = d.sync_all();
        }
        for (seq, path) in snapshots(&self.dir)? {
            if seq < self.last_seq {
                let _ = fs::remove_file(path);
            }
        }
        self.last_snapshot = self.last_seq;
        Ok(())
    }

    fn reload(&mut self) -> Result<(), StoreError> {
        let (fresh, _) = Store::open(&self.dir, self.config.clone(), self.snapshot_every)?;
        *self = fresh;
        Ok(())
    }

    /// Replays the whole log from empty, ignoring snapshots.
    pub fn replay_from_scratch(dir: &Path, config: LinkageConfig) -> Result<Registry, StoreError> {
        let (_, lines) = open_lines(&dir.join(EVENT_LOG_FILE))?;
        let mut registry = Registry::new(config);
        for (i, line) in lines.iter().enumerate() {
            let record = EventRecord::parse_line(line).map_err(|reason| StoreError::Corrupt {
                file: EVENT_LOG_FILE.into(),
                line: i + 1,
                reason,
            })?;
            registry
                .apply(&record.actor, record.at, record.payload.command)
                .map_err(|e| StoreError::Replay {
                    seq: record.seq,
                    reason: e.to_string(),
                })?;
        }
        Ok(registry)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{NaiveDate, TimeZone};
    use mpi_core::identity::{DemographicProfile, Sex};

    fn register(family: &str) -> Command {
        Command::Register {
            profile: DemographicProfile {
                family_name: family.into(),
                given_names: vec!["Nimal".into()],
                date_of_birth: NaiveDate::from_ymd_opt(1970, 1, 2).unwrap(),
                sex: Sex::M,
                address_lines: vec![],
                contact_number: None,
                anonymity_requested: false,
            },
            identifiers: vec![],
            guardian_reason: None,
        }
    }

    fn at(min: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 1, 1, 0, min, 0).unwrap()
    }

    #[test]
    fn event_line_round_trips() {
        let r = EventRecord {
            seq: 7,
            at: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap() + chrono::Duration::nanoseconds(1234),
            actor: "hims".into(),
            payload: EventPayload {
                command: register("Silva"),
                intake: None,
            },
        };
        let line = r.to_line();
        assert!(line.starts_with("7\t2024-01-01T00:00:00.000001234Z\thims\tREGISTER\t{"));
        assert_eq!(EventRecord::parse_line(line.trim_end()).unwrap(), r);
    }

    #[test]
    fn reopen_replays_snapshot_and_tail() {
        let dir = tempfile::tempdir().unwrap();
        let (mut store, _) = Store::open(dir.path(), LinkageConfig::default(), 3).unwrap();
        for i in 0..7 {
            store.commit("hims", at(i), register(&format!("Fam{i}")), None).unwrap();
            store.maybe_snapshot().unwrap();
        }
        let expected = store.registry().snapshot();
        drop(store);
        let (store, recovery) = Store::open(dir.path(), LinkageConfig::default(), 3).unwrap();
        assert_eq!(recovery.snapshot_seq, 6);
        assert_eq!(recovery.tail.len(), 1);
        assert_eq!(store.registry().snapshot(), expected);
        let scratch = Store::replay_from_scratch(dir.path(), LinkageConfig::default()).unwrap();
        assert_eq!(scratch.snapshot(), expected);
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let (mut store, _) = Store::open(dir.path(), LinkageConfig::default(), 0).unwrap();
        store.commit("hims", at(0), register("Dias"), None).unwrap();
        drop(store);
        let path = dir.path().join(EVENT_LOG_FILE);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"2\t2024-01-01T00:01:00Z\thims\tREGISTER\t{\"comm").unwrap();
        drop(f);
        let (mut store, _) = Store::open(dir.path(), LinkageConfig::default(), 0).unwrap();
        assert_eq!(store.last_seq(), 1);
        assert_eq!(store.commit("hims", at(2), register("Ali"), None).unwrap().1, 2);
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 2);
    }

    #[test]
    fn rejected_commands_are_not_logged() {
        let dir = tempfile::tempdir().unwrap();
        let (mut store, _) = Store::open(dir.path(), LinkageConfig::default(), 0).unwrap();
        let err = store.commit("hims", at(0), Command::Unmerge { merge_id: "MG00000009".into() }, None);
        assert!(matches!(err, Err(CommitError::Rejected(_))));
        assert_eq!(store.last_seq(), 0);
        assert_eq!(fs::read_to_string(dir.path().join(EVENT_LOG_FILE)).unwrap(), "");
    }

    #[test]
    fn receipts_survive_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let (mut store, _) = Store::open(dir.path(), LinkageConfig::default(), 0).unwrap();
        store
            .record_receipt(Receipt {
                key: "A|B|1".into(),
                response: "MSH|x".into(),
            })
            .unwrap();
        store
            .commit(
                "hims",
                at(0),
                register("Dias"),
                Some(Receipt {
                    key: "A|B|2".into(),
                    response: "MSH|y".into(),
                }),
            )
            .unwrap();
        drop(store);
        let (store, _) = Store::open(dir.path(), LinkageConfig::default(), 0).unwrap();
        assert_eq!(store.receipt("A|B|1"), Some("MSH|x"));
        assert_eq!(store.receipt("A|B|2"), Some("MSH|y"));
    }
}
