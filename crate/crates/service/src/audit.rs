//! Audit trail: one JSON object per line, gap-free sequence numbers.
//! Entries name the client, never its token.

use std::fs::File;
use std::io;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::store::{append_line, open_lines, StoreError};

pub const AUDIT_FILE: &str = "audit.log";
pub const OUTCOME_OK: &str = "OK";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub at: DateTime<Utc>,
    pub client_id: String,
    pub action: String,
    pub subject: String,
    /// `OK` or the error code the request was refused with.
    pub outcome: String,
    /// Event-log sequence number of an accepted mutation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_seq: Option<u64>,
}

pub struct AuditLog {
    file: File,
    entries: Vec<AuditEntry>,
}

impl AuditLog {
    pub fn open(dir: &Path) -> Result<AuditLog, StoreError> {
        let (file, lines) = open_lines(&dir.join(AUDIT_FILE))?;
        let mut entries = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            let corrupt = |reason: String| StoreError::Corrupt {
                file: AUDIT_FILE.into(),
                line: i + 1,
                reason,
            };
            let entry: AuditEntry = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
            if entry.seq != i as u64 + 1 {
                return Err(corrupt(format!("seq {} breaks the sequence", entry.seq)));
            }
            entries.push(entry);
        }
        Ok(AuditLog { file, entries })
    }

    pub fn append(
        &mut self,
        at: DateTime<Utc>,
        client_id: &str,
        action: &str,
        subject: &str,
        outcome: &str,
        event_seq: Option<u64>,
    ) -> io::Result<AuditEntry> {
        let entry = AuditEntry {
            seq: self.entries.len() as u64 + 1,
            at,
            client_id: client_id.to_string(),
            action: action.to_string(),
            subject: subject.to_string(),
            outcome: outcome.to_string(),
            event_seq,
        };
        let line = serde_json::to_string(&entry).expect("audit entry serializes") + "\n";
        append_line(&mut self.file, &line)?;
        self.entries.push(entry.clone());
        Ok(entry)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[AuditEntry] {
        &self.entries
    }

    /// Entries with `seq >= from_seq`.
    pub fn from_seq(&self, from_seq: u64) -> &[AuditEntry] {
        let start = (from_seq.max(1) - 1).min(self.entries.len() as u64) as usize;
        &self.entries[start..]
    }

    /// Highest event-log sequence number any entry refers to.
    pub fn last_event_seq(&self) -> u64 {
        self.entries.iter().filter_map(|e| e.event_seq).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn sequence_continues_after_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let at = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        let mut log = AuditLog::open(dir.path()).unwrap();
        log.append(at, "hims", "REGISTER", "00000000018", OUTCOME_OK, Some(1)).unwrap();
        log.append(at, "hims", "UPDATE", "00000000018", "VERSION_CONFLICT", None).unwrap();
        drop(log);
        let mut log = AuditLog::open(dir.path()).unwrap();
        let e = log.append(at, "admin", "PURGE", "", OUTCOME_OK, Some(2)).unwrap();
        assert_eq!(e.seq, 3);
        assert_eq!(log.from_seq(2).len(), 2);
        assert_eq!(log.from_seq(0).len(), 3);
        assert_eq!(log.from_seq(9).len(), 0);
        assert_eq!(log.last_event_seq(), 2);
    }

    #[test]
    fn gap_is_corruption() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join(AUDIT_FILE),
            "{\"seq\":2,\"at\":\"2024-01-01T00:00:00Z\",\"client_id\":\"a\",\"action\":\"X\",\"subject\":\"\",\"outcome\":\"OK\"}\n",
        )
        .unwrap();
        assert!(matches!(AuditLog::open(dir.path()), Err(StoreError::Corrupt { .. })));
    }
}
