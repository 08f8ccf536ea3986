//! The registry state machine. Every mutation is a [`Command`] applied by a
//! single writer; replaying the same commands from empty yields the same
//! snapshot text.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::{
    DemographicProfile, GuardianLink, GuardianReason, Identifier, IdentifierKind, PatientRecord, Phn, PhnError,
    PhnIssuer, ProfileField, RecordStatus, Sex, ADULT_AGE_YEARS,
};
use crate::matching::{dedup_scan, score_views, Decision, LinkageConfig, LinkageView, MatchResult, RegistryView};
use crate::merge::{
    apply_merge, resolve, unmerge, FieldSource, Lineage, LineageEntry, MergeError, MergeEvent, MergeRequest,
    MergeSource, ReviewItem, ReviewQueue, ReviewState,
};

/// First line of every snapshot file.
pub const SNAPSHOT_HEADER: &str = "MPIv1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("DUPLICATE_IDENTIFIER: {kind} {value} already belongs to {existing}")]
    DuplicateIdentifier {
        kind: IdentifierKind,
        value: String,
        existing: Phn,
    },
    #[error("VALIDATION_FAILED: {0}")]
    ValidationFailed(String),
    #[error("FORMAT_INVALID: {0}")]
    FormatInvalid(String),
    #[error("VERSION_CONFLICT: expected {expected}, current {current}")]
    VersionConflict { expected: u64, current: u64 },
    #[error("RECORD_NOT_ACTIVE: {0}")]
    RecordNotActive(Phn),
    #[error("ALREADY_DECEASED: {0}")]
    AlreadyDeceased(Phn),
    #[error("GUARDIAN_ALREADY_LINKED: {ward} already has a {reason} guardian")]
    GuardianAlreadyLinked { ward: Phn, reason: GuardianReason },
    #[error("NO_CRITERIA")]
    NoCriteria,
    #[error("SEQUENCE_EXHAUSTED")]
    SequenceExhausted,
    #[error(transparent)]
    Merge(#[from] MergeError),
}

impl RegistryError {
    pub fn code(&self) -> &'static str {
        match self {
            RegistryError::DuplicateIdentifier { .. } => "DUPLICATE_IDENTIFIER",
            RegistryError::ValidationFailed(_) => "VALIDATION_FAILED",
            RegistryError::FormatInvalid(_) => "FORMAT_INVALID",
            RegistryError::VersionConflict { .. } => "VERSION_CONFLICT",
            RegistryError::RecordNotActive(_) => "RECORD_NOT_ACTIVE",
            RegistryError::AlreadyDeceased(_) => "ALREADY_DECEASED",
            RegistryError::GuardianAlreadyLinked { .. } => "GUARDIAN_ALREADY_LINKED",
            RegistryError::NoCriteria => "NO_CRITERIA",
            RegistryError::SequenceExhausted => "SEQUENCE_EXHAUSTED",
            RegistryError::Merge(e) => e.code(),
        }
    }
}

/// Partial update of a record. `identifiers`, when present, replaces every
/// non-PHN identifier. An empty `contact_number` clears it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientChanges {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub given_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date_of_birth: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sex: Option<Sex>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub address_lines: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contact_number: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anonymity_requested: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identifiers: Option<Vec<Identifier>>,
}

impl PatientChanges {
    /// Replaces the whole profile and identifier set, as an ADT^A08 does.
    pub fn full(profile: DemographicProfile, identifiers: impl IntoIterator<Item = Identifier>) -> Self {
        PatientChanges {
            family_name: Some(profile.family_name),
            given_names: Some(profile.given_names),
            date_of_birth: Some(profile.date_of_birth),
            sex: Some(profile.sex),
            address_lines: Some(profile.address_lines),
            contact_number: Some(profile.contact_number.unwrap_or_default()),
            anonymity_requested: Some(profile.anonymity_requested),
            identifiers: Some(identifiers.into_iter().collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StewardDecision {
    Approve,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Command {
    Register {
        profile: DemographicProfile,
        #[serde(default)]
        identifiers: Vec<Identifier>,
        /// A guardian requirement beyond age, e.g. UNSOUND_MIND.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        guardian_reason: Option<GuardianReason>,
    },
    Update {
        phn: Phn,
        changes: PatientChanges,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expected_version: Option<u64>,
    },
    MarkDeceased {
        phn: Phn,
        deceased_on: NaiveDate,
    },
    LinkGuardian {
        ward: Phn,
        guardian: Phn,
        reason: GuardianReason,
    },
    Purge,
    Enqueue {
        results: Vec<MatchResult>,
        /// Skip ineligible results instead of failing the whole batch.
        #[serde(default)]
        lenient: bool,
    },
    Decide {
        item_id: String,
        decision: StewardDecision,
        survivor: Phn,
        #[serde(default)]
        field_overrides: BTreeMap<ProfileField, FieldSource>,
    },
    Merge {
        survivor: Phn,
        retired: Phn,
        source: MergeSource,
        #[serde(default)]
        field_overrides: BTreeMap<ProfileField, FieldSource>,
    },
    Unmerge {
        merge_id: String,
    },
}

impl Command {
    pub fn event_type(&self) -> &'static str {
        match self {
            Command::Register { .. } => "REGISTER",
            Command::Update { .. } => "UPDATE",
            Command::MarkDeceased { .. } => "MARK_DECEASED",
            Command::LinkGuardian { .. } => "LINK_GUARDIAN",
            Command::Purge => "PURGE",
            Command::Enqueue { .. } => "ENQUEUE",
            Command::Decide { .. } => "DECIDE",
            Command::Merge { .. } => "MERGE",
            Command::Unmerge { .. } => "UNMERGE",
        }
    }

    /// Subject for audit entries written when the command fails.
    pub fn subject_hint(&self) -> String {
        match self {
            Command::Register { .. } | Command::Purge | Command::Enqueue { .. } => String::new(),
            Command::Update { phn, .. } | Command::MarkDeceased { phn, .. } => phn.to_string(),
            Command::LinkGuardian { ward, .. } => ward.to_string(),
            Command::Decide { item_id, .. } => item_id.clone(),
            Command::Merge { retired, .. } => retired.to_string(),
            Command::Unmerge { merge_id } => merge_id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Registered {
        record: PatientRecord,
    },
    Updated {
        record: PatientRecord,
        changed: Vec<String>,
    },
    Deceased {
        record: PatientRecord,
    },
    GuardianLinked {
        record: PatientRecord,
    },
    Purged {
        purged: Vec<Phn>,
    },
    Enqueued {
        items: Vec<ReviewItem>,
    },
    Decided {
        item: ReviewItem,
        #[serde(skip_serializing_if = "Option::is_none")]
        merge: Option<MergeEvent>,
    },
    Merged {
        event: MergeEvent,
    },
    Unmerged {
        survivor: PatientRecord,
        restored: PatientRecord,
    },
}

impl Outcome {
    /// The PHN or item id the mutation is about.
    pub fn subject(&self) -> String {
        match self {
            Outcome::Registered { record }
            | Outcome::Updated { record, .. }
            | Outcome::Deceased { record }
            | Outcome::GuardianLinked { record } => record.phn.to_string(),
            Outcome::Purged { purged } => purged
                .iter()
                .map(Phn::to_string)
                .collect::<Vec<_>>()
                .join(","),
            Outcome::Enqueued { items } => items.iter().map(|i| i.id.as_str()).collect::<Vec<_>>().join(","),
            Outcome::Decided { item, .. } => item.id.clone(),
            Outcome::Merged { event } => event.retired.to_string(),
            Outcome::Unmerged { restored, .. } => restored.phn.to_string(),
        }
    }

    pub fn merge_event(&self) -> Option<&MergeEvent> {
        match self {
            Outcome::Merged { event } => Some(event),
            Outcome::Decided { merge, .. } => merge.as_ref(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchHit {
    pub record: PatientRecord,
    pub exact: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    /// The queried PHN was retired; `record` is its survivor.
    pub via_merge: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub via: Vec<String>,
    pub redacted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchRequest {
    #[serde(default)]
    pub criteria: Vec<(IdentifierKind, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fuzzy_name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct State {
    next_sequence: u64,
    records: BTreeMap<Phn, PatientRecord>,
    lineage: Lineage,
    queue: ReviewQueue,
    excluded: BTreeSet<(Phn, Phn)>,
}

#[derive(Debug, Clone)]
pub struct Registry {
    records: BTreeMap<Phn, PatientRecord>,
    issuer: PhnIssuer,
    lineage: Lineage,
    queue: ReviewQueue,
    excluded: BTreeSet<(Phn, Phn)>,
    config: LinkageConfig,
}

impl Default for Registry {
    fn default() -> Self {
        Registry::new(LinkageConfig::default())
    }
}

fn ordered(a: &Phn, b: &Phn) -> (Phn, Phn) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

fn normalize_all(ids: &[Identifier]) -> Result<Vec<Identifier>, RegistryError> {
    ids.iter()
        .map(|i| i.normalized().map_err(|e| RegistryError::FormatInvalid(e.to_string())))
        .collect()
}

impl RegistryView for Registry {
    fn all_records(&self) -> Vec<&PatientRecord> {
        self.records.values().collect()
    }

    fn is_excluded(&self, a: &Phn, b: &Phn) -> bool {
        self.excluded.contains(&ordered(a, b))
    }
}

impl Registry {
    /// PHN sequences start at 1; sequence 0 is never issued.
    pub fn new(config: LinkageConfig) -> Self {
        Registry {
            records: BTreeMap::new(),
            issuer: PhnIssuer::starting_at(1),
            lineage: Lineage::default(),
            queue: ReviewQueue::default(),
            excluded: BTreeSet::new(),
            config,
        }
    }

    pub fn config(&self) -> &LinkageConfig {
        &self.config
    }

    pub fn set_config(&mut self, config: LinkageConfig) {
        self.config = config;
    }

    pub fn records(&self) -> &BTreeMap<Phn, PatientRecord> {
        &self.records
    }

    pub fn record(&self, phn: &Phn) -> Option<&PatientRecord> {
        self.records.get(phn)
    }

    pub fn lineage(&self) -> &Lineage {
        &self.lineage
    }

    pub fn queue(&self) -> &ReviewQueue {
        &self.queue
    }

    pub fn excluded(&self) -> &BTreeSet<(Phn, Phn)> {
        &self.excluded
    }

    pub fn next_sequence(&self) -> u64 {
        self.issuer.next_sequence()
    }

    pub fn resolve(&self, phn: &Phn) -> Result<(&PatientRecord, Vec<MergeEvent>), RegistryError> {
        Ok(resolve(&self.records, &self.lineage, phn)?)
    }

    /// Pairs from the blocked duplicate scan, skipping steward-rejected pairs.
    pub fn scan(&self) -> Vec<MatchResult> {
        dedup_scan(self, &self.config)
    }

    fn active_owner(&self, id: &Identifier, except: Option<&Phn>) -> Option<&PatientRecord> {
        self.records.values().find(|r| {
            r.status.is_active() && Some(&r.phn) != except && r.has_identifier(&id.kind, &id.value)
        })
    }

    fn check_unique(&self, ids: &[Identifier], except: Option<&Phn>) -> Result<(), RegistryError> {
        for id in ids.iter().filter(|i| i.kind.is_uniqueness_bearing()) {
            if let Some(owner) = self.active_owner(id, except) {
                return Err(RegistryError::DuplicateIdentifier {
                    kind: id.kind.clone(),
                    value: id.value.clone(),
                    existing: owner.phn.clone(),
                });
            }
        }
        Ok(())
    }

    fn active_mut(&mut self, phn: &Phn) -> Result<&mut PatientRecord, RegistryError> {
        let record = self
            .records
            .get_mut(phn)
            .ok_or_else(|| MergeError::UnknownPhn(phn.clone()))?;
        if !record.status.is_active() {
            return Err(RegistryError::RecordNotActive(phn.clone()));
        }
        Ok(record)
    }

    /// Applies one command. A failed command leaves the registry untouched.
    pub fn apply(&mut self, actor: &str, at: DateTime<Utc>, command: Command) -> Result<Outcome, RegistryError> {
        match command {
            Command::Register {
                profile,
                identifiers,
                guardian_reason,
            } => self.register(profile, identifiers, guardian_reason, at),
            Command::Update {
                phn,
                changes,
                expected_version,
            } => self.update(&phn, changes, expected_version, at),
            Command::MarkDeceased { phn, deceased_on } => self.mark_deceased(&phn, deceased_on, at),
            Command::LinkGuardian { ward, guardian, reason } => self.link_guardian(&ward, &guardian, reason, at),
            Command::Purge => Ok(Outcome::Purged {
                purged: self.purge_expired(at),
            }),
            Command::Enqueue { results, lenient } => self.enqueue(results, lenient, at),
            Command::Decide {
                item_id,
                decision,
                survivor,
                field_overrides,
            } => self.decide(&item_id, decision, actor, &survivor, field_overrides, at),
            Command::Merge {
                survivor,
                retired,
                source,
                field_overrides,
            } => {
                let event = apply_merge(
                    &mut self.records,
                    &mut self.lineage,
                    MergeRequest {
                        survivor,
                        retired,
                        decided_by: actor.to_string(),
                        source,
                        field_overrides,
                        at,
                    },
                )?;
                self.queue.drop_pending_involving(&event.retired);
                Ok(Outcome::Merged { event })
            }
            Command::Unmerge { merge_id } => {
                let (survivor, restored) = unmerge(&mut self.records, &mut self.lineage, &merge_id, actor, at)?;
                Ok(Outcome::Unmerged { survivor, restored })
            }
        }
    }

    fn register(
        &mut self,
        profile: DemographicProfile,
        identifiers: Vec<Identifier>,
        guardian_reason: Option<GuardianReason>,
        at: DateTime<Utc>,
    ) -> Result<Outcome, RegistryError> {
        let mut ids = normalize_all(&identifiers)?;
        if let Some(phn_id) = ids.iter().find(|i| i.kind == IdentifierKind::Phn) {
            let existing = Phn::parse(&phn_id.value)
                .ok()
                .and_then(|p| self.resolve(&p).ok().map(|(r, _)| r.phn.clone()));
            return Err(match existing {
                Some(existing) => RegistryError::DuplicateIdentifier {
                    kind: IdentifierKind::Phn,
                    value: phn_id.value.clone(),
                    existing,
                },
                None => RegistryError::ValidationFailed(format!("PHN {} was not issued by this index", phn_id.value)),
            });
        }
        ids.sort();
        self.check_unique(&ids, None)?;
        let sequence = self.issuer.next_sequence();
        let phn = Phn::from_sequence(sequence).map_err(|_| RegistryError::SequenceExhausted)?;
        let mut record = PatientRecord::new(phn, profile, ids, at)
            .map_err(|e| RegistryError::ValidationFailed(e.to_string()))?;
        if record.profile.age_on(at.date_naive()) < ADULT_AGE_YEARS {
            record.pending_guardian = Some(GuardianReason::Minor);
        }
        if guardian_reason.is_some() {
            record.pending_guardian = guardian_reason;
        }
        match self.issuer.issue(sequence) {
            Ok(_) => {}
            Err(PhnError::SequenceExhausted(_)) => return Err(RegistryError::SequenceExhausted),
            Err(e) => return Err(RegistryError::ValidationFailed(e.to_string())),
        }
        self.records.insert(record.phn.clone(), record.clone());
        Ok(Outcome::Registered { record })
    }

    fn update(
        &mut self,
        phn: &Phn,
        changes: PatientChanges,
        expected_version: Option<u64>,
        at: DateTime<Utc>,
    ) -> Result<Outcome, RegistryError> {
        let current = self.active_mut(phn)?.clone();
        if let Some(expected) = expected_version {
            if expected != current.version {
                return Err(RegistryError::VersionConflict {
                    expected,
                    current: current.version,
                });
            }
        }
        let mut next = current.clone();
        let p = &mut next.profile;
        if let Some(v) = changes.family_name {
            p.family_name = v;
        }
        if let Some(v) = changes.given_names {
            p.given_names = v;
        }
        if let Some(v) = changes.date_of_birth {
            p.date_of_birth = v;
        }
        if let Some(v) = changes.sex {
            p.sex = v;
        }
        if let Some(v) = changes.address_lines {
            p.address_lines = v;
        }
        if let Some(v) = changes.contact_number {
            p.contact_number = Some(v).filter(|c| !c.trim().is_empty());
        }
        if let Some(v) = changes.anonymity_requested {
            p.anonymity_requested = v;
        }
        if let Some(ids) = changes.identifiers {
            let ids = normalize_all(&ids)?;
            let mut replaced: BTreeSet<Identifier> = current
                .identifiers
                .iter()
                .filter(|i| i.kind == IdentifierKind::Phn)
                .cloned()
                .collect();
            for id in ids {
                if id.kind == IdentifierKind::Phn {
                    if id.value != phn.as_str() {
                        return Err(RegistryError::ValidationFailed(format!(
                            "record {phn} cannot carry PHN {}",
                            id.value
                        )));
                    }
                    continue;
                }
                replaced.insert(id);
            }
            let list: Vec<Identifier> = replaced.iter().cloned().collect();
            self.check_unique(&list, Some(phn))?;
            next.identifiers = replaced;
        }
        next.validate()
            .map_err(|e| RegistryError::ValidationFailed(e.to_string()))?;

        let mut changed: Vec<String> = ProfileField::ALL
            .iter()
            .filter(|f| f.differs(&current.profile, &next.profile))
            .map(|f| format!("{f:?}"))
            .collect();
        if current.profile.anonymity_requested != next.profile.anonymity_requested {
            changed.push("AnonymityRequested".into());
        }
        if current.identifiers != next.identifiers {
            changed.push("Identifiers".into());
        }
        next.touch(at);
        self.records.insert(phn.clone(), next.clone());
        Ok(Outcome::Updated { record: next, changed })
    }

    fn mark_deceased(&mut self, phn: &Phn, deceased_on: NaiveDate, at: DateTime<Utc>) -> Result<Outcome, RegistryError> {
        let record = self
            .records
            .get(phn)
            .ok_or_else(|| MergeError::UnknownPhn(phn.clone()))?;
        match record.status {
            RecordStatus::Active => {}
            RecordStatus::InactiveDeceased { .. } => return Err(RegistryError::AlreadyDeceased(phn.clone())),
            RecordStatus::RetiredMerged { .. } => return Err(RegistryError::RecordNotActive(phn.clone())),
        }
        if deceased_on < record.profile.date_of_birth || deceased_on > at.date_naive() {
            return Err(RegistryError::ValidationFailed(format!(
                "date of death {deceased_on} outside birth..today"
            )));
        }
        let record = self.active_mut(phn)?;
        record.status = RecordStatus::InactiveDeceased { deceased_on };
        record.touch(at);
        Ok(Outcome::Deceased { record: record.clone() })
    }

    fn link_guardian(
        &mut self,
        ward: &Phn,
        guardian: &Phn,
        reason: GuardianReason,
        at: DateTime<Utc>,
    ) -> Result<Outcome, RegistryError> {
        if ward == guardian {
            return Err(RegistryError::ValidationFailed("a patient cannot be their own guardian".into()));
        }
        let g = self
            .records
            .get(guardian)
            .ok_or_else(|| MergeError::UnknownPhn(guardian.clone()))?;
        if !g.status.is_active() {
            return Err(RegistryError::RecordNotActive(guardian.clone()));
        }
        if g.profile.age_on(at.date_naive()) < ADULT_AGE_YEARS {
            return Err(RegistryError::ValidationFailed(format!("guardian {guardian} is a minor")));
        }
        let w = self.active_mut(ward)?;
        if w.guardians.iter().any(|l| l.reason == reason) {
            return Err(RegistryError::GuardianAlreadyLinked {
                ward: ward.clone(),
                reason,
            });
        }
        w.guardians.push(GuardianLink {
            ward_phn: ward.clone(),
            guardian_phn: guardian.clone(),
            reason,
            established_at: at,
        });
        if w.pending_guardian == Some(reason) {
            w.pending_guardian = None;
        }
        w.touch(at);
        Ok(Outcome::GuardianLinked { record: w.clone() })
    }

    /// Removes deceased records past retention, together with any records
    /// retired into them. Links and pending review items naming a purged
    /// record are dropped.
    fn purge_expired(&mut self, at: DateTime<Utc>) -> Vec<Phn> {
        let today = at.date_naive();
        let mut purged: BTreeSet<Phn> = self
            .records
            .values()
            .filter(|r| r.status.purge_eligible_from().is_some_and(|d| d <= today))
            .map(|r| r.phn.clone())
            .collect();
        loop {
            let more: Vec<Phn> = self
                .records
                .values()
                .filter(|r| !purged.contains(&r.phn))
                .filter(|r| matches!(&r.status, RecordStatus::RetiredMerged { survivor } if purged.contains(survivor)))
                .map(|r| r.phn.clone())
                .collect();
            if more.is_empty() {
                break;
            }
            purged.extend(more);
        }
        for phn in &purged {
            self.records.remove(phn);
            self.queue.drop_pending_involving(phn);
        }
        self.excluded
            .retain(|(a, b)| !purged.contains(a) && !purged.contains(b));
        for r in self.records.values_mut() {
            let before = r.guardians.len();
            r.guardians.retain(|l| !purged.contains(&l.guardian_phn));
            if r.guardians.len() != before {
                r.touch(at);
            }
        }
        purged.into_iter().collect()
    }

    fn enqueue(&mut self, results: Vec<MatchResult>, lenient: bool, at: DateTime<Utc>) -> Result<Outcome, RegistryError> {
        let mut staged = self.queue.clone();
        let mut items: Vec<ReviewItem> = Vec::new();
        for result in results {
            if self.is_excluded(&result.pair.0, &result.pair.1) && lenient {
                continue;
            }
            match staged.enqueue(result, &self.records, at) {
                Ok(item) => {
                    items.retain(|i| i.id != item.id);
                    items.push(item);
                }
                Err(_) if lenient => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.queue = staged;
        Ok(Outcome::Enqueued { items })
    }

    fn decide(
        &mut self,
        item_id: &str,
        decision: StewardDecision,
        actor: &str,
        survivor: &Phn,
        field_overrides: BTreeMap<ProfileField, FieldSource>,
        at: DateTime<Utc>,
    ) -> Result<Outcome, RegistryError> {
        let item = self.queue.pending_mut(item_id)?.clone();
        let (a, b) = item.result.pair.clone();
        let retired = if survivor == &a {
            b
        } else if survivor == &b {
            a
        } else {
            return Err(MergeError::BadSurvivorChoice(survivor.clone()).into());
        };
        let merge = match decision {
            StewardDecision::Approve => Some(apply_merge(
                &mut self.records,
                &mut self.lineage,
                MergeRequest {
                    survivor: survivor.clone(),
                    retired: retired.clone(),
                    decided_by: actor.to_string(),
                    source: MergeSource::Steward,
                    field_overrides,
                    at,
                },
            )?),
            StewardDecision::Reject => {
                self.excluded.insert(ordered(survivor, &retired));
                None
            }
        };
        let entry = self.queue.pending_mut(item_id)?;
        entry.state = match decision {
            StewardDecision::Approve => ReviewState::Approved,
            StewardDecision::Reject => ReviewState::Rejected,
        };
        entry.decided_at = Some(at);
        entry.decided_by = Some(actor.to_string());
        entry.merge_id = merge.as_ref().map(|m| m.id.clone());
        let item = entry.clone();
        if merge.is_some() {
            self.queue.drop_pending_involving(&retired);
        }
        Ok(Outcome::Decided { item, merge })
    }

    /// Exact identifier hits first, then fuzzy name hits by descending score.
    /// Anonymity-flagged records are redacted unless `steward` is set.
    pub fn search(&self, request: &SearchRequest, steward: bool) -> Result<Vec<SearchHit>, RegistryError> {
        let fuzzy = request
            .fuzzy_name
            .as_deref()
            .map(str::trim)
            .filter(|n| !n.is_empty());
        if request.criteria.is_empty() && fuzzy.is_none() {
            return Err(RegistryError::NoCriteria);
        }
        let mut hits: Vec<SearchHit> = Vec::new();
        let mut seen = BTreeSet::new();
        for (kind, raw) in &request.criteria {
            let id = crate::identity::normalize_identifier(kind.clone(), raw)
                .map_err(|e| RegistryError::FormatInvalid(e.to_string()))?;
            let mut found: Vec<(&PatientRecord, Vec<MergeEvent>, bool)> = Vec::new();
            if id.kind == IdentifierKind::Phn {
                let phn = Phn::parse(&id.value).map_err(|e| RegistryError::FormatInvalid(e.to_string()))?;
                if let Ok((terminal, chain)) = self.resolve(&phn) {
                    let via = terminal.phn != phn;
                    found.push((terminal, chain, via));
                }
            } else {
                for r in self.records.values() {
                    if !r.status.is_retired() && r.has_identifier(&id.kind, &id.value) {
                        found.push((r, Vec::new(), false));
                    }
                }
            }
            for (record, chain, via_merge) in found {
                if seen.insert(record.phn.clone()) {
                    hits.push(self.hit(record, true, None, via_merge, chain, steward));
                }
            }
        }
        if let Some(name) = fuzzy {
            let probe = LinkageView::name_probe(name);
            let probe_phn = Phn::from_sequence(0).expect("zero sequence");
            let mut scored: Vec<(f64, &PatientRecord)> = self
                .records
                .values()
                .filter(|r| !r.status.is_retired() && !seen.contains(&r.phn))
                .map(|r| {
                    let result = score_views(
                        &self.config.comparators,
                        (probe_phn.clone(), r.phn.clone()),
                        &probe,
                        &LinkageView::of(r),
                        &self.config.thresholds,
                    );
                    (result.total, r, result.decision)
                })
                .filter(|(_, _, d)| *d != Decision::NonMatch)
                .map(|(t, r, _)| (t, r))
                .collect();
            scored.sort_by(|x, y| y.0.total_cmp(&x.0).then_with(|| x.1.phn.cmp(&y.1.phn)));
            for (score, record) in scored {
                hits.push(self.hit(record, false, Some(score), false, Vec::new(), steward));
            }
        }
        Ok(hits)
    }

    fn hit(
        &self,
        record: &PatientRecord,
        exact: bool,
        score: Option<f64>,
        via_merge: bool,
        chain: Vec<MergeEvent>,
        steward: bool,
    ) -> SearchHit {
        let redact = record.profile.anonymity_requested && !steward;
        let mut record = record.clone();
        if redact {
            record.profile = record.profile.redacted();
        }
        SearchHit {
            record,
            exact,
            score,
            via_merge,
            via: chain.into_iter().map(|m| m.id).collect(),
            redacted: redact,
        }
    }

    /// True when both registries hold the same records, lineage, queue and
    /// exclusions. Configuration is not compared.
    pub fn same_state(&self, other: &Registry) -> bool {
        self.issuer.next_sequence() == other.issuer.next_sequence()
            && self.records == other.records
            && self.lineage == other.lineage
            && self.queue == other.queue
            && self.excluded == other.excluded
    }

    /// Deterministic text form: header line then one JSON document.
    pub fn snapshot(&self) -> String {
        let state = State {
            next_sequence: self.issuer.next_sequence(),
            records: self.records.clone(),
            lineage: self.lineage.clone(),
            queue: self.queue.clone(),
            excluded: self.excluded.clone(),
        };
        let body = serde_json::to_string(&state).expect("registry state serializes");
        format!("{SNAPSHOT_HEADER}\n{body}\n")
    }

    pub fn from_snapshot(text: &str, config: LinkageConfig) -> Result<Registry, String> {
        let body = text
            .strip_prefix(SNAPSHOT_HEADER)
            .and_then(|rest| rest.strip_prefix('\n'))
            .ok_or_else(|| format!("snapshot does not start with {SNAPSHOT_HEADER}"))?;
        let state: State = serde_json::from_str(body.trim_end()).map_err(|e| e.to_string())?;
        Ok(Registry {
            records: state.records,
            issuer: PhnIssuer::starting_at(state.next_sequence),
            lineage: state.lineage,
            queue: state.queue,
            excluded: state.excluded,
            config,
        })
    }

    /// Checks registry-wide invariants: per-record validity, identifier
    /// uniqueness among ACTIVE records, survivor references and chain
    /// termination.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut owners: BTreeMap<(IdentifierKind, String), &Phn> = BTreeMap::new();
        for r in self.records.values() {
            r.validate().map_err(|e| format!("{}: {e}", r.phn))?;
            if r.phn.sequence() >= self.issuer.next_sequence() {
                return Err(format!("{} beyond issued sequence", r.phn));
            }
            if let RecordStatus::RetiredMerged { survivor } = &r.status {
                if !self.records.contains_key(survivor) {
                    return Err(format!("{} retired into unknown {survivor}", r.phn));
                }
            }
            if r.status.is_active() {
                for id in r.identifiers.iter().filter(|i| i.kind.is_uniqueness_bearing()) {
                    if let Some(other) = owners.insert((id.kind.clone(), id.value.clone()), &r.phn) {
                        return Err(format!("{} {} shared by {other} and {}", id.kind, id.value, r.phn));
                    }
                }
            }
            self.resolve(&r.phn).map_err(|e| e.to_string())?;
        }
        for entry in self.lineage.entries() {
            if let LineageEntry::Merge(m) = entry {
                if m.survivor == m.retired {
                    return Err(format!("merge {} is a self merge", m.id));
                }
            }
        }
        Ok(())
    }
}
