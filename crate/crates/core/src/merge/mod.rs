//! Merging duplicate records: lineage of merge events, reversal, chain
//! resolution and the steward review queue.

mod lineage;
mod queue;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::{GuardianLink, GuardianReason, Identifier, IdentifierKind, PatientRecord, Phn, ProfileField};

pub use lineage::{apply_merge, resolve, unmerge, Lineage, MergeRequest};
pub use queue::{ReviewItem, ReviewQueue, ReviewState};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MergeError {
    #[error("UNKNOWN_PHN: {0}")]
    UnknownPhn(Phn),
    #[error("CYCLE_DETECTED: merging {retired} into {survivor} would close a loop")]
    CycleDetected { survivor: Phn, retired: Phn },
    #[error("SURVIVOR_NOT_ACTIVE: {0}")]
    SurvivorNotActive(Phn),
    #[error("ALREADY_MERGED: {0}")]
    AlreadyMerged(Phn),
    #[error("IDENTIFIER_CONFLICT: {kind} {left} vs {right}")]
    IdentifierConflict {
        kind: IdentifierKind,
        left: String,
        right: String,
    },
    #[error("NOT_REVERSIBLE: {0}")]
    NotReversible(String),
    #[error("UNKNOWN_MERGE: {0}")]
    UnknownMerge(String),
    #[error("NOT_A_CANDIDATE: pair scored NON_MATCH")]
    NotACandidate,
    #[error("UNKNOWN_ITEM: {0}")]
    UnknownItem(String),
    #[error("ITEM_NOT_PENDING: {0}")]
    ItemNotPending(String),
    #[error("BAD_SURVIVOR_CHOICE: {0} is not part of the pair")]
    BadSurvivorChoice(Phn),
}

impl MergeError {
    pub fn code(&self) -> &'static str {
        match self {
            MergeError::UnknownPhn(_) => "UNKNOWN_PHN",
            MergeError::CycleDetected { .. } => "CYCLE_DETECTED",
            MergeError::SurvivorNotActive(_) => "SURVIVOR_NOT_ACTIVE",
            MergeError::AlreadyMerged(_) => "ALREADY_MERGED",
            MergeError::IdentifierConflict { .. } => "IDENTIFIER_CONFLICT",
            MergeError::NotReversible(_) => "NOT_REVERSIBLE",
            MergeError::UnknownMerge(_) => "UNKNOWN_MERGE",
            MergeError::NotACandidate => "NOT_A_CANDIDATE",
            MergeError::UnknownItem(_) => "UNKNOWN_ITEM",
            MergeError::ItemNotPending(_) => "ITEM_NOT_PENDING",
            MergeError::BadSurvivorChoice(_) => "BAD_SURVIVOR_CHOICE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MergeSource {
    AutoMatch,
    Steward,
    #[serde(rename = "HL7_A40")]
    Hl7A40,
}

impl fmt::Display for MergeSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MergeSource::AutoMatch => "AUTO_MATCH",
            MergeSource::Steward => "STEWARD",
            MergeSource::Hl7A40 => "HL7_A40",
        })
    }
}

/// Which record a profile field was taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FieldSource {
    Survivor,
    Retired,
}

/// What a merge changed, so that it can be reversed exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeUndo {
    pub survivor_before: PatientRecord,
    pub retired_before: PatientRecord,
    pub added_identifiers: BTreeSet<Identifier>,
    /// Ward links moved from the retired record onto the survivor.
    pub moved_links: Vec<GuardianLink>,
    /// Survivor links whose guardian was the retired record.
    pub dropped_links: Vec<GuardianLink>,
    /// Other wards whose guardian was re-pointed from retired to survivor.
    pub repointed: Vec<(Phn, GuardianReason)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeEvent {
    pub id: String,
    pub survivor: Phn,
    pub retired: Phn,
    pub decided_by: String,
    pub source: MergeSource,
    pub decided_at: DateTime<Utc>,
    pub field_resolutions: BTreeMap<ProfileField, FieldSource>,
    pub undo: MergeUndo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnmergeEvent {
    pub merge_id: String,
    pub decided_by: String,
    pub decided_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LineageEntry {
    Merge(MergeEvent),
    Unmerge(UnmergeEvent),
}
