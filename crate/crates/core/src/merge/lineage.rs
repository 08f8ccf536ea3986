use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{FieldSource, LineageEntry, MergeError, MergeEvent, MergeSource, MergeUndo, UnmergeEvent};
use crate::identity::{Identifier, IdentifierKind, PatientRecord, Phn, ProfileField, RecordStatus};

/// Append-only log of merges and their reversals.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Lineage {
    entries: Vec<LineageEntry>,
}

impl Lineage {
    pub fn entries(&self) -> &[LineageEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn merges(&self) -> impl Iterator<Item = &MergeEvent> {
        self.entries.iter().filter_map(|e| match e {
            LineageEntry::Merge(m) => Some(m),
            LineageEntry::Unmerge(_) => None,
        })
    }

    pub fn merge(&self, id: &str) -> Option<&MergeEvent> {
        self.merges().find(|m| m.id == id)
    }

    fn reversed_ids(&self) -> BTreeSet<&str> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                LineageEntry::Unmerge(u) => Some(u.merge_id.as_str()),
                LineageEntry::Merge(_) => None,
            })
            .collect()
    }

    pub fn is_reversed(&self, id: &str) -> bool {
        self.reversed_ids().contains(id)
    }

    /// The merge currently holding `retired` under `survivor`, if any.
    pub fn live_merge(&self, retired: &Phn, survivor: &Phn) -> Option<&MergeEvent> {
        let reversed = self.reversed_ids();
        self.merges()
            .filter(|m| &m.retired == retired && &m.survivor == survivor && !reversed.contains(m.id.as_str()))
            .last()
    }

    fn next_merge_id(&self) -> String {
        format!("MG{:08}", self.merges().count() + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeRequest {
    pub survivor: Phn,
    pub retired: Phn,
    pub decided_by: String,
    pub source: MergeSource,
    #[serde(default)]
    pub field_overrides: BTreeMap<ProfileField, FieldSource>,
    pub at: DateTime<Utc>,
}

fn uniqueness_owner<'a>(
    records: &'a BTreeMap<Phn, PatientRecord>,
    id: &Identifier,
    ignore: &[&Phn],
) -> Option<&'a PatientRecord> {
    records
        .values()
        .find(|r| r.status.is_active() && !ignore.contains(&&r.phn) && r.has_identifier(&id.kind, &id.value))
}

fn identifier_keys(ids: &BTreeSet<Identifier>) -> BTreeSet<(IdentifierKind, String)> {
    ids.iter().map(|i| (i.kind.clone(), i.value.clone())).collect()
}

/// Retires `req.retired` into `req.survivor`.
pub fn apply_merge(
    records: &mut BTreeMap<Phn, PatientRecord>,
    lineage: &mut Lineage,
    req: MergeRequest,
) -> Result<MergeEvent, MergeError> {
    let survivor = records
        .get(&req.survivor)
        .ok_or_else(|| MergeError::UnknownPhn(req.survivor.clone()))?;
    let retired = records
        .get(&req.retired)
        .ok_or_else(|| MergeError::UnknownPhn(req.retired.clone()))?;
    if req.survivor == req.retired {
        return Err(MergeError::CycleDetected {
            survivor: req.survivor,
            retired: req.retired,
        });
    }
    if !survivor.status.is_active() {
        return Err(MergeError::SurvivorNotActive(req.survivor));
    }
    if retired.status.is_retired() {
        return Err(MergeError::AlreadyMerged(req.retired));
    }
    // Walk from the survivor; reaching the retired record would close a loop.
    let mut cursor = survivor;
    let mut steps = 0;
    while let RecordStatus::RetiredMerged { survivor: next } = &cursor.status {
        if next == &req.retired || steps > records.len() {
            return Err(MergeError::CycleDetected {
                survivor: req.survivor,
                retired: req.retired,
            });
        }
        cursor = records.get(next).ok_or_else(|| MergeError::UnknownPhn(next.clone()))?;
        steps += 1;
    }

    let survivor_keys = identifier_keys(&survivor.identifiers);
    let added: BTreeSet<Identifier> = retired
        .identifiers
        .iter()
        .filter(|i| i.kind != IdentifierKind::Phn)
        .filter(|i| !survivor_keys.contains(&(i.kind.clone(), i.value.clone())))
        .cloned()
        .collect();
    for id in added.iter().filter(|i| i.kind.is_uniqueness_bearing()) {
        if let Some(existing) = survivor.identifier(&id.kind) {
            return Err(MergeError::IdentifierConflict {
                kind: id.kind.clone(),
                left: existing.value.clone(),
                right: id.value.clone(),
            });
        }
        if let Some(other) = uniqueness_owner(records, id, &[&req.survivor, &req.retired]) {
            return Err(MergeError::IdentifierConflict {
                kind: id.kind.clone(),
                left: other.phn.to_string(),
                right: id.value.clone(),
            });
        }
    }

    let field_resolutions: BTreeMap<ProfileField, FieldSource> = ProfileField::ALL
        .iter()
        .map(|f| (*f, req.field_overrides.get(f).copied().unwrap_or(FieldSource::Survivor)))
        .collect();

    let survivor_before = survivor.clone();
    let retired_before = retired.clone();
    let mut s = survivor.clone();
    let mut r = retired.clone();

    s.identifiers.extend(added.iter().cloned());
    for (field, source) in &field_resolutions {
        if *source == FieldSource::Retired {
            field.copy(&r.profile, &mut s.profile);
        }
    }
    s.profile.anonymity_requested |= r.profile.anonymity_requested;

    let mut dropped_links = Vec::new();
    s.guardians.retain(|l| {
        let keep = l.guardian_phn != r.phn;
        if !keep {
            dropped_links.push(l.clone());
        }
        keep
    });
    let mut moved_links = Vec::new();
    for link in std::mem::take(&mut r.guardians) {
        if link.guardian_phn == s.phn || s.guardians.iter().any(|l| l.reason == link.reason) {
            continue;
        }
        let mut moved = link;
        moved.ward_phn = s.phn.clone();
        s.guardians.push(moved.clone());
        moved_links.push(moved);
    }
    if let Some(reason) = s.pending_guardian {
        if s.guardians.iter().any(|l| l.reason == reason) {
            s.pending_guardian = None;
        }
    }
    r.pending_guardian = None;

    let retired_phn_id = r.identifiers.iter().find(|i| i.kind == IdentifierKind::Phn).cloned();
    r.identifiers = retired_phn_id.into_iter().collect();
    r.status = RecordStatus::RetiredMerged {
        survivor: s.phn.clone(),
    };
    s.touch(req.at);
    r.touch(req.at);

    let mut repointed = Vec::new();
    for w in records.values_mut() {
        if w.phn == s.phn || w.phn == r.phn {
            continue;
        }
        let mut changed = false;
        for link in w.guardians.iter_mut().filter(|l| l.guardian_phn == r.phn) {
            link.guardian_phn = s.phn.clone();
            repointed.push((w.phn.clone(), link.reason));
            changed = true;
        }
        if changed {
            w.touch(req.at);
        }
    }

    let event = MergeEvent {
        id: lineage.next_merge_id(),
        survivor: s.phn.clone(),
        retired: r.phn.clone(),
        decided_by: req.decided_by,
        source: req.source,
        decided_at: req.at,
        field_resolutions,
        undo: MergeUndo {
            survivor_before,
            retired_before,
            added_identifiers: added,
            moved_links,
            dropped_links,
            repointed,
        },
    };
    records.insert(s.phn.clone(), s);
    records.insert(r.phn.clone(), r);
    lineage.entries.push(LineageEntry::Merge(event.clone()));
    Ok(event)
}

/// Reverses a merge. Only the latest live merge touching the survivor can be
/// reversed. Returns (survivor, restored record).
pub fn unmerge(
    records: &mut BTreeMap<Phn, PatientRecord>,
    lineage: &mut Lineage,
    merge_id: &str,
    decided_by: &str,
    at: DateTime<Utc>,
) -> Result<(PatientRecord, PatientRecord), MergeError> {
    let event = lineage
        .merge(merge_id)
        .cloned()
        .ok_or_else(|| MergeError::UnknownMerge(merge_id.to_string()))?;
    let not_reversible = || MergeError::NotReversible(merge_id.to_string());
    let reversed = lineage.reversed_ids();
    if reversed.contains(merge_id) {
        return Err(not_reversible());
    }
    let position = lineage
        .entries
        .iter()
        .position(|e| matches!(e, LineageEntry::Merge(m) if m.id == merge_id))
        .expect("merge located above");
    let stacked = lineage.entries[position + 1..].iter().any(|e| match e {
        LineageEntry::Merge(m) => {
            !reversed.contains(m.id.as_str())
                && [&m.survivor, &m.retired]
                    .iter()
                    .any(|p| **p == event.survivor || **p == event.retired)
        }
        LineageEntry::Unmerge(_) => false,
    });
    if stacked {
        return Err(not_reversible());
    }
    let (Some(s), Some(r)) = (records.get(&event.survivor), records.get(&event.retired)) else {
        return Err(not_reversible());
    };
    if r.status
        != (RecordStatus::RetiredMerged {
            survivor: event.survivor.clone(),
        })
    {
        return Err(not_reversible());
    }

    let undo = &event.undo;
    let mut s = s.clone();
    let added_keys = identifier_keys(&undo.added_identifiers);
    s.identifiers
        .retain(|i| !added_keys.contains(&(i.kind.clone(), i.value.clone())));
    for (field, source) in &event.field_resolutions {
        if *source == FieldSource::Retired {
            field.copy(&undo.survivor_before.profile, &mut s.profile);
        }
    }
    s.profile.anonymity_requested = undo.survivor_before.profile.anonymity_requested;
    s.guardians
        .retain(|l| !undo.moved_links.iter().any(|m| m.reason == l.reason && m.guardian_phn == l.guardian_phn));
    for link in &undo.dropped_links {
        if !s.guardians.iter().any(|l| l.reason == link.reason) {
            s.guardians.push(link.clone());
        }
    }
    s.pending_guardian = undo.survivor_before.pending_guardian;
    s.touch(at);

    let mut restored = undo.retired_before.clone();
    restored.version = r.version + 1;
    restored.updated_at = at;

    if restored.status.is_active() {
        for id in restored.identifiers.iter().filter(|i| i.kind.is_uniqueness_bearing()) {
            let clash = records.values().find(|o| {
                o.status.is_active()
                    && o.phn != restored.phn
                    && if o.phn == s.phn {
                        s.has_identifier(&id.kind, &id.value)
                    } else {
                        o.has_identifier(&id.kind, &id.value)
                    }
            });
            if let Some(o) = clash {
                return Err(MergeError::IdentifierConflict {
                    kind: id.kind.clone(),
                    left: o.phn.to_string(),
                    right: id.value.clone(),
                });
            }
        }
    }

    for (ward, reason) in &undo.repointed {
        if let Some(w) = records.get_mut(ward) {
            let mut changed = false;
            for link in w
                .guardians
                .iter_mut()
                .filter(|l| l.reason == *reason && l.guardian_phn == event.survivor)
            {
                link.guardian_phn = event.retired.clone();
                changed = true;
            }
            if changed {
                w.touch(at);
            }
        }
    }
    records.insert(s.phn.clone(), s.clone());
    records.insert(restored.phn.clone(), restored.clone());
    lineage.entries.push(LineageEntry::Unmerge(UnmergeEvent {
        merge_id: merge_id.to_string(),
        decided_by: decided_by.to_string(),
        decided_at: at,
    }));
    Ok((s, restored))
}

/// Follows retirement references to the terminal record, returning the merges
/// traversed in order.
pub fn resolve<'a>(
    records: &'a BTreeMap<Phn, PatientRecord>,
    lineage: &Lineage,
    phn: &Phn,
) -> Result<(&'a PatientRecord, Vec<MergeEvent>), MergeError> {
    let mut current = records.get(phn).ok_or_else(|| MergeError::UnknownPhn(phn.clone()))?;
    let mut chain = Vec::new();
    while let RecordStatus::RetiredMerged { survivor } = &current.status {
        if chain.len() > lineage.len() {
            return Err(MergeError::CycleDetected {
                survivor: survivor.clone(),
                retired: current.phn.clone(),
            });
        }
        if let Some(event) = lineage.live_merge(&current.phn, survivor) {
            chain.push(event.clone());
        }
        current = records
            .get(survivor)
            .ok_or_else(|| MergeError::UnknownPhn(survivor.clone()))?;
    }
    Ok((current, chain))
}
