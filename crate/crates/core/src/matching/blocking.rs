use std::collections::{BTreeMap, BTreeSet};

use chrono::{Datelike, NaiveDate};

use super::config::LinkageConfig;
use super::score::{score_pair, Decision, MatchResult};
use super::strings::soundex;
use crate::identity::{IdentifierKind, PatientRecord, Phn};

/// Read access the scan needs from a registry.
pub trait RegistryView {
    /// Every record known to the registry, in any state.
    fn all_records(&self) -> Vec<&PatientRecord>;

    /// Pairs a steward has rejected; the scan skips them.
    fn is_excluded(&self, _a: &Phn, _b: &Phn) -> bool {
        false
    }
}

impl RegistryView for [PatientRecord] {
    fn all_records(&self) -> Vec<&PatientRecord> {
        self.iter().collect()
    }
}

impl RegistryView for Vec<PatientRecord> {
    fn all_records(&self) -> Vec<&PatientRecord> {
        self.iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BlockingKey {
    Nic(String),
    SoundexYear(String, i32),
    Dob(NaiveDate),
}

pub fn blocking_keys(record: &PatientRecord) -> Vec<BlockingKey> {
    let mut keys = Vec::with_capacity(3);
    if let Some(nic) = record.identifier(&IdentifierKind::Nic) {
        keys.push(BlockingKey::Nic(nic.value.clone()));
    }
    if let Some(code) = soundex(&record.profile.family_name) {
        keys.push(BlockingKey::SoundexYear(code, record.profile.date_of_birth.year()));
    }
    keys.push(BlockingKey::Dob(record.profile.date_of_birth));
    keys
}

pub fn shares_blocking_key(a: &PatientRecord, b: &PatientRecord) -> bool {
    let ka = blocking_keys(a);
    blocking_keys(b).iter().any(|k| ka.contains(k))
}

/// Inverted index from blocking key to the non-retired records carrying it.
pub struct BlockingIndex<'a> {
    blocks: BTreeMap<BlockingKey, Vec<&'a PatientRecord>>,
}

impl<'a> BlockingIndex<'a> {
    pub fn build(records: impl IntoIterator<Item = &'a PatientRecord>) -> Self {
        let mut blocks: BTreeMap<BlockingKey, Vec<&'a PatientRecord>> = BTreeMap::new();
        for r in records {
            if r.status.is_retired() {
                continue;
            }
            for k in blocking_keys(r) {
                blocks.entry(k).or_default().push(r);
            }
        }
        BlockingIndex { blocks }
    }

    pub fn candidates(&self, record: &PatientRecord) -> Vec<&'a PatientRecord> {
        let mut seen = BTreeMap::new();
        for k in blocking_keys(record) {
            for r in self.blocks.get(&k).into_iter().flatten() {
                if r.phn != record.phn {
                    seen.insert(r.phn.clone(), *r);
                }
            }
        }
        seen.into_values().collect()
    }

    /// Unordered candidate pairs, lower PHN first.
    pub fn pairs(&self) -> BTreeSet<(Phn, Phn)> {
        let mut out = BTreeSet::new();
        for members in self.blocks.values() {
            for (i, a) in members.iter().enumerate() {
                for b in &members[i + 1..] {
                    if a.phn == b.phn {
                        continue;
                    }
                    let pair = if a.phn < b.phn {
                        (a.phn.clone(), b.phn.clone())
                    } else {
                        (b.phn.clone(), a.phn.clone())
                    };
                    out.insert(pair);
                }
            }
        }
        out
    }
}

/// Records sharing at least one blocking key with `record`, ordered by PHN.
pub fn find_candidates<'a, V: RegistryView + ?Sized>(view: &'a V, record: &PatientRecord) -> Vec<&'a PatientRecord> {
    BlockingIndex::build(view.all_records()).candidates(record)
}

/// Scores each blocked pair once and returns the non-NON_MATCH results,
/// highest total first, ties by PHN pair ascending.
pub fn dedup_scan<V: RegistryView + ?Sized>(view: &V, config: &LinkageConfig) -> Vec<MatchResult> {
    let records = view.all_records();
    let by_phn: BTreeMap<&Phn, &PatientRecord> = records.iter().map(|r| (&r.phn, *r)).collect();
    let index = BlockingIndex::build(records.iter().copied());
    let mut results: Vec<MatchResult> = index
        .pairs()
        .into_iter()
        .filter(|(a, b)| !view.is_excluded(a, b))
        .filter_map(|(a, b)| {
            score_pair(&config.comparators, by_phn[&a], by_phn[&b], &config.thresholds).ok()
        })
        .filter(|r| r.decision != Decision::NonMatch)
        .collect();
    sort_results(&mut results);
    results
}

pub(crate) fn sort_results(results: &mut [MatchResult]) {
    results.sort_by(|x, y| {
        y.total
            .total_cmp(&x.total)
            .then_with(|| x.ordered_pair().cmp(&y.ordered_pair()))
    });
}
