//! Synthetic registration streams with known duplicates.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use chrono::{Datelike, NaiveDate};
use mpi_core::identity::{normalize_identifier, DemographicProfile, Identifier, IdentifierKind, Sex};
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::names::pools;

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("INVALID_SPEC: {0}")]
    InvalidSpec(String),
    #[error("MALFORMED_INPUT: line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// How duplicates are made. Each corruption is applied independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub duplicate_rate: f64,
    pub name_typo: f64,
    pub dob_swap: f64,
    pub missing_nic: f64,
    pub address_variation: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(duplicate_rate: f64, seed: u64) -> CorruptionSpec {
        CorruptionSpec {
            duplicate_rate,
            name_typo: 0.3,
            dob_swap: 0.1,
            missing_nic: 0.5,
            address_variation: 0.3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        for (name, p) in [
            ("duplicate_rate", self.duplicate_rate),
            ("name_typo", self.name_typo),
            ("dob_swap", self.dob_swap),
            ("missing_nic", self.missing_nic),
            ("address_variation", self.address_variation),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(CorpusError::InvalidSpec(format!("{name} must be in [0,1], got {p}")));
            }
        }
        Ok(())
    }
}

/// One registration as a source system would send it. `id` is a
/// placeholder until the index assigns a PHN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub profile: DemographicProfile,
    #[serde(default)]
    pub identifiers: Vec<Identifier>,
}

impl CorpusRecord {
    pub fn nic(&self) -> Option<&Identifier> {
        self.identifiers.iter().find(|i| i.kind == IdentifierKind::Nic)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub records: Vec<CorpusRecord>,
    /// Duplicate pairs, lower id first, sorted.
    pub truth: Vec<(String, String)>,
}

impl Corpus {
    pub fn records_text(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    pub fn truth_text(&self) -> String {
        truth_text(&self.truth)
    }
}

pub fn truth_text(pairs: &[(String, String)]) -> String {
    let mut out = String::new();
    for (a, b) in pairs {
        let _ = writeln!(out, "{a}\t{b}");
    }
    out
}

pub fn parse_records(text: &str) -> Result<Vec<CorpusRecord>, CorpusError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| CorpusError::Malformed {
                line: n + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

const OLDEST: i32 = 1930;
const YOUNGEST: i32 = 2023;
/// Age at which a NIC is issued, reckoned against 2024.
const NIC_BORN_BY: i32 = 2008;
const NIC_HOLDERS: f64 = 0.8;
const SECOND_GIVEN: f64 = 0.3;
const CONTACT: f64 = 0.7;

fn nic_for(rng: &mut ChaCha8Rng, dob: NaiveDate, sex: Sex) -> String {
    // A NIC counts days as if every year were a leap year.
    let leap = NaiveDate::from_ymd_opt(2000, dob.month(), dob.day()).expect("valid in a leap year");
    let mut day = leap.ordinal();
    if sex == Sex::F {
        day += 500;
    }
    if dob.year() < 2000 {
        format!("{:02}{:03}{:04}V", dob.year() % 100, day, rng.gen_range(0..10_000))
    } else {
        format!("{:04}{:03}{:05}", dob.year(), day, rng.gen_range(0..100_000))
    }
}

fn base_record(rng: &mut ChaCha8Rng, nics: &mut BTreeSet<String>) -> CorpusRecord {
    let p = pools();
    let weights = WeightedIndex::new(p.communities.iter().map(|c| c.weight)).expect("positive weights");
    let c = &p.communities[weights.sample(rng)];
    let sex = if rng.gen_bool(0.5) { Sex::M } else { Sex::F };
    let given_pool = if sex == Sex::M { &c.male } else { &c.female };
    let mut given_names = vec![given_pool.choose(rng).unwrap().to_string()];
    if rng.gen_bool(SECOND_GIVEN) {
        let second = given_pool.choose(rng).unwrap().to_string();
        if second != given_names[0] {
            given_names.push(second);
        }
    }
    let start = NaiveDate::from_ymd_opt(OLDEST, 1, 1).unwrap();
    let span = (NaiveDate::from_ymd_opt(YOUNGEST, 12, 31).unwrap() - start).num_days();
    let dob = start + chrono::Duration::days(rng.gen_range(0..=span));
    let address_lines = vec![
        format!("{} {}", rng.gen_range(1..400), p.streets.choose(rng).unwrap()),
        p.towns.choose(rng).unwrap().to_string(),
    ];
    let contact_number = rng
        .gen_bool(CONTACT)
        .then(|| format!("07{:08}", rng.gen_range(0..100_000_000u32)));
    let mut identifiers = Vec::new();
    if dob.year() <= NIC_BORN_BY && rng.gen_bool(NIC_HOLDERS) {
        let nic = loop {
            let n = nic_for(rng, dob, sex);
            if nics.insert(n.clone()) {
                break n;
            }
        };
        identifiers.push(normalize_identifier(IdentifierKind::Nic, &nic).expect("generated NIC is well formed"));
    }
    CorpusRecord {
        id: String::new(),
        profile: DemographicProfile {
            family_name: c.family.choose(rng).unwrap().to_string(),
            given_names,
            date_of_birth: dob,
            sex,
            address_lines,
            contact_number,
            anonymity_requested: false,
        },
        identifiers,
    }
}

/// One edit: substitute, insert, delete or transpose a letter.
fn typo(rng: &mut ChaCha8Rng, name: &str) -> String {
    let mut chars: Vec<char> = name.chars().collect();
    let letter = (b'a' + rng.gen_range(0..26u8)) as char;
    // The first letter is left alone; clerks rarely get it wrong.
    let pos = rng.gen_range(1..chars.len().max(2));
    match rng.gen_range(0..4) {
        0 if pos < chars.len() => {
            if chars[pos] == letter {
                chars[pos] = if letter == 'a' { 'e' } else { 'a' };
            } else {
                chars[pos] = letter;
            }
        }
        1 => chars.insert(pos.min(chars.len()), letter),
        2 if chars.len() > 2 && pos < chars.len() => {
            chars.remove(pos);
        }
        _ if pos + 1 < chars.len() && chars[pos] != chars[pos + 1] => chars.swap(pos, pos + 1),
        _ => chars.insert(pos.min(chars.len()), letter),
    }
    chars.into_iter().collect()
}

fn vary_address(rng: &mut ChaCha8Rng, lines: &[String]) -> Vec<String> {
    let mut lines = lines.to_vec();
    let Some(first) = lines.first_mut() else {
        return lines;
    };
    match rng.gen_range(0..3) {
        0 => {
            for (long, short) in [("Road", "Rd"), ("Street", "St"), ("Mawatha", "Mw"), ("Lane", "Ln"), ("Avenue", "Ave")] {
                if first.contains(long) {
                    *first = first.replace(long, short);
                    return lines;
                }
            }
            first.push_str(" North");
        }
        1 => {
            let rest = first.split_once(' ').map_or("", |(_, r)| r).to_string();
            *first = format!("{} {rest}", rng.gen_range(1..400));
        }
        _ => {
            if lines.len() > 1 {
                lines.pop();
            } else {
                lines.push("Sri Lanka".into());
            }
        }
    }
    lines
}

fn corrupt(rng: &mut ChaCha8Rng, spec: &CorruptionSpec, base: &CorpusRecord) -> CorpusRecord {
    let mut dup = base.clone();
    let p = &mut dup.profile;
    if rng.gen_bool(spec.name_typo) {
        if rng.gen_bool(0.5) || p.given_names.is_empty() {
            p.family_name = typo(rng, &p.family_name);
        } else {
            p.given_names[0] = typo(rng, &p.given_names[0]);
        }
    }
    if rng.gen_bool(spec.dob_swap) {
        let d = p.date_of_birth;
        if let Some(swapped) = NaiveDate::from_ymd_opt(d.year(), d.day(), d.month()) {
            p.date_of_birth = swapped;
        }
    }
    if rng.gen_bool(spec.address_variation) {
        p.address_lines = vary_address(rng, &p.address_lines);
    }
    if rng.gen_bool(spec.missing_nic) {
        dup.identifiers.retain(|i| i.kind != IdentifierKind::Nic);
    }
    dup
}

/// `n` distinct people plus ⌈n·duplicate_rate⌉ corrupted re-registrations,
/// shuffled together. Byte-identical for the same `n` and spec.
pub fn generate_corpus(n: usize, spec: &CorruptionSpec) -> Result<Corpus, CorpusError> {
    if n == 0 {
        return Err(CorpusError::InvalidSpec("n must be at least 1".into()));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut nics = BTreeSet::new();
    let bases: Vec<CorpusRecord> = (0..n).map(|_| base_record(&mut rng, &mut nics)).collect();
    let dup_count = (n as f64 * spec.duplicate_rate).ceil() as usize;
    let mut all: Vec<(usize, CorpusRecord)> = bases.iter().cloned().enumerate().collect();
    for _ in 0..dup_count {
        let of = rng.gen_range(0..n);
        all.push((of, corrupt(&mut rng, spec, &bases[of])));
    }
    all.shuffle(&mut rng);

    let mut truth = Vec::new();
    let mut seen: Vec<Vec<String>> = vec![Vec::new(); n];
    let mut records = Vec::with_capacity(all.len());
    for (i, (person, mut record)) in all.into_iter().enumerate() {
        record.id = format!("P{:06}", i + 1);
        for earlier in &seen[person] {
            truth.push((earlier.clone(), record.id.clone()));
        }
        seen[person].push(record.id.clone());
        records.push(record);
    }
    truth.sort();
    Ok(Corpus { records, truth })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_duplicates_no_truth() {
        let c = generate_corpus(10, &CorruptionSpec::new(0.0, 1)).unwrap();
        assert_eq!(c.records.len(), 10);
        assert!(c.truth.is_empty());
        assert_eq!(c.truth_text(), "");
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = CorruptionSpec::new(0.1, 42);
        let a = generate_corpus(1000, &spec).unwrap();
        let b = generate_corpus(1000, &spec).unwrap();
        assert_eq!(a.records_text(), b.records_text());
        assert_eq!(a.truth_text(), b.truth_text());
        assert_eq!(a.records.len(), 1100);
        let other = generate_corpus(1000, &CorruptionSpec::new(0.1, 43)).unwrap();
        assert_ne!(a.records_text(), other.records_text());
    }

    #[test]
    fn duplicate_count_rounds_up() {
        let c = generate_corpus(7, &CorruptionSpec::new(0.1, 3)).unwrap();
        assert_eq!(c.records.len(), 8);
        assert_eq!(c.truth.len(), 1);
    }

    #[test]
    fn missing_nic_corruption_drops_the_nic() {
        let mut spec = CorruptionSpec::new(1.0, 9);
        spec.missing_nic = 1.0;
        let c = generate_corpus(200, &spec).unwrap();
        let by_id: std::collections::BTreeMap<_, _> = c.records.iter().map(|r| (r.id.as_str(), r)).collect();
        let mut checked = 0;
        for (a, b) in &c.truth {
            let (a, b) = (by_id[a.as_str()], by_id[b.as_str()]);
            // Exactly one of the pair is the original unless both are copies.
            if a.nic().is_some() || b.nic().is_some() {
                assert!(a.nic().is_none() || b.nic().is_none(), "{a:?} {b:?}");
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn corruption_off_copies_exactly() {
        let mut spec = CorruptionSpec::new(0.5, 5);
        spec.name_typo = 0.0;
        spec.dob_swap = 0.0;
        spec.missing_nic = 0.0;
        spec.address_variation = 0.0;
        let c = generate_corpus(50, &spec).unwrap();
        let by_id: std::collections::BTreeMap<_, _> = c.records.iter().map(|r| (r.id.as_str(), r)).collect();
        for (a, b) in &c.truth {
            assert_eq!(by_id[a.as_str()].profile, by_id[b.as_str()].profile);
        }
    }

    #[test]
    fn generated_nics_are_unique_and_valid() {
        let c = generate_corpus(2000, &CorruptionSpec::new(0.0, 8)).unwrap();
        let nics: Vec<_> = c.records.iter().filter_map(|r| r.nic()).map(|i| i.value.clone()).collect();
        let distinct: BTreeSet<_> = nics.iter().collect();
        assert_eq!(nics.len(), distinct.len());
        assert!(nics.len() > 1000);
    }

    #[test]
    fn typo_is_one_edit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for name in ["Perera", "Silva", "Ng", "Mohamed"] {
            for _ in 0..200 {
                let t = typo(&mut rng, name);
                assert_ne!(t, name);
                assert!(strsim::damerau_levenshtein(&t, name) == 1, "{name} -> {t}");
                assert_eq!(t.chars().next(), name.chars().next());
            }
        }
    }

    #[test]
    fn spec_probabilities_checked() {
        let mut spec = CorruptionSpec::new(0.1, 1);
        spec.dob_swap = 1.5;
        assert!(matches!(generate_corpus(5, &spec), Err(CorpusError::InvalidSpec(_))));
        assert!(generate_corpus(0, &CorruptionSpec::new(0.1, 1)).is_err());
    }

    #[test]
    fn records_round_trip_through_text() {
        let c = generate_corpus(20, &CorruptionSpec::new(0.2, 2)).unwrap();
        assert_eq!(parse_records(&c.records_text()).unwrap(), c.records);
        assert!(matches!(parse_records("{\n"), Err(CorpusError::Malformed { line: 1, .. })));
    }
}
