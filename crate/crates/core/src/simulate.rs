//! Seeded random workloads of register/update/merge/unmerge commands, with
//! the registry-wide checks run after every step.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, NaiveDate, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::identity::{normalize_identifier, DemographicProfile, Identifier, IdentifierKind, Phn, Sex};
use crate::matching::LinkageConfig;
use crate::merge::{FieldSource, MergeSource};
use crate::registry::{Command, PatientChanges, Registry, SearchRequest};
use crate::identity::ProfileField;

const FAMILIES: [&str; 6] = ["Perera", "Silva", "Fernando", "Bandara", "Sivakumar", "Mohamed"];
const GIVEN: [&str; 6] = ["Kamal", "Nimal", "Fathima", "Priya", "Ruwan", "Dilani"];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimulationReport {
    pub seed: u64,
    pub attempted: usize,
    pub accepted: usize,
    pub merges: usize,
    pub unmerges: usize,
    pub longest_chain: usize,
    pub retired_searched: usize,
    /// Human-readable descriptions of every property violation seen.
    pub violations: Vec<String>,
    /// Accepted commands in order, as replayed.
    pub log: Vec<(String, DateTime<Utc>, Command)>,
    pub final_snapshot: String,
}

impl SimulationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn identifier_set(reg: &Registry) -> BTreeSet<(IdentifierKind, String)> {
    reg.records()
        .values()
        .flat_map(|r| r.identifiers.iter().map(|i| (i.kind.clone(), i.value.clone())))
        .collect()
}

fn random_identifiers(rng: &mut ChaCha8Rng) -> Vec<Identifier> {
    let mut ids = Vec::new();
    if rng.gen_bool(0.6) {
        let nic = format!("{:09}V", rng.gen_range(0..400u32));
        ids.push(normalize_identifier(IdentifierKind::Nic, &nic).expect("valid NIC"));
    }
    if rng.gen_bool(0.3) {
        let email = format!("p{}@Mail.LK", rng.gen_range(0..200u32));
        ids.push(normalize_identifier(IdentifierKind::Email, &email).expect("valid email"));
    }
    if rng.gen_bool(0.2) {
        let ppn = format!("n{:07}", rng.gen_range(0..300u32));
        ids.push(normalize_identifier(IdentifierKind::Passport, &ppn).expect("valid passport"));
    }
    ids
}

fn random_profile(rng: &mut ChaCha8Rng) -> DemographicProfile {
    DemographicProfile {
        family_name: FAMILIES.choose(rng).expect("non-empty").to_string(),
        given_names: vec![GIVEN.choose(rng).expect("non-empty").to_string()],
        date_of_birth: NaiveDate::from_ymd_opt(rng.gen_range(1940..2020), rng.gen_range(1..13), rng.gen_range(1..29))
            .expect("valid date"),
        sex: *[Sex::M, Sex::F, Sex::U].choose(rng).expect("non-empty"),
        address_lines: vec![format!("{} Main Street", rng.gen_range(1..60))],
        contact_number: rng.gen_bool(0.5).then(|| format!("077{:07}", rng.gen_range(0..10_000_000u32))),
        anonymity_requested: rng.gen_bool(0.1),
    }
}

fn pick_phn(rng: &mut ChaCha8Rng, reg: &Registry, active_bias: bool) -> Option<Phn> {
    let all: Vec<&Phn> = reg.records().keys().collect();
    if all.is_empty() {
        return None;
    }
    if active_bias && rng.gen_bool(0.85) {
        let active: Vec<&Phn> = reg
            .records()
            .values()
            .filter(|r| r.status.is_active())
            .map(|r| &r.phn)
            .collect();
        if let Some(p) = active.choose(rng) {
            return Some((*p).clone());
        }
    }
    all.choose(rng).map(|p| (*p).clone())
}

fn random_command(rng: &mut ChaCha8Rng, reg: &Registry) -> Command {
    let roll: f64 = rng.gen();
    if roll < 0.35 || reg.records().len() < 2 {
        return Command::Register {
            profile: random_profile(rng),
            identifiers: random_identifiers(rng),
            guardian_reason: None,
        };
    }
    if roll < 0.55 {
        let phn = pick_phn(rng, reg, true).expect("registry non-empty");
        let mut changes = PatientChanges::default();
        match rng.gen_range(0..3) {
            0 => changes.address_lines = Some(vec![format!("{} Lake Road", rng.gen_range(1..90))]),
            1 => changes.given_names = Some(vec![GIVEN.choose(rng).expect("non-empty").to_string()]),
            _ => {
                let mut ids: Vec<Identifier> = reg
                    .record(&phn)
                    .map(|r| r.identifiers.iter().cloned().collect())
                    .unwrap_or_default();
                ids.extend(random_identifiers(rng));
                changes.identifiers = Some(ids);
            }
        }
        let expected_version = if rng.gen_bool(0.8) {
            reg.record(&phn).map(|r| r.version)
        } else {
            Some(rng.gen_range(1..4))
        };
        return Command::Update {
            phn,
            changes,
            expected_version,
        };
    }
    if roll < 0.80 {
        let survivor = pick_phn(rng, reg, true).expect("registry non-empty");
        let retired = pick_phn(rng, reg, true).expect("registry non-empty");
        let mut field_overrides = BTreeMap::new();
        if rng.gen_bool(0.3) {
            field_overrides.insert(*ProfileField::ALL.choose(rng).expect("non-empty"), FieldSource::Retired);
        }
        return Command::Merge {
            survivor,
            retired,
            source: *[MergeSource::Steward, MergeSource::Hl7A40, MergeSource::AutoMatch]
                .choose(rng)
                .expect("non-empty"),
            field_overrides,
        };
    }
    if roll < 0.95 {
        let ids: Vec<String> = reg.lineage().merges().map(|m| m.id.clone()).collect();
        // Favour recent merges: those are the reversible ones.
        let merge_id = match ids.len() {
            0 => "MG00000001".to_string(),
            n if rng.gen_bool(0.7) => ids[n - 1 - rng.gen_range(0..n.min(3))].clone(),
            _ => ids.choose(rng).expect("non-empty").clone(),
        };
        return Command::Unmerge { merge_id };
    }
    let phn = pick_phn(rng, reg, true).expect("registry non-empty");
    let dob = reg.record(&phn).map(|r| r.profile.date_of_birth).expect("picked from registry");
    Command::MarkDeceased {
        phn,
        deceased_on: dob.max(NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date")),
    }
}

/// Runs `ops` random commands from `seed`, checking after each accepted one
/// that registry invariants hold, that merges and unmerges conserve the set
/// of identifier values, and at the end that every retired PHN searches to
/// its survivor and that replaying the accepted log reproduces the snapshot.
pub fn simulate(seed: u64, ops: usize) -> SimulationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reg = Registry::new(LinkageConfig::default());
    let start = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).single().expect("valid start");
    let mut report = SimulationReport {
        seed,
        ..SimulationReport::default()
    };
    for step in 0..ops {
        let at = start + Duration::minutes(step as i64);
        let command = random_command(&mut rng, &reg);
        let actor = if matches!(command, Command::Merge { .. } | Command::Unmerge { .. }) {
            "steward"
        } else {
            "hims"
        };
        let is_merge = matches!(command, Command::Merge { .. });
        let is_unmerge = matches!(command, Command::Unmerge { .. });
        let before_ids = (is_merge || is_unmerge).then(|| identifier_set(&reg));
        let before = reg.clone();
        report.attempted += 1;
        match reg.apply(actor, at, command.clone()) {
            Ok(_) => {
                report.accepted += 1;
                report.merges += usize::from(is_merge);
                report.unmerges += usize::from(is_unmerge);
                report.log.push((actor.to_string(), at, command));
                if let Some(before) = before_ids {
                    let after = identifier_set(&reg);
                    if before != after {
                        report.violations.push(format!(
                            "step {step}: identifier set changed by merge/unmerge ({} -> {})",
                            before.len(),
                            after.len()
                        ));
                    }
                }
                if let Err(e) = reg.check_invariants() {
                    report.violations.push(format!("step {step}: {e}"));
                }
            }
            Err(_) => {
                if !reg.same_state(&before) {
                    report.violations.push(format!("step {step}: rejected command changed state"));
                }
            }
        }
    }

    let merges_total = reg.lineage().merges().count();
    for record in reg.records().values() {
        match reg.resolve(&record.phn) {
            Ok((_, chain)) => {
                report.longest_chain = report.longest_chain.max(chain.len());
                if chain.len() > merges_total {
                    report.violations.push(format!("{}: chain longer than merge count", record.phn));
                }
            }
            Err(e) => report.violations.push(format!("{}: resolve failed: {e}", record.phn)),
        }
        if record.status.is_retired() {
            report.retired_searched += 1;
            let terminal = reg.resolve(&record.phn).map(|(r, _)| r.phn.clone()).ok();
            let hits = reg.search(
                &SearchRequest {
                    criteria: vec![(IdentifierKind::Phn, record.phn.to_string())],
                    fuzzy_name: None,
                },
                false,
            );
            match hits {
                Ok(h) if h.len() == 1 && Some(&h[0].record.phn) == terminal.as_ref() && h[0].via_merge => {}
                other => report.violations.push(format!(
                    "retired {} search did not reach survivor: {:?}",
                    record.phn,
                    other.map(|h| h.iter().map(|x| x.record.phn.to_string()).collect::<Vec<_>>())
                )),
            }
        }
    }

    report.final_snapshot = reg.snapshot();
    let mut replayed = Registry::new(LinkageConfig::default());
    for (actor, at, command) in &report.log {
        if let Err(e) = replayed.apply(actor, *at, command.clone()) {
            report.violations.push(format!("replay rejected an accepted command: {e}"));
        }
    }
    if replayed.snapshot() != report.final_snapshot {
        report.violations.push("replayed snapshot differs".into());
    }
    match Registry::from_snapshot(&report.final_snapshot, LinkageConfig::default()) {
        Ok(loaded) if loaded.snapshot() == report.final_snapshot => {}
        _ => report.violations.push("snapshot reload differs".into()),
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_run_is_clean_and_deterministic() {
        let a = simulate(3, 120);
        assert!(a.ok(), "{:?}", a.violations);
        assert!(a.accepted > 40);
        let b = simulate(3, 120);
        assert_eq!(a.final_snapshot, b.final_snapshot);
    }
}
