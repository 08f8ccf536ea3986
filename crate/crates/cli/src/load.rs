//! Turning corpus records into ADT^A04 registrations and reading the ACKs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use mpi_core::hl7::{emit_er7, parse_er7, pid_segment, Delimiters, Field, Message, Segment, HL7_VERSION};
use mpi_core::identity::Phn;
use mpi_core::merge::{ReviewItem, ReviewState};
use mpi_core::matching::Decision;

use crate::corpus::CorpusRecord;
use crate::eval::{Label, Prediction};

pub const SENDING_APPLICATION: &str = "MPILOAD";
pub const SENDING_FACILITY: &str = "SYNTH";

/// An ER7 ADT^A04 for `record`. The placeholder id is the control id, so
/// loading the same corpus twice is a replay, not a second registration.
pub fn a04(record: &CorpusRecord, at: DateTime<Utc>) -> String {
    let d = Delimiters::default();
    let ts = at.format("%Y%m%d%H%M%S").to_string();
    let msh = Segment::msh(
        &d,
        vec![
            Field::text(SENDING_APPLICATION),
            Field::text(SENDING_FACILITY),
            Field::text("MPI"),
            Field::text("MOH"),
            Field::text(ts.clone()),
            Field::empty(),
            Field::from_components(&["ADT", "A04"]),
            Field::text(record.id.clone()),
            Field::text("P"),
            Field::text(HL7_VERSION),
        ],
    );
    let evn = Segment::new("EVN", vec![Field::text("A04"), Field::text(ts)]);
    let pid = pid_segment(1, &record.profile, &record.identifiers);
    emit_er7(&Message::new(d, vec![msh, evn, pid]).expect("A04 is well formed"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LoadStatus {
    Registered(Phn),
    /// Refused because an identifier already belongs to `owner`.
    Duplicate { owner: Phn },
    Rejected(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadRow {
    pub id: String,
    pub status: LoadStatus,
}

/// Reads MSA-1 and MSA-3 of an intake reply.
pub fn interpret_ack(er7: &str) -> Result<LoadStatus, String> {
    let m = parse_er7(er7).map_err(|e| e.to_string())?;
    let msa = m.segment("MSA").ok_or("reply has no MSA segment")?;
    let reason = msa.field(3).map(Field::value).unwrap_or("").to_string();
    let phn_at_end = |text: &str| text.rsplit(' ').next().and_then(|t| Phn::parse(t).ok());
    match msa.get(1, 1) {
        "AA" => reason
            .strip_prefix("PHN ")
            .and_then(|r| Phn::parse(r.split(' ').next().unwrap_or("")).ok())
            .map(LoadStatus::Registered)
            .ok_or_else(|| format!("AA without a PHN: {reason:?}")),
        "AE" if reason.starts_with("DUPLICATE_IDENTIFIER") => phn_at_end(&reason)
            .map(|owner| LoadStatus::Duplicate { owner })
            .ok_or_else(|| format!("duplicate without an owner: {reason:?}")),
        _ => Ok(LoadStatus::Rejected(reason)),
    }
}

/// `id<TAB>REGISTERED|DUPLICATE|REJECTED<TAB>phn-or-reason`
pub fn ids_text(rows: &[LoadRow]) -> String {
    let mut out = String::new();
    for r in rows {
        let _ = match &r.status {
            LoadStatus::Registered(p) => writeln!(out, "{}\tREGISTERED\t{p}", r.id),
            LoadStatus::Duplicate { owner } => writeln!(out, "{}\tDUPLICATE\t{owner}", r.id),
            LoadStatus::Rejected(why) => writeln!(out, "{}\tREJECTED\t{}", r.id, why.replace(['\t', '\n'], " ")),
        };
    }
    out
}

pub fn parse_ids(text: &str) -> Result<Vec<LoadRow>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let bad = |why: &str| format!("ids line {}: {why}", n + 1);
            let cols: Vec<&str> = l.splitn(3, '\t').collect();
            let [id, status, rest] = cols[..] else {
                return Err(bad("expected three columns"));
            };
            let phn = || Phn::parse(rest).map_err(|e| bad(&e.to_string()));
            let status = match status {
                "REGISTERED" => LoadStatus::Registered(phn()?),
                "DUPLICATE" => LoadStatus::Duplicate { owner: phn()? },
                "REJECTED" => LoadStatus::Rejected(rest.to_string()),
                other => return Err(bad(&format!("unknown status {other:?}"))),
            };
            Ok(LoadRow { id: id.to_string(), status })
        })
        .collect()
}

fn label(item: &ReviewItem) -> Label {
    match item.state {
        ReviewState::Approved => Label::Approved,
        ReviewState::Rejected => Label::Rejected,
        ReviewState::Pending => match item.result.decision {
            Decision::Match => Label::Match,
            _ => Label::Possible,
        },
    }
}

/// Review items and intake duplicates, in placeholder ids. Items naming a
/// PHN the load did not create are skipped.
pub fn predictions(rows: &[LoadRow], items: &[ReviewItem]) -> Vec<Prediction> {
    let placeholder: BTreeMap<&Phn, &str> = rows
        .iter()
        .filter_map(|r| match &r.status {
            LoadStatus::Registered(p) => Some((p, r.id.as_str())),
            _ => None,
        })
        .collect();
    let mut out = Vec::new();
    for r in rows {
        if let LoadStatus::Duplicate { owner } = &r.status {
            if let Some(&other) = placeholder.get(owner) {
                out.push(Prediction {
                    left: other.to_string(),
                    right: r.id.clone(),
                    label: Label::DuplicateIdentifier,
                    total: None,
                });
            }
        }
    }
    for item in items {
        let (a, b) = item.result.ordered_pair();
        if let (Some(&a), Some(&b)) = (placeholder.get(&a), placeholder.get(&b)) {
            out.push(Prediction {
                left: a.to_string(),
                right: b.to_string(),
                label: label(item),
                total: Some(item.result.total),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorruptionSpec};
    use chrono::TimeZone;
    use mpi_core::hl7::extract_patient;

    #[test]
    fn a04_carries_the_profile() {
        let c = generate_corpus(30, &CorruptionSpec::new(0.0, 77)).unwrap();
        let at = Utc.with_ymd_and_hms(2024, 6, 1, 8, 0, 0).unwrap();
        for r in &c.records {
            let m = parse_er7(&a04(r, at)).unwrap();
            assert_eq!(m.control_id(), r.id);
            let (profile, ids) = extract_patient(&m).unwrap();
            assert_eq!(profile, r.profile);
            assert_eq!(ids.into_iter().collect::<Vec<_>>(), r.identifiers);
        }
    }

    #[test]
    fn acks_interpreted() {
        let ack = |code: &str, reason: &str| {
            format!("MSH|^~\\&|MPI|MOH|A|B|20240601080000||ACK^A04|C1|P|2.5\rMSA|{code}|P1|{reason}\r")
        };
        assert_eq!(
            interpret_ack(&ack("AA", "PHN 00000000018")).unwrap(),
            LoadStatus::Registered(Phn::parse("00000000018").unwrap())
        );
        assert_eq!(
            interpret_ack(&ack("AE", "DUPLICATE_IDENTIFIER: NIC 852341234V already belongs to 00000000026")).unwrap(),
            LoadStatus::Duplicate {
                owner: Phn::parse("00000000026").unwrap()
            }
        );
        assert!(matches!(interpret_ack(&ack("AE", "VALIDATION_FAILED: x")).unwrap(), LoadStatus::Rejected(_)));
        assert!(interpret_ack("garbage").is_err());
    }

    #[test]
    fn ids_round_trip() {
        let rows = vec![
            LoadRow {
                id: "P000001".into(),
                status: LoadStatus::Registered(Phn::parse("00000000018").unwrap()),
            },
            LoadRow {
                id: "P000002".into(),
                status: LoadStatus::Duplicate {
                    owner: Phn::parse("00000000018").unwrap(),
                },
            },
            LoadRow {
                id: "P000003".into(),
                status: LoadStatus::Rejected("VALIDATION_FAILED: a\tb".into()),
            },
        ];
        let text = ids_text(&rows);
        let back = parse_ids(&text).unwrap();
        assert_eq!(back[..2], rows[..2]);
        assert_eq!(back[2].status, LoadStatus::Rejected("VALIDATION_FAILED: a b".into()));
        let p = predictions(&back, &[]);
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].left.as_str(), p[0].right.as_str()), ("P000001", "P000002"));
    }
}
