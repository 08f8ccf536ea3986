//! PID segment mapping between HL7 and the identity model.

use std::collections::BTreeSet;

use chrono::NaiveDate;

use super::message::{Field, Message, Repetition, Segment};
use super::Hl7Error;
use crate::identity::{DemographicProfile, Identifier, IdentifierKind, Sex};

pub type ExtractedPatient = (DemographicProfile, BTreeSet<Identifier>);

/// PID-3 identifier type code table.
const TYPE_CODES: [(&str, IdentifierKind); 6] = [
    ("NI", IdentifierKind::Nic),
    ("PHN", IdentifierKind::Phn),
    ("PPN", IdentifierKind::Passport),
    ("DL", IdentifierKind::DrivingLicense),
    ("EN", IdentifierKind::ElderlyNumber),
    ("EM", IdentifierKind::Email),
];

pub fn identifier_for_type_code(code: &str) -> Option<IdentifierKind> {
    TYPE_CODES
        .iter()
        .find(|(c, _)| *c == code)
        .map(|(_, k)| k.clone())
}

/// Kinds without a code (NAME_KEY, EXTENSION) are not carried in PID-3.
pub fn type_code_for(kind: &IdentifierKind) -> Option<&'static str> {
    TYPE_CODES.iter().find(|(_, k)| k == kind).map(|(c, _)| *c)
}

fn invalid(field: &str, reason: impl Into<String>) -> Hl7Error {
    Hl7Error::InvalidField {
        field: field.into(),
        reason: reason.into(),
    }
}

pub(crate) fn parse_hl7_date(raw: &str, field: &str) -> Result<NaiveDate, Hl7Error> {
    if raw.len() < 8 || !raw.as_bytes()[..8].iter().all(u8::is_ascii_digit) {
        return Err(invalid(field, format!("{raw:?} is not YYYYMMDD")));
    }
    NaiveDate::parse_from_str(&raw[..8], "%Y%m%d")
        .map_err(|_| invalid(field, format!("{raw:?} is not a calendar date")))
}

/// Reads identifiers from a PID-3 (or similar CX) field.
pub(crate) fn read_identifiers(field: Option<&Field>, name: &str) -> Result<BTreeSet<Identifier>, Hl7Error> {
    let mut out = BTreeSet::new();
    let Some(field) = field else {
        return Ok(out);
    };
    for rep in field.repetitions() {
        if rep.is_empty() {
            continue;
        }
        let code = rep.component(5);
        let kind = identifier_for_type_code(code)
            .ok_or_else(|| Hl7Error::UnknownIdentifierTypeCode(code.to_string()))?;
        let authority = Some(rep.component(4)).filter(|a| !a.is_empty());
        let id = Identifier::new(kind, rep.component(1), authority)
            .map_err(|e| invalid(name, e.to_string()))?;
        out.insert(id);
    }
    Ok(out)
}

pub fn extract_patient(message: &Message) -> Result<ExtractedPatient, Hl7Error> {
    let mut pids = message.segments_named("PID");
    let pid = pids.next().ok_or(Hl7Error::MissingPid)?;
    if pids.next().is_some() {
        return Err(Hl7Error::MultiplePid);
    }
    let identifiers = read_identifiers(pid.field(3), "PID-3")?;

    let family_name = pid.get(5, 1).trim().to_string();
    if family_name.is_empty() {
        return Err(invalid("PID-5", "family name is empty"));
    }
    let mut given_names = Vec::new();
    let first = pid.get(5, 2).trim();
    if !first.is_empty() {
        given_names.push(first.to_string());
    }
    given_names.extend(pid.get(5, 3).split_whitespace().map(str::to_string));

    let date_of_birth = parse_hl7_date(pid.get(7, 1), "PID-7")?;
    let sex_code = pid.get(8, 1);
    let sex = Sex::from_code(sex_code).ok_or_else(|| invalid("PID-8", format!("unknown sex {sex_code:?}")))?;

    let address_lines = pid
        .field(11)
        .and_then(|f| f.repetitions().first())
        .map(|rep| {
            rep.0
                .iter()
                .map(|c| c.value().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        })
        .unwrap_or_default();
    let contact_number = Some(pid.get(13, 1).to_string()).filter(|s| !s.is_empty());
    let anonymity_requested = message
        .segment("PD1")
        .is_some_and(|pd1| pd1.get(12, 1) == "Y");

    Ok((
        DemographicProfile {
            family_name,
            given_names,
            date_of_birth,
            sex,
            address_lines,
            contact_number,
            anonymity_requested,
        },
        identifiers,
    ))
}

pub(crate) fn identifier_repetition(id: &Identifier) -> Option<Repetition> {
    let code = type_code_for(&id.kind)?;
    let authority = id.issuing_authority.as_deref().unwrap_or("");
    Some(Repetition::from_components(&[id.value.as_str(), "", "", authority, code]))
}

/// Builds a PID segment.
pub fn pid_segment<'a>(
    set_id: usize,
    profile: &DemographicProfile,
    identifiers: impl IntoIterator<Item = &'a Identifier>,
) -> Segment {
    let reps: Vec<Repetition> = identifiers
        .into_iter()
        .filter_map(identifier_repetition)
        .collect();
    let given_first = profile.given_names.first().map(String::as_str).unwrap_or("");
    let given_rest = profile.given_names.get(1..).unwrap_or(&[]).join(" ");
    let mut pid = Segment::new("PID", vec![Field::text(set_id.to_string())]);
    if !reps.is_empty() {
        pid.set(3, Field::from_repetitions(reps));
    }
    pid.set(
        5,
        Field::from_components(&[profile.family_name.as_str(), given_first, given_rest.as_str()]),
    );
    pid.set(7, Field::text(profile.date_of_birth.format("%Y%m%d").to_string()));
    pid.set(8, Field::text(profile.sex.code()));
    if !profile.address_lines.is_empty() {
        pid.set(11, Field::from_components(&profile.address_lines));
    }
    if let Some(contact) = &profile.contact_number {
        pid.set(13, Field::text(contact.clone()));
    }
    pid
}
