//! The message catalog: ADT^A04/A08/A40, QBP^Q22, RSP^K22 and ACK.

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};

use super::message::{Delimiters, Field, Message, MessageKind, Repetition, Segment};
use super::patient::{identifier_for_type_code, pid_segment, type_code_for};
use super::Hl7Error;
use crate::identity::{DemographicProfile, Identifier, IdentifierKind, PatientRecord, Phn};

pub const HL7_VERSION: &str = "2.5";

const NAME_KEY_QUERY_CODE: &str = "NK";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AckCode {
    AA,
    AE,
    AR,
}

impl AckCode {
    pub fn as_str(self) -> &'static str {
        match self {
            AckCode::AA => "AA",
            AckCode::AE => "AE",
            AckCode::AR => "AR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageHeader {
    pub sending_application: String,
    pub sending_facility: String,
    pub receiving_application: String,
    pub receiving_facility: String,
    pub timestamp: DateTime<Utc>,
    pub control_id: String,
}

impl MessageHeader {
    /// Header for a message sent by the index itself.
    pub fn from_mpi(receiving_application: &str, receiving_facility: &str, timestamp: DateTime<Utc>, control_id: &str) -> Self {
        MessageHeader {
            sending_application: "MPI".into(),
            sending_facility: "MOH".into(),
            receiving_application: receiving_application.into(),
            receiving_facility: receiving_facility.into(),
            timestamp,
            control_id: control_id.into(),
        }
    }
}

fn hl7_timestamp(at: DateTime<Utc>) -> String {
    at.format("%Y%m%d%H%M%S").to_string()
}

fn msh(d: &Delimiters, header: &MessageHeader, kind: &MessageKind, trigger_override: Option<&str>, processing_id: &str) -> Segment {
    let (code, trigger) = kind.msh9();
    let trigger = trigger_override.unwrap_or(trigger);
    Segment::msh(
        d,
        vec![
            Field::text(header.sending_application.clone()),
            Field::text(header.sending_facility.clone()),
            Field::text(header.receiving_application.clone()),
            Field::text(header.receiving_facility.clone()),
            Field::text(hl7_timestamp(header.timestamp)),
            Field::empty(),
            Field::from_components(&[code, trigger]),
            Field::text(header.control_id.clone()),
            Field::text(processing_id),
            Field::text(HL7_VERSION),
        ],
    )
}

/// ADT^A04 (register), ADT^A08 (update) or ADT^A40 (merge). `retired` must be
/// present exactly for A40; `record` is then the survivor.
pub fn build_adt(
    kind: MessageKind,
    record: &PatientRecord,
    retired: Option<&Phn>,
    header: &MessageHeader,
) -> Result<Message, Hl7Error> {
    let trigger = match kind {
        MessageKind::AdtA04 | MessageKind::AdtA08 | MessageKind::AdtA40 => kind.msh9().1,
        other => return Err(Hl7Error::UnsupportedMessageType(other.to_string())),
    };
    match (&kind, retired) {
        (MessageKind::AdtA40, None) => return Err(Hl7Error::MissingRetiredPhn),
        (MessageKind::AdtA04 | MessageKind::AdtA08, Some(_)) => {
            return Err(Hl7Error::UnexpectedRetiredPhn)
        }
        _ => {}
    }
    let d = Delimiters::default();
    let mut segments = vec![
        msh(&d, header, &kind, None, "P"),
        Segment::new(
            "EVN",
            vec![Field::text(trigger), Field::text(hl7_timestamp(header.timestamp))],
        ),
        pid_segment(1, &record.profile, &record.identifiers),
    ];
    if record.profile.anonymity_requested {
        let mut pd1 = Segment::new("PD1", vec![]);
        pd1.set(12, Field::text("Y"));
        segments.push(pd1);
    }
    if let Some(retired) = retired {
        segments.push(Segment::new("MRG", vec![Field::text(retired.to_string())]));
    }
    Message::new(d, segments)
}

/// Header for a reply: sender and receiver swapped.
fn reply_header(original: &Message, at: DateTime<Utc>, control_id: String) -> MessageHeader {
    let m = original.msh();
    MessageHeader {
        sending_application: m.get(5, 1).to_string(),
        sending_facility: m.get(6, 1).to_string(),
        receiving_application: m.get(3, 1).to_string(),
        receiving_facility: m.get(4, 1).to_string(),
        timestamp: at,
        control_id,
    }
}

fn processing_id(original: &Message) -> &str {
    match original.msh().get(11, 1) {
        "" => "P",
        p => p,
    }
}

fn msa(code: AckCode, control_id: &str, reason: Option<&str>) -> Segment {
    let mut fields = vec![Field::text(code.as_str()), Field::text(control_id)];
    if let Some(reason) = reason {
        fields.push(Field::text(reason));
    }
    Segment::new("MSA", fields)
}

pub fn build_ack(
    original: &Message,
    code: AckCode,
    reason: Option<&str>,
    at: DateTime<Utc>,
) -> Result<Message, Hl7Error> {
    let control_id = original.control_id();
    if control_id.is_empty() {
        return Err(Hl7Error::MissingControlId);
    }
    let header = reply_header(original, at, format!("{control_id}-ACK"));
    let trigger = original.message_type().1;
    let d = Delimiters::default();
    Message::new(
        d,
        vec![
            msh(&d, &header, &MessageKind::Ack, Some(trigger), processing_id(original)),
            msa(code, control_id, reason),
        ],
    )
}

/// A demographics query: identifier criteria plus an optional fuzzy name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub tag: String,
    pub criteria: Vec<(IdentifierKind, String)>,
    pub fuzzy_name: Option<String>,
}

fn query_code(kind: &IdentifierKind) -> Option<&'static str> {
    match kind {
        IdentifierKind::NameKey => Some(NAME_KEY_QUERY_CODE),
        k => type_code_for(k),
    }
}

pub fn build_qbp(query: &Query, header: &MessageHeader) -> Result<Message, Hl7Error> {
    let mut params = Vec::new();
    for (kind, value) in &query.criteria {
        let code = query_code(kind)
            .ok_or_else(|| Hl7Error::UnknownIdentifierTypeCode(kind.label()))?;
        params.push(Repetition::from_components(&["@PID.3", value.as_str(), code]));
    }
    if let Some(name) = &query.fuzzy_name {
        params.push(Repetition::from_components(&["@PID.5", name.as_str()]));
    }
    let d = Delimiters::default();
    let mut qpd = Segment::new(
        "QPD",
        vec![
            Field::from_components(&["Q22", "Find Candidates", "HL7"]),
            Field::text(query.tag.clone()),
        ],
    );
    if !params.is_empty() {
        qpd.set(3, Field::from_repetitions(params));
    }
    Message::new(
        d,
        vec![
            msh(&d, header, &MessageKind::QbpQ22, None, "P"),
            qpd,
            Segment::new("RCP", vec![Field::text("I")]),
        ],
    )
}

pub fn parse_query(message: &Message) -> Result<Query, Hl7Error> {
    let qpd = message
        .segment("QPD")
        .ok_or_else(|| Hl7Error::MissingSegment("QPD".into()))?;
    let mut query = Query {
        tag: qpd.get(2, 1).to_string(),
        criteria: Vec::new(),
        fuzzy_name: None,
    };
    if let Some(params) = qpd.field(3) {
        for rep in params.repetitions().iter().filter(|r| !r.is_empty()) {
            match rep.component(1) {
                "@PID.3" => {
                    let code = rep.component(3);
                    let kind = if code == NAME_KEY_QUERY_CODE {
                        IdentifierKind::NameKey
                    } else {
                        identifier_for_type_code(code)
                            .ok_or_else(|| Hl7Error::UnknownIdentifierTypeCode(code.to_string()))?
                    };
                    query.criteria.push((kind, rep.component(2).to_string()));
                }
                "@PID.5" => query.fuzzy_name = Some(rep.component(2).to_string()),
                other => {
                    return Err(Hl7Error::InvalidField {
                        field: "QPD-3".into(),
                        reason: format!("unsupported query parameter {other:?}"),
                    })
                }
            }
        }
    }
    Ok(query)
}

/// RSP^K22 answering `original` with one PID per hit.
pub fn build_rsp(
    original: &Message,
    hits: &[(DemographicProfile, BTreeSet<Identifier>)],
    at: DateTime<Utc>,
) -> Result<Message, Hl7Error> {
    let control_id = original.control_id();
    if control_id.is_empty() {
        return Err(Hl7Error::MissingControlId);
    }
    let qpd = original
        .segment("QPD")
        .ok_or_else(|| Hl7Error::MissingSegment("QPD".into()))?;
    let header = reply_header(original, at, format!("{control_id}-RSP"));
    let d = Delimiters::default();
    let status = if hits.is_empty() { "NF" } else { "OK" };
    let mut segments = vec![
        msh(&d, &header, &MessageKind::RspK22, None, processing_id(original)),
        msa(AckCode::AA, control_id, None),
        Segment::new(
            "QAK",
            vec![Field::text(qpd.get(2, 1)), Field::text(status)],
        ),
        qpd.clone(),
    ];
    for (i, (profile, identifiers)) in hits.iter().enumerate() {
        segments.push(pid_segment(i + 1, profile, identifiers));
    }
    Message::new(d, segments)
}
