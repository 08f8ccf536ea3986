//! HL7 intake: ADT^A04/A08/A40 become registry commands, QBP^Q22 becomes a
//! search. Every well-formed message gets an HL7 reply; a repeated control
//! id from the same sender gets the stored reply without re-execution.

use std::collections::BTreeMap;

use mpi_core::hl7::{
    build_ack, build_rsp, emit_er7, emit_xml, extract_patient, parse_er7, parse_er7_bytes, parse_query, parse_xml,
    AckCode, Hl7Error, Message, MessageKind,
};
use mpi_core::identity::{IdentifierKind, Phn};
use mpi_core::merge::MergeSource;
use mpi_core::registry::{Command, Outcome, PatientChanges, SearchRequest};

use crate::auth::Scope;
use crate::service::{Service, ServiceError};
use crate::store::Receipt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Er7,
    Xml,
}

impl Encoding {
    /// Picks the encoding from a Content-Type value; anything naming XML is
    /// XML, everything else ER7.
    pub fn from_content_type(value: Option<&str>) -> Encoding {
        match value {
            Some(v) if v.to_ascii_lowercase().contains("xml") => Encoding::Xml,
            _ => Encoding::Er7,
        }
    }

    pub fn content_type(self) -> &'static str {
        match self {
            Encoding::Er7 => "application/hl7-v2",
            Encoding::Xml => "application/hl7-v2+xml",
        }
    }

    fn parse(self, bytes: &[u8]) -> Result<Message, Hl7Error> {
        match self {
            Encoding::Er7 => parse_er7_bytes(bytes),
            Encoding::Xml => parse_xml(bytes),
        }
    }

    fn encode(self, er7: &str) -> Vec<u8> {
        match self {
            Encoding::Er7 => er7.as_bytes().to_vec(),
            Encoding::Xml => {
                let m = parse_er7(er7).expect("stored replies are canonical ER7");
                emit_xml(&m).into_bytes()
            }
        }
    }
}

/// The reply to one intake, plus whether it was replayed from storage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntakeReply {
    pub body: Vec<u8>,
    pub code: AckCode,
    pub replayed: bool,
}

/// Sender-scoped idempotency key: MSH-3, MSH-4 and MSH-10.
pub fn idempotency_key(message: &Message) -> String {
    format!(
        "{}|{}|{}",
        message.sending_application(),
        message.sending_facility(),
        message.control_id()
    )
}

enum Plan {
    Mutate(Command),
    Query(SearchRequest),
}

fn invalid(field: &str, reason: impl Into<String>) -> Hl7Error {
    Hl7Error::InvalidField {
        field: field.into(),
        reason: reason.into(),
    }
}

fn plan(message: &Message) -> Result<Plan, Hl7Error> {
    match message.kind()? {
        MessageKind::AdtA04 => {
            let (profile, identifiers) = extract_patient(message)?;
            Ok(Plan::Mutate(Command::Register {
                profile,
                identifiers: identifiers.into_iter().collect(),
                guardian_reason: None,
            }))
        }
        MessageKind::AdtA08 => {
            let (profile, identifiers) = extract_patient(message)?;
            let phn = identifiers
                .iter()
                .find(|i| i.kind == IdentifierKind::Phn)
                .ok_or_else(|| invalid("PID-3", "A08 must carry the patient's PHN"))?;
            let phn = Phn::parse(&phn.value).map_err(|e| invalid("PID-3", e.to_string()))?;
            let others: Vec<_> = identifiers.into_iter().filter(|i| i.kind != IdentifierKind::Phn).collect();
            Ok(Plan::Mutate(Command::Update {
                phn,
                changes: PatientChanges::full(profile, others),
                expected_version: None,
            }))
        }
        MessageKind::AdtA40 => {
            let (_, identifiers) = extract_patient(message)?;
            let survivor = identifiers
                .iter()
                .find(|i| i.kind == IdentifierKind::Phn)
                .ok_or_else(|| invalid("PID-3", "A40 must carry the survivor PHN"))?;
            let survivor = Phn::parse(&survivor.value).map_err(|e| invalid("PID-3", e.to_string()))?;
            let retired = message
                .segment("MRG")
                .map(|m| m.get(1, 1))
                .filter(|v| !v.is_empty())
                .ok_or(Hl7Error::MissingRetiredPhn)?;
            let retired = Phn::parse(retired).map_err(|e| invalid("MRG-1", e.to_string()))?;
            Ok(Plan::Mutate(Command::Merge {
                survivor,
                retired,
                source: MergeSource::Hl7A40,
                field_overrides: BTreeMap::new(),
            }))
        }
        MessageKind::QbpQ22 => {
            let q = parse_query(message)?;
            Ok(Plan::Query(SearchRequest {
                criteria: q.criteria,
                fuzzy_name: q.fuzzy_name,
            }))
        }
        other => Err(Hl7Error::UnsupportedMessageType(other.to_string())),
    }
}

fn accepted_reason(outcome: &Outcome) -> String {
    match outcome {
        Outcome::Merged { event } => format!("PHN {} MERGED INTO {}", event.retired, event.survivor),
        other => format!("PHN {}", other.subject()),
    }
}

impl Service {
    /// Handles one HL7 message. Only input that cannot be parsed, or lacks a
    /// control id to acknowledge, is refused without an HL7 reply.
    pub fn intake(&self, bearer: Option<&str>, bytes: &[u8], encoding: Encoding) -> Result<IntakeReply, ServiceError> {
        let message = encoding
            .parse(bytes)
            .map_err(|e| ServiceError::Malformed(e.to_string()))?;
        if message.control_id().is_empty() {
            return Err(ServiceError::Malformed(Hl7Error::MissingControlId.to_string()));
        }
        let ack = |code: AckCode, reason: Option<&str>| -> Result<String, ServiceError> {
            let m = build_ack(&message, code, reason, self.clock.now()).map_err(|e| ServiceError::Malformed(e.to_string()))?;
            Ok(emit_er7(&m))
        };
        let reply = |er7: &str, code: AckCode, replayed: bool| IntakeReply {
            body: encoding.encode(er7),
            code,
            replayed,
        };

        let caller = match self.authorize(bearer, Scope::Write) {
            Ok(c) => c,
            Err(e) => return Ok(reply(&ack(AckCode::AR, Some(&e.to_string()))?, AckCode::AR, false)),
        };
        let key = idempotency_key(&message);
        let mut inner = self.write_inner();
        if let Some(stored) = inner.store.receipt(&key) {
            let code = parse_er7(stored)
                .ok()
                .and_then(|m| m.segment("MSA").map(|s| s.get(1, 1).to_string()))
                .map_or(AckCode::AA, |c| match c.as_str() {
                    "AE" => AckCode::AE,
                    "AR" => AckCode::AR,
                    _ => AckCode::AA,
                });
            return Ok(reply(stored, code, true));
        }

        let (er7, code) = match plan(&message) {
            Ok(Plan::Mutate(command)) => {
                let mut accepted = None;
                let result = self.commit_locked(&mut inner, &caller.client_id, command, |outcome| {
                    let text = ack(AckCode::AA, Some(&accepted_reason(outcome))).ok()?;
                    accepted = Some(text.clone());
                    Some(Receipt {
                        key: key.clone(),
                        response: text,
                    })
                });
                match result {
                    Ok(_) => return Ok(reply(&accepted.expect("receipt built on commit"), AckCode::AA, false)),
                    Err(ServiceError::Rejected(e)) => (ack(AckCode::AE, Some(&e.to_string()))?, AckCode::AE),
                    Err(e) => return Err(e),
                }
            }
            Ok(Plan::Query(request)) => {
                if !caller.has(Scope::Read) {
                    let e = crate::auth::AuthError::InsufficientScope(Scope::Read);
                    return Ok(reply(&ack(AckCode::AR, Some(&e.to_string()))?, AckCode::AR, false));
                }
                match inner.store.registry().search(&request, caller.has(Scope::Steward)) {
                    Ok(hits) => {
                        let hits: Vec<_> = hits
                            .into_iter()
                            .map(|h| (h.record.profile, h.record.identifiers))
                            .collect();
                        let m = build_rsp(&message, &hits, self.clock.now())
                            .map_err(|e| ServiceError::Malformed(e.to_string()))?;
                        (emit_er7(&m), AckCode::AA)
                    }
                    Err(e) => (ack(AckCode::AE, Some(&e.to_string()))?, AckCode::AE),
                }
            }
            Err(e) => {
                let action = message.kind().map_or_else(|_| "HL7".to_string(), |k| format!("HL7_{}", k.msh9().1));
                inner
                    .audit
                    .append(self.clock.now(), &caller.client_id, &action, message.control_id(), e.code(), None)
                    .map_err(crate::store::StoreError::from)?;
                (ack(AckCode::AE, Some(&e.to_string()))?, AckCode::AE)
            }
        };
        inner.store.record_receipt(Receipt {
            key,
            response: er7.clone(),
        })?;
        Ok(reply(&er7, code, false))
    }
}
