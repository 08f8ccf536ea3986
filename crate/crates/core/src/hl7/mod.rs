//! HL7 v2 messaging: a segment/field/component tree with ER7 and XML
//! encodings, the PID mapping and the message templates the index exchanges.

mod er7;
mod message;
mod patient;
mod templates;
mod xml;

use thiserror::Error;

pub use er7::{emit_er7, escape, parse_er7, parse_er7_bytes, unescape, SEGMENT_TERMINATOR};
pub use message::{Component, Delimiters, Field, Message, MessageKind, Repetition, Segment};
pub use patient::{
    extract_patient, identifier_for_type_code, pid_segment, type_code_for, ExtractedPatient,
};
pub use templates::{
    build_ack, build_adt, build_qbp, build_rsp, parse_query, AckCode, MessageHeader, Query,
    HL7_VERSION,
};
pub use xml::{emit_xml, parse_xml, ROOT_ELEMENT};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Hl7Error {
    #[error("empty message")]
    Empty,
    #[error("message is not valid UTF-8")]
    InvalidUtf8,
    #[error("NO_MSH_HEADER: first segment must be MSH")]
    NoMshHeader,
    #[error("BAD_ENCODING_CHARS: {0:?}")]
    BadEncodingChars(String),
    #[error("UNTERMINATED_ESCAPE")]
    UnterminatedEscape,
    #[error("UNKNOWN_ESCAPE: {0:?}")]
    UnknownEscape(String),
    #[error("BAD_SEGMENT_ID: {0:?}")]
    BadSegmentId(String),
    #[error("MALFORMED_XML: {0}")]
    MalformedXml(String),
    #[error("UNKNOWN_SEGMENT_ELEMENT: {0}")]
    UnknownSegmentElement(String),
    #[error("UNSUPPORTED_MESSAGE_TYPE: {0}")]
    UnsupportedMessageType(String),
    #[error("MISSING_PID")]
    MissingPid,
    #[error("MULTIPLE_PID")]
    MultiplePid,
    #[error("UNKNOWN_IDENTIFIER_TYPE_CODE: {0:?}")]
    UnknownIdentifierTypeCode(String),
    #[error("INVALID_FIELD {field}: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("MISSING_RETIRED_PHN")]
    MissingRetiredPhn,
    #[error("UNEXPECTED_RETIRED_PHN: only ADT^A40 carries MRG")]
    UnexpectedRetiredPhn,
    #[error("MISSING_CONTROL_ID")]
    MissingControlId,
    #[error("MISSING_SEGMENT: {0}")]
    MissingSegment(String),
    #[error("FORBIDDEN_CHARACTER: U+{0:04X} cannot appear in a leaf")]
    ForbiddenCharacter(u32),
}

impl Hl7Error {
    pub fn code(&self) -> &'static str {
        match self {
            Hl7Error::Empty => "EMPTY",
            Hl7Error::InvalidUtf8 => "INVALID_UTF8",
            Hl7Error::NoMshHeader => "NO_MSH_HEADER",
            Hl7Error::BadEncodingChars(_) => "BAD_ENCODING_CHARS",
            Hl7Error::UnterminatedEscape => "UNTERMINATED_ESCAPE",
            Hl7Error::UnknownEscape(_) => "UNKNOWN_ESCAPE",
            Hl7Error::BadSegmentId(_) => "BAD_SEGMENT_ID",
            Hl7Error::MalformedXml(_) => "MALFORMED_XML",
            Hl7Error::UnknownSegmentElement(_) => "UNKNOWN_SEGMENT_ELEMENT",
            Hl7Error::UnsupportedMessageType(_) => "UNSUPPORTED_MESSAGE_TYPE",
            Hl7Error::MissingPid => "MISSING_PID",
            Hl7Error::MultiplePid => "MULTIPLE_PID",
            Hl7Error::UnknownIdentifierTypeCode(_) => "UNKNOWN_IDENTIFIER_TYPE_CODE",
            Hl7Error::InvalidField { .. } => "INVALID_FIELD",
            Hl7Error::MissingRetiredPhn => "MISSING_RETIRED_PHN",
            Hl7Error::UnexpectedRetiredPhn => "UNEXPECTED_RETIRED_PHN",
            Hl7Error::MissingControlId => "MISSING_CONTROL_ID",
            Hl7Error::MissingSegment(_) => "MISSING_SEGMENT",
            Hl7Error::ForbiddenCharacter(_) => "FORBIDDEN_CHARACTER",
        }
    }
}
