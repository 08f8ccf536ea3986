//! Patient identity: the PHN scheme, normalized identifiers and the
//! record type the registry indexes.

mod identifier;
mod phn;
mod record;

pub use identifier::{normalize_identifier, Identifier, IdentifierError, IdentifierKind, OPAQUE_TOKEN_MAX};
pub use phn::{luhn_check_digit, validate_phn, Phn, PhnError, PhnIssuer, PHN_LEN, SEQUENCE_LIMIT};
pub use record::{
    DemographicProfile, GuardianLink, GuardianReason, PatientRecord, ProfileField, RecordError,
    RecordStatus, Sex, ADULT_AGE_YEARS, DECEASED_RETENTION_MONTHS,
};
