use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::phn::validate_phn;

/// Maximum length of opaque token identifiers (licence, passport, elderly number).
pub const OPAQUE_TOKEN_MAX: usize = 32;

/// The searchable identifier criteria, plus a reserved extension slot for
/// future identifier sources such as biometric references.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IdentifierKind {
    Nic,
    Phn,
    DrivingLicense,
    Passport,
    ElderlyNumber,
    Email,
    NameKey,
    Extension(String),
}

impl IdentifierKind {
    /// Kinds for which no two ACTIVE records may share a value, and for which
    /// one record carries at most one value.
    pub fn is_uniqueness_bearing(&self) -> bool {
        matches!(
            self,
            IdentifierKind::Nic
                | IdentifierKind::Phn
                | IdentifierKind::Passport
                | IdentifierKind::DrivingLicense
                | IdentifierKind::ElderlyNumber
        )
    }

    pub fn label(&self) -> String {
        match self {
            IdentifierKind::Nic => "NIC".into(),
            IdentifierKind::Phn => "PHN".into(),
            IdentifierKind::DrivingLicense => "DRIVING_LICENSE".into(),
            IdentifierKind::Passport => "PASSPORT".into(),
            IdentifierKind::ElderlyNumber => "ELDERLY_NUMBER".into(),
            IdentifierKind::Email => "EMAIL".into(),
            IdentifierKind::NameKey => "NAME_KEY".into(),
            IdentifierKind::Extension(tag) => format!("EXTENSION({tag})"),
        }
    }
}

impl fmt::Display for IdentifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentifierError {
    #[error("FORMAT_INVALID: {raw:?} is not a valid {kind} value")]
    FormatInvalid { kind: IdentifierKind, raw: String },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Identifier {
    pub kind: IdentifierKind,
    pub value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issuing_authority: Option<String>,
}

impl Identifier {
    /// Normalizes `raw` for `kind` and attaches an issuing authority.
    pub fn new(
        kind: IdentifierKind,
        raw: &str,
        issuing_authority: Option<&str>,
    ) -> Result<Identifier, IdentifierError> {
        let mut id = normalize_identifier(kind, raw)?;
        id.issuing_authority = issuing_authority
            .map(str::trim)
            .filter(|a| !a.is_empty())
            .map(str::to_string);
        Ok(id)
    }

    /// Re-runs normalization; used when identifiers arrive already structured
    /// (JSON bodies, replayed events).
    pub fn normalized(&self) -> Result<Identifier, IdentifierError> {
        let authority = self.issuing_authority.clone();
        let mut id = normalize_identifier(self.kind.clone(), &self.value)?;
        id.issuing_authority = authority;
        Ok(id)
    }

    pub fn key(&self) -> (&IdentifierKind, &str) {
        (&self.kind, &self.value)
    }
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn is_old_nic(v: &str) -> bool {
    let b = v.as_bytes();
    b.len() == 10 && b[..9].iter().all(u8::is_ascii_digit) && matches!(b[9], b'V' | b'X')
}

fn is_new_nic(v: &str) -> bool {
    v.len() == 12 && v.bytes().all(|b| b.is_ascii_digit())
}

fn is_opaque_token(v: &str) -> bool {
    !v.is_empty() && v.chars().count() <= OPAQUE_TOKEN_MAX && !v.chars().any(char::is_control)
}

fn is_email(v: &str) -> bool {
    let mut parts = v.split('@');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(local), Some(domain), None) => {
            !local.is_empty() && !domain.is_empty() && !v.chars().any(char::is_whitespace)
        }
        _ => false,
    }
}

/// Normalizes a raw identifier value for its kind and checks the kind's
/// format rule. Normalization is idempotent on accepted input.
pub fn normalize_identifier(kind: IdentifierKind, raw: &str) -> Result<Identifier, IdentifierError> {
    let trimmed = raw.trim();
    let (value, ok) = match &kind {
        IdentifierKind::Nic => {
            let v = trimmed.to_uppercase();
            let ok = is_old_nic(&v) || is_new_nic(&v);
            (v, ok)
        }
        IdentifierKind::Phn => {
            let ok = validate_phn(trimmed);
            (trimmed.to_string(), ok)
        }
        IdentifierKind::Passport | IdentifierKind::DrivingLicense | IdentifierKind::ElderlyNumber => {
            let v = trimmed.to_uppercase();
            let ok = is_opaque_token(&v);
            (v, ok)
        }
        IdentifierKind::Email => match trimmed.rsplit_once('@') {
            Some((local, domain)) => {
                let v = format!("{local}@{}", domain.to_lowercase());
                let ok = is_email(&v);
                (v, ok)
            }
            None => (trimmed.to_string(), false),
        },
        IdentifierKind::NameKey => {
            let v = collapse_whitespace(trimmed);
            let ok = !v.is_empty();
            (v, ok)
        }
        IdentifierKind::Extension(tag) => {
            let ok = !trimmed.is_empty() && !tag.trim().is_empty();
            (trimmed.to_string(), ok)
        }
    };
    if !ok {
        return Err(IdentifierError::FormatInvalid {
            kind,
            raw: raw.to_string(),
        });
    }
    Ok(Identifier {
        kind,
        value,
        issuing_authority: None,
    })
}
