use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Months, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::identifier::{Identifier, IdentifierKind};
use super::phn::Phn;

/// Death records are kept at least this long before they may be purged.
pub const DECEASED_RETENTION_MONTHS: u32 = 60;

/// Registrants younger than this need a guardian link.
pub const ADULT_AGE_YEARS: u32 = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sex {
    M,
    F,
    U,
}

impl Sex {
    pub fn code(self) -> &'static str {
        match self {
            Sex::M => "M",
            Sex::F => "F",
            Sex::U => "U",
        }
    }

    pub fn from_code(code: &str) -> Option<Sex> {
        match code {
            "M" => Some(Sex::M),
            "F" => Some(Sex::F),
            "U" | "" => Some(Sex::U),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemographicProfile {
    pub family_name: String,
    #[serde(default)]
    pub given_names: Vec<String>,
    pub date_of_birth: NaiveDate,
    pub sex: Sex,
    #[serde(default)]
    pub address_lines: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contact_number: Option<String>,
    #[serde(default)]
    pub anonymity_requested: bool,
}

impl DemographicProfile {
    /// Whole years of age on `on`.
    pub fn age_on(&self, on: NaiveDate) -> u32 {
        on.years_since(self.date_of_birth).unwrap_or(0)
    }

    /// Copy with identifying name and address fields blanked.
    pub fn redacted(&self) -> DemographicProfile {
        DemographicProfile {
            family_name: String::new(),
            given_names: Vec::new(),
            address_lines: Vec::new(),
            ..self.clone()
        }
    }
}

/// Profile fields a steward can resolve individually during a merge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProfileField {
    FamilyName,
    GivenNames,
    DateOfBirth,
    Sex,
    AddressLines,
    ContactNumber,
}

impl ProfileField {
    pub const ALL: [ProfileField; 6] = [
        ProfileField::FamilyName,
        ProfileField::GivenNames,
        ProfileField::DateOfBirth,
        ProfileField::Sex,
        ProfileField::AddressLines,
        ProfileField::ContactNumber,
    ];

    /// Copies this field from `source` into `target`.
    pub fn copy(self, source: &DemographicProfile, target: &mut DemographicProfile) {
        match self {
            ProfileField::FamilyName => target.family_name = source.family_name.clone(),
            ProfileField::GivenNames => target.given_names = source.given_names.clone(),
            ProfileField::DateOfBirth => target.date_of_birth = source.date_of_birth,
            ProfileField::Sex => target.sex = source.sex,
            ProfileField::AddressLines => target.address_lines = source.address_lines.clone(),
            ProfileField::ContactNumber => target.contact_number = source.contact_number.clone(),
        }
    }

    pub fn differs(self, a: &DemographicProfile, b: &DemographicProfile) -> bool {
        match self {
            ProfileField::FamilyName => a.family_name != b.family_name,
            ProfileField::GivenNames => a.given_names != b.given_names,
            ProfileField::DateOfBirth => a.date_of_birth != b.date_of_birth,
            ProfileField::Sex => a.sex != b.sex,
            ProfileField::AddressLines => a.address_lines != b.address_lines,
            ProfileField::ContactNumber => a.contact_number != b.contact_number,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RecordStatus {
    Active,
    InactiveDeceased { deceased_on: NaiveDate },
    RetiredMerged { survivor: Phn },
}

impl RecordStatus {
    pub fn is_active(&self) -> bool {
        matches!(self, RecordStatus::Active)
    }

    pub fn is_retired(&self) -> bool {
        matches!(self, RecordStatus::RetiredMerged { .. })
    }

    /// First date on which a deceased record may be purged.
    pub fn purge_eligible_from(&self) -> Option<NaiveDate> {
        match self {
            RecordStatus::InactiveDeceased { deceased_on } => {
                deceased_on.checked_add_months(Months::new(DECEASED_RETENTION_MONTHS))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GuardianReason {
    Minor,
    UnsoundMind,
    Unconscious,
}

impl fmt::Display for GuardianReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GuardianReason::Minor => "MINOR",
            GuardianReason::UnsoundMind => "UNSOUND_MIND",
            GuardianReason::Unconscious => "UNCONSCIOUS",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardianLink {
    pub ward_phn: Phn,
    pub guardian_phn: Phn,
    pub reason: GuardianReason,
    pub established_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("record must carry exactly one PHN identifier equal to {0}")]
    PhnIdentifierMismatch(Phn),
    #[error("date of birth {0} is after record creation")]
    BirthDateInFuture(NaiveDate),
    #[error("more than one {0} identifier on one record")]
    DuplicateKind(IdentifierKind),
    #[error("identifier {kind} {value} listed twice")]
    DuplicateIdentifier { kind: IdentifierKind, value: String },
    #[error("retired record {0} cannot name itself as survivor")]
    SelfSurvivor(Phn),
    #[error("guardian link for {0} names the ward as its own guardian")]
    SelfGuardian(Phn),
    #[error("guardian link for {link_ward} stored on record {record}")]
    GuardianWardMismatch { record: Phn, link_ward: Phn },
    #[error("more than one {reason} guardian for {ward}")]
    DuplicateGuardianReason { ward: Phn, reason: GuardianReason },
    #[error("family name is empty")]
    EmptyFamilyName,
    #[error("version must be at least 1")]
    ZeroVersion,
}

/// One indexed person.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub phn: Phn,
    pub profile: DemographicProfile,
    pub identifiers: BTreeSet<Identifier>,
    pub status: RecordStatus,
    #[serde(default)]
    pub guardians: Vec<GuardianLink>,
    /// Set while the record waits for a guardian link (PROVISIONAL).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending_guardian: Option<GuardianReason>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub version: u64,
}

impl PatientRecord {
    /// A fresh ACTIVE record at version 1. The PHN identifier is added if the
    /// caller did not supply it.
    pub fn new(
        phn: Phn,
        profile: DemographicProfile,
        identifiers: impl IntoIterator<Item = Identifier>,
        created_at: DateTime<Utc>,
    ) -> Result<PatientRecord, RecordError> {
        let mut identifiers: BTreeSet<Identifier> = identifiers.into_iter().collect();
        if !identifiers.iter().any(|i| i.kind == IdentifierKind::Phn) {
            identifiers.insert(Identifier {
                kind: IdentifierKind::Phn,
                value: phn.to_string(),
                issuing_authority: Some("MPI".into()),
            });
        }
        let record = PatientRecord {
            phn,
            profile,
            identifiers,
            status: RecordStatus::Active,
            guardians: Vec::new(),
            pending_guardian: None,
            created_at,
            updated_at: created_at,
            version: 1,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<(), RecordError> {
        let phn_ids: Vec<_> = self
            .identifiers
            .iter()
            .filter(|i| i.kind == IdentifierKind::Phn)
            .collect();
        if phn_ids.len() != 1 || phn_ids[0].value != self.phn.as_str() {
            return Err(RecordError::PhnIdentifierMismatch(self.phn.clone()));
        }
        if self.profile.family_name.trim().is_empty() {
            return Err(RecordError::EmptyFamilyName);
        }
        if self.profile.date_of_birth > self.created_at.date_naive() {
            return Err(RecordError::BirthDateInFuture(self.profile.date_of_birth));
        }
        let mut kinds = BTreeMap::new();
        let mut keys = BTreeSet::new();
        for id in &self.identifiers {
            if !keys.insert((id.kind.clone(), id.value.clone())) {
                return Err(RecordError::DuplicateIdentifier {
                    kind: id.kind.clone(),
                    value: id.value.clone(),
                });
            }
            if id.kind.is_uniqueness_bearing() {
                let n = kinds.entry(id.kind.clone()).or_insert(0);
                *n += 1;
                if *n > 1 {
                    return Err(RecordError::DuplicateKind(id.kind.clone()));
                }
            }
        }
        if let RecordStatus::RetiredMerged { survivor } = &self.status {
            if survivor == &self.phn {
                return Err(RecordError::SelfSurvivor(self.phn.clone()));
            }
        }
        let mut reasons = BTreeSet::new();
        for link in &self.guardians {
            if link.ward_phn != self.phn {
                return Err(RecordError::GuardianWardMismatch {
                    record: self.phn.clone(),
                    link_ward: link.ward_phn.clone(),
                });
            }
            if link.guardian_phn == link.ward_phn {
                return Err(RecordError::SelfGuardian(self.phn.clone()));
            }
            if !reasons.insert(link.reason) {
                return Err(RecordError::DuplicateGuardianReason {
                    ward: self.phn.clone(),
                    reason: link.reason,
                });
            }
        }
        if self.version == 0 {
            return Err(RecordError::ZeroVersion);
        }
        Ok(())
    }

    pub fn identifier(&self, kind: &IdentifierKind) -> Option<&Identifier> {
        self.identifiers.iter().find(|i| &i.kind == kind)
    }

    pub fn has_identifier(&self, kind: &IdentifierKind, value: &str) -> bool {
        self.identifiers.iter().any(|i| &i.kind == kind && i.value == value)
    }

    pub fn is_provisional(&self) -> bool {
        self.pending_guardian.is_some()
    }

    /// Records a mutation: bumps the version by one and stamps `at`.
    pub fn touch(&mut self, at: DateTime<Utc>) {
        self.version += 1;
        self.updated_at = at;
    }
}
