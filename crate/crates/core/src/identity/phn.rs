//! Personal Health Number: a 10-digit zero-padded sequence followed by a
//! Luhn check digit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Total length of a PHN in digits.
pub const PHN_LEN: usize = 11;

/// Exclusive upper bound on issuable sequence numbers.
pub const SEQUENCE_LIMIT: u64 = 10_000_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PhnError {
    #[error("SEQUENCE_EXHAUSTED: sequence {0} does not fit in 10 digits")]
    SequenceExhausted(u64),
    #[error("SEQUENCE_REUSED: sequence {0} was already issued")]
    SequenceReused(u64),
    #[error("invalid PHN {0:?}")]
    Invalid(String),
}

/// Luhn check digit for a run of decimal digit values (most significant first).
///
/// The digit immediately left of the check position is doubled, then every
/// second digit moving left.
pub fn luhn_check_digit(base: &[u8]) -> u8 {
    let sum: u32 = base
        .iter()
        .rev()
        .enumerate()
        .map(|(i, &d)| {
            let d = u32::from(d);
            if i % 2 == 0 {
                let twice = d * 2;
                if twice > 9 {
                    twice - 9
                } else {
                    twice
                }
            } else {
                d
            }
        })
        .sum();
    ((10 - sum % 10) % 10) as u8
}

/// True iff `candidate` is exactly 11 ASCII digits whose last digit is the
/// Luhn check of the first ten.
pub fn validate_phn(candidate: &str) -> bool {
    let bytes = candidate.as_bytes();
    if bytes.len() != PHN_LEN || !bytes.iter().all(u8::is_ascii_digit) {
        return false;
    }
    let digits: Vec<u8> = bytes.iter().map(|b| b - b'0').collect();
    luhn_check_digit(&digits[..PHN_LEN - 1]) == digits[PHN_LEN - 1]
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Phn(String);

impl Phn {
    pub fn parse(candidate: &str) -> Result<Phn, PhnError> {
        if validate_phn(candidate) {
            Ok(Phn(candidate.to_string()))
        } else {
            Err(PhnError::Invalid(candidate.to_string()))
        }
    }

    /// Builds the PHN for `sequence` without consulting any issuance history.
    pub fn from_sequence(sequence: u64) -> Result<Phn, PhnError> {
        if sequence >= SEQUENCE_LIMIT {
            return Err(PhnError::SequenceExhausted(sequence));
        }
        let base = format!("{sequence:010}");
        let digits: Vec<u8> = base.bytes().map(|b| b - b'0').collect();
        let check = luhn_check_digit(&digits);
        Ok(Phn(format!("{base}{check}")))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The sequence number encoded in the first ten digits.
    pub fn sequence(&self) -> u64 {
        self.0[..PHN_LEN - 1]
            .parse()
            .expect("validated PHN has a numeric base")
    }
}

impl fmt::Display for Phn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Phn {
    type Err = PhnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Phn::parse(s)
    }
}

impl TryFrom<String> for Phn {
    type Error = PhnError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        if validate_phn(&value) {
            Ok(Phn(value))
        } else {
            Err(PhnError::Invalid(value))
        }
    }
}

impl From<Phn> for String {
    fn from(phn: Phn) -> String {
        phn.0
    }
}

/// Hands out PHNs with strictly increasing sequence bases.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhnIssuer {
    next: u64,
}

impl PhnIssuer {
    /// An issuer whose first automatic allocation is `first`.
    pub fn starting_at(first: u64) -> Self {
        PhnIssuer { next: first }
    }

    /// Issues `sequence`. Anything at or below the highest issued sequence
    /// counts as reused; bases only ever move forward.
    pub fn issue(&mut self, sequence: u64) -> Result<Phn, PhnError> {
        if sequence >= SEQUENCE_LIMIT {
            return Err(PhnError::SequenceExhausted(sequence));
        }
        if sequence < self.next {
            return Err(PhnError::SequenceReused(sequence));
        }
        let phn = Phn::from_sequence(sequence)?;
        self.next = sequence + 1;
        Ok(phn)
    }

    pub fn issue_next(&mut self) -> Result<Phn, PhnError> {
        self.issue(self.next)
    }

    pub fn next_sequence(&self) -> u64 {
        self.next
    }
}
