use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::config::{ComparatorConfig, ComparedField, ComparisonMethod, Thresholds};
use super::strings::jaro_winkler;
use super::MatchError;
use crate::identity::{IdentifierKind, PatientRecord, Phn, Sex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Agreement {
    Agreed,
    Disagreed,
    Missing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Match,
    Possible,
    NonMatch,
}

impl Decision {
    pub fn classify(total: f64, t: &Thresholds) -> Decision {
        if total >= t.upper {
            Decision::Match
        } else if total < t.lower {
            Decision::NonMatch
        } else {
            Decision::Possible
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Match => "MATCH",
            Decision::Possible => "POSSIBLE",
            Decision::NonMatch => "NON_MATCH",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldOutcome {
    pub field: ComparedField,
    pub agreement: Agreement,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pair: (Phn, Phn),
    pub per_field: Vec<FieldOutcome>,
    /// Base-2 log-likelihood ratio; the sum of `per_field` weights.
    pub total: f64,
    pub decision: Decision,
}

impl MatchResult {
    /// The pair with the lower PHN first.
    pub fn ordered_pair(&self) -> (Phn, Phn) {
        let (a, b) = &self.pair;
        if a <= b {
            (a.clone(), b.clone())
        } else {
            (b.clone(), a.clone())
        }
    }

    pub fn involves(&self, phn: &Phn) -> bool {
        &self.pair.0 == phn || &self.pair.1 == phn
    }
}

/// Agreement weight `log2(m/u)`, disagreement weight `log2((1-m)/(1-u))`.
pub fn field_weight(config: &ComparatorConfig, agreed: bool) -> f64 {
    if agreed {
        (config.m / config.u).log2()
    } else {
        ((1.0 - config.m) / (1.0 - config.u)).log2()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldValue {
    Missing,
    Text(String),
    Date(NaiveDate),
}

impl FieldValue {
    fn text(s: &str) -> FieldValue {
        let normalized = normalize_text(s);
        if normalized.is_empty() {
            FieldValue::Missing
        } else {
            FieldValue::Text(normalized)
        }
    }
}

fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_uppercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn as_date(v: &FieldValue) -> Option<NaiveDate> {
    match v {
        FieldValue::Date(d) => Some(*d),
        FieldValue::Text(t) => NaiveDate::parse_from_str(t, "%Y-%m-%d").ok(),
        FieldValue::Missing => None,
    }
}

fn as_text(v: &FieldValue) -> String {
    match v {
        FieldValue::Text(t) => t.clone(),
        FieldValue::Date(d) => d.format("%Y-%m-%d").to_string(),
        FieldValue::Missing => String::new(),
    }
}

/// Equal, or the same year with day and month swapped.
pub fn dates_agree(a: NaiveDate, b: NaiveDate) -> bool {
    a == b || (a.year() == b.year() && a.month() == b.day() && a.day() == b.month())
}

pub fn compare_field(config: &ComparatorConfig, a: &FieldValue, b: &FieldValue) -> Agreement {
    if matches!(a, FieldValue::Missing) || matches!(b, FieldValue::Missing) {
        return Agreement::Missing;
    }
    let agreed = match config.method {
        ComparisonMethod::Exact => match (a, b) {
            (FieldValue::Date(x), FieldValue::Date(y)) => x == y,
            _ => as_text(a) == as_text(b),
        },
        ComparisonMethod::JaroWinkler(threshold) => jaro_winkler(&as_text(a), &as_text(b)) >= threshold,
        ComparisonMethod::DateParts => match (as_date(a), as_date(b)) {
            (Some(x), Some(y)) => dates_agree(x, y),
            _ => as_text(a) == as_text(b),
        },
    };
    if agreed {
        Agreement::Agreed
    } else {
        Agreement::Disagreed
    }
}

/// The comparable projection of a record, or of a search probe.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LinkageView {
    pub nic: Option<String>,
    pub family_name: Option<String>,
    pub given_name: Option<String>,
    pub date_of_birth: Option<NaiveDate>,
    pub sex: Option<Sex>,
    pub address: Option<String>,
}

impl LinkageView {
    pub fn of(record: &PatientRecord) -> LinkageView {
        let p = &record.profile;
        LinkageView {
            nic: record.identifier(&IdentifierKind::Nic).map(|i| i.value.clone()),
            family_name: Some(p.family_name.clone()),
            given_name: Some(p.given_names.join(" ")),
            date_of_birth: Some(p.date_of_birth),
            sex: Some(p.sex),
            address: Some(p.address_lines.join(" ")),
        }
    }

    /// A name-only probe: first token is the family name, the rest given names.
    pub fn name_probe(name: &str) -> LinkageView {
        let mut tokens = name.split_whitespace();
        let family = tokens.next().map(str::to_string);
        let given = tokens.collect::<Vec<_>>().join(" ");
        LinkageView {
            family_name: family,
            given_name: Some(given).filter(|g| !g.is_empty()),
            ..LinkageView::default()
        }
    }

    pub fn value(&self, field: ComparedField) -> FieldValue {
        let text = |v: &Option<String>| v.as_deref().map_or(FieldValue::Missing, FieldValue::text);
        match field {
            ComparedField::Nic => text(&self.nic),
            ComparedField::FamilyName => text(&self.family_name),
            ComparedField::GivenName => text(&self.given_name),
            ComparedField::Dob => self.date_of_birth.map_or(FieldValue::Missing, FieldValue::Date),
            ComparedField::Sex => match self.sex {
                Some(Sex::M) => FieldValue::Text("M".into()),
                Some(Sex::F) => FieldValue::Text("F".into()),
                Some(Sex::U) | None => FieldValue::Missing,
            },
            ComparedField::Address => text(&self.address),
        }
    }
}

pub fn score_views(
    configs: &[ComparatorConfig],
    pair: (Phn, Phn),
    a: &LinkageView,
    b: &LinkageView,
    thresholds: &Thresholds,
) -> MatchResult {
    let per_field: Vec<FieldOutcome> = configs
        .iter()
        .map(|c| {
            let agreement = compare_field(c, &a.value(c.field), &b.value(c.field));
            let weight = match agreement {
                Agreement::Agreed => field_weight(c, true),
                Agreement::Disagreed => field_weight(c, false),
                Agreement::Missing => 0.0,
            };
            FieldOutcome {
                field: c.field,
                agreement,
                weight,
            }
        })
        .collect();
    let total = per_field.iter().map(|f| f.weight).sum();
    MatchResult {
        pair,
        per_field,
        total,
        decision: Decision::classify(total, thresholds),
    }
}

pub fn score_pair(
    configs: &[ComparatorConfig],
    a: &PatientRecord,
    b: &PatientRecord,
    thresholds: &Thresholds,
) -> Result<MatchResult, MatchError> {
    if a.phn == b.phn {
        return Err(MatchError::SelfComparison(a.phn.clone()));
    }
    Ok(score_views(
        configs,
        (a.phn.clone(), b.phn.clone()),
        &LinkageView::of(a),
        &LinkageView::of(b),
        thresholds,
    ))
}
