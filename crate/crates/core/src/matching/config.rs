//! Comparator configuration and its line-oriented file format:
//! `FIELD<TAB>METHOD<TAB>param<TAB>m<TAB>u`, plus `THRESHOLDS<TAB>upper<TAB>lower`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::MatchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ComparedField {
    Nic,
    FamilyName,
    GivenName,
    Dob,
    Sex,
    Address,
}

impl ComparedField {
    pub fn as_str(self) -> &'static str {
        match self {
            ComparedField::Nic => "NIC",
            ComparedField::FamilyName => "FAMILY_NAME",
            ComparedField::GivenName => "GIVEN_NAME",
            ComparedField::Dob => "DOB",
            ComparedField::Sex => "SEX",
            ComparedField::Address => "ADDRESS",
        }
    }
}

impl fmt::Display for ComparedField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ComparedField {
    type Err = MatchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "NIC" => ComparedField::Nic,
            "FAMILY_NAME" => ComparedField::FamilyName,
            "GIVEN_NAME" => ComparedField::GivenName,
            "DOB" => ComparedField::Dob,
            "SEX" => ComparedField::Sex,
            "ADDRESS" => ComparedField::Address,
            other => return Err(MatchError::InvalidConfig(format!("unknown field {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", content = "threshold", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ComparisonMethod {
    Exact,
    JaroWinkler(f64),
    DateParts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparatorConfig {
    pub field: ComparedField,
    pub method: ComparisonMethod,
    pub m: f64,
    pub u: f64,
}

impl ComparatorConfig {
    pub fn new(field: ComparedField, method: ComparisonMethod, m: f64, u: f64) -> Result<Self, MatchError> {
        let c = ComparatorConfig { field, method, m, u };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), MatchError> {
        let in_open_unit = |p: f64| p > 0.0 && p < 1.0;
        if !in_open_unit(self.m) || !in_open_unit(self.u) {
            return Err(MatchError::InvalidConfig(format!(
                "{}: m and u must lie in (0,1)",
                self.field
            )));
        }
        if self.m <= self.u {
            return Err(MatchError::InvalidConfig(format!("{}: m must exceed u", self.field)));
        }
        if let ComparisonMethod::JaroWinkler(t) = self.method {
            if !(t > 0.0 && t <= 1.0) {
                return Err(MatchError::InvalidConfig(format!(
                    "{}: threshold must lie in (0,1]",
                    self.field
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub upper: f64,
    pub lower: f64,
}

impl Thresholds {
    pub fn new(upper: f64, lower: f64) -> Result<Thresholds, MatchError> {
        if !(upper > lower) || !upper.is_finite() || !lower.is_finite() {
            return Err(MatchError::InvalidConfig("thresholds need upper > lower".into()));
        }
        Ok(Thresholds { upper, lower })
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { upper: 8.0, lower: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkageConfig {
    pub comparators: Vec<ComparatorConfig>,
    pub thresholds: Thresholds,
}

impl Default for LinkageConfig {
    fn default() -> Self {
        use ComparedField::*;
        use ComparisonMethod::*;
        let c = |field, method, m, u| ComparatorConfig { field, method, m, u };
        LinkageConfig {
            comparators: vec![
                c(Nic, Exact, 0.95, 0.001),
                c(FamilyName, JaroWinkler(0.92), 0.9, 0.02),
                c(GivenName, JaroWinkler(0.92), 0.85, 0.05),
                c(Dob, DateParts, 0.9, 0.01),
                c(Sex, Exact, 0.98, 0.5),
                c(Address, JaroWinkler(0.90), 0.7, 0.1),
            ],
            thresholds: Thresholds::default(),
        }
    }
}

fn parse_prob(s: &str, line: usize) -> Result<f64, MatchError> {
    s.parse::<f64>().map_err(|_| MatchError::ConfigLine {
        line,
        reason: format!("{s:?} is not a number"),
    })
}

impl LinkageConfig {
    /// Parses the comparator file. Blank lines and `#` comments are skipped.
    /// A THRESHOLDS line is required.
    pub fn parse(text: &str) -> Result<LinkageConfig, MatchError> {
        let mut comparators = Vec::new();
        let mut thresholds = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = trimmed.split('\t').collect();
            let err = |reason: String| MatchError::ConfigLine { line, reason };
            if cols[0] == "THRESHOLDS" {
                if cols.len() != 3 {
                    return Err(err("THRESHOLDS needs upper and lower".into()));
                }
                let t = Thresholds::new(parse_prob(cols[1], line)?, parse_prob(cols[2], line)?)
                    .map_err(|e| err(e.to_string()))?;
                thresholds = Some(t);
                continue;
            }
            if cols.len() != 5 {
                return Err(err(format!("expected 5 tab-separated columns, found {}", cols.len())));
            }
            let field: ComparedField = cols[0].parse().map_err(|e: MatchError| err(e.to_string()))?;
            let method = match cols[1] {
                "EXACT" => ComparisonMethod::Exact,
                "DATE_PARTS" => ComparisonMethod::DateParts,
                "JARO_WINKLER" => ComparisonMethod::JaroWinkler(parse_prob(cols[2], line)?),
                other => return Err(err(format!("unknown method {other:?}"))),
            };
            let c = ComparatorConfig::new(field, method, parse_prob(cols[3], line)?, parse_prob(cols[4], line)?)
                .map_err(|e| err(e.to_string()))?;
            comparators.push(c);
        }
        let thresholds = thresholds.ok_or(MatchError::ConfigLine {
            line: text.lines().count(),
            reason: "missing THRESHOLDS line".into(),
        })?;
        Ok(LinkageConfig {
            comparators,
            thresholds,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.comparators {
            let (method, param) = match c.method {
                ComparisonMethod::Exact => ("EXACT", "-".to_string()),
                ComparisonMethod::DateParts => ("DATE_PARTS", "-".to_string()),
                ComparisonMethod::JaroWinkler(t) => ("JARO_WINKLER", t.to_string()),
            };
            out.push_str(&format!("{}\t{method}\t{param}\t{}\t{}\n", c.field, c.m, c.u));
        }
        out.push_str(&format!(
            "THRESHOLDS\t{}\t{}\n",
            self.thresholds.upper, self.thresholds.lower
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_text() {
        let cfg = LinkageConfig::default();
        let text = cfg.to_text();
        assert!(text.starts_with("NIC\tEXACT\t-\t0.95\t0.001\n"), "{text}");
        assert_eq!(LinkageConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn shipped_file_matches_default() {
        let shipped = include_str!("../../../../config/comparators.tsv");
        assert_eq!(LinkageConfig::parse(shipped).unwrap(), LinkageConfig::default());
    }

    #[test]
    fn rejects_m_not_above_u() {
        assert!(ComparatorConfig::new(ComparedField::Sex, ComparisonMethod::Exact, 0.5, 0.5).is_err());
        assert!(ComparatorConfig::new(ComparedField::Sex, ComparisonMethod::Exact, 1.0, 0.5).is_err());
        assert!(ComparatorConfig::new(ComparedField::Sex, ComparisonMethod::JaroWinkler(0.0), 0.9, 0.5).is_err());
        assert!(ComparatorConfig::new(ComparedField::Sex, ComparisonMethod::JaroWinkler(1.0), 0.9, 0.5).is_ok());
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(
            LinkageConfig::parse("NIC\tEXACT\t-\t0.95\n"),
            Err(MatchError::ConfigLine { line: 1, .. })
        ));
        assert!(matches!(
            LinkageConfig::parse("NIC\tEXACT\t-\t0.95\t0.001\n"),
            Err(MatchError::ConfigLine { .. })
        ));
        assert!(LinkageConfig::parse("THRESHOLDS\t0\t8\n").is_err());
        assert!(LinkageConfig::parse("PHONE\tEXACT\t-\t0.9\t0.1\nTHRESHOLDS\t8\t0\n").is_err());
    }

    #[test]
    fn comments_and_blank_lines_skipped() {
        let cfg = LinkageConfig::parse("# tuned\n\nSEX\tEXACT\t-\t0.98\t0.5\nTHRESHOLDS\t4\t1\n").unwrap();
        assert_eq!(cfg.comparators.len(), 1);
        assert_eq!(cfg.thresholds, Thresholds { upper: 4.0, lower: 1.0 });
    }
}
