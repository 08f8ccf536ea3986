//! Linkage quality against a generator truth file.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("MALFORMED_INPUT: {file} line {line}: {reason}")]
    Malformed { file: &'static str, line: usize, reason: String },
}

/// How a pair came to be reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    Match,
    Possible,
    Approved,
    Rejected,
    /// Refused at intake because it repeated another record's identifier.
    DuplicateIdentifier,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Match => "MATCH",
            Label::Possible => "POSSIBLE",
            Label::Approved => "APPROVED",
            Label::Rejected => "REJECTED",
            Label::DuplicateIdentifier => "DUPLICATE_IDENTIFIER",
        }
    }

    pub fn is_positive(self) -> bool {
        matches!(self, Label::Match | Label::Approved | Label::DuplicateIdentifier)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Label, String> {
        Ok(match s {
            "MATCH" => Label::Match,
            "POSSIBLE" => Label::Possible,
            "APPROVED" => Label::Approved,
            "REJECTED" => Label::Rejected,
            "DUPLICATE_IDENTIFIER" => Label::DuplicateIdentifier,
            other => return Err(format!("unknown label {other:?}")),
        })
    }
}

/// One line of a results file: `left<TAB>right<TAB>label[<TAB>total]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub left: String,
    pub right: String,
    pub label: Label,
    pub total: Option<f64>,
}

impl Prediction {
    pub fn to_line(&self) -> String {
        match self.total {
            Some(t) => format!("{}\t{}\t{}\t{t:.4}\n", self.left, self.right, self.label),
            None => format!("{}\t{}\t{}\n", self.left, self.right, self.label),
        }
    }
}

fn unordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

pub fn parse_results(text: &str) -> Result<Vec<Prediction>, EvalError> {
    lines(text)
        .map(|(line, l)| {
            let bad = |reason: String| EvalError::Malformed { file: "results", line, reason };
            let cols: Vec<&str> = l.split('\t').collect();
            if !(3..=4).contains(&cols.len()) || cols[0].is_empty() || cols[1].is_empty() {
                return Err(bad("expected left, right, label and an optional total".into()));
            }
            let label = cols[2].parse().map_err(bad)?;
            let total = cols
                .get(3)
                .map(|t| t.parse::<f64>().map_err(|e| bad(format!("total: {e}"))))
                .transpose()?;
            Ok(Prediction {
                left: cols[0].to_string(),
                right: cols[1].to_string(),
                label,
                total,
            })
        })
        .collect()
}

pub fn parse_truth(text: &str) -> Result<Vec<(String, String)>, EvalError> {
    lines(text)
        .map(|(line, l)| match l.split('\t').collect::<Vec<_>>().as_slice() {
            [a, b] if !a.is_empty() && !b.is_empty() && a != b => Ok((a.to_string(), b.to_string())),
            _ => Err(EvalError::Malformed {
                file: "truth",
                line,
                reason: "expected two distinct placeholder ids".into(),
            }),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    /// Nothing was predicted, so precision is reported as 1.0 by convention.
    pub precision_undefined: bool,
    pub missed: Vec<(String, String)>,
    pub spurious: Vec<(String, String)>,
}

/// Precision and recall over unordered pairs.
pub fn evaluate(predictions: &[Prediction], truth: &[(String, String)]) -> Evaluation {
    let truth: BTreeSet<(String, String)> = truth.iter().map(|(a, b)| unordered(a, b)).collect();
    let predicted: BTreeSet<(String, String)> = predictions
        .iter()
        .filter(|p| p.label.is_positive())
        .map(|p| unordered(&p.left, &p.right))
        .collect();
    let tp = predicted.intersection(&truth).count();
    let spurious: Vec<_> = predicted.difference(&truth).cloned().collect();
    let missed: Vec<_> = truth.difference(&predicted).cloned().collect();
    let undefined = predicted.is_empty();
    Evaluation {
        true_positives: tp,
        false_positives: spurious.len(),
        false_negatives: missed.len(),
        precision: if undefined { 1.0 } else { tp as f64 / predicted.len() as f64 },
        recall: if truth.is_empty() { 1.0 } else { tp as f64 / truth.len() as f64 },
        precision_undefined: undefined,
        missed,
        spurious,
    }
}

impl fmt::Display for Evaluation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "precision {:.4}{} recall {:.4} tp {} fp {} fn {}",
            self.precision,
            if self.precision_undefined { " (undefined: no predictions)" } else { "" },
            self.recall,
            self.true_positives,
            self.false_positives,
            self.false_negatives
        )
    }
}
