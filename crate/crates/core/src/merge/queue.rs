use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::MergeError;
use crate::identity::{PatientRecord, Phn};
use crate::matching::{Decision, MatchResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReviewState {
    Pending,
    Approved,
    Rejected,
}

impl ReviewState {
    pub fn as_str(self) -> &'static str {
        match self {
            ReviewState::Pending => "PENDING",
            ReviewState::Approved => "APPROVED",
            ReviewState::Rejected => "REJECTED",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub id: String,
    pub result: MatchResult,
    pub state: ReviewState,
    /// Set for MATCH results: still reviewed, but flagged for quick approval.
    pub pre_approved: bool,
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decided_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decided_by: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge_id: Option<String>,
}

impl ReviewItem {
    /// `id<TAB>phn,phn<TAB>total<TAB>state`
    pub fn export_line(&self) -> String {
        let (a, b) = self.result.ordered_pair();
        format!("{}\t{},{}\t{:.4}\t{}", self.id, a, b, self.result.total, self.state.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviewQueue {
    items: BTreeMap<String, ReviewItem>,
    issued: u64,
}

impl ReviewQueue {
    pub fn get(&self, id: &str) -> Option<&ReviewItem> {
        self.items.get(id)
    }

    /// Items ordered by total descending, then id.
    pub fn list(&self, pending_only: bool) -> Vec<&ReviewItem> {
        let mut out: Vec<&ReviewItem> = self
            .items
            .values()
            .filter(|i| !pending_only || i.state == ReviewState::Pending)
            .collect();
        out.sort_by(|x, y| y.result.total.total_cmp(&x.result.total).then_with(|| x.id.cmp(&y.id)));
        out
    }

    pub fn pending_count(&self) -> usize {
        self.items.values().filter(|i| i.state == ReviewState::Pending).count()
    }

    pub fn pending_for(&self, pair: &(Phn, Phn)) -> Option<&ReviewItem> {
        self.items
            .values()
            .find(|i| i.state == ReviewState::Pending && &i.result.ordered_pair() == pair)
    }

    pub fn export(&self) -> String {
        self.list(false).iter().map(|i| i.export_line() + "\n").collect()
    }

    /// Adds a PENDING item, or coalesces into the existing pending item for
    /// the same pair, keeping the higher-scoring result.
    pub fn enqueue(
        &mut self,
        result: MatchResult,
        records: &BTreeMap<Phn, PatientRecord>,
        at: DateTime<Utc>,
    ) -> Result<ReviewItem, MergeError> {
        if result.decision == Decision::NonMatch {
            return Err(MergeError::NotACandidate);
        }
        for phn in [&result.pair.0, &result.pair.1] {
            let record = records.get(phn).ok_or_else(|| MergeError::UnknownPhn(phn.clone()))?;
            if record.status.is_retired() {
                return Err(MergeError::AlreadyMerged(phn.clone()));
            }
        }
        let pair = result.ordered_pair();
        if let Some(existing) = self.pending_for(&pair).map(|i| i.id.clone()) {
            let item = self.items.get_mut(&existing).expect("pending item present");
            if result.total > item.result.total {
                item.pre_approved = result.decision == Decision::Match;
                item.result = result;
            }
            return Ok(item.clone());
        }
        self.issued += 1;
        let item = ReviewItem {
            id: format!("RV{:08}", self.issued),
            pre_approved: result.decision == Decision::Match,
            result,
            state: ReviewState::Pending,
            created_at: at,
            decided_at: None,
            decided_by: None,
            merge_id: None,
        };
        self.items.insert(item.id.clone(), item.clone());
        Ok(item)
    }

    pub(crate) fn pending_mut(&mut self, id: &str) -> Result<&mut ReviewItem, MergeError> {
        let item = self
            .items
            .get_mut(id)
            .ok_or_else(|| MergeError::UnknownItem(id.to_string()))?;
        if item.state != ReviewState::Pending {
            return Err(MergeError::ItemNotPending(id.to_string()));
        }
        Ok(item)
    }

    /// Drops pending items that mention `phn`. Decided items stay as history.
    pub(crate) fn drop_pending_involving(&mut self, phn: &Phn) {
        self.items
            .retain(|_, i| i.state != ReviewState::Pending || !i.result.involves(phn));
    }
}
