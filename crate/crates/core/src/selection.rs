//! Ranked candidate-set selection.
//!
//! The balanced strategy partitions a document's candidates by factuality
//! label, keeps the m factual candidates with the highest ROUGE and the m
//! non-factual candidates with the lowest ROUGE, and emits them as one
//! ranked list: factual group first, ROUGE descending inside both groups.
//! Documents that cannot supply the balanced set are rejected (never fewer
//! than 2 of each class, even when m < 2).
//!
//! Two ablation modes are kept for comparison runs: `all_factcc` ranks every
//! candidate by consistency probability alone (no balancing, no ROUGE), and
//! `factcc_only` picks the m highest- and m lowest-probability candidates,
//! ranked by probability.
//!
//! Every ordering uses one total order: ROUGE descending, then probability
//! descending, then candidate_index ascending (probability descending, then
//! index, for the ablations). "Lowest m" always means the suffix of that
//! order, so ties resolve the same way everywhere.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CandidateRecord, DocumentRecord};

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("m must be >= 1, got {0}")]
    InvalidM(usize),
    #[error(
        "candidate {doc_id}#{candidate_index} has no factuality verdict (scoring stage missing?)"
    )]
    MissingVerdict {
        doc_id: String,
        candidate_index: u32,
    },
    #[error("candidate {doc_id}#{candidate_index} has no ROUGE score (scoring stage missing?)")]
    MissingRouge {
        doc_id: String,
        candidate_index: u32,
    },
    #[error("mode `{0}` is not an ablation mode")]
    NotAnAblation(SelectionMode),
    #[error("invalid candidate: {0}")]
    InvalidCandidate(String),
}

/// Selection strategy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    #[default]
    Balanced,
    /// Ablation: rank ALL candidates by consistency probability.
    AllFactcc,
    /// Ablation: top/bottom m by probability, no ROUGE.
    FactccOnly,
}

impl SelectionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SelectionMode::Balanced => "balanced",
            SelectionMode::AllFactcc => "all_factcc",
            SelectionMode::FactccOnly => "factcc_only",
        }
    }
}

impl std::fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SelectionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "balanced" => Ok(SelectionMode::Balanced),
            "all_factcc" => Ok(SelectionMode::AllFactcc),
            "factcc_only" => Ok(SelectionMode::FactccOnly),
            other => Err(format!(
                "unknown selection mode `{other}` (expected balanced, all_factcc, or factcc_only)"
            )),
        }
    }
}

/// Why a document could not supply a candidate set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    NoCandidates,
    InsufficientFactual,
    InsufficientNonFactual,
    InsufficientBoth,
    /// Ablation pools that cannot fill their ranking.
    TooFewCandidates,
}

impl RejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::NoCandidates => "no_candidates",
            RejectReason::InsufficientFactual => "insufficient_factual",
            RejectReason::InsufficientNonFactual => "insufficient_non_factual",
            RejectReason::InsufficientBoth => "insufficient_both",
            RejectReason::TooFewCandidates => "too_few_candidates",
        }
    }
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The ordered candidate list attached to one document for training.
///
/// Rank 0 is the best candidate. Balanced and factcc_only sets are exactly
/// 2m long; all_factcc keeps every candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidateSet {
    pub doc_id: String,
    pub m: usize,
    pub mode: SelectionMode,
    pub ordered_candidates: Vec<CandidateRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectionOutcome {
    Selected(RankedCandidateSet),
    Rejected(RejectReason),
}

fn rouge_of(c: &CandidateRecord) -> Result<f64, SelectionError> {
    c.rouge.ok_or_else(|| SelectionError::MissingRouge {
        doc_id: c.doc_id.clone(),
        candidate_index: c.candidate_index,
    })
}

fn verdict_of(c: &CandidateRecord) -> Result<(bool, f64), SelectionError> {
    c.factuality
        .as_ref()
        .map(|v| (v.label, v.probability))
        .ok_or_else(|| SelectionError::MissingVerdict {
            doc_id: c.doc_id.clone(),
            candidate_index: c.candidate_index,
        })
}

/// Canonical quality order: ROUGE desc, probability desc, index asc.
fn by_quality(a: &CandidateRecord, b: &CandidateRecord) -> std::cmp::Ordering {
    let (ra, rb) = (a.rouge.unwrap_or(f64::NAN), b.rouge.unwrap_or(f64::NAN));
    let (pa, pb) = (
        a.factuality.as_ref().map_or(f64::NAN, |v| v.probability),
        b.factuality.as_ref().map_or(f64::NAN, |v| v.probability),
    );
    rb.total_cmp(&ra)
        .then(pb.total_cmp(&pa))
        .then(a.candidate_index.cmp(&b.candidate_index))
}

/// Ablation order: probability desc, index asc.
fn by_probability(a: &CandidateRecord, b: &CandidateRecord) -> std::cmp::Ordering {
    let (pa, pb) = (
        a.factuality.as_ref().map_or(f64::NAN, |v| v.probability),
        b.factuality.as_ref().map_or(f64::NAN, |v| v.probability),
    );
    pb.total_cmp(&pa)
        .then(a.candidate_index.cmp(&b.candidate_index))
}

fn check_scored(candidates: &[CandidateRecord], need_rouge: bool) -> Result<(), SelectionError> {
    for c in candidates {
        c.validate()
            .map_err(|e| SelectionError::InvalidCandidate(e.to_string()))?;
        verdict_of(c)?;
        if need_rouge {
            rouge_of(c)?;
        }
    }
    Ok(())
}

/// The balanced ranking strategy; see module docs.
///
/// Rejections: empty pool, or either class smaller than max(m, 2).
pub fn select_balanced(
    candidates: &[CandidateRecord],
    m: usize,
) -> Result<SelectionOutcome, SelectionError> {
    if m < 1 {
        return Err(SelectionError::InvalidM(m));
    }
    if candidates.is_empty() {
        return Ok(SelectionOutcome::Rejected(RejectReason::NoCandidates));
    }
    check_scored(candidates, true)?;

    let mut factual: Vec<&CandidateRecord> = Vec::new();
    let mut non_factual: Vec<&CandidateRecord> = Vec::new();
    for c in candidates {
        if c.factuality.as_ref().expect("checked above").label {
            factual.push(c);
        } else {
            non_factual.push(c);
        }
    }

    let need = m.max(2);
    match (factual.len() < need, non_factual.len() < need) {
        (true, true) => return Ok(SelectionOutcome::Rejected(RejectReason::InsufficientBoth)),
        (true, false) => {
            return Ok(SelectionOutcome::Rejected(
                RejectReason::InsufficientFactual,
            ))
        }
        (false, true) => {
            return Ok(SelectionOutcome::Rejected(
                RejectReason::InsufficientNonFactual,
            ))
        }
        (false, false) => {}
    }

    factual.sort_by(|a, b| by_quality(a, b));
    non_factual.sort_by(|a, b| by_quality(a, b));
    let mut ordered: Vec<CandidateRecord> = Vec::with_capacity(2 * m);
    // Top m factual by highest ROUGE, then the m non-factual with the lowest
    // ROUGE (the suffix of the same order), both presented ROUGE-descending.
    ordered.extend(factual[..m].iter().map(|c| (*c).clone()));
    ordered.extend(
        non_factual[non_factual.len() - m..]
            .iter()
            .map(|c| (*c).clone()),
    );

    Ok(SelectionOutcome::Selected(RankedCandidateSet {
        doc_id: candidates[0].doc_id.clone(),
        m,
        mode: SelectionMode::Balanced,
        ordered_candidates: ordered,
    }))
}

/// The two ablation strategies; see module docs.
pub fn select_ablation(
    candidates: &[CandidateRecord],
    mode: SelectionMode,
    m: usize,
) -> Result<SelectionOutcome, SelectionError> {
    if m < 1 {
        return Err(SelectionError::InvalidM(m));
    }
    if candidates.is_empty() {
        return Ok(SelectionOutcome::Rejected(RejectReason::NoCandidates));
    }
    check_scored(candidates, false)?;

    let mut pool: Vec<&CandidateRecord> = candidates.iter().collect();
    pool.sort_by(|a, b| by_probability(a, b));

    let ordered: Vec<CandidateRecord> = match mode {
        SelectionMode::AllFactcc => {
            if pool.len() < 2 {
                return Ok(SelectionOutcome::Rejected(RejectReason::TooFewCandidates));
            }
            pool.iter().map(|c| (*c).clone()).collect()
        }
        SelectionMode::FactccOnly => {
            if pool.len() < 2 * m {
                return Ok(SelectionOutcome::Rejected(RejectReason::TooFewCandidates));
            }
            let mut picked: Vec<CandidateRecord> = pool[..m].iter().map(|c| (*c).clone()).collect();
            picked.extend(pool[pool.len() - m..].iter().map(|c| (*c).clone()));
            picked
        }
        SelectionMode::Balanced => return Err(SelectionError::NotAnAblation(mode)),
    };

    Ok(SelectionOutcome::Selected(RankedCandidateSet {
        doc_id: candidates[0].doc_id.clone(),
        m,
        mode,
        ordered_candidates: ordered,
    }))
}

/// Dispatch on mode.
pub fn select(
    candidates: &[CandidateRecord],
    mode: SelectionMode,
    m: usize,
) -> Result<SelectionOutcome, SelectionError> {
    match mode {
        SelectionMode::Balanced => select_balanced(candidates, m),
        SelectionMode::AllFactcc | SelectionMode::FactccOnly => {
            select_ablation(candidates, mode, m)
        }
    }
}

/// Accept/reject counters from one training-set build.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionStats {
    pub total_documents: usize,
    pub accepted: usize,
    /// Rejection counts keyed by [`RejectReason::as_str`].
    pub rejected: BTreeMap<String, usize>,
}

impl SelectionStats {
    pub fn rejected_total(&self) -> usize {
        self.rejected.values().sum()
    }

    /// Human-readable one-block summary for CLI output.
    pub fn render(&self) -> String {
        let mut out = format!(
            "documents: {}\naccepted: {}\nrejected: {}\n",
            self.total_documents,
            self.accepted,
            self.rejected_total()
        );
        for (reason, count) in &self.rejected {
            out.push_str(&format!("  {reason}: {count}\n"));
        }
        out
    }
}

/// Apply the selection rule to every document, in dataset order.
///
/// A document with no cached candidates counts as a `no_candidates`
/// rejection. Output pairs keep dataset order, so the result is
/// deterministic for a fixed dataset and cache.
pub fn build_training_set(
    docs: &[DocumentRecord],
    cache: &BTreeMap<String, Vec<CandidateRecord>>,
    mode: SelectionMode,
    m: usize,
) -> Result<(Vec<(DocumentRecord, RankedCandidateSet)>, SelectionStats), SelectionError> {
    let mut accepted = Vec::new();
    let mut stats = SelectionStats {
        total_documents: docs.len(),
        ..SelectionStats::default()
    };
    for doc in docs {
        let outcome = match cache.get(&doc.id) {
            None => SelectionOutcome::Rejected(RejectReason::NoCandidates),
            Some(candidates) => select(candidates, mode, m)?,
        };
        match outcome {
            SelectionOutcome::Selected(set) => {
                stats.accepted += 1;
                accepted.push((doc.clone(), set));
            }
            SelectionOutcome::Rejected(reason) => {
                *stats
                    .rejected
                    .entry(reason.as_str().to_string())
                    .or_insert(0) += 1;
            }
        }
    }
    Ok((accepted, stats))
}
