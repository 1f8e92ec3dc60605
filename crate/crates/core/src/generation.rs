//! Candidate production: decoding parameters, the generator-backend
//! interface, per-document candidate assembly, and deduplication.
//!
//! Diverse beam search is a decoding contract on the backend (grouped beams
//! plus a diversity penalty); this module validates parameters and output
//! shape but does not implement decoding. The in-repo [`crate::toy`] backend
//! honours the contract; real summarizers plug in behind the same trait.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize_whitespace, CandidateRecord, DocumentRecord};

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("invalid decoding parameters: {0}")]
    InvalidParams(String),
    #[error("backend `{backend}` failed: {message}")]
    Backend { backend: String, message: String },
}

/// Diverse-beam-search decoding knobs.
///
/// `beam_size` is the per-group beam width, so a backend explores
/// `beam_size * num_beam_groups` beams in total and can return at most that
/// many candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub num_candidates: usize,
    pub beam_size: usize,
    pub num_beam_groups: usize,
    pub diversity_penalty: f64,
    pub length_penalty: f64,
    pub min_length: usize,
    pub max_length: usize,
}

impl DecodingParams {
    /// XSUM-style preset: 16 candidates from 2 groups of 8 beams.
    pub fn xsum() -> Self {
        DecodingParams {
            num_candidates: 16,
            beam_size: 8,
            num_beam_groups: 2,
            diversity_penalty: 1.0,
            length_penalty: 0.6,
            min_length: 11,
            max_length: 62,
        }
    }

    /// CNN/DM-style preset: 16 candidates from 4 groups of 4 beams.
    pub fn cnndm() -> Self {
        DecodingParams {
            num_candidates: 16,
            beam_size: 4,
            num_beam_groups: 4,
            diversity_penalty: 1.0,
            length_penalty: 2.0,
            min_length: 55,
            max_length: 140,
        }
    }

    /// Desk-scale preset for the toy backend.
    pub fn toy() -> Self {
        DecodingParams {
            num_candidates: 16,
            beam_size: 4,
            num_beam_groups: 4,
            diversity_penalty: 2.0,
            length_penalty: 1.0,
            min_length: 2,
            max_length: 10,
        }
    }

    pub fn validate(&self) -> Result<(), GenerationError> {
        let mut problems = Vec::new();
        if self.num_candidates < 1 {
            problems.push("num_candidates must be >= 1".to_string());
        }
        if self.beam_size < 1 {
            problems.push("beam_size must be >= 1".to_string());
        }
        if self.num_beam_groups < 1 {
            problems.push("num_beam_groups must be >= 1".to_string());
        }
        if self.diversity_penalty < 0.0 || !self.diversity_penalty.is_finite() {
            problems.push(format!(
                "diversity_penalty must be a finite value >= 0, got {}",
                self.diversity_penalty
            ));
        }
        if !self.length_penalty.is_finite() {
            problems.push("length_penalty must be finite".to_string());
        }
        if self.min_length > self.max_length {
            problems.push(format!(
                "min_length {} exceeds max_length {}",
                self.min_length, self.max_length
            ));
        }
        if self.num_candidates > self.beam_size * self.num_beam_groups {
            problems.push(format!(
                "num_candidates {} exceeds beam_size {} * num_beam_groups {}",
                self.num_candidates, self.beam_size, self.num_beam_groups
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(GenerationError::InvalidParams(problems.join("; ")))
        }
    }
}

/// One decoded summary with its generation-time token log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSummary {
    pub text: String,
    pub token_logprobs: Vec<f64>,
}

/// A summarization model usable for candidate production and scoring.
///
/// Contract: `score(source, text)` on a summary the backend itself generated
/// reproduces the generation-time `token_logprobs` within 1e-5, so the stored
/// values can stand in for teacher-forced scores.
pub trait GeneratorBackend {
    fn tag(&self) -> &str;

    /// Identifies the tokenizer so downstream stages can detect mixing.
    fn tokenizer_id(&self) -> String;

    /// Decode up to `params.num_candidates` summaries, best-ranked first.
    fn generate(
        &self,
        source: &str,
        params: &DecodingParams,
    ) -> Result<Vec<GeneratedSummary>, GenerationError>;

    /// Teacher-forced per-token log-probabilities of `target` given `source`.
    fn score(&self, source: &str, target: &str) -> Result<Vec<f64>, GenerationError>;

    /// Whether one instance may be invoked from several threads at once.
    fn shareable(&self) -> bool {
        false
    }
}

/// Decode candidates for one document from every backend in order.
///
/// `candidate_index` is assigned deterministically: backend order first, then
/// beam rank. A backend failure aborts with an error naming the backend; all
/// backends yielding zero candidates is not an error here (the document is
/// flagged and skipped downstream).
pub fn generate_candidates(
    doc: &DocumentRecord,
    backends: &[(&dyn GeneratorBackend, DecodingParams)],
) -> Result<Vec<CandidateRecord>, GenerationError> {
    if backends.is_empty() {
        return Err(GenerationError::InvalidParams(
            "at least one backend is required".into(),
        ));
    }
    for (_, params) in backends {
        params.validate()?;
    }
    let mut records = Vec::new();
    let mut index = 0u32;
    for (backend, params) in backends {
        let summaries =
            backend
                .generate(&doc.source, params)
                .map_err(|e| GenerationError::Backend {
                    backend: backend.tag().to_string(),
                    message: e.to_string(),
                })?;
        if summaries.len() > params.num_candidates {
            return Err(GenerationError::Backend {
                backend: backend.tag().to_string(),
                message: format!(
                    "returned {} candidates, more than num_candidates {}",
                    summaries.len(),
                    params.num_candidates
                ),
            });
        }
        for summary in summaries {
            records.push(CandidateRecord {
                doc_id: doc.id.clone(),
                candidate_index: index,
                text: summary.text,
                generator_tag: backend.tag().to_string(),
                token_logprobs: summary.token_logprobs,
                factuality: None,
                rouge: None,
            });
            index += 1;
        }
    }
    if records.is_empty() {
        log::warn!("document `{}`: zero candidates from all backends", doc.id);
    }
    Ok(records)
}

/// Drop records whose whitespace-normalized, case-folded text duplicates an
/// earlier record. Order (and original `candidate_index` values) are kept.
pub fn dedupe(candidates: Vec<CandidateRecord>) -> Vec<CandidateRecord> {
    let mut seen = std::collections::HashSet::new();
    candidates
        .into_iter()
        .filter(|c| seen.insert(normalize_whitespace(&c.text).to_lowercase()))
        .collect()
}
