//! Self-contained toy summarizer: a tiny-vocabulary autoregressive model
//! with explicit softmax tables, plus a diverse-beam decoder that makes it a
//! [`GeneratorBackend`].
//!
//! The model is a bigram table over W words plus one boundary state: logits
//! for the next token are `transition[prev][next]` with `doc_bias[next]`
//! added when `next` occurs in the source document (the copy mechanism).
//! Row W is the start-of-sequence context; column W is end-of-sequence.
//! Parameters flatten to one vector, transition row-major first and then
//! doc_bias, so optimizers and finite-difference checks can index them
//! without knowing the layout.
//!
//! Decoding follows the grouped diverse-beam contract: groups expand in a
//! fixed order each step, and a token already chosen by earlier groups at
//! the same step is penalized by `diversity_penalty` per use, on the
//! selection score only. True token log-probabilities are tracked untouched
//! and are what candidates carry; `score` reproduces them exactly. Finished
//! hypotheses rank by (word log-probability sum + end-token log-probability)
//! divided by word_count^length_penalty, higher first; ties resolve by group
//! order, then finish order. The backend never emits an empty summary: an
//! effective minimum length of 1 applies even when min_length is 0.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::generation::{DecodingParams, GeneratedSummary, GenerationError, GeneratorBackend};
use crate::metrics::tokenize_for_metrics;
use crate::training::TrainableModel;

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("model file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file is not valid JSON: {0}")]
    Format(#[from] serde_json::Error),
}

/// Fixed word list. Every word must survive metric tokenization unchanged,
/// which guarantees decode → tokenize round trips.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ToyVocab {
    words: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl ToyVocab {
    pub fn new<I, S>(words: I) -> Result<Self, ToyError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let words: Vec<String> = words.into_iter().map(Into::into).collect();
        if words.is_empty() {
            return Err(ToyError::InvalidVocab(
                "vocabulary must not be empty".into(),
            ));
        }
        let mut index = BTreeMap::new();
        for (i, word) in words.iter().enumerate() {
            if tokenize_for_metrics(word) != [word.clone()] {
                return Err(ToyError::InvalidVocab(format!(
                    "word `{word}` does not survive tokenization unchanged"
                )));
            }
            if index.insert(word.clone(), i as u32).is_some() {
                return Err(ToyError::InvalidVocab(format!("duplicate word `{word}`")));
            }
        }
        Ok(ToyVocab { words, index })
    }

    /// Number of words W; token ids run 0..W with W itself the end token.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn eos(&self) -> u32 {
        self.words.len() as u32
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    /// Metric-tokenize and map to ids; out-of-vocabulary tokens are dropped.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize_for_metrics(text)
            .iter()
            .filter_map(|t| self.id(t))
            .collect()
    }

    pub fn decode(&self, tokens: &[u32]) -> String {
        tokens
            .iter()
            .map(|&t| self.word(t))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl TryFrom<Vec<String>> for ToyVocab {
    type Error = String;

    fn try_from(words: Vec<String>) -> Result<Self, String> {
        ToyVocab::new(words).map_err(|e| e.to_string())
    }
}

impl From<ToyVocab> for Vec<String> {
    fn from(vocab: ToyVocab) -> Vec<String> {
        vocab.words
    }
}

pub const DEFAULT_MAX_SOURCE_TOKENS: usize = 64;

/// The differentiable model; see module docs for the parameterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    vocab: ToyVocab,
    /// (W+1)×(W+1) logits, row-major; row = context, column = next token.
    transition: Vec<f64>,
    /// Per-word logit bonus applied when the word occurs in the source.
    doc_bias: Vec<f64>,
    /// In-vocabulary token budget when reading a source document.
    pub max_source_tokens: usize,
}

impl ToyModel {
    /// Seeded initialization: small transition noise plus a positive copy
    /// bias, so the untrained model already prefers words from the source.
    pub fn new(vocab: ToyVocab, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w1 = vocab.len() + 1;
        let transition = (0..w1 * w1)
            .map(|_| rng.random_range(-0.05..0.05))
            .collect();
        let doc_bias = (0..vocab.len())
            .map(|_| 1.5 + rng.random_range(-0.05..0.05))
            .collect();
        ToyModel {
            vocab,
            transition,
            doc_bias,
            max_source_tokens: DEFAULT_MAX_SOURCE_TOKENS,
        }
    }

    pub fn vocab(&self) -> &ToyVocab {
        &self.vocab
    }

    pub fn validate(&self) -> Result<(), ToyError> {
        let w1 = self.vocab.len() + 1;
        if self.transition.len() != w1 * w1 {
            return Err(ToyError::InvalidModel(format!(
                "transition table has {} entries, expected {}",
                self.transition.len(),
                w1 * w1
            )));
        }
        if self.doc_bias.len() != self.vocab.len() {
            return Err(ToyError::InvalidModel(format!(
                "doc_bias has {} entries, expected {}",
                self.doc_bias.len(),
                self.vocab.len()
            )));
        }
        if self.max_source_tokens == 0 {
            return Err(ToyError::InvalidModel(
                "max_source_tokens must be >= 1".into(),
            ));
        }
        if let Some(bad) = self
            .transition
            .iter()
            .chain(self.doc_bias.iter())
            .find(|v| !v.is_finite())
        {
            return Err(ToyError::InvalidModel(format!(
                "non-finite parameter {bad}"
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), ToyError> {
        self.validate()?;
        Ok(std::fs::write(path, serde_json::to_vec_pretty(self)?)?)
    }

    pub fn load(path: &Path) -> Result<Self, ToyError> {
        let model: ToyModel = serde_json::from_slice(&std::fs::read(path)?)?;
        model.validate()?;
        Ok(model)
    }

    /// Row index of a context; `None` is start-of-sequence.
    fn row(&self, prev: Option<u32>) -> usize {
        prev.map_or(self.vocab.len(), |t| t as usize)
    }

    /// Which vocabulary words occur in the source, within the token budget.
    fn source_mask(&self, source: &str) -> Vec<bool> {
        let mut mask = vec![false; self.vocab.len()];
        for id in self
            .vocab
            .encode(source)
            .into_iter()
            .take(self.max_source_tokens)
        {
            mask[id as usize] = true;
        }
        mask
    }

    /// log softmax over the W+1 next-token logits for one context.
    fn log_probs(&self, prev: Option<u32>, mask: &[bool]) -> Vec<f64> {
        let w = self.vocab.len();
        let start = self.row(prev) * (w + 1);
        let mut z: Vec<f64> = self.transition[start..start + w + 1].to_vec();
        for (u, z_u) in z.iter_mut().enumerate().take(w) {
            if mask[u] {
                *z_u += self.doc_bias[u];
            }
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for z_u in &mut z {
            *z_u -= lse;
        }
        z
    }

    /// Shared gradient walk. Adds `step_weight · ∂log p(token_t)/∂θ` for
    /// every teacher-forced step (optionally including the end-of-sequence
    /// step) into `grads`. Per step and parameter the contribution is
    /// `step_weight · (1[u = target] − p_u)` on the context row, mirrored
    /// onto `doc_bias[u]` for source words.
    fn accumulate_steps(
        &self,
        source: &str,
        target: &[u32],
        include_eos: bool,
        step_weight: f64,
        grads: &mut [f64],
    ) {
        assert_eq!(
            grads.len(),
            self.num_params(),
            "gradient buffer size mismatch"
        );
        let w = self.vocab.len();
        let bias_base = (w + 1) * (w + 1);
        let mask = self.source_mask(source);
        let mut prev: Option<u32> = None;
        let eos = self.vocab.eos();
        let steps = target.iter().copied().chain(include_eos.then_some(eos));
        for token in steps {
            let lp = self.log_probs(prev, &mask);
            let row = self.row(prev) * (w + 1);
            for (u, lp_u) in lp.iter().enumerate() {
                let indicator = if u as u32 == token { 1.0 } else { 0.0 };
                let g = step_weight * (indicator - lp_u.exp());
                grads[row + u] += g;
                if u < w && mask[u] {
                    grads[bias_base + u] += g;
                }
            }
            prev = Some(token);
        }
    }
}

impl TrainableModel for ToyModel {
    fn num_params(&self) -> usize {
        let w1 = self.vocab.len() + 1;
        w1 * w1 + self.vocab.len()
    }

    fn param(&self, index: usize) -> f64 {
        let t = self.transition.len();
        if index < t {
            self.transition[index]
        } else {
            self.doc_bias[index - t]
        }
    }

    fn set_param(&mut self, index: usize, value: f64) {
        let t = self.transition.len();
        if index < t {
            self.transition[index] = value;
        } else {
            self.doc_bias[index - t] = value;
        }
    }

    fn tokenize(&self, text: &str) -> Vec<u32> {
        self.vocab.encode(text)
    }

    fn token_logprobs(&self, source: &str, target: &[u32]) -> Vec<f64> {
        let mask = self.source_mask(source);
        let mut prev: Option<u32> = None;
        let mut out = Vec::with_capacity(target.len());
        for &token in target {
            out.push(self.log_probs(prev, &mask)[token as usize]);
            prev = Some(token);
        }
        out
    }

    fn cross_entropy(&self, source: &str, target: &[u32]) -> f64 {
        let mask = self.source_mask(source);
        let total: f64 = self.token_logprobs(source, target).iter().sum();
        let eos_lp = self.log_probs(target.last().copied(), &mask)[self.vocab.eos() as usize];
        -(total + eos_lp) / (target.len() + 1) as f64
    }

    fn accumulate_logprob_grad(
        &self,
        source: &str,
        target: &[u32],
        weight: f64,
        grads: &mut [f64],
    ) {
        self.accumulate_steps(source, target, false, weight, grads);
    }

    fn accumulate_ce_grad(&self, source: &str, target: &[u32], weight: f64, grads: &mut [f64]) {
        let steps = (target.len() + 1) as f64;
        self.accumulate_steps(source, target, true, -weight / steps, grads);
    }

    fn dump_state(&self) -> String {
        let l2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        format!(
            "toy model: vocab={}, params={}, transition_l2={:.6}, doc_bias_l2={:.6}",
            self.vocab.len(),
            self.num_params(),
            l2(&self.transition),
            l2(&self.doc_bias)
        )
    }
}

/// One alive hypothesis during decoding.
#[derive(Clone)]
struct Beam {
    tokens: Vec<u32>,
    word_logprobs: Vec<f64>,
    /// True log-probability sum of the words (no penalties, no end token).
    true_sum: f64,
    /// Selection score: true_sum plus accumulated diversity penalties.
    select: f64,
}

struct Finished {
    tokens: Vec<u32>,
    word_logprobs: Vec<f64>,
    /// (true_sum + end-token log-probability) / word_count^length_penalty.
    rank: f64,
}

/// [`GeneratorBackend`] over a [`ToyModel`]; see module docs for the
/// decoding rules.
pub struct ToyBackend {
    model: ToyModel,
    tag: String,
}

impl ToyBackend {
    pub fn new(model: ToyModel, tag: impl Into<String>) -> Self {
        ToyBackend {
            model,
            tag: tag.into(),
        }
    }

    pub fn model(&self) -> &ToyModel {
        &self.model
    }
}

impl GeneratorBackend for ToyBackend {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn tokenizer_id(&self) -> String {
        let mut hasher = Sha256::new();
        for word in &self.model.vocab.words {
            hasher.update(word.as_bytes());
            hasher.update(b"\n");
        }
        let digest = hex::encode(hasher.finalize());
        format!("toy-{}-{}", self.model.vocab.len(), &digest[..12])
    }

    fn generate(
        &self,
        source: &str,
        params: &DecodingParams,
    ) -> Result<Vec<GeneratedSummary>, GenerationError> {
        params.validate()?;
        let model = &self.model;
        let w = model.vocab.len();
        let eos = model.vocab.eos() as usize;
        let mask = model.source_mask(source);
        let min_len = params.min_length.max(1);
        let max_len = params.max_length.max(min_len);

        struct Group {
            alive: Vec<Beam>,
            done: Vec<Finished>,
        }
        let mut groups: Vec<Group> = (0..params.num_beam_groups)
            .map(|_| Group {
                alive: vec![Beam {
                    tokens: Vec::new(),
                    word_logprobs: Vec::new(),
                    true_sum: 0.0,
                    select: 0.0,
                }],
                done: Vec::new(),
            })
            .collect();

        // All alive beams in a group share the same length (they grow in
        // lockstep), so the step index fixes which tokens are legal.
        for step in 0..=max_len {
            let mut token_use = vec![0usize; w + 1];
            for group in &mut groups {
                if group.alive.is_empty() {
                    continue;
                }
                struct Expansion {
                    select: f64,
                    token: usize,
                    beam: usize,
                    logp: f64,
                }
                let mut expansions = Vec::new();
                for (bi, beam) in group.alive.iter().enumerate() {
                    let lp = model.log_probs(beam.tokens.last().copied(), &mask);
                    for (token, lp_u) in lp.iter().enumerate() {
                        if token == eos && step < min_len {
                            continue;
                        }
                        if token != eos && step >= max_len {
                            continue;
                        }
                        let select =
                            beam.select + lp_u - params.diversity_penalty * token_use[token] as f64;
                        expansions.push(Expansion {
                            select,
                            token,
                            beam: bi,
                            logp: *lp_u,
                        });
                    }
                }
                expansions.sort_by(|a, b| {
                    b.select
                        .total_cmp(&a.select)
                        .then(a.token.cmp(&b.token))
                        .then(a.beam.cmp(&b.beam))
                });
                let mut next_alive = Vec::with_capacity(params.beam_size);
                for exp in expansions.into_iter().take(params.beam_size) {
                    let parent = &group.alive[exp.beam];
                    token_use[exp.token] += 1;
                    if exp.token == eos {
                        let len = parent.tokens.len() as f64;
                        group.done.push(Finished {
                            tokens: parent.tokens.clone(),
                            word_logprobs: parent.word_logprobs.clone(),
                            rank: (parent.true_sum + exp.logp) / len.powf(params.length_penalty),
                        });
                    } else {
                        let mut beam = parent.clone();
                        beam.tokens.push(exp.token as u32);
                        beam.word_logprobs.push(exp.logp);
                        beam.true_sum += exp.logp;
                        beam.select = exp.select;
                        next_alive.push(beam);
                    }
                }
                group.alive = next_alive;
            }
        }

        let mut finished: Vec<(usize, usize, Finished)> = Vec::new();
        for (gi, group) in groups.into_iter().enumerate() {
            debug_assert!(
                group.alive.is_empty(),
                "all beams must finish by max_length"
            );
            for (fi, hyp) in group.done.into_iter().enumerate() {
                finished.push((gi, fi, hyp));
            }
        }
        finished.sort_by(|a, b| {
            b.2.rank
                .total_cmp(&a.2.rank)
                .then(a.0.cmp(&b.0))
                .then(a.1.cmp(&b.1))
        });

        Ok(finished
            .into_iter()
            .take(params.num_candidates)
            .map(|(_, _, hyp)| GeneratedSummary {
                text: model.vocab.decode(&hyp.tokens),
                token_logprobs: hyp.word_logprobs,
            })
            .collect())
    }

    fn score(&self, source: &str, target: &str) -> Result<Vec<f64>, GenerationError> {
        let tokens = self.model.tokenize(target);
        Ok(self.model.token_logprobs(source, &tokens))
    }

    fn shareable(&self) -> bool {
        true
    }
}
