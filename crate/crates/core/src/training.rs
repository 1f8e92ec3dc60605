//! Numerical core: length-normalized sequence scoring, the pairwise
//! rank-margin contrastive loss, the combined objective, and the fine-tuning
//! loop.
//!
//! The three scalar operations mirror the training objective exactly:
//!
//! - `sequence_score`: f(S) = (Σ_t log p(s_t | D, S_<t)) / |S|^α
//! - `contrastive_loss`: L_CL = Σ_i Σ_{j>i} max(0, f(S_j) − f(S_i) + (j−i)·λ)
//!   over candidates ordered by target rank (index 0 = best)
//! - `combined_loss`: L = mle_weight·L_CE + γ·L_CL
//!
//! Candidate scores are recomputed by teacher forcing under the CURRENT
//! model parameters each step (they move with θ); the cached generation-time
//! log-probabilities are never used for training. The loop is strictly
//! sequential and never shuffles: batches are taken in training-set order
//! each epoch, which together with a fixed seed makes training logs
//! byte-reproducible.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::DocumentRecord;
use crate::selection::RankedCandidateSet;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("sequence score is undefined for length 0")]
    EmptyScore,
    #[error("declared length {declared} does not match {actual} token log-probabilities")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("non-finite loss: {0}")]
    NonFinite(String),
    #[error("training diverged at step {step}: {message}; model state: {state}")]
    Diverged {
        step: u64,
        message: String,
        state: String,
    },
}

/// Knobs of the length-normalized sequence score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    /// Length-penalty exponent α; the paper introduces it without publishing
    /// a value, so 1.0 is the documented default.
    pub alpha: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig { alpha: 1.0 }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return Err(TrainingError::InvalidConfig(format!(
                "alpha must be a finite value > 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Scalar weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Per-rank-distance hinge margin λ; pair (i, j) uses (j−i)·λ.
    pub lambda_margin: f64,
    /// Weight γ on the contrastive term.
    pub gamma: f64,
    /// Weight on the cross-entropy term.
    pub mle_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig::xsum()
    }
}

impl LossConfig {
    /// XSUM-style defaults: margin 0.001, ranking weight 10, mle weight 1.
    pub fn xsum() -> Self {
        LossConfig {
            lambda_margin: 0.001,
            gamma: 10.0,
            mle_weight: 1.0,
        }
    }

    /// CNN/DM-style defaults: mle weight drops to 0.1.
    pub fn cnndm() -> Self {
        LossConfig {
            lambda_margin: 0.001,
            gamma: 10.0,
            mle_weight: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), TrainingError> {
        let mut problems = Vec::new();
        for (name, value) in [
            ("lambda_margin", self.lambda_margin),
            ("gamma", self.gamma),
            ("mle_weight", self.mle_weight),
        ] {
            if !value.is_finite() || value < 0.0 {
                problems.push(format!("{name} must be a finite value >= 0, got {value}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(TrainingError::InvalidConfig(problems.join("; ")))
        }
    }
}

/// Which checkpoint the loop keeps as its final artifact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointRule {
    /// Keep the snapshot with the lowest validation cross-entropy.
    #[default]
    MinValidationCe,
}

/// Optimizer-loop schedule: warmup-then-linear-decay learning rate,
/// epoch/batch structure, and validation cadence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSchedule {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub epochs: usize,
    /// Effective batch size (documents per optimizer step).
    pub batch_size: usize,
    /// Validation cross-entropy is measured every this many steps.
    pub validation_interval: usize,
    pub checkpoint_rule: CheckpointRule,
}

impl TrainingSchedule {
    /// XSUM-style schedule (effective batch 16 = per-device 1 × accumulation 16).
    pub fn xsum() -> Self {
        TrainingSchedule {
            peak_lr: 1e-4,
            warmup_steps: 500,
            epochs: 5,
            batch_size: 16,
            validation_interval: 1600,
            checkpoint_rule: CheckpointRule::MinValidationCe,
        }
    }

    /// CNN/DM-style schedule.
    pub fn cnndm() -> Self {
        TrainingSchedule {
            peak_lr: 3e-5,
            ..TrainingSchedule::xsum()
        }
    }

    /// Desk-scale schedule for the toy model and synthetic corpus.
    pub fn toy() -> Self {
        TrainingSchedule {
            peak_lr: 0.05,
            warmup_steps: 20,
            epochs: 12,
            batch_size: 4,
            validation_interval: 25,
            checkpoint_rule: CheckpointRule::MinValidationCe,
        }
    }

    pub fn validate(&self) -> Result<(), TrainingError> {
        let mut problems = Vec::new();
        if !self.peak_lr.is_finite() || self.peak_lr <= 0.0 {
            problems.push(format!(
                "peak_lr must be a finite value > 0, got {}",
                self.peak_lr
            ));
        }
        if self.batch_size < 1 {
            problems.push("batch_size must be >= 1".to_string());
        }
        if self.validation_interval < 1 {
            problems.push("validation_interval must be >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(TrainingError::InvalidConfig(problems.join("; ")))
        }
    }

    /// Learning rate at 1-based `step` of `total_steps`: linear ramp to
    /// `peak_lr` over the warmup, then linear decay to 0 at the final step.
    pub fn lr_at(&self, step: u64, total_steps: u64) -> f64 {
        let warmup = self.warmup_steps as u64;
        if warmup > 0 && step <= warmup {
            return self.peak_lr * step as f64 / warmup as f64;
        }
        if total_steps <= warmup {
            return self.peak_lr;
        }
        self.peak_lr * total_steps.saturating_sub(step) as f64 / (total_steps - warmup) as f64
    }
}

/// Everything `training_step`/`fine_tune` need besides the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfigs {
    pub score: ScoreConfig,
    pub loss: LossConfig,
    /// Token budget applied to tokenized candidate and reference sequences.
    pub max_target_tokens: usize,
}

impl Default for TrainingConfigs {
    fn default() -> Self {
        TrainingConfigs {
            score: ScoreConfig::default(),
            loss: LossConfig::default(),
            max_target_tokens: 512,
        }
    }
}

impl TrainingConfigs {
    pub fn validate(&self) -> Result<(), TrainingError> {
        self.score.validate()?;
        self.loss.validate()?;
        if self.max_target_tokens == 0 {
            return Err(TrainingError::InvalidConfig(
                "max_target_tokens must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// f(S) = (Σ token log-probabilities) / length^α.
///
/// `length` must equal the number of log-probabilities; length 0 is an error
/// (the score is undefined).
pub fn sequence_score(
    token_logprobs: &[f64],
    length: usize,
    cfg: &ScoreConfig,
) -> Result<f64, TrainingError> {
    if length == 0 {
        return Err(TrainingError::EmptyScore);
    }
    if length != token_logprobs.len() {
        return Err(TrainingError::LengthMismatch {
            declared: length,
            actual: token_logprobs.len(),
        });
    }
    let sum: f64 = token_logprobs.iter().sum();
    Ok(sum / (length as f64).powf(cfg.alpha))
}

/// Pairwise rank-margin hinge over scores ordered by target rank
/// (index 0 = best): Σ_{i<j} max(0, scores[j] − scores[i] + (j−i)·λ).
///
/// Fewer than two scores yield 0 (no pairs).
pub fn contrastive_loss(scores: &[f64], cfg: &LossConfig) -> f64 {
    let mut total = 0.0;
    for i in 0..scores.len() {
        for j in (i + 1)..scores.len() {
            let margin = (j - i) as f64 * cfg.lambda_margin;
            total += (scores[j] - scores[i] + margin).max(0.0);
        }
    }
    total
}

/// L = mle_weight·ce + γ·cl. Non-finite inputs (or result) are an error: they
/// signal training divergence.
pub fn combined_loss(ce_loss: f64, cl_loss: f64, cfg: &LossConfig) -> Result<f64, TrainingError> {
    if !ce_loss.is_finite() || !cl_loss.is_finite() {
        return Err(TrainingError::NonFinite(format!(
            "ce={ce_loss}, cl={cl_loss}"
        )));
    }
    let total = cfg.mle_weight * ce_loss + cfg.gamma * cl_loss;
    if !total.is_finite() {
        return Err(TrainingError::NonFinite(format!(
            "combined loss overflowed: ce={ce_loss}, cl={cl_loss}"
        )));
    }
    Ok(total)
}

/// A model the loop can differentiate through.
///
/// Parameters are exposed as a flat, stably-indexed f64 vector so optimizers
/// and finite-difference checks need no knowledge of the model's structure.
/// Gradient accumulation adds `weight · ∂(quantity)/∂θ` into `grads`.
pub trait TrainableModel: Clone {
    fn num_params(&self) -> usize;
    fn param(&self, index: usize) -> f64;
    fn set_param(&mut self, index: usize, value: f64);

    /// Tokenize under the model's own tokenizer; unknown tokens are dropped.
    fn tokenize(&self, text: &str) -> Vec<u32>;

    /// Teacher-forced log p(target_t | source, target_<t) per token.
    fn token_logprobs(&self, source: &str, target: &[u32]) -> Vec<f64>;

    /// Token-mean cross-entropy of `target` (including the end-of-sequence
    /// step) given `source`.
    fn cross_entropy(&self, source: &str, target: &[u32]) -> f64;

    /// grads += weight · ∂(Σ_t log p(target_t))/∂θ.
    fn accumulate_logprob_grad(&self, source: &str, target: &[u32], weight: f64, grads: &mut [f64]);

    /// grads += weight · ∂(cross_entropy)/∂θ.
    fn accumulate_ce_grad(&self, source: &str, target: &[u32], weight: f64, grads: &mut [f64]);

    /// Compact diagnostic dump for divergence reports.
    fn dump_state(&self) -> String;
}

/// Adam with the usual (0.9, 0.999, 1e-8) defaults and bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn apply<M: TrainableModel>(&mut self, model: &mut M, grads: &[f64], lr: f64) {
        assert_eq!(
            grads.len(),
            self.m.len(),
            "gradient size does not match optimizer state"
        );
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            model.set_param(
                i,
                model.param(i) - lr * m_hat / (v_hat.sqrt() + self.epsilon),
            );
        }
    }
}

/// Scalar loss components of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    /// Mean reference cross-entropy over contributing documents.
    pub ce: f64,
    /// Mean contrastive loss over contributing documents.
    pub cl: f64,
    pub total: f64,
    pub contributing_docs: usize,
}

struct PreparedDoc {
    source: String,
    reference: Vec<u32>,
    /// Tokenized candidates in rank order, empty tokenizations dropped.
    candidates: Vec<Vec<u32>>,
}

fn prepare_doc<M: TrainableModel>(
    model: &M,
    doc: &DocumentRecord,
    set: &RankedCandidateSet,
    max_target_tokens: usize,
) -> Option<PreparedDoc> {
    let mut candidates = Vec::with_capacity(set.ordered_candidates.len());
    for candidate in &set.ordered_candidates {
        let mut tokens = model.tokenize(&candidate.text);
        tokens.truncate(max_target_tokens);
        if tokens.is_empty() {
            log::warn!(
                "doc `{}`: candidate {} tokenizes to nothing under the model; dropped from its set",
                doc.id,
                candidate.candidate_index
            );
            continue;
        }
        candidates.push(tokens);
    }
    if candidates.len() < 2 {
        log::warn!(
            "doc `{}`: fewer than 2 scorable candidates; skipped this step",
            doc.id
        );
        return None;
    }
    let mut reference = model.tokenize(&doc.reference);
    reference.truncate(max_target_tokens);
    if reference.is_empty() {
        log::warn!(
            "doc `{}`: reference tokenizes to nothing under the model; skipped",
            doc.id
        );
        return None;
    }
    Some(PreparedDoc {
        source: doc.source.clone(),
        reference,
        candidates,
    })
}

/// Loss components and the full gradient of the combined objective for one
/// batch, without touching the model. `training_step` is this plus one
/// optimizer update; finite-difference checks call it directly.
pub fn loss_and_gradient<M: TrainableModel>(
    batch: &[(DocumentRecord, RankedCandidateSet)],
    model: &M,
    configs: &TrainingConfigs,
) -> Result<(StepLosses, Vec<f64>), TrainingError> {
    configs.validate()?;
    let mut grads = vec![0.0; model.num_params()];
    let prepared: Vec<PreparedDoc> = batch
        .iter()
        .filter_map(|(doc, set)| prepare_doc(model, doc, set, configs.max_target_tokens))
        .collect();
    if prepared.is_empty() {
        log::warn!("batch contributed no trainable documents");
        return Ok((
            StepLosses {
                ce: 0.0,
                cl: 0.0,
                total: 0.0,
                contributing_docs: 0,
            },
            grads,
        ));
    }
    let weight = 1.0 / prepared.len() as f64;
    let mut ce_sum = 0.0;
    let mut cl_sum = 0.0;
    for doc in &prepared {
        let mut scores = Vec::with_capacity(doc.candidates.len());
        for candidate in &doc.candidates {
            let logprobs = model.token_logprobs(&doc.source, candidate);
            scores.push(sequence_score(&logprobs, candidate.len(), &configs.score)?);
        }
        cl_sum += contrastive_loss(&scores, &configs.loss);
        ce_sum += model.cross_entropy(&doc.source, &doc.reference);

        if configs.loss.mle_weight != 0.0 {
            model.accumulate_ce_grad(
                &doc.source,
                &doc.reference,
                weight * configs.loss.mle_weight,
                &mut grads,
            );
        }
        if configs.loss.gamma != 0.0 {
            // Each active hinge max(0, f_j - f_i + (j-i)λ) contributes +1 to
            // ∂L/∂f_j and -1 to ∂L/∂f_i; f_k scales its token log-probs by
            // 1/len^α.
            let k = doc.candidates.len();
            let mut coefficients = vec![0.0f64; k];
            for i in 0..k {
                for j in (i + 1)..k {
                    let margin = (j - i) as f64 * configs.loss.lambda_margin;
                    if scores[j] - scores[i] + margin > 0.0 {
                        coefficients[j] += 1.0;
                        coefficients[i] -= 1.0;
                    }
                }
            }
            for (idx, candidate) in doc.candidates.iter().enumerate() {
                if coefficients[idx] != 0.0 {
                    let scale = weight * configs.loss.gamma * coefficients[idx]
                        / (candidate.len() as f64).powf(configs.score.alpha);
                    model.accumulate_logprob_grad(&doc.source, candidate, scale, &mut grads);
                }
            }
        }
    }
    let ce = ce_sum * weight;
    let cl = cl_sum * weight;
    let total = combined_loss(ce, cl, &configs.loss)?;
    Ok((
        StepLosses {
            ce,
            cl,
            total,
            contributing_docs: prepared.len(),
        },
        grads,
    ))
}

/// One optimizer step over a batch of ranked candidate sets.
pub fn training_step<M: TrainableModel>(
    batch: &[(DocumentRecord, RankedCandidateSet)],
    model: &mut M,
    optimizer: &mut Adam,
    lr: f64,
    configs: &TrainingConfigs,
) -> Result<StepLosses, TrainingError> {
    let (losses, grads) = loss_and_gradient(batch, model, configs)?;
    if losses.contributing_docs > 0 {
        optimizer.apply(model, &grads, lr);
    }
    Ok(losses)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub ce: f64,
    pub cl: f64,
    pub total: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_ce: Option<f64>,
}

/// Header line written ahead of the per-step records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLogHeader {
    pub seed: u64,
    pub schedule: TrainingSchedule,
    pub configs: TrainingConfigs,
}

#[derive(Debug, Clone)]
pub struct FineTuneOutput<M> {
    /// Parameters after the last step.
    pub model: M,
    /// Snapshot selected by the checkpoint rule (minimum validation CE);
    /// falls back to the final model when validation was unusable.
    pub best_model: M,
    pub best_validation_ce: Option<f64>,
    pub log: Vec<StepRecord>,
}

/// Mean reference cross-entropy over `docs`; `None` when no document has a
/// non-empty tokenized reference.
pub fn validation_cross_entropy<M: TrainableModel>(
    model: &M,
    docs: &[DocumentRecord],
) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for doc in docs {
        let reference = model.tokenize(&doc.reference);
        if reference.is_empty() {
            continue;
        }
        sum += model.cross_entropy(&doc.source, &reference);
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

/// Mean per-set pairwise ranking accuracy of f over ranked candidate sets:
/// the fraction of pairs (i < j) with f(S_i) > f(S_j) under the current
/// model, averaged over sets with at least one pair.
pub fn ranking_accuracy<M: TrainableModel>(
    model: &M,
    sets: &[(DocumentRecord, RankedCandidateSet)],
    configs: &TrainingConfigs,
) -> Option<f64> {
    let mut per_set = Vec::new();
    for (doc, set) in sets {
        let Some(prepared) = prepare_doc(model, doc, set, configs.max_target_tokens) else {
            continue;
        };
        let scores: Vec<f64> = prepared
            .candidates
            .iter()
            .map(|c| {
                let lps = model.token_logprobs(&prepared.source, c);
                sequence_score(&lps, c.len(), &configs.score).expect("non-empty candidate")
            })
            .collect();
        let mut correct = 0usize;
        let mut pairs = 0usize;
        for i in 0..scores.len() {
            for j in (i + 1)..scores.len() {
                pairs += 1;
                if scores[i] > scores[j] {
                    correct += 1;
                }
            }
        }
        if pairs > 0 {
            per_set.push(correct as f64 / pairs as f64);
        }
    }
    (!per_set.is_empty()).then(|| per_set.iter().sum::<f64>() / per_set.len() as f64)
}

/// Run the full schedule over the training set.
///
/// Batches are taken in training-set order each epoch (no shuffling, see
/// module docs). Validation cross-entropy is measured every
/// `validation_interval` steps and once more after the final step if it did
/// not land on the interval; the best snapshot by validation CE becomes
/// `best_model`. A non-finite loss aborts with a state dump.
pub fn fine_tune<M: TrainableModel>(
    training_set: &[(DocumentRecord, RankedCandidateSet)],
    validation: &[DocumentRecord],
    mut model: M,
    schedule: &TrainingSchedule,
    configs: &TrainingConfigs,
) -> Result<FineTuneOutput<M>, TrainingError> {
    schedule.validate()?;
    configs.validate()?;
    if training_set.is_empty() {
        return Err(TrainingError::InvalidConfig("training set is empty".into()));
    }
    if schedule.epochs == 0 {
        log::warn!("schedule has 0 epochs; returning the initial model unchanged");
        let val = validation_cross_entropy(&model, validation);
        return Ok(FineTuneOutput {
            best_model: model.clone(),
            model,
            best_validation_ce: val,
            log: Vec::new(),
        });
    }

    let steps_per_epoch = training_set.len().div_ceil(schedule.batch_size);
    let total_steps = (steps_per_epoch * schedule.epochs) as u64;
    let mut optimizer = Adam::new(model.num_params());
    let mut log: Vec<StepRecord> = Vec::with_capacity(total_steps as usize);
    let mut best: Option<(f64, M)> = None;
    let mut step: u64 = 0;

    for _ in 0..schedule.epochs {
        for batch in training_set.chunks(schedule.batch_size) {
            step += 1;
            let lr = schedule.lr_at(step, total_steps);
            let losses = match training_step(batch, &mut model, &mut optimizer, lr, configs) {
                Ok(losses) => losses,
                Err(TrainingError::NonFinite(message)) => {
                    return Err(TrainingError::Diverged {
                        step,
                        message,
                        state: model.dump_state(),
                    });
                }
                Err(other) => return Err(other),
            };
            let validation_ce = (step % schedule.validation_interval as u64 == 0)
                .then(|| validation_cross_entropy(&model, validation))
                .flatten();
            if let Some(v) = validation_ce {
                if best.as_ref().is_none_or(|(b, _)| v < *b) {
                    best = Some((v, model.clone()));
                }
            }
            log.push(StepRecord {
                step,
                lr,
                ce: losses.ce,
                cl: losses.cl,
                total: losses.total,
                validation_ce,
            });
        }
    }

    // The run always ends on a validation measurement so the checkpoint rule
    // has seen the final parameters.
    if log.last().is_some_and(|r| r.validation_ce.is_none()) {
        if let Some(v) = validation_cross_entropy(&model, validation) {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.clone()));
            }
            if let Some(last) = log.last_mut() {
                last.validation_ce = Some(v);
            }
        }
    }

    let (best_validation_ce, best_model) = match best {
        Some((v, m)) => (Some(v), m),
        None => {
            log::warn!("no usable validation documents; final model doubles as best checkpoint");
            (None, model.clone())
        }
    };
    Ok(FineTuneOutput {
        model,
        best_model,
        best_validation_ce,
        log,
    })
}
