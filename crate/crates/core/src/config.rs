//! Declarative pipeline configuration.
//!
//! A config file is TOML with a `preset` key (`toy`, `xsum`, or `cnndm`)
//! that fills every default; any explicitly written key overrides its preset
//! value. Unknown keys are hard errors everywhere: a typo that silently
//! dropped a loss weight would corrupt experiments.
//!
//! Parsing and validation are split: [`parse_config`] applies presets,
//! bounds-checks every numeric field, and collects ALL violations into one
//! error; [`PipelineConfig::validate`] additionally requires the referenced
//! dataset files to exist. [`load_config`] does both, which is what the CLI
//! and pipeline use.
//!
//! `training.max_seq_length` is the shared sequence budget: it bounds
//! tokenized training targets directly and, when `[model]` does not pin its
//! own `max_source_tokens`, the model's source-document reader as well.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factuality::SentenceAggregation;
use crate::generation::DecodingParams;
use crate::metrics::RankingMetric;
use crate::selection::SelectionMode;
use crate::training::{CheckpointRule, LossConfig, ScoreConfig, TrainingConfigs, TrainingSchedule};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid configuration:{}", .0.iter().map(|v| format!("\n  - {v}")).collect::<String>())]
    Invalid(Vec<String>),
    #[error("config serialization error: {0}")]
    Echo(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Toy,
    Xsum,
    Cnndm,
}

impl Preset {
    pub fn as_str(&self) -> &'static str {
        match self {
            Preset::Toy => "toy",
            Preset::Xsum => "xsum",
            Preset::Cnndm => "cnndm",
        }
    }

    /// The full default configuration for this preset.
    pub fn config(self) -> PipelineConfig {
        match self {
            Preset::Toy => PipelineConfig::toy(),
            Preset::Xsum => PipelineConfig::xsum(),
            Preset::Cnndm => PipelineConfig::cnndm(),
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPaths {
    pub train: PathBuf,
    pub validation: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Parameter-init seed; defaults to the first backend's effective seed
    /// (the model being fine-tuned is that backbone).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub max_source_tokens: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Toy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub kind: BackendKind,
    pub tag: String,
    /// Parameter seed; absent means "derive from the run seed".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Oracle,
    Http,
    Command,
}

fn default_threshold(kind: ScorerKind) -> f64 {
    match kind {
        // The oracle's containment fractions are exact; only full support
        // counts as factual.
        ScorerKind::Oracle => 1.0,
        ScorerKind::Http | ScorerKind::Command => 0.5,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub kind: ScorerKind,
    pub threshold: f64,
    pub aggregation: SentenceAggregation,
    pub max_article_tokens: usize,
    pub max_retries: u32,
    pub timeout_seconds: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub program: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub args: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Candidates kept per class; a ranked set holds 2m.
    pub m: usize,
    pub mode: SelectionMode,
    pub metric: RankingMetric,
}

/// The `[training]` section: schedule plus the shared sequence budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSection {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub validation_interval: usize,
    pub max_seq_length: usize,
}

impl TrainingSection {
    fn from_schedule(schedule: &TrainingSchedule, max_seq_length: usize) -> Self {
        TrainingSection {
            peak_lr: schedule.peak_lr,
            warmup_steps: schedule.warmup_steps,
            epochs: schedule.epochs,
            batch_size: schedule.batch_size,
            validation_interval: schedule.validation_interval,
            max_seq_length,
        }
    }

    pub fn schedule(&self) -> TrainingSchedule {
        TrainingSchedule {
            peak_lr: self.peak_lr,
            warmup_steps: self.warmup_steps,
            epochs: self.epochs,
            batch_size: self.batch_size,
            validation_interval: self.validation_interval,
            checkpoint_rule: CheckpointRule::MinValidationCe,
        }
    }
}

/// The effective (fully defaulted) configuration.
///
/// Scalar fields come before tables so the TOML echo serializes cleanly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub preset: Preset,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataPaths,
    pub model: ModelConfig,
    pub backends: Vec<BackendSpec>,
    pub decoding: DecodingParams,
    pub scorer: ScorerConfig,
    pub selection: SelectionConfig,
    pub score: ScoreConfig,
    pub loss: LossConfig,
    pub training: TrainingSection,
}

fn synthetic_data_paths() -> DataPaths {
    DataPaths {
        train: "data/synthetic/train.jsonl".into(),
        validation: "data/synthetic/validation.jsonl".into(),
        test: "data/synthetic/test.jsonl".into(),
    }
}

fn oracle_scorer() -> ScorerConfig {
    ScorerConfig {
        kind: ScorerKind::Oracle,
        threshold: default_threshold(ScorerKind::Oracle),
        aggregation: SentenceAggregation::Min,
        max_article_tokens: 512,
        max_retries: 2,
        timeout_seconds: 10,
        url: None,
        program: None,
        args: Vec::new(),
    }
}

impl PipelineConfig {
    /// Desk-scale defaults over the shipped synthetic corpus.
    pub fn toy() -> Self {
        PipelineConfig {
            preset: Preset::Toy,
            seed: 17,
            output_dir: "runs/toy".into(),
            data: synthetic_data_paths(),
            model: ModelConfig {
                seed: None,
                max_source_tokens: 64,
            },
            backends: vec![
                BackendSpec {
                    kind: BackendKind::Toy,
                    tag: "toy-a".into(),
                    seed: None,
                },
                BackendSpec {
                    kind: BackendKind::Toy,
                    tag: "toy-b".into(),
                    seed: None,
                },
            ],
            decoding: DecodingParams::toy(),
            scorer: oracle_scorer(),
            selection: SelectionConfig {
                m: 2,
                mode: SelectionMode::Balanced,
                metric: RankingMetric::RougeLF1,
            },
            score: ScoreConfig::default(),
            loss: LossConfig::xsum(),
            training: TrainingSection::from_schedule(&TrainingSchedule::toy(), 16),
        }
    }

    /// XSUM-style hyperparameters (paths still point at the synthetic
    /// corpus; override `[data]` for a real dataset).
    pub fn xsum() -> Self {
        PipelineConfig {
            preset: Preset::Xsum,
            output_dir: "runs/xsum".into(),
            model: ModelConfig {
                seed: None,
                max_source_tokens: 512,
            },
            decoding: DecodingParams::xsum(),
            selection: SelectionConfig {
                m: 3,
                mode: SelectionMode::Balanced,
                metric: RankingMetric::RougeLF1,
            },
            loss: LossConfig::xsum(),
            training: TrainingSection::from_schedule(&TrainingSchedule::xsum(), 512),
            ..PipelineConfig::toy()
        }
    }

    /// CNN/DM-style hyperparameters.
    pub fn cnndm() -> Self {
        PipelineConfig {
            preset: Preset::Cnndm,
            output_dir: "runs/cnndm".into(),
            model: ModelConfig {
                seed: None,
                max_source_tokens: 1024,
            },
            decoding: DecodingParams::cnndm(),
            loss: LossConfig::cnndm(),
            training: TrainingSection::from_schedule(&TrainingSchedule::cnndm(), 1024),
            ..PipelineConfig::xsum()
        }
    }

    pub fn training_configs(&self) -> TrainingConfigs {
        TrainingConfigs {
            score: self.score,
            loss: self.loss,
            max_target_tokens: self.training.max_seq_length,
        }
    }

    /// TOML rendering of the full effective configuration.
    pub fn effective_toml(&self) -> Result<String, ConfigError> {
        toml::to_string_pretty(self).map_err(|e| ConfigError::Echo(e.to_string()))
    }

    /// Structural violations (no filesystem access).
    fn violations(&self) -> Vec<String> {
        let mut violations = Vec::new();
        if self.backends.is_empty() {
            violations.push("backends must list at least one generator".to_string());
        }
        let mut tags: Vec<&str> = self.backends.iter().map(|b| b.tag.as_str()).collect();
        tags.sort_unstable();
        tags.dedup();
        if tags.len() != self.backends.len() {
            violations.push("backend tags must be unique".to_string());
        }
        if self.backends.iter().any(|b| b.tag.trim().is_empty()) {
            violations.push("backend tags must be non-empty".to_string());
        }
        if let Err(e) = self.decoding.validate() {
            violations.push(format!("decoding: {e}"));
        }
        if let Err(e) = self.training.schedule().validate() {
            violations.push(format!("training: {e}"));
        }
        if self.training.max_seq_length == 0 {
            violations.push("training.max_seq_length must be >= 1".to_string());
        }
        if let Err(e) = self.loss.validate() {
            violations.push(format!("loss: {e}"));
        }
        if let Err(e) = self.score.validate() {
            violations.push(format!("score: {e}"));
        }
        if self.selection.m < 1 {
            violations.push(format!(
                "selection: m must be >= 1, got {}",
                self.selection.m
            ));
        }
        if !self.scorer.threshold.is_finite() || !(0.0..=1.0).contains(&self.scorer.threshold) {
            violations.push(format!(
                "scorer.threshold must be within [0, 1], got {}",
                self.scorer.threshold
            ));
        }
        if self.scorer.max_article_tokens == 0 {
            violations.push("scorer.max_article_tokens must be >= 1".to_string());
        }
        if self.scorer.kind == ScorerKind::Http
            && self
                .scorer
                .url
                .as_deref()
                .is_none_or(|u| u.trim().is_empty())
        {
            violations.push("scorer.url is required when scorer.kind = \"http\"".to_string());
        }
        if self.scorer.kind == ScorerKind::Command
            && self
                .scorer
                .program
                .as_deref()
                .is_none_or(|p| p.trim().is_empty())
        {
            violations
                .push("scorer.program is required when scorer.kind = \"command\"".to_string());
        }
        if self.model.max_source_tokens == 0 {
            violations.push("model.max_source_tokens must be >= 1".to_string());
        }
        violations
    }

    /// Structural checks plus dataset-path existence.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut violations = self.violations();
        for (name, path) in [
            ("data.train", &self.data.train),
            ("data.validation", &self.data.validation),
            ("data.test", &self.data.test),
        ] {
            if !path.is_file() {
                violations.push(format!("{name}: no such file: {}", path.display()));
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(violations))
        }
    }
}

// ---------------------------------------------------------------------------
// Raw (partial) layer: everything optional, unknown keys rejected.
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: Option<Preset>,
    seed: Option<i64>,
    output_dir: Option<String>,
    data: Option<RawData>,
    model: Option<RawModel>,
    backends: Option<Vec<RawBackend>>,
    decoding: Option<RawDecoding>,
    scorer: Option<RawScorer>,
    selection: Option<RawSelection>,
    score: Option<RawScore>,
    loss: Option<RawLoss>,
    training: Option<RawTraining>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    train: Option<String>,
    validation: Option<String>,
    test: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    seed: Option<i64>,
    max_source_tokens: Option<i64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBackend {
    kind: Option<BackendKind>,
    tag: Option<String>,
    seed: Option<i64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDecoding {
    num_candidates: Option<i64>,
    beam_size: Option<i64>,
    num_beam_groups: Option<i64>,
    diversity_penalty: Option<f64>,
    length_penalty: Option<f64>,
    min_length: Option<i64>,
    max_length: Option<i64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScorer {
    kind: Option<ScorerKind>,
    threshold: Option<f64>,
    aggregation: Option<SentenceAggregation>,
    max_article_tokens: Option<i64>,
    max_retries: Option<i64>,
    timeout_seconds: Option<i64>,
    url: Option<String>,
    program: Option<String>,
    args: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSelection {
    m: Option<i64>,
    mode: Option<SelectionMode>,
    metric: Option<RankingMetric>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScore {
    alpha: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLoss {
    lambda_margin: Option<f64>,
    gamma: Option<f64>,
    mle_weight: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTraining {
    peak_lr: Option<f64>,
    warmup_steps: Option<i64>,
    epochs: Option<i64>,
    batch_size: Option<i64>,
    validation_interval: Option<i64>,
    max_seq_length: Option<i64>,
}

fn merge_usize(
    target: &mut usize,
    raw: Option<i64>,
    field: &str,
    min: i64,
    violations: &mut Vec<String>,
) {
    if let Some(v) = raw {
        if v < min {
            violations.push(format!("{field} must be >= {min}, got {v}"));
        } else {
            *target = v as usize;
        }
    }
}

fn merge_u32(target: &mut u32, raw: Option<i64>, field: &str, violations: &mut Vec<String>) {
    if let Some(v) = raw {
        if v < 0 || v > i64::from(u32::MAX) {
            violations.push(format!("{field} must be within [0, {}], got {v}", u32::MAX));
        } else {
            *target = v as u32;
        }
    }
}

fn merge_seed(raw: Option<i64>, field: &str, violations: &mut Vec<String>) -> Option<u64> {
    match raw {
        Some(v) if v < 0 => {
            violations.push(format!("{field} must be >= 0, got {v}"));
            None
        }
        Some(v) => Some(v as u64),
        None => None,
    }
}

impl RawConfig {
    fn into_effective(self, violations: &mut Vec<String>) -> PipelineConfig {
        let mut config = self.preset.unwrap_or_default().config();
        if let Some(seed) = merge_seed(self.seed, "seed", violations) {
            config.seed = seed;
        }
        if let Some(dir) = self.output_dir {
            config.output_dir = dir.into();
        }
        if let Some(data) = self.data {
            if let Some(p) = data.train {
                config.data.train = p.into();
            }
            if let Some(p) = data.validation {
                config.data.validation = p.into();
            }
            if let Some(p) = data.test {
                config.data.test = p.into();
            }
        }
        if let Some(backends) = self.backends {
            config.backends = backends
                .into_iter()
                .enumerate()
                .map(|(i, raw)| {
                    if raw.tag.is_none() {
                        violations.push(format!("backends[{i}].tag is required"));
                    }
                    BackendSpec {
                        kind: raw.kind.unwrap_or_default(),
                        tag: raw.tag.unwrap_or_default(),
                        seed: merge_seed(raw.seed, &format!("backends[{i}].seed"), violations),
                    }
                })
                .collect();
        }
        if let Some(decoding) = self.decoding {
            let d = &mut config.decoding;
            merge_usize(
                &mut d.num_candidates,
                decoding.num_candidates,
                "decoding.num_candidates",
                1,
                violations,
            );
            merge_usize(
                &mut d.beam_size,
                decoding.beam_size,
                "decoding.beam_size",
                1,
                violations,
            );
            merge_usize(
                &mut d.num_beam_groups,
                decoding.num_beam_groups,
                "decoding.num_beam_groups",
                1,
                violations,
            );
            merge_usize(
                &mut d.min_length,
                decoding.min_length,
                "decoding.min_length",
                0,
                violations,
            );
            merge_usize(
                &mut d.max_length,
                decoding.max_length,
                "decoding.max_length",
                0,
                violations,
            );
            if let Some(v) = decoding.diversity_penalty {
                d.diversity_penalty = v;
            }
            if let Some(v) = decoding.length_penalty {
                d.length_penalty = v;
            }
        }
        if let Some(scorer) = self.scorer {
            let s = &mut config.scorer;
            if let Some(kind) = scorer.kind {
                s.kind = kind;
                s.threshold = default_threshold(kind);
            }
            if let Some(threshold) = scorer.threshold {
                s.threshold = threshold;
            }
            if let Some(aggregation) = scorer.aggregation {
                s.aggregation = aggregation;
            }
            merge_usize(
                &mut s.max_article_tokens,
                scorer.max_article_tokens,
                "scorer.max_article_tokens",
                1,
                violations,
            );
            merge_u32(
                &mut s.max_retries,
                scorer.max_retries,
                "scorer.max_retries",
                violations,
            );
            if let Some(timeout) =
                merge_seed(scorer.timeout_seconds, "scorer.timeout_seconds", violations)
            {
                s.timeout_seconds = timeout;
            }
            if scorer.url.is_some() {
                s.url = scorer.url;
            }
            if scorer.program.is_some() {
                s.program = scorer.program;
            }
            if let Some(args) = scorer.args {
                s.args = args;
            }
        }
        if let Some(selection) = self.selection {
            merge_usize(
                &mut config.selection.m,
                selection.m,
                "selection.m",
                1,
                violations,
            );
            if let Some(mode) = selection.mode {
                config.selection.mode = mode;
            }
            if let Some(metric) = selection.metric {
                config.selection.metric = metric;
            }
        }
        if let Some(score) = self.score {
            if let Some(alpha) = score.alpha {
                config.score.alpha = alpha;
            }
        }
        if let Some(loss) = self.loss {
            if let Some(v) = loss.lambda_margin {
                config.loss.lambda_margin = v;
            }
            if let Some(v) = loss.gamma {
                config.loss.gamma = v;
            }
            if let Some(v) = loss.mle_weight {
                config.loss.mle_weight = v;
            }
        }
        let mut model_budget_pinned = false;
        if let Some(model) = &self.model {
            model_budget_pinned = model.max_source_tokens.is_some();
        }
        if let Some(training) = self.training {
            let t = &mut config.training;
            if let Some(v) = training.peak_lr {
                t.peak_lr = v;
            }
            merge_usize(
                &mut t.warmup_steps,
                training.warmup_steps,
                "training.warmup_steps",
                0,
                violations,
            );
            merge_usize(
                &mut t.epochs,
                training.epochs,
                "training.epochs",
                0,
                violations,
            );
            merge_usize(
                &mut t.batch_size,
                training.batch_size,
                "training.batch_size",
                1,
                violations,
            );
            merge_usize(
                &mut t.validation_interval,
                training.validation_interval,
                "training.validation_interval",
                1,
                violations,
            );
            if training.max_seq_length.is_some() {
                merge_usize(
                    &mut t.max_seq_length,
                    training.max_seq_length,
                    "training.max_seq_length",
                    1,
                    violations,
                );
                // The shared budget also drives the model's source reader
                // unless [model] pins its own.
                if !model_budget_pinned {
                    config.model.max_source_tokens = t.max_seq_length;
                }
            }
        }
        if let Some(model) = self.model {
            if let Some(seed) = merge_seed(model.seed, "model.seed", violations) {
                config.model.seed = Some(seed);
            }
            merge_usize(
                &mut config.model.max_source_tokens,
                model.max_source_tokens,
                "model.max_source_tokens",
                1,
                violations,
            );
        }
        config
    }
}

/// Parse TOML text into an effective config; structural validation only.
pub fn parse_config(text: &str) -> Result<PipelineConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let mut violations = Vec::new();
    let config = raw.into_effective(&mut violations);
    violations.extend(config.violations());
    if violations.is_empty() {
        Ok(config)
    } else {
        Err(ConfigError::Invalid(violations))
    }
}

/// Read, parse, and fully validate (including dataset-path existence).
pub fn load_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    let config = parse_config(&text)?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xsum_preset_pins_paper_hyperparameters() {
        let config = parse_config("preset = \"xsum\"").unwrap();
        assert_eq!(config.loss.lambda_margin, 0.001);
        assert_eq!(config.loss.gamma, 10.0);
        assert_eq!(config.loss.mle_weight, 1.0);
        assert_eq!(config.training.peak_lr, 1e-4);
        assert_eq!(config.training.warmup_steps, 500);
        assert_eq!(config.training.epochs, 5);
        assert_eq!(config.training.batch_size, 16);
        assert_eq!(config.training.validation_interval, 1600);
        assert_eq!(config.training.max_seq_length, 512);
        assert_eq!(config.decoding.beam_size, 8);
        assert_eq!(config.selection.m, 3);
    }

    #[test]
    fn cnndm_preset_pins_paper_hyperparameters() {
        let config = parse_config("preset = \"cnndm\"").unwrap();
        assert_eq!(config.loss.mle_weight, 0.1);
        assert_eq!(config.training.peak_lr, 3e-5);
        assert_eq!(config.training.max_seq_length, 1024);
        assert_eq!(config.model.max_source_tokens, 1024);
        assert_eq!(config.decoding.beam_size, 4);
        assert_eq!(config.decoding.num_beam_groups, 4);
        assert!((config.decoding.length_penalty - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_config_is_the_toy_preset() {
        let config = parse_config("").unwrap();
        assert_eq!(config, PipelineConfig::toy());
        assert_eq!(config.selection.m, 2);
        assert_eq!(config.scorer.threshold, 1.0);
    }

    #[test]
    fn explicit_keys_override_preset_values() {
        let config =
            parse_config("preset = \"toy\"\nseed = 99\n[loss]\ngamma = 0.0\n[selection]\nm = 3\n")
                .unwrap();
        assert_eq!(config.seed, 99);
        assert_eq!(config.loss.gamma, 0.0);
        assert_eq!(config.selection.m, 3);
        // Untouched fields keep preset values.
        assert_eq!(config.loss.mle_weight, 1.0);
        assert_eq!(
            config.training.epochs,
            PipelineConfig::toy().training.epochs
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_config("[loss]\ngamam = 10.0\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
        assert!(err.to_string().contains("gamam"), "{err}");
        let err = parse_config("bogus_top_level = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus_top_level"), "{err}");
    }

    #[test]
    fn negative_m_reports_the_bound() {
        let err = parse_config("[selection]\nm = -3\n").unwrap_err();
        assert!(err.to_string().contains("m must be >= 1"), "{err}");
    }

    #[test]
    fn all_violations_are_collected() {
        let err = parse_config(
            "[selection]\nm = -3\n[scorer]\nthreshold = 3.0\n[decoding]\nnum_candidates = 100\n[training]\nbatch_size = 0\n",
        )
        .unwrap_err();
        let message = err.to_string();
        assert!(message.contains("m must be >= 1"), "{message}");
        assert!(message.contains("threshold"), "{message}");
        assert!(message.contains("num_candidates"), "{message}");
        assert!(message.contains("batch_size"), "{message}");
    }

    #[test]
    fn scorer_kind_resets_the_threshold_default() {
        let http =
            parse_config("[scorer]\nkind = \"http\"\nurl = \"http://localhost:9\"\n").unwrap();
        assert_eq!(http.scorer.threshold, 0.5);
        let strict = parse_config(
            "[scorer]\nkind = \"http\"\nurl = \"http://localhost:9\"\nthreshold = 0.9\n",
        )
        .unwrap();
        assert_eq!(strict.scorer.threshold, 0.9);
        let err = parse_config("[scorer]\nkind = \"http\"\n").unwrap_err();
        assert!(err.to_string().contains("scorer.url is required"), "{err}");
        let err = parse_config("[scorer]\nkind = \"command\"\n").unwrap_err();
        assert!(
            err.to_string().contains("scorer.program is required"),
            "{err}"
        );
    }

    #[test]
    fn max_seq_length_drives_the_model_budget_unless_pinned() {
        let coupled = parse_config("[training]\nmax_seq_length = 32\n").unwrap();
        assert_eq!(coupled.training.max_seq_length, 32);
        assert_eq!(coupled.model.max_source_tokens, 32);
        let pinned =
            parse_config("[training]\nmax_seq_length = 32\n[model]\nmax_source_tokens = 48\n")
                .unwrap();
        assert_eq!(pinned.training.max_seq_length, 32);
        assert_eq!(pinned.model.max_source_tokens, 48);
    }

    #[test]
    fn backends_replace_wholesale_and_need_tags() {
        let config =
            parse_config("[[backends]]\nkind = \"toy\"\ntag = \"solo\"\nseed = 5\n").unwrap();
        assert_eq!(config.backends.len(), 1);
        assert_eq!(config.backends[0].tag, "solo");
        assert_eq!(config.backends[0].seed, Some(5));
        let err = parse_config("[[backends]]\nkind = \"toy\"\n").unwrap_err();
        assert!(err.to_string().contains("tag is required"), "{err}");
        let err =
            parse_config("[[backends]]\ntag = \"x\"\n[[backends]]\ntag = \"x\"\n").unwrap_err();
        assert!(err.to_string().contains("unique"), "{err}");
    }

    #[test]
    fn effective_toml_round_trips() {
        for config in [
            PipelineConfig::toy(),
            PipelineConfig::xsum(),
            PipelineConfig::cnndm(),
        ] {
            let echoed = config.effective_toml().unwrap();
            let reparsed = parse_config(&echoed).unwrap();
            assert_eq!(
                reparsed, config,
                "echo must parse back to the same config:\n{echoed}"
            );
        }
    }

    #[test]
    fn validate_requires_dataset_files() {
        let dir = tempfile::tempdir().unwrap();
        crate::synthetic::write_corpus(&dir.path().join("data"), 1).unwrap();
        let mut config = PipelineConfig::toy();
        config.data = DataPaths {
            train: dir.path().join("data/train.jsonl"),
            validation: dir.path().join("data/validation.jsonl"),
            test: dir.path().join("data/test.jsonl"),
        };
        config.validate().unwrap();
        config.data.test = dir.path().join("data/missing.jsonl");
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("data.test"), "{err}");
    }

    #[test]
    fn presets_are_structurally_valid() {
        for config in [
            PipelineConfig::toy(),
            PipelineConfig::xsum(),
            PipelineConfig::cnndm(),
        ] {
            assert!(config.violations().is_empty(), "{:?}", config.violations());
        }
    }
}
