//! Stage orchestration: artifact layout, skip logic, and the full run.
//!
//! Every stage reads files, writes files, and records both sides in the run
//! manifest. A re-run skips a stage when its recorded version, config hash,
//! and every input/output digest still match; `force` overrides that. All
//! artifact writes go through an atomic temp-file-plus-rename, so an
//! interrupted run never leaves a half-written artifact that a later run
//! would trust.
//!
//! Artifacts under `output_dir`:
//!
//! - `candidates.jsonl`: per-document candidate pools from every backend,
//!   deduplicated, train split only
//! - `candidates_scored.jsonl`: the same pools with factuality verdicts and
//!   reference-overlap scores filled in
//! - `training_set.jsonl` + `selection_stats.json`: ranked candidate sets
//!   and accept/reject counters
//! - `model_final.json`, `model_best.json`, `training_log.jsonl`
//! - `evaluation_report.jsonl` (fine-tuned) and `baseline_report.jsonl`
//! - `comparison.json` + `comparison.txt`
//! - `manifest.json`
//!
//! Seed derivation: backends without an explicit seed draw from a ChaCha8
//! stream keyed by the run seed (one draw per backend position, whether or
//! not it is used, so pinning one backend never shifts the others). The
//! trained model defaults to the first backend's effective seed: that
//! backend is the backbone being fine-tuned.

use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{BackendKind, ConfigError, PipelineConfig, ScorerKind};
use crate::corpus::{CandidateStore, CorpusError, DocumentRecord, Split};
use crate::evaluation::{
    compare_reports, evaluate_system, generate_summaries, read_report, write_report,
    EvaluationError,
};
use crate::factuality::{
    CommandBackend, ConsistencyBackend, FactualityError, HttpBackend, OverlapOracle, Scorer,
};
use crate::generation::{dedupe, generate_candidates, GenerationError, GeneratorBackend};
use crate::manifest::{sha256_bytes, write_atomic, Manifest, ManifestError};
use crate::metrics::tokenize_for_metrics;
use crate::selection::{
    build_training_set, RankedCandidateSet, SelectionError, SelectionMode, SelectionStats,
};
use crate::synthetic::synthetic_vocab;
use crate::toy::{ToyBackend, ToyError, ToyModel};
use crate::training::{fine_tune, TrainingError, TrainingLogHeader};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("corpus error: {0}")]
    Corpus(#[from] CorpusError),
    #[error("generation error: {0}")]
    Generation(#[from] GenerationError),
    #[error("scoring candidates for document {doc_id}: {source}")]
    Scoring {
        doc_id: String,
        source: FactualityError,
    },
    #[error("scorer configuration: {0}")]
    Factuality(#[from] FactualityError),
    #[error("selection error: {0}")]
    Selection(#[from] SelectionError),
    #[error("training error: {0}")]
    Training(#[from] TrainingError),
    #[error("evaluation error: {0}")]
    Evaluation(#[from] EvaluationError),
    #[error("model error: {0}")]
    Toy(#[from] ToyError),
    #[error("manifest error: {0}")]
    Manifest(#[from] ManifestError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("stage `{stage}` requires `{artifact}`, which does not exist; run the producing stage first")]
    MissingDependency { stage: Stage, artifact: String },
    #[error(
        "unknown stage `{0}`; expected one of generate, score, select, train, evaluate, report"
    )]
    UnknownStage(String),
    #[error("artifact format error in {path}: {message}")]
    Format { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Generate,
    Score,
    Select,
    Train,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Generate,
        Stage::Score,
        Stage::Select,
        Stage::Train,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Score => "score",
            Stage::Select => "select",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "generate" => Ok(Stage::Generate),
            "score" => Ok(Stage::Score),
            "select" => Ok(Stage::Select),
            "train" => Ok(Stage::Train),
            "evaluate" => Ok(Stage::Evaluate),
            "report" => Ok(Stage::Report),
            other => Err(PipelineError::UnknownStage(other.to_string())),
        }
    }
}

/// Path helpers for everything a run writes under its output directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    root: PathBuf,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Artifacts { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn candidates(&self) -> PathBuf {
        self.root.join("candidates.jsonl")
    }

    pub fn candidates_scored(&self) -> PathBuf {
        self.root.join("candidates_scored.jsonl")
    }

    pub fn training_set(&self) -> PathBuf {
        self.root.join("training_set.jsonl")
    }

    pub fn selection_stats(&self) -> PathBuf {
        self.root.join("selection_stats.json")
    }

    pub fn model_final(&self) -> PathBuf {
        self.root.join("model_final.json")
    }

    pub fn model_best(&self) -> PathBuf {
        self.root.join("model_best.json")
    }

    pub fn training_log(&self) -> PathBuf {
        self.root.join("training_log.jsonl")
    }

    pub fn report_fine_tuned(&self) -> PathBuf {
        self.root.join("evaluation_report.jsonl")
    }

    pub fn report_baseline(&self) -> PathBuf {
        self.root.join("baseline_report.jsonl")
    }

    pub fn comparison_json(&self) -> PathBuf {
        self.root.join("comparison.json")
    }

    pub fn comparison_text(&self) -> PathBuf {
        self.root.join("comparison.txt")
    }
}

/// Explicit input paths that replace a stage's default artifact.
///
/// Overridden inputs are stamped into the manifest like any other, so skip
/// detection keeps working against the substituted file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StageOverrides {
    /// Scored-candidate cache consumed by `select`.
    pub scored_cache: Option<PathBuf>,
    /// Ranked training set consumed by `train`.
    pub training_set: Option<PathBuf>,
    /// Saved parameters to start fine-tuning from instead of a fresh
    /// seeded model.
    pub init_model: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    /// Scorer concurrency.
    pub workers: usize,
    /// Re-run stages even when the manifest says they are current.
    pub force: bool,
    pub overrides: StageOverrides,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            workers: 1,
            force: false,
            overrides: StageOverrides::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub skipped: bool,
}

/// One line of `training_set.jsonl`: the document paired with its ranked set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSetRecord {
    pub document: DocumentRecord,
    pub candidates: RankedCandidateSet,
}

/// Contents of `selection_stats.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStatsFile {
    pub seed: u64,
    pub m: usize,
    pub mode: SelectionMode,
    pub stats: SelectionStats,
}

/// Effective per-backend seeds and the trained-model seed.
pub fn resolve_seeds(config: &PipelineConfig) -> (Vec<u64>, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let backend_seeds: Vec<u64> = config
        .backends
        .iter()
        .map(|spec| {
            let drawn = rng.random::<u64>();
            spec.seed.unwrap_or(drawn)
        })
        .collect();
    let model_seed = config
        .model
        .seed
        .unwrap_or_else(|| backend_seeds.first().copied().unwrap_or(config.seed));
    (backend_seeds, model_seed)
}

fn toy_model(config: &PipelineConfig, seed: u64) -> ToyModel {
    let mut model = ToyModel::new(synthetic_vocab(), seed);
    model.max_source_tokens = config.model.max_source_tokens;
    model
}

/// Instantiate every configured backend with its effective seed.
pub fn build_backends(config: &PipelineConfig) -> Vec<ToyBackend> {
    let (backend_seeds, _) = resolve_seeds(config);
    config
        .backends
        .iter()
        .zip(backend_seeds)
        .map(|(spec, seed)| match spec.kind {
            BackendKind::Toy => ToyBackend::new(toy_model(config, seed), spec.tag.clone()),
        })
        .collect()
}

/// Build the factuality scorer described by the config.
pub fn build_scorer(config: &PipelineConfig, workers: usize) -> Result<Scorer, PipelineError> {
    let c = &config.scorer;
    let backend: Box<dyn ConsistencyBackend> = match c.kind {
        ScorerKind::Oracle => Box::new(OverlapOracle),
        ScorerKind::Http => Box::new(HttpBackend::new(
            c.url.clone().unwrap_or_default(),
            Duration::from_secs(c.timeout_seconds),
        )?),
        ScorerKind::Command => Box::new(CommandBackend::new(
            c.program.clone().unwrap_or_default(),
            c.args.clone(),
        )),
    };
    Ok(Scorer::new(backend)
        .with_threshold(c.threshold)
        .with_aggregation(c.aggregation)
        .with_max_article_tokens(c.max_article_tokens)
        .with_max_retries(c.max_retries)
        .with_concurrency(workers))
}

/// Run the requested stages in canonical order.
///
/// The config is fully validated first. Each stage is skipped when the
/// manifest proves nothing it depends on has changed; outcomes report which
/// path was taken. The manifest is saved after every completed stage, so an
/// aborted run resumes where it stopped.
pub fn run_pipeline(
    config: &PipelineConfig,
    stages: &[Stage],
    options: &RunOptions,
) -> Result<Vec<StageOutcome>, PipelineError> {
    config.validate()?;
    let artifacts = Artifacts::new(&config.output_dir);
    std::fs::create_dir_all(artifacts.root())?;
    let config_sha256 = sha256_bytes(config.effective_toml()?.as_bytes());
    let mut manifest = Manifest::load(&artifacts.manifest())?
        .unwrap_or_else(|| Manifest::new(config.seed, config_sha256.clone()));
    manifest.seed = config.seed;
    manifest.config_sha256 = config_sha256.clone();

    let mut requested = stages.to_vec();
    requested.sort_unstable();
    requested.dedup();

    let mut outcomes = Vec::new();
    for stage in requested {
        let skipped = run_stage(
            config,
            stage,
            &artifacts,
            &mut manifest,
            &config_sha256,
            options,
        )?;
        manifest.save(&artifacts.manifest())?;
        outcomes.push(StageOutcome { stage, skipped });
        if skipped {
            log::info!("stage {stage}: up to date, skipped");
        } else {
            log::info!("stage {stage}: completed");
        }
    }
    Ok(outcomes)
}

/// Stage version strings; bump when a stage's artifact format or semantics
/// change so stale artifacts stop being trusted.
fn stage_version(stage: Stage) -> &'static str {
    match stage {
        Stage::Generate
        | Stage::Score
        | Stage::Select
        | Stage::Train
        | Stage::Evaluate
        | Stage::Report => "1",
    }
}

/// Named artifact paths a stage reads and writes.
type NamedPaths = Vec<(&'static str, PathBuf)>;

fn stage_files(
    stage: Stage,
    config: &PipelineConfig,
    artifacts: &Artifacts,
    overrides: &StageOverrides,
) -> (NamedPaths, NamedPaths) {
    let scored_cache = overrides
        .scored_cache
        .clone()
        .unwrap_or_else(|| artifacts.candidates_scored());
    let training_set = overrides
        .training_set
        .clone()
        .unwrap_or_else(|| artifacts.training_set());
    match stage {
        Stage::Generate => (
            vec![("train", config.data.train.clone())],
            vec![("candidates", artifacts.candidates())],
        ),
        Stage::Score => (
            vec![
                ("train", config.data.train.clone()),
                ("candidates", artifacts.candidates()),
            ],
            vec![("candidates_scored", artifacts.candidates_scored())],
        ),
        Stage::Select => (
            vec![
                ("train", config.data.train.clone()),
                ("candidates_scored", scored_cache),
            ],
            vec![
                ("training_set", artifacts.training_set()),
                ("selection_stats", artifacts.selection_stats()),
            ],
        ),
        Stage::Train => {
            let mut inputs = vec![
                ("training_set", training_set),
                ("validation", config.data.validation.clone()),
            ];
            if let Some(init) = &overrides.init_model {
                inputs.push(("init_model", init.clone()));
            }
            (
                inputs,
                vec![
                    ("model_final", artifacts.model_final()),
                    ("model_best", artifacts.model_best()),
                    ("training_log", artifacts.training_log()),
                ],
            )
        }
        Stage::Evaluate => (
            vec![
                ("test", config.data.test.clone()),
                ("model_best", artifacts.model_best()),
            ],
            vec![
                ("report_fine_tuned", artifacts.report_fine_tuned()),
                ("report_baseline", artifacts.report_baseline()),
            ],
        ),
        Stage::Report => (
            vec![
                ("report_fine_tuned", artifacts.report_fine_tuned()),
                ("report_baseline", artifacts.report_baseline()),
            ],
            vec![
                ("comparison_json", artifacts.comparison_json()),
                ("comparison_text", artifacts.comparison_text()),
            ],
        ),
    }
}

fn run_stage(
    config: &PipelineConfig,
    stage: Stage,
    artifacts: &Artifacts,
    manifest: &mut Manifest,
    config_sha256: &str,
    options: &RunOptions,
) -> Result<bool, PipelineError> {
    let (inputs, outputs) = stage_files(stage, config, artifacts, &options.overrides);
    for (_, path) in &inputs {
        if !path.is_file() {
            return Err(PipelineError::MissingDependency {
                stage,
                artifact: path.file_name().map_or_else(
                    || path.display().to_string(),
                    |n| n.to_string_lossy().into_owned(),
                ),
            });
        }
    }
    let input_refs: Vec<(&str, &Path)> = inputs.iter().map(|(n, p)| (*n, p.as_path())).collect();
    let output_refs: Vec<(&str, &Path)> = outputs.iter().map(|(n, p)| (*n, p.as_path())).collect();
    if !options.force
        && manifest.stage_is_current(
            stage.as_str(),
            stage_version(stage),
            config_sha256,
            &input_refs,
            &output_refs,
        )
    {
        return Ok(true);
    }
    let input_path = |name: &str| {
        inputs
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, p)| p.clone())
            .expect("declared stage input")
    };
    match stage {
        Stage::Generate => stage_generate(config, artifacts)?,
        Stage::Score => stage_score(config, artifacts, options.workers)?,
        Stage::Select => stage_select(config, artifacts, &input_path("candidates_scored"))?,
        Stage::Train => stage_train(
            config,
            artifacts,
            &input_path("training_set"),
            options.overrides.init_model.as_deref(),
        )?,
        Stage::Evaluate => stage_evaluate(config, artifacts, options.workers)?,
        Stage::Report => stage_report(artifacts)?,
    }
    manifest.record_stage(
        stage.as_str(),
        stage_version(stage),
        &input_refs,
        &output_refs,
    )?;
    Ok(false)
}

fn load_split(path: &Path, split: Split) -> Result<Vec<DocumentRecord>, PipelineError> {
    let (docs, stats) = crate::corpus::load_dataset_vec(path, split)?;
    log::debug!(
        "loaded {} document(s) from {} ({:?})",
        docs.len(),
        path.display(),
        stats
    );
    Ok(docs)
}

/// Swap a finished temp store into place.
fn commit_store(tmp: &Path, path: &Path) -> Result<(), PipelineError> {
    std::fs::rename(tmp, path)?;
    Ok(())
}

fn stage_generate(config: &PipelineConfig, artifacts: &Artifacts) -> Result<(), PipelineError> {
    let docs = load_split(&config.data.train, Split::Train)?;
    let backends = build_backends(config);
    let pairs: Vec<(&dyn GeneratorBackend, _)> = backends
        .iter()
        .map(|b| (b as &dyn GeneratorBackend, config.decoding.clone()))
        .collect();
    let tmp = artifacts.candidates().with_extension("jsonl.tmp");
    let mut store = CandidateStore::create(&tmp)?;
    let mut empty_docs = 0usize;
    for doc in &docs {
        let candidates = dedupe(generate_candidates(doc, &pairs)?);
        if candidates.is_empty() {
            empty_docs += 1;
        }
        store.persist_candidates(&doc.id, &candidates)?;
    }
    if empty_docs > 0 {
        log::warn!("{empty_docs} document(s) produced no candidates");
    }
    commit_store(&tmp, &artifacts.candidates())
}

fn stage_score(
    config: &PipelineConfig,
    artifacts: &Artifacts,
    workers: usize,
) -> Result<(), PipelineError> {
    let docs = load_split(&config.data.train, Split::Train)?;
    let cache = CandidateStore::open(&artifacts.candidates())?.read_all()?;
    let scorer = build_scorer(config, workers)?;
    let tmp = artifacts.candidates_scored().with_extension("jsonl.tmp");
    let mut store = CandidateStore::create(&tmp)?;
    for doc in &docs {
        let mut candidates = cache.get(&doc.id).cloned().unwrap_or_default();
        let reference_tokens = tokenize_for_metrics(&doc.reference);
        let pairs: Vec<(String, String)> = candidates
            .iter()
            .map(|c| (doc.source.clone(), c.text.clone()))
            .collect();
        for (candidate, verdict) in candidates.iter_mut().zip(scorer.score_batch(&pairs)) {
            let verdict = verdict.map_err(|source| PipelineError::Scoring {
                doc_id: doc.id.clone(),
                source,
            })?;
            candidate.factuality = Some(verdict);
            candidate.rouge = Some(
                config
                    .selection
                    .metric
                    .score(&tokenize_for_metrics(&candidate.text), &reference_tokens),
            );
        }
        store.persist_candidates(&doc.id, &candidates)?;
    }
    commit_store(&tmp, &artifacts.candidates_scored())
}

fn stage_select(
    config: &PipelineConfig,
    artifacts: &Artifacts,
    scored_cache: &Path,
) -> Result<(), PipelineError> {
    let docs = load_split(&config.data.train, Split::Train)?;
    let cache = CandidateStore::open(scored_cache)?.read_all()?;
    let (training_set, stats) =
        build_training_set(&docs, &cache, config.selection.mode, config.selection.m)?;
    let mut bytes = Vec::new();
    for (document, candidates) in &training_set {
        let record = TrainingSetRecord {
            document: document.clone(),
            candidates: candidates.clone(),
        };
        serde_json::to_writer(&mut bytes, &record).map_err(|e| PipelineError::Format {
            path: "training_set.jsonl".into(),
            message: e.to_string(),
        })?;
        bytes.push(b'\n');
    }
    write_atomic(&artifacts.training_set(), &bytes)?;
    log::info!("selection: {}", stats.render());
    let stats_file = SelectionStatsFile {
        seed: config.seed,
        m: config.selection.m,
        mode: config.selection.mode,
        stats,
    };
    let mut stats_bytes =
        serde_json::to_vec_pretty(&stats_file).map_err(|e| PipelineError::Format {
            path: "selection_stats.json".into(),
            message: e.to_string(),
        })?;
    stats_bytes.push(b'\n');
    write_atomic(&artifacts.selection_stats(), &stats_bytes)?;
    Ok(())
}

fn read_training_set(
    path: &Path,
) -> Result<Vec<(DocumentRecord, RankedCandidateSet)>, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: TrainingSetRecord =
            serde_json::from_str(line).map_err(|e| PipelineError::Format {
                path: format!("{} line {}", path.display(), line_no + 1),
                message: e.to_string(),
            })?;
        out.push((record.document, record.candidates));
    }
    Ok(out)
}

fn stage_train(
    config: &PipelineConfig,
    artifacts: &Artifacts,
    training_set_path: &Path,
    init_model: Option<&Path>,
) -> Result<(), PipelineError> {
    let training_set = read_training_set(training_set_path)?;
    let validation = load_split(&config.data.validation, Split::Validation)?;
    let (_, model_seed) = resolve_seeds(config);
    let model = match init_model {
        Some(path) => ToyModel::load(path)?,
        None => toy_model(config, model_seed),
    };
    let schedule = config.training.schedule();
    let configs = config.training_configs();
    let output = fine_tune(&training_set, &validation, model, &schedule, &configs)?;

    let header = TrainingLogHeader {
        seed: model_seed,
        schedule,
        configs,
    };
    let mut log_bytes = Vec::new();
    serde_json::to_writer(&mut log_bytes, &header).map_err(|e| PipelineError::Format {
        path: "training_log.jsonl".into(),
        message: e.to_string(),
    })?;
    log_bytes.push(b'\n');
    for record in &output.log {
        serde_json::to_writer(&mut log_bytes, record).map_err(|e| PipelineError::Format {
            path: "training_log.jsonl".into(),
            message: e.to_string(),
        })?;
        log_bytes.push(b'\n');
    }
    write_atomic(&artifacts.training_log(), &log_bytes)?;

    for (model, path) in [
        (&output.model, artifacts.model_final()),
        (&output.best_model, artifacts.model_best()),
    ] {
        model.validate()?;
        let mut bytes = serde_json::to_vec_pretty(model).map_err(|e| PipelineError::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        bytes.push(b'\n');
        write_atomic(&path, &bytes)?;
    }
    if let Some(ce) = output.best_validation_ce {
        log::info!("training done; best validation CE {ce:.6}");
    }
    Ok(())
}

fn stage_evaluate(
    config: &PipelineConfig,
    artifacts: &Artifacts,
    workers: usize,
) -> Result<(), PipelineError> {
    let docs = load_split(&config.data.test, Split::Test)?;
    let scorer = build_scorer(config, workers)?;
    let (_, model_seed) = resolve_seeds(config);
    let fine_tuned = ToyBackend::new(ToyModel::load(&artifacts.model_best())?, "fine-tuned");
    let baseline = ToyBackend::new(toy_model(config, model_seed), "baseline");
    for (backend, path) in [
        (&fine_tuned, artifacts.report_fine_tuned()),
        (&baseline, artifacts.report_baseline()),
    ] {
        let summaries = generate_summaries(backend, &docs, &config.decoding)?;
        let report = evaluate_system(backend.tag(), &docs, &summaries, &scorer, Split::Test)?;
        write_report(&report, &path)?;
    }
    Ok(())
}

fn stage_report(artifacts: &Artifacts) -> Result<(), PipelineError> {
    let fine_tuned = read_report(&artifacts.report_fine_tuned())?;
    let baseline = read_report(&artifacts.report_baseline())?;
    let table = compare_reports(&[fine_tuned, baseline])?;
    let mut json = serde_json::to_vec_pretty(&table).map_err(|e| PipelineError::Format {
        path: "comparison.json".into(),
        message: e.to_string(),
    })?;
    json.push(b'\n');
    write_atomic(&artifacts.comparison_json(), &json)?;
    write_atomic(&artifacts.comparison_text(), table.render_text().as_bytes())?;
    Ok(())
}
