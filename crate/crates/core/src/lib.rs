//! Candidate-ranking pipeline for factuality-aware summarizer fine-tuning.
//!
//! The crate is organised around five pipeline stages:
//!
//! 1. [`generation`]: decode diverse candidate summaries from one or more
//!    generator backends.
//! 2. [`factuality`] and [`metrics`]: score each candidate for factual
//!    consistency with its source article and for reference overlap.
//! 3. [`selection`]: assemble ranked candidate sets that balance factual and
//!    non-factual summaries, ordering each class by reference overlap.
//! 4. [`training`]: fine-tune a model with a pairwise rank-margin loss over
//!    the ranked sets, mixed with maximum-likelihood cross-entropy.
//! 5. [`evaluation`]: decode a final summary per document and report overlap,
//!    factuality rate, and extractive coverage, with system comparisons.
//!
//! [`pipeline`] wires the stages together behind a content-hash manifest so
//! that re-running a completed stage is a no-op, [`config`] holds the TOML
//! configuration surface, and [`toy`] provides a small differentiable
//! sequence model that makes the whole loop executable on a laptop CPU.

pub mod config;
pub mod corpus;
pub mod evaluation;
pub mod factuality;
pub mod generation;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod selection;
pub mod synthetic;
pub mod toy;
pub mod training;

pub use config::PipelineConfig;
pub use corpus::{CandidateRecord, DocumentRecord, Split};
pub use factuality::{FactualityVerdict, Scorer};
pub use generation::{DecodingParams, GeneratorBackend};
pub use metrics::{CoverageScore, RougeScore};
pub use pipeline::{run_pipeline, PipelineError, RunOptions, Stage};
pub use selection::{RankedCandidateSet, SelectionMode};
pub use training::{LossConfig, ScoreConfig, TrainingSchedule};
