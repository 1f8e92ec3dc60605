//! Factual-consistency scoring of (article, summary) pairs.
//!
//! Everything funnels through [`Scorer`], which wraps a
//! [`ConsistencyBackend`] (the thing producing a consistency probability for
//! one summary sentence against one article) and adds the policy layer:
//! sentence splitting, aggregation across sentences, article truncation,
//! thresholding into a boolean label, idempotent retries, and bounded
//! parallelism for batches.
//!
//! Three backends ship in-repo:
//! - [`OverlapOracle`]: deterministic test oracle. A sentence's probability is
//!   the fraction of its content (non-stopword) tokens present in the
//!   article. This preserves the binary factual/non-factual structure the
//!   pipeline needs; it is explicitly NOT a claim about real factuality.
//! - [`HttpBackend`]: POSTs `{"article", "summary"}` JSON to a scoring
//!   service and reads `{"probability"}` back.
//! - [`CommandBackend`]: spawns a local command per pair, one JSON request
//!   line on stdin, one JSON response line on stdout. The command inherits
//!   the environment, so `SUMRANK_MODEL_DIR` reaches local model backends.

use std::collections::HashSet;
use std::io::Write;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::tokenize_for_metrics;

#[derive(Debug, Error)]
pub enum FactualityError {
    /// Transient backend trouble; the request may be retried as-is.
    #[error("scorer backend unavailable: {0}")]
    Retryable(String),
    /// Persistent misconfiguration; retrying cannot help.
    #[error("scorer configuration error: {0}")]
    Config(String),
    #[error("invalid scoring input: {0}")]
    InvalidInput(String),
}

impl FactualityError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, FactualityError::Retryable(_))
    }
}

/// Outcome of scoring one (article, summary) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactualityVerdict {
    /// Probability the summary is consistent with the article.
    pub probability: f64,
    /// `probability >= threshold` for the scorer's configured threshold.
    pub label: bool,
    pub scorer_tag: String,
    /// True when the article was truncated before scoring.
    #[serde(default)]
    pub truncated: bool,
}

/// Produces a consistency probability for one summary sentence.
pub trait ConsistencyBackend: Send + Sync {
    fn tag(&self) -> &str;
    fn probability(&self, article: &str, sentence: &str) -> Result<f64, FactualityError>;
}

/// Split on sentence-final punctuation (`.`, `!`, `?`) followed by
/// whitespace. Intentionally naive; decimal points and hyphenated
/// abbreviations survive, trailing punctuation stays attached.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut current = String::new();
    let mut boundary = false;
    for c in text.chars() {
        if matches!(c, '.' | '!' | '?') {
            current.push(c);
            boundary = true;
        } else if boundary && c.is_whitespace() {
            let s = current.trim();
            if !s.is_empty() {
                sentences.push(s.to_string());
            }
            current.clear();
            boundary = false;
        } else {
            current.push(c);
            boundary = false;
        }
    }
    let tail = current.trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    sentences
}

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "again", "all", "also", "am", "an", "and", "any", "are", "as", "at",
    "be", "been", "before", "being", "both", "but", "by", "can", "could", "did", "do", "does",
    "down", "each", "else", "few", "for", "from", "had", "has", "have", "he", "her", "here", "his",
    "how", "i", "if", "in", "into", "is", "it", "its", "just", "may", "me", "might", "more",
    "most", "must", "my", "no", "nor", "not", "of", "off", "on", "once", "only", "or", "other",
    "our", "out", "over", "own", "s", "same", "shall", "she", "should", "so", "some", "such", "t",
    "than", "that", "the", "their", "them", "then", "there", "these", "they", "this", "those",
    "to", "too", "under", "up", "very", "was", "we", "were", "what", "when", "where", "which",
    "who", "whom", "why", "will", "with", "would", "you", "your",
];

fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| STOPWORDS.iter().copied().collect())
}

pub fn is_content_token(token: &str) -> bool {
    !stopwords().contains(token)
}

/// Deterministic containment oracle: probability = fraction of the
/// sentence's content tokens that appear in the article. A sentence with no
/// content tokens is vacuously supported (probability 1).
#[derive(Debug, Clone, Default)]
pub struct OverlapOracle;

impl ConsistencyBackend for OverlapOracle {
    fn tag(&self) -> &str {
        "overlap-oracle"
    }

    fn probability(&self, article: &str, sentence: &str) -> Result<f64, FactualityError> {
        let article_tokens: HashSet<String> = tokenize_for_metrics(article).into_iter().collect();
        let content: Vec<String> = tokenize_for_metrics(sentence)
            .into_iter()
            .filter(|t| is_content_token(t))
            .collect();
        if content.is_empty() {
            return Ok(1.0);
        }
        let present = content
            .iter()
            .filter(|t| article_tokens.contains(*t))
            .count();
        Ok(present as f64 / content.len() as f64)
    }
}

/// How per-sentence probabilities combine into one verdict.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentenceAggregation {
    /// A summary is only as consistent as its worst sentence.
    #[default]
    Min,
    Mean,
}

/// Policy wrapper around a [`ConsistencyBackend`]; see module docs.
///
/// A `Scorer` is safe to share across parallel workers.
pub struct Scorer {
    backend: Box<dyn ConsistencyBackend>,
    threshold: f64,
    aggregation: SentenceAggregation,
    max_article_tokens: usize,
    max_retries: u32,
    concurrency: usize,
}

impl Scorer {
    /// Defaults: threshold 0.5, min aggregation, 512-token article budget,
    /// 2 retries, sequential batches.
    pub fn new(backend: Box<dyn ConsistencyBackend>) -> Self {
        Scorer {
            backend,
            threshold: 0.5,
            aggregation: SentenceAggregation::Min,
            max_article_tokens: 512,
            max_retries: 2,
            concurrency: 1,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn with_aggregation(mut self, aggregation: SentenceAggregation) -> Self {
        self.aggregation = aggregation;
        self
    }

    pub fn with_max_article_tokens(mut self, max: usize) -> Self {
        self.max_article_tokens = max.max(1);
        self
    }

    pub fn with_max_retries(mut self, retries: u32) -> Self {
        self.max_retries = retries;
        self
    }

    /// Bound on in-flight backend requests during [`Scorer::score_batch`].
    pub fn with_concurrency(mut self, workers: usize) -> Self {
        self.concurrency = workers.max(1);
        self
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn tag(&self) -> &str {
        self.backend.tag()
    }

    /// Truncate the article to the configured whitespace-token budget.
    fn truncate_article<'a>(&self, article: &'a str) -> (std::borrow::Cow<'a, str>, bool) {
        let words: Vec<&str> = article.split_whitespace().collect();
        if words.len() <= self.max_article_tokens {
            (std::borrow::Cow::Borrowed(article), false)
        } else {
            (
                std::borrow::Cow::Owned(words[..self.max_article_tokens].join(" ")),
                true,
            )
        }
    }

    fn probability_with_retry(
        &self,
        article: &str,
        sentence: &str,
    ) -> Result<f64, FactualityError> {
        let mut attempt = 0;
        loop {
            match self.backend.probability(article, sentence) {
                Ok(p) => return Ok(p),
                Err(e) if e.is_retryable() && attempt < self.max_retries => {
                    attempt += 1;
                    log::warn!("scorer retry {attempt}/{}: {e}", self.max_retries);
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Score one pair. Deterministic for a fixed backend and inputs; the
    /// label is `probability >= threshold` after sentence aggregation.
    pub fn score_pair(
        &self,
        article: &str,
        summary: &str,
    ) -> Result<FactualityVerdict, FactualityError> {
        if article.trim().is_empty() {
            return Err(FactualityError::InvalidInput("article is empty".into()));
        }
        if summary.trim().is_empty() {
            return Err(FactualityError::InvalidInput("summary is empty".into()));
        }
        let (article, truncated) = self.truncate_article(article);
        let sentences = split_sentences(summary);
        debug_assert!(
            !sentences.is_empty(),
            "non-empty summary always yields a sentence"
        );
        let mut probs = Vec::with_capacity(sentences.len());
        for sentence in &sentences {
            let p = self.probability_with_retry(&article, sentence)?;
            if !(0.0..=1.0).contains(&p) {
                return Err(FactualityError::Config(format!(
                    "backend `{}` returned probability {p} outside [0, 1]",
                    self.backend.tag()
                )));
            }
            probs.push(p);
        }
        let probability = match self.aggregation {
            SentenceAggregation::Min => probs.iter().copied().fold(f64::INFINITY, f64::min),
            SentenceAggregation::Mean => probs.iter().sum::<f64>() / probs.len() as f64,
        };
        Ok(FactualityVerdict {
            probability,
            label: probability >= self.threshold,
            scorer_tag: self.backend.tag().to_string(),
            truncated,
        })
    }

    /// Order-preserving batch scoring, element-wise identical to mapping
    /// [`Scorer::score_pair`]. Failures are per-item; nothing is dropped.
    pub fn score_batch(
        &self,
        pairs: &[(String, String)],
    ) -> Vec<Result<FactualityVerdict, FactualityError>> {
        if self.concurrency <= 1 || pairs.len() <= 1 {
            return pairs.iter().map(|(a, s)| self.score_pair(a, s)).collect();
        }
        let results: Mutex<Vec<Option<Result<FactualityVerdict, FactualityError>>>> =
            Mutex::new((0..pairs.len()).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..self.concurrency.min(pairs.len()) {
                scope.spawn(|| loop {
                    let idx = next.fetch_add(1, Ordering::Relaxed);
                    if idx >= pairs.len() {
                        break;
                    }
                    let verdict = self.score_pair(&pairs[idx].0, &pairs[idx].1);
                    results.lock().expect("scorer worker panicked")[idx] = Some(verdict);
                });
            }
        });
        results
            .into_inner()
            .expect("scorer worker panicked")
            .into_iter()
            .map(|slot| slot.expect("every batch index visited"))
            .collect()
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    article: &'a str,
    summary: &'a str,
}

#[derive(Deserialize)]
struct ScoreResponse {
    probability: f64,
}

/// Client for an HTTP scoring service. One POST per (article, sentence)
/// pair; requests are idempotent so retries are safe.
pub struct HttpBackend {
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Result<Self, FactualityError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| FactualityError::Config(format!("failed to build HTTP client: {e}")))?;
        Ok(HttpBackend {
            url: url.into(),
            client,
        })
    }
}

impl ConsistencyBackend for HttpBackend {
    fn tag(&self) -> &str {
        "http"
    }

    fn probability(&self, article: &str, sentence: &str) -> Result<f64, FactualityError> {
        let response = self
            .client
            .post(&self.url)
            .json(&ScoreRequest {
                article,
                summary: sentence,
            })
            .send()
            .map_err(|e| FactualityError::Retryable(format!("POST {}: {e}", self.url)))?;
        let status = response.status();
        if status.is_server_error() {
            return Err(FactualityError::Retryable(format!(
                "POST {}: status {status}",
                self.url
            )));
        }
        if !status.is_success() {
            return Err(FactualityError::Config(format!(
                "POST {}: status {status}",
                self.url
            )));
        }
        let parsed: ScoreResponse = response.json().map_err(|e| {
            FactualityError::Config(format!("POST {}: malformed response: {e}", self.url))
        })?;
        Ok(parsed.probability)
    }
}

/// Runs a local command once per (article, sentence) pair. The request JSON
/// goes to stdin (one line), the response JSON is read from stdout.
pub struct CommandBackend {
    program: String,
    args: Vec<String>,
}

impl CommandBackend {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        CommandBackend {
            program: program.into(),
            args,
        }
    }
}

impl ConsistencyBackend for CommandBackend {
    fn tag(&self) -> &str {
        "command"
    }

    fn probability(&self, article: &str, sentence: &str) -> Result<f64, FactualityError> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| {
                FactualityError::Config(format!("failed to spawn `{}`: {e}", self.program))
            })?;
        let request = serde_json::to_string(&ScoreRequest {
            article,
            summary: sentence,
        })
        .map_err(|e| FactualityError::Config(format!("request serialization: {e}")))?;
        {
            let stdin = child.stdin.as_mut().expect("stdin was piped");
            stdin
                .write_all(request.as_bytes())
                .and_then(|_| stdin.write_all(b"\n"))
                .map_err(|e| {
                    FactualityError::Retryable(format!("`{}` stdin: {e}", self.program))
                })?;
        }
        let output = child
            .wait_with_output()
            .map_err(|e| FactualityError::Retryable(format!("`{}`: {e}", self.program)))?;
        if !output.status.success() {
            return Err(FactualityError::Retryable(format!(
                "`{}` exited with {}",
                self.program, output.status
            )));
        }
        let stdout = String::from_utf8_lossy(&output.stdout);
        let line = stdout.lines().next().unwrap_or("");
        let parsed: ScoreResponse = serde_json::from_str(line).map_err(|e| {
            FactualityError::Config(format!("`{}`: malformed response line: {e}", self.program))
        })?;
        Ok(parsed.probability)
    }
}
