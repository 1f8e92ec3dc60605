//! Dataset ingestion, validation, and the on-disk candidate cache.
//!
//! Dataset files are line-delimited JSON, one document per line with fields
//! `id`, `source`, `reference`, `split`. Whitespace normalization (collapse
//! runs, strip ends) happens exactly once, here at ingestion; every other
//! module sees the canonical form. The candidate cache is also line-delimited
//! JSON, one candidate-set object per line keyed by `doc_id`; the file is
//! append-only and the newest line for a given `doc_id` wins.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Lines, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factuality::FactualityVerdict;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: duplicate document id `{id}`")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },
    #[error("candidate store {path}: {message}")]
    Store { path: PathBuf, message: String },
    #[error("{path} line {line}: malformed record: {source}")]
    Malformed {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn store(path: &Path, message: impl Into<String>) -> Self {
        CorpusError::Store {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}

/// Dataset partition a document belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(CorpusError::InvalidRecord(format!(
                "unknown split `{other}` (expected train, validation, or test)"
            ))),
        }
    }
}

/// Collapse whitespace runs to single spaces and strip both ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// A source article, its reference summary, and a stable identifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub id: String,
    pub source: String,
    pub reference: String,
    pub split: Split,
}

impl DocumentRecord {
    /// Build a record, normalizing whitespace in `source` and `reference`.
    pub fn new(id: impl Into<String>, source: &str, reference: &str, split: Split) -> Self {
        DocumentRecord {
            id: id.into(),
            source: normalize_whitespace(source),
            reference: normalize_whitespace(reference),
            split,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.id.is_empty() {
            return Err(CorpusError::InvalidRecord("document id is empty".into()));
        }
        if self.source.is_empty() {
            return Err(CorpusError::InvalidRecord(format!(
                "document `{}`: source is empty",
                self.id
            )));
        }
        if self.reference.is_empty() {
            return Err(CorpusError::InvalidRecord(format!(
                "document `{}`: reference is empty",
                self.id
            )));
        }
        Ok(())
    }
}

/// One generated summary plus everything later stages attach to it.
///
/// `token_logprobs` has one entry per generated token under the producing
/// backend's tokenizer; `factuality` and `rouge` stay `None` until the
/// scoring stage fills them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub doc_id: String,
    pub candidate_index: u32,
    pub text: String,
    pub generator_tag: String,
    pub token_logprobs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factuality: Option<FactualityVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rouge: Option<f64>,
}

impl CandidateRecord {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let tag = || format!("candidate {}#{}", self.doc_id, self.candidate_index);
        if self.doc_id.is_empty() {
            return Err(CorpusError::InvalidRecord(
                "candidate doc_id is empty".into(),
            ));
        }
        if self.text.is_empty() {
            return Err(CorpusError::InvalidRecord(format!(
                "{}: text is empty",
                tag()
            )));
        }
        for lp in &self.token_logprobs {
            if !lp.is_finite() || *lp > 0.0 {
                return Err(CorpusError::InvalidRecord(format!(
                    "{}: token log-probability {lp} is not a finite value ≤ 0",
                    tag()
                )));
            }
        }
        if let Some(r) = self.rouge {
            if !(0.0..=1.0).contains(&r) {
                return Err(CorpusError::InvalidRecord(format!(
                    "{}: rouge {r} outside [0, 1]",
                    tag()
                )));
            }
        }
        Ok(())
    }
}

/// Counters reported by [`DatasetReader`] after a pass over the file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    /// Records yielded to the caller.
    pub loaded: usize,
    /// Ill-formed lines skipped with a logged diagnostic.
    pub skipped: usize,
    /// Well-formed records filtered out because they belong to another split.
    pub other_split: usize,
}

/// Streaming reader over a dataset file, filtered to one split.
///
/// Yields records in file order. Ill-formed lines are skipped and counted;
/// duplicate ids (across all splits in the file) are fatal.
pub struct DatasetReader {
    path: PathBuf,
    split: Split,
    lines: Lines<BufReader<File>>,
    line_no: usize,
    seen_ids: HashSet<String>,
    stats: LoadStats,
    failed: bool,
}

impl DatasetReader {
    pub fn stats(&self) -> LoadStats {
        self.stats
    }
}

impl Iterator for DatasetReader {
    type Item = Result<DocumentRecord, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(CorpusError::io(&self.path, e)));
                }
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let raw: DocumentRecord = match serde_json::from_str(&line) {
                Ok(raw) => raw,
                Err(e) => {
                    log::warn!(
                        "{} line {}: skipping malformed record: {e}",
                        self.path.display(),
                        self.line_no
                    );
                    self.stats.skipped += 1;
                    continue;
                }
            };
            let record = DocumentRecord::new(raw.id, &raw.source, &raw.reference, raw.split);
            if let Err(e) = record.validate() {
                log::warn!(
                    "{} line {}: skipping record: {e}",
                    self.path.display(),
                    self.line_no
                );
                self.stats.skipped += 1;
                continue;
            }
            if !self.seen_ids.insert(record.id.clone()) {
                self.failed = true;
                return Some(Err(CorpusError::DuplicateId {
                    path: self.path.clone(),
                    line: self.line_no,
                    id: record.id,
                }));
            }
            if record.split != self.split {
                self.stats.other_split += 1;
                continue;
            }
            self.stats.loaded += 1;
            return Some(Ok(record));
        }
    }
}

/// Open `path` and stream the records belonging to `split`.
pub fn load_dataset(path: &Path, split: Split) -> Result<DatasetReader, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    Ok(DatasetReader {
        path: path.to_path_buf(),
        split,
        lines: BufReader::new(file).lines(),
        line_no: 0,
        seen_ids: HashSet::new(),
        stats: LoadStats::default(),
        failed: false,
    })
}

/// Collect a whole split into memory along with its load statistics.
pub fn load_dataset_vec(
    path: &Path,
    split: Split,
) -> Result<(Vec<DocumentRecord>, LoadStats), CorpusError> {
    let mut reader = load_dataset(path, split)?;
    let mut docs = Vec::new();
    for record in &mut reader {
        docs.push(record?);
    }
    Ok((docs, reader.stats()))
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    doc_id: String,
    candidates: Vec<CandidateRecord>,
}

/// Append-only candidate cache, one candidate-set object per line.
///
/// One writer at a time per store; reads open the file independently and are
/// safe to run concurrently with each other. Re-writing a `doc_id` appends a
/// new line that shadows the old one.
#[derive(Debug)]
pub struct CandidateStore {
    path: PathBuf,
}

impl CandidateStore {
    /// Create an empty store, truncating any existing file.
    pub fn create(path: &Path) -> Result<Self, CorpusError> {
        File::create(path).map_err(|e| CorpusError::io(path, e))?;
        Ok(CandidateStore {
            path: path.to_path_buf(),
        })
    }

    /// Open an existing store.
    pub fn open(path: &Path) -> Result<Self, CorpusError> {
        if !path.is_file() {
            return Err(CorpusError::store(path, "store file does not exist"));
        }
        Ok(CandidateStore {
            path: path.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Append one candidate set. On a failed write the file is truncated back
    /// to its previous length so no partial line survives.
    pub fn persist_candidates(
        &mut self,
        doc_id: &str,
        candidates: &[CandidateRecord],
    ) -> Result<(), CorpusError> {
        let mut seen = HashSet::new();
        for c in candidates {
            if c.doc_id != doc_id {
                return Err(CorpusError::store(
                    &self.path,
                    format!(
                        "candidate doc_id `{}` does not match set doc_id `{doc_id}`",
                        c.doc_id
                    ),
                ));
            }
            if !seen.insert(c.candidate_index) {
                return Err(CorpusError::store(
                    &self.path,
                    format!(
                        "doc `{doc_id}`: duplicate candidate_index {}",
                        c.candidate_index
                    ),
                ));
            }
            c.validate()?;
        }
        let line = CacheLine {
            doc_id: doc_id.to_string(),
            candidates: candidates.to_vec(),
        };
        let mut buf =
            serde_json::to_vec(&line).map_err(|e| CorpusError::store(&self.path, e.to_string()))?;
        buf.push(b'\n');

        let mut file = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(|e| CorpusError::io(&self.path, e))?;
        let offset = file
            .seek(SeekFrom::End(0))
            .map_err(|e| CorpusError::io(&self.path, e))?;
        if let Err(e) = file.write_all(&buf).and_then(|_| file.flush()) {
            // Partial-write cleanup: drop whatever landed after the old end.
            let _ = file.set_len(offset);
            return Err(CorpusError::io(&self.path, e));
        }
        Ok(())
    }

    /// Read the newest candidate set for `doc_id`; unknown ids yield an empty list.
    pub fn read(&self, doc_id: &str) -> Result<Vec<CandidateRecord>, CorpusError> {
        let mut found = Vec::new();
        self.scan(|line| {
            if line.doc_id == doc_id {
                found = line.candidates;
            }
        })?;
        Ok(found)
    }

    /// Read every candidate set, newest line per `doc_id` winning.
    pub fn read_all(&self) -> Result<BTreeMap<String, Vec<CandidateRecord>>, CorpusError> {
        let mut map = BTreeMap::new();
        self.scan(|line| {
            map.insert(line.doc_id, line.candidates);
        })?;
        Ok(map)
    }

    fn scan(&self, mut visit: impl FnMut(CacheLine)) -> Result<(), CorpusError> {
        let file = File::open(&self.path).map_err(|e| CorpusError::io(&self.path, e))?;
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| CorpusError::io(&self.path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: CacheLine =
                serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                    path: self.path.clone(),
                    line: idx + 1,
                    source: e,
                })?;
            visit(parsed);
        }
        Ok(())
    }
}
