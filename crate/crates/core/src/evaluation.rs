//! Test-split scoring and report comparison.
//!
//! A report carries one row per test document (ROUGE against the reference,
//! factuality verdict against the article, extractive coverage) plus header
//! aggregates that are always the arithmetic mean over the evaluated rows.
//! Documents with no summary stay in the report as flagged rows, excluded
//! from every aggregate and counted in the header.
//!
//! Factuality is reported as the rate of factual labels; the raw aggregated
//! probability is kept per row and as a mean for analysis. The coverage
//! distribution is summarized into 20 equal-width bins over [0, 1].
//!
//! On disk a report is one JSON header line followed by one JSON row line
//! per document (rows sorted by doc_id), so reports diff cleanly and stream.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DocumentRecord, Split};
use crate::factuality::{FactualityError, Scorer};
use crate::generation::{DecodingParams, GenerationError, GeneratorBackend};
use crate::metrics::{extractive_coverage, rouge_l, rouge_n, tokenize_for_metrics};

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("no reports to compare")]
    NoReports,
    #[error("reports cover different splits: {0} vs {1}")]
    SplitMismatch(Split, Split),
    #[error("factuality scoring failed for document `{doc_id}`: {source}")]
    Scorer {
        doc_id: String,
        source: FactualityError,
    },
    #[error("decoding failed for document `{doc_id}`: {source}")]
    Generation {
        doc_id: String,
        source: GenerationError,
    },
    #[error("report file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed report file: {0}")]
    Malformed(String),
}

pub const COVERAGE_BINS: usize = 20;

/// Per-document metrics; absent entirely when the summary was missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowMetrics {
    pub summary: String,
    pub rouge1_f1: f64,
    pub rouge2_f1: f64,
    #[serde(rename = "rougeL_f1")]
    pub rougel_f1: f64,
    pub factual: bool,
    pub factuality_probability: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRow {
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<RowMetrics>,
}

/// Aggregates over the evaluated rows; see module docs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub system_tag: String,
    pub split: Split,
    pub scorer_tag: String,
    pub documents_total: usize,
    pub documents_evaluated: usize,
    pub documents_missing: usize,
    pub rouge1_f1: f64,
    pub rouge2_f1: f64,
    #[serde(rename = "rougeL_f1")]
    pub rougel_f1: f64,
    /// Fraction of evaluated documents labeled factual.
    pub factuality_rate: f64,
    pub mean_factuality_probability: f64,
    pub mean_coverage: f64,
    /// Row counts over 20 equal-width coverage bins spanning [0, 1].
    pub coverage_histogram: Vec<usize>,
    /// Slot for an externally computed token-level factuality score; never
    /// produced in-repo.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_dae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub header: ReportHeader,
    /// Sorted by doc_id.
    pub rows: Vec<DocumentRow>,
}

/// Decode the single best summary per document with `backend`.
///
/// Documents the backend returns nothing for are simply absent from the map
/// (they become flagged rows downstream).
pub fn generate_summaries(
    backend: &dyn GeneratorBackend,
    docs: &[DocumentRecord],
    params: &DecodingParams,
) -> Result<BTreeMap<String, String>, EvaluationError> {
    let top1 = DecodingParams {
        num_candidates: 1,
        ..params.clone()
    };
    let mut summaries = BTreeMap::new();
    for doc in docs {
        let outputs =
            backend
                .generate(&doc.source, &top1)
                .map_err(|source| EvaluationError::Generation {
                    doc_id: doc.id.clone(),
                    source,
                })?;
        match outputs.into_iter().next() {
            Some(summary) => {
                summaries.insert(doc.id.clone(), summary.text);
            }
            None => log::warn!("document `{}`: backend produced no summary", doc.id),
        }
    }
    Ok(summaries)
}

/// Score one system over a test split.
///
/// Pure in (summaries, references, articles, scorer): re-running yields an
/// identical report. Rows are sorted by doc_id; only documents of `split`
/// are considered.
pub fn evaluate_system(
    system_tag: &str,
    docs: &[DocumentRecord],
    summaries: &BTreeMap<String, String>,
    scorer: &Scorer,
    split: Split,
) -> Result<EvaluationReport, EvaluationError> {
    let mut docs: Vec<&DocumentRecord> = docs.iter().filter(|d| d.split == split).collect();
    docs.sort_by(|a, b| a.id.cmp(&b.id));

    let present: Vec<&DocumentRecord> = docs
        .iter()
        .copied()
        .filter(|d| summaries.contains_key(&d.id))
        .collect();
    let pairs: Vec<(String, String)> = present
        .iter()
        .map(|d| (d.source.clone(), summaries[&d.id].clone()))
        .collect();
    let mut verdicts = BTreeMap::new();
    for (doc, verdict) in present.iter().zip(scorer.score_batch(&pairs)) {
        let verdict = verdict.map_err(|source| EvaluationError::Scorer {
            doc_id: doc.id.clone(),
            source,
        })?;
        verdicts.insert(doc.id.clone(), verdict);
    }

    let mut rows = Vec::with_capacity(docs.len());
    let mut histogram = vec![0usize; COVERAGE_BINS];
    let (mut r1, mut r2, mut rl, mut factual, mut prob, mut cov) =
        (0.0, 0.0, 0.0, 0usize, 0.0, 0.0);
    for doc in &docs {
        let Some(summary) = summaries.get(&doc.id) else {
            rows.push(DocumentRow {
                doc_id: doc.id.clone(),
                metrics: None,
            });
            continue;
        };
        let summary_tokens = tokenize_for_metrics(summary);
        let reference_tokens = tokenize_for_metrics(&doc.reference);
        let article_tokens = tokenize_for_metrics(&doc.source);
        let verdict = &verdicts[&doc.id];
        let coverage = extractive_coverage(&summary_tokens, &article_tokens).coverage;
        let metrics = RowMetrics {
            summary: summary.clone(),
            rouge1_f1: rouge_n(&summary_tokens, &reference_tokens, 1).f1,
            rouge2_f1: rouge_n(&summary_tokens, &reference_tokens, 2).f1,
            rougel_f1: rouge_l(&summary_tokens, &reference_tokens).f1,
            factual: verdict.label,
            factuality_probability: verdict.probability,
            coverage,
        };
        r1 += metrics.rouge1_f1;
        r2 += metrics.rouge2_f1;
        rl += metrics.rougel_f1;
        factual += usize::from(metrics.factual);
        prob += metrics.factuality_probability;
        cov += coverage;
        histogram[((coverage * COVERAGE_BINS as f64) as usize).min(COVERAGE_BINS - 1)] += 1;
        rows.push(DocumentRow {
            doc_id: doc.id.clone(),
            metrics: Some(metrics),
        });
    }

    let evaluated = verdicts.len();
    let denom = if evaluated == 0 {
        1.0
    } else {
        evaluated as f64
    };
    Ok(EvaluationReport {
        header: ReportHeader {
            system_tag: system_tag.to_string(),
            split,
            scorer_tag: scorer.tag().to_string(),
            documents_total: docs.len(),
            documents_evaluated: evaluated,
            documents_missing: docs.len() - evaluated,
            rouge1_f1: r1 / denom,
            rouge2_f1: r2 / denom,
            rougel_f1: rl / denom,
            factuality_rate: factual as f64 / denom,
            mean_factuality_probability: prob / denom,
            mean_coverage: cov / denom,
            coverage_histogram: histogram,
            external_dae: None,
        },
        rows,
    })
}

/// One JSON header line, then one JSON row line per document.
pub fn write_report(report: &EvaluationReport, path: &Path) -> Result<(), EvaluationError> {
    let mut out = Vec::new();
    serde_json::to_writer(&mut out, &report.header)
        .map_err(|e| EvaluationError::Malformed(e.to_string()))?;
    out.push(b'\n');
    for row in &report.rows {
        serde_json::to_writer(&mut out, row)
            .map_err(|e| EvaluationError::Malformed(e.to_string()))?;
        out.push(b'\n');
    }
    crate::manifest::write_atomic(path, &out)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<EvaluationReport, EvaluationError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines();
    let header_line = loop {
        match lines.next() {
            Some(line) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
            None => {
                return Err(EvaluationError::Malformed(format!(
                    "{}: empty report",
                    path.display()
                )))
            }
        }
    };
    let header: ReportHeader = serde_json::from_str(&header_line)
        .map_err(|e| EvaluationError::Malformed(format!("{}: bad header: {e}", path.display())))?;
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: DocumentRow = serde_json::from_str(&line)
            .map_err(|e| EvaluationError::Malformed(format!("{}: bad row: {e}", path.display())))?;
        rows.push(row);
    }
    Ok(EvaluationReport { header, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub system_tag: String,
    pub rouge1_f1: f64,
    #[serde(rename = "rougeL_f1")]
    pub rougel_f1: f64,
    pub factuality_rate: f64,
    pub mean_coverage: f64,
}

/// Side-by-side system comparison over one split.
///
/// `best` maps metric name to the winning system (maximum value; first
/// system wins ties). Coverage is reported but never marked: whether high
/// extractiveness is good depends on the question being asked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub split: Split,
    pub entries: Vec<ComparisonEntry>,
    pub best: BTreeMap<String, String>,
}

pub fn compare_reports(reports: &[EvaluationReport]) -> Result<ComparisonTable, EvaluationError> {
    let first = reports.first().ok_or(EvaluationError::NoReports)?;
    for report in reports {
        if report.header.split != first.header.split {
            return Err(EvaluationError::SplitMismatch(
                first.header.split,
                report.header.split,
            ));
        }
    }
    let entries: Vec<ComparisonEntry> = reports
        .iter()
        .map(|r| ComparisonEntry {
            system_tag: r.header.system_tag.clone(),
            rouge1_f1: r.header.rouge1_f1,
            rougel_f1: r.header.rougel_f1,
            factuality_rate: r.header.factuality_rate,
            mean_coverage: r.header.mean_coverage,
        })
        .collect();
    let mut best = BTreeMap::new();
    if entries.len() > 1 {
        type Getter = fn(&ComparisonEntry) -> f64;
        let metrics: [(&str, Getter); 3] = [
            ("rouge1_f1", |e| e.rouge1_f1),
            ("rougeL_f1", |e| e.rougel_f1),
            ("factuality_rate", |e| e.factuality_rate),
        ];
        for (name, get) in metrics {
            let mut winner = &entries[0];
            for entry in &entries[1..] {
                if get(entry) > get(winner) {
                    winner = entry;
                }
            }
            best.insert(name.to_string(), winner.system_tag.clone());
        }
    }
    Ok(ComparisonTable {
        split: first.header.split,
        entries,
        best,
    })
}

impl ComparisonTable {
    /// Aligned plain-text rendering; best values carry a `*` prefix.
    pub fn render_text(&self) -> String {
        let headers = [
            "system",
            "rouge1_f1",
            "rougeL_f1",
            "factuality_rate",
            "mean_coverage",
        ];
        let mut grid: Vec<Vec<String>> = vec![headers.iter().map(|s| s.to_string()).collect()];
        for entry in &self.entries {
            let mark = |metric: &str, value: f64| {
                let star = if self
                    .best
                    .get(metric)
                    .is_some_and(|tag| *tag == entry.system_tag)
                {
                    "*"
                } else {
                    ""
                };
                format!("{star}{value:.4}")
            };
            grid.push(vec![
                entry.system_tag.clone(),
                mark("rouge1_f1", entry.rouge1_f1),
                mark("rougeL_f1", entry.rougel_f1),
                mark("factuality_rate", entry.factuality_rate),
                format!("{:.4}", entry.mean_coverage),
            ]);
        }
        let widths: Vec<usize> = (0..headers.len())
            .map(|c| grid.iter().map(|row| row[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = format!("split: {}\n", self.split);
        for row in &grid {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, cell)| {
                    if c == 0 {
                        format!("{cell:<w$}", w = widths[c])
                    } else {
                        format!("{cell:>w$}", w = widths[c])
                    }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}
