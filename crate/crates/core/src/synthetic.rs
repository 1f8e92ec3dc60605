//! Deterministic synthetic corpus for desk-scale runs.
//!
//! Each document draws a small topic subset of the fixed 24-word vocabulary,
//! writes 2-3 short sentences over it, and takes its reference summary from
//! words that actually occur in the source. References are therefore factual
//! by construction under the containment oracle, while the words a document
//! does NOT use leave room for generated candidates to hallucinate, which is
//! what gives the selection stage both classes to balance.
//!
//! Split sizes are fixed at 50 train / 10 validation / 10 test. Generation
//! is a pure function of the seed, so the shipped data files can be
//! regenerated and diffed.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CorpusError, DocumentRecord, Split};
use crate::toy::ToyVocab;

/// Seed used for the data files shipped in the repository.
pub const SHIPPED_CORPUS_SEED: u64 = 17;

pub const TRAIN_DOCS: usize = 50;
pub const VALIDATION_DOCS: usize = 10;
pub const TEST_DOCS: usize = 10;

const WORDS: [&str; 24] = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet",
    "kilo", "lima", "mike", "november", "oscar", "papa", "quebec", "romeo", "sierra", "tango",
    "uniform", "victor", "whiskey", "xray",
];

/// The vocabulary shared by the synthetic corpus and the toy backends.
pub fn synthetic_vocab() -> ToyVocab {
    ToyVocab::new(WORDS).expect("the fixed word list is valid")
}

fn make_doc(rng: &mut ChaCha8Rng, id: String, split: Split) -> DocumentRecord {
    let mut pool = WORDS;
    let topic_size = rng.random_range(6..=9);
    let (topic, _) = pool.partial_shuffle(rng, topic_size);

    let sentence_count = rng.random_range(2..=3);
    let mut cursor = 0usize;
    let mut used: Vec<&str> = Vec::new();
    let mut sentences: Vec<String> = Vec::new();
    for _ in 0..sentence_count {
        let len = rng.random_range(3..=5);
        let words: Vec<&str> = (0..len)
            .map(|_| {
                let word = topic[cursor % topic.len()];
                cursor += 1;
                word
            })
            .collect();
        for word in &words {
            if !used.contains(word) {
                used.push(word);
            }
        }
        sentences.push(format!("{}.", words.join(" ")));
    }
    let source = sentences.join(" ");

    let reference_len = rng.random_range(2..=4).min(used.len());
    let reference = format!("{}.", used[..reference_len].join(" "));

    DocumentRecord::new(id, &source, &reference, split)
}

/// The full corpus, train then validation then test, in id order.
pub fn synthetic_corpus(seed: u64) -> Vec<DocumentRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::with_capacity(TRAIN_DOCS + VALIDATION_DOCS + TEST_DOCS);
    for (split, count, prefix) in [
        (Split::Train, TRAIN_DOCS, "train"),
        (Split::Validation, VALIDATION_DOCS, "validation"),
        (Split::Test, TEST_DOCS, "test"),
    ] {
        for i in 0..count {
            docs.push(make_doc(&mut rng, format!("synth-{prefix}-{i:03}"), split));
        }
    }
    docs
}

/// Write `train.jsonl`, `validation.jsonl`, and `test.jsonl` under `dir`.
pub fn write_corpus(dir: &Path, seed: u64) -> Result<(), CorpusError> {
    std::fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
    let docs = synthetic_corpus(seed);
    for (split, name) in [
        (Split::Train, "train.jsonl"),
        (Split::Validation, "validation.jsonl"),
        (Split::Test, "test.jsonl"),
    ] {
        let mut out = String::new();
        for doc in docs.iter().filter(|d| d.split == split) {
            out.push_str(&serde_json::to_string(doc).expect("document serializes"));
            out.push('\n');
        }
        let path = dir.join(name);
        std::fs::write(&path, out).map_err(|e| CorpusError::io(&path, e))?;
    }
    Ok(())
}
