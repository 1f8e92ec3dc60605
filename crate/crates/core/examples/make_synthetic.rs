//! Regenerates the shipped synthetic corpus under `data/synthetic/`.
//!
//! The output is deterministic for a fixed seed, so re-running this against
//! an unmodified checkout is a byte-identical no-op.
//!
//! Usage: `cargo run -p sumrank --example make_synthetic [DIR] [SEED]`

use sumrank::synthetic::{write_corpus, SHIPPED_CORPUS_SEED};

fn main() {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "data/synthetic".to_string());
    let seed = args
        .next()
        .map(|s| {
            s.parse::<u64>()
                .expect("SEED must be a non-negative integer")
        })
        .unwrap_or(SHIPPED_CORPUS_SEED);
    write_corpus(std::path::Path::new(&dir), seed).expect("corpus written");
    println!("wrote train/validation/test JSONL to {dir} (seed {seed})");
}
