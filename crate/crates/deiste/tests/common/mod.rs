//! Shared helpers for integration tests: deterministic synthetic
//! entailment data where the label is decided by token overlap.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use deiste::data::PairExample;

/// Entailing pairs repeat premise tokens in the hypothesis; neutral pairs
/// draw the hypothesis from a disjoint pool.
pub fn separable_pairs(count: usize, seed: u64) -> Vec<PairExample> {
    let premise_pool: Vec<String> = (0..24).map(|i| format!("alpha{i}")).collect();
    let neutral_pool: Vec<String> = (0..24).map(|i| format!("beta{i}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let label = (i % 2) as u8;
            let premise: Vec<String> = premise_pool
                .choose_multiple(&mut rng, 4)
                .cloned()
                .collect();
            let hypothesis: Vec<String> = if label == 1 {
                premise[..2].to_vec()
            } else {
                neutral_pool.choose_multiple(&mut rng, 2).cloned().collect()
            };
            PairExample::new(&premise.join(" "), &hypothesis.join(" "), label).unwrap()
        })
        .collect()
}

pub fn write_tsv(dir: &Path, name: &str, pairs: &[PairExample]) -> PathBuf {
    let mut contents = String::new();
    for pair in pairs {
        let label = if pair.label == 1 { "entails" } else { "neutral" };
        writeln!(
            contents,
            "{}\t{}\t{}",
            pair.premise_text, pair.hypothesis_text, label
        )
        .unwrap();
    }
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

pub fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_deiste")
}
