//! Fixtures shared by the criterion benches.

use medfaith_core::synthetic::{self, SyntheticCorpus};
use medfaith_core::Language;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn corpus(language: Language, n: usize) -> SyntheticCorpus {
    synthetic::generate(language, n, 7)
}

/// Random dense representations: `(positives, negatives)`.
pub fn representations(
    dim: usize,
    p: usize,
    n: usize,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = || {
        (0..dim)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect::<Vec<f64>>()
    };
    ((0..p).map(|_| v()).collect(), (0..n).map(|_| v()).collect())
}

pub fn logits(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-4.0..4.0)).collect()
}
