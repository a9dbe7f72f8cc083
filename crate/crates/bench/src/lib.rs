//! Inputs shared by the benchmarks.

use privsim::metrics::QuestionSample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `count` questions with `support` options and `n` truth and prediction
/// values each.
pub fn question_samples(count: usize, support: usize, n: usize, seed: u64) -> Vec<QuestionSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| QuestionSample {
            question_id: format!("q{i}"),
            support,
            truth: (0..n).map(|_| rng.random_range(1..=support)).collect(),
            predicted: (0..n).map(|_| rng.random_range(1..=support)).collect(),
        })
        .collect()
}

pub fn coin_flips(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect()
}
