//! Brute-force counting oracle for the population metrics. Everything is
//! done on integer counts and turned into a float by one final division.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn counts(values: &[usize], m: usize) -> Vec<i64> {
    (1..=m).map(|k| values.iter().filter(|&&v| v == k).count() as i64).collect()
}

fn cumulative(values: &[usize], m: usize) -> Vec<i64> {
    (1..=m).map(|k| values.iter().filter(|&&v| v <= k).count() as i64).collect()
}

/// Half the L1 distance between the two empirical pmfs.
pub fn tvd(truth: &[usize], pred: &[usize], m: usize) -> f64 {
    let (n, nh) = (truth.len() as i64, pred.len() as i64);
    let num: i64 = counts(truth, m)
        .iter()
        .zip(counts(pred, m))
        .map(|(c, ch)| (c * nh - ch * n).abs())
        .sum();
    num as f64 / (2 * n * nh) as f64
}

/// L1 distance between the empirical CDFs at every support point.
pub fn wd(truth: &[usize], pred: &[usize], m: usize) -> f64 {
    let (n, nh) = (truth.len() as i64, pred.len() as i64);
    let num: i64 = cumulative(truth, m)
        .iter()
        .zip(cumulative(pred, m))
        .map(|(c, ch)| (c * nh - ch * n).abs())
        .sum();
    num as f64 / (n * nh) as f64
}

/// 100 |mean(pred) - mean(truth)| / mean(truth).
pub fn mee(truth: &[usize], pred: &[usize]) -> f64 {
    let (n, nh) = (truth.len() as i64, pred.len() as i64);
    let s: i64 = truth.iter().map(|&v| v as i64).sum();
    let sh: i64 = pred.iter().map(|&v| v as i64).sum();
    100.0 * (sh * n - s * nh).abs() as f64 / (s * nh) as f64
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub m: usize,
    pub truth: Vec<usize>,
    pub pred: Vec<usize>,
}

/// Support size in `1..=7`, sample sizes in `1..=50`, values uniform or
/// concentrated on a few answers.
pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let m = rng.random_range(1..=7);
    let draw = |rng: &mut ChaCha8Rng| {
        let n = rng.random_range(1..=50);
        let hi = rng.random_range(1..=m);
        (0..n).map(|_| rng.random_range(1..=hi)).collect::<Vec<usize>>()
    };
    let truth = draw(rng);
    let pred = draw(rng);
    Instance { m, truth, pred }
}

pub fn instances(seed: u64, count: usize) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_instance(&mut rng)).collect()
}

/// Largest absolute deviation between implementation and oracle over the
/// four metrics.
pub fn max_deviation(inst: &Instance) -> f64 {
    use privsim::metrics;
    let p = metrics::distribution("q", &inst.truth, inst.m).unwrap();
    let q = metrics::distribution("q", &inst.pred, inst.m).unwrap();
    let t = metrics::tvd(&p, &q).unwrap();
    let devs = [
        (t - tvd(&inst.truth, &inst.pred, inst.m)).abs(),
        ((1.0 - t) - (1.0 - tvd(&inst.truth, &inst.pred, inst.m))).abs(),
        (metrics::mee(&inst.truth, &inst.pred).unwrap() - mee(&inst.truth, &inst.pred)).abs(),
        (metrics::wasserstein(&p, &q).unwrap() - wd(&inst.truth, &inst.pred, inst.m)).abs(),
    ];
    devs.into_iter().fold(0.0, f64::max)
}
