//! Concentration bounds used to size the learner's confidence sets, plus
//! Monte-Carlo checks of their coverage.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{Kernel, Table};

/// L1 confidence radius for a transition row observed `visits` times by time `t`:
/// `min(2, sqrt(14 S ln(2 A t) / max(1, visits)))`.
pub fn radius(n_states: usize, n_actions: usize, t: u64, visits: u64) -> f64 {
    debug_assert!(n_states >= 1 && n_actions >= 1 && t >= 1);
    let log_term = (2.0 * n_actions as f64 * t as f64).ln();
    let raw = (14.0 * n_states as f64 * log_term / visits.max(1) as f64).sqrt();
    raw.min(2.0)
}

/// True iff every row of `p_true` is within its L1 radius of `p_hat`.
pub fn event_holds(p_hat: &Kernel, p_true: &Kernel, radii: &Table) -> bool {
    p_hat.iter().zip(p_true).zip(radii).all(|((bh, bt), rs)| {
        bh.iter().zip(bt).zip(rs).all(|((rh, rt), r)| l1_distance(rh, rt) <= *r)
    })
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `3 c sqrt(n ln n)`: bound on `E|sum X_i|` for a martingale difference
/// sequence with increments bounded by `c`.
pub fn azuma_expectation_bound(c: f64, n: u64) -> f64 {
    debug_assert!(n >= 2);
    3.0 * c * (n as f64 * (n as f64).ln()).sqrt()
}

/// Draws `samples` categorical outcomes from `row` and returns the empirical row.
pub fn empirical_row<R: Rng>(row: &[f64], samples: u64, rng: &mut R) -> Vec<f64> {
    if samples == 0 {
        return vec![1.0 / row.len() as f64; row.len()];
    }
    let mut counts = vec![0u64; row.len()];
    for _ in 0..samples {
        counts[sample_index(row, rng)] += 1;
    }
    let n = samples as f64;
    counts.iter().map(|c| *c as f64 / n).collect()
}

/// Inverse-CDF draw from a probability row.
pub fn sample_index<R: Rng>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in row.iter().enumerate() {
        if *p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Outcome of a coverage experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub samples_per_row: u64,
    pub t: u64,
    pub trials: usize,
    pub failures: usize,
}

impl CoverageReport {
    pub fn failure_rate(&self) -> f64 {
        self.failures as f64 / self.trials as f64
    }
}

/// Repeatedly estimates every row of `kernel` from `samples_per_row` draws and
/// counts how often some row leaves its confidence ball at time `t`.
pub fn weissman_coverage(kernel: &Kernel, samples_per_row: u64, t: u64, trials: usize, seed: u64) -> CoverageReport {
    let n_states = kernel.len();
    let n_actions = kernel.first().map_or(0, Vec::len);
    let r = radius(n_states, n_actions, t, samples_per_row);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    for _ in 0..trials {
        let failed = kernel.iter().flatten().any(|row| {
            let est = empirical_row(row, samples_per_row, &mut rng);
            l1_distance(&est, row) > r
        });
        if failed {
            failures += 1;
        }
    }
    CoverageReport { samples_per_row, t, trials, failures }
}

/// Monte-Carlo estimate of `E|sum_{i<n} X_i|` for i.i.d. fair `+-c` increments.
pub fn coin_flip_abs_sum(c: f64, n: u64, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..trials {
        let mut sum = 0.0;
        for _ in 0..n {
            sum += if rng.random::<bool>() { c } else { -c };
        }
        total += f64::abs(sum);
    }
    total / trials as f64
}
