use rand::seq::SliceRandom;

use super::{ActiveError, ConfusionStats};
use crate::seed::rng_from_seed;

/// A pool sample as seen by the selector: its label when known, otherwise
/// the current recognizer's reading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolSample {
    pub sample_id: String,
    pub text: String,
}

/// Misrecognition rate of the sample's worst character; characters below
/// `min_exposure` count as zero.
pub fn hardness(text: &str, stats: &ConfusionStats, min_exposure: u64) -> f64 {
    text.chars()
        .filter_map(|c| stats.rate(c, min_exposure))
        .fold(0.0, f64::max)
}

/// The `k` hardest pool samples. Equal hardness is ordered by a shuffle
/// seeded with `seed`, so an all-zero `stats` yields a seeded uniform pick.
pub fn select_hard_samples(
    pool: &[PoolSample],
    stats: &ConfusionStats,
    k: usize,
    min_exposure: u64,
    seed: u64,
) -> Result<Vec<String>, ActiveError> {
    if pool.len() < k {
        return Err(ActiveError::PoolExhausted {
            requested: k,
            available: pool.len(),
        });
    }
    let mut scored: Vec<(f64, &PoolSample)> =
        pool.iter().map(|s| (hardness(&s.text, stats, min_exposure), s)).collect();
    scored.shuffle(&mut rng_from_seed(seed));
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(scored.into_iter().take(k).map(|(_, s)| s.sample_id.clone()).collect())
}
