use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

/// Rademacher multipliers for one replicate, one per unit.
///
/// The stream is fixed by `(seed, replicate)` alone, so results do not depend
/// on how replicates are scheduled across threads.
pub(crate) fn rademacher(seed: u64, replicate: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let bits = rng.next_u64();
        let take = (n - out.len()).min(64);
        out.extend((0..take).map(|k| if (bits >> k) & 1 == 1 { 1.0 } else { -1.0 }));
    }
    out
}

/// Multiplier-bootstrap standard errors for linear statistics.
///
/// Each row of `influences` holds one statistic's per-unit influence
/// contributions. Replicate `r` perturbs them with unit-level Rademacher
/// draws; the standard error is the root mean square of the perturbed sums,
/// whose bootstrap mean is exactly zero.
pub fn bootstrap_standard_errors(influences: &[Vec<f64>], reps: usize, seed: u64) -> Vec<f64> {
    if influences.is_empty() || reps == 0 {
        return vec![f64::NAN; influences.len()];
    }
    let n = influences[0].len();
    let draws: Vec<Vec<f64>> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let xi = rademacher(seed, r, n);
            influences.iter().map(|psi| psi.iter().zip(&xi).map(|(p, x)| p * x).sum()).collect()
        })
        .collect();
    (0..influences.len()).map(|s| (draws.iter().map(|d| d[s] * d[s]).sum::<f64>() / reps as f64).sqrt()).collect()
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}
