//! Seeded RNG substreams.
//!
//! Every stochastic component draws from a substream keyed by (seed, tag,
//! index), so results are independent of scheduling and worker count.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

/// Substream tag for synthetic data tables.
pub const TAG_DATA: u64 = 0x64617461;
/// Substream tag for bootstrap resamples.
pub const TAG_BOOT: u64 = 0x626f6f74;
/// Substream tag for grid audit points.
pub const TAG_AUDIT: u64 = 0x61756474;
/// Substream tag for Monte Carlo moment estimation.
pub const TAG_MC: u64 = 0x6d632e2e;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Deterministic RNG for the substream `(seed, tag, index)`.
pub fn substream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mixed = splitmix64(splitmix64(seed ^ splitmix64(tag)) ^ index);
    ChaCha8Rng::seed_from_u64(mixed)
}

/// One Poisson draw; a zero mean is the degenerate point mass at zero.
pub fn poisson_draw<R: Rng>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let dist = Poisson::new(mean).expect("positive finite Poisson mean");
    dist.sample(rng) as u64
}

/// Independent Poisson draws for a vector of cell means.
pub fn poisson_cells<R: Rng>(rng: &mut R, means: &[f64]) -> Vec<u64> {
    means.iter().map(|&m| poisson_draw(rng, m)).collect()
}
