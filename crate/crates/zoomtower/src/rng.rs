//! Reproducible random streams.
//!
//! Work is cut into fixed chunks and chunk `k` draws from its own SplitMix64
//! stream derived from `(seed, k)`, so results do not depend on how many
//! threads run the chunks.

use rand::{RngCore, SeedableRng};
use rayon::prelude::*;

pub use rand_xoshiro::SplitMix64;

/// Samples per stream.
pub const CHUNK: usize = 1024;

/// Stream `index` of the family seeded by `seed`.
pub fn stream(seed: u64, index: u64) -> SplitMix64 {
    let mut mix = SplitMix64::seed_from_u64(seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    // one extra round decorrelates neighbouring indices
    let s = mix.next_u64() ^ index;
    SplitMix64::seed_from_u64(s)
}

/// Uniform draw in `[0, 1)` with 53 random bits.
#[inline]
pub fn uniform(rng: &mut SplitMix64) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// `f(rng, i)` for `i = 0..count`, chunked over streams, in index order.
pub fn par_draw<T, F>(seed: u64, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut SplitMix64, usize) -> T + Sync,
{
    let chunks = count.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = stream(seed, c as u64);
            let end = ((c + 1) * CHUNK).min(count);
            (c * CHUNK..end).map(|i| f(&mut rng, i)).collect::<Vec<_>>()
        })
        .collect()
}

/// Folds `f` over `i = 0..count`, one accumulator per chunk, returned in
/// chunk order so the caller can reduce deterministically.
pub fn par_fold<A, I, F>(seed: u64, count: usize, init: I, f: F) -> Vec<A>
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, &mut SplitMix64, usize) + Sync,
{
    let chunks = count.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, c as u64);
            let mut acc = init();
            for i in c * CHUNK..((c + 1) * CHUNK).min(count) {
                f(&mut acc, &mut rng, i);
            }
            acc
        })
        .collect()
}
