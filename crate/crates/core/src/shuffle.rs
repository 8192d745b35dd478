//! Seeded permutations shared by dataset splitting and epoch shuffling.
//!
//! The generator is ChaCha8 seeded with `seed_from_u64(seed)` on a fixed
//! stream per use site. The permutation is a descending Fisher-Yates pass:
//! for `i` from `len - 1` down to `1`, swap `i` with `next_u64() % (i + 1)`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Name recorded alongside shuffled runs.
pub const RNG_NAME: &str = "chacha8";

/// Stream used for epoch shuffles.
pub const TRAIN_STREAM: u64 = 1;
/// Stream used for train/test/validation splits.
pub const SPLIT_STREAM: u64 = 2;

pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn fisher_yates<T>(items: &mut [T], rng: &mut impl RngCore) {
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

/// Seeded permutation of `0..n`.
pub fn permutation(n: usize, rng: &mut impl RngCore) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    fisher_yates(&mut idx, rng);
    idx
}
