//! Seeded sampling shared by every stage.
//!
//! All randomness goes through ChaCha8 (`rand_chacha`) seeded with
//! `seed_from_u64`, and every permutation is an explicit Fisher–Yates pass,
//! so outputs depend only on the seed and the locked crate versions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Identifier written into manifests so a run records how it shuffled.
pub const PRNG_DESCRIPTION: &str = "ChaCha8Rng(seed_from_u64) + Fisher-Yates (rand_chacha 0.9, rand 0.9)";

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// In-place Fisher–Yates shuffle, iterating from the back.
pub fn shuffle<T, R: Rng>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// First `k` positions of a partial forward Fisher–Yates pass over `items`.
///
/// Callers must ensure `k <= items.len()`.
pub fn sample_without_replacement<T: Clone, R: Rng>(items: &[T], k: usize, rng: &mut R) -> Vec<T> {
    assert!(k <= items.len(), "sample size exceeds population");
    let mut pool: Vec<T> = items.to_vec();
    for i in 0..k {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shuffle_is_a_permutation_and_seeded() {
        let mut a: Vec<u32> = (0..50).collect();
        let mut b = a.clone();
        shuffle(&mut a, &mut seeded(3));
        shuffle(&mut b, &mut seeded(3));
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(a, sorted);
    }

    #[test]
    fn sample_full_population_is_permutation() {
        let items: Vec<u32> = (0..10).collect();
        let mut s = sample_without_replacement(&items, 10, &mut seeded(1));
        s.sort();
        assert_eq!(s, items);
    }
}
