//! Seeded random streams.
//!
//! Every stochastic component takes an explicit `&mut SeededRng`; nothing in
//! the crate touches thread-local randomness, so identical seeds reproduce
//! identical runs bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finaliser. Used to derive independent child seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Index of a maximal element, ties broken uniformly at random.
///
/// The stream is consumed only when there is more than one maximiser, so
/// callers with a unique argmax see no change in their random sequence.
pub fn argmax_random_tie<R: Rng + ?Sized>(scores: &[f64], rng: &mut R) -> usize {
    assert!(!scores.is_empty(), "argmax over empty scores");
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut count = 0usize;
    for &s in scores {
        if s == best {
            count += 1;
        }
    }
    if count == 1 {
        return scores.iter().position(|&s| s == best).unwrap();
    }
    let pick = rng.random_range(0..count);
    scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s == best)
        .nth(pick)
        .map(|(i, _)| i)
        .unwrap()
}
