//! Seeded random streams.
//!
//! Every run draws from ChaCha8 seeded with the run seed. Each
//! `(generation, purpose)` pair owns a separate ChaCha stream with id
//! `(generation << 8) | purpose`, so adding draws to one purpose never
//! shifts another and results are identical on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    /// Identity means and samples.
    World = 1,
    /// Per-generation embedding jitter.
    Drift = 2,
    /// Per-generation label flips.
    Flip = 3,
}

pub fn stream(seed: u64, generation: u32, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((u64::from(generation) << 8) | purpose as u64);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, 3, Purpose::Flip).random();
        let b: u64 = stream(7, 3, Purpose::Flip).random();
        let c: u64 = stream(7, 3, Purpose::Drift).random();
        let d: u64 = stream(7, 4, Purpose::Flip).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
