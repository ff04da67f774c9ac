use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Source of uniform draws in `[0, 1)`.
///
/// The engine draws through this trait so tests can force outcomes.
pub trait UnitSource {
    fn next_unit(&mut self) -> f64;
}

/// Seeded deterministic generator: ChaCha8 keyed with `seed_from_u64(seed)`.
///
/// A unit draw takes the top 53 bits of the next `u64` and scales by 2^-53,
/// so the mapping from seed to draw sequence is fixed independently of any
/// float sampling code in `rand`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prng {
    inner: ChaCha8Rng,
    draws: u64,
}

impl Prng {
    pub fn seeded(seed: u64) -> Self {
        Prng { inner: ChaCha8Rng::seed_from_u64(seed), draws: 0 }
    }

    /// Number of unit draws taken so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }
}

impl UnitSource for Prng {
    fn next_unit(&mut self) -> f64 {
        self.draws += 1;
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Replays a fixed list of draws, then repeats the last one.
#[derive(Debug, Clone)]
pub struct FixedDraws {
    values: Vec<f64>,
    next: usize,
}

impl FixedDraws {
    pub fn new(values: impl Into<Vec<f64>>) -> Self {
        let values = values.into();
        assert!(!values.is_empty(), "FixedDraws needs at least one value");
        FixedDraws { values, next: 0 }
    }

    pub fn taken(&self) -> usize {
        self.next
    }
}

impl UnitSource for FixedDraws {
    fn next_unit(&mut self) -> f64 {
        let v = self.values[self.next.min(self.values.len() - 1)];
        self.next += 1;
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = Prng::seeded(42);
        let mut b = Prng::seeded(42);
        let xs: Vec<f64> = (0..16).map(|_| a.next_unit()).collect();
        let ys: Vec<f64> = (0..16).map(|_| b.next_unit()).collect();
        assert_eq!(xs, ys);
        assert_eq!(a.draws(), 16);
    }

    #[test]
    fn different_seeds_differ() {
        assert_ne!(Prng::seeded(1).next_unit(), Prng::seeded(2).next_unit());
    }

    #[test]
    fn draws_are_in_unit_interval() {
        let mut rng = Prng::seeded(7);
        for _ in 0..10_000 {
            let u = rng.next_unit();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn seed_42_is_pinned() {
        // Guards the seed-to-sequence mapping that recorded logs depend on.
        let mut rng = Prng::seeded(42);
        let first = rng.next_unit();
        assert_eq!(first.to_bits(), Prng::seeded(42).next_unit().to_bits());
        assert_eq!(format!("{first:.12}"), PINNED_SEED_42_FIRST);
    }

    const PINNED_SEED_42_FIRST: &str = "0.681896192307";
}
