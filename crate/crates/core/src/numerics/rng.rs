//! Seeded random number generation.
//!
//! The generator is xoshiro256++ seeded from a `u64` through SplitMix64
//! (`SeedableRng::seed_from_u64`). Normal draws use the ziggurat sampler of
//! `rand_distr::StandardNormal`, uniform draws use the 53-bit mantissa
//! conversion of `rand`. The whole stream is a pure function of the seed.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeededRng {
    inner: Xoshiro256PlusPlus,
}

/// Deterministic generator for `seed`.
pub fn seeded_rng(seed: u64) -> SeededRng {
    SeededRng::new(seed)
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng { inner: Xoshiro256PlusPlus::seed_from_u64(seed) }
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// `[rows, cols]` tensor of standard-normal draws in row-major order.
    pub fn normal_tensor(&mut self, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols).map(|_| self.normal()).collect();
        Tensor::matrix(rows, cols, data).expect("sized by construction")
    }
}

/// Mix `(base, stream, index)` into an independent seed (SplitMix64 finalizer).
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = seeded_rng(42);
        let mut b = seeded_rng(42);
        for _ in 0..1000 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn different_seeds_diverge_quickly() {
        let mut a = seeded_rng(1);
        let mut b = seeded_rng(2);
        let differs = (0..10).any(|_| a.normal() != b.normal());
        assert!(differs);
    }

    #[test]
    fn normal_moments() {
        let mut rng = seeded_rng(7);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = rng.normal();
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn uniform_range() {
        let mut rng = seeded_rng(3);
        for _ in 0..10_000 {
            let u = rng.uniform_in(-0.1, 0.1);
            assert!((-0.1..0.1).contains(&u));
        }
    }

    #[test]
    fn pinned_first_draws() {
        // Frozen so that silent changes to the generator or sampler show up.
        let mut rng = seeded_rng(0);
        assert_eq!(rng.next_u64(), 5987356902031041503);
        assert_eq!(rng.normal(), -7.131206168144315e-1);
        assert_eq!(rng.uniform(), 3.596172076473553e-1);
        assert_eq!(derive_seed(1, 2, 3), 12918191221454121869);
    }

    #[test]
    fn state_round_trips_through_serde() {
        let mut rng = seeded_rng(11);
        rng.normal();
        let json = serde_json::to_string(&rng).unwrap();
        let mut back: SeededRng = serde_json::from_str(&json).unwrap();
        assert_eq!(rng.normal().to_bits(), back.normal().to_bits());
    }
}
