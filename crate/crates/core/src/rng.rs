//! Seeded random streams.
//!
//! Every random quantity in the crate comes from SplitMix64 (algorithm id
//! [`PRNG_ALGORITHM`], 64-bit state initialised directly with the seed).
//! The float mappings below are fixed so seeds reproduce across platforms
//! and across independent implementations:
//!
//! * uniform in `[-1, 1)`: `u = (next_u64() >> 40) * 2^-24`, value `2u - 1`.
//!   Only exact float operations are involved.
//! * standard normal: Box-Muller on two 53-bit uniforms,
//!   `u1 = 1 - (a >> 11) * 2^-53`, `u2 = (b >> 11) * 2^-53`,
//!   `z = sqrt(-2 ln u1) * cos(2 pi u2)`; one draw per pair.

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

pub const PRNG_ALGORITHM: &str = "splitmix64";

pub struct SeededStream {
    inner: SplitMix64,
}

impl SeededStream {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: SplitMix64::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[-1, 1)`.
    pub fn uniform_symmetric(&mut self) -> f32 {
        let u = (self.next_u64() >> 40) as f32 * (1.0 / (1u32 << 24) as f32);
        2.0 * u - 1.0
    }

    fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.unit_f64();
        let u2 = self.unit_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
