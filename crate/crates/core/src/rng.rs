//! Seeded, splittable random-number streams for reproducible trajectories.
//!
//! Each trajectory owns one ChaCha12 stream selected by `(seed, trajectory
//! index)`, so Monte Carlo batches are independent of worker count and
//! bit-reproducible across runs. Gaussian variates use an explicit Box-Muller
//! transform (two raw 64-bit words per variate) rather than a library
//! sampler, so the byte stream consumed per draw is pinned.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use std::f64::consts::TAU;

/// One reproducible random stream.
#[derive(Debug, Clone)]
pub struct TrajectoryRng {
    inner: ChaCha12Rng,
}

impl TrajectoryRng {
    /// Stream for a given master seed and trajectory index.
    pub fn new(seed: u64, trajectory: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(trajectory);
        Self { inner }
    }

    /// Uniform in the open interval (0, 1].
    fn uniform_open(&mut self) -> f64 {
        // 53 mantissa bits; the +1 keeps the value strictly positive so the
        // Box-Muller logarithm stays finite.
        ((self.inner.next_u64() >> 11) + 1) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Standard normal variate via Box-Muller. Consumes exactly two 64-bit
    /// words.
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform_open();
        (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    }

    /// Normal variate with the given standard deviation.
    pub fn normal(&mut self, std_dev: f64) -> f64 {
        std_dev * self.standard_normal()
    }
}
