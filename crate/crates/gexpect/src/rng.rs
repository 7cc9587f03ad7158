//! Seedable, portable random number generation.
//!
//! All stochastic code in this crate draws from [`PortableRng`], a ChaCha12
//! generator with standard-normal variates produced by inverse-CDF transform.
//! ChaCha streams give cheap, collision-free per-path substreams, so parallel
//! path generation is bit-identical to the sequential order.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::normal;

/// Deterministic RNG: ChaCha12 keyed by a `u64` seed.
#[derive(Clone, Debug)]
pub struct PortableRng {
    inner: ChaCha12Rng,
}

impl PortableRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    /// Independent substream of the same seed (used per path / per control).
    pub fn substream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    /// Uniform in the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        // 53 random bits, offset half a ulp away from 0 and 1.
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via the AS 241 quantile (inverse-CDF sampling).
    pub fn standard_normal(&mut self) -> f64 {
        normal::inv_cdf(self.uniform())
    }

    pub fn gen_range_usize(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }
}
