//! Deterministic pseudo-random stream with a fully documented seeding and
//! sampling contract, so fixtures recorded from one build reproduce
//! bit-exactly on any other.
//!
//! Contract:
//! - the 32-byte ChaCha8 key is filled by four rounds of SplitMix64 applied
//!   to the `u64` seed (little-endian words), stream/nonce left at zero;
//! - `uniform` takes the top 53 bits of the next `u64` and scales by 2^-53,
//!   giving a value in `[0, 1)`;
//! - `gaussian` is one Box-Muller cosine draw from two consecutive uniforms
//!   (the first nudged into `(0, 1]`), consuming exactly two `u64`s.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Prng {
    inner: ChaCha8Rng,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        let mut state = seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Self { inner: ChaCha8Rng::from_seed(key) }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53-bit resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw (Box-Muller, cosine branch).
    pub fn gaussian(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}
