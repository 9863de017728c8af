//! Seeded randomness.
//!
//! Every random draw in the workspace funnels through [`stream`]: a ChaCha8
//! generator keyed by the global seed plus a list of context tags (purpose,
//! step, example index, ...). Streams are derived statelessly, so any point
//! of a run can be reproduced without replaying the draws before it.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::scalar::Scalar;

/// splitmix64, used only to expand tag words into a 256-bit ChaCha key.
#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix_tag(acc: u64, tag: u64) -> u64 {
    let mut s = acc ^ tag.wrapping_mul(0xff51_afd7_ed55_8ccd);
    splitmix64(&mut s)
}

/// Hash a string tag into a 64-bit word (FNV-1a).
pub fn tag(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive an independent generator for `(seed, tags...)`.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut acc = splitmix64(&mut { seed ^ 0x6a09_e667_f3bc_c908 });
    for &t in tags {
        acc = mix_tag(acc, t);
    }
    let mut key = [0u8; 32];
    let mut s = acc;
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Uniform in [0, 1) with 53 bits of precision.
pub fn uniform_f64<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform integer in [0, n).
pub fn uniform_usize<R: RngCore>(rng: &mut R, n: usize) -> usize {
    assert!(n > 0);
    // Multiply-shift; bias is < 2^-64 * n, irrelevant at our ranges.
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

/// Standard normal via Box-Muller. Draws two uniforms per pair.
pub struct NormalSource<R: RngCore> {
    rng: R,
    spare: Option<f64>,
}

impl<R: RngCore> NormalSource<R> {
    pub fn new(rng: R) -> Self {
        Self { rng, spare: None }
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(s) = self.spare.take() {
            return s;
        }
        // u1 in (0, 1] so the log is finite.
        let u1 = 1.0 - uniform_f64(&mut self.rng);
        let u2 = uniform_f64(&mut self.rng);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn fill<E: Scalar>(&mut self, out: &mut [E]) {
        for v in out {
            *v = E::from_f64(self.next_normal());
        }
    }
}
