//! Reproducible random numbers.
//!
//! Every random draw in the crate comes from a [`CounterRng`]: the ChaCha20
//! block function (Bernstein's original 64-bit nonce / 64-bit counter layout)
//! keyed by a 64-bit seed. The key is the seed in little-endian order followed
//! by 24 zero bytes; the nonce ("stream") is derived from a purpose tag plus
//! the indices that identify the draw (stage, side, step, ...) via
//! [`stream_id`]. Independent consumers therefore never share a keystream, and
//! any language with a ChaCha20 implementation can reproduce the values.
//!
//! Conversions:
//! - uniform `f64` in `[0, 1)`: `(next_u64 >> 11) * 2^-53`
//! - standard normal: Box-Muller on two uniforms, `u1` mapped to `(0, 1]`,
//!   cosine branch first then sine branch; `ln`/`cos`/`sin` come from `libm`
//!   so results do not depend on the platform math library.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

/// Purpose tags mixed into [`stream_id`].
pub mod tags {
    pub const AXIS_DIRECTION: u64 = 0x01;
    pub const BASE_MEAN: u64 = 0x02;
    pub const MEAN_DRIFT: u64 = 0x03;
    pub const STAGE_COVARIANCE: u64 = 0x04;
    pub const FEATURE_SAMPLES: u64 = 0x05;
    pub const EMBEDDINGS: u64 = 0x10;
    pub const GENERATOR_NOISE: u64 = 0x11;
    pub const ADAPTER_INIT: u64 = 0x12;
    pub const TRAIN_STEP: u64 = 0x13;
    pub const TARGET_DRAWS: u64 = 0x14;
    pub const SCENE_INIT: u64 = 0x20;
    pub const VIEW: u64 = 0x21;
    pub const DENSIFY_JITTER: u64 = 0x22;
    pub const ENCODER: u64 = 0x30;
    pub const SDS_STEP: u64 = 0x31;
    pub const SENSITIVITY_VIEWS: u64 = 0x32;
    pub const EVAL_VIEWS: u64 = 0x33;
    pub const TEST: u64 = 0xFF;
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a tag and index path into a 64-bit stream id.
pub fn stream_id(parts: &[u64]) -> u64 {
    parts.iter().fold(0x9e37_79b9_7f4a_7c15, |acc, &p| {
        mix64(acc ^ mix64(p.wrapping_add(0x9e37_79b9_7f4a_7c15)))
    })
}

/// Derives a child seed, used when an API takes a plain `u64` seed per draw.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    mix64(seed ^ stream_id(parts))
}

#[derive(Clone, Debug)]
pub struct CounterRng {
    inner: ChaCha20Rng,
    spare_normal: Option<f64>,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut inner = ChaCha20Rng::from_seed(key);
        inner.set_stream(stream);
        Self {
            inner,
            spare_normal: None,
        }
    }

    /// Shorthand for `CounterRng::new(seed, stream_id(parts))`.
    pub fn for_purpose(seed: u64, parts: &[u64]) -> Self {
        Self::new(seed, stream_id(parts))
    }

    pub fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Unbiased integer in `[0, n)` by rejection. Panics if `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * libm::sin(theta));
        r * libm::cos(theta)
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chacha20_zero_key_keystream() {
        // Keystream of ChaCha20 with an all-zero key and nonce:
        // 76b8e0ad a0f13d90 405d6ae5 5386bd28 ...
        let mut rng = CounterRng::new(0, 0);
        assert_eq!(rng.next_u32(), 0xade0_b876);
        assert_eq!(rng.next_u32(), 0x903d_f1a0);
        assert_eq!(rng.next_u32(), 0xe56a_5d40);
        assert_eq!(rng.next_u32(), 0x28bd_8653);
    }

    #[test]
    fn streams_are_independent_and_repeatable() {
        let a: Vec<u64> = {
            let mut r = CounterRng::for_purpose(7, &[tags::TEST, 1]);
            (0..4).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = CounterRng::for_purpose(7, &[tags::TEST, 1]);
            (0..4).map(|_| r.next_u64()).collect()
        };
        let c: Vec<u64> = {
            let mut r = CounterRng::for_purpose(7, &[tags::TEST, 2]);
            (0..4).map(|_| r.next_u64()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_and_normal_moments() {
        let mut r = CounterRng::new(42, 3);
        let n = 200_000;
        let (mut su, mut sn, mut sn2) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
            su += u;
            let z = r.normal();
            sn += z;
            sn2 += z * z;
        }
        let n = n as f64;
        assert!((su / n - 0.5).abs() < 0.005);
        assert!((sn / n).abs() < 0.01);
        assert!((sn2 / n - 1.0).abs() < 0.02);
    }

    #[test]
    fn below_stays_in_range() {
        let mut r = CounterRng::new(1, 1);
        let mut seen = [false; 10];
        for _ in 0..1000 {
            let v = r.below(10) as usize;
            seen[v] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }
}
