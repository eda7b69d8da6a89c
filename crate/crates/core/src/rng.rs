//! Seed-derived random streams for reproducible Monte-Carlo runs.
//!
//! Every random quantity in the simulator is drawn from an [`RngStream`]
//! derived from a root seed and an explicit derivation path
//! `(domain, id, id, ...)`. Streams backed by the counter-based ChaCha
//! generator are independent of evaluation order, so trials can be sharded
//! over any number of workers and still produce bit-identical results.

use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Derivation-path domains. Keeping them distinct guarantees that, e.g., the
/// noise stream of trial 7 never collides with the channel stream of trial 7.
pub mod domain {
    pub const CHANNEL: u64 = 0x01;
    pub const NOISE: u64 = 0x02;
    pub const IMPAIRMENT: u64 = 0x03;
    pub const NET_INIT: u64 = 0x04;
    pub const TRAIN_NOISE: u64 = 0x05;
    pub const TRAIN_SNR: u64 = 0x06;
    pub const SHUFFLE: u64 = 0x07;
    pub const CALIBRATION: u64 = 0x08;
}

const SALT: u64 = 0x9E37_79B9_7F4A_7C15;
const WORD_SALT: u64 = 0xA076_1D64_78BD_642F;

/// SplitMix64 finalizer; used only to mix derivation paths into ChaCha keys.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A deterministic random stream addressed by `(seed, path)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl RngStream {
    /// Root stream for a seed (empty derivation path).
    pub fn root(seed: u64) -> Self {
        Self::derived(seed, &[])
    }

    /// Stream addressed by `seed` and a derivation path, e.g.
    /// `RngStream::derived(seed, &[domain::NOISE, trial])`.
    pub fn derived(seed: u64, path: &[u64]) -> Self {
        let mut acc = mix(seed ^ SALT);
        for (i, word) in path.iter().enumerate() {
            acc = mix(acc ^ mix(word.wrapping_add((i as u64 + 1).wrapping_mul(WORD_SALT))));
        }
        let mut key = [0u8; 32];
        let mut state = acc;
        for chunk in key.chunks_exact_mut(8) {
            state = mix(state.wrapping_add(SALT));
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        Self {
            inner: ChaCha8Rng::from_seed(key),
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform_unit()
    }

    /// Uniform integer in `[0, n)` by rejection, bias-free.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Standard normal via Box-Muller; pairs are cached so consecutive calls
    /// consume uniform draws two at a time.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let (z0, z1) = self.normal_pair();
        self.spare_normal = Some(z1);
        z0
    }

    fn normal_pair(&mut self) -> (f64, f64) {
        let u1 = 1.0 - self.uniform_unit(); // (0, 1]
        let u2 = self.uniform_unit();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        (radius * angle.cos(), radius * angle.sin())
    }

    /// Real Gaussian with the given standard deviation.
    pub fn normal(&mut self, std_dev: f64) -> f64 {
        self.standard_normal() * std_dev
    }

    /// Circularly symmetric complex Gaussian with total variance `variance`
    /// (i.e. variance/2 per real component).
    pub fn complex_normal(&mut self, variance: f64) -> Complex64 {
        let (z0, z1) = self.normal_pair();
        let scale = (variance * 0.5).sqrt();
        Complex64::new(z0 * scale, z1 * scale)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
