//! Deterministic, seedable randomness with reproducible substreams.
//!
//! A [`RandStream`] is identified by a 64-bit master seed plus a derivation
//! path (a list of 64-bit indices). Two streams built from the same
//! `(seed, path)` produce identical output sequences, and a child stream is a
//! pure function of the parent's identity — not of how much of the parent has
//! already been consumed. Parallel experiments derive one child per trial
//! index so scheduling cannot affect results.
//!
//! The generator is ChaCha12 keyed by a SplitMix64-style absorption of the
//! seed and path. Generator and derivation are fixed: changing either would
//! silently change every experiment output.

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A single-owner random stream. May be moved between threads, never shared.
#[derive(Clone, Debug)]
pub struct RandStream {
    seed: u64,
    path: Vec<u64>,
    rng: ChaCha12Rng,
}

impl RandStream {
    /// Root stream for a master seed (empty path).
    pub fn new(seed: u64) -> Self {
        Self::with_path(seed, Vec::new())
    }

    /// Stream at an explicit derivation path.
    pub fn with_path(seed: u64, path: Vec<u64>) -> Self {
        let mut h = mix64(seed ^ GOLDEN);
        for &idx in &path {
            h = mix64(h.wrapping_add(GOLDEN) ^ mix64(idx.wrapping_add(GOLDEN)));
        }
        let mut key = [0u8; 32];
        let mut s = h;
        for chunk in key.chunks_exact_mut(8) {
            s = s.wrapping_add(GOLDEN);
            chunk.copy_from_slice(&mix64(s).to_le_bytes());
        }
        Self {
            seed,
            path,
            rng: ChaCha12Rng::from_seed(key),
        }
    }

    /// Child stream whose path extends this stream's path by `index`.
    ///
    /// Depends only on `(seed, path, index)`; the parent's read position is
    /// irrelevant.
    pub fn derive(&self, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push(index);
        Self::with_path(self.seed, path)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [lo, hi], inclusive. Rejection sampled, unbiased.
    pub fn uniform_u64(&mut self, lo: u64, hi: u64) -> u64 {
        assert!(lo <= hi, "empty range");
        let width = hi - lo + 1;
        if width == 0 {
            // hi - lo + 1 wrapped: full range
            return self.next_u64();
        }
        let zone = u64::MAX - (u64::MAX - width + 1) % width;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return lo + v % width;
            }
        }
    }

    /// True with probability exactly 2^-t. `t = 0` always returns true.
    ///
    /// Consumes fair coin flips in 64-bit blocks; each block contributes an
    /// exact power-of-two factor, so the overall probability is exact.
    pub fn bernoulli_pow2(&mut self, t: u32) -> bool {
        let mut rem = t;
        while rem >= 64 {
            if self.next_u64() != 0 {
                return false;
            }
            rem -= 64;
        }
        if rem == 0 {
            return true;
        }
        self.next_u64() & ((1u64 << rem) - 1) == 0
    }

    /// Geometric on {1, 2, ...}: P(G = l) = (1-p)^(l-1) * p.
    ///
    /// Inverse-CDF sampled as ceil(ln(u) / ln(1-p)) with u uniform in (0, 1);
    /// exact-zero draws of u are rejected and redrawn. `p = 1` always
    /// returns 1. Results beyond u64::MAX saturate.
    pub fn geometric(&mut self, p: f64) -> Result<u64> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Domain(format!(
                "geometric probability must be in (0, 1], got {p}"
            )));
        }
        if p == 1.0 {
            return Ok(1);
        }
        let u = loop {
            let u = self.unit_f64();
            if u > 0.0 {
                break u;
            }
        };
        let g = (u.ln() / (-p).ln_1p()).ceil();
        if g < 1.0 {
            Ok(1)
        } else if g >= u64::MAX as f64 {
            Ok(u64::MAX)
        } else {
            Ok(g as u64)
        }
    }
}
