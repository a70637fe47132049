use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Matrix;
use crate::error::{Error, Result};

/// Seeded generator backed by ChaCha8, a counter-based stream cipher.
///
/// A given seed produces the same stream on every platform. `derive` gives
/// named sub-streams without consuming state; `fork` splits off a fresh
/// stream and advances the parent.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Sub-stream keyed by `(seed, tag)`; independent of how much of this
    /// stream has been consumed.
    pub fn derive(&self, tag: u64) -> Rng {
        Rng::new(mix(mix(self.seed) ^ mix(tag.wrapping_add(0x5851_F42D_4C95_7F2D))))
    }

    /// Splits off a new stream seeded from the next output of this one.
    pub fn fork(&mut self) -> Rng {
        let s = self.inner.next_u64();
        Rng::new(mix(s))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n as u64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}

/// Matrix of i.i.d. Normal(mean, std²) draws in row-major order.
pub fn gaussian_sample(rng: &mut Rng, rows: usize, cols: usize, mean: f64, std: f64) -> Result<Matrix> {
    if !(std >= 0.0) || !std.is_finite() || !mean.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "gaussian_sample needs finite mean and std >= 0 (mean = {mean}, std = {std})"
        )));
    }
    let data = (0..rows * cols).map(|_| mean + std * rng.normal()).collect();
    Matrix::new(rows, cols, data)
}
