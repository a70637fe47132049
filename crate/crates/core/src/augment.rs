//! Two stochastic views per cell: random masking plus Gaussian noise on the
//! surviving coordinates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::{Matrix, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub mask_fraction: f64,
    pub noise_std: f64,
    pub noise_enabled: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            mask_fraction: 0.2,
            noise_std: 0.15,
            noise_enabled: true,
        }
    }
}

impl AugmentConfig {
    /// Views equal the input.
    pub fn identity() -> Self {
        Self {
            mask_fraction: 0.0,
            noise_std: 0.0,
            noise_enabled: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_fraction) {
            return Err(Error::InvalidConfig(format!(
                "mask_fraction={} must be in [0, 1]",
                self.mask_fraction
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise_std={} must be >= 0", self.noise_std)));
        }
        Ok(())
    }
}

/// One view: each coordinate is zeroed with probability `mask_fraction`;
/// the rest get N(0, noise_std^2) added when noise is enabled.
pub fn augment_view(x: &[f64], cfg: &AugmentConfig, rng: &mut Rng) -> Vec<f64> {
    let noisy = cfg.noise_enabled && cfg.noise_std > 0.0;
    x.iter()
        .map(|&v| {
            if rng.uniform() < cfg.mask_fraction {
                0.0
            } else if noisy {
                v + cfg.noise_std * rng.normal()
            } else {
                v
            }
        })
        .collect()
}

/// Two views drawn from independent sub-streams of `rng`.
pub fn augment_pair(x: &[f64], cfg: &AugmentConfig, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let mut ra = rng.fork();
    let mut rb = rng.fork();
    (augment_view(x, cfg, &mut ra), augment_view(x, cfg, &mut rb))
}

/// Views for every row; row i uses the stream `rng.derive(i)`, so the result
/// does not depend on thread scheduling.
pub fn augment_batch(x: &Matrix, cfg: &AugmentConfig, rng: &Rng) -> Result<(Matrix, Matrix)> {
    cfg.validate()?;
    if !x.all_finite() {
        return Err(Error::NonFinite { op: "augment" });
    }
    let (n, g) = x.shape();
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| augment_pair(x.row(i), cfg, &mut rng.derive(i as u64)))
        .collect();
    let mut a = Vec::with_capacity(n * g);
    let mut b = Vec::with_capacity(n * g);
    for (va, vb) in pairs {
        a.extend(va);
        b.extend(vb);
    }
    Ok((Matrix::new(n, g, a)?, Matrix::new(n, g, b)?))
}
