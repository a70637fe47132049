//! James-Stein, MAP and SURE estimators, per-cluster plug-in statistics and
//! the shrinkage loss used during training.

mod bench;
mod stats;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bench::{risk_bench, EstimatorRisk, RiskBenchConfig, RiskReport};
pub use stats::{cluster_stats, sure_loss, sure_loss_masked, sure_loss_tape, ClusterStats};

/// Two-level normal model: theta ~ N(mu, tau2 I), X | theta ~ N(theta, sigma2 I).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianHierarchy {
    pub mu: Vec<f64>,
    pub tau2: f64,
    pub sigma2: f64,
}

impl GaussianHierarchy {
    pub fn new(mu: Vec<f64>, tau2: f64, sigma2: f64) -> Result<Self> {
        if !(tau2 >= 0.0 && sigma2 >= 0.0) || !tau2.is_finite() || !sigma2.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "variances must be finite and nonnegative, got tau2={tau2}, sigma2={sigma2}"
            )));
        }
        Ok(Self { mu, tau2, sigma2 })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Weight sigma2 / (sigma2 + tau2) pulled toward the prior mean.
    pub fn shrink_factor(&self) -> Result<f64> {
        let d = self.tau2 + self.sigma2;
        if d <= 0.0 {
            return Err(Error::InvalidArgument("tau2 + sigma2 must be positive".into()));
        }
        Ok(self.sigma2 / d)
    }

    fn check_dim(&self, x: &[f64], op: &'static str) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                op,
                left: (x.len(), 1),
                right: (self.dim(), 1),
            });
        }
        Ok(())
    }
}

fn sq_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Plain James-Stein shrinkage toward the origin:
/// `(1 - (P-2) sigma2 / |x|^2) x`. The factor is not clipped, so the
/// estimate flips sign when `|x|^2 < (P-2) sigma2`.
pub fn js_estimate(x: &[f64], sigma2: f64) -> Result<Vec<f64>> {
    let f = js_factor(x, sigma2)?;
    Ok(x.iter().map(|v| f * v).collect())
}

/// Positive-part variant, with the factor clipped at zero.
pub fn js_positive_part(x: &[f64], sigma2: f64) -> Result<Vec<f64>> {
    let f = js_factor(x, sigma2)?.max(0.0);
    Ok(x.iter().map(|v| f * v).collect())
}

fn js_factor(x: &[f64], sigma2: f64) -> Result<f64> {
    let p = x.len();
    if p < 3 {
        return Err(Error::InvalidArgument(format!("James-Stein needs dimension >= 3, got {p}")));
    }
    let n2 = sq_norm(x);
    if n2 == 0.0 {
        return Err(Error::ZeroNorm { op: "js_estimate", index: 0 });
    }
    Ok(1.0 - (p as f64 - 2.0) * sigma2 / n2)
}

/// Posterior mode `(1 - s) x + s mu` with `s = sigma2 / (sigma2 + tau2)`.
pub fn map_estimate(x: &[f64], h: &GaussianHierarchy) -> Result<Vec<f64>> {
    h.check_dim(x, "map_estimate")?;
    let s = h.shrink_factor()?;
    Ok(x.iter().zip(&h.mu).map(|(xv, m)| (1.0 - s) * xv + s * m).collect())
}

/// Unbiased risk estimate of [`map_estimate`]:
/// `s^2 |mu - x|^2 + s P (tau2 - sigma2)`, whose expectation under the
/// marginal X ~ N(mu, (sigma2 + tau2) I) is `P sigma2 tau2 / (sigma2 + tau2)`.
pub fn sure(x: &[f64], h: &GaussianHierarchy) -> Result<f64> {
    h.check_dim(x, "sure")?;
    let s = h.shrink_factor()?;
    let p = x.len() as f64;
    Ok(s * s * sq_dist(&h.mu, x) + s * p * (h.tau2 - h.sigma2))
}

/// `s (|mu - x|^2 + P (tau2 - sigma2))`. This is the form the training loss
/// is built on; it overestimates the risk by a factor of two in
/// expectation. Use [`sure`] for risk estimation.
pub fn sure_as_printed(x: &[f64], h: &GaussianHierarchy) -> Result<f64> {
    h.check_dim(x, "sure_as_printed")?;
    let s = h.shrink_factor()?;
    let p = x.len() as f64;
    Ok(s * (sq_dist(&h.mu, x) + p * (h.tau2 - h.sigma2)))
}
