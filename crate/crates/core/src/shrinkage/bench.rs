use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{js_estimate, js_positive_part, map_estimate, sq_dist, sq_norm, sure, GaussianHierarchy};
use crate::error::{Error, Result};
use crate::ndmath::Rng;

/// One Monte-Carlo setting. Exactly one of `tau` (theta drawn from the
/// prior each trial) or `theta_norm` (theta fixed along the all-ones
/// direction) must be set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskBenchConfig {
    pub p: usize,
    pub sigma: f64,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub theta_norm: Option<f64>,
    pub trials: usize,
}

impl RiskBenchConfig {
    pub const MIN_TRIALS: usize = 1000;

    pub fn fixed(p: usize, sigma: f64, theta_norm: f64, trials: usize) -> Self {
        Self { p, sigma, tau: None, theta_norm: Some(theta_norm), trials }
    }

    pub fn hierarchical(p: usize, sigma: f64, tau: f64, trials: usize) -> Self {
        Self { p, sigma, tau: Some(tau), theta_norm: None, trials }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.trials < Self::MIN_TRIALS {
            return bad(format!("trials={} below the minimum of {}", self.trials, Self::MIN_TRIALS));
        }
        if self.p < 3 {
            return bad(format!("p={} must be at least 3", self.p));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma={} must be positive", self.sigma));
        }
        match (self.tau, self.theta_norm) {
            (Some(t), None) if t >= 0.0 && t.is_finite() => Ok(()),
            (None, Some(n)) if n >= 0.0 && n.is_finite() => Ok(()),
            _ => bad("set exactly one of tau >= 0 or theta_norm >= 0".into()),
        }
    }

    /// P in {3, 10, 50}, sigma = 1, theta norms {0, 1, 10} and tau in {0.5, 2}.
    pub fn default_grid(trials: usize) -> Vec<Self> {
        let mut grid = Vec::new();
        for p in [3, 10, 50] {
            for n in [0.0, 1.0, 10.0] {
                grid.push(Self::fixed(p, 1.0, n, trials));
            }
            for t in [0.5, 2.0] {
                grid.push(Self::hierarchical(p, 1.0, t, trials));
            }
        }
        grid
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRisk {
    pub empirical_mse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closed_form: Option<f64>,
    pub trials: usize,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95: f64,
    /// What the squared error is measured against: `theta`, `prior_mean`,
    /// or `risk` for the mean of an unbiased risk estimate.
    pub target: String,
}

/// Expected improvement of JS over the MLE at fixed theta.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JsReduction {
    /// Mean of `|X - theta|^2 - |JS(X) - theta|^2` over the draws.
    pub measured: f64,
    /// `(P - 2)^2 sigma^4 mean(1 / |X|^2)` over the same draws.
    pub predicted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub config: RiskBenchConfig,
    pub estimators: BTreeMap<String, EstimatorRisk>,
    pub js_reduction: JsReduction,
}

#[derive(Default)]
struct Acc {
    values: Vec<f64>,
}

impl Acc {
    fn finish(&self, closed_form: Option<f64>, target: &str) -> EstimatorRisk {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        let var = self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        EstimatorRisk {
            empirical_mse: mean,
            closed_form,
            trials: self.values.len(),
            ci95: 1.96 * (var / n).sqrt(),
            target: target.to_string(),
        }
    }
}

/// Monte-Carlo squared-error risk of the MLE, James-Stein (plain and
/// positive part) and, under a prior, the MAP estimator and SURE.
pub fn risk_bench(cfg: &RiskBenchConfig, rng: &mut Rng) -> Result<RiskReport> {
    cfg.validate()?;
    let p = cfg.p;
    let pf = p as f64;
    let s2 = cfg.sigma * cfg.sigma;
    let hier = match cfg.tau {
        Some(t) => Some(GaussianHierarchy::new(vec![0.0; p], t * t, s2)?),
        None => None,
    };
    let fixed_theta = cfg.theta_norm.map(|n| vec![n / pf.sqrt(); p]);

    let names = ["mle", "js", "js_plus", "map", "map_about_prior_mean", "mle_about_prior_mean", "sure"];
    let mut acc: BTreeMap<&str, Acc> = names.iter().map(|&n| (n, Acc::default())).collect();
    let mut reduction = 0.0;
    let mut inv_norm = 0.0;
    let mut theta = vec![0.0; p];
    let mut x = vec![0.0; p];
    for _ in 0..cfg.trials {
        match (&hier, &fixed_theta) {
            (Some(h), _) => {
                let tau = h.tau2.sqrt();
                theta.iter_mut().zip(&h.mu).for_each(|(t, m)| *t = m + tau * rng.normal());
            }
            (None, Some(t)) => theta.copy_from_slice(t),
            (None, None) => unreachable!("validated"),
        }
        x.iter_mut().zip(&theta).for_each(|(xv, t)| *xv = t + cfg.sigma * rng.normal());

        let mle = sq_dist(&x, &theta);
        let n2 = sq_norm(&x);
        let js = if n2 > 0.0 { sq_dist(&js_estimate(&x, s2)?, &theta) } else { mle };
        let jsp = if n2 > 0.0 { sq_dist(&js_positive_part(&x, s2)?, &theta) } else { mle };
        acc.get_mut("mle").unwrap().values.push(mle);
        acc.get_mut("js").unwrap().values.push(js);
        acc.get_mut("js_plus").unwrap().values.push(jsp);
        reduction += mle - js;
        if n2 > 0.0 {
            inv_norm += 1.0 / n2;
        }
        if let Some(h) = &hier {
            let map = map_estimate(&x, h)?;
            acc.get_mut("map").unwrap().values.push(sq_dist(&map, &theta));
            acc.get_mut("map_about_prior_mean").unwrap().values.push(sq_dist(&map, &h.mu));
            acc.get_mut("mle_about_prior_mean").unwrap().values.push(sq_dist(&x, &h.mu));
            acc.get_mut("sure").unwrap().values.push(sure(&x, h)?);
        }
    }

    let trials = cfg.trials as f64;
    let mut estimators = BTreeMap::new();
    estimators.insert("mle".to_string(), acc["mle"].finish(Some(pf * s2), "theta"));
    estimators.insert("js".to_string(), acc["js"].finish(None, "theta"));
    estimators.insert("js_plus".to_string(), acc["js_plus"].finish(None, "theta"));
    if let Some(h) = &hier {
        let t2 = h.tau2;
        let risk = if s2 + t2 > 0.0 { pf * s2 * t2 / (s2 + t2) } else { 0.0 };
        estimators.insert("map".into(), acc["map"].finish(Some(risk), "theta"));
        estimators.insert(
            "map_about_prior_mean".into(),
            acc["map_about_prior_mean"].finish(Some(pf * t2 * t2 / (s2 + t2)), "prior_mean"),
        );
        estimators.insert(
            "mle_about_prior_mean".into(),
            acc["mle_about_prior_mean"].finish(Some(pf * (s2 + t2)), "prior_mean"),
        );
        estimators.insert("sure".into(), acc["sure"].finish(Some(risk), "risk"));
    }
    Ok(RiskReport {
        config: cfg.clone(),
        estimators,
        js_reduction: JsReduction {
            measured: reduction / trials,
            predicted: (pf - 2.0).powi(2) * s2 * s2 * inv_norm / trials,
        },
    })
}
