use serde::{Deserialize, Serialize};

use super::ExpressionMatrix;
use crate::error::{Error, Result};
use crate::ndmath::{Matrix, Rng};

/// Gaussian blobs: centroids drawn per gene from N(0, centroid_scale^2),
/// cells drawn around their centroid with `within_std`, then entries zeroed
/// independently with probability `dropout_rate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_cells: usize,
    pub n_genes: usize,
    pub n_clusters: usize,
    pub centroid_scale: f64,
    pub within_std: f64,
    pub dropout_rate: f64,
    pub cluster_weights: Option<Vec<f64>>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_cells: 1000,
            n_genes: 200,
            n_clusters: 5,
            centroid_scale: 1.0,
            within_std: 0.3,
            dropout_rate: 0.3,
            cluster_weights: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_cells < 2 || self.n_genes < 3 {
            return bad(format!(
                "need at least 2 cells and 3 genes, got {} and {}",
                self.n_cells, self.n_genes
            ));
        }
        if self.n_clusters == 0 || self.n_clusters > self.n_cells {
            return bad(format!(
                "n_clusters={} must be in 1..={}",
                self.n_clusters, self.n_cells
            ));
        }
        if !(self.centroid_scale >= 0.0 && self.centroid_scale.is_finite()) {
            return bad(format!("centroid_scale={} must be >= 0", self.centroid_scale));
        }
        if !(self.within_std >= 0.0 && self.within_std.is_finite()) {
            return bad(format!("within_std={} must be >= 0", self.within_std));
        }
        if !(0.0..=1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate={} must be in [0, 1]", self.dropout_rate));
        }
        if let Some(w) = &self.cluster_weights {
            if w.len() != self.n_clusters {
                return bad(format!("{} weights for {} clusters", w.len(), self.n_clusters));
            }
            if w.iter().any(|&v| !(v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return bad("cluster_weights must be nonnegative and sum to 1".into());
            }
        }
        Ok(())
    }

    /// Cluster sizes by largest remainder so they always sum to `n_cells`.
    fn cluster_sizes(&self) -> Vec<usize> {
        let k = self.n_clusters;
        let w = self
            .cluster_weights
            .clone()
            .unwrap_or_else(|| vec![1.0 / k as f64; k]);
        largest_remainder(&w, self.n_cells)
    }
}

/// Splits `total` into integer parts proportional to `weights`; leftover
/// units go to the largest fractional parts, lower index first on ties.
pub(crate) fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let wsum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / wsum * total as f64).collect();
    let mut parts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = parts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa)
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        parts[i] += 1;
    }
    parts
}

pub fn synth(cfg: &SynthConfig, rng: &mut Rng) -> Result<ExpressionMatrix> {
    cfg.validate()?;
    let (n, g, k) = (cfg.n_cells, cfg.n_genes, cfg.n_clusters);
    let mut labels: Vec<usize> = cfg
        .cluster_sizes()
        .iter()
        .enumerate()
        .flat_map(|(c, &s)| std::iter::repeat_n(c, s))
        .collect();
    rng.shuffle(&mut labels);

    let mut centroids = Matrix::zeros(k, g);
    for v in centroids.data_mut() {
        *v = cfg.centroid_scale * rng.normal();
    }
    let mut values = Matrix::zeros(n, g);
    for (i, &c) in labels.iter().enumerate() {
        let centre = centroids.row(c).to_vec();
        for (v, m) in values.row_mut(i).iter_mut().zip(centre) {
            *v = m + cfg.within_std * rng.normal();
        }
    }
    if cfg.dropout_rate > 0.0 {
        for v in values.data_mut() {
            if rng.uniform() < cfg.dropout_rate {
                *v = 0.0;
            }
        }
    }
    ExpressionMatrix::from_values(values, Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::preprocess::column_moments;

    fn cfg(n: usize, g: usize, k: usize) -> SynthConfig {
        SynthConfig {
            n_cells: n,
            n_genes: g,
            n_clusters: k,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn full_dropout_zeroes_everything() {
        let c = SynthConfig {
            dropout_rate: 1.0,
            ..cfg(30, 5, 3)
        };
        let x = synth(&c, &mut Rng::new(1)).unwrap();
        assert!(x.values.data().iter().all(|&v| v == 0.0));
        assert_eq!(x.labels.unwrap().len(), 30);
    }

    #[test]
    fn noiseless_cells_sit_on_centroids() {
        let c = SynthConfig {
            within_std: 0.0,
            dropout_rate: 0.0,
            ..cfg(40, 6, 4)
        };
        let x = synth(&c, &mut Rng::new(2)).unwrap();
        let labels = x.labels.clone().unwrap();
        for k in 0..4 {
            let members: Vec<usize> = (0..40).filter(|&i| labels[i] == k).collect();
            assert_eq!(members.len(), 10);
            for &i in &members[1..] {
                assert_eq!(x.values.row(i), x.values.row(members[0]));
            }
        }
    }

    #[test]
    fn marginal_variance_matches_compound_model() {
        // Per-gene variance of a centroid draw plus within-cluster noise is
        // centroid_scale^2 + within_std^2; averaging over genes and many
        // clusters keeps the Monte-Carlo error well under 5%.
        let c = SynthConfig {
            n_cells: 5000,
            n_genes: 50,
            n_clusters: 500,
            centroid_scale: 1.5,
            within_std: 0.8,
            dropout_rate: 0.0,
            cluster_weights: None,
        };
        let x = synth(&c, &mut Rng::new(3)).unwrap();
        let (_, vars) = column_moments(&x.values);
        let mean_var = vars.iter().sum::<f64>() / vars.len() as f64;
        let expected = 1.5f64.powi(2) + 0.8f64.powi(2);
        assert!(((mean_var - expected) / expected).abs() < 0.05, "{mean_var} vs {expected}");
    }

    #[test]
    fn weights_control_sizes() {
        let c = SynthConfig {
            cluster_weights: Some(vec![0.5, 0.3, 0.2]),
            ..cfg(101, 4, 3)
        };
        let x = synth(&c, &mut Rng::new(4)).unwrap();
        let l = x.labels.unwrap();
        let counts: Vec<usize> = (0..3).map(|k| l.iter().filter(|&&v| v == k).count()).collect();
        assert_eq!(counts, vec![51, 30, 20]);
    }

    #[test]
    fn validation() {
        assert!(synth(&cfg(3, 5, 4), &mut Rng::new(0)).is_err());
        assert!(synth(&SynthConfig { dropout_rate: 1.5, ..cfg(10, 5, 2) }, &mut Rng::new(0)).is_err());
        assert!(synth(
            &SynthConfig { cluster_weights: Some(vec![0.5, 0.6]), ..cfg(10, 5, 2) },
            &mut Rng::new(0)
        )
        .is_err());
    }

    #[test]
    fn deterministic() {
        let a = synth(&cfg(50, 8, 3), &mut Rng::new(9)).unwrap();
        let b = synth(&cfg(50, 8, 3), &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn remainder_split() {
        assert_eq!(largest_remainder(&[0.8, 0.2], 50), vec![40, 10]);
        assert_eq!(largest_remainder(&[1.0, 1.0, 1.0], 10), vec![4, 3, 3]);
    }
}
