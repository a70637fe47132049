use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::{Matrix, Tape, Var};

/// Per-cluster plug-in estimates computed from a labelled set of embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub k: usize,
    pub labels: Vec<usize>,
    /// K x P cluster means.
    pub mu_hat: Matrix,
    /// K x P per-component sample variances (divide by n_k - 1).
    pub sigma2_pk: Matrix,
    pub sigma2_k: Vec<f64>,
    /// `sigma2_k / n_k`.
    pub tau2_k: Vec<f64>,
    pub n_k: Vec<usize>,
}

impl ClusterStats {
    pub fn dim(&self) -> usize {
        self.mu_hat.cols()
    }

    /// Clusters with fewer than two members or zero spread carry no usable
    /// shrinkage statistics.
    pub fn is_degenerate(&self, k: usize) -> bool {
        self.n_k[k] <= 1 || !(self.sigma2_k[k] > 0.0)
    }

    pub fn degenerate_clusters(&self) -> Vec<usize> {
        (0..self.k).filter(|&k| self.is_degenerate(k)).collect()
    }

    /// `sigma2_k / (tau2_k + sigma2_k)`, which equals `n_k / (n_k + 1)`.
    pub fn shrink_weight(&self, k: usize) -> f64 {
        self.sigma2_k[k] / (self.tau2_k[k] + self.sigma2_k[k])
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.k {
            return Err(Error::InvalidArgument(format!("label {label} outside 0..{}", self.k)));
        }
        Ok(())
    }
}

pub fn cluster_stats(h: &Matrix, labels: &[usize], k: usize) -> Result<ClusterStats> {
    let (n, p) = h.shape();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            op: "cluster_stats",
            left: (n, p),
            right: (labels.len(), 1),
        });
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!("label {l} outside 0..{k}")));
    }
    let mut n_k = vec![0usize; k];
    let mut mu_hat = Matrix::zeros(k, p);
    for (i, &l) in labels.iter().enumerate() {
        n_k[l] += 1;
        for (m, v) in mu_hat.row_mut(l).iter_mut().zip(h.row(i)) {
            *m += v;
        }
    }
    for c in 0..k {
        if n_k[c] > 0 {
            let inv = 1.0 / n_k[c] as f64;
            mu_hat.row_mut(c).iter_mut().for_each(|m| *m *= inv);
        }
    }
    let mut sigma2_pk = Matrix::zeros(k, p);
    for (i, &l) in labels.iter().enumerate() {
        let mu = mu_hat.row(l).to_vec();
        for ((s, v), m) in sigma2_pk.row_mut(l).iter_mut().zip(h.row(i)).zip(mu) {
            *s += (v - m) * (v - m);
        }
    }
    let mut sigma2_k = vec![0.0; k];
    let mut tau2_k = vec![0.0; k];
    for c in 0..k {
        if n_k[c] >= 2 {
            let inv = 1.0 / (n_k[c] - 1) as f64;
            sigma2_pk.row_mut(c).iter_mut().for_each(|s| *s *= inv);
            sigma2_k[c] = sigma2_pk.row(c).iter().sum::<f64>() / p as f64;
            tau2_k[c] = sigma2_k[c] / n_k[c] as f64;
        }
    }
    let stats = ClusterStats {
        k,
        labels: labels.to_vec(),
        mu_hat,
        sigma2_pk,
        sigma2_k,
        tau2_k,
        n_k,
    };
    let bad = stats.degenerate_clusters();
    if !bad.is_empty() {
        warn!("degenerate clusters {bad:?} excluded from the shrinkage loss");
    }
    Ok(stats)
}

fn check_batch(h: &Matrix, labels: &[usize], stats: &ClusterStats) -> Result<()> {
    if labels.len() != h.rows() || (h.rows() > 0 && h.cols() != stats.dim()) {
        return Err(Error::DimensionMismatch {
            op: "sure_loss",
            left: h.shape(),
            right: (labels.len(), stats.dim()),
        });
    }
    labels.iter().try_for_each(|&l| stats.check_label(l))
}

fn point_term(h: &[f64], k: usize, stats: &ClusterStats) -> f64 {
    let p = h.len() as f64;
    let d: f64 = h
        .iter()
        .zip(stats.mu_hat.row(k))
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    stats.shrink_weight(k) * (d + p * (stats.tau2_k[k] - stats.sigma2_k[k]))
}

/// Sum over the batch of `w_k (|mu_k - h_i|^2 + P (tau2_k - sigma2_k))`
/// with `w_k = sigma2_k / (tau2_k + sigma2_k)` and frozen statistics. A
/// point whose cluster is degenerate is an error.
pub fn sure_loss(h: &Matrix, labels: &[usize], stats: &ClusterStats) -> Result<f64> {
    check_batch(h, labels, stats)?;
    let mut total = 0.0;
    for (i, &k) in labels.iter().enumerate() {
        if stats.is_degenerate(k) {
            return Err(Error::DegenerateCluster {
                cluster: k,
                count: stats.n_k[k],
            });
        }
        total += point_term(h.row(i), k, stats);
    }
    Ok(total)
}

/// Like [`sure_loss`] but skips points in degenerate clusters. Returns the
/// loss and the number of points that contributed.
pub fn sure_loss_masked(h: &Matrix, labels: &[usize], stats: &ClusterStats) -> Result<(f64, usize)> {
    check_batch(h, labels, stats)?;
    let mut total = 0.0;
    let mut used = 0;
    for (i, &k) in labels.iter().enumerate() {
        if !stats.is_degenerate(k) {
            total += point_term(h.row(i), k, stats);
            used += 1;
        }
    }
    Ok((total, used))
}

/// Records the masked loss on a tape, scaled by `scale`. Statistics enter as
/// constants, so the gradient for row i is `scale * w_k * 2 (h_i - mu_k)`.
pub fn sure_loss_tape(tape: &mut Tape, h: Var, labels: &[usize], stats: &ClusterStats, scale: f64) -> Result<Var> {
    let hv = tape.value(h)?;
    check_batch(hv, labels, stats)?;
    let (b, p) = hv.shape();
    let mut targets = Matrix::zeros(b, p);
    let mut weights = vec![0.0; b];
    let mut constant = 0.0;
    for (i, &k) in labels.iter().enumerate() {
        if stats.is_degenerate(k) {
            // Zero weight and a copy of h_i keep the row out of the loss.
            targets.row_mut(i).copy_from_slice(hv.row(i));
            continue;
        }
        targets.row_mut(i).copy_from_slice(stats.mu_hat.row(k));
        let w = stats.shrink_weight(k);
        weights[i] = w * scale;
        constant += scale * w * p as f64 * (stats.tau2_k[k] - stats.sigma2_k[k]);
    }
    let t = tape.leaf(targets)?;
    let w = tape.leaf(Matrix::column_vector(weights))?;
    let diff = tape.sub(h, t)?;
    let sq = tape.mul(diff, diff)?;
    let rows = tape.row_sums(sq)?;
    let weighted = tape.mul(rows, w)?;
    let total = tape.sum(weighted)?;
    tape.add_const(total, constant)
}
