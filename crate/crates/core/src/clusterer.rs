//! Lloyd's k-means with k-means++ seeding, and final label extraction.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::{Matrix, Rng};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KmeansInit {
    #[default]
    KmeansPlusPlus,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KmeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once no centroid moves further than this.
    pub tol: f64,
    pub n_init: usize,
    pub init: KmeansInit,
}

impl Default for KmeansConfig {
    fn default() -> Self {
        Self {
            k: 5,
            max_iters: 100,
            tol: 1e-6,
            n_init: 10,
            init: KmeansInit::KmeansPlusPlus,
        }
    }
}

impl KmeansConfig {
    pub fn with_k(k: usize) -> Self {
        Self { k, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidConfig(format!("k={} must be at least 2", self.k)));
        }
        if self.max_iters == 0 || self.n_init == 0 {
            return Err(Error::InvalidConfig("max_iters and n_init must be positive".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidConfig(format!("tol={} must be >= 0", self.tol)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KmeansResult {
    pub labels: Vec<usize>,
    pub centroids: Matrix,
    pub inertia: f64,
    /// Inertia after every assignment step of the winning restart.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub restart: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid per point (lowest index on ties) and its distance.
fn assign(points: &Matrix, centroids: &Matrix) -> (Vec<usize>, Vec<f64>) {
    (0..points.rows())
        .map(|i| {
            let x = points.row(i);
            let mut best = (0, f64::INFINITY);
            for c in 0..centroids.rows() {
                let d = sq_dist(x, centroids.row(c));
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .unzip()
}

fn seed_centroids(points: &Matrix, k: usize, init: KmeansInit, rng: &mut Rng) -> Matrix {
    let n = points.rows();
    let mut chosen = Vec::with_capacity(k);
    match init {
        KmeansInit::Random => {
            let perm = rng.permutation(n);
            chosen.extend_from_slice(&perm[..k]);
        }
        KmeansInit::KmeansPlusPlus => {
            chosen.push(rng.below(n));
            let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(chosen[0]))).collect();
            while chosen.len() < k {
                let total: f64 = d2.iter().sum();
                let next = if total > 0.0 {
                    let mut r = rng.uniform() * total;
                    let mut pick = n - 1;
                    for (i, &d) in d2.iter().enumerate() {
                        if d > 0.0 && r < d {
                            pick = i;
                            break;
                        }
                        r -= d;
                    }
                    // Floating-point slack at the tail: last positive weight.
                    if d2[pick] == 0.0 {
                        pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(pick);
                    }
                    pick
                } else {
                    // All remaining points coincide with chosen centres.
                    (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
                };
                chosen.push(next);
                for (i, d) in d2.iter_mut().enumerate() {
                    *d = d.min(sq_dist(points.row(i), points.row(next)));
                }
            }
        }
    }
    points.select_rows(&chosen)
}

fn lloyd(points: &Matrix, cfg: &KmeansConfig, rng: &mut Rng, restart: usize) -> KmeansResult {
    let (n, p) = points.shape();
    let k = cfg.k;
    let mut centroids = seed_centroids(points, k, cfg.init, rng);
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        iterations += 1;
        let (labels, dists) = assign(points, &centroids);
        history.push(dists.iter().sum());
        let mut next = Matrix::zeros(k, p);
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (c, v) in next.row_mut(l).iter_mut().zip(points.row(i)) {
                *c += v;
            }
        }
        let mut taken: Vec<usize> = Vec::new();
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                next.row_mut(c).iter_mut().for_each(|v| *v *= inv);
            } else {
                // Re-seed an empty cluster at the point worst served so far.
                let far = (0..n)
                    .filter(|i| !taken.contains(i))
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .unwrap_or(0);
                taken.push(far);
                next.row_mut(c).copy_from_slice(points.row(far));
            }
        }
        let shift = (0..k)
            .map(|c| sq_dist(centroids.row(c), next.row(c)).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift <= cfg.tol {
            break;
        }
    }
    let (labels, dists) = assign(points, &centroids);
    let inertia = dists.iter().sum();
    history.push(inertia);
    KmeansResult {
        labels,
        centroids,
        inertia,
        history,
        iterations,
        restart,
    }
}

/// Best of `n_init` Lloyd runs by inertia, ties to the earlier restart.
/// Restart r uses the stream `rng.derive(r)`, so results do not depend on
/// how restarts are scheduled across threads.
pub fn kmeans(points: &Matrix, cfg: &KmeansConfig, rng: &mut Rng) -> Result<KmeansResult> {
    cfg.validate()?;
    if points.rows() < cfg.k {
        return Err(Error::InvalidArgument(format!(
            "k-means with k={} on {} points",
            cfg.k,
            points.rows()
        )));
    }
    if !points.all_finite() {
        return Err(Error::NonFinite { op: "kmeans" });
    }
    let base = rng.fork();
    let runs: Vec<KmeansResult> = (0..cfg.n_init)
        .into_par_iter()
        .map(|r| lloyd(points, cfg, &mut base.derive(r as u64), r))
        .collect();
    Ok(runs
        .into_iter()
        .min_by(|a, b| a.inertia.total_cmp(&b.inertia).then(a.restart.cmp(&b.restart)))
        .expect("n_init >= 1"))
}

/// How final cluster labels are read off a trained model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssignRule {
    #[default]
    HeadArgmax,
    KmeansOnFeatures,
}

/// Row-wise argmax, lowest index on ties. Warns when every row picks the
/// same cluster.
pub fn assign_final(probs: &Matrix) -> Vec<usize> {
    let labels: Vec<usize> = probs
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    if probs.cols() > 1 && labels.len() > 1 && labels.iter().all(|&l| l == labels[0]) {
        warn!("degenerate assignment: every cell assigned to cluster {}", labels[0]);
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ari;
    use crate::ndmath::gaussian_sample;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    #[test]
    fn k_points_k_clusters() {
        let pts = Matrix::from_rows(&[vec![0.0, 1.0], vec![5.0, 5.0], vec![-3.0, 2.0]]).unwrap();
        let r = kmeans(&pts, &KmeansConfig::with_k(3), &mut Rng::new(1)).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut l = r.labels.clone();
        l.sort_unstable();
        assert_eq!(l, vec![0, 1, 2]);
    }

    #[test]
    fn separated_groups() {
        let pts = Matrix::column_vector(vec![0.0, 10.0, 0.1, 10.1]);
        let r = kmeans(&pts, &KmeansConfig::with_k(2), &mut Rng::new(2)).unwrap();
        assert_eq!(r.labels[0], r.labels[2]);
        assert_eq!(r.labels[1], r.labels[3]);
        assert_ne!(r.labels[0], r.labels[1]);
        let mut c = r.centroids.data().to_vec();
        c.sort_by(f64::total_cmp);
        assert!((c[0] - 0.05).abs() < 1e-12 && (c[1] - 10.05).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let pts = Matrix::column_vector(vec![0.0, 1.0]);
        assert!(kmeans(&pts, &KmeansConfig::with_k(3), &mut Rng::new(0)).is_err());
        assert!(kmeans(&pts, &KmeansConfig::with_k(1), &mut Rng::new(0)).is_err());
        let bad = Matrix::column_vector(vec![0.0, f64::NAN, 2.0]);
        assert!(kmeans(&bad, &KmeansConfig::with_k(2), &mut Rng::new(0)).is_err());
    }

    #[test]
    fn exhaustive_oracle_on_six_points() {
        let mut rng = Rng::new(23);
        for _ in 0..20 {
            let pts = gaussian_sample(&mut rng, 6, 2, 0.0, 1.0).unwrap();
            let mut best = f64::INFINITY;
            for mask in 1u32..63 {
                let labels: Vec<usize> = (0..6).map(|i| ((mask >> i) & 1) as usize).collect();
                let mut cent = [[0.0; 2]; 2];
                let mut cnt = [0.0; 2];
                for i in 0..6 {
                    cnt[labels[i]] += 1.0;
                    cent[labels[i]][0] += pts.get(i, 0);
                    cent[labels[i]][1] += pts.get(i, 1);
                }
                for c in 0..2 {
                    cent[c][0] /= cnt[c];
                    cent[c][1] /= cnt[c];
                }
                let d = |i: usize, c: usize| sq_dist(pts.row(i), &cent[c]);
                let fixed = (0..6).all(|i| d(i, labels[i]) <= d(i, 1 - labels[i]));
                if fixed {
                    best = best.min((0..6).map(|i| d(i, labels[i])).sum());
                }
            }
            let r = kmeans(&pts, &KmeansConfig::with_k(2), &mut rng).unwrap();
            assert!((r.inertia - best).abs() < 1e-10, "{} vs {best}", r.inertia);
        }
    }

    #[test]
    fn argmax_rules() {
        let onehot = Matrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(assign_final(&onehot), vec![1, 0]);
        let tie = Matrix::from_rows(&[vec![0.2, 0.4, 0.4], vec![0.5, 0.5, 0.0]]).unwrap();
        assert_eq!(assign_final(&tie), vec![1, 0]);
        assert_eq!(assign_final(&Matrix::filled(4, 3, 1.0 / 3.0)), vec![0; 4]);
    }

    #[test]
    fn deterministic_under_seed() {
        let pts = gaussian_sample(&mut Rng::new(4), 60, 3, 0.0, 1.0).unwrap();
        let a = kmeans(&pts, &KmeansConfig::with_k(4), &mut Rng::new(9)).unwrap();
        let b = kmeans(&pts, &KmeansConfig::with_k(4), &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
    }

    fn blobs(rng: &mut Rng, per: usize) -> Matrix {
        let mut rows = Vec::new();
        for c in 0..3 {
            for _ in 0..per {
                rows.push(vec![10.0 * c as f64 + 0.5 * rng.normal(), -7.0 * c as f64 + 0.5 * rng.normal()]);
            }
        }
        Matrix::from_rows(&rows).unwrap()
    }

    proptest! {
        #[test]
        fn inertia_never_increases(seed in any::<u64>(), k in 2usize..6) {
            let mut rng = Rng::new(seed);
            let pts = gaussian_sample(&mut rng, 40, 3, 0.0, 1.0).unwrap();
            let r = kmeans(&pts, &KmeansConfig::with_k(k), &mut rng).unwrap();
            for w in r.history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
            }
        }

        #[test]
        fn point_order_does_not_matter(seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let pts = blobs(&mut rng, 10);
            let perm = rng.permutation(30);
            let shuffled = pts.select_rows(&perm);
            let a = kmeans(&pts, &KmeansConfig::with_k(3), &mut Rng::new(1)).unwrap();
            let b = kmeans(&shuffled, &KmeansConfig::with_k(3), &mut Rng::new(2)).unwrap();
            let b_back: Vec<usize> = {
                let mut v = vec![0; 30];
                for (pos, &orig) in perm.iter().enumerate() {
                    v[orig] = b.labels[pos];
                }
                v
            };
            prop_assert_eq!(ari(&a.labels, &b_back).unwrap(), 1.0);
        }

        #[test]
        fn argmax_invariant_to_monotone_maps(seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let logits = gaussian_sample(&mut rng, 8, 4, 0.0, 2.0).unwrap();
            let probs = crate::ndmath::softmax_rows(&logits);
            prop_assert_eq!(assign_final(&logits), assign_final(&probs));
            prop_assert_eq!(assign_final(&logits), assign_final(&logits.map(|v| 3.0 * v.powi(3) + 1.0)));
        }
    }
}
