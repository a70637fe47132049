//! Clustering agreement scores and the positive/negative cosine gap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::Matrix;

/// Counts of (predicted, true) label pairs with dense relabelling of both
/// sides.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub total: u64,
}

fn dense(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::BTreeMap::new();
    for &l in labels {
        let next = map.len();
        map.entry(l).or_insert(next);
    }
    (labels.iter().map(|l| map[l]).collect(), map.len())
}

impl ContingencyTable {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::DimensionMismatch {
                op: "contingency",
                left: (pred.len(), 1),
                right: (truth.len(), 1),
            });
        }
        if pred.is_empty() {
            return Err(Error::EmptyReduction { op: "contingency" });
        }
        let (p, kp) = dense(pred);
        let (t, kt) = dense(truth);
        let mut counts = vec![vec![0u64; kt]; kp];
        for (&a, &b) in p.iter().zip(&t) {
            counts[a][b] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..kt).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        Ok(Self {
            counts,
            row_sums,
            col_sums,
            total: pred.len() as u64,
        })
    }
}

fn pairs(n: u64) -> i128 {
    let n = n as i128;
    n * (n - 1) / 2
}

/// Adjusted Rand index from exact 128-bit pair counts. A degenerate
/// denominator (both sides a single cluster, or both all singletons) gives 1.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() < 2 {
        return Err(Error::InvalidArgument("ari needs at least 2 points".into()));
    }
    let t = ContingencyTable::new(pred, truth)?;
    let index: i128 = t.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let a: i128 = t.row_sums.iter().map(|&c| pairs(c)).sum();
    let b: i128 = t.col_sums.iter().map(|&c| pairs(c)).sum();
    let total = pairs(t.total);
    // (index - ab/T) / ((a+b)/2 - ab/T), cleared of fractions.
    let num = 2 * (index * total - a * b);
    let den = (a + b) * total - 2 * a * b;
    if den == 0 {
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmiNorm {
    #[default]
    Arithmetic,
    Geometric,
}

fn entropy(counts: &[u64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information. Two single-cluster labelings score 1; a
/// single cluster against anything else scores 0.
pub fn nmi(pred: &[usize], truth: &[usize], norm: NmiNorm) -> Result<f64> {
    let t = ContingencyTable::new(pred, truth)?;
    let n = t.total as f64;
    let hp = entropy(&t.row_sums, n);
    let ht = entropy(&t.col_sums, n);
    if hp == 0.0 && ht == 0.0 {
        return Ok(1.0);
    }
    if hp == 0.0 || ht == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (i, row) in t.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (t.row_sums[i] as f64 * t.col_sums[j] as f64)).ln();
            }
        }
    }
    let denom = match norm {
        NmiNorm::Arithmetic => 0.5 * (hp + ht),
        NmiNorm::Geometric => (hp * ht).sqrt(),
    };
    Ok((mi / denom).clamp(0.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineGap {
    pub mean_pos: f64,
    pub mean_neg: f64,
    pub gap: f64,
}

fn unit_rows(z: &Matrix, op: &'static str) -> Result<Matrix> {
    let norms = z.row_norms();
    if let Some(index) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::ZeroNorm { op, index });
    }
    let mut u = z.clone();
    for (r, n) in norms.iter().enumerate() {
        u.row_mut(r).iter_mut().for_each(|v| *v /= n);
    }
    Ok(u)
}

/// Mean cosine over positive pairs `(a_i, b_i)` minus the mean over every
/// pair of embeddings (among all 2N) that come from different samples.
pub fn cosine_gap(za: &Matrix, zb: &Matrix) -> Result<CosineGap> {
    if za.shape() != zb.shape() {
        return Err(Error::DimensionMismatch {
            op: "cosine_gap",
            left: za.shape(),
            right: zb.shape(),
        });
    }
    let n = za.rows();
    if n < 2 {
        return Err(Error::InvalidArgument("cosine_gap needs at least 2 samples".into()));
    }
    let ua = unit_rows(za, "cosine_gap")?;
    let ub = unit_rows(zb, "cosine_gap")?;
    let pos: Vec<f64> = (0..n)
        .map(|i| ua.row(i).iter().zip(ub.row(i)).map(|(x, y)| x * y).sum())
        .collect();
    let sum_pos: f64 = pos.iter().sum();

    // Sum over all ordered pairs of the 2N unit vectors is |sum u|^2;
    // remove the 2N self terms and the 2N same-sample terms.
    let mut s = ua.col_sums();
    s.axpy(1.0, &ub.col_sums())?;
    let all: f64 = s.data().iter().map(|v| v * v).sum();
    let cross_ordered = all - 2.0 * n as f64 - 2.0 * sum_pos;
    let n_neg = 2.0 * n as f64 * (n as f64 - 1.0);
    let mean_pos = sum_pos / n as f64;
    let mean_neg = cross_ordered / (2.0 * n_neg);
    Ok(CosineGap {
        mean_pos,
        mean_neg,
        gap: mean_pos - mean_neg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndmath::{gaussian_sample, Rng};
    use proptest::prelude::{any, prop_assert, proptest};

    #[test]
    fn ari_examples() {
        assert_eq!(ari(&[0, 0, 1, 1, 2], &[5, 5, 3, 3, 9]).unwrap(), 1.0);
        assert_eq!(ari(&[0; 6], &[0, 0, 0, 1, 1, 1]).unwrap(), 0.0);
        // Table {(0,0):2, (1,0):1, (1,1):1}: index 1, a 2, b 3, T 6.
        let v = ari(&[0, 0, 1, 1], &[0, 0, 0, 1]).unwrap();
        assert!((v - (1.0 - 1.0) / (2.5 - 1.0)).abs() < 1e-15);
        assert!(ari(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn nmi_examples() {
        assert_eq!(nmi(&[0, 0, 1, 1], &[1, 1, 0, 0], NmiNorm::Arithmetic).unwrap(), 1.0);
        assert_eq!(nmi(&[0; 4], &[0, 0, 1, 1], NmiNorm::Arithmetic).unwrap(), 0.0);
        assert_eq!(nmi(&[0; 4], &[3; 4], NmiNorm::Geometric).unwrap(), 1.0);
        let ln2 = 2f64.ln();
        // Direct computation on the 4-point table.
        let mi = 0.5 * (4.0f64 / 3.0).ln() + 0.25 * (4.0f64 / 6.0).ln() + 0.25 * 2f64.ln();
        let hp = ln2;
        let ht = -(0.75 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        let v = nmi(&[0, 0, 1, 1], &[0, 0, 0, 1], NmiNorm::Arithmetic).unwrap();
        assert!((v - mi / (0.5 * (hp + ht))).abs() < 1e-15);
    }

    #[test]
    fn large_counts_do_not_overflow() {
        let n = 300_000;
        let pred: Vec<usize> = (0..n).map(|i| i % 7).collect();
        let v = ari(&pred, &pred).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn cosine_gap_examples() {
        let z = Matrix::identity(3);
        let g = cosine_gap(&z, &z).unwrap();
        assert!((g.mean_pos - 1.0).abs() < 1e-15 && g.mean_neg.abs() < 1e-15);
        let same = Matrix::filled(4, 3, 2.0);
        assert!(cosine_gap(&same, &same).unwrap().gap.abs() < 1e-12);
        let mut zero = Matrix::filled(3, 2, 1.0);
        zero.set(1, 0, 0.0);
        zero.set(1, 1, 0.0);
        assert!(matches!(cosine_gap(&zero, &zero), Err(Error::ZeroNorm { index: 1, .. })));
    }

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        d / (na * nb)
    }

    #[test]
    fn cosine_gap_matches_pair_loop() {
        let mut rng = Rng::new(17);
        for n in [2, 3, 7] {
            let za = gaussian_sample(&mut rng, n, 5, 0.1, 1.0).unwrap();
            let zb = gaussian_sample(&mut rng, n, 5, 0.1, 1.0).unwrap();
            let all: Vec<(usize, &[f64])> = (0..n)
                .map(|i| (i, za.row(i)))
                .chain((0..n).map(|i| (i, zb.row(i))))
                .collect();
            let (mut neg, mut cnt) = (0.0, 0);
            for (x, (si, u)) in all.iter().enumerate() {
                for (y, (sj, v)) in all.iter().enumerate() {
                    if x < y && si != sj {
                        neg += cos(u, v);
                        cnt += 1;
                    }
                }
            }
            let pos = (0..n).map(|i| cos(za.row(i), zb.row(i))).sum::<f64>() / n as f64;
            let g = cosine_gap(&za, &zb).unwrap();
            assert!((g.mean_pos - pos).abs() < 1e-12);
            assert!((g.mean_neg - neg / cnt as f64).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn permutation_invariance(labels in proptest::collection::vec(0usize..4, 2..30), seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let perm = rng.permutation(4);
            let relabelled: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
            let truth: Vec<usize> = (0..labels.len()).map(|_| rng.below(3)).collect();
            let a1 = ari(&labels, &truth).unwrap();
            let a2 = ari(&relabelled, &truth).unwrap();
            prop_assert!((a1 - a2).abs() < 1e-12);
            let n1 = nmi(&labels, &truth, NmiNorm::Arithmetic).unwrap();
            let n2 = nmi(&relabelled, &truth, NmiNorm::Arithmetic).unwrap();
            prop_assert!((n1 - n2).abs() < 1e-12);
            if labels.iter().any(|&l| l != labels[0]) {
                prop_assert!((ari(&labels, &labels).unwrap() - 1.0).abs() < 1e-12);
                prop_assert!((nmi(&labels, &labels, NmiNorm::Geometric).unwrap() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn cosine_gap_scale_invariant(seed in any::<u64>(), s in 0.01f64..100.0) {
            let mut rng = Rng::new(seed);
            let za = gaussian_sample(&mut rng, 6, 4, 0.0, 1.0).unwrap();
            let zb = gaussian_sample(&mut rng, 6, 4, 0.0, 1.0).unwrap();
            let g1 = cosine_gap(&za, &zb).unwrap();
            let g2 = cosine_gap(&za.scale(s), &zb.scale(s)).unwrap();
            prop_assert!((g1.gap - g2.gap).abs() < 1e-12);
        }
    }
}
