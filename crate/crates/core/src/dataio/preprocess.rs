use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::ExpressionMatrix;
use crate::error::{Error, Result};
use crate::ndmath::{pairwise_sum, Matrix};

/// Steps run in order: library-size normalization, log1p, top-variance gene
/// selection, per-gene z-scoring. Each is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub normalize_library_size: bool,
    pub log1p: bool,
    /// `None` keeps every gene. Values above G are clamped to G.
    pub n_top_genes: Option<usize>,
    pub standardize: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            normalize_library_size: true,
            log1p: true,
            n_top_genes: Some(2000),
            standardize: true,
        }
    }
}

impl PreprocessConfig {
    /// Every step disabled.
    pub fn none() -> Self {
        Self {
            normalize_library_size: false,
            log1p: false,
            n_top_genes: None,
            standardize: false,
        }
    }

    /// Only per-gene z-scoring.
    pub fn standardize_only() -> Self {
        Self {
            standardize: true,
            ..Self::none()
        }
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Per-column sample mean and sample variance (divide by N-1).
pub(crate) fn column_moments(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows();
    let mut means = Vec::with_capacity(x.cols());
    let mut vars = Vec::with_capacity(x.cols());
    for j in 0..x.cols() {
        let col = x.column(j);
        let m = pairwise_sum(&col) / n as f64;
        let sq: Vec<f64> = col.iter().map(|v| (v - m) * (v - m)).collect();
        means.push(m);
        vars.push(if n > 1 { pairwise_sum(&sq) / (n - 1) as f64 } else { 0.0 });
    }
    (means, vars)
}

pub fn preprocess(x: &ExpressionMatrix, cfg: &PreprocessConfig) -> Result<ExpressionMatrix> {
    let mut values = x.values.clone();
    let mut gene_ids = x.gene_ids.clone();

    if cfg.normalize_library_size {
        let libs: Vec<f64> = values.row_iter().map(pairwise_sum).collect();
        if let Some(i) = libs.iter().position(|&l| l <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cell {} ({}) has zero library size",
                i, x.cell_ids[i]
            )));
        }
        let mut sorted = libs.clone();
        sorted.sort_by(f64::total_cmp);
        let target = median(&sorted);
        for (i, lib) in libs.iter().enumerate() {
            let s = target / lib;
            values.row_mut(i).iter_mut().for_each(|v| *v *= s);
        }
    }

    if cfg.log1p {
        if let Some(v) = values.data().iter().find(|&&v| v <= -1.0) {
            return Err(Error::InvalidArgument(format!("log1p of {v} is undefined")));
        }
        values = values.map(f64::ln_1p);
    }

    if let Some(requested) = cfg.n_top_genes {
        let g = values.cols();
        if requested == 0 {
            return Err(Error::InvalidConfig("n_top_genes must be positive".into()));
        }
        let keep = if requested > g {
            info!("n_top_genes={requested} exceeds {g} genes, keeping all");
            g
        } else {
            requested
        };
        if keep < g {
            let (_, vars) = column_moments(&values);
            let mut order: Vec<usize> = (0..g).collect();
            // Descending variance; stable sort keeps lower index first on ties.
            order.sort_by(|&a, &b| vars[b].total_cmp(&vars[a]));
            let mut idx = order[..keep].to_vec();
            idx.sort_unstable();
            values = values.select_cols(&idx);
            gene_ids = idx.iter().map(|&j| gene_ids[j].clone()).collect();
        }
    }

    if cfg.standardize {
        let (means, vars) = column_moments(&values);
        let mut flat = Vec::new();
        for (j, (&m, &v)) in means.iter().zip(&vars).enumerate() {
            let sd = v.sqrt();
            let zero = !(sd > 0.0) || sd <= 1e-12 * m.abs().max(1.0);
            if zero {
                flat.push(j);
            }
            for i in 0..values.rows() {
                let z = if zero { 0.0 } else { (values.get(i, j) - m) / sd };
                values.set(i, j, z);
            }
        }
        if !flat.is_empty() {
            warn!("{} constant gene(s) standardized to zero", flat.len());
        }
    }

    // Gene selection may legitimately go below the 3-gene ingestion floor,
    // so the result is assembled directly.
    Ok(ExpressionMatrix {
        values,
        cell_ids: x.cell_ids.clone(),
        gene_ids,
        labels: x.labels.clone(),
        label_names: x.label_names.clone(),
    })
}
