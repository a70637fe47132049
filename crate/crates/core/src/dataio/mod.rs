//! Expression-matrix ingestion, preprocessing, synthetic data and
//! downsampling.

mod csv_io;
mod downsample;
mod mtx;
mod preprocess;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::Matrix;

pub use csv_io::{load_csv, load_labels_csv, write_csv, write_labels_csv, CsvOptions};
pub use downsample::{downsample, DownsampleMode};
pub use mtx::load_matrix_market;
pub use preprocess::{preprocess, PreprocessConfig};
pub use synth::{synth, SynthConfig};

/// N cells x G genes plus optional ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpressionMatrix {
    pub values: Matrix,
    pub cell_ids: Vec<String>,
    pub gene_ids: Vec<String>,
    pub labels: Option<Vec<usize>>,
    /// Original label strings, indexed by label value, when labels were read
    /// from text that was not purely numeric.
    pub label_names: Option<Vec<String>>,
}

impl ExpressionMatrix {
    /// Validates shapes, identifier counts and finiteness. Needs at least
    /// 2 cells and 3 genes.
    pub fn new(
        values: Matrix,
        cell_ids: Vec<String>,
        gene_ids: Vec<String>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let (n, g) = values.shape();
        if n < 2 || g < 3 {
            return Err(Error::InvalidArgument(format!(
                "expression matrix needs at least 2 cells and 3 genes, got {n}x{g}"
            )));
        }
        if cell_ids.len() != n || gene_ids.len() != g {
            return Err(Error::InvalidArgument(format!(
                "{} cell ids and {} gene ids for a {n}x{g} matrix",
                cell_ids.len(),
                gene_ids.len()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "{} labels for {n} cells",
                    l.len()
                )));
            }
        }
        if !values.all_finite() {
            return Err(Error::NonFinite { op: "expression matrix" });
        }
        Ok(Self {
            values,
            cell_ids,
            gene_ids,
            labels,
            label_names: None,
        })
    }

    /// Wraps a matrix with generated identifiers.
    pub fn from_values(values: Matrix, labels: Option<Vec<usize>>) -> Result<Self> {
        let cells = (0..values.rows()).map(|i| format!("cell_{i}")).collect();
        let genes = (0..values.cols()).map(|j| format!("gene_{j}")).collect();
        Self::new(values, cells, genes, labels)
    }

    pub fn n_cells(&self) -> usize {
        self.values.rows()
    }

    pub fn n_genes(&self) -> usize {
        self.values.cols()
    }

    /// Number of distinct classes, `max(label) + 1`.
    pub fn n_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m + 1))
    }

    /// Subset of cells in the given order.
    pub fn select_cells(&self, idx: &[usize]) -> Self {
        Self {
            values: self.values.select_rows(idx),
            cell_ids: idx.iter().map(|&i| self.cell_ids[i].clone()).collect(),
            gene_ids: self.gene_ids.clone(),
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
            label_names: self.label_names.clone(),
        }
    }

    pub(crate) fn check_nonnegative(&self) -> Result<()> {
        for (i, row) in self.values.row_iter().enumerate() {
            if let Some(j) = row.iter().position(|&v| v < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "negative value {} at cell {i}, gene {j}",
                    row[j]
                )));
            }
        }
        Ok(())
    }
}

/// Turns raw label tokens into integer labels. If every token is a
/// non-negative integer the values are kept; otherwise distinct strings are
/// numbered in order of first appearance.
pub(crate) fn encode_labels(tokens: &[String]) -> (Vec<usize>, Option<Vec<String>>) {
    let numeric: Option<Vec<usize>> = tokens.iter().map(|t| t.trim().parse().ok()).collect();
    if let Some(values) = numeric {
        return (values, None);
    }
    let mut names: Vec<String> = Vec::new();
    let labels = tokens
        .iter()
        .map(|t| {
            let t = t.trim();
            match names.iter().position(|n| n == t) {
                Some(i) => i,
                None => {
                    names.push(t.to_string());
                    names.len() - 1
                }
            }
        })
        .collect();
    (labels, Some(names))
}
