use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::{encode_labels, ExpressionMatrix};
use crate::error::{Error, Result};
use crate::ndmath::Matrix;

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if !t.is_empty() {
            out.push(t.to_string());
        }
    }
    Ok(out)
}

/// First whitespace/tab-separated token of each line (10x `features.tsv`
/// files carry extra columns).
fn read_ids(path: &Path) -> Result<Vec<String>> {
    Ok(read_lines(path)?
        .into_iter()
        .map(|l| l.split(['\t', ' ']).next().unwrap_or_default().to_string())
        .collect())
}

/// Reads a coordinate Matrix Market file plus newline-delimited gene, cell
/// and optional label files, and densifies it to cells x genes.
///
/// Indices are 1-based; duplicate coordinates are summed. The file may be
/// stored genes x cells (the 10x layout) or cells x genes; orientation is
/// decided by matching the header dimensions against the id files, and a
/// square ambiguous file is read as genes x cells. Only `general` symmetry
/// with `real`, `integer` or `pattern` fields is accepted.
pub fn load_matrix_market(
    mtx_path: impl AsRef<Path>,
    genes_path: impl AsRef<Path>,
    cells_path: impl AsRef<Path>,
    labels_path: Option<&Path>,
) -> Result<ExpressionMatrix> {
    let mtx_path = mtx_path.as_ref();
    let gene_ids = read_ids(genes_path.as_ref())?;
    let cell_ids = read_ids(cells_path.as_ref())?;

    let file = File::open(mtx_path).map_err(|e| Error::io(mtx_path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let bad = |msg: String| Error::Format(format!("{}: {msg}", mtx_path.display()));

    let (_, banner) = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let banner = banner.map_err(|e| Error::io(mtx_path, e))?;
    let fields: Vec<String> = banner.split_whitespace().map(str::to_ascii_lowercase).collect();
    if fields.len() != 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" || fields[2] != "coordinate" {
        return Err(bad(format!("expected '%%MatrixMarket matrix coordinate ...' header, got {banner:?}")));
    }
    let pattern = match fields[3].as_str() {
        "real" | "integer" => false,
        "pattern" => true,
        other => return Err(bad(format!("unsupported field type {other:?}"))),
    };
    if fields[4] != "general" {
        return Err(bad(format!("unsupported symmetry {:?}", fields[4])));
    }

    let mut size: Option<(usize, usize, usize)> = None;
    let mut entries: Vec<(usize, usize, f64)> = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(mtx_path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let row = i + 1;
        let toks: Vec<&str> = t.split_whitespace().collect();
        let parse_idx = |k: usize| -> Result<usize> {
            toks.get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Parse {
                    row,
                    col: k + 1,
                    msg: format!("bad integer in {t:?}"),
                })
        };
        match size {
            None => size = Some((parse_idx(0)?, parse_idx(1)?, parse_idx(2)?)),
            Some((nr, nc, _)) => {
                let (r, c) = (parse_idx(0)?, parse_idx(1)?);
                if r == 0 || c == 0 || r > nr || c > nc {
                    return Err(bad(format!("entry ({r}, {c}) out of bounds for {nr}x{nc} on line {row}")));
                }
                let v = if pattern {
                    1.0
                } else {
                    toks.get(2)
                        .and_then(|s| s.parse::<f64>().ok())
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::Parse {
                            row,
                            col: 3,
                            msg: format!("bad value in {t:?}"),
                        })?
                };
                entries.push((r - 1, c - 1, v));
            }
        }
    }
    let (nr, nc, nnz) = size.ok_or_else(|| bad("missing size line".into()))?;
    if entries.len() != nnz {
        return Err(bad(format!("header declares {nnz} entries, found {}", entries.len())));
    }
    let genes_by_rows = if nr == gene_ids.len() && nc == cell_ids.len() {
        true
    } else if nr == cell_ids.len() && nc == gene_ids.len() {
        false
    } else {
        return Err(bad(format!(
            "matrix is {nr}x{nc} but there are {} genes and {} cells",
            gene_ids.len(),
            cell_ids.len()
        )));
    };

    let (n, g) = (cell_ids.len(), gene_ids.len());
    let mut values = Matrix::zeros(n, g);
    for (r, c, v) in entries {
        let (cell, gene) = if genes_by_rows { (c, r) } else { (r, c) };
        let cur = values.get(cell, gene);
        values.set(cell, gene, cur + v);
    }
    let (labels, names) = match labels_path {
        Some(p) => {
            let toks = read_lines(p)?;
            let (l, names) = encode_labels(&toks);
            (Some(l), names)
        }
        None => (None, None),
    };
    let mut m = ExpressionMatrix::new(values, cell_ids, gene_ids, labels)?;
    m.label_names = names;
    m.check_nonnegative()?;
    Ok(m)
}
