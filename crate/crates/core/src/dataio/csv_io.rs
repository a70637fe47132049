use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{encode_labels, ExpressionMatrix};
use crate::error::{Error, Result};
use crate::ndmath::Matrix;

/// Options for [`load_csv`].
#[derive(Clone, Debug)]
pub struct CsvOptions {
    /// Field separator; `None` picks tab when the header contains one and
    /// comma otherwise.
    pub delimiter: Option<u8>,
    /// Header name of the optional trailing label column.
    pub label_column: String,
    /// Accept negative entries (already-transformed expression).
    pub allow_negative: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            delimiter: None,
            label_column: "label".to_string(),
            allow_negative: false,
        }
    }
}

fn sniff_delimiter(path: &Path) -> Result<u8> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = String::new();
    BufReader::new(file)
        .read_line(&mut header)
        .map_err(|e| Error::io(path, e))?;
    Ok(if header.contains('\t') { b'\t' } else { b',' })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

/// Reads a cells x genes table: header row of gene ids, first column cell
/// ids, optional trailing label column. Rows and columns in errors are
/// 1-based file positions (the header is row 1, the id column is col 1).
pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<ExpressionMatrix> {
    let path = path.as_ref();
    let delimiter = match options.delimiter {
        Some(d) => d,
        None => sniff_delimiter(path)?,
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut records = reader.records();
    let header = records
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty file", path.display())))?
        .map_err(|e| csv_err(path, e))?;
    let width = header.len();
    let has_label = width >= 2
        && header
            .get(width - 1)
            .is_some_and(|h| h.trim().eq_ignore_ascii_case(&options.label_column));
    let gene_end = if has_label { width - 1 } else { width };
    let gene_ids: Vec<String> = header.iter().take(gene_end).skip(1).map(|s| s.trim().to_string()).collect();

    let mut cell_ids = Vec::new();
    let mut tokens = Vec::new();
    let mut data = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = i + 2;
        if rec.len() == 1 && rec.get(0).is_some_and(|f| f.trim().is_empty()) {
            continue;
        }
        if rec.len() != width {
            return Err(Error::Parse {
                row,
                col: rec.len().min(width) + 1,
                msg: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        cell_ids.push(rec[0].trim().to_string());
        for c in 1..gene_end {
            let field = rec[c].trim();
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                col: c + 1,
                msg: format!("cannot parse {field:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    col: c + 1,
                    msg: format!("non-finite value {field:?}"),
                });
            }
            if v < 0.0 && !options.allow_negative {
                return Err(Error::Parse {
                    row,
                    col: c + 1,
                    msg: format!("negative value {v}"),
                });
            }
            data.push(v);
        }
        if has_label {
            tokens.push(rec[width - 1].to_string());
        }
    }
    let n = cell_ids.len();
    let values = Matrix::new(n, gene_ids.len(), data)?;
    let (labels, names) = if has_label {
        let (l, names) = encode_labels(&tokens);
        (Some(l), names)
    } else {
        (None, None)
    };
    let mut m = ExpressionMatrix::new(values, cell_ids, gene_ids, labels)?;
    m.label_names = names;
    Ok(m)
}

/// Reads a two-column `cell,label` file (header required). Returns the
/// cell ids and encoded labels.
pub fn load_labels_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<usize>, Option<Vec<String>>)> {
    let path = path.as_ref();
    let delimiter = sniff_delimiter(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut cells = Vec::new();
    let mut tokens = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != 2 {
            return Err(Error::Parse {
                row: i + 2,
                col: rec.len().min(2) + 1,
                msg: format!("expected 2 fields, found {}", rec.len()),
            });
        }
        cells.push(rec[0].trim().to_string());
        tokens.push(rec[1].to_string());
    }
    let (labels, names) = encode_labels(&tokens);
    Ok((cells, labels, names))
}

/// Writes the matrix as comma-separated text; the label column is appended
/// when `with_labels` is set and labels exist. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_csv(path: impl AsRef<Path>, x: &ExpressionMatrix, with_labels: bool) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let labels = x.labels.as_ref().filter(|_| with_labels);
    let io = |e| Error::io(path, e);
    write!(w, "cell").map_err(io)?;
    for g in &x.gene_ids {
        write!(w, ",{g}").map_err(io)?;
    }
    if labels.is_some() {
        write!(w, ",label").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for (i, row) in x.values.row_iter().enumerate() {
        write!(w, "{}", x.cell_ids[i]).map_err(io)?;
        for v in row {
            write!(w, ",{v}").map_err(io)?;
        }
        if let Some(l) = labels {
            write!(w, ",{}", label_text(x, l[i])).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn label_text(x: &ExpressionMatrix, label: usize) -> String {
    x.label_names
        .as_ref()
        .and_then(|n| n.get(label).cloned())
        .unwrap_or_else(|| label.to_string())
}

/// Writes `cell,label` rows for a labelled matrix.
pub fn write_labels_csv(path: impl AsRef<Path>, x: &ExpressionMatrix) -> Result<()> {
    let path = path.as_ref();
    let labels = x
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("matrix has no labels to write".into()))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "cell,label").map_err(io)?;
    for (id, &l) in x.cell_ids.iter().zip(labels) {
        writeln!(w, "{id},{}", label_text(x, l)).map_err(io)?;
    }
    w.flush().map_err(io)
}
