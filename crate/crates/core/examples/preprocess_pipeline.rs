//! Count-like data through the preprocessing pipeline: write a CSV, load it
//! back, normalize, log-transform, select genes and standardize.
//!
//! cargo run --release --example preprocess_pipeline

use shrinkcl::dataio::{load_csv, preprocess, write_csv, CsvOptions, ExpressionMatrix, PreprocessConfig};
use shrinkcl::ndmath::{Matrix, Rng};

fn main() -> shrinkcl::Result<()> {
    let mut rng = Rng::new(3);
    let (n, g) = (40, 30);
    // Poisson-like counts: two groups with different expressed genes.
    let mut data = Vec::with_capacity(n * g);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let group = i % 2;
        labels.push(group);
        for j in 0..g {
            let rate: f64 = if (j < g / 2) == (group == 0) { 8.0 } else { 1.0 };
            let count = (rate + rate.sqrt() * rng.normal()).round().max(0.0);
            data.push(count);
        }
    }
    let x = ExpressionMatrix::from_values(Matrix::new(n, g, data)?, Some(labels))?;

    let dir = std::env::temp_dir().join("shrinkcl-preprocess-example");
    std::fs::create_dir_all(&dir).map_err(|e| shrinkcl::Error::InvalidArgument(e.to_string()))?;
    let path = dir.join("counts.csv");
    write_csv(&path, &x, true)?;
    let loaded = load_csv(&path, &CsvOptions::default())?;
    println!("loaded {} cells x {} genes from {}", loaded.n_cells(), loaded.n_genes(), path.display());

    let cfg = PreprocessConfig {
        n_top_genes: Some(10),
        ..PreprocessConfig::default()
    };
    let y = preprocess(&loaded, &cfg)?;
    println!("after preprocessing: {} genes kept: {:?}", y.n_genes(), y.gene_ids);
    let means = y.values.col_means()?;
    println!("column means after z-scoring (should be ~0): {:.1e}", means.data().iter().fold(0.0f64, |m, v| m.max(v.abs())));
    Ok(())
}
