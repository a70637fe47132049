//! k-means with k-means++ restarts on labelled blobs, scored with ARI and
//! both NMI normalizations.
//!
//! cargo run --release --example kmeans_metrics

use shrinkcl::clusterer::{kmeans, KmeansConfig};
use shrinkcl::dataio::{synth, SynthConfig};
use shrinkcl::metrics::{ari, nmi, NmiNorm};
use shrinkcl::ndmath::Rng;

fn main() -> shrinkcl::Result<()> {
    let x = synth(
        &SynthConfig {
            n_cells: 300,
            n_genes: 20,
            n_clusters: 4,
            within_std: 0.6,
            dropout_rate: 0.0,
            ..SynthConfig::default()
        },
        &mut Rng::new(5),
    )?;
    let truth = x.labels.clone().expect("synth labels");
    for k in [2, 3, 4, 5, 6] {
        let r = kmeans(&x.values, &KmeansConfig::with_k(k), &mut Rng::new(1))?;
        println!(
            "k = {k}: inertia {:>9.2} after {:>2} iterations | ARI {:.4} NMI {:.4} (geometric {:.4})",
            r.inertia,
            r.iterations,
            ari(&r.labels, &truth)?,
            nmi(&r.labels, &truth, NmiNorm::Arithmetic)?,
            nmi(&r.labels, &truth, NmiNorm::Geometric)?
        );
    }
    Ok(())
}
