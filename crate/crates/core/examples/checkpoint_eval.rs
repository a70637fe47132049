//! Trains briefly, saves a checkpoint, loads it back and re-scores it.
//!
//! cargo run --release --example checkpoint_eval

use shrinkcl::dataio::{preprocess, synth, PreprocessConfig, SynthConfig};
use shrinkcl::encoder::Checkpoint;
use shrinkcl::ndmath::Rng;
use shrinkcl::trainer::{final_evaluation, train, TrainConfig};

fn main() -> shrinkcl::Result<()> {
    let raw = synth(
        &SynthConfig {
            n_cells: 300,
            n_genes: 60,
            n_clusters: 3,
            ..SynthConfig::default()
        },
        &mut Rng::new(1),
    )?;
    let x = preprocess(&raw, &PreprocessConfig::standardize_only())?;
    let mut cfg = TrainConfig {
        epochs: 30,
        ..TrainConfig::default()
    };
    cfg.kmeans.k = 3;
    let out = train(&x, &cfg)?;

    let path = std::env::temp_dir().join("shrinkcl-example-checkpoint.json");
    Checkpoint::new(out.model.clone(), out.report.best_epoch, x.gene_ids.clone()).save(&path)?;
    let loaded = Checkpoint::load(&path)?;
    let (again, labels) = final_evaluation(&loaded.model, &x, &cfg, loaded.epoch)?;
    println!("checkpoint written to {}", path.display());
    println!("report  ARI {:?} NMI {:?}", out.report.final_eval.ari, out.report.final_eval.nmi);
    println!("reload  ARI {:?} NMI {:?}", again.ari, again.nmi);
    println!("first assignments: {:?}", &labels[..10]);
    Ok(())
}
