//! Trains on synthetic Gaussian blobs and prints clustering quality.
//!
//! cargo run --release --example train_blobs -- [seed] [epochs]

use shrinkcl::dataio::{preprocess, synth, PreprocessConfig, SynthConfig};
use shrinkcl::ndmath::Rng;
use shrinkcl::trainer::{train, TrainConfig};

fn main() -> shrinkcl::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(400);

    let raw = synth(&SynthConfig::default(), &mut Rng::new(seed))?;
    let x = preprocess(&raw, &PreprocessConfig::standardize_only())?;
    let cfg = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let out = train(&x, &cfg)?;
    let r = &out.report;
    let f = &r.final_eval;
    println!(
        "seed {seed}: best epoch {} | head ARI {:.4} NMI {:.4} | k-means ARI {:.4} NMI {:.4} | cos gap {:.4} | {:.1}s",
        r.best_epoch,
        f.ari.unwrap_or(f64::NAN),
        f.nmi.unwrap_or(f64::NAN),
        f.ari_kmeans.unwrap_or(f64::NAN),
        f.nmi_kmeans.unwrap_or(f64::NAN),
        f.cosine_gap.gap,
        r.wall_clock_secs
    );
    println!(
        "lowest monitored shrinkage loss at epoch {} ({:.4})",
        r.min_sure_epoch, r.monitored_sure[r.min_sure_epoch]
    );
    Ok(())
}
