//! Stratified downsampling study plus the noise on/off comparison, at a
//! reduced epoch count.
//!
//! cargo run --release --example robustness -- [epochs]

use shrinkcl::dataio::{preprocess, synth, DownsampleMode, PreprocessConfig, SynthConfig};
use shrinkcl::ndmath::Rng;
use shrinkcl::trainer::{downsample_robustness, noise_toggle_experiment, TrainConfig};

fn main() -> shrinkcl::Result<()> {
    env_logger::init();
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let raw = synth(&SynthConfig::default(), &mut Rng::new(0))?;
    let x = preprocess(&raw, &PreprocessConfig::standardize_only())?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };

    let r = downsample_robustness(&x, &cfg, &[0.2, 0.5, 0.8], DownsampleMode::Stratified, &[0], &[])?;
    for row in &r.rows {
        println!("rate {:.1}: {:>4} cells, ARI {:.4} NMI {:.4}", row.rate, row.n_cells, row.ari, row.nmi);
    }

    let t = noise_toggle_experiment(&x, &cfg, "blobs")?;
    println!(
        "noise on/off: NMI with {:.4}, without {:.4}, difference {:+.4}",
        t.with, t.without, t.difference
    );
    Ok(())
}
