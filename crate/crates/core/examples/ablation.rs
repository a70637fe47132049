//! Loss-combination ablation on synthetic blobs: trains each loss set with
//! shared seeds and prints head NMI and cosine-gap statistics.
//!
//! cargo run --release --example ablation -- [epochs] [seeds] [variants...]

use shrinkcl::dataio::{preprocess, synth, PreprocessConfig, SynthConfig};
use shrinkcl::ndmath::Rng;
use shrinkcl::trainer::{ablate, LossSet, TrainConfig};

fn main() -> shrinkcl::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(100);
    let n_seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let variants: Vec<LossSet> = if args.len() > 2 {
        args[2..].iter().map(|s| s.parse()).collect::<shrinkcl::Result<_>>()?
    } else {
        vec![LossSet::FULL, "ins,clu".parse()?, "ins".parse()?]
    };

    let seeds: Vec<u64> = (0..n_seeds).collect();
    let mut table = Vec::new();
    for &seed in &seeds {
        let raw = synth(&SynthConfig::default(), &mut Rng::new(seed))?;
        let x = preprocess(&raw, &PreprocessConfig::standardize_only())?;
        let cfg = TrainConfig {
            epochs,
            ..TrainConfig::default()
        };
        table.extend(ablate(&x, &cfg, &variants, &[seed])?.rows);
    }
    println!("{:<14} {:>4} {:>8} {:>8} {:>10} {:>10}", "losses", "seed", "ARI", "NMI", "gap mean", "gap var");
    for r in &table {
        println!(
            "{:<14} {:>4} {:>8.4} {:>8.4} {:>10.4} {:>10.2e}",
            r.losses,
            r.seed,
            r.ari.unwrap_or(f64::NAN),
            r.nmi.unwrap_or(f64::NAN),
            r.cos_gap_mean,
            r.cos_gap_var
        );
    }
    Ok(())
}
