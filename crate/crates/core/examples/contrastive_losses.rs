//! Two augmented views of a batch, encoded by a fresh model, and the
//! instance and cluster contrastive losses on them.
//!
//! cargo run --release --example contrastive_losses

use shrinkcl::augment::{augment_batch, AugmentConfig};
use shrinkcl::contrastive::{cluster_loss, instance_loss, ContrastConfig};
use shrinkcl::dataio::{synth, SynthConfig};
use shrinkcl::encoder::{Model, ModelConfig};
use shrinkcl::metrics::cosine_gap;
use shrinkcl::ndmath::Rng;

fn main() -> shrinkcl::Result<()> {
    let x = synth(
        &SynthConfig {
            n_cells: 64,
            n_genes: 50,
            n_clusters: 4,
            ..SynthConfig::default()
        },
        &mut Rng::new(2),
    )?;
    let model = Model::init(&ModelConfig::default(), x.n_genes(), 4, &Rng::new(9))?;
    let contrast = ContrastConfig::default();
    for (name, aug) in [("identity views", AugmentConfig::identity()), ("mask + noise", AugmentConfig::default())] {
        let (xa, xb) = augment_batch(&x.values, &aug, &Rng::new(4))?;
        let (_, za, ya) = model.embed(&xa)?;
        let (_, zb, yb) = model.embed(&xb)?;
        let ins = instance_loss(&za, &zb, &contrast)?;
        let clu = cluster_loss(&ya, &yb, &contrast)?;
        let gap = cosine_gap(&za, &zb)?;
        println!(
            "{name:<15} instance {ins:.4} | cluster pair {:.4} + marginal {:.4} = {:.4} | cosine gap {:.4}",
            clu.pair, clu.regularizer, clu.total, gap.gap
        );
    }
    Ok(())
}
