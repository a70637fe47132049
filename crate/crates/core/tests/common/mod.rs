#![allow(dead_code)]

use shrinkcl::dataio::{preprocess, synth, ExpressionMatrix, PreprocessConfig, SynthConfig};
use shrinkcl::encoder::{Model, ModelConfig};
use shrinkcl::ndmath::{gaussian_sample, Rng};
use shrinkcl::shrinkage::cluster_stats;
use shrinkcl::trainer::{batch_loss, trainable_params, TrainConfig};
use shrinkcl::Result;

/// The 1000 x 200, K = 5 blob benchmark, standardized.
pub fn blobs(seed: u64) -> Result<ExpressionMatrix> {
    let raw = synth(&SynthConfig::default(), &mut Rng::new(seed))?;
    preprocess(&raw, &PreprocessConfig::standardize_only())
}

pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

/// Central differences of the full weighted objective against the tape
/// gradient, for every trainable scalar. Relative error uses
/// `max(|analytic|, |numeric|, floor)` as denominator.
pub fn grad_check(seed: u64, step: f64, floor: f64) -> Result<GradCheck> {
    let (n, g, p, k) = (8, 20, 8, 3);
    let cfg = TrainConfig {
        model: ModelConfig {
            encoder_hidden: vec![16],
            feature_dim: p,
            instance_hidden: vec![8],
            instance_dim: 4,
            cluster_hidden: vec![],
            momentum: 0.9,
        },
        alpha: 0.7,
        beta: 1.3,
        ..TrainConfig::default()
    };
    let rng = Rng::new(seed);
    let mut model = Model::init(&cfg.model, g, k, &rng.derive(1))?;
    // Move the key encoder off the query so the two views differ in weights too.
    for w in model.encoder.key.params_mut() {
        let noise = gaussian_sample(&mut rng.derive(2), w.rows(), w.cols(), 0.0, 0.05)?;
        *w = w.add(&noise)?;
    }
    let xa = gaussian_sample(&mut rng.derive(3), n, g, 0.0, 1.0)?;
    let xb = gaussian_sample(&mut rng.derive(4), n, g, 0.0, 1.0)?;
    let labels = vec![0, 1, 2, 0, 1, 2, 0, 1];
    let h_other = gaussian_sample(&mut rng.derive(5), n, p, 0.0, 0.5)?;
    let stats = cluster_stats(&h_other, &labels, k)?;

    let (_, grads) = batch_loss(&model, &xa, &xb, &labels, Some(&stats), &cfg)?;
    let n_tensors = grads.len();
    let mut out = GradCheck {
        checked: 0,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
    };
    let value = |m: &Model| -> Result<f64> { Ok(batch_loss(m, &xa, &xb, &labels, Some(&stats), &cfg)?.0.total) };
    for t in 0..n_tensors {
        let len = grads[t].data().len();
        for j in 0..len {
            let mut plus = model.clone();
            trainable_params(&mut plus)[t].data_mut()[j] += step;
            let mut minus = model.clone();
            trainable_params(&mut minus)[t].data_mut()[j] -= step;
            let numeric = (value(&plus)? - value(&minus)?) / (2.0 * step);
            let analytic = grads[t].data()[j];
            let abs = (numeric - analytic).abs();
            let rel = abs / analytic.abs().max(numeric.abs()).max(floor);
            out.max_abs_err = out.max_abs_err.max(abs);
            out.max_rel_err = out.max_rel_err.max(rel);
            out.checked += 1;
        }
    }
    Ok(out)
}

