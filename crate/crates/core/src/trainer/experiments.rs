//! Drivers that train several configurations with shared seeds and compare
//! them: loss ablations, the noise on/off pair, and downsampling robustness.

use serde::{Deserialize, Serialize};

use super::{train, LossSet, TrainConfig, TrainOutput};
use crate::dataio::{downsample, DownsampleMode, ExpressionMatrix};
use crate::error::{Error, Result};
use crate::ndmath::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub losses: String,
    pub seed: u64,
    pub ari: Option<f64>,
    pub nmi: Option<f64>,
    pub nmi_geometric: Option<f64>,
    pub ari_kmeans: Option<f64>,
    pub nmi_kmeans: Option<f64>,
    /// Mean and population variance of the cosine gap over evaluated epochs.
    pub cos_gap_mean: f64,
    pub cos_gap_var: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, losses: LossSet, seed: u64) -> Option<&AblationRow> {
        let name = losses.name();
        self.rows.iter().find(|r| r.losses == name && r.seed == seed)
    }
}

pub(crate) fn ablation_row(out: &TrainOutput, cfg: &TrainConfig) -> AblationRow {
    let gaps: Vec<f64> = out.report.evals.iter().map(|e| e.cosine_gap.gap).collect();
    let (mean, var) = if gaps.is_empty() {
        (out.report.final_eval.cosine_gap.gap, 0.0)
    } else {
        let m = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let v = gaps.iter().map(|g| (g - m) * (g - m)).sum::<f64>() / gaps.len() as f64;
        (m, v)
    };
    let f = &out.report.final_eval;
    AblationRow {
        losses: cfg.losses.name(),
        seed: cfg.seed,
        ari: f.ari,
        nmi: f.nmi,
        nmi_geometric: f.nmi_geometric,
        ari_kmeans: f.ari_kmeans,
        nmi_kmeans: f.nmi_kmeans,
        cos_gap_mean: mean,
        cos_gap_var: var,
        best_epoch: out.report.best_epoch,
    }
}

/// Trains every (variant, seed) pair; all other settings come from `cfg`.
pub fn ablate(x: &ExpressionMatrix, cfg: &TrainConfig, variants: &[LossSet], seeds: &[u64]) -> Result<AblationTable> {
    if variants.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one variant".into()));
    }
    if let Some(v) = variants.iter().find(|v| v.is_empty()) {
        return Err(Error::InvalidConfig(format!("variant {} enables no loss", v.name())));
    }
    let seeds = if seeds.is_empty() { vec![cfg.seed] } else { seeds.to_vec() };
    let mut rows = Vec::with_capacity(variants.len() * seeds.len());
    for &seed in &seeds {
        for &losses in variants {
            let arm = TrainConfig {
                losses,
                seed,
                ..cfg.clone()
            };
            log::info!("ablation arm {} seed {seed}", losses.name());
            let out = train(x, &arm)?;
            rows.push(ablation_row(&out, &arm));
        }
    }
    Ok(AblationTable { rows })
}

/// Head-argmax NMI of two runs and their difference `a - b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedReport {
    pub seed: u64,
    pub a: f64,
    pub b: f64,
    pub difference: f64,
}

fn require_nmi(out: &TrainOutput) -> Result<f64> {
    out.report
        .final_eval
        .nmi
        .ok_or_else(|| Error::InvalidArgument("paired comparison needs ground-truth labels".into()))
}

pub fn paired_runs(x: &ExpressionMatrix, a: &TrainConfig, b: &TrainConfig) -> Result<PairedReport> {
    let na = require_nmi(&train(x, a)?)?;
    let nb = require_nmi(&train(x, b)?)?;
    Ok(PairedReport {
        seed: a.seed,
        a: na,
        b: nb,
        difference: na - nb,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseToggleReport {
    pub dataset: String,
    pub seed: u64,
    /// NMI with Gaussian noise in the augmentation.
    pub with: f64,
    pub without: f64,
    pub difference: f64,
}

/// Two runs that differ only in `augment.noise_enabled`.
pub fn noise_toggle_experiment(x: &ExpressionMatrix, cfg: &TrainConfig, dataset: &str) -> Result<NoiseToggleReport> {
    cfg.validate()?;
    let mut with = cfg.clone();
    with.augment.noise_enabled = true;
    let mut without = cfg.clone();
    without.augment.noise_enabled = false;
    let p = paired_runs(x, &with, &without)?;
    Ok(NoiseToggleReport {
        dataset: dataset.to_string(),
        seed: cfg.seed,
        with: p.a,
        without: p.b,
        difference: p.difference,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    /// 0 marks the full-data reference run.
    pub rate: f64,
    pub seed: u64,
    pub n_cells: usize,
    pub ari: f64,
    pub nmi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub rate: f64,
    pub median_nmi: f64,
    /// Median full-data NMI minus `median_nmi`.
    pub degradation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub mode: String,
    pub rows: Vec<RobustnessRow>,
    pub summary: Vec<RateSummary>,
}

impl RobustnessReport {
    pub fn at_rate(&self, rate: f64) -> Option<&RateSummary> {
        self.summary.iter().find(|s| (s.rate - rate).abs() < 1e-12)
    }
}

pub(crate) fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn scored(out: &TrainOutput) -> Result<(f64, f64)> {
    let nmi = require_nmi(out)?;
    Ok((out.report.final_eval.ari.unwrap_or(f64::NAN), nmi))
}

/// For each seed, trains on the full data and on each downsampled copy.
/// `full` supplies already-finished reference runs keyed by seed.
pub fn downsample_robustness(
    x: &ExpressionMatrix,
    cfg: &TrainConfig,
    rates: &[f64],
    mode: DownsampleMode,
    seeds: &[u64],
    full: &[(u64, f64, f64)],
) -> Result<RobustnessReport> {
    if x.labels.is_none() {
        return Err(Error::InvalidArgument("robustness runs need ground-truth labels".into()));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("robustness needs at least one seed".into()));
    }
    let mut rows = Vec::new();
    for &seed in seeds {
        let run_cfg = TrainConfig { seed, ..cfg.clone() };
        let (ari, nmi) = match full.iter().find(|f| f.0 == seed) {
            Some(&(_, a, n)) => (a, n),
            None => scored(&train(x, &run_cfg)?)?,
        };
        rows.push(RobustnessRow {
            rate: 0.0,
            seed,
            n_cells: x.n_cells(),
            ari,
            nmi,
        });
        for (i, &rate) in rates.iter().enumerate() {
            let mut rng = Rng::new(seed).derive(0xD0 + i as u64);
            let sub = downsample(x, rate, mode, &mut rng)?;
            log::info!("downsample rate {rate} seed {seed}: {} cells", sub.n_cells());
            let (ari, nmi) = scored(&train(&sub, &run_cfg)?)?;
            rows.push(RobustnessRow {
                rate,
                seed,
                n_cells: sub.n_cells(),
                ari,
                nmi,
            });
        }
    }
    let med = |rate: f64| {
        let v: Vec<f64> = rows.iter().filter(|r| r.rate == rate).map(|r| r.nmi).collect();
        median(&v)
    };
    let base = med(0.0);
    let summary = std::iter::once(0.0)
        .chain(rates.iter().copied())
        .map(|rate| {
            let m = med(rate);
            RateSummary {
                rate,
                median_nmi: m,
                degradation: base - m,
            }
        })
        .collect();
    Ok(RobustnessReport {
        mode: mode.to_string(),
        rows,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clusterer::KmeansConfig;
    use crate::dataio::{synth, SynthConfig};
    use crate::encoder::ModelConfig;

    fn toy() -> ExpressionMatrix {
        let cfg = SynthConfig {
            n_cells: 30,
            n_genes: 10,
            n_clusters: 3,
            centroid_scale: 2.0,
            within_std: 0.2,
            dropout_rate: 0.0,
            cluster_weights: None,
        };
        synth(&cfg, &mut Rng::new(9)).unwrap()
    }

    fn tiny() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 10,
            model: ModelConfig {
                encoder_hidden: vec![8],
                feature_dim: 4,
                instance_hidden: vec![],
                instance_dim: 4,
                cluster_hidden: vec![],
                momentum: 0.9,
            },
            kmeans: KmeansConfig { n_init: 2, ..KmeansConfig::with_k(3) },
            eval_every: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn ablation_rows_share_seeds() {
        let ins: LossSet = "ins".parse().unwrap();
        let ins_sure: LossSet = "ins,sure".parse().unwrap();
        let t = ablate(&toy(), &tiny(), &[ins, ins_sure], &[4]).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert!(t.row(ins, 4).is_some() && t.row(ins_sure, 4).is_some());
        assert!(t.rows.iter().all(|r| r.seed == 4 && r.nmi.is_some()));
    }

    #[test]
    fn empty_variant_rejected() {
        let none = LossSet { sure: false, ins: false, clu: false };
        assert!(ablate(&toy(), &tiny(), &[none], &[0]).is_err());
        assert!(ablate(&toy(), &tiny(), &[], &[0]).is_err());
    }

    #[test]
    fn identical_arms_have_zero_difference() {
        let mut cfg = tiny();
        cfg.augment.noise_enabled = false;
        let p = paired_runs(&toy(), &cfg, &cfg).unwrap();
        assert_eq!(p.difference, 0.0);
        let r = noise_toggle_experiment(&toy(), &tiny(), "toy").unwrap();
        let json = serde_json::to_value(&r).unwrap();
        for key in ["with", "without", "difference"] {
            assert!(json.get(key).is_some());
        }
        assert_eq!(r.difference, r.with - r.without);
    }

    #[test]
    fn robustness_rows_per_rate_and_seed() {
        let r = downsample_robustness(&toy(), &tiny(), &[0.2, 0.5], DownsampleMode::Stratified, &[1, 2], &[]).unwrap();
        assert_eq!(r.rows.len(), 6);
        assert_eq!(r.summary.len(), 3);
        assert_eq!(r.at_rate(0.0).unwrap().degradation, 0.0);
        assert_eq!(r.rows.iter().find(|x| x.rate == 0.5).unwrap().n_cells, 15);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
