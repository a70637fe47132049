//! The training loop: augment, encode, score the three losses, step the
//! optimizer, refresh cluster statistics once per epoch, and keep the
//! parameters with the lowest monitored shrinkage loss.

mod adam;
mod experiments;

use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::augment::{augment_batch, AugmentConfig};
use crate::clusterer::{assign_final, kmeans, AssignRule, KmeansConfig};
use crate::contrastive::{cluster_loss_tape, instance_loss_tape, total_loss, ContrastConfig};
use crate::dataio::ExpressionMatrix;
use crate::encoder::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::metrics::{ari, cosine_gap, nmi, CosineGap, NmiNorm};
use crate::ndmath::{Matrix, Rng, Tape, Var};
use crate::shrinkage::{cluster_stats, sure_loss_masked, sure_loss_tape, ClusterStats};

pub use adam::{Adam, AdamConfig};
pub use experiments::{
    ablate, downsample_robustness, noise_toggle_experiment, paired_runs, AblationRow, AblationTable,
    NoiseToggleReport, PairedReport, RateSummary, RobustnessReport, RobustnessRow,
};

/// Which loss terms contribute to the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSet {
    pub sure: bool,
    pub ins: bool,
    pub clu: bool,
}

impl Default for LossSet {
    fn default() -> Self {
        Self::FULL
    }
}

impl LossSet {
    pub const FULL: LossSet = LossSet {
        sure: true,
        ins: true,
        clu: true,
    };

    pub fn is_empty(&self) -> bool {
        !(self.sure || self.ins || self.clu)
    }

    /// `sure+ins+clu` style name with the enabled terms in fixed order.
    pub fn name(&self) -> String {
        let parts: Vec<&str> = [(self.sure, "sure"), (self.ins, "ins"), (self.clu, "clu")]
            .iter()
            .filter(|(on, _)| *on)
            .map(|&(_, n)| n)
            .collect();
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

impl FromStr for LossSet {
    type Err = Error;

    /// Accepts `full`/`all` or a `,`/`+` separated list of `sure`, `ins`, `clu`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "full" || s == "all" {
            return Ok(Self::FULL);
        }
        let mut set = LossSet {
            sure: false,
            ins: false,
            clu: false,
        };
        for tok in s.split([',', '+']).map(str::trim).filter(|t| !t.is_empty()) {
            match tok {
                "sure" => set.sure = true,
                "ins" => set.ins = true,
                "clu" => set.clu = true,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown loss {other:?} (expected sure, ins, clu)"
                    )))
                }
            }
        }
        if set.is_empty() {
            return Err(Error::InvalidConfig("loss set must enable at least one loss".into()));
        }
        Ok(set)
    }
}

/// How the per-batch shrinkage loss is reduced before weighting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SureReduction {
    Sum,
    #[default]
    Mean,
}

/// Which parameters `train` returns. The monitored shrinkage loss tracks the
/// one-epoch change in within-cluster variance, so its minimum usually falls
/// in the first epochs while features contract fastest; `Last` is the
/// default and `MinSure` is kept for comparison.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointRule {
    /// Parameters with the lowest monitored shrinkage loss.
    MinSure,
    #[default]
    Last,
}

impl FromStr for CheckpointRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min-sure" => Ok(Self::MinSure),
            "last" => Ok(Self::Last),
            other => Err(Error::InvalidConfig(format!(
                "unknown checkpoint rule {other:?} (min-sure|last)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub alpha: f64,
    pub beta: f64,
    pub losses: LossSet,
    pub sure_reduction: SureReduction,
    pub checkpoint: CheckpointRule,
    pub assign_rule: AssignRule,
    pub model: ModelConfig,
    pub augment: AugmentConfig,
    pub contrast: ContrastConfig,
    /// `kmeans.k` is the number of clusters for both the temporal labels and
    /// the cluster head.
    pub kmeans: KmeansConfig,
    pub seed: u64,
    pub eval_every: usize,
    /// Keep every optimizer step in the report, not just epoch means.
    pub record_steps: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            batch_size: 256,
            learning_rate: 1e-3,
            adam: AdamConfig::default(),
            alpha: 1.0,
            beta: 1.0,
            losses: LossSet::FULL,
            sure_reduction: SureReduction::Mean,
            checkpoint: CheckpointRule::Last,
            assign_rule: AssignRule::HeadArgmax,
            model: ModelConfig::default(),
            augment: AugmentConfig::default(),
            contrast: ContrastConfig::default(),
            kmeans: KmeansConfig::default(),
            seed: 0,
            eval_every: 10,
            record_steps: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size={} must be at least 2", self.batch_size));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate={} must be >= 0", self.learning_rate));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return bad("loss weights must be >= 0".into());
        }
        if self.losses.is_empty() {
            return bad("loss set must enable at least one loss".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        self.augment.validate()?;
        self.contrast.validate()?;
        self.kmeans.validate()
    }

    pub fn k(&self) -> usize {
        self.kmeans.k
    }
}

/// Loss values for one optimizer step, or averaged over an epoch.
/// Disabled terms are recorded as 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub epoch: usize,
    pub step: usize,
    pub l_sure: f64,
    pub l_ins: f64,
    pub l_clu: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    /// Scores of the cluster-head argmax labels.
    pub ari: Option<f64>,
    pub nmi: Option<f64>,
    pub nmi_geometric: Option<f64>,
    /// Scores of k-means on the encoder features.
    pub ari_kmeans: Option<f64>,
    pub nmi_kmeans: Option<f64>,
    pub cosine_gap: CosineGap,
    /// Distinct labels produced by the head.
    pub head_clusters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub n_cells: usize,
    pub n_genes: usize,
    pub k: usize,
    pub losses: String,
    pub epochs: Vec<LossBreakdown>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub steps: Vec<LossBreakdown>,
    /// Entry e is the shrinkage loss of the parameters after epoch e,
    /// measured against the statistics frozen for epoch e.
    pub monitored_sure: Vec<f64>,
    /// Largest |loss| of fresh statistics against their own fit set.
    pub fit_identity_max: f64,
    pub evals: Vec<EvalRecord>,
    /// Epoch whose parameters were returned, per the checkpoint rule.
    pub best_epoch: usize,
    pub best_checkpoint: String,
    pub checkpoint_rule: CheckpointRule,
    /// Epoch with the lowest monitored shrinkage loss, whatever the rule.
    pub min_sure_epoch: usize,
    pub final_eval: EvalRecord,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl TrainReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `epoch,l_sure,l_ins,l_clu,total,ari,nmi,cos_gap,monitored_sure`;
    /// metric columns are empty on epochs without an evaluation.
    pub fn write_curves(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("epoch,l_sure,l_ins,l_clu,total,ari,nmi,cos_gap,monitored_sure\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for b in &self.epochs {
            let ev = self.evals.iter().find(|e| e.epoch == b.epoch);
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                b.epoch,
                b.l_sure,
                b.l_ins,
                b.l_clu,
                b.total,
                opt(ev.and_then(|e| e.ari)),
                opt(ev.and_then(|e| e.nmi)),
                opt(ev.map(|e| e.cosine_gap.gap)),
                opt(self.monitored_sure.get(b.epoch).copied()),
            ));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub struct TrainOutput {
    /// Parameters chosen by the checkpoint rule.
    pub model: Model,
    pub last_model: Model,
    pub report: TrainReport,
    /// Final labels under `cfg.assign_rule`, from `model`.
    pub assignments: Vec<usize>,
}

const TAG_INIT: u64 = 0x1000;
const TAG_EPOCH: u64 = 0x10_0000;
const TAG_FINAL: u64 = 0x20_0000;

fn epoch_rng(root: &Rng, epoch: usize) -> Rng {
    root.derive(TAG_EPOCH + epoch as u64)
}

/// Scores a model on un-augmented data. `views` are the augmented inputs
/// used for the cosine gap (query encoder on view a, key on view b).
pub fn evaluate(
    model: &Model,
    x: &Matrix,
    truth: Option<&[usize]>,
    views: (&Matrix, &Matrix),
    kmeans_cfg: &KmeansConfig,
    rng: &Rng,
    epoch: usize,
) -> Result<(EvalRecord, Vec<usize>, Vec<usize>)> {
    let (h, _, y) = model.embed(x)?;
    let head = assign_final(&y);
    let km = kmeans(&h, kmeans_cfg, &mut rng.clone())?.labels;
    let za = model.heads.project_instance(&model.encoder.query.forward(views.0)?)?;
    let zb = model.heads.project_instance(&model.encoder.key.forward(views.1)?)?;
    let gap = cosine_gap(&za, &zb)?;
    let score = |pred: &[usize], f: &dyn Fn(&[usize], &[usize]) -> Result<f64>| -> Result<Option<f64>> {
        truth.map(|t| f(pred, t)).transpose()
    };
    let mut distinct = head.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let record = EvalRecord {
        epoch,
        ari: score(&head, &|p, t| ari(p, t))?,
        nmi: score(&head, &|p, t| nmi(p, t, NmiNorm::Arithmetic))?,
        nmi_geometric: score(&head, &|p, t| nmi(p, t, NmiNorm::Geometric))?,
        ari_kmeans: score(&km, &|p, t| ari(p, t))?,
        nmi_kmeans: score(&km, &|p, t| nmi(p, t, NmiNorm::Arithmetic))?,
        cosine_gap: gap,
        head_clusters: distinct.len(),
    };
    Ok((record, head, km))
}

/// The evaluation stored as `final_eval`. Rerunning it with the training
/// data and config reproduces the report; also returns the labels under
/// `cfg.assign_rule`.
pub fn final_evaluation(
    model: &Model,
    x: &ExpressionMatrix,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(EvalRecord, Vec<usize>)> {
    let frng = Rng::new(cfg.seed).derive(TAG_FINAL);
    let (xa, xb) = augment_batch(&x.values, &cfg.augment, &frng.derive(0))?;
    let (rec, head, km) = evaluate(
        model,
        &x.values,
        x.labels.as_deref(),
        (&xa, &xb),
        &cfg.kmeans,
        &frng.derive(1),
        epoch,
    )?;
    let labels = match cfg.assign_rule {
        AssignRule::HeadArgmax => head,
        AssignRule::KmeansOnFeatures => km,
    };
    Ok((rec, labels))
}

struct Params {
    query: Vec<Var>,
    instance: Vec<Var>,
    cluster: Vec<Var>,
}

impl Params {
    fn all(&self) -> Vec<Var> {
        self.query
            .iter()
            .chain(&self.instance)
            .chain(&self.cluster)
            .copied()
            .collect()
    }
}

fn trainable_mut(model: &mut Model) -> Vec<&mut Matrix> {
    let mut out = model.encoder.query.params_mut();
    out.extend(model.heads.instance.params_mut());
    out.extend(model.heads.cluster.params_mut());
    out
}

/// Records the weighted objective for one batch. Returns the total node
/// and the unweighted component values.
#[allow(clippy::too_many_arguments)]
fn batch_objective(
    tape: &mut Tape,
    model: &Model,
    params_q: &[Var],
    params_i: &[Var],
    params_c: &[Var],
    xa: &Matrix,
    xb: &Matrix,
    labels: &[usize],
    stats: Option<&ClusterStats>,
    cfg: &TrainConfig,
) -> Result<(Var, LossBreakdown)> {
    let xa_v = tape.leaf(xa.clone())?;
    let ha = model.encoder.query.forward_tape(tape, xa_v, params_q)?;
    let hb = tape.leaf(model.encoder.key.forward(xb)?)?;
    let mut terms: Vec<Var> = Vec::new();
    let mut br = LossBreakdown {
        epoch: 0,
        step: 0,
        l_sure: 0.0,
        l_ins: 0.0,
        l_clu: 0.0,
        total: 0.0,
    };
    if cfg.losses.sure {
        if let Some(stats) = stats {
            let scale = match cfg.sure_reduction {
                SureReduction::Sum => 1.0,
                SureReduction::Mean => 1.0 / xa.rows() as f64,
            };
            let l = sure_loss_tape(tape, ha, labels, stats, scale)?;
            br.l_sure = tape.value(l)?.item()?;
            terms.push(l);
        }
    }
    if cfg.losses.ins {
        let za = model.heads.instance.forward_tape(tape, ha, params_i)?;
        let zb = model.heads.instance.forward_tape(tape, hb, params_i)?;
        let l = instance_loss_tape(tape, za, zb, &cfg.contrast)?;
        br.l_ins = tape.value(l)?.item()?;
        terms.push(tape.scale(l, cfg.alpha)?);
    }
    if cfg.losses.clu {
        let la = model.heads.cluster.forward_tape(tape, ha, params_c)?;
        let lb = model.heads.cluster.forward_tape(tape, hb, params_c)?;
        let ya = tape.softmax_rows(la)?;
        let yb = tape.softmax_rows(lb)?;
        let l = cluster_loss_tape(tape, ya, yb, &cfg.contrast)?;
        br.l_clu = tape.value(l)?.item()?;
        terms.push(tape.scale(l, cfg.beta)?);
    }
    let mut total = match terms.first() {
        Some(&t) => t,
        None => tape.leaf(Matrix::scalar(0.0))?,
    };
    for &t in terms.iter().skip(1) {
        total = tape.add(total, t)?;
    }
    br.total = total_loss(br.l_sure, br.l_ins, br.l_clu, cfg.alpha, cfg.beta);
    Ok((total, br))
}

/// Objective for one batch and its gradient with respect to every trainable
/// tensor, ordered as [`trainable_params`]. View b goes through the key
/// encoder and is treated as a constant. With `stats` unset the shrinkage
/// term is skipped.
pub fn batch_loss(
    model: &Model,
    xa: &Matrix,
    xb: &Matrix,
    labels: &[usize],
    stats: Option<&ClusterStats>,
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let params = Params {
        query: model.encoder.query.register(&mut tape)?,
        instance: model.heads.instance.register(&mut tape)?,
        cluster: model.heads.cluster.register(&mut tape)?,
    };
    let (total, br) = batch_objective(
        &mut tape,
        model,
        &params.query,
        &params.instance,
        &params.cluster,
        xa,
        xb,
        labels,
        stats,
        cfg,
    )?;
    let grads = tape.grad(total, &params.all())?;
    Ok((br, grads))
}

/// Query encoder, instance head and cluster head tensors, in that order.
pub fn trainable_params(model: &mut Model) -> Vec<&mut Matrix> {
    trainable_mut(model)
}

/// Splits a permutation into batches; a trailing batch of one sample is
/// folded into the previous batch.
fn batches(perm: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = perm.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        let tail = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(tail);
    }
    out
}

pub fn train(x: &ExpressionMatrix, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let data = &x.values;
    let (n, g) = data.shape();
    let k = cfg.k();
    if n < k || n < 2 {
        return Err(Error::InvalidArgument(format!("{n} cells cannot form {k} clusters")));
    }
    let truth = x.labels.as_deref();
    let root = Rng::new(cfg.seed);
    let mut model = Model::init(&cfg.model, g, k, &root.derive(TAG_INIT))?;
    let shapes: Vec<(usize, usize)> = trainable_mut(&mut model).iter().map(|m| m.shape()).collect();
    let mut opt = Adam::new(cfg.learning_rate, cfg.adam.clone(), &shapes);

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut steps = Vec::new();
    let mut monitored = Vec::with_capacity(cfg.epochs);
    let mut evals = Vec::new();
    let mut fit_identity_max: f64 = 0.0;
    let mut prev_stats: Option<ClusterStats> = None;
    let mut best: Option<(f64, usize, Option<Model>)> = None;
    let mut global_step = 0;

    let keep_model = cfg.checkpoint == CheckpointRule::MinSure;
    let consider = |value: f64, epoch: usize, model: &Model, best: &mut Option<(f64, usize, Option<Model>)>| {
        if best.as_ref().is_none_or(|(v, _, _)| value < *v) {
            *best = Some((value, epoch, keep_model.then(|| model.clone())));
        }
    };

    for epoch in 0..cfg.epochs {
        let erng = epoch_rng(&root, epoch);
        let ctx = move |e: Error| e.at_step(epoch, global_step);
        let (xa_full, xb_full) = augment_batch(data, &cfg.augment, &erng.derive(0)).map_err(ctx)?;
        let h_full = model.encoder.query.forward(&xa_full).map_err(ctx)?;

        if let Some(prev) = &prev_stats {
            let (v, _) = sure_loss_masked(&h_full, &prev.labels, prev).map_err(ctx)?;
            monitored.push(v);
            consider(v, epoch - 1, &model, &mut best);
        }

        let temporal = kmeans(&h_full, &cfg.kmeans, &mut erng.derive(1)).map_err(ctx)?;
        let stats = cluster_stats(&h_full, &temporal.labels, k).map_err(ctx)?;
        let (fit, _) = sure_loss_masked(&h_full, &stats.labels, &stats).map_err(ctx)?;
        fit_identity_max = fit_identity_max.max(fit.abs());

        let perm = erng.derive(2).permutation(n);
        let mut sums = [0.0f64; 3];
        let groups = batches(&perm, cfg.batch_size);
        for idx in &groups {
            let ctx = move |e: Error| e.at_step(epoch, global_step);
            let xa = xa_full.select_rows(idx);
            let xb = xb_full.select_rows(idx);
            let labels: Vec<usize> = idx.iter().map(|&i| stats.labels[i]).collect();
            let (mut br, grads) = batch_loss(&model, &xa, &xb, &labels, Some(&stats), cfg).map_err(ctx)?;
            opt.step(trainable_mut(&mut model), &grads).map_err(ctx)?;
            model.encoder.momentum_update().map_err(ctx)?;
            sums[0] += br.l_sure;
            sums[1] += br.l_ins;
            sums[2] += br.l_clu;
            br.epoch = epoch;
            br.step = global_step;
            if cfg.record_steps {
                steps.push(br);
            }
            global_step += 1;
        }
        let nb = groups.len() as f64;
        let (ls, li, lc) = (sums[0] / nb, sums[1] / nb, sums[2] / nb);
        let epoch_br = LossBreakdown {
            epoch,
            step: global_step,
            l_sure: ls,
            l_ins: li,
            l_clu: lc,
            total: total_loss(ls, li, lc, cfg.alpha, cfg.beta),
        };
        debug!(
            "epoch {epoch}: sure {ls:.4} ins {li:.4} clu {lc:.4} total {:.4}",
            epoch_br.total
        );
        epochs.push(epoch_br);

        if (epoch + 1) % cfg.eval_every == 0 {
            let (rec, _, _) = evaluate(&model, data, truth, (&xa_full, &xb_full), &cfg.kmeans, &erng.derive(3), epoch)
                .map_err(|e| e.at_step(epoch, global_step))?;
            info!(
                "epoch {epoch}: ari {:?} nmi {:?} gap {:.4}",
                rec.ari, rec.nmi, rec.cosine_gap.gap
            );
            evals.push(rec);
        }
        prev_stats = Some(stats);
    }

    // One more pass scores the parameters left by the last epoch.
    let frng = root.derive(TAG_FINAL);
    let (xa_full, _) = augment_batch(data, &cfg.augment, &frng.derive(0))?;
    let h_full = model.encoder.query.forward(&xa_full)?;
    let prev = prev_stats.expect("at least one epoch");
    let (v, _) = sure_loss_masked(&h_full, &prev.labels, &prev)?;
    monitored.push(v);
    consider(v, cfg.epochs - 1, &model, &mut best);

    let (_, min_sure_epoch, min_sure_model) = best.expect("at least one candidate");
    let (best_epoch, best_model) = match cfg.checkpoint {
        CheckpointRule::MinSure => (min_sure_epoch, min_sure_model.expect("kept under min-sure")),
        CheckpointRule::Last => (cfg.epochs - 1, model.clone()),
    };
    let (final_eval, assignments) = final_evaluation(&best_model, x, cfg, best_epoch)?;
    let report = TrainReport {
        seed: cfg.seed,
        n_cells: n,
        n_genes: g,
        k,
        losses: cfg.losses.name(),
        epochs,
        steps,
        monitored_sure: monitored,
        fit_identity_max,
        evals,
        best_epoch,
        best_checkpoint: format!("epoch-{best_epoch}"),
        checkpoint_rule: cfg.checkpoint,
        min_sure_epoch,
        final_eval,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok(TrainOutput {
        model: best_model,
        last_model: model,
        report,
        assignments,
    })
}
