//! Command-line front end. Settings resolve as flags > `--config` file >
//! built-in defaults.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::clusterer::{AssignRule, KmeansConfig};
use crate::contrastive::ContrastConfig;
use crate::dataio::{
    downsample, load_csv, load_labels_csv, load_matrix_market, preprocess, synth, write_csv, write_labels_csv,
    CsvOptions, DownsampleMode, ExpressionMatrix, PreprocessConfig, SynthConfig,
};
use crate::encoder::{Checkpoint, ModelConfig};
use crate::error::{Error, Result};
use crate::ndmath::Rng;
use crate::shrinkage::{risk_bench, RiskBenchConfig, RiskReport};
use crate::trainer::{
    ablate, downsample_robustness, final_evaluation, noise_toggle_experiment, train, AdamConfig, CheckpointRule,
    LossSet, SureReduction, TrainConfig,
};

pub const THREADS_ENV: &str = "SHRINKCL_THREADS";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// CSV/TSV table, or a `.mtx` file (then `genes` and `cells` are required).
    pub path: Option<PathBuf>,
    /// Optional `cell,label` file.
    pub labels: Option<PathBuf>,
    pub genes: Option<PathBuf>,
    pub cells: Option<PathBuf>,
    pub delimiter: Option<char>,
    pub label_column: Option<String>,
    pub allow_negative: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub enabled: LossSet,
    pub alpha: f64,
    pub beta: f64,
    pub sure_reduction: SureReduction,
    pub contrast: ContrastConfig,
}

impl Default for LossSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            enabled: t.losses,
            alpha: t.alpha,
            beta: t.beta,
            sure_reduction: t.sure_reduction,
            contrast: t.contrast,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub eval_every: usize,
    pub checkpoint: CheckpointRule,
    pub assign_rule: AssignRule,
    pub record_steps: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            adam: t.adam,
            seed: t.seed,
            eval_every: t.eval_every,
            checkpoint: t.checkpoint,
            assign_rule: t.assign_rule,
            record_steps: t.record_steps,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// JSON configuration file. Every field is optional; unknown keys are errors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub data: DataSection,
    pub preprocess: PreprocessConfig,
    pub augment: AugmentConfig,
    pub model: ModelConfig,
    pub losses: LossSection,
    pub kmeans: KmeansConfig,
    pub train: TrainSection,
    pub output: OutputSection,
}

impl CliConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            adam: self.train.adam.clone(),
            alpha: self.losses.alpha,
            beta: self.losses.beta,
            losses: self.losses.enabled,
            sure_reduction: self.losses.sure_reduction,
            checkpoint: self.train.checkpoint,
            assign_rule: self.train.assign_rule,
            model: self.model.clone(),
            augment: self.augment.clone(),
            contrast: self.losses.contrast.clone(),
            kmeans: self.kmeans.clone(),
            seed: self.train.seed,
            eval_every: self.train.eval_every,
            record_steps: self.train.record_steps,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "shrinkcl",
    version,
    about = "Shrinkage-regularized contrastive clustering",
    long_about = "Shrinkage-regularized contrastive clustering.\n\n\
        Settings resolve as: command-line flags > --config JSON file > built-in defaults.\n\
        The SHRINKCL_THREADS environment variable caps worker threads."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate Gaussian-blob data with dropout.
    Synth(SynthArgs),
    /// Normalize, log-transform, select genes and standardize a matrix.
    Preprocess(PreprocessArgs),
    /// Train a model and write checkpoint, report, curves and assignments.
    Train(TrainArgs),
    /// Score a checkpoint on data.
    Eval(EvalArgs),
    /// Monte-Carlo risk of MLE, James-Stein and MAP estimators.
    BenchEstimators(BenchArgs),
    /// Train several loss combinations (or the noise on/off pair) with shared seeds.
    Ablate(AblateArgs),
    /// Downsample cells, or run the downsampling robustness study.
    Downsample(DownsampleArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    pub cells: usize,
    #[arg(long, default_value_t = 200)]
    pub genes: usize,
    #[arg(long, default_value_t = 5)]
    pub clusters: usize,
    #[arg(long, default_value_t = 1.0)]
    pub centroid_scale: f64,
    #[arg(long, default_value_t = 0.3)]
    pub within_std: f64,
    #[arg(long, default_value_t = 0.3)]
    pub dropout: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; receives matrix.csv and labels.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, Default)]
pub struct DataArgs {
    /// JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Expression table (CSV/TSV) or MatrixMarket `.mtx`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `cell,label` file.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Gene ids for `.mtx` input.
    #[arg(long)]
    pub genes: Option<PathBuf>,
    /// Cell ids for `.mtx` input.
    #[arg(long)]
    pub cells: Option<PathBuf>,
    /// Accept negative entries (already-transformed data).
    #[arg(long)]
    pub allow_negative: bool,
    /// Preprocessing preset overriding the config: full, standardize or none.
    #[arg(long)]
    pub preprocess: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub top_genes: Option<usize>,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Number of clusters K.
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Loss terms, e.g. `sure,ins,clu`, `ins`, `full`.
    #[arg(long)]
    pub loss_set: Option<String>,
    /// Disable Gaussian noise in the augmentation.
    #[arg(long)]
    pub no_noise: bool,
    /// `last` or `min-sure`.
    #[arg(long)]
    pub checkpoint: Option<String>,
    #[arg(long)]
    pub eval_every: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Write the evaluation JSON here as well as printing it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Monte-Carlo trials per grid point (minimum 1000).
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Loss sets separated by `;`, e.g. `full;ins;ins,clu`.
    #[arg(long, default_value = "full;ins,clu;ins")]
    pub variants: String,
    /// Comma-separated seeds; defaults to the config seed.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Run the noise on/off pair instead of loss variants.
    #[arg(long)]
    pub noise_toggle: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DownsampleArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Fraction of cells removed.
    #[arg(long, default_value_t = 0.5)]
    pub rate: f64,
    /// `random` or `stratified`.
    #[arg(long, default_value = "stratified")]
    pub mode: String,
    /// Train on the full data and on each of these rates (comma-separated)
    /// instead of writing one downsampled matrix.
    #[arg(long)]
    pub robustness: Option<String>,
    /// Comma-separated seeds for the robustness study.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Output CSV, or JSON report with `--robustness`.
    #[arg(long)]
    pub out: PathBuf,
}

/// Caps the global rayon pool when `SHRINKCL_THREADS` is set.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidConfig(format!("{THREADS_ENV}={v:?} must be a positive integer")))?;
    if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
        warn!("thread pool already initialized; {THREADS_ENV} ignored");
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| Error::InvalidArgument(format!("bad {what} {t:?}")))
        })
        .collect()
}

fn preset(name: &str) -> Result<PreprocessConfig> {
    match name {
        "full" => Ok(PreprocessConfig::default()),
        "standardize" => Ok(PreprocessConfig::standardize_only()),
        "none" => Ok(PreprocessConfig::none()),
        other => Err(Error::InvalidArgument(format!(
            "unknown preprocessing preset {other:?} (full|standardize|none)"
        ))),
    }
}

/// Resolves the configuration: file (if any), then flag overrides.
pub fn resolve_config(data: &DataArgs, flags: Option<&TrainFlags>) -> Result<CliConfig> {
    let mut cfg = match &data.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    let d = &mut cfg.data;
    if data.data.is_some() {
        d.path = data.data.clone();
    }
    if data.labels.is_some() {
        d.labels = data.labels.clone();
    }
    if data.genes.is_some() {
        d.genes = data.genes.clone();
    }
    if data.cells.is_some() {
        d.cells = data.cells.clone();
    }
    d.allow_negative |= data.allow_negative;
    if let Some(p) = &data.preprocess {
        cfg.preprocess = preset(p)?;
    }
    if let Some(s) = data.seed {
        cfg.train.seed = s;
    }
    if let Some(f) = flags {
        apply_train_flags(&mut cfg, f)?;
    }
    Ok(cfg)
}

fn apply_train_flags(cfg: &mut CliConfig, f: &TrainFlags) -> Result<()> {
    if let Some(v) = f.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = f.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = f.lr {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = f.clusters {
        cfg.kmeans.k = v;
    }
    if let Some(v) = f.alpha {
        cfg.losses.alpha = v;
    }
    if let Some(v) = f.beta {
        cfg.losses.beta = v;
    }
    if let Some(v) = &f.loss_set {
        cfg.losses.enabled = v.parse()?;
    }
    if f.no_noise {
        cfg.augment.noise_enabled = false;
    }
    if let Some(v) = &f.checkpoint {
        cfg.train.checkpoint = v.parse()?;
    }
    if let Some(v) = f.eval_every {
        cfg.train.eval_every = v;
    }
    Ok(())
}

/// Attaches labels from a `cell,label` file by cell id.
fn attach_labels(x: &mut ExpressionMatrix, path: &Path) -> Result<()> {
    let (cells, labels, names) = load_labels_csv(path)?;
    let map: std::collections::HashMap<&str, usize> =
        cells.iter().map(String::as_str).zip(labels.iter().copied()).collect();
    let mut out = Vec::with_capacity(x.n_cells());
    for id in &x.cell_ids {
        match map.get(id.as_str()) {
            Some(&l) => out.push(l),
            None => {
                return Err(Error::InvalidArgument(format!(
                    "cell {id:?} has no entry in {}",
                    path.display()
                )))
            }
        }
    }
    if x.labels.is_some() {
        warn!("labels from {} replace the inline label column", path.display());
    }
    x.labels = Some(out);
    x.label_names = names;
    Ok(())
}

/// Loads the raw matrix described by the data section.
pub fn load_data(d: &DataSection) -> Result<ExpressionMatrix> {
    let path = d
        .path
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("no input data (use --data or data.path)".into()))?;
    let is_mtx = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("mtx"));
    if is_mtx {
        let (genes, cells) = match (&d.genes, &d.cells) {
            (Some(g), Some(c)) => (g, c),
            _ => return Err(Error::InvalidConfig("MatrixMarket input needs --genes and --cells".into())),
        };
        return load_matrix_market(path, genes, cells, d.labels.as_deref());
    }
    let opts = CsvOptions {
        delimiter: d.delimiter.map(|c| c as u8),
        label_column: d.label_column.clone().unwrap_or_else(|| "label".into()),
        allow_negative: d.allow_negative,
    };
    let mut x = load_csv(path, &opts)?;
    if let Some(l) = &d.labels {
        attach_labels(&mut x, l)?;
    }
    Ok(x)
}

fn load_prepared(cfg: &CliConfig) -> Result<ExpressionMatrix> {
    let raw = load_data(&cfg.data)?;
    info!("loaded {} cells x {} genes", raw.n_cells(), raw.n_genes());
    preprocess(&raw, &cfg.preprocess)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_cells: a.cells,
        n_genes: a.genes,
        n_clusters: a.clusters,
        centroid_scale: a.centroid_scale,
        within_std: a.within_std,
        dropout_rate: a.dropout,
        cluster_weights: None,
    };
    let x = synth(&cfg, &mut Rng::new(a.seed))?;
    ensure_dir(&a.out)?;
    write_csv(a.out.join("matrix.csv"), &x, false)?;
    write_labels_csv(a.out.join("labels.csv"), &x)?;
    println!(
        "wrote {} cells x {} genes, {} clusters to {}",
        x.n_cells(),
        x.n_genes(),
        a.clusters,
        a.out.display()
    );
    Ok(())
}

fn cmd_preprocess(a: &PreprocessArgs) -> Result<()> {
    let mut cfg = resolve_config(&a.data, None)?;
    if a.top_genes.is_some() {
        cfg.preprocess.n_top_genes = a.top_genes;
    }
    let x = load_prepared(&cfg)?;
    write_csv(&a.out, &x, true)?;
    println!("wrote {} cells x {} genes to {}", x.n_cells(), x.n_genes(), a.out.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = resolve_config(&a.data, Some(&a.flags))?;
    if a.out.is_some() {
        cfg.output.dir = a.out.clone();
    }
    let dir = cfg
        .output
        .dir
        .clone()
        .ok_or_else(|| Error::InvalidConfig("no output directory (use --out or output.dir)".into()))?;
    let tcfg = cfg.train_config();
    tcfg.validate()?;
    let x = load_prepared(&cfg)?;
    let start = Instant::now();
    let out = train(&x, &tcfg)?;
    ensure_dir(&dir)?;
    Checkpoint::new(out.model.clone(), out.report.best_epoch, x.gene_ids.clone()).save(dir.join("checkpoint.json"))?;
    write_text(&dir.join("report.json"), &out.report.to_json()?)?;
    out.report.write_curves(dir.join("curves.csv"))?;
    let mut assign = String::from("cell,cluster\n");
    for (id, c) in x.cell_ids.iter().zip(&out.assignments) {
        assign.push_str(&format!("{id},{c}\n"));
    }
    write_text(&dir.join("assignments.csv"), &assign)?;
    write_text(&dir.join("config.json"), &cfg.to_json()?)?;
    let f = &out.report.final_eval;
    println!(
        "trained {} epochs on {} cells ({} losses) in {:.1}s; checkpoint epoch {}",
        tcfg.epochs,
        x.n_cells(),
        tcfg.losses.name(),
        start.elapsed().as_secs_f64(),
        out.report.best_epoch
    );
    println!(
        "ARI {} NMI {} | k-means ARI {} NMI {} | cosine gap {:.4}",
        fmt_opt(f.ari),
        fmt_opt(f.nmi),
        fmt_opt(f.ari_kmeans),
        fmt_opt(f.nmi_kmeans),
        f.cosine_gap.gap
    );
    println!("outputs in {}", dir.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let mut data = a.data.clone();
    // Fall back to the settings saved next to the checkpoint; its data paths
    // are not reused.
    let mut fallback = false;
    if data.config.is_none() {
        let saved = a.checkpoint.with_file_name("config.json");
        if saved.exists() {
            info!("using settings from {}", saved.display());
            data.config = Some(saved);
            fallback = true;
        }
    }
    let mut cfg = resolve_config(&data, None)?;
    if fallback {
        cfg.data.path = a.data.data.clone();
        cfg.data.labels = a.data.labels.clone();
        cfg.data.genes = a.data.genes.clone();
        cfg.data.cells = a.data.cells.clone();
    }
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let x = load_prepared(&cfg)?;
    if x.gene_ids != ckpt.gene_ids {
        return Err(Error::InvalidArgument(format!(
            "data genes do not match the checkpoint ({} vs {} genes after preprocessing)",
            x.n_genes(),
            ckpt.gene_ids.len()
        )));
    }
    let tcfg = cfg.train_config();
    let (rec, _) = final_evaluation(&ckpt.model, &x, &tcfg, ckpt.epoch)?;
    if x.labels.is_none() {
        eprintln!("no labels given: ARI and NMI omitted");
    }
    let json = serde_json::to_string_pretty(&rec)?;
    println!("{json}");
    if let Some(p) = &a.out {
        write_text(p, &json)?;
    }
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let grid = RiskBenchConfig::default_grid(a.trials);
    for g in &grid {
        g.validate()?;
    }
    let root = Rng::new(a.seed);
    let mut reports: Vec<RiskReport> = Vec::with_capacity(grid.len());
    for (i, g) in grid.iter().enumerate() {
        reports.push(risk_bench(g, &mut root.derive(i as u64))?);
    }
    println!("{:>4} {:>6} {:>7} {:>7}  estimator             empirical   closed-form", "P", "sigma", "tau", "|theta|");
    for r in &reports {
        let c = &r.config;
        for (name, e) in &r.estimators {
            println!(
                "{:>4} {:>6} {:>7} {:>7}  {:<20} {:>10.4} {:>12}",
                c.p,
                c.sigma,
                c.tau.map_or("-".into(), |t| t.to_string()),
                c.theta_norm.map_or("-".into(), |t| t.to_string()),
                name,
                e.empirical_mse,
                e.closed_form.map_or("-".into(), |v| format!("{v:.4}"))
            );
        }
    }
    let json = serde_json::to_string_pretty(&reports)?;
    if let Some(p) = &a.out {
        write_text(p, &json)?;
        println!("report written to {}", p.display());
    }
    Ok(())
}

fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    let cfg = resolve_config(&a.data, Some(&a.flags))?;
    let tcfg = cfg.train_config();
    tcfg.validate()?;
    let seeds: Vec<u64> = match &a.seeds {
        Some(s) => parse_list(s, "seed")?,
        None => vec![tcfg.seed],
    };
    let x = load_prepared(&cfg)?;
    let dataset = cfg
        .data
        .path
        .as_deref()
        .and_then(Path::file_stem)
        .map_or_else(|| "data".to_string(), |s| s.to_string_lossy().into_owned());
    let json = if a.noise_toggle {
        let mut reports = Vec::new();
        for &seed in &seeds {
            let r = noise_toggle_experiment(&x, &TrainConfig { seed, ..tcfg.clone() }, &dataset)?;
            println!(
                "{dataset} seed {seed}: NMI with noise {:.4}, without {:.4}, difference {:+.4}",
                r.with, r.without, r.difference
            );
            reports.push(r);
        }
        serde_json::to_string_pretty(&reports)?
    } else {
        let variants: Vec<LossSet> = a
            .variants
            .split(';')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?;
        let table = ablate(&x, &tcfg, &variants, &seeds)?;
        println!("{:<14} {:>5} {:>8} {:>8} {:>10} {:>10}", "losses", "seed", "ARI", "NMI", "gap mean", "gap var");
        for r in &table.rows {
            println!(
                "{:<14} {:>5} {:>8} {:>8} {:>10.4} {:>10.2e}",
                r.losses,
                r.seed,
                fmt_opt(r.ari),
                fmt_opt(r.nmi),
                r.cos_gap_mean,
                r.cos_gap_var
            );
        }
        serde_json::to_string_pretty(&table)?
    };
    if let Some(p) = &a.out {
        write_text(p, &json)?;
    }
    Ok(())
}

fn cmd_downsample(a: &DownsampleArgs) -> Result<()> {
    let cfg = resolve_config(&a.data, Some(&a.flags))?;
    let mode: DownsampleMode = a.mode.parse()?;
    match &a.robustness {
        None => {
            let x = load_data(&cfg.data)?;
            let sub = downsample(&x, a.rate, mode, &mut Rng::new(cfg.train.seed))?;
            write_csv(&a.out, &sub, true)?;
            println!("kept {} of {} cells ({mode})", sub.n_cells(), x.n_cells());
        }
        Some(rates) => {
            let rates: Vec<f64> = parse_list(rates, "rate")?;
            let tcfg = cfg.train_config();
            tcfg.validate()?;
            let seeds: Vec<u64> = match &a.seeds {
                Some(s) => parse_list(s, "seed")?,
                None => vec![tcfg.seed],
            };
            let x = load_prepared(&cfg)?;
            let r = downsample_robustness(&x, &tcfg, &rates, mode, &seeds, &[])?;
            for s in &r.summary {
                println!(
                    "rate {:.2}: median NMI {:.4} (degradation {:+.4})",
                    s.rate, s.median_nmi, s.degradation
                );
            }
            write_text(&a.out, &serde_json::to_string_pretty(&r)?)?;
        }
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    init_threads()?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::BenchEstimators(a) => cmd_bench(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Downsample(a) => cmd_downsample(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips() {
        let mut cfg = CliConfig::default();
        cfg.train.epochs = 7;
        cfg.losses.enabled = "ins".parse().unwrap();
        cfg.data.path = Some("x.csv".into());
        let text = cfg.to_json().unwrap();
        let back = CliConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn partial_config_uses_defaults() {
        let cfg = CliConfig::from_json(r#"{"train": {"epochs": 3}, "kmeans": {"k": 4}}"#).unwrap();
        let t = cfg.train_config();
        assert_eq!(t.epochs, 3);
        assert_eq!(t.k(), 4);
        assert_eq!(t.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(CliConfig::from_json(r#"{"train": {"epoch": 3}}"#).is_err());
        assert!(CliConfig::from_json(r#"{"extra": {}}"#).is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"train": {"epochs": 3, "seed": 5}, "augment": {"noise_enabled": true}}"#).unwrap();
        let data = DataArgs {
            config: Some(p),
            seed: Some(9),
            ..DataArgs::default()
        };
        let flags = TrainFlags {
            epochs: Some(11),
            no_noise: true,
            loss_set: Some("ins".into()),
            ..TrainFlags::default()
        };
        let cfg = resolve_config(&data, Some(&flags)).unwrap();
        assert_eq!(cfg.train.epochs, 11);
        assert_eq!(cfg.train.seed, 9);
        assert!(!cfg.augment.noise_enabled);
        assert_eq!(cfg.losses.enabled.name(), "ins");
    }

    #[test]
    fn list_parsing() {
        assert_eq!(parse_list::<u64>("1, 2,3", "seed").unwrap(), vec![1, 2, 3]);
        assert!(parse_list::<f64>("0.2,x", "rate").is_err());
    }
}
