use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use clap::{Args, ValueEnum};
use debias_core::bias::{
    build_environments, build_trap_split, correlation_report, random_split, CorrelationReport, TrapSplit,
    DEFAULT_SWAP_BUDGET,
};
use debias_core::dataset::{generate_synthetic, load_manifest, read_rgb, DatasetManifest, SyntheticConfig};
use debias_core::eval::{
    correlation_html, evaluate_external, render_report, run_trap_sweep, saliency_overlay, scorecam, Arm, EvalReport,
    ExternalConfig, ReportInputs, SaliencyItem, SaliencyMap, SweepConfig, SweepResult,
};
use debias_core::nn::{image_to_input, load_model, positive_probability, Classifier, Tensor4};
use debias_core::noisecrop::{batch_noisecrop, NoiseCropConfig};
use debias_core::training::{grid_search, train as train_model, GridSpec, Method, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::context::{sha256_file, Context, UsageError};

const CACHE_ENV: &str = "DEBIAS_LAB_CACHE";

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn require(path: &Option<PathBuf>, flag: &str) -> anyhow::Result<PathBuf> {
    path.clone()
        .ok_or_else(|| usage(format!("{flag} is required (flag or config)")))
}

fn open_manifest(ctx: &mut Context, path: &Path) -> anyhow::Result<DatasetManifest> {
    ctx.record_input(path)?;
    Ok(load_manifest(path)?)
}

fn open_split(ctx: &mut Context, path: &Path) -> anyhow::Result<TrapSplit> {
    ctx.record_input(path)?;
    let text = fs::read_to_string(path)?;
    Ok(TrapSplit::from_json(&text)?)
}

fn write(ctx: &mut Context, path: PathBuf, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    ctx.record_output(path);
    Ok(())
}

fn json<T: Serialize>(value: &T) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn override_opt<T: Clone>(slot: &mut T, flag: &Option<T>) {
    if let Some(v) = flag {
        *slot = v.clone();
    }
}

// synth

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Seven artifacts with a real-data-like correlation pattern.
    Default,
    /// Dark corners, hair and rulers at |correlation| 0.5.
    ThreeTargeted,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of samples.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    image_size: Option<u32>,
    /// Lesion severity separation between classes.
    #[arg(long)]
    strength: Option<f64>,
    #[arg(long)]
    name: Option<String>,
}

pub fn synth(args: &SynthArgs, ctx: &mut Context) -> anyhow::Result<()> {
    let out = ctx.out_dir("data");
    ctx.set_run_dir(&out);
    let from_file: Option<SyntheticConfig> = ctx.config_file()?;
    let mut config = match (from_file, args.preset) {
        (Some(_), Some(_)) => return Err(usage("--preset and --config are mutually exclusive")),
        (Some(c), None) => c,
        (None, preset) => {
            let n = args.n.unwrap_or(2000);
            match preset.unwrap_or(Preset::Default) {
                Preset::Default => SyntheticConfig::with_defaults(n, 0),
                Preset::ThreeTargeted => SyntheticConfig::three_targeted(n, 0),
            }
        }
    };
    override_opt(&mut config.n_samples, &args.n);
    override_opt(&mut config.image_size, &args.image_size);
    override_opt(&mut config.lesion_strength, &args.strength);
    override_opt(&mut config.name, &args.name);
    override_opt(&mut config.seed, &ctx.seed);
    ctx.record_settings(&config, &out)?;
    let manifest = generate_synthetic(&config, &out)?;
    ctx.record_output(out.join("manifest.csv"));
    println!("wrote {} samples to {}", manifest.len(), out.display());
    Ok(())
}

// audit

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSettings {
    pub manifest: Option<PathBuf>,
    pub split: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AuditArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Trap split JSON; adds train and test rows.
    #[arg(long)]
    split: Option<PathBuf>,
}

fn write_correlations(ctx: &mut Context, report: &CorrelationReport, out: &Path) -> anyhow::Result<()> {
    write(ctx, out.join("correlations.csv"), report.to_csv())?;
    write(ctx, out.join("correlations.json"), json(report)?)?;
    write(ctx, out.join("correlations.html"), correlation_html(report))
}

pub fn audit(args: &AuditArgs, ctx: &mut Context) -> anyhow::Result<()> {
    let out = ctx.out_dir("audit");
    ctx.set_run_dir(&out);
    let mut s: AuditSettings = ctx.settings()?;
    if args.manifest.is_some() {
        s.manifest = args.manifest.clone();
    }
    if args.split.is_some() {
        s.split = args.split.clone();
    }
    ctx.record_settings(&s, &out)?;
    let manifest = open_manifest(ctx, &require(&s.manifest, "--manifest")?)?;
    let all = manifest.ids();
    let split = s.split.as_ref().map(|p| open_split(ctx, p)).transpose()?;
    let mut sets: Vec<(&str, &[String])> = vec![("all", &all)];
    if let Some(sp) = &split {
        sets.push(("train", &sp.train_ids));
        sets.push(("test", &sp.test_ids));
    }
    let report = correlation_report(&manifest, &sets)?;
    write_correlations(ctx, &report, &out)?;
    print!("{}", report.to_csv());
    Ok(())
}

// split

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub manifest: Option<PathBuf>,
    pub factor: f64,
    pub test_fraction: f64,
    pub swap_budget: usize,
    /// Plain stratified random split instead of a trap split.
    pub random: bool,
    pub seed: u64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        Self {
            manifest: None,
            factor: 1.0,
            test_fraction: 0.2,
            swap_budget: DEFAULT_SWAP_BUDGET,
            random: false,
            seed: 0,
        }
    }
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Bias factor in [0, 1].
    #[arg(long)]
    factor: Option<f64>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    swap_budget: Option<usize>,
    #[arg(long)]
    random: bool,
}

pub fn split(args: &SplitArgs, ctx: &mut Context) -> anyhow::Result<()> {
    let out = ctx.out_dir("splits");
    ctx.set_run_dir(&out);
    let mut s: SplitSettings = ctx.settings()?;
    if args.manifest.is_some() {
        s.manifest = args.manifest.clone();
    }
    override_opt(&mut s.factor, &args.factor);
    override_opt(&mut s.test_fraction, &args.test_fraction);
    override_opt(&mut s.swap_budget, &args.swap_budget);
    s.random |= args.random;
    override_opt(&mut s.seed, &ctx.seed);
    ctx.record_settings(&s, &out)?;
    let manifest = open_manifest(ctx, &require(&s.manifest, "--manifest")?)?;
    if s.random {
        let (train_ids, test_ids) = random_split(&manifest, s.test_fraction, s.seed);
        let report = correlation_report(&manifest, &[("train", &train_ids), ("test", &test_ids)])?;
        write(
            ctx,
            out.join("split.json"),
            json(&serde_json::json!({
                "factor": null,
                "seed": s.seed,
                "test_fraction": s.test_fraction,
                "train_ids": train_ids,
                "test_ids": test_ids,
                "correlations": report,
            }))?,
        )?;
        write_correlations(ctx, &report, &out)?;
        return Ok(());
    }
    let split = build_trap_split(&manifest, s.factor, s.test_fraction, s.seed, s.swap_budget)?;
    write(ctx, out.join("split.json"), split.to_json()?)?;
    write_correlations(ctx, &split.correlations, &out)?;
    println!(
        "factor {}: {} train / {} test, objective {:.4}",
        split.factor,
        split.train_ids.len(),
        split.test_ids.len(),
        split.objective
    );
    print!("{}", split.correlations.to_csv());
    Ok(())
}

// envs

#[derive(Args, Debug)]
pub struct EnvsArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Split whose training ids are partitioned; all ids without it.
    #[arg(long)]
    split: Option<PathBuf>,
}

pub fn envs(args: &EnvsArgs, ctx: &mut Context) -> anyhow::Result<()> {
    let out = ctx.out_dir("envs");
    ctx.set_run_dir(&out);
    let mut s: AuditSettings = ctx.settings()?;
    if args.manifest.is_some() {
        s.manifest = args.manifest.clone();
    }
    if args.split.is_some() {
        s.split = args.split.clone();
    }
    ctx.record_settings(&s, &out)?;
    let manifest = open_manifest(ctx, &require(&s.manifest, "--manifest")?)?;
    let ids = match &s.split {
        Some(p) => open_split(ctx, p)?.train_ids,
        None => manifest.ids(),
    };
    let partition = build_environments(&manifest, &ids)?;
    write(ctx, out.join("environments.json"), partition.to_json()?)?;
    write(ctx, out.join("environment_sizes.csv"), partition.sizes_csv())?;
    println!(
        "{} non-empty environments over {} samples",
        partition.len(),
        partition.total()
    );
    Ok(())
}

// train

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub manifest: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub train: TrainConfig,
    /// Grid search before the final fit when present.
    pub grid: Option<GridSpec>,
    /// Select hyperparameters on trap-test AUC (privileged).
    pub oracle: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GridPreset {
    /// Three learning rates, four weight decays, two runs each.
    Reference,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Split JSON; trains on its training ids.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    weight_decay: Option<f32>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// GroupDRO generalization adjustment C.
    #[arg(long)]
    adjustment: Option<f64>,
    #[arg(long, value_enum)]
    grid: Option<GridPreset>,
    /// Select on test AUC; the result is flagged as privileged.
    #[arg(long)]
    oracle: bool,
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).ok_or_else(|| format!("unknown method `{s}` (expected erm, groupdro or rsc)"))
}

pub fn train(args: &TrainArgs, ctx: &mut Context) -> anyhow::Result<()> {
    let out = ctx.out_dir("train");
    ctx.set_run_dir(&out);
    let mut s: TrainSettings = ctx.settings()?;
    if args.manifest.is_some() {
        s.manifest = args.manifest.clone();
    }
    if args.split.is_some() {
        s.split = args.split.clone();
    }
    let t = &mut s.train;
    override_opt(&mut t.method, &args.method);
    override_opt(&mut t.learning_rate, &args.lr);
    override_opt(&mut t.weight_decay, &args.weight_decay);
    override_opt(&mut t.max_epochs, &args.epochs);
    override_opt(&mut t.patience, &args.patience);
    override_opt(&mut t.batch_size, &args.batch_size);
    override_opt(&mut t.adjustment, &args.adjustment);
    override_opt(&mut t.seed, &ctx.seed);
    if args.grid == Some(GridPreset::Reference) {
        s.grid = Some(GridSpec::reference());
    }
    s.oracle |= args.oracle;
    ctx.record_settings(&s, &out)?;

    let manifest = open_manifest(ctx, &require(&s.manifest, "--manifest")?)?;
    let split = s.split.as_ref().map(|p| open_split(ctx, p)).transpose()?;
    let train_ids = match &split {
        Some(sp) => sp.train_ids.clone(),
        None => manifest.ids(),
    };
    if s.oracle && (split.is_none() || s.grid.is_none()) {
        return Err(usage("--oracle needs --split and a grid"));
    }
    let envs = build_environments(&manifest, &train_ids)?;
    let mut config = s.train.clone();
    if let Some(spec) = &s.grid {
        let oracle_ids = if s.oracle {
            split.as_ref().map(|sp| sp.test_ids.as_slice())
        } else {
            None
        };
        let result = grid_search(
            &manifest,
            &train_ids,
            Some(&envs),
            &config,
            spec,
            oracle_ids,
            Some(&out.join("grid")),
        )?;
        write(ctx, out.join("grid.json"), json(&result)?)?;
        if result.privileged {
            eprintln!("note: hyperparameters were selected with privileged test information");
        }
        config = result.best;
    }
    let run = train_model(&manifest, &train_ids, Some(&envs), &config, Some(&out))?;
    for name in ["model.bin", "run.json", "metrics.jsonl"] {
        ctx.record_output(out.join(name));
    }
    println!(
        "{}: best validation AUC {:.4} at epoch {} ({} epochs{})",
        config.method,
        run.best_val_auc,
        run.best_epoch,
        run.epochs_run,
        if run.early_stopped { ", early stop" } else { "" }
    );
    Ok(())
}

// noisecrop

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseCropSettings {
    pub manifest: Option<PathBuf>,
    pub noisecrop: NoiseCropConfig,
}

#[derive(Args, Debug)]
pub struct NoiseCropArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Side of the square output canvas.
    #[arg(long)]
    output_size: Option<u32>,
}

pub fn noisecrop(args: &NoiseCropArgs, ctx: &mut Context) -> anyhow::Result<()> {
    let out = ctx.out_dir("noisecrop");
    ctx.set_run_dir(&out);
    let mut s: NoiseCropSettings = ctx.settings()?;
    if args.manifest.is_some() {
        s.manifest = args.manifest.clone();
    }
    override_opt(&mut s.noisecrop.output_size, &args.output_size);
    override_opt(&mut s.noisecrop.seed, &ctx.seed);
    ctx.record_settings(&s, &out)?;
    let manifest = open_manifest(ctx, &require(&s.manifest, "--manifest")?)?;
    let result = batch_noisecrop(&manifest, &s.noisecrop, &out)?;
    ctx.record_output(out.join("manifest.csv"));
    ctx.record_output(out.join("noisecrop_summary.json"));
    let sum = &result.summary;
    println!(
        "censored {} images ({} ground-truth masks, {} fallback, {} low confidence, {} failed)",
        sum.transformed,
        sum.ground_truth_masks,
        sum.fallback_masks,
        sum.low_confidence,
        sum.failures.len()
    );
    for f in &sum.failures {
        eprintln!("failed: {}: {}", f.id, f.error);
    }
    Ok(())
}

// eval

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub manifest: Option<PathBuf>,
    /// Evaluate on the test ids of this split.
    pub split: Option<PathBuf>,
    pub models: Vec<PathBuf>,
    pub eval: ExternalConfig,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    split: Option<PathBuf>,
    /// Model container(s); repeat for several seeds.
    #[arg(long = "model")]
    models: Vec<PathBuf>,
    /// Censor images with NoiseCrop before prediction.
    #[arg(long)]
    noisecrop: bool,
    /// NoiseCrop canvas side (default: the image size).
    #[arg(long)]
    output_size: Option<u32>,
    #[arg(long)]
    replicas: Option<usize>,
}

fn cache_dir(out: &Path) -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| out.join("cache"))
}

pub fn eval(args: &EvalArgs, ctx: &mut Context) -> anyhow::Result<()> {
    let out = ctx.out_dir("eval");
    ctx.set_run_dir(&out);
    let mut s: EvalSettings = ctx.settings()?;
    if args.manifest.is_some() {
        s.manifest = args.manifest.clone();
    }
    if args.split.is_some() {
        s.split = args.split.clone();
    }
    if !args.models.is_empty() {
        s.models = args.models.clone();
    }
    override_opt(&mut s.eval.tta_replicas, &args.replicas);
    override_opt(&mut s.eval.seed, &ctx.seed);

    let manifest_path = require(&s.manifest, "--manifest")?;
    let mut manifest = open_manifest(ctx, &manifest_path)?;
    if args.noisecrop || args.output_size.is_some() {
        let nc = s.eval.noisecrop.get_or_insert_with(|| {
            let first = manifest.image_path(&manifest.records[0]);
            let size = read_rgb(&first).map(|img| img.width().max(img.height())).unwrap_or(224);
            NoiseCropConfig {
                output_size: size,
                ..NoiseCropConfig::default()
            }
        });
        override_opt(&mut nc.output_size, &args.output_size);
        nc.seed = s.eval.seed;
    }
    ctx.record_settings(&s, &out)?;
    if s.models.is_empty() {
        return Err(usage("at least one --model is required"));
    }
    if let Some(p) = &s.split {
        let split = open_split(ctx, p)?;
        let positions = manifest.positions(&split.test_ids)?;
        manifest = manifest.subset(format!("{}-test", manifest.name), &positions)?;
    }
    let mut models = Vec::with_capacity(s.models.len());
    for p in &s.models {
        ctx.record_input(p)?;
        models.push(load_model(p)?.0);
    }
    let nc_dir = match &s.eval.noisecrop {
        Some(nc) => {
            let key = format!(
                "{}{}{}",
                sha256_file(&manifest_path)?,
                json(nc)?,
                s.split
                    .as_ref()
                    .map(|p| sha256_file(p))
                    .transpose()?
                    .unwrap_or_default()
            );
            let digest = debias_core::seed::stable_hash(&key);
            Some(cache_dir(&out).join(format!("noisecrop-{digest:016x}")))
        }
        None => None,
    };
    let report = evaluate_external(&models, &manifest, &s.eval, &out, nc_dir.as_deref())?;
    for name in ["eval.json", "prevalence.csv"] {
        ctx.record_output(out.join(name));
    }
    for k in 0..models.len() {
        ctx.record_output(out.join(format!("predictions_{k}.csv")));
    }
    println!(
        "{}: AUC {:.4} +/- {:.4} over {} model(s){}",
        report.dataset,
        report.mean_auc,
        report.stderr,
        report.models.len(),
        if report.noisecrop { " with NoiseCrop" } else { "" }
    );
    Ok(())
}

// sweep

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub manifest: Option<PathBuf>,
    pub sweep: SweepConfig,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Sweep id; results go to <out>/<id>/.
    #[arg(long)]
    id: Option<String>,
    /// Comma-separated bias factors.
    #[arg(long, value_delimiter = ',')]
    factors: Option<Vec<f64>>,
    /// Comma-separated methods, e.g. erm,groupdro+noisecrop.
    #[arg(long, value_delimiter = ',', value_parser = parse_arm)]
    methods: Option<Vec<Arm>>,
    /// Number of seeds per factor.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

fn parse_arm(s: &str) -> Result<Arm, String> {
    Arm::parse(s).ok_or_else(|| format!("unknown method `{s}`"))
}

pub fn sweep(args: &SweepArgs, ctx: &mut Context) -> anyhow::Result<()> {
    let mut s: SweepSettings = ctx.settings()?;
    if args.manifest.is_some() {
        s.manifest = args.manifest.clone();
    }
    let c = &mut s.sweep;
    override_opt(&mut c.sweep_id, &args.id);
    override_opt(&mut c.factors, &args.factors);
    override_opt(&mut c.arms, &args.methods);
    override_opt(&mut c.n_seeds, &args.seeds);
    override_opt(&mut c.tta_replicas, &args.replicas);
    override_opt(&mut c.train.max_epochs, &args.epochs);
    override_opt(&mut c.seed, &ctx.seed);
    if c.sweep_id.is_empty() || c.sweep_id.contains(['/', '\\']) || c.sweep_id.starts_with('.') {
        return Err(usage(format!("invalid sweep id `{}`", c.sweep_id)));
    }
    let dir = ctx.out_dir("runs").join(&s.sweep.sweep_id);
    ctx.set_run_dir(&dir);
    ctx.record_settings(&s, &dir)?;
    let manifest = open_manifest(ctx, &require(&s.manifest, "--manifest")?)?;
    let result = run_trap_sweep(&manifest, &s.sweep, &dir)?;
    for name in ["sweep.json", "cells.csv", "aggregate.csv"] {
        ctx.record_output(dir.join(name));
    }
    let files = render_report(
        &ReportInputs {
            sweep: Some(result.clone()),
            ..ReportInputs::default()
        },
        &dir.join("report"),
    )?;
    ctx.record_output(files.index);
    print!("{}", result.aggregate_csv());
    let failed = result.cells.iter().filter(|c| c.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} cell(s) failed; see {}", dir.join("cells.csv").display());
    }
    Ok(())
}

// saliency

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaliencySettings {
    pub manifest: Option<PathBuf>,
    pub model: Option<PathBuf>,
    /// Take ids from the test side of this split.
    pub split: Option<PathBuf>,
    pub ids: Vec<String>,
    pub limit: usize,
    /// Convolutional block index; the last block when absent.
    pub layer: Option<usize>,
    pub class: usize,
    /// Name shown with the maps.
    pub method: String,
}

impl Default for SaliencySettings {
    fn default() -> Self {
        Self {
            manifest: None,
            model: None,
            split: None,
            ids: Vec::new(),
            limit: 8,
            layer: None,
            class: 1,
            method: "model".into(),
        }
    }
}

#[derive(Args, Debug)]
pub struct SaliencyArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    split: Option<PathBuf>,
    /// Comma-separated sample ids.
    #[arg(long, value_delimiter = ',')]
    ids: Option<Vec<String>>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    layer: Option<usize>,
    #[arg(long)]
    class: Option<usize>,
    #[arg(long)]
    method: Option<String>,
}

/// One saliency result as stored in `saliency.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct SaliencyRecord {
    pub id: String,
    pub method: String,
    pub image_path: PathBuf,
    pub label: bool,
    pub probability: f32,
    pub map: SaliencyMap,
}

pub fn saliency(args: &SaliencyArgs, ctx: &mut Context) -> anyhow::Result<()> {
    let out = ctx.out_dir("saliency");
    ctx.set_run_dir(&out);
    let mut s: SaliencySettings = ctx.settings()?;
    if args.manifest.is_some() {
        s.manifest = args.manifest.clone();
    }
    if args.model.is_some() {
        s.model = args.model.clone();
    }
    if args.split.is_some() {
        s.split = args.split.clone();
    }
    override_opt(&mut s.ids, &args.ids);
    override_opt(&mut s.limit, &args.limit);
    if args.layer.is_some() {
        s.layer = args.layer;
    }
    override_opt(&mut s.class, &args.class);
    override_opt(&mut s.method, &args.method);
    ctx.record_settings(&s, &out)?;

    let manifest = open_manifest(ctx, &require(&s.manifest, "--manifest")?)?;
    let model_path = require(&s.model, "--model")?;
    ctx.record_input(&model_path)?;
    let (model, _) = load_model(&model_path)?;
    let ids: Vec<String> = if !s.ids.is_empty() {
        s.ids.clone()
    } else {
        let pool = match &s.split {
            Some(p) => open_split(ctx, p)?.test_ids,
            None => manifest.ids(),
        };
        pool.into_iter().take(s.limit).collect()
    };
    let mut records = Vec::with_capacity(ids.len());
    for id in &ids {
        let record = manifest
            .get(id)
            .ok_or_else(|| debias_core::Error::Integrity(format!("unknown id `{id}`")))?;
        let path = manifest.image_path(record);
        let image = read_rgb(&path)?;
        let (h, w) = (image.height() as usize, image.width() as usize);
        let input = Tensor4 {
            n: 1,
            h,
            w,
            c: 3,
            data: image_to_input(&image),
        };
        let probability = positive_probability(&model.forward(&input));
        let map = scorecam(&model, &input, s.layer, s.class)?;
        let item = SaliencyItem {
            id: id.clone(),
            method: s.method.clone(),
            image,
            map,
            label: record.label.is_positive(),
            probability,
        };
        let png = out.join("overlays").join(format!("{id}.png"));
        fs::create_dir_all(png.parent().expect("has parent"))?;
        saliency_overlay(&item)?.save(&png)?;
        ctx.record_output(png);
        records.push(SaliencyRecord {
            id: item.id,
            method: item.method,
            image_path: path,
            label: item.label,
            probability,
            map: item.map,
        });
    }
    write(ctx, out.join("saliency.json"), json(&records)?)?;
    println!("wrote {} saliency maps to {}", records.len(), out.display());
    Ok(())
}

// report

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSettings {
    pub sweep: Option<PathBuf>,
    /// Correlation reports, or split JSON files carrying one.
    pub correlations: Vec<PathBuf>,
    /// `eval.json` files.
    pub evals: Vec<PathBuf>,
    /// `saliency.json` files.
    pub saliency: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// `sweep.json` of a finished sweep.
    #[arg(long)]
    sweep: Option<PathBuf>,
    #[arg(long = "correlations")]
    correlations: Vec<PathBuf>,
    #[arg(long = "eval")]
    evals: Vec<PathBuf>,
    #[arg(long = "saliency")]
    saliency: Vec<PathBuf>,
}

fn read_json<T: serde::de::DeserializeOwned>(ctx: &mut Context, path: &Path) -> anyhow::Result<T> {
    ctx.record_input(path)?;
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn report(args: &ReportArgs, ctx: &mut Context) -> anyhow::Result<()> {
    let out = ctx.out_dir("report");
    ctx.set_run_dir(&out);
    let mut s: ReportSettings = ctx.settings()?;
    if args.sweep.is_some() {
        s.sweep = args.sweep.clone();
    }
    s.correlations.extend(args.correlations.iter().cloned());
    s.evals.extend(args.evals.iter().cloned());
    s.saliency.extend(args.saliency.iter().cloned());
    ctx.record_settings(&s, &out)?;

    let mut inputs = ReportInputs::default();
    if let Some(p) = &s.sweep {
        inputs.sweep = Some(read_json::<SweepResult>(ctx, p)?);
    }
    for p in &s.correlations {
        let value: serde_json::Value = read_json(ctx, p)?;
        let report = match value.get("correlations") {
            Some(inner) => serde_json::from_value::<CorrelationReport>(inner.clone()),
            None => serde_json::from_value::<CorrelationReport>(value),
        }
        .with_context(|| format!("{} holds no correlation report", p.display()))?;
        inputs.correlations.push(report);
    }
    for p in &s.evals {
        let report: EvalReport = read_json(ctx, p)?;
        let name = p
            .parent()
            .and_then(|d| d.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| report.dataset.clone());
        inputs.external.push((name, report));
    }
    for p in &s.saliency {
        let records: Vec<SaliencyRecord> = read_json(ctx, p)?;
        for r in records {
            inputs.saliency.push(SaliencyItem {
                image: read_rgb(&r.image_path)?,
                id: r.id,
                method: r.method,
                map: r.map,
                label: r.label,
                probability: r.probability,
            });
        }
    }
    if inputs.is_empty() {
        bail!(UsageError(
            "nothing to report; pass --sweep, --correlations, --eval or --saliency".into()
        ));
    }
    let files = render_report(&inputs, &out)?;
    for f in files.files {
        ctx.record_output(f);
    }
    println!("report written to {}", files.index.display());
    ctx.record_output(files.index);
    Ok(())
}
