//! `agct` — MR-to-CT translation on procedural head phantoms.
//!
//! Subcommands: `phantom gen` (build a paired dataset), `train` (fit a
//! translation model), `infer` (synthesize CT from MR, optionally dumping
//! attention maps), `eval` (score a synthesized volume against its
//! reference), and `crossval` (k-fold comparison of the model variants).
//!
//! Exit codes: 0 on success, 2 on a usage error (unknown command or flag,
//! handled by the argument parser), 1 on any runtime error.

mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use agct_core::checkpoint::load_checkpoint;
use agct_core::metrics::{aggregate, evaluate, kfold, Aggregate, MetricsReport};
use agct_core::model::{
    synthesize_volume, train, EpochStats, ModelConfig, ModelKind, Models, TrainConfig,
};
use agct_core::nn::bilinear_upsample;
use agct_core::panels::{emit_panels, gray_panel, write_pgm};
use agct_core::phantom::{
    apply_mask, ct_head_mask, dataset_slices, generate_phantom, head_mask, mr_scale,
    normalize_mr, paired_volumes, read_volume, write_volume, Mask, Modality, PhantomParams,
    SlicePair, Volume, HEAD_MORPH_RADIUS, HEAD_THRESHOLD_FRACTION,
};
use agct_core::tensor::Tensor;

#[derive(Parser)]
#[command(
    name = "agct",
    version,
    about = "MR-to-CT translation on procedural head phantoms",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Phantom dataset tools.
    #[command(subcommand)]
    Phantom(PhantomCommand),
    /// Train a translation model on a directory of paired volumes.
    Train(TrainArgs),
    /// Synthesize a CT volume from an MR volume with a trained checkpoint.
    Infer(InferArgs),
    /// Score a synthesized CT against its reference CT.
    Eval(EvalArgs),
    /// K-fold cross-validation comparing the model variants.
    Crossval(CrossvalArgs),
}

#[derive(Subcommand)]
enum PhantomCommand {
    /// Generate a cohort of paired MR/CT head phantom volumes.
    Gen(PhantomGenArgs),
}

#[derive(Args)]
struct PhantomGenArgs {
    /// Number of subjects to generate.
    #[arg(long, default_value_t = 10)]
    subjects: usize,
    /// Axial slices per subject.
    #[arg(long, default_value_t = 8)]
    slices: usize,
    /// Slice height and width in pixels (multiple of 8).
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Cohort seed; same seed, same cohort.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Probability that a subject carries a skull defect.
    #[arg(long, default_value_t = 0.3)]
    anomaly_rate: f64,
    /// Standard deviation of the additive MR noise.
    #[arg(long, default_value_t = 0.03)]
    noise: f64,
    /// Strength of the multiplicative MR bias field.
    #[arg(long, default_value_t = 1.0)]
    bias_strength: f64,
    /// Output directory for the volume files.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

/// A single trainable model variant.
#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelChoice {
    AttentionGan,
    Gan,
    Cnn,
}

impl From<ModelChoice> for ModelKind {
    fn from(choice: ModelChoice) -> ModelKind {
        match choice {
            ModelChoice::AttentionGan => ModelKind::AttentionGan,
            ModelChoice::Gan => ModelKind::Gan,
            ModelChoice::Cnn => ModelKind::Cnn,
        }
    }
}

/// Model selection for `crossval`, which also accepts `all`.
#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CrossvalModels {
    All,
    AttentionGan,
    Gan,
    Cnn,
}

impl CrossvalModels {
    fn kinds(self) -> Vec<ModelKind> {
        match self {
            CrossvalModels::All => ModelKind::ALL.to_vec(),
            CrossvalModels::AttentionGan => vec![ModelKind::AttentionGan],
            CrossvalModels::Gan => vec![ModelKind::Gan],
            CrossvalModels::Cnn => vec![ModelKind::Cnn],
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of paired MR/CT volumes.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Model variant to train.
    #[arg(long, value_enum, default_value = "attention-gan")]
    model: ModelChoice,
    /// Training epochs.
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    /// ADAM learning rate.
    #[arg(long, default_value_t = 2e-4)]
    lr: f64,
    /// Weight of the L1 reconstruction term in the generator objective.
    #[arg(long, default_value_t = 10.0)]
    lambda: f64,
    /// Seed for weight initialization and epoch shuffling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Channel width of the first encoder layer.
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Also save an intermediate checkpoint every N epochs, next to --out.
    #[arg(long, value_name = "N")]
    checkpoint_every: Option<usize>,
    /// Output checkpoint path.
    #[arg(long, value_name = "CKPT")]
    out: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    /// Trained checkpoint.
    #[arg(long, value_name = "CKPT")]
    ckpt: PathBuf,
    /// Input MR volume header (.vol.json).
    #[arg(long, value_name = "VOL")]
    input: PathBuf,
    /// Output CT volume header path.
    #[arg(long, value_name = "VOL")]
    out: PathBuf,
    /// Write per-slice attention maps as PGM images into this directory
    /// (attention-gan checkpoints only).
    #[arg(long, value_name = "DIR")]
    dump_attention: Option<PathBuf>,
}

/// Report file format.
#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Csv,
    Json,
}

#[derive(Args)]
struct EvalArgs {
    /// Synthesized CT volume header.
    #[arg(long, value_name = "VOL")]
    pred: PathBuf,
    /// Reference CT volume header.
    #[arg(long = "ref", value_name = "VOL")]
    reference: PathBuf,
    /// Report output path.
    #[arg(long, value_name = "PATH")]
    report: PathBuf,
    /// Report file format.
    #[arg(long, value_enum, default_value = "csv")]
    format: ReportFormat,
    /// MR volume to derive the head mask from; without it the mask is
    /// thresholded out of the reference CT.
    #[arg(long, value_name = "VOL")]
    mr: Option<PathBuf>,
}

#[derive(Args)]
struct CrossvalArgs {
    /// Directory of paired MR/CT volumes.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Number of cross-validation folds.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Which model variants to run.
    #[arg(long, value_enum, default_value = "all")]
    model: CrossvalModels,
    /// Training epochs per fold.
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    /// ADAM learning rate.
    #[arg(long, default_value_t = 2e-4)]
    lr: f64,
    /// Weight of the L1 reconstruction term in the generator objective.
    #[arg(long, default_value_t = 10.0)]
    lambda: f64,
    /// Base seed; each fold trains with seed + fold index.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Channel width of the first encoder layer.
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Output directory for checkpoints, reports, panels, and the summary.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Phantom(PhantomCommand::Gen(args)) => phantom_gen(args),
        Command::Train(args) => run_train(args),
        Command::Infer(args) => run_infer(args),
        Command::Eval(args) => run_eval(args),
        Command::Crossval(args) => run_crossval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn phantom_gen(args: PhantomGenArgs) -> Result<()> {
    let params = PhantomParams {
        size: args.size,
        subjects: args.subjects,
        slices: args.slices,
        anomaly_rate: args.anomaly_rate,
        noise: args.noise,
        bias_strength: args.bias_strength,
        seed: args.seed,
    };
    let cohort = generate_phantom(&params)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    for (mr, ct) in &cohort {
        let subject = &mr.subject_id;
        write_volume(mr, &args.out.join(format!("{subject}_mr.vol.json")))?;
        write_volume(ct, &args.out.join(format!("{subject}_ct.vol.json")))?;
    }
    println!(
        "wrote {} subjects ({} volumes of {}x{}x{}) into {}",
        cohort.len(),
        cohort.len() * 2,
        args.size,
        args.size,
        args.slices,
        args.out.display()
    );
    Ok(())
}

/// Loads the training slices and reports how many were skipped.
fn load_dataset(dir: &Path) -> Result<Vec<SlicePair>> {
    let (pairs, skipped) = dataset_slices(dir, |_| true)?;
    if !skipped.is_empty() {
        eprintln!("note: skipped {} slices with no detectable head", skipped.len());
    }
    if pairs.is_empty() {
        bail!("no usable slice pairs under {}", dir.display());
    }
    Ok(pairs)
}

/// Height and width of the (uniform) training slices.
fn slice_dims(pairs: &[SlicePair]) -> (usize, usize) {
    let shape = pairs[0].mr.shape();
    (shape[2], shape[3])
}

fn train_config(
    kind: ModelKind,
    height: usize,
    width: usize,
    base_width: usize,
    epochs: usize,
    lr: f64,
    lambda: f64,
    seed: u64,
) -> TrainConfig {
    let mut model = ModelConfig::new(kind, height, width);
    model.base_width = base_width;
    let mut cfg = TrainConfig::new(model);
    cfg.epochs = epochs;
    cfg.lr = lr;
    cfg.lambda = lambda;
    cfg.seed = seed;
    cfg
}

fn format_stats(stats: &EpochStats) -> String {
    let part = |v: Option<f64>, name: &str| match v {
        Some(v) => format!("{name} {v:.4}  "),
        None => String::new(),
    };
    format!(
        "{}{}l1 {:.4}  ({:.1}s)",
        part(stats.d_loss, "d"),
        part(stats.adversarial, "adv"),
        stats.reconstruction,
        stats.seconds
    )
}

fn parent_or_dot(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

fn run_train(args: TrainArgs) -> Result<()> {
    let pairs = load_dataset(&args.data)?;
    let (height, width) = slice_dims(&pairs);
    let mut cfg = train_config(
        args.model.into(),
        height,
        width,
        args.width,
        args.epochs,
        args.lr,
        args.lambda,
        args.seed,
    );
    cfg.checkpoint_every = args.checkpoint_every;

    let ckpt_dir = parent_or_dot(&args.out);
    std::fs::create_dir_all(ckpt_dir)
        .with_context(|| format!("creating {}", ckpt_dir.display()))?;
    println!(
        "training {} on {} slices of {}x{} for {} epochs (lr {}, lambda {}, seed {})",
        cfg.model.kind,
        pairs.len(),
        height,
        width,
        cfg.epochs,
        cfg.lr,
        cfg.lambda,
        cfg.seed
    );
    let epochs = cfg.epochs;
    let (trainer, _) = train(&cfg, &pairs, Some(ckpt_dir), |epoch, stats| {
        println!("epoch {:>4}/{epochs}  {}", epoch + 1, format_stats(stats));
    })?;
    trainer.save(&trainer.manifest(&cfg, cfg.epochs), &args.out)?;
    println!("saved checkpoint {}", args.out.display());
    Ok(())
}

fn run_infer(args: InferArgs) -> Result<()> {
    let loaded = load_checkpoint(&args.ckpt)?;
    let kind = loaded.manifest.model.kind;
    if args.dump_attention.is_some() && kind != ModelKind::AttentionGan {
        bail!(
            "--dump-attention needs an attention-gan checkpoint, but {} holds a {} model \
             (train with --model attention-gan to get attention maps)",
            args.ckpt.display(),
            kind
        );
    }
    let mr = read_volume(&args.input)?;
    if mr.modality != Modality::Mr {
        bail!(
            "{} is a {} volume; infer expects MR input",
            args.input.display(),
            mr.modality
        );
    }
    let result = synthesize_volume(&loaded.models, &mr)?;
    write_volume(&result.ct, &args.out)?;
    let headed = result.masks.iter().filter(|m| !m.is_empty()).count();
    println!(
        "synthesized {} ({} planes, {} with heads) with the {} model",
        args.out.display(),
        result.ct.depth,
        headed,
        kind
    );
    if let Some(dir) = &args.dump_attention {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let (ah, aw) = result.attention_dims;
        let mut written = 0usize;
        for (z, attention) in result.attention.iter().enumerate() {
            if let Some(values) = attention {
                let path = dir.join(format!("attention_{z:03}.pgm"));
                write_pgm(&path, ah, aw, &gray_panel(values, 0.0, 1.0))?;
                written += 1;
            }
        }
        println!("wrote {written} attention maps into {}", dir.display());
    }
    Ok(())
}

/// Per-plane head masks from an MR volume (planes with no head get an
/// empty mask, which the metrics treat as "nothing to score here").
fn mr_head_masks(mr: &Volume) -> Vec<Mask> {
    (0..mr.depth)
        .map(|z| {
            head_mask(
                mr.slice(z),
                mr.height,
                mr.width,
                HEAD_THRESHOLD_FRACTION,
                HEAD_MORPH_RADIUS,
            )
            .unwrap_or_else(|_| Mask::new(mr.height, mr.width))
        })
        .collect()
}

/// Per-plane head masks thresholded out of a CT volume.
fn ct_head_masks(ct: &Volume) -> Vec<Mask> {
    (0..ct.depth)
        .map(|z| ct_head_mask(ct.slice(z), ct.height, ct.width))
        .collect()
}

fn write_report(
    path: &Path,
    format: ReportFormat,
    reports: &[MetricsReport],
    agg: &Aggregate,
) -> Result<()> {
    match format {
        ReportFormat::Csv => report::write_csv(path, reports, agg),
        ReportFormat::Json => report::write_json(path, reports, agg),
    }
}

fn fmt_db(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.2} dB")
    } else {
        format!("{v}")
    }
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let pred = read_volume(&args.pred)?;
    let reference = read_volume(&args.reference)?;
    let masks = match &args.mr {
        Some(path) => {
            let mr = read_volume(path)?;
            if mr.modality != Modality::Mr {
                bail!("{} is a {} volume; --mr expects MR", path.display(), mr.modality);
            }
            if mr.dims() != reference.dims() {
                bail!(
                    "--mr dims {:?} do not match reference dims {:?}",
                    mr.dims(),
                    reference.dims()
                );
            }
            mr_head_masks(&mr)
        }
        None => ct_head_masks(&reference),
    };
    let report = evaluate(&reference, &pred, &masks)?;
    let agg = aggregate(std::slice::from_ref(&report))?;
    write_report(&args.report, args.format, std::slice::from_ref(&report), &agg)?;
    println!(
        "{}: full-FOV MAE {:.2} HU, PSNR {}, SSIM {:.4} over {} head voxels -> {}",
        report.subject_id,
        report.mae_full,
        fmt_db(report.psnr),
        report.ssim,
        report.voxels_head,
        args.report.display()
    );
    Ok(())
}

/// Evaluation parallelism from AGCT_THREADS (default 1).
fn eval_threads() -> usize {
    match std::env::var("AGCT_THREADS") {
        Ok(raw) => match raw.parse::<usize>() {
            Ok(n) if n >= 1 => n,
            _ => {
                eprintln!("note: ignoring unusable AGCT_THREADS value {raw:?}; using 1 thread");
                1
            }
        },
        Err(_) => 1,
    }
}

/// Synthesizes one held-out subject and scores it against its real CT.
fn eval_one(
    models: &Models<f32>,
    volumes: &BTreeMap<String, (Volume, Volume)>,
    id: &str,
) -> Result<MetricsReport> {
    let (mr, ct) = volumes
        .get(id)
        .ok_or_else(|| anyhow!("subject {id} vanished from the dataset"))?;
    let synthesis = synthesize_volume(models, mr)?;
    Ok(evaluate(ct, &synthesis.ct, &synthesis.masks)?)
}

/// Scores the held-out subjects of one fold. The model tensors are
/// single-threaded by construction, so with AGCT_THREADS > 1 each worker
/// loads its own copy of the fold checkpoint and takes a share of the
/// subjects.
fn evaluate_subjects(
    ckpt: &Path,
    subject_ids: &[String],
    volumes: &BTreeMap<String, (Volume, Volume)>,
    threads: usize,
) -> Result<Vec<MetricsReport>> {
    let threads = threads.clamp(1, subject_ids.len().max(1));
    let mut reports = if threads <= 1 {
        let loaded = load_checkpoint(ckpt)?;
        subject_ids
            .iter()
            .map(|id| eval_one(&loaded.models, volumes, id))
            .collect::<Result<Vec<_>>>()?
    } else {
        let mut chunks: Vec<Vec<String>> = vec![Vec::new(); threads];
        for (i, id) in subject_ids.iter().enumerate() {
            chunks[i % threads].push(id.clone());
        }
        let results: Vec<Result<Vec<MetricsReport>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .iter()
                .map(|chunk| {
                    scope.spawn(move || -> Result<Vec<MetricsReport>> {
                        let loaded = load_checkpoint(ckpt)?;
                        chunk
                            .iter()
                            .map(|id| eval_one(&loaded.models, volumes, id))
                            .collect()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation thread panicked"))
                .collect()
        });
        let mut flat = Vec::new();
        for result in results {
            flat.extend(result?);
        }
        flat
    };
    reports.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    Ok(reports)
}

/// Writes the qualitative panel set for one subject's most central plane
/// that has a head: MR input, real CT, synthesized CT, |difference|, and
/// (for the attention variant) the attention map upsampled to full size.
fn emit_subject_panels(
    models: &Models<f32>,
    mr: &Volume,
    ct: &Volume,
    dir: &Path,
    prefix: &str,
) -> Result<()> {
    let synthesis = synthesize_volume(models, mr)?;
    let Some(z) = (0..mr.depth)
        .filter(|&z| !synthesis.masks[z].is_empty())
        .min_by_key(|&z| z.abs_diff(mr.depth / 2))
    else {
        return Ok(());
    };
    let (h, w) = (mr.height, mr.width);
    let mut mr_norm = normalize_mr(mr.slice(z), mr_scale(&mr.voxels));
    apply_mask(&mut mr_norm, &synthesis.masks[z], -1.0);
    let attention_up = synthesis.attention[z]
        .as_ref()
        .map(|values| -> Result<Vec<f32>> {
            let (ah, aw) = synthesis.attention_dims;
            let native = Tensor::<f32>::new(&[1, 1, ah, aw], values.clone(), false)
                .map_err(agct_core::model::ModelError::from)?;
            Ok(bilinear_upsample(&native, h, w)
                .map_err(agct_core::model::ModelError::from)?
                .to_vec())
        })
        .transpose()?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    emit_panels(
        &mr_norm,
        ct.slice(z),
        synthesis.ct.slice(z),
        attention_up.as_deref(),
        h,
        w,
        dir,
        &format!("{prefix}z{z:03}_"),
    )?;
    Ok(())
}

fn run_crossval(args: CrossvalArgs) -> Result<()> {
    let started = Instant::now();
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let pairs = load_dataset(&args.data)?;
    let (height, width) = slice_dims(&pairs);
    let volumes: BTreeMap<String, (Volume, Volume)> = paired_volumes(&args.data, |_| true)?
        .into_iter()
        .map(|(mr, ct)| (mr.subject_id.clone(), (mr, ct)))
        .collect();
    let subjects: Vec<String> = volumes.keys().cloned().collect();
    let spec = kfold(&subjects, args.folds, args.seed)?;
    let kinds = args.model.kinds();
    let threads = eval_threads();

    let kind_list: Vec<String> = kinds.iter().map(|k| k.to_string()).collect();
    println!(
        "cross-validation: {} subjects, {} folds, models [{}], {} epochs per fold, \
         {}x{} slices, {} evaluation thread(s)",
        subjects.len(),
        args.folds,
        kind_list.join(", "),
        args.epochs,
        height,
        width,
        threads
    );

    let mut rows: Vec<(ModelKind, Aggregate, usize)> = Vec::new();
    for &kind in &kinds {
        let mut kind_reports: Vec<MetricsReport> = Vec::new();
        for fold in 0..args.folds {
            let (train_ids, test_ids) = spec.split(fold);
            let train_pairs: Vec<SlicePair> = pairs
                .iter()
                .filter(|p| train_ids.contains(&p.subject_id))
                .cloned()
                .collect();
            let cfg = train_config(
                kind,
                height,
                width,
                args.width,
                args.epochs,
                args.lr,
                args.lambda,
                args.seed.wrapping_add(fold as u64),
            );
            println!(
                "[{kind} fold {fold}] training on {} slices from {} subjects",
                train_pairs.len(),
                train_ids.len()
            );
            let (trainer, history) = train(&cfg, &train_pairs, None, |_, _| {})?;
            if let Some(last) = history.epochs.last() {
                println!("[{kind} fold {fold}] final epoch  {}", format_stats(last));
            }
            let ckpt_path = args.out.join(format!("{kind}_fold{fold}.ckpt"));
            trainer.save(&trainer.manifest(&cfg, cfg.epochs), &ckpt_path)?;

            let fold_reports = evaluate_subjects(&ckpt_path, &test_ids, &volumes, threads)?;
            if let Some(first) = test_ids.first() {
                if let Some((mr, ct)) = volumes.get(first) {
                    emit_subject_panels(
                        &trainer.models,
                        mr,
                        ct,
                        &args.out.join("panels").join(format!("fold{fold}")),
                        &format!("{kind}_{first}_"),
                    )?;
                }
            }
            let fold_agg = aggregate(&fold_reports)?;
            report::write_csv(
                &args.out.join(format!("report_{kind}_fold{fold}.csv")),
                &fold_reports,
                &fold_agg,
            )?;
            println!(
                "[{kind} fold {fold}] held-out full-FOV MAE {:.2} HU over {} subjects",
                fold_agg.mae_full.mean.unwrap_or(f64::NAN),
                fold_reports.len()
            );
            kind_reports.extend(fold_reports);
        }
        let agg = aggregate(&kind_reports)?;
        rows.push((kind, agg, kind_reports.len()));
    }

    report::write_summary_csv(&args.out.join("summary.csv"), &rows)?;
    report::write_summary_json(&args.out.join("summary.json"), &rows)?;
    for (kind, agg, subjects) in &rows {
        println!(
            "{kind}: full-FOV MAE {:.2} +/- {:.2} HU over {subjects} held-out subjects",
            agg.mae_full.mean.unwrap_or(f64::NAN),
            agg.mae_full.sd.unwrap_or(f64::NAN)
        );
    }
    if rows.len() > 1 {
        let mut ranked: Vec<(ModelKind, f64)> = rows
            .iter()
            .filter_map(|(kind, agg, _)| agg.mae_full.mean.map(|m| (*kind, m)))
            .collect();
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
        let order: Vec<String> = ranked
            .iter()
            .map(|(kind, mae)| format!("{kind} ({mae:.2})"))
            .collect();
        println!(
            "mean full-FOV MAE ordering, lower is better: {}",
            order.join(" < ")
        );
    }
    println!(
        "finished in {:.1}s; summary at {}",
        started.elapsed().as_secs_f64(),
        args.out.join("summary.csv").display()
    );
    Ok(())
}
