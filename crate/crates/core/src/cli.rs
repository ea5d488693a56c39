//! The `colopath` command line: synth, ingest, stats, train, sweep,
//! calibrate, eval, explain, and report, wired over run directories laid out
//! as `runs/<name>/<seed>/`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::calibrate::{
    apply_temperature, fit_temperature_with_bins, CalibrationResult, LogitMatrix,
};
use crate::error::{Error, Result};
use crate::explain::{grad_cam, save_heatmap_csv, save_overlay};
use crate::ingest::{
    build_histology_manifest, extract_frames, generate_synthetic, split_videos, DatasetManifest,
    SyntheticSpec, COLONOSCOPY_CLASSES, HISTOLOGY_CLASSES,
};
use crate::metrics::{
    classification_report, confidence_report_with, save_videos_csv, video_accuracy,
};
use crate::model::{load_checkpoint, Arch};
use crate::rundir::{
    canonical_json, default_output_root, load_run_config, sha256_hex, write_run_config, RunConfig,
    RunPaths,
};
use crate::trainer::{
    run_seed_sweep, seed_metric_from_logits, train, ModalityConfig, SeedMetric, SweepSummary,
};
use crate::transforms::{load_image, normalize, resize_bilinear, NormalizationStats};

#[derive(Parser)]
#[command(
    name = "colopath",
    version,
    about = "Histology patch and colonoscopy frame classification pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic planted-pattern dataset.
    Synth(SynthArgs),
    /// Build dataset manifests from data on disk.
    #[command(subcommand)]
    Ingest(IngestCommand),
    /// Compute per-channel normalization stats for a manifest split.
    Stats(StatsArgs),
    /// One fine-tuning run for a single seed.
    Train(TrainArgs),
    /// Independent training runs for every configured seed.
    Sweep(SweepArgs),
    /// Fit temperature scaling on a run's validation logits.
    Calibrate(CalibrateArgs),
    /// Metrics, video aggregation, and the confidence report for a run.
    Eval(EvalArgs),
    /// Grad-CAM overlays for chosen samples.
    Explain(ExplainArgs),
    /// Collate a seed sweep into one report.
    Report(ReportArgs),
}

#[derive(Args, Serialize)]
struct SynthArgs {
    /// Number of classes (pattern quadrant is class mod 4).
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Training images per class.
    #[arg(long = "per-class", default_value_t = 10)]
    per_class: usize,
    #[arg(long, default_value_t = 2)]
    val_per_class: usize,
    #[arg(long, default_value_t = 2)]
    test_per_class: usize,
    /// Image side in pixels.
    #[arg(long, default_value_t = 64)]
    side: usize,
    #[arg(long, default_value_t = 0.05)]
    noise_std: f32,
    #[arg(long)]
    seed: u64,
    /// Output dataset directory.
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum IngestCommand {
    /// Histology root: <root>/{train,val,test}/labels.csv plus images.
    Histology(IngestHistologyArgs),
    /// Colonoscopy videos: <videos>/<class>/*.y4m (or ffmpeg-decodable).
    Colonoscopy(IngestColonoscopyArgs),
}

#[derive(Args, Serialize)]
struct IngestHistologyArgs {
    #[arg(long)]
    root: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    /// Comma-separated class names; defaults to the nine tissue classes.
    #[arg(long)]
    classes: Option<String>,
}

#[derive(Args, Serialize)]
struct IngestColonoscopyArgs {
    #[arg(long)]
    videos: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    /// train,val,test ratios summing to 1.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    ratios: String,
    /// Seed for the video-level split.
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct StatsArgs {
    /// Manifest directory (manifest.csv + classes.json).
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "train")]
    split: String,
    /// Output stats JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    /// Manifest directory.
    #[arg(long)]
    manifest: PathBuf,
    /// Preset: histology, colonoscopy, or synthetic.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Full config JSON file (overrides the preset).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    run_name: String,
    /// Defaults to $COLOPATH_OUTPUT_ROOT, then ./runs.
    #[arg(long)]
    output_root: Option<PathBuf>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// tiny or resnet50.
    #[arg(long)]
    backbone: Option<String>,
    #[arg(long)]
    pretrained: Option<bool>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    input_side: Option<usize>,
    /// Comma-separated seed list override.
    #[arg(long)]
    seeds: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Training seed; defaults to the first configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: ConfigArgs,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Run directory (runs/<name>/<seed>).
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value_t = crate::calibrate::DEFAULT_ECE_BINS)]
    bins: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    /// Frame-to-video rule: majority (default) or mean-prob.
    #[arg(long, default_value = "majority")]
    aggregation: String,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    run: PathBuf,
    /// Manifest directory the samples come from.
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated sample ids.
    #[arg(long)]
    samples: String,
    /// Target class; defaults to the model's prediction per sample.
    #[arg(long)]
    class: Option<usize>,
    /// Stage whose activations the heatmap explains; defaults to the final
    /// convolutional stage.
    #[arg(long)]
    layer: Option<String>,
    #[arg(long, default_value_t = 0.4)]
    alpha: f32,
    /// Also dump each raw heatmap as a CSV grid.
    #[arg(long, default_value_t = false)]
    csv: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Sweep directory (runs/<name>) containing per-seed subdirectories.
    #[arg(long)]
    sweep: PathBuf,
}

/// Entry point: returns the process exit code (0 success, 2 configuration
/// error, 1 runtime failure).
pub fn cli<I>(argv: I) -> i32
where
    I: IntoIterator,
    I::Item: Into<std::ffi::OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(parsed.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(args) => cmd_synth(args),
        Command::Ingest(IngestCommand::Histology(args)) => cmd_ingest_histology(args),
        Command::Ingest(IngestCommand::Colonoscopy(args)) => cmd_ingest_colonoscopy(args),
        Command::Stats(args) => cmd_stats(args),
        Command::Train(args) => cmd_train(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Explain(args) => cmd_explain(args),
        Command::Report(args) => cmd_report(args),
    }
}

/// Persist the arguments that produced an artifact directory, hash first.
fn write_provenance<T: Serialize>(dir: &Path, name: &str, args: &T) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let canonical = canonical_json(args);
    #[derive(Serialize)]
    struct Provenance<'a> {
        config_hash: String,
        #[serde(flatten)]
        args: &'a serde_json::Value,
    }
    let value: serde_json::Value = serde_json::from_str(&canonical).expect("canonical json");
    let body = serde_json::to_string_pretty(&Provenance {
        config_hash: sha256_hex(canonical.as_bytes()),
        args: &value,
    })
    .expect("provenance serialize");
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        num_classes: args.classes,
        train_per_class: args.per_class,
        val_per_class: args.val_per_class,
        test_per_class: args.test_per_class,
        image_side: args.side,
        noise_std: args.noise_std,
    };
    spec.validate()?;
    write_provenance(&args.out, "synth.config.json", &args)?;
    let manifest = generate_synthetic(&spec, args.seed, &args.out)?;
    manifest.save_to_dir(&args.out)?;
    println!(
        "generated {} samples across {} classes in {}",
        manifest.records.len(),
        manifest.num_classes(),
        args.out.display()
    );
    Ok(())
}

fn cmd_ingest_histology(args: IngestHistologyArgs) -> Result<()> {
    let class_names: Vec<String> = match &args.classes {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
        None => HISTOLOGY_CLASSES.iter().map(|s| s.to_string()).collect(),
    };
    write_provenance(&args.out, "ingest.config.json", &args)?;
    let manifest = build_histology_manifest(&args.root, &class_names)?;
    manifest.save_to_dir(&args.out)?;
    println!(
        "ingested {} histology samples into {}",
        manifest.records.len(),
        args.out.display()
    );
    Ok(())
}

const VIDEO_EXTENSIONS: [&str; 5] = ["y4m", "mp4", "avi", "mov", "mkv"];

fn cmd_ingest_colonoscopy(args: IngestColonoscopyArgs) -> Result<()> {
    let ratios = parse_ratios(&args.ratios)?;
    write_provenance(&args.out, "ingest.config.json", &args)?;

    let mut class_dirs: Vec<String> = std::fs::read_dir(&args.videos)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", args.videos.display())))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(Error::config(format!(
            "no class subdirectories under {}",
            args.videos.display()
        )));
    }
    // The canonical two-class layout keeps polyp = 0, colitis = 1.
    let class_names: Vec<String> = {
        let canonical: Vec<String> = COLONOSCOPY_CLASSES.iter().map(|s| s.to_string()).collect();
        let mut sorted = canonical.clone();
        sorted.sort();
        if class_dirs == sorted {
            canonical
        } else {
            class_dirs.clone()
        }
    };

    let mut records = Vec::new();
    for (label, class) in class_names.iter().enumerate() {
        let dir = args.videos.join(class);
        let mut videos: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", dir.display())))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .map(|e| VIDEO_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
                    .unwrap_or(false)
            })
            .collect();
        videos.sort();
        if videos.is_empty() {
            return Err(Error::config(format!(
                "no videos found under {}",
                dir.display()
            )));
        }
        for video in videos {
            let frames_dir = args.out.join("frames").join(class);
            for mut rec in extract_frames(&video, &frames_dir, label)? {
                // Prefix provenance so stems never collide across classes.
                rec.sample_id = format!("{class}_{}", rec.sample_id);
                rec.video_id = rec.video_id.map(|v| format!("{class}_{v}"));
                records.push(rec);
            }
        }
    }

    let manifest = split_videos(&records, ratios, args.seed, &class_names)?;
    manifest.save_to_dir(&args.out)?;
    let count = |s: crate::ingest::Split| manifest.records_in(s).count();
    println!(
        "ingested {} frames from {} videos (train {} / val {} / test {})",
        manifest.records.len(),
        manifest.video_splits()?.len(),
        count(crate::ingest::Split::Train),
        count(crate::ingest::Split::Val),
        count(crate::ingest::Split::Test),
    );
    Ok(())
}

fn parse_ratios(raw: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::config(format!(
            "ratios must be three comma-separated numbers, got {raw:?}"
        )));
    }
    let parse = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::config(format!("bad ratio {s:?}")))
    };
    Ok((parse(parts[0])?, parse(parts[1])?, parse(parts[2])?))
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let manifest = DatasetManifest::load_from_dir(&args.manifest)?;
    let split = args.split.parse()?;
    let stats = crate::transforms::compute_stats(&manifest, split)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    stats.save_json(&args.out)?;
    println!(
        "mean [{:.6}, {:.6}, {:.6}] std [{:.6}, {:.6}, {:.6}] -> {}",
        stats.mean[0],
        stats.mean[1],
        stats.mean[2],
        stats.std[0],
        stats.std[1],
        stats.std[2],
        args.out.display()
    );
    Ok(())
}

fn resolve_config(common: &ConfigArgs, manifest: &DatasetManifest) -> Result<ModalityConfig> {
    let mut config = if let Some(path) = &common.config {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&raw).map_err(|e| Error::config(format!(
            "bad config {}: {e}",
            path.display()
        )))?
    } else {
        match common.preset.as_deref() {
            Some("histology") => ModalityConfig::histology(),
            Some("colonoscopy") => ModalityConfig::colonoscopy(),
            Some("synthetic") => ModalityConfig::synthetic(manifest.num_classes()),
            Some(other) => {
                return Err(Error::config(format!(
                    "unknown preset {other:?} (expected histology, colonoscopy, or synthetic)"
                )))
            }
            None => {
                return Err(Error::config(
                    "provide --preset or --config to choose hyperparameters",
                ))
            }
        }
    };
    if let Some(v) = common.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = common.max_epochs {
        config.max_epochs = v;
    }
    if let Some(v) = &common.backbone {
        config.backbone = v.parse::<Arch>()?;
    }
    if let Some(v) = common.pretrained {
        config.pretrained = v;
    }
    if let Some(v) = common.lr {
        config.lr_init = v;
    }
    if let Some(v) = common.input_side {
        config.input_side = v;
    }
    if let Some(list) = &common.seeds {
        config.seeds = list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::config(format!("bad seed {s:?}")))
            })
            .collect::<Result<Vec<u64>>>()?;
    }
    config.validate()?;
    Ok(config)
}

fn run_setup(common: &ConfigArgs) -> Result<(DatasetManifest, RunConfig)> {
    let manifest = DatasetManifest::load_from_dir(&common.manifest)?;
    let config = resolve_config(common, &manifest)?;
    let run_config = RunConfig {
        run_name: common.run_name.clone(),
        output_root: common
            .output_root
            .clone()
            .unwrap_or_else(default_output_root),
        manifest_dir: common.manifest.clone(),
        config,
    };
    Ok((manifest, run_config))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let (manifest, run_config) = run_setup(&args.common)?;
    let seed = args
        .seed
        .unwrap_or_else(|| run_config.config.seeds[0]);
    let run_dir = run_config.run_dir(seed);
    let hash = write_run_config(&run_config, &run_dir)?;
    let result = train(&run_config.config, &manifest, seed, &run_dir, &hash)?;
    let last = result.logs.last().expect("at least one epoch");
    println!(
        "seed {seed}: stopped at epoch {} ({:?}), best val loss {:.6}, last val accuracy {:.4}",
        last.epoch, result.stop_reason, result.best_val_loss, last.val_accuracy
    );
    println!("run dir: {}", run_dir.display());
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let (manifest, run_config) = run_setup(&args.common)?;
    let sweep_dir = run_config.sweep_dir();
    let mut hash = String::new();
    for &seed in &run_config.config.seeds {
        hash = write_run_config(&run_config, &run_config.run_dir(seed))?;
    }
    let (_, summary) = run_seed_sweep(&run_config.config, &manifest, &sweep_dir, &hash)?;
    write_report(&sweep_dir, &summary)?;
    print_summary(&summary);
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<()> {
    let paths = RunPaths::new(&args.run);
    let val_path = paths.val_logits();
    if !val_path.is_file() {
        return Err(Error::config(format!(
            "missing validation logits: {}",
            val_path.display()
        )));
    }
    let logits = LogitMatrix::load_csv(&val_path)?;
    let result = fit_temperature_with_bins(&logits, args.bins)?;
    if let Some(w) = &result.warning {
        eprintln!("warning: {w}");
    }
    result.save_json(&paths.calibration_json())?;
    println!(
        "temperature {:.4}; NLL {:.6} -> {:.6}; ECE {:.4} -> {:.4} ({} bins)",
        result.temperature,
        result.nll_before,
        result.nll_after,
        result.ece_before,
        result.ece_after,
        result.num_bins
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let paths = RunPaths::new(&args.run);
    let test_path = paths.test_logits();
    if !test_path.is_file() {
        return Err(Error::config(format!(
            "missing test logits: {}",
            test_path.display()
        )));
    }
    let logits = LogitMatrix::load_csv(&test_path)?;
    let temperature = if paths.calibration_json().is_file() {
        let c = CalibrationResult::load_json(&paths.calibration_json())?;
        println!("using fitted temperature {:.4}", c.temperature);
        c.temperature
    } else {
        1.0
    };
    let probs = apply_temperature(&logits, temperature)?;
    let report = classification_report(&probs, &logits.labels)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    report.save_json(&paths.metrics_json())?;
    println!(
        "accuracy {:.4}  macro F1 {:.4}  macro AUC {}  weighted OvR AUC {}",
        report.accuracy,
        report.macro_f1,
        report
            .macro_auc
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "n/a".into()),
        report
            .weighted_ovr_auc
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "n/a".into()),
    );

    if !logits.is_empty() && logits.video_ids.iter().all(|v| v.is_some()) {
        let rule: crate::metrics::AggregationRule = args.aggregation.parse()?;
        let vids: Vec<String> = logits
            .video_ids
            .iter()
            .map(|v| v.clone().unwrap())
            .collect();
        let mut truths = std::collections::BTreeMap::new();
        for (vid, &label) in vids.iter().zip(&logits.labels) {
            truths.insert(vid.clone(), label);
        }
        let verdicts = confidence_report_with(&probs, &vids, &truths, rule)?;
        save_videos_csv(&verdicts, &paths.videos_csv())?;
        let preds = crate::metrics::aggregate_video_with(&probs, &vids, rule)?;
        let acc = video_accuracy(&preds, &truths)?;
        println!("video accuracy {:.4} over {} videos", acc, verdicts.len());
        for v in &verdicts {
            println!(
                "  {}: truth {} predicted {} vote {:.2} confidence {:.3} [{}] {}",
                v.video_id,
                v.truth,
                v.predicted,
                v.vote_fraction,
                v.mean_confidence,
                v.band,
                if v.correct { "correct" } else { "wrong" }
            );
        }
    }
    println!("metrics: {}", paths.metrics_json().display());
    Ok(())
}

fn cmd_explain(args: ExplainArgs) -> Result<()> {
    let paths = RunPaths::new(&args.run);
    let (_, hash) = load_run_config(&args.run)?;
    let (mut model, _, warnings) = load_checkpoint(&paths.checkpoint_base(), Some(&hash))?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    if let Some(layer) = &args.layer {
        model.set_capture_stage(layer)?;
    }
    let stats = NormalizationStats::load_json(&paths.stats_json())?;
    let manifest = DatasetManifest::load_from_dir(&args.manifest)?;

    let wanted: Vec<&str> = args
        .samples
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if wanted.is_empty() {
        return Err(Error::config("no sample ids given"));
    }
    for id in wanted {
        let rec = manifest
            .records
            .iter()
            .find(|r| r.sample_id == id)
            .ok_or_else(|| Error::config(format!("sample {id:?} not in manifest")))?;
        let img = load_image(&rec.source_path)?;
        let resized = resize_bilinear(&img, model.input_side());
        let normalized = normalize(&resized, &stats);

        let target = match args.class {
            Some(c) => c,
            None => {
                let batch = crate::explain::image_batch(&normalized);
                let logits = model.forward(&batch, false)?;
                let row = logits.row(0);
                row.iter()
                    .enumerate()
                    .fold((0usize, f32::NEG_INFINITY), |acc, (j, &v)| {
                        if v > acc.1 {
                            (j, v)
                        } else {
                            acc
                        }
                    })
                    .0
            }
        };
        let heatmap = grad_cam(&mut model, &normalized, target)?;
        let stem = format!("{}_{}", id.replace('/', "_"), target);
        let png = paths.heatmaps_dir().join(format!("{stem}.png"));
        save_overlay(&resized, &heatmap, args.alpha, &png)?;
        if args.csv {
            save_heatmap_csv(&heatmap, &paths.heatmaps_dir().join(format!("{stem}.csv")))?;
        }
        println!("{}", png.display());
    }
    Ok(())
}

fn write_report(sweep_dir: &Path, summary: &SweepSummary) -> Result<()> {
    let body = serde_json::to_string_pretty(summary).expect("summary serialize");
    let path = sweep_dir.join("report.json");
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
}

fn print_summary(summary: &SweepSummary) {
    println!("{}:", summary.metric_name);
    for m in &summary.per_seed {
        println!("  seed {:>6}  {:.4}", m.seed, m.value);
    }
    println!("  mean {:.4}  std {:.4}", summary.mean, summary.std);
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let mut seeds: Vec<u64> = std::fs::read_dir(&args.sweep)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", args.sweep.display())))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().into_string().ok()?.parse().ok())
        .collect();
    seeds.sort_unstable();
    if seeds.is_empty() {
        return Err(Error::config(format!(
            "no seed run directories under {}",
            args.sweep.display()
        )));
    }
    let (first_config, _) = load_run_config(&args.sweep.join(seeds[0].to_string()))?;
    let modality = first_config.config.modality;
    let mut per_seed = Vec::new();
    for seed in seeds {
        let run = RunPaths::new(args.sweep.join(seed.to_string()));
        let value = seed_metric_from_logits(&run.test_logits(), modality)?;
        per_seed.push(SeedMetric { seed, value });
    }
    let metric_name = match modality {
        crate::ingest::Modality::Histology => "test_accuracy",
        crate::ingest::Modality::Colonoscopy => "video_accuracy",
    };
    let summary = SweepSummary::from_values(metric_name, per_seed);
    write_report(&args.sweep, &summary)?;
    print_summary(&summary);
    Ok(())
}
