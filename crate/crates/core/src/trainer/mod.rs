//! The fine-tuning loop: Adam with weight decay on class-weighted
//! cross-entropy, plateau LR decay on validation loss, checkpointing on best
//! validation loss, early stopping on stagnant validation accuracy, and
//! multi-seed sweeps.
//!
//! Every source of randomness (weight init, epoch shuffling, augmentation)
//! derives from the run seed, so a run replays bit-identically on one CPU
//! thread.

mod loader;
mod schedule;

pub use loader::{assemble_batch, SplitData};
pub use schedule::{EarlyStopper, PlateauScheduler};

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::calibrate::LogitMatrix;
use crate::error::{Error, Result};
use crate::ingest::{DatasetManifest, Modality, Split};
use crate::model::{
    build_model_sided, load_checkpoint, save_checkpoint, Arch, Backbone, CheckpointMeta,
};
use crate::nn::loss::weighted_cross_entropy;
use crate::nn::Adam;
use crate::seed;
use crate::transforms::{AugmentPolicy, NormalizationStats};

/// Where per-channel normalization stats come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationSource {
    DatasetEmpirical,
    ImagenetConstants,
}

/// All per-modality hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityConfig {
    pub modality: Modality,
    pub num_classes: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub lr_init: f64,
    pub weight_decay: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub normalization_source: NormalizationSource,
    pub seeds: Vec<u64>,
    pub class_weighting: bool,
    pub backbone: Arch,
    pub pretrained: bool,
    pub input_side: usize,
    pub augment: AugmentPolicy,
}

impl ModalityConfig {
    /// Histology defaults: 9 classes, batch 128, 20 epochs, patience 3,
    /// empirical channel stats.
    pub fn histology() -> Self {
        ModalityConfig {
            modality: Modality::Histology,
            num_classes: 9,
            batch_size: 128,
            max_epochs: 20,
            early_stop_patience: 3,
            lr_init: 1e-4,
            weight_decay: 1e-4,
            plateau_factor: 0.5,
            plateau_patience: 1,
            normalization_source: NormalizationSource::DatasetEmpirical,
            seeds: vec![42],
            class_weighting: true,
            backbone: Arch::Resnet50,
            pretrained: true,
            input_side: 224,
            augment: AugmentPolicy::histology(),
        }
    }

    /// Colonoscopy defaults: 2 classes, batch 64, 50 epochs, patience 5,
    /// ImageNet constants, the five sweep seeds.
    pub fn colonoscopy() -> Self {
        ModalityConfig {
            modality: Modality::Colonoscopy,
            num_classes: 2,
            batch_size: 64,
            max_epochs: 50,
            early_stop_patience: 5,
            lr_init: 1e-4,
            weight_decay: 1e-4,
            plateau_factor: 0.5,
            plateau_patience: 1,
            normalization_source: NormalizationSource::ImagenetConstants,
            seeds: vec![42, 52, 62, 72, 82],
            class_weighting: true,
            backbone: Arch::Resnet50,
            pretrained: true,
            input_side: 224,
            augment: AugmentPolicy::colonoscopy(),
        }
    }

    /// Fast tiny-backbone config for the synthetic planted-pattern data.
    /// Horizontal flips are off: they would move the pattern into another
    /// class's quadrant.
    pub fn synthetic(num_classes: usize) -> Self {
        ModalityConfig {
            modality: Modality::Histology,
            num_classes,
            batch_size: 32,
            max_epochs: 30,
            early_stop_patience: 5,
            lr_init: 1e-3,
            weight_decay: 1e-4,
            plateau_factor: 0.5,
            plateau_patience: 1,
            normalization_source: NormalizationSource::DatasetEmpirical,
            seeds: vec![42],
            class_weighting: true,
            backbone: Arch::Tiny,
            pretrained: false,
            input_side: 64,
            augment: AugmentPolicy {
                hflip_prob: 0.0,
                max_rotation_deg: 0.0,
                jitter_strength: 0.05,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size as f64),
            ("max_epochs", self.max_epochs as f64),
            ("early_stop_patience", self.early_stop_patience as f64),
            ("lr_init", self.lr_init),
            ("weight_decay", self.weight_decay),
            ("plateau_factor", self.plateau_factor),
            ("plateau_patience", self.plateau_patience as f64),
            ("input_side", self.input_side as f64),
        ];
        for (name, v) in positive {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be >= 2"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must not be empty"));
        }
        self.augment.validate()
    }

    /// Augmentation applies to the train split only.
    pub fn augment_for_split(&self, split: Split) -> Option<&AugmentPolicy> {
        match split {
            Split::Train => Some(&self.augment),
            Split::Val | Split::Test => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub logs: Vec<EpochLog>,
    /// Checkpoint base path; `.ckpt` and `.meta.json` hang off it.
    pub best_checkpoint: PathBuf,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
    pub val_logits_path: PathBuf,
    pub test_logits_path: PathBuf,
}

/// Inverse-frequency class weights over the train split:
/// `w_c = N_train / (num_classes * count_c)`. The sample-weighted mean is 1.
pub fn class_weights(manifest: &DatasetManifest) -> Result<Vec<f32>> {
    let c = manifest.num_classes();
    let mut counts = vec![0usize; c];
    let mut total = 0usize;
    for rec in manifest.records_in(Split::Train) {
        counts[rec.label] += 1;
        total += 1;
    }
    let mut weights = Vec::with_capacity(c);
    for (class, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(Error::Train(format!(
                "class {class} ({:?}) has no train samples; cannot weight it",
                manifest.class_names[class]
            )));
        }
        weights.push(total as f32 / (c as f32 * count as f32));
    }
    Ok(weights)
}

/// Weighted mean cross-entropy and accuracy over a whole split, eval mode.
/// Also returns the raw logits row-aligned with the split.
fn evaluate(
    model: &mut Backbone,
    data: &SplitData,
    stats: &NormalizationStats,
    weights: &[f32],
    batch_size: usize,
) -> Result<(f64, f64, Array2<f64>)> {
    let n = data.len();
    let c = weights.len();
    let mut logits_all = Array2::<f64>::zeros((n, c));
    let mut loss_num = 0.0f64;
    let mut loss_den = 0.0f64;
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(batch_size) {
        let (batch, labels) = assemble_batch(data, chunk, stats, None)?;
        let logits = model.forward(&batch, false)?;
        for (bi, &idx) in chunk.iter().enumerate() {
            let row = logits.row(bi);
            let y = labels[bi];
            let w = weights[y] as f64;
            // Stable log-softmax for the true class.
            let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
            let lse: f64 = row.iter().map(|&v| ((v as f64) - m).exp()).sum();
            let log_p = (row[y] as f64 - m) - lse.ln();
            loss_num += w * -log_p;
            loss_den += w;
            let pred = row
                .iter()
                .enumerate()
                .fold((0usize, f32::NEG_INFINITY), |acc, (j, &v)| {
                    if v > acc.1 {
                        (j, v)
                    } else {
                        acc
                    }
                })
                .0;
            if pred == y {
                correct += 1;
            }
            for j in 0..c {
                logits_all[[idx, j]] = row[j] as f64;
            }
        }
    }
    Ok((loss_num / loss_den, correct as f64 / n as f64, logits_all))
}

fn logit_matrix_for(data: &SplitData, logits: Array2<f64>) -> Result<LogitMatrix> {
    LogitMatrix::new(
        logits,
        data.labels.clone(),
        data.sample_ids.clone(),
        data.video_ids.clone(),
    )
}

/// Resolve normalization stats per the config and persist them in the run
/// directory as `stats.json`.
pub fn resolve_stats(
    config: &ModalityConfig,
    manifest: &DatasetManifest,
    run_dir: &Path,
) -> Result<NormalizationStats> {
    let stats = match config.normalization_source {
        NormalizationSource::DatasetEmpirical => {
            crate::transforms::compute_stats(manifest, Split::Train)?
        }
        NormalizationSource::ImagenetConstants => NormalizationStats::imagenet(),
    };
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    stats.save_json(&run_dir.join("stats.json"))?;
    Ok(stats)
}

/// One full fine-tuning run. Writes `stats.json`, `epochs.csv`,
/// `checkpoints/best.*`, and `logits/{val,test}.csv` under `run_dir`.
pub fn train(
    config: &ModalityConfig,
    manifest: &DatasetManifest,
    seed_value: u64,
    run_dir: &Path,
    config_hash: &str,
) -> Result<RunResult> {
    config.validate()?;
    manifest.validate()?;
    if manifest.num_classes() != config.num_classes {
        return Err(Error::config(format!(
            "config expects {} classes but the manifest has {}",
            config.num_classes,
            manifest.num_classes()
        )));
    }

    let stats = resolve_stats(config, manifest, run_dir)?;
    let weights = if config.class_weighting {
        class_weights(manifest)?
    } else {
        vec![1.0; config.num_classes]
    };

    let train_data = SplitData::load(manifest, Split::Train, config.input_side)?;
    let val_data = SplitData::load(manifest, Split::Val, config.input_side)?;
    let test_data = SplitData::load(manifest, Split::Test, config.input_side)?;

    let mut model = build_model_sided(
        config.backbone,
        config.num_classes,
        config.pretrained,
        seed_value,
        config.input_side,
    )?;
    let mut opt = Adam::new(config.lr_init as f32, config.weight_decay as f32);
    let mut plateau = PlateauScheduler::new(
        config.lr_init,
        config.plateau_factor,
        config.plateau_patience,
    );
    let mut stopper = EarlyStopper::new(config.early_stop_patience);

    let ckpt_base = run_dir.join("checkpoints/best");
    let mut best_val_loss = f64::INFINITY;
    let mut logs: Vec<EpochLog> = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    let n_train = train_data.len();
    for epoch in 1..=config.max_epochs {
        let lr_in_effect = plateau.lr();
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut seed::rng(
            seed_value,
            &[seed::stream::EPOCH_SHUFFLE, epoch as u64],
        ));

        let mut train_num = 0.0f64;
        let mut train_den = 0.0f64;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let (batch, labels) = assemble_batch(
                &train_data,
                chunk,
                &stats,
                config
                    .augment_for_split(Split::Train)
                    .map(|p| (p, seed_value, epoch)),
            )?;
            let logits = model.forward(&batch, true)?;
            let (loss, dlogits) = weighted_cross_entropy(&logits, &labels, &weights);
            if !loss.is_finite() {
                return Err(Error::Train(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_idx}"
                )));
            }
            let batch_w: f64 = labels.iter().map(|&y| weights[y] as f64).sum();
            train_num += loss as f64 * batch_w;
            train_den += batch_w;
            model.zero_grad();
            model.backward(&dlogits, None);
            opt.step(|f| model.visit_params(f));
        }

        let (val_loss, val_accuracy, _) =
            evaluate(&mut model, &val_data, &stats, &weights, config.batch_size)?;
        logs.push(EpochLog {
            epoch,
            train_loss: train_num / train_den,
            val_loss,
            val_accuracy,
            lr: lr_in_effect,
        });

        if val_loss < best_val_loss {
            best_val_loss = val_loss;
            let meta = CheckpointMeta {
                epoch,
                val_loss,
                val_accuracy,
                seed: seed_value,
                config_hash: config_hash.to_string(),
                stats_ref: "stats.json".to_string(),
            };
            save_checkpoint(&mut model, &meta, &ckpt_base)?;
        }

        plateau.observe(val_loss);
        opt.set_lr(plateau.lr() as f32);

        if stopper.observe(val_accuracy) {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }

    save_epoch_logs(&logs, &run_dir.join("epochs.csv"))?;

    // Logits come from the best checkpoint, not the final state.
    let (mut best_model, _, _) = load_checkpoint(&ckpt_base, Some(config_hash))?;
    let (_, _, val_logits) =
        evaluate(&mut best_model, &val_data, &stats, &weights, config.batch_size)?;
    let (_, _, test_logits) =
        evaluate(&mut best_model, &test_data, &stats, &weights, config.batch_size)?;
    let val_path = run_dir.join("logits/val.csv");
    let test_path = run_dir.join("logits/test.csv");
    logit_matrix_for(&val_data, val_logits)?.save_csv(&val_path)?;
    logit_matrix_for(&test_data, test_logits)?.save_csv(&test_path)?;

    Ok(RunResult {
        seed: seed_value,
        logs,
        best_checkpoint: ckpt_base,
        best_val_loss,
        stop_reason,
        val_logits_path: val_path,
        test_logits_path: test_path,
    })
}

pub fn save_epoch_logs(logs: &[EpochLog], path: &Path) -> Result<()> {
    use std::fmt::Write as _;
    let mut body = String::from("epoch,train_loss,val_loss,val_accuracy,lr\n");
    for log in logs {
        let _ = writeln!(
            body,
            "{},{},{},{},{}",
            log.epoch, log.train_loss, log.val_loss, log.val_accuracy, log.lr
        );
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn load_epoch_logs(path: &Path) -> Result<Vec<EpochLog>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = raw.lines();
    let header = lines.next().unwrap_or_default();
    if header != "epoch,train_loss,val_loss,val_accuracy,lr" {
        return Err(Error::Csv {
            path: path.into(),
            msg: format!("unexpected header {header:?}"),
        });
    }
    let mut logs = Vec::new();
    for line in lines {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(Error::Csv {
                path: path.into(),
                msg: format!("bad row {line:?}"),
            });
        }
        let parse_err = |what: &str| Error::Csv {
            path: path.into(),
            msg: format!("bad {what} in {line:?}"),
        };
        logs.push(EpochLog {
            epoch: parts[0].parse().map_err(|_| parse_err("epoch"))?,
            train_loss: parts[1].parse().map_err(|_| parse_err("train_loss"))?,
            val_loss: parts[2].parse().map_err(|_| parse_err("val_loss"))?,
            val_accuracy: parts[3].parse().map_err(|_| parse_err("val_accuracy"))?,
            lr: parts[4].parse().map_err(|_| parse_err("lr"))?,
        });
    }
    Ok(logs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetric {
    pub seed: u64,
    pub value: f64,
}

/// Per-seed summary of a sweep: test accuracy for histology, test-video
/// accuracy for colonoscopy, with mean and population std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub metric_name: String,
    pub per_seed: Vec<SeedMetric>,
    pub mean: f64,
    pub std: f64,
}

impl SweepSummary {
    pub fn from_values(metric_name: &str, per_seed: Vec<SeedMetric>) -> Self {
        let n = per_seed.len() as f64;
        let mean = per_seed.iter().map(|m| m.value).sum::<f64>() / n;
        let var = per_seed
            .iter()
            .map(|m| (m.value - mean) * (m.value - mean))
            .sum::<f64>()
            / n;
        SweepSummary {
            metric_name: metric_name.to_string(),
            per_seed,
            mean,
            std: var.sqrt(),
        }
    }
}

/// The evaluation metric a sweep reports per seed, computed from a test
/// logit CSV: plain accuracy for histology, per-video accuracy for
/// colonoscopy.
pub fn seed_metric_from_logits(path: &Path, modality: Modality) -> Result<f64> {
    let logits = LogitMatrix::load_csv(path)?;
    match modality {
        Modality::Histology => {
            let report = crate::metrics::classification_report(&logits.values, &logits.labels)?;
            Ok(report.accuracy)
        }
        Modality::Colonoscopy => {
            let probs = crate::calibrate::apply_temperature(&logits, 1.0)?;
            let mut vids = Vec::with_capacity(logits.len());
            let mut truths = std::collections::BTreeMap::new();
            for i in 0..logits.len() {
                let vid = logits.video_ids[i].clone().ok_or_else(|| {
                    Error::Metric(format!(
                        "sample {:?} has no video_id; cannot compute video accuracy",
                        logits.sample_ids[i]
                    ))
                })?;
                truths.insert(vid.clone(), logits.labels[i]);
                vids.push(vid);
            }
            let preds = crate::metrics::aggregate_video(&probs, &vids)?;
            crate::metrics::video_accuracy(&preds, &truths)
        }
    }
}

/// One independent [`train`] per configured seed, each in
/// `sweep_dir/<seed>/`.
pub fn run_seed_sweep(
    config: &ModalityConfig,
    manifest: &DatasetManifest,
    sweep_dir: &Path,
    config_hash: &str,
) -> Result<(Vec<RunResult>, SweepSummary)> {
    config.validate()?;
    let mut results = Vec::new();
    let mut metrics = Vec::new();
    for &seed_value in &config.seeds {
        let run_dir = sweep_dir.join(seed_value.to_string());
        let result = train(config, manifest, seed_value, &run_dir, config_hash)?;
        let value = seed_metric_from_logits(&result.test_logits_path, config.modality)?;
        metrics.push(SeedMetric {
            seed: seed_value,
            value,
        });
        results.push(result);
    }
    let metric_name = match config.modality {
        Modality::Histology => "test_accuracy",
        Modality::Colonoscopy => "video_accuracy",
    };
    Ok((results, SweepSummary::from_values(metric_name, metrics)))
}
