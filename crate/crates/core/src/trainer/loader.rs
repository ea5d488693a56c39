//! Split loading and batch assembly.
//!
//! Images are decoded once and cached when they fit a byte budget: at source
//! resolution as raw RGB when that is small (histology patches), at target
//! resolution as f32 when the sources are large (video frames), and straight
//! from disk per epoch otherwise. All three paths produce bit-identical
//! batches because the pipeline order (decode, resize, augment, normalize)
//! never changes.

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::ingest::{DatasetManifest, Split};
use crate::seed;
use crate::transforms::{
    augment, load_image, normalize, resize_bilinear, AugmentPolicy, ImageTensor,
    NormalizationStats,
};

/// Default in-memory cache budget; override with `COLOPATH_CACHE_BYTES`.
const DEFAULT_CACHE_BYTES: u64 = 2 << 30;

enum Store {
    /// Raw 8-bit RGB at source resolution.
    SourceU8(Vec<(usize, usize, Vec<u8>)>),
    /// Float tensors already resized to the model input.
    TargetF32(Vec<Array3<f32>>),
    /// Re-decode from disk on every access.
    Stream(Vec<std::path::PathBuf>),
}

pub struct SplitData {
    pub labels: Vec<usize>,
    pub sample_ids: Vec<String>,
    pub video_ids: Vec<Option<String>>,
    store: Store,
    input_side: usize,
}

impl std::fmt::Debug for SplitData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SplitData")
            .field("len", &self.labels.len())
            .field("input_side", &self.input_side)
            .finish_non_exhaustive()
    }
}

fn cache_budget() -> u64 {
    std::env::var("COLOPATH_CACHE_BYTES")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(DEFAULT_CACHE_BYTES)
}

impl SplitData {
    pub fn load(
        manifest: &DatasetManifest,
        split: Split,
        input_side: usize,
    ) -> Result<SplitData> {
        let records: Vec<_> = manifest.records_in(split).collect();
        if records.is_empty() {
            return Err(Error::Train(format!("split {split} is empty")));
        }
        let budget = cache_budget();

        // Estimate source bytes from PNG headers without decoding.
        let mut source_bytes: u64 = 0;
        for rec in &records {
            let (w, h) = image::image_dimensions(&rec.source_path).map_err(|e| {
                Error::config(format!(
                    "cannot read image header {}: {e}",
                    rec.source_path.display()
                ))
            })?;
            source_bytes += (w as u64) * (h as u64) * 3;
        }
        let target_bytes = records.len() as u64 * (input_side * input_side * 3 * 4) as u64;

        let store = if source_bytes <= budget {
            let mut images = Vec::with_capacity(records.len());
            for rec in &records {
                let img = image::open(&rec.source_path)
                    .map_err(|e| {
                        Error::config(format!(
                            "cannot decode {}: {e}",
                            rec.source_path.display()
                        ))
                    })?
                    .to_rgb8();
                let (w, h) = img.dimensions();
                images.push((h as usize, w as usize, img.into_raw()));
            }
            Store::SourceU8(images)
        } else if target_bytes <= budget {
            let mut images = Vec::with_capacity(records.len());
            for rec in &records {
                let img = load_image(&rec.source_path)?;
                images.push(resize_bilinear(&img, input_side).data);
            }
            Store::TargetF32(images)
        } else {
            Store::Stream(records.iter().map(|r| r.source_path.clone()).collect())
        };

        Ok(SplitData {
            labels: records.iter().map(|r| r.label).collect(),
            sample_ids: records.iter().map(|r| r.sample_id.clone()).collect(),
            video_ids: records.iter().map(|r| r.video_id.clone()).collect(),
            store,
            input_side,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The `[0, 1]` image at model input size, before augmentation.
    pub fn image(&self, idx: usize) -> Result<ImageTensor> {
        match &self.store {
            Store::SourceU8(images) => {
                let (h, w, raw) = &images[idx];
                let mut data = Array3::zeros((*h, *w, 3));
                for y in 0..*h {
                    for x in 0..*w {
                        for c in 0..3 {
                            data[[y, x, c]] = raw[(y * w + x) * 3 + c] as f32 / 255.0;
                        }
                    }
                }
                Ok(resize_bilinear(&ImageTensor::new(data), self.input_side))
            }
            Store::TargetF32(images) => Ok(ImageTensor::new(images[idx].clone())),
            Store::Stream(paths) => {
                let img = load_image(&paths[idx])?;
                Ok(resize_bilinear(&img, self.input_side))
            }
        }
    }
}

/// Assemble an NCHW batch for the given sample indices. Augmentation (train
/// only) draws from a stream keyed by `(seed, epoch, sample index)`, so the
/// batch content is independent of batching and ordering.
pub fn assemble_batch(
    data: &SplitData,
    indices: &[usize],
    stats: &NormalizationStats,
    augment_with: Option<(&AugmentPolicy, u64, usize)>,
) -> Result<(crate::nn::Tensor4, Vec<usize>)> {
    let side = data.input_side;
    let mut batch = crate::nn::Tensor4::zeros((indices.len(), 3, side, side));
    let mut labels = Vec::with_capacity(indices.len());
    for (bi, &idx) in indices.iter().enumerate() {
        let mut img = data.image(idx)?;
        if let Some((policy, seed_value, epoch)) = augment_with {
            let mut rng = seed::rng(
                seed_value,
                &[seed::stream::AUGMENT, epoch as u64, idx as u64],
            );
            img = augment(&img, policy, &mut rng);
        }
        let img = normalize(&img, stats);
        for y in 0..side {
            for x in 0..side {
                for c in 0..3 {
                    batch[[bi, c, y, x]] = img.data[[y, x, c]];
                }
            }
        }
        labels.push(data.labels[idx]);
    }
    Ok((batch, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_synthetic, SyntheticSpec};

    fn small_manifest(dir: &std::path::Path) -> DatasetManifest {
        generate_synthetic(
            &SyntheticSpec {
                num_classes: 2,
                train_per_class: 3,
                val_per_class: 1,
                test_per_class: 1,
                image_side: 32,
                noise_std: 0.0,
            },
            1,
            dir,
        )
        .unwrap()
    }

    #[test]
    fn cached_and_streamed_batches_are_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = small_manifest(dir.path());
        let stats = NormalizationStats::new([0.4, 0.4, 0.4], [0.3, 0.3, 0.3]);

        let cached = SplitData::load(&manifest, Split::Train, 32).unwrap();
        std::env::set_var("COLOPATH_CACHE_BYTES", "1");
        let streamed = SplitData::load(&manifest, Split::Train, 32).unwrap();
        std::env::remove_var("COLOPATH_CACHE_BYTES");

        let idx: Vec<usize> = (0..cached.len()).collect();
        let policy = AugmentPolicy::histology();
        let (a, la) = assemble_batch(&cached, &idx, &stats, Some((&policy, 7, 2))).unwrap();
        let (b, lb) = assemble_batch(&streamed, &idx, &stats, Some((&policy, 7, 2))).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn augment_stream_is_independent_of_batch_composition() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = small_manifest(dir.path());
        let stats = NormalizationStats::new([0.5, 0.5, 0.5], [0.25, 0.25, 0.25]);
        let data = SplitData::load(&manifest, Split::Train, 32).unwrap();
        let policy = AugmentPolicy::histology();

        let (whole, _) =
            assemble_batch(&data, &[0, 1, 2, 3], &stats, Some((&policy, 3, 1))).unwrap();
        let (tail, _) = assemble_batch(&data, &[2, 3], &stats, Some((&policy, 3, 1))).unwrap();
        for bi in 0..2 {
            for c in 0..3 {
                for y in 0..32 {
                    for x in 0..32 {
                        assert_eq!(tail[[bi, c, y, x]], whole[[bi + 2, c, y, x]]);
                    }
                }
            }
        }
    }

    #[test]
    fn empty_split_is_a_training_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = small_manifest(dir.path());
        manifest.records.retain(|r| r.split != Split::Val);
        let err = SplitData::load(&manifest, Split::Val, 32).unwrap_err();
        assert!(err.to_string().contains("val"));
    }
}
