//! Synthetic planted-pattern datasets.
//!
//! Neither production dataset can be redistributed, so tests run against
//! generated images instead: a bright square placed in a class-specific
//! quadrant over a noisy gray background. The label is recoverable from the
//! square's location alone (for up to four classes), which makes both
//! end-to-end training and heatmap localization checkable without any real
//! data.

use std::path::Path;

use ndarray::Array3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ingest::{DatasetManifest, Modality, SampleRecord, Split, SPLIT_LABEL_FILE};
use crate::seed;
use crate::transforms::ImageTensor;

const BACKGROUND: f32 = 0.2;

/// One bright color per class, cycled for more than eight classes.
const PALETTE: [[f32; 3]; 8] = [
    [0.9, 0.25, 0.25],
    [0.25, 0.9, 0.25],
    [0.25, 0.25, 0.9],
    [0.9, 0.9, 0.25],
    [0.9, 0.25, 0.9],
    [0.25, 0.9, 0.9],
    [0.9, 0.6, 0.25],
    [0.6, 0.25, 0.9],
];

/// Parameters of the generated dataset. The planted signal is a colored
/// square in quadrant `class % 4`, jittered within the quadrant, over a gray
/// background with Gaussian pixel noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub image_side: usize,
    pub noise_std: f32,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("synthetic spec needs num_classes >= 2"));
        }
        if self.image_side < 28 {
            return Err(Error::config("synthetic spec needs image_side >= 28"));
        }
        if self.noise_std < 0.0 {
            return Err(Error::config("noise_std must be >= 0"));
        }
        Ok(())
    }

    fn per_split(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_per_class,
            Split::Val => self.val_per_class,
            Split::Test => self.test_per_class,
        }
    }
}

/// Quadrant that carries class `c`'s square (0 = top-left, 1 = top-right,
/// 2 = bottom-left, 3 = bottom-right).
pub fn quadrant_of_class(class: usize) -> usize {
    class % 4
}

/// Pixel bounds `(y0, y1, x0, x1)` of a quadrant, end-exclusive.
pub fn quadrant_bounds(side: usize, quadrant: usize) -> (usize, usize, usize, usize) {
    let half = side / 2;
    let (y0, y1) = if quadrant < 2 { (0, half) } else { (half, side) };
    let (x0, x1) = if quadrant.is_multiple_of(2) {
        (0, half)
    } else {
        (half, side)
    };
    (y0, y1, x0, x1)
}

fn render(spec: &SyntheticSpec, class: usize, rng: &mut rand_chacha::ChaCha8Rng) -> ImageTensor {
    let side = spec.image_side;
    let mut data = Array3::from_elem((side, side, 3), BACKGROUND);

    let square = side / 4;
    let (y0, y1, x0, x1) = quadrant_bounds(side, quadrant_of_class(class));
    let oy = rng.random_range(y0..=y1 - square);
    let ox = rng.random_range(x0..=x1 - square);
    let color = PALETTE[class % PALETTE.len()];
    for y in oy..oy + square {
        for x in ox..ox + square {
            for c in 0..3 {
                data[[y, x, c]] = color[c];
            }
        }
    }

    if spec.noise_std > 0.0 {
        let normal = Normal::new(0.0f32, spec.noise_std).expect("validated std");
        data.mapv_inplace(|v| (v + normal.sample(rng)).clamp(0.0, 1.0));
    }
    ImageTensor::new(data)
}

/// Generate the dataset under `out_dir` using the same on-disk layout the
/// histology loader expects (`<split>/labels.csv` plus PNGs), and return its
/// manifest. Deterministic for a fixed `(spec, seed)`.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
    seed_value: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    spec.validate()?;
    let mut records = Vec::new();
    for (split_tag, split) in Split::ALL.iter().enumerate() {
        let dir = out_dir.join(split.to_string());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut labels = String::from("filename,label\n");
        for class in 0..spec.num_classes {
            for i in 0..spec.per_split(*split) {
                let mut rng = seed::rng(
                    seed_value,
                    &[
                        seed::stream::SYNTH,
                        split_tag as u64,
                        class as u64,
                        i as u64,
                    ],
                );
                let img = render(spec, class, &mut rng);
                let filename = format!("c{class}_{i:04}.png");
                let path = dir.join(&filename);
                img.to_rgb8()
                    .save(&path)
                    .map_err(|e| Error::config(format!("cannot write {}: {e}", path.display())))?;
                labels.push_str(&format!("{filename},{class}\n"));
                records.push(SampleRecord {
                    sample_id: format!("{split}/{filename}"),
                    source_path: path,
                    label: class,
                    split: *split,
                    video_id: None,
                    frame_time_s: None,
                });
            }
        }
        let labels_path = dir.join(SPLIT_LABEL_FILE);
        std::fs::write(&labels_path, labels).map_err(|e| Error::io(&labels_path, e))?;
    }
    let manifest = DatasetManifest {
        modality: Modality::Histology,
        records,
        class_names: (0..spec.num_classes).map(|c| format!("class_{c}")).collect(),
    };
    manifest.validate()?;
    Ok(manifest)
}
