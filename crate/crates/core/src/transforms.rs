//! Image preprocessing: per-channel normalization, bilinear resizing, and the
//! train-only stochastic augmentation policy.
//!
//! All pixel math happens in `[0, 1]` scale. Images decoded from disk are
//! converted as `v / 255` before anything else touches them; normalization
//! stats are expressed in the same scale.

use std::path::Path;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{DatasetManifest, Split};

/// Default backbone input side.
pub const DEFAULT_INPUT_SIDE: usize = 224;

/// ImageNet protocol constants, unit pixel scale.
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

const STD_FLOOR: f32 = 1e-6;

/// Per-channel mean and standard deviation in `[0, 1]` pixel scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl NormalizationStats {
    pub fn new(mean: [f32; 3], std: [f32; 3]) -> Self {
        let std = std.map(|s| s.max(STD_FLOOR));
        NormalizationStats { mean, std }
    }

    pub fn imagenet() -> Self {
        NormalizationStats::new(IMAGENET_MEAN, IMAGENET_STD)
    }

    /// Persist as `{"mean": [...], "std": [...], "scale": "unit"}`.
    pub fn save_json(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct StatsFile<'a> {
            mean: &'a [f32; 3],
            std: &'a [f32; 3],
            scale: &'static str,
        }
        let body = serde_json::to_string_pretty(&StatsFile {
            mean: &self.mean,
            std: &self.std,
            scale: "unit",
        })
        .expect("stats serialize");
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct StatsFile {
            mean: [f32; 3],
            std: [f32; 3],
            #[serde(default)]
            scale: Option<String>,
        }
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: StatsFile = serde_json::from_str(&raw).map_err(|e| Error::Json {
            path: path.into(),
            msg: e.to_string(),
        })?;
        if let Some(scale) = &f.scale {
            if scale != "unit" {
                return Err(Error::config(format!(
                    "stats file {} has unsupported scale {scale:?}, expected \"unit\"",
                    path.display()
                )));
            }
        }
        Ok(NormalizationStats::new(f.mean, f.std))
    }
}

/// An RGB image as `(height, width, 3)` floats.
///
/// Values are in `[0, 1]` before normalization and unbounded after.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub data: Array3<f32>,
}

impl ImageTensor {
    pub fn new(data: Array3<f32>) -> Self {
        assert_eq!(data.shape()[2], 3, "ImageTensor is RGB");
        ImageTensor { data }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        ImageTensor {
            data: Array3::zeros((height, width, 3)),
        }
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let mut data = Array3::zeros((h as usize, w as usize, 3));
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                data[[y as usize, x as usize, c]] = p[c] as f32 / 255.0;
            }
        }
        ImageTensor { data }
    }

    /// Quantize back to 8-bit RGB (round to nearest, clamped).
    pub fn to_rgb8(&self) -> image::RgbImage {
        let (h, w) = (self.height(), self.width());
        let mut img = image::RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let px = image::Rgb([
                    (self.data[[y, x, 0]].clamp(0.0, 1.0) * 255.0).round() as u8,
                    (self.data[[y, x, 1]].clamp(0.0, 1.0) * 255.0).round() as u8,
                    (self.data[[y, x, 2]].clamp(0.0, 1.0) * 255.0).round() as u8,
                ]);
                img.put_pixel(x as u32, y as u32, px);
            }
        }
        img
    }
}

/// Decode an image file into a `[0, 1]` tensor.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path)
        .map_err(|e| Error::config(format!("cannot decode image {}: {e}", path.display())))?
        .to_rgb8();
    Ok(ImageTensor::from_rgb8(&img))
}

/// Train-only stochastic augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    /// Probability of a horizontal flip.
    pub hflip_prob: f32,
    /// Rotation angle drawn uniformly in `[-max, +max]` degrees.
    pub max_rotation_deg: f32,
    /// Brightness/contrast/saturation factors drawn uniformly in
    /// `[1 - strength, 1 + strength]`.
    pub jitter_strength: f32,
}

impl AugmentPolicy {
    pub fn identity() -> Self {
        AugmentPolicy {
            hflip_prob: 0.0,
            max_rotation_deg: 0.0,
            jitter_strength: 0.0,
        }
    }

    /// Histology default: flips, moderate rotation, moderate jitter.
    pub fn histology() -> Self {
        AugmentPolicy {
            hflip_prob: 0.5,
            max_rotation_deg: 15.0,
            jitter_strength: 0.10,
        }
    }

    /// Colonoscopy default: intensity constrained for video-derived frames.
    pub fn colonoscopy() -> Self {
        AugmentPolicy {
            hflip_prob: 0.5,
            max_rotation_deg: 5.0,
            jitter_strength: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::config("hflip_prob must be in [0, 1]"));
        }
        if self.max_rotation_deg < 0.0 {
            return Err(Error::config("max_rotation_deg must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.jitter_strength) {
            return Err(Error::config("jitter_strength must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Per-channel mean and population standard deviation over every pixel of
/// every image in the given split, in `[0, 1]` scale. Std is floored at 1e-6.
pub fn compute_stats(manifest: &DatasetManifest, split: Split) -> Result<NormalizationStats> {
    let records: Vec<_> = manifest.records_in(split).collect();
    if records.is_empty() {
        return Err(Error::config(format!(
            "cannot compute stats: split {split} is empty"
        )));
    }
    let mut sum = [0.0f64; 3];
    let mut sumsq = [0.0f64; 3];
    let mut count = 0u64;
    for rec in records {
        let img = load_image(&rec.source_path)?;
        for px in img.data.rows() {
            for c in 0..3 {
                let v = px[c] as f64;
                sum[c] += v;
                sumsq[c] += v * v;
            }
        }
        count += (img.height() * img.width()) as u64;
    }
    let mut mean = [0.0f32; 3];
    let mut std = [0.0f32; 3];
    for c in 0..3 {
        let m = sum[c] / count as f64;
        let var = (sumsq[c] / count as f64 - m * m).max(0.0);
        mean[c] = m as f32;
        std[c] = var.sqrt() as f32;
    }
    Ok(NormalizationStats::new(mean, std))
}

/// Channel-wise `(v - mean_c) / std_c`.
pub fn normalize(img: &ImageTensor, stats: &NormalizationStats) -> ImageTensor {
    let mut out = img.data.clone();
    for c in 0..3 {
        let (m, s) = (stats.mean[c], stats.std[c]);
        out.slice_mut(ndarray::s![.., .., c]).mapv_inplace(|v| (v - m) / s);
    }
    ImageTensor { data: out }
}

/// Inverse of [`normalize`].
pub fn denormalize(img: &ImageTensor, stats: &NormalizationStats) -> ImageTensor {
    let mut out = img.data.clone();
    for c in 0..3 {
        let (m, s) = (stats.mean[c], stats.std[c]);
        out.slice_mut(ndarray::s![.., .., c]).mapv_inplace(|v| v * s + m);
    }
    ImageTensor { data: out }
}

/// Bilinear resize of a single plane using half-pixel centers
/// (corner-aligned false). Source coordinates are clamped at the borders.
pub fn resize_plane(src: &Array2<f32>, out_h: usize, out_w: usize) -> Array2<f32> {
    let (in_h, in_w) = src.dim();
    assert!(in_h > 0 && in_w > 0, "resize_plane: empty input");
    let mut out = Array2::zeros((out_h, out_w));
    let sy = in_h as f32 / out_h as f32;
    let sx = in_w as f32 / out_w as f32;
    for oy in 0..out_h {
        let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (in_h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(in_h - 1);
        let wy = fy - y0 as f32;
        for ox in 0..out_w {
            let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (in_w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(in_w - 1);
            let wx = fx - x0 as f32;
            let top = src[[y0, x0]] * (1.0 - wx) + src[[y0, x1]] * wx;
            let bot = src[[y1, x0]] * (1.0 - wx) + src[[y1, x1]] * wx;
            out[[oy, ox]] = top * (1.0 - wy) + bot * wy;
        }
    }
    out
}

/// Bilinear resize to `side x side x 3` with half-pixel centers.
pub fn resize_bilinear(img: &ImageTensor, side: usize) -> ImageTensor {
    resize_bilinear_hw(img, side, side)
}

pub fn resize_bilinear_hw(img: &ImageTensor, out_h: usize, out_w: usize) -> ImageTensor {
    let mut out = Array3::zeros((out_h, out_w, 3));
    for c in 0..3 {
        let plane = img.data.slice(ndarray::s![.., .., c]).to_owned();
        let resized = resize_plane(&plane, out_h, out_w);
        out.slice_mut(ndarray::s![.., .., c]).assign(&resized);
    }
    ImageTensor { data: out }
}

/// Mirror an out-of-range index back into `[0, n)` (symmetric reflection).
fn reflect(i: i64, n: i64) -> i64 {
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i;
        }
    }
}

fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Apply the stochastic train-time augmentation, in order: horizontal flip,
/// rotation with reflection padding, then brightness/contrast/saturation
/// jitter. The output is clamped to `[0, 1]`.
///
/// Five random draws are consumed per call regardless of policy values, so a
/// given rng state always maps to the same downstream stream.
pub fn augment(img: &ImageTensor, policy: &AugmentPolicy, rng: &mut ChaCha8Rng) -> ImageTensor {
    let u_flip: f32 = rng.random();
    let theta_deg: f32 = rng.random_range(-policy.max_rotation_deg..=policy.max_rotation_deg);
    let j = policy.jitter_strength;
    let f_bright: f32 = rng.random_range(1.0 - j..=1.0 + j);
    let f_contrast: f32 = rng.random_range(1.0 - j..=1.0 + j);
    let f_sat: f32 = rng.random_range(1.0 - j..=1.0 + j);

    let mut out = img.data.clone();
    let (h, w) = (img.height(), img.width());

    if u_flip < policy.hflip_prob {
        let mut flipped = Array3::zeros((h, w, 3));
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    flipped[[y, x, c]] = out[[y, w - 1 - x, c]];
                }
            }
        }
        out = flipped;
    }

    if theta_deg != 0.0 {
        let theta = theta_deg.to_radians();
        let (sin, cos) = (theta.sin(), theta.cos());
        let cy = (h as f32 - 1.0) / 2.0;
        let cx = (w as f32 - 1.0) / 2.0;
        let src = out.clone();
        for y in 0..h {
            for x in 0..w {
                // Inverse rotation of the destination pixel into the source.
                let dy = y as f32 - cy;
                let dx = x as f32 - cx;
                let sy = cy + (-sin * dx + cos * dy);
                let sx = cx + (cos * dx + sin * dy);
                let y0 = sy.floor() as i64;
                let x0 = sx.floor() as i64;
                let wy = sy - y0 as f32;
                let wx = sx - x0 as f32;
                for c in 0..3 {
                    let sample = |yy: i64, xx: i64| -> f32 {
                        src[[
                            reflect(yy, h as i64) as usize,
                            reflect(xx, w as i64) as usize,
                            c,
                        ]]
                    };
                    let top = sample(y0, x0) * (1.0 - wx) + sample(y0, x0 + 1) * wx;
                    let bot = sample(y0 + 1, x0) * (1.0 - wx) + sample(y0 + 1, x0 + 1) * wx;
                    out[[y, x, c]] = top * (1.0 - wy) + bot * wy;
                }
            }
        }
    }

    if j > 0.0 {
        // Brightness.
        out.mapv_inplace(|v| v * f_bright);
        // Contrast, blended against the mean gray level of the image.
        let mut gray_sum = 0.0f64;
        for y in 0..h {
            for x in 0..w {
                gray_sum += luma(out[[y, x, 0]], out[[y, x, 1]], out[[y, x, 2]]) as f64;
            }
        }
        let gray_mean = (gray_sum / (h * w) as f64) as f32;
        out.mapv_inplace(|v| (v - gray_mean) * f_contrast + gray_mean);
        // Saturation, blended against per-pixel luma.
        for y in 0..h {
            for x in 0..w {
                let l = luma(out[[y, x, 0]], out[[y, x, 1]], out[[y, x, 2]]);
                for c in 0..3 {
                    let v = out[[y, x, c]];
                    out[[y, x, c]] = (v - l) * f_sat + l;
                }
            }
        }
    }

    out.mapv_inplace(|v| v.clamp(0.0, 1.0));
    ImageTensor { data: out }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn const_image(h: usize, w: usize, rgb: [f32; 3]) -> ImageTensor {
        let mut img = ImageTensor::zeros(h, w);
        for (c, &v) in rgb.iter().enumerate() {
            img.data.slice_mut(ndarray::s![.., .., c]).fill(v);
        }
        img
    }

    /// Direct evaluation of the half-pixel bilinear formula, kept separate
    /// from the production kernel on purpose.
    fn bilinear_oracle(src: &Array2<f32>, out_h: usize, out_w: usize) -> Array2<f32> {
        let (in_h, in_w) = src.dim();
        let mut out = Array2::zeros((out_h, out_w));
        for oy in 0..out_h {
            for ox in 0..out_w {
                let fy = ((oy as f64 + 0.5) * in_h as f64 / out_h as f64 - 0.5)
                    .clamp(0.0, in_h as f64 - 1.0);
                let fx = ((ox as f64 + 0.5) * in_w as f64 / out_w as f64 - 0.5)
                    .clamp(0.0, in_w as f64 - 1.0);
                let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(in_h - 1), (x0 + 1).min(in_w - 1));
                let (wy, wx) = (fy - y0 as f64, fx - x0 as f64);
                let v = src[[y0, x0]] as f64 * (1.0 - wy) * (1.0 - wx)
                    + src[[y0, x1]] as f64 * (1.0 - wy) * wx
                    + src[[y1, x0]] as f64 * wy * (1.0 - wx)
                    + src[[y1, x1]] as f64 * wy * wx;
                out[[oy, ox]] = v as f32;
            }
        }
        out
    }

    #[test]
    fn stats_of_constant_images_clamp_std() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = crate::ingest::test_support::manifest_of_images(
            dir.path(),
            &[([128u8, 128, 128], 0), ([128, 128, 128], 1)],
        );
        let stats = compute_stats(&manifest, Split::Train).unwrap();
        for c in 0..3 {
            assert_abs_diff_eq!(stats.mean[c], 128.0 / 255.0, epsilon = 1e-6);
            assert_eq!(stats.std[c], 1e-6);
        }
    }

    #[test]
    fn stats_two_pixel_hand_case() {
        // Two 1x1 images with R = 0.0 and R = 1.0: mean 0.5, population std 0.5.
        let dir = tempfile::tempdir().unwrap();
        let manifest = crate::ingest::test_support::manifest_of_images(
            dir.path(),
            &[([0u8, 0, 0], 0), ([255, 0, 0], 1)],
        );
        let stats = compute_stats(&manifest, Split::Train).unwrap();
        assert_abs_diff_eq!(stats.mean[0], 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(stats.std[0], 0.5, epsilon = 1e-6);
    }

    #[test]
    fn stats_on_empty_split_errors() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = crate::ingest::test_support::manifest_of_images(
            dir.path(),
            &[([1u8, 2, 3], 0)],
        );
        let err = compute_stats(&manifest, Split::Test).unwrap_err();
        assert!(err.to_string().contains("test"));
    }

    #[test]
    fn normalize_mean_pixel_is_zero_and_identity_stats() {
        let stats = NormalizationStats::new([0.3, 0.4, 0.5], [0.2, 0.2, 0.2]);
        let img = const_image(2, 2, [0.3, 0.4, 0.5]);
        let out = normalize(&img, &stats);
        assert!(out.data.iter().all(|&v| v.abs() < 1e-6));

        let ident = NormalizationStats::new([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]);
        let img = const_image(2, 2, [0.25, 0.5, 0.75]);
        assert_eq!(normalize(&img, &ident), img);
    }

    #[test]
    fn normalize_imagenet_hand_value() {
        let stats = NormalizationStats::imagenet();
        let img = const_image(1, 1, [0.714, 0.0, 0.0]);
        let out = normalize(&img, &stats);
        assert_abs_diff_eq!(out.data[[0, 0, 0]], 1.0, epsilon = 1e-5);
    }

    #[test]
    fn resize_identity_is_exact() {
        let mut img = ImageTensor::zeros(224, 224);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i % 251) as f32 / 250.0;
        }
        let out = resize_bilinear(&img, 224);
        assert_eq!(out, img);
    }

    #[test]
    fn resize_preserves_constants() {
        let img = const_image(28, 28, [0.2, 0.5, 0.8]);
        let out = resize_bilinear(&img, 224);
        assert_eq!(out.height(), 224);
        for y in [0, 111, 223] {
            for x in [0, 111, 223] {
                assert_abs_diff_eq!(out.data[[y, x, 0]], 0.2, epsilon = 1e-6);
                assert_abs_diff_eq!(out.data[[y, x, 1]], 0.5, epsilon = 1e-6);
                assert_abs_diff_eq!(out.data[[y, x, 2]], 0.8, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn resize_checkerboard_matches_bilinear_oracle() {
        let src = array![[1.0f32, 0.0], [0.0, 1.0]];
        let got = resize_plane(&src, 4, 4);
        let want = bilinear_oracle(&src, 4, 4);
        for (g, w) in got.iter().zip(want.iter()) {
            assert_abs_diff_eq!(g, w, epsilon = 1e-6);
        }
        // Frozen hand value at (1,1): fy = fx = 0.25, so
        // 0.75*0.75*1 + 0.25*0.25*1 = 0.625.
        assert_abs_diff_eq!(got[[1, 1]], 0.625, epsilon = 1e-6);
    }

    #[test]
    fn augment_identity_policy_is_identity() {
        let mut rng = crate::seed::rng(1, &[crate::seed::stream::AUGMENT]);
        let mut img = ImageTensor::zeros(8, 8);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i % 17) as f32 / 16.0;
        }
        let out = augment(&img, &AugmentPolicy::identity(), &mut rng);
        assert_eq!(out, img);
    }

    #[test]
    fn forced_flip_is_an_involution() {
        let policy = AugmentPolicy {
            hflip_prob: 1.0,
            max_rotation_deg: 0.0,
            jitter_strength: 0.0,
        };
        let mut img = ImageTensor::zeros(4, 6);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i % 11) as f32 / 10.0;
        }
        let mut rng1 = crate::seed::rng(3, &[1]);
        let once = augment(&img, &policy, &mut rng1);
        let mut rng2 = crate::seed::rng(4, &[2]);
        let twice = augment(&once, &policy, &mut rng2);
        assert_eq!(twice, img);
        assert_ne!(once, img);
    }

    #[test]
    fn augment_fixed_seed_is_bit_identical() {
        let policy = AugmentPolicy::histology();
        let mut img = ImageTensor::zeros(16, 16);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = ((i * 7) % 19) as f32 / 18.0;
        }
        let a = augment(&img, &policy, &mut crate::seed::rng(9, &[5]));
        let b = augment(&img, &policy, &mut crate::seed::rng(9, &[5]));
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn normalize_denormalize_roundtrips(
            vals in proptest::collection::vec(0.0f32..=1.0, 12),
            mean in proptest::collection::vec(0.0f32..=1.0, 3),
            std in proptest::collection::vec(0.01f32..=2.0, 3),
        ) {
            let img = ImageTensor::new(
                Array3::from_shape_vec((2, 2, 3), vals).unwrap(),
            );
            let stats = NormalizationStats::new(
                [mean[0], mean[1], mean[2]],
                [std[0], std[1], std[2]],
            );
            let back = denormalize(&normalize(&img, &stats), &stats);
            for (a, b) in back.data.iter().zip(img.data.iter()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn affine_inputs_recover_under_matching_stats(
            vals in proptest::collection::vec(0.0f32..=1.0, 12),
            a in 0.05f32..=0.9,
            b in 0.0f32..=0.1,
        ) {
            // normalize(a*x + b) with stats (mean=b, std=a) recovers x.
            let x = ImageTensor::new(Array3::from_shape_vec((2, 2, 3), vals).unwrap());
            let scaled = ImageTensor::new(x.data.mapv(|v| a * v + b));
            let stats = NormalizationStats::new([b, b, b], [a, a, a]);
            let out = normalize(&scaled, &stats);
            for (got, want) in out.data.iter().zip(x.data.iter()) {
                prop_assert!((got - want).abs() < 1e-4);
            }
        }

        #[test]
        fn augment_keeps_unit_range(
            vals in proptest::collection::vec(0.0f32..=1.0, 48),
            seed in 0u64..1000,
        ) {
            let img = ImageTensor::new(Array3::from_shape_vec((4, 4, 3), vals).unwrap());
            let out = augment(
                &img,
                &AugmentPolicy::histology(),
                &mut crate::seed::rng(seed, &[7]),
            );
            prop_assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
