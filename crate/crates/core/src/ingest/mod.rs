//! Dataset manifests: building them from on-disk histology roots and
//! colonoscopy videos, splitting videos without leakage, and persisting the
//! result as CSV.
//!
//! A manifest is the single source of truth for what the trainer and
//! evaluator see. Invariants (unique sample ids, labels inside the class
//! range, video-pure splits, every class present in train) are enforced by
//! [`DatasetManifest::validate`], which every constructor runs.

mod synthetic;
mod video;

pub use synthetic::{generate_synthetic, quadrant_bounds, quadrant_of_class, SyntheticSpec};
pub use video::{extract_frames, write_y4m_444, DecodedFrames};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const MANIFEST_HEADER: [&str; 6] = [
    "sample_id",
    "source_path",
    "label",
    "split",
    "video_id",
    "frame_time_s",
];

/// Label file expected next to the images of each split directory.
pub const SPLIT_LABEL_FILE: &str = "labels.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        };
        f.write_str(s)
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Manifest(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Histology,
    Colonoscopy,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modality::Histology => f.write_str("histology"),
            Modality::Colonoscopy => f.write_str("colonoscopy"),
        }
    }
}

/// The nine tissue classes of the histology dataset.
pub const HISTOLOGY_CLASSES: [&str; 9] = [
    "background",
    "mucus",
    "smooth muscle",
    "epithelium",
    "immune cells",
    "debris",
    "connective tissue",
    "adipose",
    "cancerous tissue",
];

/// The two colonoscopy classes.
pub const COLONOSCOPY_CLASSES: [&str; 2] = ["polyp", "colitis"];

/// One image (or video frame) in a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub source_path: PathBuf,
    pub label: usize,
    pub split: Split,
    /// Present for video frames only.
    pub video_id: Option<String>,
    /// Integer second this frame was sampled at; present iff `video_id` is.
    pub frame_time_s: Option<u64>,
}

/// Authoritative listing of samples, labels, splits, and video provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub modality: Modality,
    pub records: Vec<SampleRecord>,
    pub class_names: Vec<String>,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Map from video id to its (single) split. Errors if a video straddles
    /// two splits.
    pub fn video_splits(&self) -> Result<BTreeMap<String, Split>> {
        let mut map = BTreeMap::new();
        for rec in &self.records {
            if let Some(vid) = &rec.video_id {
                match map.entry(vid.clone()) {
                    std::collections::btree_map::Entry::Vacant(e) => {
                        e.insert(rec.split);
                    }
                    std::collections::btree_map::Entry::Occupied(e) => {
                        if *e.get() != rec.split {
                            return Err(Error::Manifest(format!(
                                "video {vid} appears in splits {} and {}",
                                e.get(),
                                rec.split
                            )));
                        }
                    }
                }
            }
        }
        Ok(map)
    }

    /// Enforce the manifest invariants.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for rec in &self.records {
            if !seen.insert(rec.sample_id.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate sample_id {:?}",
                    rec.sample_id
                )));
            }
            if rec.label >= self.num_classes() {
                return Err(Error::Manifest(format!(
                    "label {} out of range [0, {}) for sample {:?}",
                    rec.label,
                    self.num_classes(),
                    rec.sample_id
                )));
            }
            if rec.video_id.is_some() != rec.frame_time_s.is_some() {
                return Err(Error::Manifest(format!(
                    "sample {:?}: frame_time_s must be present exactly when video_id is",
                    rec.sample_id
                )));
            }
        }
        self.video_splits()?;
        let train_classes: HashSet<usize> =
            self.records_in(Split::Train).map(|r| r.label).collect();
        for c in 0..self.num_classes() {
            if !train_classes.contains(&c) {
                return Err(Error::Manifest(format!(
                    "class {c} ({:?}) has no samples in the train split",
                    self.class_names[c]
                )));
            }
        }
        Ok(())
    }

    /// Write the record table as CSV with the canonical header.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv {
            path: path.into(),
            msg: e.to_string(),
        })?;
        let werr = |e: csv::Error| Error::Csv {
            path: path.into(),
            msg: e.to_string(),
        };
        w.write_record(MANIFEST_HEADER).map_err(werr)?;
        for rec in &self.records {
            w.write_record([
                rec.sample_id.as_str(),
                &rec.source_path.display().to_string(),
                &rec.label.to_string(),
                &rec.split.to_string(),
                rec.video_id.as_deref().unwrap_or(""),
                &rec.frame_time_s.map(|t| t.to_string()).unwrap_or_default(),
            ])
            .map_err(werr)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(
        path: &Path,
        modality: Modality,
        class_names: Vec<String>,
    ) -> Result<DatasetManifest> {
        let rerr = |msg: String| Error::Csv {
            path: path.into(),
            msg,
        };
        let mut rdr = csv::Reader::from_path(path).map_err(|e| rerr(e.to_string()))?;
        let headers = rdr.headers().map_err(|e| rerr(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
            return Err(rerr(format!("unexpected header {headers:?}")));
        }
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row.map_err(|e| rerr(e.to_string()))?;
            let field = |i: usize| row.get(i).unwrap_or("");
            let label: usize = field(2)
                .parse()
                .map_err(|_| rerr(format!("bad label {:?}", field(2))))?;
            let split = Split::from_str(field(3))?;
            let video_id = match field(4) {
                "" => None,
                v => Some(v.to_string()),
            };
            let frame_time_s = match field(5) {
                "" => None,
                v => Some(
                    v.parse()
                        .map_err(|_| rerr(format!("bad frame_time_s {v:?}")))?,
                ),
            };
            records.push(SampleRecord {
                sample_id: field(0).to_string(),
                source_path: PathBuf::from(field(1)),
                label,
                split,
                video_id,
                frame_time_s,
            });
        }
        let manifest = DatasetManifest {
            modality,
            records,
            class_names,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Persist `manifest.csv` plus a `classes.json` sidecar carrying the
    /// modality and class names. Source paths under `dir` are stored
    /// relative to it, which keeps dataset trees relocatable and makes
    /// regeneration byte-identical.
    pub fn save_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut relative = self.clone();
        for rec in &mut relative.records {
            if let Ok(stripped) = rec.source_path.strip_prefix(dir) {
                rec.source_path = stripped.to_path_buf();
            }
        }
        relative.save_csv(&dir.join("manifest.csv"))?;
        #[derive(Serialize)]
        struct Sidecar<'a> {
            modality: Modality,
            class_names: &'a [String],
        }
        let sidecar = serde_json::to_string_pretty(&Sidecar {
            modality: self.modality,
            class_names: &self.class_names,
        })
        .expect("sidecar serialize");
        let p = dir.join("classes.json");
        std::fs::write(&p, sidecar).map_err(|e| Error::io(p, e))
    }

    pub fn load_from_dir(dir: &Path) -> Result<DatasetManifest> {
        #[derive(Deserialize)]
        struct Sidecar {
            modality: Modality,
            class_names: Vec<String>,
        }
        let p = dir.join("classes.json");
        let raw = std::fs::read_to_string(&p).map_err(|e| {
            Error::config(format!("missing manifest sidecar {}: {e}", p.display()))
        })?;
        let sidecar: Sidecar = serde_json::from_str(&raw).map_err(|e| Error::Json {
            path: p,
            msg: e.to_string(),
        })?;
        let mut manifest =
            Self::load_csv(&dir.join("manifest.csv"), sidecar.modality, sidecar.class_names)?;
        for rec in &mut manifest.records {
            if rec.source_path.is_relative() {
                rec.source_path = dir.join(&rec.source_path);
            }
        }
        Ok(manifest)
    }
}

/// Build a manifest from a histology root laid out as
/// `root/{train,val,test}/labels.csv` plus the image files the label rows
/// name. Split assignment comes from the files; nothing is re-split.
pub fn build_histology_manifest(root: &Path, class_names: &[String]) -> Result<DatasetManifest> {
    let mut records = Vec::new();
    for split in Split::ALL {
        let dir = root.join(split.to_string());
        let labels_path = dir.join(SPLIT_LABEL_FILE);
        if !labels_path.is_file() {
            return Err(Error::config(format!("missing split: {split}")));
        }
        let rerr = |msg: String| Error::Csv {
            path: labels_path.clone(),
            msg,
        };
        let mut rdr =
            csv::Reader::from_path(&labels_path).map_err(|e| rerr(e.to_string()))?;
        let headers = rdr.headers().map_err(|e| rerr(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["filename", "label"] {
            return Err(rerr(format!(
                "expected header filename,label, got {headers:?}"
            )));
        }
        for row in rdr.records() {
            let row = row.map_err(|e| rerr(e.to_string()))?;
            let filename = row.get(0).unwrap_or("").to_string();
            let label: usize = row
                .get(1)
                .unwrap_or("")
                .parse()
                .map_err(|_| rerr(format!("bad label {:?} for {filename}", row.get(1))))?;
            if label >= class_names.len() {
                return Err(Error::Manifest(format!(
                    "label {label} out of range [0, {}) for {split}/{filename}",
                    class_names.len()
                )));
            }
            let source_path = dir.join(&filename);
            if !source_path.is_file() {
                return Err(Error::config(format!(
                    "image listed in {} is missing: {}",
                    labels_path.display(),
                    source_path.display()
                )));
            }
            records.push(SampleRecord {
                sample_id: format!("{split}/{filename}"),
                source_path,
                label,
                split,
                video_id: None,
                frame_time_s: None,
            });
        }
    }
    let manifest = DatasetManifest {
        modality: Modality::Histology,
        records,
        class_names: class_names.to_vec(),
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Stratified-by-class, video-level random split. All frames of a video land
/// in one split; assignment is a pure function of `(records, ratios, seed)`.
///
/// Within each class, videos are allocated to splits by largest remainder on
/// `count * ratio`, then topped up so every split with a nonzero ratio holds
/// at least one video of the class.
pub fn split_videos(
    records: &[SampleRecord],
    ratios: (f64, f64, f64),
    seed: u64,
    class_names: &[String],
) -> Result<DatasetManifest> {
    let (rt, rv, rs) = ratios;
    if rt < 0.0 || rv < 0.0 || rs < 0.0 || (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "split ratios must be non-negative and sum to 1, got {ratios:?}"
        )));
    }
    let ratio = [rt, rv, rs];
    let nonzero: Vec<usize> = (0..3).filter(|&i| ratio[i] > 0.0).collect();

    // Group videos and their class labels.
    let mut video_class: BTreeMap<String, usize> = BTreeMap::new();
    for rec in records {
        let vid = rec.video_id.as_ref().ok_or_else(|| {
            Error::Manifest(format!("record {:?} has no video_id", rec.sample_id))
        })?;
        match video_class.entry(vid.clone()) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(rec.label);
            }
            std::collections::btree_map::Entry::Occupied(e) => {
                if *e.get() != rec.label {
                    return Err(Error::Manifest(format!(
                        "video {vid} carries two labels ({} and {})",
                        e.get(),
                        rec.label
                    )));
                }
            }
        }
    }

    let mut by_class: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (vid, class) in &video_class {
        by_class.entry(*class).or_default().push(vid.clone());
    }

    let mut rng = seed::rng(seed, &[seed::stream::SPLIT_VIDEOS]);
    let mut assignment: HashMap<String, Split> = HashMap::new();
    for (&class, videos) in by_class.iter_mut() {
        if videos.len() < nonzero.len() {
            let name = class_names
                .get(class)
                .map(|s| s.as_str())
                .unwrap_or("unknown");
            return Err(Error::Manifest(format!(
                "class {class} ({name}) has {} videos but {} splits require at least one",
                videos.len(),
                nonzero.len()
            )));
        }
        videos.sort();
        videos.shuffle(&mut rng);
        let n = videos.len();

        // Largest-remainder allocation.
        let mut counts = [0usize; 3];
        let mut fracs = [0.0f64; 3];
        for i in 0..3 {
            let target = n as f64 * ratio[i];
            counts[i] = target.floor() as usize;
            fracs[i] = target - target.floor();
        }
        let mut leftover = n - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| fracs[b].partial_cmp(&fracs[a]).unwrap().then(a.cmp(&b)));
        for &i in &order {
            if leftover == 0 {
                break;
            }
            if ratio[i] > 0.0 {
                counts[i] += 1;
                leftover -= 1;
            }
        }
        // Guarantee one video per nonzero split, stealing from the largest.
        for &i in &nonzero {
            while counts[i] == 0 {
                let donor = (0..3)
                    .filter(|&j| j != i && counts[j] > 1)
                    .max_by_key(|&j| counts[j])
                    .or_else(|| (0..3).find(|&j| j != i && counts[j] > 0))
                    .expect("videos >= nonzero splits");
                counts[donor] -= 1;
                counts[i] += 1;
            }
        }

        let mut cursor = 0usize;
        for (i, split) in Split::ALL.iter().enumerate() {
            for vid in &videos[cursor..cursor + counts[i]] {
                assignment.insert(vid.clone(), *split);
            }
            cursor += counts[i];
        }
    }

    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        let vid = rec.video_id.as_ref().expect("checked above");
        let mut rec = rec.clone();
        rec.split = assignment[vid];
        out.push(rec);
    }
    let manifest = DatasetManifest {
        modality: Modality::Colonoscopy,
        records: out,
        class_names: class_names.to_vec(),
    };
    manifest.validate()?;
    Ok(manifest)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Write 1x1 PNGs into `dir` and wrap them in a train-only manifest.
    pub fn manifest_of_images(dir: &Path, samples: &[([u8; 3], usize)]) -> DatasetManifest {
        let mut records = Vec::new();
        let mut max_label = 0;
        for (i, (rgb, label)) in samples.iter().enumerate() {
            let mut img = image::RgbImage::new(1, 1);
            img.put_pixel(0, 0, image::Rgb(*rgb));
            let path = dir.join(format!("img{i}.png"));
            img.save(&path).unwrap();
            max_label = max_label.max(*label);
            records.push(SampleRecord {
                sample_id: format!("img{i}"),
                source_path: path,
                label: *label,
                split: Split::Train,
                video_id: None,
                frame_time_s: None,
            });
        }
        let class_names = (0..=max_label).map(|c| format!("class_{c}")).collect();
        let m = DatasetManifest {
            modality: Modality::Histology,
            records,
            class_names,
        };
        m.validate().unwrap();
        m
    }

    /// Frame records for synthetic videos, `frames` per video, labels given
    /// per video.
    pub fn video_frame_records(video_labels: &[(&str, usize)], frames: u64) -> Vec<SampleRecord> {
        let mut records = Vec::new();
        for (vid, label) in video_labels {
            for t in 0..frames {
                records.push(SampleRecord {
                    sample_id: format!("{vid}_t{t:05}"),
                    source_path: PathBuf::from(format!("{vid}_t{t:05}.png")),
                    label: *label,
                    split: Split::Train,
                    video_id: Some(vid.to_string()),
                    frame_time_s: Some(t),
                });
            }
        }
        records
    }
}
