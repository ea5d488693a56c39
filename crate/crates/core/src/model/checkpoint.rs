//! Checkpoint serialization: a raw-f32 tensor archive plus a JSON metadata
//! sidecar. Loading a checkpoint and re-running the forward pass reproduces
//! outputs bit-identically, since tensors round-trip as little-endian bytes.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_model_sided, Arch, Backbone};

const MAGIC: &[u8; 8] = b"COLOCKP1";

/// Sidecar stored as `<base>.meta.json` next to the weights blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub seed: u64,
    pub config_hash: String,
    /// Path (relative to the run dir) of the normalization stats in force.
    pub stats_ref: String,
}

#[derive(Serialize, Deserialize)]
struct ArchiveHeader {
    arch: Arch,
    num_classes: usize,
    input_side: usize,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

fn blob_path(base: &Path) -> PathBuf {
    base.with_extension("ckpt")
}

fn meta_path(base: &Path) -> PathBuf {
    base.with_extension("meta.json")
}

/// Write `<base>.ckpt` and `<base>.meta.json`.
pub fn save_checkpoint(
    model: &mut Backbone,
    meta: &CheckpointMeta,
    base: &Path,
) -> Result<(PathBuf, PathBuf)> {
    if let Some(parent) = base.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tensors = model.tensor_snapshot();
    let header = ArchiveHeader {
        arch: model.arch(),
        num_classes: model.num_classes(),
        input_side: model.input_side(),
        tensors: tensors
            .iter()
            .map(|(name, shape, _)| TensorEntry {
                name: name.clone(),
                shape: shape.clone(),
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serialize");
    let payload_len: usize = tensors.iter().map(|(_, _, d)| d.len() * 4).sum();
    let mut buf = Vec::with_capacity(MAGIC.len() + 4 + header_bytes.len() + payload_len);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_bytes);
    for (_, _, data) in &tensors {
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let blob = blob_path(base);
    std::fs::write(&blob, buf).map_err(|e| Error::io(&blob, e))?;

    let meta_file = meta_path(base);
    let body = serde_json::to_string_pretty(meta).expect("meta serialize");
    std::fs::write(&meta_file, body).map_err(|e| Error::io(&meta_file, e))?;
    Ok((blob, meta_file))
}

type NamedTensors = HashMap<String, (Vec<usize>, Vec<f32>)>;

fn read_archive(path: &Path) -> Result<(ArchiveHeader, NamedTensors)> {
    let cerr = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
    let raw = std::fs::read(path).map_err(|e| cerr(format!("cannot read: {e}")))?;
    if raw.len() < MAGIC.len() + 4 || &raw[..MAGIC.len()] != MAGIC {
        return Err(cerr("bad magic; not a checkpoint archive".into()));
    }
    let header_len =
        u32::from_le_bytes(raw[MAGIC.len()..MAGIC.len() + 4].try_into().unwrap()) as usize;
    let header_start = MAGIC.len() + 4;
    let payload_start = header_start + header_len;
    if raw.len() < payload_start {
        return Err(cerr("truncated header".into()));
    }
    let header: ArchiveHeader = serde_json::from_slice(&raw[header_start..payload_start])
        .map_err(|e| cerr(format!("corrupt header: {e}")))?;
    let expected: usize = header
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>() * 4)
        .sum();
    if raw.len() != payload_start + expected {
        return Err(cerr(format!(
            "payload length mismatch: want {expected} bytes, have {}",
            raw.len() - payload_start
        )));
    }
    let mut tensors = HashMap::new();
    let mut offset = payload_start;
    for entry in &header.tensors {
        let count: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(count);
        for chunk in raw[offset..offset + count * 4].chunks_exact(4) {
            data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        offset += count * 4;
        if tensors
            .insert(entry.name.clone(), (entry.shape.clone(), data))
            .is_some()
        {
            return Err(cerr(format!("duplicate tensor {:?}", entry.name)));
        }
    }
    Ok((header, tensors))
}

fn assign_tensors(
    model: &mut Backbone,
    mut tensors: NamedTensors,
    skip_prefix: Option<&str>,
    origin: &Path,
) -> Result<()> {
    let mut problem: Option<String> = None;
    model.visit_all(&mut |p| {
        if problem.is_some() {
            return;
        }
        if let Some(prefix) = skip_prefix {
            if p.name.starts_with(prefix) {
                return;
            }
        }
        match tensors.remove(&p.name) {
            None => problem = Some(format!("missing tensor {:?}", p.name)),
            Some((shape, data)) => {
                if shape != p.value.shape() {
                    problem = Some(format!(
                        "tensor {:?} shape mismatch: archive {shape:?}, model {:?}",
                        p.name,
                        p.value.shape()
                    ));
                    return;
                }
                for (dst, src) in p.value.iter_mut().zip(data.iter()) {
                    *dst = *src;
                }
            }
        }
    });
    if let Some(msg) = problem {
        return Err(Error::Checkpoint(format!("{}: {msg}", origin.display())));
    }
    if skip_prefix.is_none() {
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Checkpoint(format!(
                "{}: unexpected tensor {extra:?}",
                origin.display()
            )));
        }
    }
    Ok(())
}

/// Load `<base>.ckpt` + `<base>.meta.json`, rebuilding the backbone.
/// A `config_hash` mismatch against `expected_config_hash` is reported as a
/// warning, not an error.
pub fn load_checkpoint(
    base: &Path,
    expected_config_hash: Option<&str>,
) -> Result<(Backbone, CheckpointMeta, Vec<String>)> {
    let meta_file = meta_path(base);
    if !meta_file.is_file() {
        return Err(Error::Checkpoint("checkpoint metadata absent".into()));
    }
    let meta_raw = std::fs::read_to_string(&meta_file).map_err(|e| Error::io(&meta_file, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&meta_raw).map_err(|e| Error::Json {
        path: meta_file.clone(),
        msg: e.to_string(),
    })?;

    let mut warnings = Vec::new();
    if let Some(expected) = expected_config_hash {
        if expected != meta.config_hash {
            warnings.push(format!(
                "checkpoint config_hash {} does not match expected {}",
                meta.config_hash, expected
            ));
        }
    }

    let blob = blob_path(base);
    let (header, tensors) = read_archive(&blob)?;
    let mut model = build_model_sided(
        header.arch,
        header.num_classes,
        false,
        meta.seed,
        header.input_side,
    )?;
    assign_tensors(&mut model, tensors, None, &blob)?;
    Ok((model, meta, warnings))
}

/// Copy every non-head tensor from a converted ImageNet archive into the
/// model. The head (`fc.*`) keeps its fresh initialization.
pub fn load_pretrained_into(model: &mut Backbone, path: &Path) -> Result<()> {
    let (header, tensors) = read_archive(path)?;
    if header.arch != model.arch() {
        return Err(Error::config(format!(
            "pretrained cache {} holds a {} backbone, expected {}",
            path.display(),
            header.arch,
            model.arch()
        )));
    }
    assign_tensors(model, tensors, Some("fc."), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;
    use ndarray::Array4;
    use rand::Rng;

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            epoch: 3,
            val_loss: 0.25,
            val_accuracy: 0.9,
            seed: 42,
            config_hash: "abc123".into(),
            stats_ref: "stats.json".into(),
        }
    }

    fn rand_batch(model: &Backbone) -> Array4<f32> {
        let mut rng = crate::seed::rng(77, &[1]);
        let side = model.input_side();
        let mut x = Array4::zeros((2, 3, side, side));
        for v in x.iter_mut() {
            *v = rng.random_range(-1.0..=1.0f32);
        }
        x
    }

    #[test]
    fn roundtrip_reproduces_forward_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = build_model(Arch::Tiny, 4, false, 9).unwrap();
        // Shift running stats away from init so buffers matter.
        let x = rand_batch(&model);
        model.forward(&x, true).unwrap();
        let want = model.forward(&x, false).unwrap();

        let base = dir.path().join("checkpoints/best");
        save_checkpoint(&mut model, &meta(), &base).unwrap();
        let (mut loaded, got_meta, warnings) = load_checkpoint(&base, Some("abc123")).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(got_meta, meta());
        let got = loaded.forward(&x, false).unwrap();
        assert_eq!(got, want, "forward outputs must match bit-for-bit");
    }

    #[test]
    fn hash_mismatch_is_a_warning_not_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = build_model(Arch::Tiny, 2, false, 1).unwrap();
        let base = dir.path().join("best");
        save_checkpoint(&mut model, &meta(), &base).unwrap();
        let (_, _, warnings) = load_checkpoint(&base, Some("tampered")).unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("config_hash"));
    }

    #[test]
    fn missing_sidecar_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = build_model(Arch::Tiny, 2, false, 1).unwrap();
        let base = dir.path().join("best");
        save_checkpoint(&mut model, &meta(), &base).unwrap();
        std::fs::remove_file(base.with_extension("meta.json")).unwrap();
        let err = load_checkpoint(&base, None).unwrap_err();
        assert_eq!(err.to_string(), "checkpoint error: checkpoint metadata absent");
    }

    #[test]
    fn corrupt_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = build_model(Arch::Tiny, 2, false, 1).unwrap();
        let base = dir.path().join("best");
        save_checkpoint(&mut model, &meta(), &base).unwrap();
        let blob = base.with_extension("ckpt");
        let mut bytes = std::fs::read(&blob).unwrap();
        bytes.truncate(bytes.len() - 10);
        std::fs::write(&blob, bytes).unwrap();
        let err = load_checkpoint(&base, None).unwrap_err();
        assert!(err.to_string().contains("length mismatch"), "{err}");
    }

    #[test]
    fn pretrained_loader_keeps_fresh_head() {
        // Save a 9-class tiny model as the "cache", then load its non-head
        // tensors into a 2-class model built with a different seed.
        let dir = tempfile::tempdir().unwrap();
        let mut donor = build_model(Arch::Tiny, 9, false, 5).unwrap();
        let base = dir.path().join("pretrained");
        save_checkpoint(&mut donor, &meta(), &base).unwrap();

        let mut target = build_model(Arch::Tiny, 2, false, 6).unwrap();
        let head_before: Vec<(String, Vec<usize>, Vec<f32>)> = target
            .tensor_snapshot()
            .into_iter()
            .filter(|(n, _, _)| n.starts_with("fc."))
            .collect();
        load_pretrained_into(&mut target, &base.with_extension("ckpt")).unwrap();

        let snap = target.tensor_snapshot();
        let donor_snap = donor.tensor_snapshot();
        for (name, shape, data) in &snap {
            if name.starts_with("fc.") {
                let before = head_before.iter().find(|(n, _, _)| n == name).unwrap();
                assert_eq!(&before.2, data, "head must stay fresh");
            } else {
                let d = donor_snap.iter().find(|(n, _, _)| n == name).unwrap();
                assert_eq!(&d.1, shape);
                assert_eq!(&d.2, data, "{name} should come from the cache");
            }
        }
    }
}
