//! Run directory layout and config provenance.
//!
//! Every artifact-producing command persists the exact configuration that
//! produced it, plus a content hash of the canonicalized (sorted-key) JSON,
//! before any heavy work starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::trainer::ModalityConfig;

/// Default output root when `--output-root` is not given.
pub const OUTPUT_ROOT_ENV: &str = "COLOPATH_OUTPUT_ROOT";

/// Full provenance of a run: modality hyperparameters plus dataset paths and
/// naming.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub run_name: String,
    pub output_root: PathBuf,
    pub manifest_dir: PathBuf,
    pub config: ModalityConfig,
}

impl RunConfig {
    /// SHA-256 of the canonical JSON form; stable under key reordering
    /// because canonical serialization sorts keys.
    pub fn config_hash(&self) -> String {
        sha256_hex(canonical_json(self).as_bytes())
    }

    pub fn sweep_dir(&self) -> PathBuf {
        self.output_root.join(&self.run_name)
    }

    pub fn run_dir(&self, seed: u64) -> PathBuf {
        self.sweep_dir().join(seed.to_string())
    }
}

/// JSON with sorted object keys (serde_json's default map is ordered).
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let v: serde_json::Value = serde_json::to_value(value).expect("config serializes");
    v.to_string()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write as _;
        let _ = write!(out, "{b:02x}");
    }
    out
}

#[derive(Serialize, Deserialize)]
struct StoredConfig {
    config_hash: String,
    #[serde(flatten)]
    run_config: RunConfig,
}

/// Write `config.json` (with embedded hash) into `dir`; returns the hash.
pub fn write_run_config(run_config: &RunConfig, dir: &Path) -> Result<String> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config_hash = run_config.config_hash();
    let stored = StoredConfig {
        config_hash: config_hash.clone(),
        run_config: run_config.clone(),
    };
    let body = serde_json::to_string_pretty(&stored).expect("config serialize");
    let path = dir.join("config.json");
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    Ok(config_hash)
}

pub fn load_run_config(dir: &Path) -> Result<(RunConfig, String)> {
    let path = dir.join("config.json");
    let raw = std::fs::read_to_string(&path)
        .map_err(|e| Error::config(format!("missing run config {}: {e}", path.display())))?;
    let stored: StoredConfig = serde_json::from_str(&raw).map_err(|e| Error::Json {
        path: path.clone(),
        msg: e.to_string(),
    })?;
    Ok((stored.run_config, stored.config_hash))
}

/// Paths inside one run directory.
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunPaths { root: root.into() }
    }

    pub fn config_json(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn stats_json(&self) -> PathBuf {
        self.root.join("stats.json")
    }
    pub fn epochs_csv(&self) -> PathBuf {
        self.root.join("epochs.csv")
    }
    pub fn checkpoint_base(&self) -> PathBuf {
        self.root.join("checkpoints/best")
    }
    pub fn val_logits(&self) -> PathBuf {
        self.root.join("logits/val.csv")
    }
    pub fn test_logits(&self) -> PathBuf {
        self.root.join("logits/test.csv")
    }
    pub fn calibration_json(&self) -> PathBuf {
        self.root.join("calibration.json")
    }
    pub fn metrics_json(&self) -> PathBuf {
        self.root.join("metrics.json")
    }
    pub fn videos_csv(&self) -> PathBuf {
        self.root.join("videos.csv")
    }
    pub fn heatmaps_dir(&self) -> PathBuf {
        self.root.join("heatmaps")
    }
}

pub fn default_output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}
