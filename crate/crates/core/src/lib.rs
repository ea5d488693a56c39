//! Two-modality colorectal imaging pipeline.
//!
//! The crate fine-tunes a residual CNN on histology patches (9 tissue classes)
//! and colonoscopy video frames (polyp vs colitis), then calibrates the model
//! with temperature scaling, evaluates it (accuracy, macro F1, one-vs-rest AUC,
//! per-video aggregation), and explains predictions with Grad-CAM overlays.
//!
//! Modules map onto pipeline stages:
//!
//! - [`ingest`]: dataset manifests, 1 fps frame extraction, video-disjoint
//!   splits, and a synthetic planted-pattern generator for hermetic tests
//! - [`transforms`]: per-channel normalization, bilinear resizing, and the
//!   train-only augmentation policy
//! - [`model`]: backbone construction (ResNet-50 or a tiny test CNN),
//!   forward passes, and checkpoint serialization
//! - [`trainer`]: the fine-tuning loop with Adam, plateau LR decay, early
//!   stopping, class weighting, and seed sweeps
//! - [`calibrate`]: temperature scaling and expected calibration error
//! - [`metrics`]: the evaluation suite plus frame-to-video aggregation
//! - [`explain`]: Grad-CAM heatmaps and colormapped overlays
//! - [`cli`]: the `colopath` command-line entry point

pub mod calibrate;
pub mod cli;
pub mod error;
pub mod explain;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rundir;
pub mod seed;
pub mod trainer;
pub mod transforms;

pub use error::{Error, Result};
