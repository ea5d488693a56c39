//! Backbone construction and the shared model handle.
//!
//! Two architectures sit behind one interface: the 50-layer residual network
//! (optionally initialized from a converted ImageNet weight cache) and a tiny
//! three-stage CNN for fast synthetic runs. The handle also exposes the
//! capture hooks the Grad-CAM pass needs: activations of a named stage and
//! the gradient of a target logit with respect to them.

mod checkpoint;
mod resnet;
mod tiny;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use resnet::RESNET_INPUT_SIDE;
pub use tiny::TINY_DEFAULT_SIDE;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{global_avg_pool, global_avg_pool_backward, Layer, Linear, Param, Tensor2, Tensor4};
use crate::seed;

/// Environment variable pointing at the converted ImageNet weight cache.
pub const PRETRAINED_ENV: &str = "COLOPATH_PRETRAINED";

/// Named stage groups of a backbone, in forward order.
pub(crate) type StageList = Vec<(String, Box<dyn Layer>)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Tiny,
    Resnet50,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arch::Tiny => f.write_str("tiny"),
            Arch::Resnet50 => f.write_str("resnet50"),
        }
    }
}

impl FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Arch::Tiny),
            "resnet50" => Ok(Arch::Resnet50),
            other => Err(Error::config(format!(
                "unknown backbone {other:?} (expected tiny or resnet50)"
            ))),
        }
    }
}

/// A constructed backbone: named stage groups, a global-average-pool, and a
/// classifier head sized to the class count.
///
/// `Debug` prints the shape-level summary, not the weights.
pub struct Backbone {
    arch: Arch,
    num_classes: usize,
    input_side: usize,
    init_seed: u64,
    stages: Vec<(String, Box<dyn Layer>)>,
    head: Linear,
    capture_stage: String,
    capture_enabled: bool,
    captured: Option<Tensor4>,
    gap_hw: Option<(usize, usize)>,
}

impl fmt::Debug for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backbone")
            .field("arch", &self.arch)
            .field("num_classes", &self.num_classes)
            .field("input_side", &self.input_side)
            .field("capture_stage", &self.capture_stage)
            .finish_non_exhaustive()
    }
}

impl Backbone {
    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_side(&self) -> usize {
        self.input_side
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    /// Identifier of the final convolutional stage targeted by Grad-CAM.
    pub fn capture_stage(&self) -> &str {
        &self.capture_stage
    }

    pub fn set_capture_stage(&mut self, name: &str) -> Result<()> {
        if !self.stages.iter().any(|(n, _)| n == name) {
            let known: Vec<&str> = self.stages.iter().map(|(n, _)| n.as_str()).collect();
            return Err(Error::config(format!(
                "unknown stage {name:?}; available: {known:?}"
            )));
        }
        self.capture_stage = name.to_string();
        Ok(())
    }

    /// Raw pre-softmax scores, one row per input. Requires a
    /// `side x side x 3` NCHW batch matching the backbone's input side.
    pub fn forward(&mut self, x: &Tensor4, train: bool) -> Result<Tensor2> {
        let (n, c, h, w) = x.dim();
        if n == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if c != 3 || h != self.input_side || w != self.input_side {
            return Err(Error::Shape(format!(
                "expected {side}x{side}x3 input, got {h}x{w}x{c}",
                side = self.input_side
            )));
        }
        let mut cur = x.clone();
        for (name, layer) in &mut self.stages {
            cur = layer.forward(&cur, train);
            if self.capture_enabled && *name == self.capture_stage {
                self.captured = Some(cur.clone());
            }
        }
        let (_, _, fh, fw) = cur.dim();
        self.gap_hw = Some((fh, fw));
        let feats = global_avg_pool(&cur);
        Ok(self.head.forward(&feats))
    }

    /// Backpropagate logit gradients through the cached forward pass.
    /// With `stop_at = Some(stage)`, returns the gradient with respect to
    /// that stage's output instead of the input.
    pub fn backward(&mut self, dlogits: &Tensor2, stop_at: Option<&str>) -> Tensor4 {
        let dfeat = self.head.backward(dlogits);
        let hw = self.gap_hw.take().expect("backward without forward");
        let mut g = global_avg_pool_backward(&dfeat, hw);
        for (name, layer) in self.stages.iter_mut().rev() {
            if stop_at == Some(name.as_str()) {
                return g;
            }
            g = layer.backward(&g);
        }
        g
    }

    /// Forward-and-backward for one target class: the activation of the
    /// capture stage and the gradient of the target logit w.r.t. it.
    /// Runs in eval mode.
    pub fn capture_with_gradient(
        &mut self,
        x: &Tensor4,
        target_class: usize,
    ) -> Result<(Tensor4, Tensor4)> {
        if target_class >= self.num_classes {
            return Err(Error::config(format!(
                "target class {target_class} out of range [0, {})",
                self.num_classes
            )));
        }
        self.capture_enabled = true;
        let forward = self.forward(x, false);
        self.capture_enabled = false;
        let logits = forward?;
        let n = logits.dim().0;
        let mut dlogits = Tensor2::zeros((n, self.num_classes));
        for i in 0..n {
            dlogits[[i, target_class]] = 1.0;
        }
        let stage = self.capture_stage.clone();
        let grad = self.backward(&dlogits, Some(&stage));
        let act = self.captured.take().expect("capture stage ran in forward");
        Ok((act, grad))
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for (_, layer) in &mut self.stages {
            layer.visit_params(f);
        }
        self.head.visit_params(f);
    }

    pub fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for (_, layer) in &mut self.stages {
            layer.visit_buffers(f);
        }
    }

    /// Params then buffers, in the fixed traversal order.
    pub fn visit_all(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.visit_params(f);
        self.visit_buffers(f);
    }

    pub fn zero_grad(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }

    /// Snapshot of every tensor (params and buffers) by name.
    pub fn tensor_snapshot(&mut self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        let mut out = Vec::new();
        self.visit_all(&mut |p| {
            out.push((
                p.name.clone(),
                p.value.shape().to_vec(),
                p.value.iter().copied().collect(),
            ));
        });
        out
    }
}

/// Construct a backbone with a freshly initialized head.
///
/// With `pretrained = true` (resnet50 only), non-head weights come from the
/// local converted ImageNet cache; a missing cache is a configuration error
/// that explains how to set one up. All layers stay trainable.
pub fn build_model(
    arch: Arch,
    num_classes: usize,
    pretrained: bool,
    seed_value: u64,
) -> Result<Backbone> {
    let side = match arch {
        Arch::Tiny => TINY_DEFAULT_SIDE,
        Arch::Resnet50 => RESNET_INPUT_SIDE,
    };
    build_model_sided(arch, num_classes, pretrained, seed_value, side)
}

pub fn build_model_sided(
    arch: Arch,
    num_classes: usize,
    pretrained: bool,
    seed_value: u64,
    input_side: usize,
) -> Result<Backbone> {
    if num_classes < 2 {
        return Err(Error::config(format!(
            "num_classes must be >= 2, got {num_classes}"
        )));
    }
    let mut rng = seed::rng(seed_value, &[seed::stream::MODEL_INIT]);
    let (stages, head, capture_stage) = match arch {
        Arch::Tiny => {
            if input_side < 16 {
                return Err(Error::config("tiny backbone needs input_side >= 16"));
            }
            let (stages, head) = tiny::build(num_classes, &mut rng);
            (stages, head, "stage3".to_string())
        }
        Arch::Resnet50 => {
            if input_side != RESNET_INPUT_SIDE {
                return Err(Error::config(format!(
                    "resnet50 input side is fixed at {RESNET_INPUT_SIDE}"
                )));
            }
            let (stages, head) = resnet::build(num_classes, &mut rng);
            (stages, head, "layer4".to_string())
        }
    };
    let mut model = Backbone {
        arch,
        num_classes,
        input_side,
        init_seed: seed_value,
        stages,
        head,
        capture_stage,
        capture_enabled: false,
        captured: None,
        gap_hw: None,
    };
    if pretrained {
        if arch != Arch::Resnet50 {
            return Err(Error::config(
                "pretrained weights exist only for the resnet50 backbone",
            ));
        }
        let path = pretrained_cache_path();
        if !path.is_file() {
            return Err(Error::config(format!(
                "pretrained weights not found at {}. Convert torchvision's \
                 ResNet-50 weights with tools/export_resnet50.py and either \
                 place the output there or point {PRETRAINED_ENV} at it; or \
                 run with pretrained = false.",
                path.display()
            )));
        }
        checkpoint::load_pretrained_into(&mut model, &path)?;
    }
    Ok(model)
}

fn pretrained_cache_path() -> PathBuf {
    if let Some(p) = std::env::var_os(PRETRAINED_ENV) {
        return PathBuf::from(p);
    }
    let home = std::env::var_os("HOME").unwrap_or_default();
    PathBuf::from(home).join(".cache/colopath/resnet50_imagenet.ckpt")
}
