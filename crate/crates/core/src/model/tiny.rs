//! Small three-stage CNN used for fast synthetic runs and tests. It sits
//! behind the same handle interface as the full residual network.

use rand_chacha::ChaCha8Rng;

use crate::nn::{BatchNorm2d, Conv2d, Layer, Linear, Relu, Sequential};

pub const TINY_DEFAULT_SIDE: usize = 64;
pub const TINY_FEATURES: usize = 32;

fn stage(
    name: &str,
    in_c: usize,
    out_c: usize,
    rng: &mut ChaCha8Rng,
) -> Box<dyn Layer> {
    Box::new(Sequential::new(vec![
        Box::new(Conv2d::new(
            &format!("{name}.conv"),
            in_c,
            out_c,
            3,
            2,
            1,
            false,
            rng,
        )),
        Box::new(BatchNorm2d::new(&format!("{name}.bn"), out_c)),
        Box::new(Relu::new()),
    ]))
}

/// Three stride-2 conv stages (8, 16, 32 channels) plus the classifier head.
pub fn build(
    num_classes: usize,
    rng: &mut ChaCha8Rng,
) -> (crate::model::StageList, Linear) {
    let stages: crate::model::StageList = vec![
        ("stage1".into(), stage("stage1", 3, 8, rng)),
        ("stage2".into(), stage("stage2", 8, 16, rng)),
        ("stage3".into(), stage("stage3", 16, TINY_FEATURES, rng)),
    ];
    let head = Linear::new("fc", TINY_FEATURES, num_classes, rng);
    (stages, head)
}
