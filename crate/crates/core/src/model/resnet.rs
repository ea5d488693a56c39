//! 50-layer residual network (bottleneck variant), sized for 224x224 inputs.

use rand_chacha::ChaCha8Rng;

use crate::nn::{
    BatchNorm2d, Conv2d, Layer, Linear, MaxPool2d, Param, Relu, Sequential, Tensor4,
};

pub const RESNET_INPUT_SIDE: usize = 224;
pub const RESNET_FEATURES: usize = 2048;

/// 1x1 -> 3x3 -> 1x1 bottleneck with an optional projection shortcut.
pub struct Bottleneck {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    relu1: Relu,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    relu2: Relu,
    conv3: Conv2d,
    bn3: BatchNorm2d,
    downsample: Option<(Conv2d, BatchNorm2d)>,
    relu_out: Relu,
}

impl Bottleneck {
    pub fn new(
        name: &str,
        in_c: usize,
        mid_c: usize,
        out_c: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let project = stride != 1 || in_c != out_c;
        Bottleneck {
            conv1: Conv2d::new(&format!("{name}.conv1"), in_c, mid_c, 1, 1, 0, false, rng),
            bn1: BatchNorm2d::new(&format!("{name}.bn1"), mid_c),
            relu1: Relu::new(),
            conv2: Conv2d::new(&format!("{name}.conv2"), mid_c, mid_c, 3, stride, 1, false, rng),
            bn2: BatchNorm2d::new(&format!("{name}.bn2"), mid_c),
            relu2: Relu::new(),
            conv3: Conv2d::new(&format!("{name}.conv3"), mid_c, out_c, 1, 1, 0, false, rng),
            bn3: BatchNorm2d::new(&format!("{name}.bn3"), out_c),
            downsample: project.then(|| {
                (
                    Conv2d::new(
                        &format!("{name}.downsample.conv"),
                        in_c,
                        out_c,
                        1,
                        stride,
                        0,
                        false,
                        rng,
                    ),
                    BatchNorm2d::new(&format!("{name}.downsample.bn"), out_c),
                )
            }),
            relu_out: Relu::new(),
        }
    }
}

impl Layer for Bottleneck {
    fn forward(&mut self, x: &Tensor4, train: bool) -> Tensor4 {
        let mut out = self.conv1.forward(x, train);
        out = self.bn1.forward(&out, train);
        out = self.relu1.forward(&out, train);
        out = self.conv2.forward(&out, train);
        out = self.bn2.forward(&out, train);
        out = self.relu2.forward(&out, train);
        out = self.conv3.forward(&out, train);
        out = self.bn3.forward(&out, train);
        let identity = match &mut self.downsample {
            Some((conv, bn)) => {
                let d = conv.forward(x, train);
                bn.forward(&d, train)
            }
            None => x.clone(),
        };
        out += &identity;
        self.relu_out.forward(&out, train)
    }

    fn backward(&mut self, grad_out: &Tensor4) -> Tensor4 {
        let d = self.relu_out.backward(grad_out);
        // The add node routes the same gradient into both branches.
        let mut g = self.bn3.backward(&d);
        g = self.conv3.backward(&g);
        g = self.relu2.backward(&g);
        g = self.bn2.backward(&g);
        g = self.conv2.backward(&g);
        g = self.relu1.backward(&g);
        g = self.bn1.backward(&g);
        let mut dx = self.conv1.backward(&g);
        match &mut self.downsample {
            Some((conv, bn)) => {
                let gd = bn.backward(&d);
                dx += &conv.backward(&gd);
            }
            None => dx += &d,
        }
        dx
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv1.visit_params(f);
        self.bn1.visit_params(f);
        self.conv2.visit_params(f);
        self.bn2.visit_params(f);
        self.conv3.visit_params(f);
        self.bn3.visit_params(f);
        if let Some((conv, bn)) = &mut self.downsample {
            conv.visit_params(f);
            bn.visit_params(f);
        }
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.bn1.visit_buffers(f);
        self.bn2.visit_buffers(f);
        self.bn3.visit_buffers(f);
        if let Some((_, bn)) = &mut self.downsample {
            bn.visit_buffers(f);
        }
    }
}

fn layer_group(
    name: &str,
    blocks: usize,
    in_c: usize,
    mid_c: usize,
    out_c: usize,
    stride: usize,
    rng: &mut ChaCha8Rng,
) -> Box<dyn Layer> {
    let mut layers: Vec<Box<dyn Layer>> = Vec::with_capacity(blocks);
    layers.push(Box::new(Bottleneck::new(
        &format!("{name}.0"),
        in_c,
        mid_c,
        out_c,
        stride,
        rng,
    )));
    for b in 1..blocks {
        layers.push(Box::new(Bottleneck::new(
            &format!("{name}.{b}"),
            out_c,
            mid_c,
            out_c,
            1,
            rng,
        )));
    }
    Box::new(Sequential::new(layers))
}

/// The standard [3, 4, 6, 3] bottleneck stack with a 7x7 stem.
pub fn build(
    num_classes: usize,
    rng: &mut ChaCha8Rng,
) -> (crate::model::StageList, Linear) {
    let stem: Box<dyn Layer> = Box::new(Sequential::new(vec![
        Box::new(Conv2d::new("stem.conv", 3, 64, 7, 2, 3, false, rng)),
        Box::new(BatchNorm2d::new("stem.bn", 64)),
        Box::new(Relu::new()),
        Box::new(MaxPool2d::new(3, 2, 1)),
    ]));
    let stages: crate::model::StageList = vec![
        ("stem".into(), stem),
        ("layer1".into(), layer_group("layer1", 3, 64, 64, 256, 1, rng)),
        ("layer2".into(), layer_group("layer2", 4, 256, 128, 512, 2, rng)),
        ("layer3".into(), layer_group("layer3", 6, 512, 256, 1024, 2, rng)),
        ("layer4".into(), layer_group("layer4", 3, 1024, 512, 2048, 2, rng)),
    ];
    let head = Linear::new("fc", RESNET_FEATURES, num_classes, rng);
    (stages, head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check::fd_check_layer;
    use ndarray::Array4;
    use rand::Rng;

    #[test]
    fn bottleneck_gradients_match_finite_differences() {
        let mut rng = crate::seed::rng(13, &[1]);
        let mut block = Bottleneck::new("b", 4, 2, 8, 2, &mut rng);
        let mut x = Array4::zeros((2, 4, 6, 6));
        for v in x.iter_mut() {
            *v = rng.random_range(-1.0..=1.0f32);
        }
        fd_check_layer(&mut block, &x, true, 3e-3, 4e-2);
    }

    #[test]
    fn identity_shortcut_bottleneck_gradients_eval_mode() {
        // Eval mode freezes the batch statistics, which keeps finite
        // differences away from the ReLU kinks that batch-coupled
        // normalization smears across the whole channel. This is also the
        // path the heatmap backward pass uses.
        let mut rng = crate::seed::rng(14, &[1]);
        let mut block = Bottleneck::new("b", 8, 2, 8, 1, &mut rng);
        for _ in 0..3 {
            let mut warm = Array4::zeros((4, 8, 5, 5));
            for v in warm.iter_mut() {
                *v = rng.random_range(-1.0..=1.0f32);
            }
            block.forward(&warm, true);
        }
        let mut x = Array4::zeros((1, 8, 5, 5));
        for v in x.iter_mut() {
            *v = rng.random_range(-1.0..=1.0f32);
        }
        fd_check_layer(&mut block, &x, false, 3e-3, 4e-2);
    }
}


