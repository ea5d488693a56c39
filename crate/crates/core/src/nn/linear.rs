//! Fully connected layer over `[n, features]` matrices.

use ndarray::{Array1, Ix2};
use rand_chacha::ChaCha8Rng;

use super::{uniform_fan_in, Param, Tensor2};

pub struct Linear {
    pub weight: Param, // [out, in]
    pub bias: Param,   // [out]
    cache_x: Option<Tensor2>,
}

impl Linear {
    pub fn new(name: &str, in_features: usize, out_features: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            weight: Param::new(
                format!("{name}.weight"),
                uniform_fan_in(&[out_features, in_features], in_features, rng),
            ),
            bias: Param::new(
                format!("{name}.bias"),
                uniform_fan_in(&[out_features], in_features, rng),
            ),
            cache_x: None,
        }
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&mut self, x: &Tensor2) -> Tensor2 {
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let mut y = x.dot(&w.t());
        for (ci, mut col) in y.axis_iter_mut(ndarray::Axis(1)).enumerate() {
            col += self.bias.value[ci];
        }
        self.cache_x = Some(x.clone());
        y
    }

    pub fn backward(&mut self, grad_out: &Tensor2) -> Tensor2 {
        let x = self.cache_x.take().expect("linear backward without forward");
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let dw = grad_out.t().dot(&x);
        let db: Array1<f32> = grad_out.sum_axis(ndarray::Axis(0));
        let dx = grad_out.dot(&w);
        self.weight.grad.zip_mut_with(&dw.into_dyn(), |g, &d| *g += d);
        self.bias.grad.zip_mut_with(&db.into_dyn(), |g, &d| *g += d);
        dx
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
