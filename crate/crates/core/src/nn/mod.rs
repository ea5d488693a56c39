//! Minimal CNN building blocks with explicit forward/backward passes.
//!
//! Everything runs single-threaded on f32 `ndarray` buffers in NCHW layout,
//! which keeps training runs bit-reproducible for a fixed seed. Layers cache
//! what their backward pass needs during `forward`; `backward` consumes the
//! cache and accumulates parameter gradients in place.
//!
//! Gradient correctness is pinned by finite-difference tests next to each
//! layer.

pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod linear;
pub mod loss;
pub mod pool;

pub use adam::Adam;
pub use batchnorm::BatchNorm2d;
pub use conv::Conv2d;
pub use linear::Linear;
pub use pool::{global_avg_pool, global_avg_pool_backward, MaxPool2d};

use ndarray::{Array4, ArrayD};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// NCHW activation tensor.
pub type Tensor4 = Array4<f32>;
/// Row-per-sample matrix (features or logits).
pub type Tensor2 = ndarray::Array2<f32>;

/// A named tensor with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f32>,
    pub grad: ArrayD<f32>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: ArrayD<f32>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Uniform fan-in initialization: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn uniform_fan_in(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> ArrayD<f32> {
    let bound = 1.0 / (fan_in as f32).sqrt();
    let mut arr = ArrayD::zeros(ndarray::IxDyn(shape));
    for v in arr.iter_mut() {
        *v = rng.random_range(-bound..=bound);
    }
    arr
}

/// A differentiable NCHW-to-NCHW block.
pub trait Layer {
    fn forward(&mut self, x: &Tensor4, train: bool) -> Tensor4;

    /// Propagate `grad_out` back through the cached forward pass, adding to
    /// parameter gradients and returning the input gradient.
    fn backward(&mut self, grad_out: &Tensor4) -> Tensor4;

    /// Visit trainable parameters in a fixed order.
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param));

    /// Visit non-trained state (e.g. batchnorm running stats).
    fn visit_buffers(&mut self, _f: &mut dyn FnMut(&mut Param)) {}
}

pub struct Relu {
    cache: Option<Tensor4>,
}

impl Relu {
    pub fn new() -> Self {
        Relu { cache: None }
    }
}

impl Default for Relu {
    fn default() -> Self {
        Self::new()
    }
}

impl Layer for Relu {
    fn forward(&mut self, x: &Tensor4, _train: bool) -> Tensor4 {
        let out = x.mapv(|v| v.max(0.0));
        self.cache = Some(out.clone());
        out
    }

    fn backward(&mut self, grad_out: &Tensor4) -> Tensor4 {
        let out = self.cache.take().expect("relu backward without forward");
        let mut dx = grad_out.clone();
        dx.zip_mut_with(&out, |g, &o| {
            if o <= 0.0 {
                *g = 0.0;
            }
        });
        dx
    }

    fn visit_params(&mut self, _f: &mut dyn FnMut(&mut Param)) {}
}

/// Layers run in order; backward runs them in reverse.
pub struct Sequential {
    pub layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new(layers: Vec<Box<dyn Layer>>) -> Self {
        Sequential { layers }
    }
}

impl Layer for Sequential {
    fn forward(&mut self, x: &Tensor4, train: bool) -> Tensor4 {
        let mut cur = x.clone();
        for layer in &mut self.layers {
            cur = layer.forward(&cur, train);
        }
        cur
    }

    fn backward(&mut self, grad_out: &Tensor4) -> Tensor4 {
        let mut g = grad_out.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g);
        }
        g
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for layer in &mut self.layers {
            layer.visit_params(f);
        }
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for layer in &mut self.layers {
            layer.visit_buffers(f);
        }
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn ramp_input(shape: (usize, usize, usize, usize)) -> Tensor4 {
        let mut x = Array4::zeros(shape);
        let mut rng = crate::seed::rng(5, &[1]);
        for v in x.iter_mut() {
            *v = rng.random_range(-1.0..=1.0f32);
        }
        x
    }

    #[test]
    fn relu_gradient_matches_finite_differences() {
        // Keep values away from the kink so central differences are valid.
        let mut x = ramp_input((2, 3, 4, 4));
        x.mapv_inplace(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
        let mut layer = Relu::new();
        grad_check::fd_check_layer(&mut layer, &x, true, 1e-3, 1e-2);
    }

    #[test]
    fn uniform_fan_in_respects_bound_and_seed() {
        let mut rng = crate::seed::rng(1, &[2]);
        let a = uniform_fan_in(&[8, 4], 4, &mut rng);
        assert!(a.iter().all(|v| v.abs() <= 0.5));
        let mut rng = crate::seed::rng(1, &[2]);
        let b = uniform_fan_in(&[8, 4], 4, &mut rng);
        assert_eq!(a, b);
    }
}
