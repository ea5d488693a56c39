//! Batch normalization over NCHW activations.
//!
//! Training mode normalizes with per-batch statistics and keeps exponential
//! running estimates (the running variance uses the unbiased estimator, the
//! normalization itself the biased one). Eval mode normalizes with the
//! running estimates, which keeps inference deterministic and row-independent.

use ndarray::{Array1, Array4};

use super::{Layer, Param, Tensor4};

const EPS: f32 = 1e-5;
const MOMENTUM: f32 = 0.1;

struct Cache {
    xhat: Tensor4,
    inv_std: Array1<f32>,
    train: bool,
}

pub struct BatchNorm2d {
    pub gamma: Param,        // [c]
    pub beta: Param,         // [c]
    pub running_mean: Param, // buffer [c]
    pub running_var: Param,  // buffer [c]
    cache: Option<Cache>,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(
                format!("{name}.gamma"),
                ndarray::ArrayD::from_elem(ndarray::IxDyn(&[channels]), 1.0),
            ),
            beta: Param::new(
                format!("{name}.beta"),
                ndarray::ArrayD::zeros(ndarray::IxDyn(&[channels])),
            ),
            running_mean: Param::new(
                format!("{name}.running_mean"),
                ndarray::ArrayD::zeros(ndarray::IxDyn(&[channels])),
            ),
            running_var: Param::new(
                format!("{name}.running_var"),
                ndarray::ArrayD::from_elem(ndarray::IxDyn(&[channels]), 1.0),
            ),
            cache: None,
        }
    }

    fn channels(&self) -> usize {
        self.gamma.value.len()
    }
}

impl Layer for BatchNorm2d {
    fn forward(&mut self, x: &Tensor4, train: bool) -> Tensor4 {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.channels(), "batchnorm channels");
        let m = (n * h * w) as f32;

        let mut mean = Array1::<f32>::zeros(c);
        let mut var = Array1::<f32>::zeros(c);
        if train {
            for ci in 0..c {
                let mut sum = 0.0f64;
                let mut sumsq = 0.0f64;
                for ni in 0..n {
                    for y in 0..h {
                        for xx in 0..w {
                            let v = x[[ni, ci, y, xx]] as f64;
                            sum += v;
                            sumsq += v * v;
                        }
                    }
                }
                let mu = sum / m as f64;
                mean[ci] = mu as f32;
                var[ci] = ((sumsq / m as f64) - mu * mu).max(0.0) as f32;
            }
            // Running stats: unbiased variance when the batch allows it.
            let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            for ci in 0..c {
                let rm = &mut self.running_mean.value[ci];
                *rm = (1.0 - MOMENTUM) * *rm + MOMENTUM * mean[ci];
                let rv = &mut self.running_var.value[ci];
                *rv = (1.0 - MOMENTUM) * *rv + MOMENTUM * var[ci] * unbias;
            }
        } else {
            for ci in 0..c {
                mean[ci] = self.running_mean.value[ci];
                var[ci] = self.running_var.value[ci];
            }
        }

        let inv_std = var.mapv(|v| 1.0 / (v + EPS).sqrt());
        let mut xhat = Array4::zeros((n, c, h, w));
        let mut out = Array4::zeros((n, c, h, w));
        for ni in 0..n {
            for ci in 0..c {
                let (mu, is) = (mean[ci], inv_std[ci]);
                let (g, b) = (self.gamma.value[ci], self.beta.value[ci]);
                for y in 0..h {
                    for xx in 0..w {
                        let xh = (x[[ni, ci, y, xx]] - mu) * is;
                        xhat[[ni, ci, y, xx]] = xh;
                        out[[ni, ci, y, xx]] = g * xh + b;
                    }
                }
            }
        }
        self.cache = Some(Cache {
            xhat,
            inv_std,
            train,
        });
        out
    }

    fn backward(&mut self, grad_out: &Tensor4) -> Tensor4 {
        let Cache {
            xhat,
            inv_std,
            train,
        } = self.cache.take().expect("batchnorm backward without forward");
        let (n, c, h, w) = grad_out.dim();
        let m = (n * h * w) as f32;
        let mut dx = Array4::zeros((n, c, h, w));
        for ci in 0..c {
            let mut s1 = 0.0f64; // sum dy
            let mut s2 = 0.0f64; // sum dy * xhat
            for ni in 0..n {
                for y in 0..h {
                    for xx in 0..w {
                        let dy = grad_out[[ni, ci, y, xx]] as f64;
                        s1 += dy;
                        s2 += dy * xhat[[ni, ci, y, xx]] as f64;
                    }
                }
            }
            self.gamma.grad[ci] += s2 as f32;
            self.beta.grad[ci] += s1 as f32;

            let g = self.gamma.value[ci];
            let is = inv_std[ci];
            if train {
                let mean_dy = (s1 / m as f64) as f32;
                let mean_dy_xhat = (s2 / m as f64) as f32;
                for ni in 0..n {
                    for y in 0..h {
                        for xx in 0..w {
                            let dy = grad_out[[ni, ci, y, xx]];
                            let xh = xhat[[ni, ci, y, xx]];
                            dx[[ni, ci, y, xx]] =
                                g * is * (dy - mean_dy - xh * mean_dy_xhat);
                        }
                    }
                }
            } else {
                // Running stats are constants in eval mode.
                for ni in 0..n {
                    for y in 0..h {
                        for xx in 0..w {
                            dx[[ni, ci, y, xx]] = grad_out[[ni, ci, y, xx]] * g * is;
                        }
                    }
                }
            }
        }
        dx
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check::fd_check_layer;
    use approx::assert_abs_diff_eq;
    use ndarray::Array4;
    use rand::Rng;

    fn rand_input(shape: (usize, usize, usize, usize)) -> Tensor4 {
        let mut rng = crate::seed::rng(21, &[6]);
        let mut x = Array4::zeros(shape);
        for v in x.iter_mut() {
            *v = rng.random_range(-2.0..=2.0f32);
        }
        x
    }

    #[test]
    fn train_output_is_normalized_per_channel() {
        let mut bn = BatchNorm2d::new("bn", 3);
        let x = rand_input((4, 3, 5, 5));
        let y = bn.forward(&x, true);
        for ci in 0..3 {
            let vals: Vec<f32> = (0..4)
                .flat_map(|n| {
                    let y = &y;
                    (0..5).flat_map(move |a| (0..5).map(move |b| y[[n, ci, a, b]]))
                })
                .collect();
            let mean: f32 = vals.iter().sum::<f32>() / vals.len() as f32;
            let var: f32 =
                vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / vals.len() as f32;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-4);
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-2);
        }
    }

    #[test]
    fn eval_mode_uses_running_stats_and_is_row_independent() {
        let mut bn = BatchNorm2d::new("bn", 2);
        for _ in 0..10 {
            bn.forward(&rand_input((8, 2, 3, 3)), true);
        }
        let x = rand_input((2, 2, 3, 3));
        let y_full = bn.forward(&x, false);
        let x0 = x.slice(ndarray::s![0..1, .., .., ..]).to_owned();
        let y0 = bn.forward(&x0, false);
        for (a, b) in y0.iter().zip(y_full.slice(ndarray::s![0..1, .., .., ..]).iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn train_gradients_match_finite_differences() {
        let mut bn = BatchNorm2d::new("bn", 2);
        let x = rand_input((3, 2, 4, 4));
        fd_check_layer(&mut bn, &x, true, 2e-3, 3e-2);
    }

    #[test]
    fn eval_gradients_match_finite_differences() {
        let mut bn = BatchNorm2d::new("bn", 2);
        for _ in 0..5 {
            bn.forward(&rand_input((6, 2, 4, 4)), true);
        }
        let x = rand_input((2, 2, 4, 4));
        fd_check_layer(&mut bn, &x, false, 1e-3, 2e-2);
    }
}
