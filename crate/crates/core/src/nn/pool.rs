//! Max pooling and global average pooling.

use ndarray::{Array2, Array4};

use super::{Layer, Param, Tensor2, Tensor4};

pub struct MaxPool2d {
    kernel: usize,
    stride: usize,
    padding: usize,
    /// Flat input index of each window maximum; `usize::MAX` marks a window
    /// with no valid (unpadded) pixel.
    argmax: Option<ndarray::Array4<usize>>,
    in_shape: Option<(usize, usize, usize, usize)>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        MaxPool2d {
            kernel,
            stride,
            padding,
            argmax: None,
            in_shape: None,
        }
    }
}

impl Layer for MaxPool2d {
    fn forward(&mut self, x: &Tensor4, _train: bool) -> Tensor4 {
        let (n, c, ih, iw) = x.dim();
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let oh = (ih + 2 * p - k) / s + 1;
        let ow = (iw + 2 * p - k) / s + 1;
        let mut out = Array4::zeros((n, c, oh, ow));
        let mut argmax = Array4::from_elem((n, c, oh, ow), usize::MAX);
        for ni in 0..n {
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f32::NEG_INFINITY;
                        let mut best_idx = usize::MAX;
                        for ky in 0..k {
                            let iy = (oy * s + ky) as isize - p as isize;
                            if iy < 0 || iy >= ih as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * s + kx) as isize - p as isize;
                                if ix < 0 || ix >= iw as isize {
                                    continue;
                                }
                                let v = x[[ni, ci, iy as usize, ix as usize]];
                                if v > best {
                                    best = v;
                                    best_idx = iy as usize * iw + ix as usize;
                                }
                            }
                        }
                        if best_idx != usize::MAX {
                            out[[ni, ci, oy, ox]] = best;
                        }
                        argmax[[ni, ci, oy, ox]] = best_idx;
                    }
                }
            }
        }
        self.argmax = Some(argmax);
        self.in_shape = Some((n, c, ih, iw));
        out
    }

    fn backward(&mut self, grad_out: &Tensor4) -> Tensor4 {
        let argmax = self.argmax.take().expect("maxpool backward without forward");
        let (n, c, ih, iw) = self.in_shape.take().unwrap();
        let (_, _, oh, ow) = grad_out.dim();
        let mut dx = Array4::zeros((n, c, ih, iw));
        for ni in 0..n {
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let idx = argmax[[ni, ci, oy, ox]];
                        if idx == usize::MAX {
                            continue;
                        }
                        dx[[ni, ci, idx / iw, idx % iw]] += grad_out[[ni, ci, oy, ox]];
                    }
                }
            }
        }
        dx
    }

    fn visit_params(&mut self, _f: &mut dyn FnMut(&mut Param)) {}
}

/// Spatial mean per channel: `[n, c, h, w] -> [n, c]`.
pub fn global_avg_pool(x: &Tensor4) -> Tensor2 {
    let (n, c, h, w) = x.dim();
    let mut out = Array2::zeros((n, c));
    let scale = 1.0 / (h * w) as f32;
    for ni in 0..n {
        for ci in 0..c {
            let mut sum = 0.0f32;
            for y in 0..h {
                for xx in 0..w {
                    sum += x[[ni, ci, y, xx]];
                }
            }
            out[[ni, ci]] = sum * scale;
        }
    }
    out
}

/// Gradient of [`global_avg_pool`]: spread evenly back over the plane.
pub fn global_avg_pool_backward(
    grad_out: &Tensor2,
    spatial: (usize, usize),
) -> Tensor4 {
    let (n, c) = grad_out.dim();
    let (h, w) = spatial;
    let scale = 1.0 / (h * w) as f32;
    let mut dx = Array4::zeros((n, c, h, w));
    for ni in 0..n {
        for ci in 0..c {
            let g = grad_out[[ni, ci]] * scale;
            for y in 0..h {
                for xx in 0..w {
                    dx[[ni, ci, y, xx]] = g;
                }
            }
        }
    }
    dx
}
