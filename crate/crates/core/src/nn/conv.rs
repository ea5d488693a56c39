//! 2-D convolution via im2col plus a single matrix multiply per sample.

use ndarray::{Array1, Array2, Array4, Axis, Ix4};
use rand_chacha::ChaCha8Rng;

use super::{uniform_fan_in, Layer, Param, Tensor4};

pub struct Conv2d {
    pub weight: Param, // [out_c, in_c, k, k]
    pub bias: Option<Param>,
    stride: usize,
    padding: usize,
    cache_x: Option<Tensor4>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        with_bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_c * kernel * kernel;
        let weight = Param::new(
            format!("{name}.weight"),
            uniform_fan_in(&[out_c, in_c, kernel, kernel], fan_in, rng),
        );
        let bias = with_bias.then(|| {
            Param::new(
                format!("{name}.bias"),
                uniform_fan_in(&[out_c], fan_in, rng),
            )
        });
        Conv2d {
            weight,
            bias,
            stride,
            padding,
            cache_x: None,
        }
    }

    fn dims(&self) -> (usize, usize, usize) {
        let s = self.weight.value.shape();
        (s[0], s[1], s[2])
    }

    pub fn out_hw(&self, ih: usize, iw: usize) -> (usize, usize) {
        let (_, _, k) = self.dims();
        (
            (ih + 2 * self.padding - k) / self.stride + 1,
            (iw + 2 * self.padding - k) / self.stride + 1,
        )
    }
}

/// Unfold one sample `[c, ih, iw]` into `[c*k*k, oh*ow]` patch columns.
fn im2col(
    x: &ndarray::ArrayView3<f32>,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) -> Array2<f32> {
    let (ic, ih, iw) = x.dim();
    let mut col = Array2::zeros((ic * k * k, oh * ow));
    for c in 0..ic {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= ih as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= iw as isize {
                            continue;
                        }
                        col[[row, oy * ow + ox]] = x[[c, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    col
}

/// Fold `[c*k*k, oh*ow]` column gradients back onto one input sample.
fn col2im(
    dcol: &Array2<f32>,
    dx: &mut ndarray::ArrayViewMut3<f32>,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) {
    let (ic, ih, iw) = dx.dim();
    for c in 0..ic {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= ih as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= iw as isize {
                            continue;
                        }
                        dx[[c, iy as usize, ix as usize]] += dcol[[row, oy * ow + ox]];
                    }
                }
            }
        }
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: &Tensor4, _train: bool) -> Tensor4 {
        let (n, _, ih, iw) = x.dim();
        let (oc, ic, k) = self.dims();
        assert_eq!(x.dim().1, ic, "conv input channels");
        let (oh, ow) = self.out_hw(ih, iw);
        let w2 = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap()
            .into_shape_with_order((oc, ic * k * k))
            .unwrap()
            .to_owned();
        let mut out = Array4::zeros((n, oc, oh, ow));
        for ni in 0..n {
            let col = im2col(&x.index_axis(Axis(0), ni), k, self.stride, self.padding, oh, ow);
            let mut y2 = w2.dot(&col); // [oc, oh*ow]
            if let Some(b) = &self.bias {
                for (ci, mut row) in y2.axis_iter_mut(Axis(0)).enumerate() {
                    row += b.value[ci];
                }
            }
            out.index_axis_mut(Axis(0), ni).assign(
                &y2.into_shape_with_order((oc, oh, ow)).unwrap(),
            );
        }
        self.cache_x = Some(x.clone());
        out
    }

    fn backward(&mut self, grad_out: &Tensor4) -> Tensor4 {
        let x = self.cache_x.take().expect("conv backward without forward");
        let (n, _, ih, iw) = x.dim();
        let (oc, ic, k) = self.dims();
        let (oh, ow) = (grad_out.dim().2, grad_out.dim().3);
        let w2 = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap()
            .into_shape_with_order((oc, ic * k * k))
            .unwrap()
            .to_owned();

        let mut dw2 = Array2::<f32>::zeros((oc, ic * k * k));
        let mut db = Array1::<f32>::zeros(oc);
        let mut dx = Array4::zeros((n, ic, ih, iw));
        for ni in 0..n {
            let col = im2col(&x.index_axis(Axis(0), ni), k, self.stride, self.padding, oh, ow);
            let dy2 = grad_out
                .index_axis(Axis(0), ni)
                .into_shape_with_order((oc, oh * ow))
                .unwrap()
                .to_owned();
            dw2 = dw2 + dy2.dot(&col.t());
            if self.bias.is_some() {
                db = db + dy2.sum_axis(Axis(1));
            }
            let dcol = w2.t().dot(&dy2);
            col2im(
                &dcol,
                &mut dx.index_axis_mut(Axis(0), ni),
                k,
                self.stride,
                self.padding,
                oh,
                ow,
            );
        }

        let dw = dw2.into_shape_with_order((oc, ic, k, k)).unwrap();
        self.weight.grad.zip_mut_with(&dw.into_dyn(), |g, &d| *g += d);
        if let Some(b) = &mut self.bias {
            b.grad.zip_mut_with(&db.into_dyn(), |g, &d| *g += d);
        }
        dx
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}
