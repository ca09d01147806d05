//! 2D convolution via im2col + GEMM, with an explicit backward pass.
//!
//! Tensors are (B, C, H, W). The layer caches its im2col matrices during a
//! training-mode forward; backward consumes the cache, accumulates weight
//! and bias gradients, and returns the input gradient by scattering the
//! column gradient back (col2im).

use ndarray::{Array2, Array3, Array4, ArrayView3, Axis};

use crate::nn::param::{join, Param, Params};

#[derive(Debug, Clone)]
pub struct Conv2d {
    /// Weights shaped (out_channels, in_channels, k, k).
    pub weight: Param,
    /// Per-output-channel bias, present only on the backbone head conv.
    pub bias: Option<Param>,
    pub stride: usize,
    pub padding: usize,
    cache: Option<ConvCache>,
}

#[derive(Debug, Clone)]
struct ConvCache {
    cols: Vec<Array2<f64>>,
    input_dim: (usize, usize, usize, usize),
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        assert!(kernel >= 1 && stride >= 1, "kernel and stride must be >= 1");
        Conv2d {
            weight: Param::zeros(&[out_channels, in_channels, kernel, kernel]),
            bias: bias.then(|| Param::zeros(&[out_channels])),
            stride,
            padding,
            cache: None,
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    /// Output spatial size for an input of side `n`:
    /// floor((n + 2·padding − kernel)/stride) + 1.
    pub fn out_size(&self, n: usize) -> usize {
        (n + 2 * self.padding - self.kernel()) / self.stride + 1
    }

    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let (batch, channels, h, w) = x.dim();
        assert_eq!(channels, self.in_channels(), "input channel mismatch");
        assert!(
            h + 2 * self.padding >= self.kernel() && w + 2 * self.padding >= self.kernel(),
            "input smaller than kernel"
        );
        let k = self.kernel();
        let (oh, ow) = (self.out_size(h), self.out_size(w));
        let out_c = self.out_channels();
        let w_mat = self
            .weight
            .value
            .view()
            .into_shape_with_order((out_c, channels * k * k))
            .expect("contiguous weight");
        let mut y = Array4::zeros((batch, out_c, oh, ow));
        let mut cached_cols = Vec::new();
        for b in 0..batch {
            let cols = im2col(x.index_axis(Axis(0), b), k, self.stride, self.padding, oh, ow);
            let mut out = w_mat.dot(&cols);
            if let Some(bias) = &self.bias {
                let bias = bias.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
                for c in 0..out_c {
                    let mut row = out.row_mut(c);
                    row += bias[c];
                }
            }
            let out: Array3<f64> = out
                .into_shape_with_order((out_c, oh, ow))
                .expect("row-major reshape");
            y.index_axis_mut(Axis(0), b).assign(&out);
            if train {
                cached_cols.push(cols);
            }
        }
        self.cache = train.then_some(ConvCache {
            cols: cached_cols,
            input_dim: (batch, channels, h, w),
        });
        y
    }

    /// Backward from the output gradient; returns the input gradient and
    /// accumulates into the weight/bias gradients.
    pub fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let cache = self
            .cache
            .take()
            .expect("Conv2d::backward requires a training-mode forward first");
        let (batch, channels, h, w) = cache.input_dim;
        let k = self.kernel();
        let out_c = self.out_channels();
        let (oh, ow) = (self.out_size(h), self.out_size(w));
        assert_eq!(dy.dim(), (batch, out_c, oh, ow), "output gradient shape");

        let w_mat = self
            .weight
            .value
            .view()
            .into_shape_with_order((out_c, channels * k * k))
            .expect("contiguous weight");
        let mut dw_mat = Array2::zeros((out_c, channels * k * k));
        let mut dx = Array4::zeros((batch, channels, h, w));
        for b in 0..batch {
            let dy_b = dy
                .index_axis(Axis(0), b)
                .into_shape_with_order((out_c, oh * ow))
                .expect("row-major reshape");
            let cols = &cache.cols[b];
            dw_mat = dw_mat + dy_b.dot(&cols.t());
            if let Some(bias) = &mut self.bias {
                let mut grad = bias.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
                for c in 0..out_c {
                    grad[c] += dy_b.row(c).sum();
                }
            }
            let dcols = w_mat.t().dot(&dy_b);
            col2im_add(
                &dcols,
                dx.index_axis_mut(Axis(0), b),
                k,
                self.stride,
                self.padding,
                oh,
                ow,
            );
        }
        let mut wg = self
            .weight
            .grad
            .view_mut()
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        let dw = dw_mat
            .into_shape_with_order((out_c, channels, k, k))
            .expect("row-major reshape");
        wg += &dw;
        dx
    }
}

impl Params for Conv2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(bias) = &self.bias {
            f(&join(prefix, "bias"), bias);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(bias) = &mut self.bias {
            f(&join(prefix, "bias"), bias);
        }
    }
}

/// Unfolds one sample (C, H, W) into a (C·k·k, oh·ow) column matrix.
/// Out-of-bounds taps (padding) contribute zeros.
fn im2col(
    x: ArrayView3<f64>,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) -> Array2<f64> {
    let (channels, h, w) = x.dim();
    let mut cols = Array2::zeros((channels * k * k, oh * ow));
    for c in 0..channels {
        for kh in 0..k {
            for kw in 0..k {
                let row = (c * k + kh) * k + kw;
                let mut row_view = cols.row_mut(row);
                for oy in 0..oh {
                    let iy = (oy * stride + kh) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kw) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        row_view[oy * ow + ox] = x[[c, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds a column-matrix gradient back onto
/// the input gradient.
fn col2im_add(
    dcols: &Array2<f64>,
    mut dx: ndarray::ArrayViewMut3<f64>,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) {
    let (channels, h, w) = dx.dim();
    for c in 0..channels {
        for kh in 0..k {
            for kw in 0..k {
                let row = (c * k + kh) * k + kw;
                let row_view = dcols.row(row);
                for oy in 0..oh {
                    let iy = (oy * stride + kh) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kw) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dx[[c, iy as usize, ix as usize]] += row_view[oy * ow + ox];
                    }
                }
            }
        }
    }
}

/// Direct (nested-loop) convolution used as a slow oracle in tests.
#[cfg(test)]
pub(crate) fn conv2d_reference(
    x: &Array4<f64>,
    weight: &ndarray::ArrayView4<f64>,
    bias: Option<&[f64]>,
    stride: usize,
    padding: usize,
) -> Array4<f64> {
    let (batch, in_c, h, w) = x.dim();
    let (out_c, w_in_c, k, _) = weight.dim();
    assert_eq!(in_c, w_in_c);
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (w + 2 * padding - k) / stride + 1;
    let mut y = Array4::zeros((batch, out_c, oh, ow));
    for b in 0..batch {
        for o in 0..out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |bias| bias[o]);
                    for c in 0..in_c {
                        for kh in 0..k {
                            for kw in 0..k {
                                let iy = (oy * stride + kh) as isize - padding as isize;
                                let ix = (ox * stride + kw) as isize - padding as isize;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                    acc += x[[b, c, iy as usize, ix as usize]]
                                        * weight[[o, c, kh, kw]];
                                }
                            }
                        }
                    }
                    y[[b, o, oy, ox]] = acc;
                }
            }
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{fill_random, gradcheck_scalar_loss};
    use ndarray::Ix4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for &(stride, padding, k, h) in &[(1usize, 1usize, 3usize, 6usize), (2, 1, 3, 7), (2, 3, 7, 9), (2, 0, 1, 5)] {
            let mut conv = Conv2d::new(2, 3, k, stride, padding, true);
            fill_random(&mut conv.weight.value, &mut rng, 0.5);
            fill_random(&mut conv.bias.as_mut().unwrap().value, &mut rng, 0.5);
            let mut x = Array4::zeros((2, 2, h, h));
            x.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
            let got = conv.forward(&x, false);
            let bias: Vec<f64> = conv.bias.as_ref().unwrap().value.iter().copied().collect();
            let expected = conv2d_reference(
                &x,
                &conv.weight.value.view().into_dimensionality::<Ix4>().unwrap(),
                Some(&bias),
                stride,
                padding,
            );
            let max_err = (&got - &expected).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(max_err < 1e-12, "stride {stride} pad {padding}: err {max_err}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let mut conv = Conv2d::new(2, 3, 3, 2, 1, true);
        fill_random(&mut conv.weight.value, &mut rng, 0.5);
        fill_random(&mut conv.bias.as_mut().unwrap().value, &mut rng, 0.5);
        let mut x = Array4::zeros((2, 2, 5, 5));
        x.mapv_inplace(|_| rng.gen_range(-1.0..1.0));

        gradcheck_scalar_loss(
            &mut conv,
            x.into_dyn(),
            |layer, x| {
                layer
                    .forward(&x.clone().into_dimensionality::<Ix4>().unwrap(), true)
                    .into_dyn()
            },
            |layer, dy| {
                layer
                    .backward(&dy.clone().into_dimensionality::<Ix4>().unwrap())
                    .into_dyn()
            },
            &mut rng,
            1e-5,
            1e-6,
        );
    }

    #[test]
    #[should_panic(expected = "training-mode forward")]
    fn backward_without_forward_panics() {
        let mut conv = Conv2d::new(1, 1, 3, 1, 1, false);
        let x = Array4::zeros((1, 1, 4, 4));
        let y = conv.forward(&x, false); // eval mode leaves no cache
        conv.backward(&y);
    }
}
