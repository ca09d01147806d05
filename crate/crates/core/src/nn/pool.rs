//! Max pooling over (B, C, H, W) with argmax caching for the backward pass.
//! Padding taps are ignored (treated as −∞); ties pick the first window
//! position in row-major scan order, so backward is deterministic.

use ndarray::Array4;

#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Cached source index (iy·W + ix) per output element.
    cache: Option<(Array4<usize>, (usize, usize, usize, usize))>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        assert!(kernel >= 1 && stride >= 1);
        assert!(padding < kernel, "a window must always see a valid pixel");
        MaxPool2d {
            kernel,
            stride,
            padding,
            cache: None,
        }
    }

    pub fn out_size(&self, n: usize) -> usize {
        (n + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let (batch, channels, h, w) = x.dim();
        let (oh, ow) = (self.out_size(h), self.out_size(w));
        let mut y = Array4::zeros((batch, channels, oh, ow));
        let mut argmax = Array4::zeros((batch, channels, oh, ow));
        for b in 0..batch {
            for c in 0..channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_src = usize::MAX;
                        for kh in 0..self.kernel {
                            let iy = (oy * self.stride + kh) as isize - self.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kw in 0..self.kernel {
                                let ix = (ox * self.stride + kw) as isize - self.padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let v = x[[b, c, iy as usize, ix as usize]];
                                if v > best {
                                    best = v;
                                    best_src = iy as usize * w + ix as usize;
                                }
                            }
                        }
                        debug_assert_ne!(best_src, usize::MAX, "window saw no valid pixel");
                        y[[b, c, oy, ox]] = best;
                        argmax[[b, c, oy, ox]] = best_src;
                    }
                }
            }
        }
        self.cache = train.then_some((argmax, (batch, channels, h, w)));
        y
    }

    pub fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let (argmax, (batch, channels, h, w)) = self
            .cache
            .take()
            .expect("MaxPool2d::backward requires a training-mode forward first");
        assert_eq!(dy.dim(), argmax.dim(), "output gradient shape");
        let mut dx = Array4::zeros((batch, channels, h, w));
        let (_, _, oh, ow) = dy.dim();
        for b in 0..batch {
            for c in 0..channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let src = argmax[[b, c, oy, ox]];
                        dx[[b, c, src / w, src % w]] += dy[[b, c, oy, ox]];
                    }
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_picks_window_maxima_with_padding() {
        // 4×4 single-channel input, kernel 3, stride 2, padding 1 → 2×2.
        let m = arr2(&[
            [1.0, 2.0, 3.0, 4.0],
            [5.0, 6.0, 7.0, 8.0],
            [9.0, 10.0, 11.0, 12.0],
            [13.0, 14.0, 15.0, 16.0],
        ]);
        let mut x = Array4::zeros((1, 1, 4, 4));
        x.index_axis_mut(ndarray::Axis(0), 0)
            .index_axis_mut(ndarray::Axis(0), 0)
            .assign(&m);
        let mut pool = MaxPool2d::new(3, 2, 1);
        let y = pool.forward(&x, false);
        assert_eq!(y.dim(), (1, 1, 2, 2));
        assert_eq!(y[[0, 0, 0, 0]], 6.0);
        assert_eq!(y[[0, 0, 0, 1]], 8.0);
        assert_eq!(y[[0, 0, 1, 0]], 14.0);
        assert_eq!(y[[0, 0, 1, 1]], 16.0);
    }

    #[test]
    fn backward_routes_gradient_to_argmax_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(301);
        // Distinct values guarantee unique argmaxes.
        let mut vals: Vec<f64> = (0..2 * 2 * 5 * 5).map(|i| i as f64 * 0.37).collect();
        use rand::seq::SliceRandom;
        vals.shuffle(&mut rng);
        let x = Array4::from_shape_vec((2, 2, 5, 5), vals).unwrap();
        let mut pool = MaxPool2d::new(3, 2, 1);
        let y = pool.forward(&x, true);
        let mut dy = Array4::zeros(y.raw_dim());
        dy.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
        let dx = pool.backward(&dy);

        // Finite differences: perturbing a non-argmax pixel slightly never
        // changes the output, and the analytic dx sums the dy of every
        // window the pixel wins.
        let step = 1e-6;
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp.as_slice_mut().unwrap()[idx] += step;
            let y_up = pool.forward(&xp, false);
            xp.as_slice_mut().unwrap()[idx] -= 2.0 * step;
            let y_down = pool.forward(&xp, false);
            let numeric: f64 = (&y_up - &y_down)
                .iter()
                .zip(dy.iter())
                .map(|(d, g)| d / (2.0 * step) * g)
                .sum();
            let analytic = dx.as_slice().unwrap()[idx];
            // Tolerance sits well below the 0.37 value spacing (a routing
            // error shows up at that scale) but above FD cancellation noise.
            assert!(
                (analytic - numeric).abs() < 1e-7,
                "pixel {idx}: analytic {analytic}, numeric {numeric}"
            );
        }
    }

    #[test]
    fn output_size_matches_floor_arithmetic() {
        let pool = MaxPool2d::new(3, 2, 1);
        assert_eq!(pool.out_size(128), 64);
        assert_eq!(pool.out_size(32), 16);
        assert_eq!(pool.out_size(16), 8);
    }
}
