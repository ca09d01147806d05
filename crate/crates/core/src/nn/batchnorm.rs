//! Batch normalization over the channel axis of (B, C, H, W) tensors, with
//! the standard train/inference split: batch statistics (biased variance)
//! normalize during training while exponential running statistics (unbiased
//! variance, momentum 0.1) serve inference.

use ndarray::{Array1, Array4};

use crate::nn::param::{join, Param, Params};

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    /// Per-channel scale γ, initialized to 1.
    pub gamma: Param,
    /// Per-channel shift β, initialized to 0.
    pub beta: Param,
    /// Running statistics — buffers, not parameters: saved in checkpoints
    /// but never touched by the optimizer.
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    x_hat: Array4<f64>,
    inv_std: Array1<f64>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        let mut gamma = Param::zeros(&[channels]);
        gamma.value.fill(1.0);
        BatchNorm2d {
            gamma,
            beta: Param::zeros(&[channels]),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let (batch, channels, h, w) = x.dim();
        assert_eq!(channels, self.channels(), "channel mismatch");
        let gamma = self.gamma.value.as_slice().unwrap();
        let beta = self.beta.value.as_slice().unwrap();
        let mut y = Array4::zeros((batch, channels, h, w));
        if !train {
            for c in 0..channels {
                let inv_std = 1.0 / (self.running_var[c] + self.eps).sqrt();
                let mean = self.running_mean[c];
                for b in 0..batch {
                    for iy in 0..h {
                        for ix in 0..w {
                            y[[b, c, iy, ix]] =
                                gamma[c] * (x[[b, c, iy, ix]] - mean) * inv_std + beta[c];
                        }
                    }
                }
            }
            return y;
        }

        let m = (batch * h * w) as f64;
        let mut x_hat = Array4::zeros((batch, channels, h, w));
        let mut inv_std_all = Array1::zeros(channels);
        for c in 0..channels {
            let mut sum = 0.0;
            for b in 0..batch {
                for iy in 0..h {
                    for ix in 0..w {
                        sum += x[[b, c, iy, ix]];
                    }
                }
            }
            let mean = sum / m;
            let mut var_sum = 0.0;
            for b in 0..batch {
                for iy in 0..h {
                    for ix in 0..w {
                        let d = x[[b, c, iy, ix]] - mean;
                        var_sum += d * d;
                    }
                }
            }
            let var = var_sum / m; // biased, used for normalization
            let inv_std = 1.0 / (var + self.eps).sqrt();
            inv_std_all[c] = inv_std;
            for b in 0..batch {
                for iy in 0..h {
                    for ix in 0..w {
                        let xh = (x[[b, c, iy, ix]] - mean) * inv_std;
                        x_hat[[b, c, iy, ix]] = xh;
                        y[[b, c, iy, ix]] = gamma[c] * xh + beta[c];
                    }
                }
            }
            // Running stats track the unbiased variance.
            let unbiased = if m > 1.0 { var_sum / (m - 1.0) } else { var };
            self.running_mean[c] = (1.0 - self.momentum) * self.running_mean[c] + self.momentum * mean;
            self.running_var[c] = (1.0 - self.momentum) * self.running_var[c] + self.momentum * unbiased;
        }
        self.cache = Some(BnCache {
            x_hat,
            inv_std: inv_std_all,
        });
        y
    }

    pub fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let cache = self
            .cache
            .take()
            .expect("BatchNorm2d::backward requires a training-mode forward first");
        let (batch, channels, h, w) = dy.dim();
        let m = (batch * h * w) as f64;
        let gamma = self.gamma.value.as_slice().unwrap();
        let mut dx = Array4::zeros((batch, channels, h, w));
        let dgamma = self.gamma.grad.as_slice_mut().unwrap();
        let dbeta = self.beta.grad.as_slice_mut().unwrap();
        for c in 0..channels {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for b in 0..batch {
                for iy in 0..h {
                    for ix in 0..w {
                        let g = dy[[b, c, iy, ix]];
                        sum_dy += g;
                        sum_dy_xhat += g * cache.x_hat[[b, c, iy, ix]];
                    }
                }
            }
            dgamma[c] += sum_dy_xhat;
            dbeta[c] += sum_dy;
            // dx = γ/(m·σ) · (m·dy − Σdy − x̂·Σ(dy·x̂)), batch statistics
            // treated as functions of x.
            let scale = gamma[c] * cache.inv_std[c] / m;
            for b in 0..batch {
                for iy in 0..h {
                    for ix in 0..w {
                        let g = dy[[b, c, iy, ix]];
                        dx[[b, c, iy, ix]] = scale
                            * (m * g - sum_dy - cache.x_hat[[b, c, iy, ix]] * sum_dy_xhat);
                    }
                }
            }
        }
        dx
    }
}

impl Params for BatchNorm2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}
