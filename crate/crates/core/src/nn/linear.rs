//! Dense layer y = xW + b over (B, F_in) inputs. Used by the
//! fully-connected refinement baseline.

use ndarray::{Array2, Ix1, Ix2};

use crate::nn::param::{join, Param, Params};

#[derive(Debug, Clone)]
pub struct Linear {
    /// Weights shaped (in_features, out_features).
    pub weight: Param,
    pub bias: Option<Param>,
    cache: Option<Array2<f64>>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, bias: bool) -> Self {
        Linear {
            weight: Param::zeros(&[in_features, out_features]),
            bias: bias.then(|| Param::zeros(&[out_features])),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<f64>, train: bool) -> Array2<f64> {
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        assert_eq!(x.dim().1, w.dim().0, "input feature mismatch");
        let mut y = x.dot(&w);
        if let Some(bias) = &self.bias {
            let b = bias.value.view().into_dimensionality::<Ix1>().unwrap();
            y += &b;
        }
        self.cache = train.then(|| x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let x = self
            .cache
            .take()
            .expect("Linear::backward requires a training-mode forward first");
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let dw = x.t().dot(dy);
        let dx = dy.dot(&w.t());
        {
            let mut wg = self.weight.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
            wg += &dw;
        }
        if let Some(bias) = &mut self.bias {
            let mut bg = bias.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
            for col in 0..dy.dim().1 {
                bg[col] += dy.column(col).sum();
            }
        }
        dx
    }
}

impl Params for Linear {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{fill_random, gradcheck_scalar_loss};
    use ndarray::{arr2, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_is_affine() {
        let mut lin = Linear::new(2, 3, true);
        lin.weight.value = ndarray::arr2(&[[1.0, 0.0, 2.0], [0.0, 1.0, -1.0]]).into_dyn();
        lin.bias.as_mut().unwrap().value = ndarray::arr1(&[0.5, -0.5, 0.0]).into_dyn();
        let x = arr2(&[[1.0, 2.0]]);
        let y = lin.forward(&x, false);
        assert_eq!(y, arr2(&[[1.5, 1.5, 0.0]]));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(401);
        let mut lin = Linear::new(5, 4, true);
        fill_random(&mut lin.weight.value, &mut rng, 0.8);
        fill_random(&mut lin.bias.as_mut().unwrap().value, &mut rng, 0.8);
        let mut x = Array2::zeros((3, 5));
        x.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
        gradcheck_scalar_loss(
            &mut lin,
            x.into_dyn(),
            |layer, x| {
                layer
                    .forward(&x.clone().into_dimensionality::<Ix2>().unwrap(), true)
                    .into_dyn()
            },
            |layer, dy| {
                layer
                    .backward(&dy.clone().into_dimensionality::<Ix2>().unwrap())
                    .into_dyn()
            },
            &mut rng,
            1e-6,
            1e-7,
        );
    }
}
