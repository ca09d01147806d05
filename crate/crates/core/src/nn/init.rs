//! Weight initialization: Normal(0, 0.02) for the CNN backbone, Xavier
//! uniform with gain √2 for graph weights, near-identity for learned
//! adjacencies.

use ndarray::{Array2, ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Gain applied to Xavier initialization of graph-layer weights.
pub const GRAPH_GAIN: f64 = std::f64::consts::SQRT_2;

/// Standard deviation for backbone convolution weights.
pub const BACKBONE_STD: f64 = 0.02;

/// Standard deviation of the noise added to identity-initialized adjacencies.
pub const ADJACENCY_NOISE_STD: f64 = 0.01;

/// Samples every entry from Normal(0, std).
pub fn normal(rng: &mut impl Rng, shape: &[usize], std: f64) -> ArrayD<f64> {
    let dist = Normal::new(0.0, std).expect("std must be finite and positive");
    let mut out = ArrayD::zeros(IxDyn(shape));
    out.mapv_inplace(|_| dist.sample(rng));
    out
}

/// Xavier (Glorot) uniform for a (fan_in, fan_out) weight matrix:
/// U(−a, a) with a = gain · √(6 / (fan_in + fan_out)).
pub fn xavier_uniform(rng: &mut impl Rng, fan_in: usize, fan_out: usize, gain: f64) -> Array2<f64> {
    let a = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut out = Array2::zeros((fan_in, fan_out));
    out.mapv_inplace(|_| rng.gen_range(-a..a));
    out
}

/// Identity plus small Gaussian noise; the starting point for every learned
/// global adjacency Â, so propagation begins near per-joint passthrough.
pub fn adjacency(rng: &mut impl Rng, n: usize) -> Array2<f64> {
    let dist = Normal::new(0.0, ADJACENCY_NOISE_STD).expect("static std");
    let mut out = Array2::eye(n);
    out.mapv_inplace(|v| v + dist.sample(rng));
    out
}
