//! Per-pose 21×21 binary relation matrices.
//!
//! Three constructions share the [`RelationMatrix`] type: the relations
//! function (joints related iff their predicted class labels match), the
//! adaptive-nearest-neighbour matrix (joints related iff their coordinate
//! MSE falls under a learnable threshold θ), and a fixed-K nearest-neighbour
//! baseline. All three are binary and symmetric; class-based matrices are
//! additionally full equivalence relations (reflexive and transitive).
//!
//! Gradient contracts live here even though the matrices are built outside
//! the autodiff machinery: class-based matrices are constants during
//! backpropagation (argmax has no useful gradient; the classifiers learn
//! from their own cross-entropy losses), while θ trains through a
//! straight-through sigmoid relaxation — the forward value is the hard
//! {0,1} matrix, the θ-gradient uses dσ((θ−D)/τ)/dθ (see
//! [`ann_theta_grad`]).

use ndarray::{Array2, ArrayView2, ArrayView3};

use crate::error::{Error, Result};
use crate::skeleton::NUM_JOINTS;

/// Initial value for the learnable ANN threshold, matching the magnitude of
/// the converged values reported on both benchmarks (≈0.05).
pub const THETA_INIT: f64 = 0.05;

/// Temperature of the sigmoid relaxation used for θ's gradient path.
pub const THETA_RELAX_TAU: f64 = 0.01;

/// A learnable scalar distance threshold in squared normalized-coordinate
/// units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnThreshold {
    pub theta: f64,
}

impl AnnThreshold {
    pub fn new(theta: f64) -> Result<Self> {
        if !theta.is_finite() {
            return Err(Error::InvalidConfig(format!("theta must be finite, got {theta}")));
        }
        Ok(AnnThreshold { theta })
    }
}

impl Default for AnnThreshold {
    fn default() -> Self {
        AnnThreshold { theta: THETA_INIT }
    }
}

/// A symmetric 21×21 matrix with entries in {0, 1}. Batches are represented
/// as `Vec<RelationMatrix>`, one matrix per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationMatrix(Array2<f64>);

impl RelationMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if entries.shape() != [NUM_JOINTS, NUM_JOINTS] {
            return Err(Error::InvalidAdjacency(format!(
                "expected shape [{NUM_JOINTS}, {NUM_JOINTS}], got {:?}",
                entries.shape()
            )));
        }
        for i in 0..NUM_JOINTS {
            for j in 0..NUM_JOINTS {
                let v = entries[[i, j]];
                if v != 0.0 && v != 1.0 {
                    return Err(Error::InvalidAdjacency(format!(
                        "entry ({i}, {j}) = {v} is not in {{0, 1}}"
                    )));
                }
                if entries[[i, j]] != entries[[j, i]] {
                    return Err(Error::InvalidAdjacency(format!(
                        "asymmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(RelationMatrix(entries))
    }

    pub fn identity() -> Self {
        RelationMatrix(Array2::eye(NUM_JOINTS))
    }

    pub fn ones() -> Self {
        RelationMatrix(Array2::ones((NUM_JOINTS, NUM_JOINTS)))
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    pub fn is_reflexive(&self) -> bool {
        (0..NUM_JOINTS).all(|i| self.0[[i, i]] == 1.0)
    }

    /// True when the relation is transitive: i~j and j~k imply i~k.
    pub fn is_transitive(&self) -> bool {
        for i in 0..NUM_JOINTS {
            for j in 0..NUM_JOINTS {
                if self.0[[i, j]] != 1.0 {
                    continue;
                }
                for k in 0..NUM_JOINTS {
                    if self.0[[j, k]] == 1.0 && self.0[[i, k]] != 1.0 {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Per-joint argmax class labels from logits of shape (B, C, 21), applying
/// softmax over the class dimension first. Ties take the lowest class index
/// (argmax over the resulting multi-hot vector returns its first maximum).
pub fn predicted_labels(logits: ArrayView3<f64>) -> Result<Vec<[usize; NUM_JOINTS]>> {
    let (batch, classes, joints) = logits.dim();
    if joints != NUM_JOINTS || classes == 0 || batch == 0 {
        return Err(Error::ShapeMismatch(format!(
            "logits must be (B >= 1, C >= 1, {NUM_JOINTS}), got {:?}",
            logits.shape()
        )));
    }
    let mut out = Vec::with_capacity(batch);
    for b in 0..batch {
        let mut labels = [0usize; NUM_JOINTS];
        for j in 0..joints {
            // Softmax over classes, stabilized by the column max; monotone,
            // so the argmax is taken over probabilities exactly as stated.
            let mut col_max = f64::NEG_INFINITY;
            for c in 0..classes {
                col_max = col_max.max(logits[[b, c, j]]);
            }
            if !col_max.is_finite() {
                return Err(Error::InvalidData(format!(
                    "non-finite logit in sample {b}, joint {j}"
                )));
            }
            let mut denom = 0.0;
            for c in 0..classes {
                denom += (logits[[b, c, j]] - col_max).exp();
            }
            let mut best = 0usize;
            let mut best_p = f64::NEG_INFINITY;
            for c in 0..classes {
                let p = (logits[[b, c, j]] - col_max).exp() / denom;
                if p > best_p {
                    best_p = p;
                    best = c;
                }
            }
            labels[j] = best;
        }
        out.push(labels);
    }
    Ok(out)
}

/// The relations function: joints are related iff their predicted class
/// labels coincide, one matrix per batch sample.
///
/// The result is constant with respect to backpropagation — gradients never
/// flow through these matrices.
pub fn relations_function(logits: ArrayView3<f64>) -> Result<Vec<RelationMatrix>> {
    let labels = predicted_labels(logits)?;
    Ok(labels.iter().map(|l| matrix_from_labels(l)).collect())
}

/// Equivalence matrix of a label assignment: M[i][j] = 1 iff label(i) = label(j).
pub fn matrix_from_labels(labels: &[usize; NUM_JOINTS]) -> RelationMatrix {
    let mut m = Array2::zeros((NUM_JOINTS, NUM_JOINTS));
    for i in 0..NUM_JOINTS {
        for j in 0..NUM_JOINTS {
            if labels[i] == labels[j] {
                m[[i, j]] = 1.0;
            }
        }
    }
    RelationMatrix(m)
}

/// Pairwise MSE distance matrix of one pose: D[i][j] = mean over the 3
/// coordinates of the squared differences (not Euclidean distance).
pub fn distance_matrix(pose: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (joints, dims) = pose.dim();
    if joints != NUM_JOINTS || dims != 3 {
        return Err(Error::ShapeMismatch(format!(
            "pose must be ({NUM_JOINTS}, 3), got {:?}",
            pose.shape()
        )));
    }
    let mut d = Array2::zeros((NUM_JOINTS, NUM_JOINTS));
    for i in 0..NUM_JOINTS {
        for j in (i + 1)..NUM_JOINTS {
            let mut acc = 0.0;
            for a in 0..3 {
                let diff = pose[[i, a]] - pose[[j, a]];
                acc += diff * diff;
            }
            let mse = acc / 3.0;
            d[[i, j]] = mse;
            d[[j, i]] = mse;
        }
    }
    Ok(d)
}

/// Adaptive-nearest-neighbour adjacency: M[i][j] = 1 iff D[i][j] ≤ θ.
///
/// The diagonal is all ones whenever θ ≥ 0 (self-distance is 0) and all
/// zeros for θ < 0.
pub fn ann_adjacency(pose: ArrayView2<f64>, theta: AnnThreshold) -> Result<RelationMatrix> {
    let d = distance_matrix(pose)?;
    Ok(RelationMatrix(d.mapv(|v| f64::from(v <= theta.theta))))
}

/// Batched [`ann_adjacency`] over poses of shape (B, 21, 3).
pub fn ann_adjacency_batch(
    poses: ArrayView3<f64>,
    theta: AnnThreshold,
) -> Result<Vec<RelationMatrix>> {
    let (batch, joints, dims) = poses.dim();
    if joints != NUM_JOINTS || dims != 3 {
        return Err(Error::ShapeMismatch(format!(
            "poses must be (B, {NUM_JOINTS}, 3), got {:?}",
            poses.shape()
        )));
    }
    (0..batch)
        .map(|b| ann_adjacency(poses.index_axis(ndarray::Axis(0), b), theta))
        .collect()
}

/// ∂M[i][j]/∂θ under the straight-through relaxation M ≈ σ((θ − D)/τ):
/// entries are s·(1−s)/τ with s = σ((θ − D[i][j])/τ). The training step
/// accumulates θ's gradient as Σ_{i,j} ∂L/∂M[i][j] · this.
pub fn ann_theta_grad(pose: ArrayView2<f64>, theta: AnnThreshold, tau: f64) -> Result<Array2<f64>> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidConfig(format!("tau must be positive, got {tau}")));
    }
    let d = distance_matrix(pose)?;
    Ok(d.mapv(|v| {
        let s = sigmoid((theta.theta - v) / tau);
        s * (1.0 - s) / tau
    }))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fixed-K nearest-neighbour adjacency: j is a neighbour of i when it is
/// among the k smallest MSE distances to i (self included at distance 0),
/// ties broken by joint index; the result is symmetrized with an
/// elementwise max.
pub fn knn_adjacency(pose: ArrayView2<f64>, k: usize) -> Result<RelationMatrix> {
    if k == 0 || k > NUM_JOINTS {
        return Err(Error::InvalidConfig(format!(
            "k must be in [1, {NUM_JOINTS}], got {k}"
        )));
    }
    let rows = knn_rows(pose, k)?;
    let mut m = rows.clone();
    for i in 0..NUM_JOINTS {
        for j in 0..NUM_JOINTS {
            m[[i, j]] = rows[[i, j]].max(rows[[j, i]]);
        }
    }
    Ok(RelationMatrix(m))
}

/// Pre-symmetrization neighbour rows; each row sums to exactly k.
fn knn_rows(pose: ArrayView2<f64>, k: usize) -> Result<Array2<f64>> {
    let d = distance_matrix(pose)?;
    let mut rows = Array2::zeros((NUM_JOINTS, NUM_JOINTS));
    for i in 0..NUM_JOINTS {
        let mut order: Vec<usize> = (0..NUM_JOINTS).collect();
        order.sort_by(|&a, &b| {
            d[[i, a]]
                .partial_cmp(&d[[i, b]])
                .expect("distances are finite")
                .then(a.cmp(&b))
        });
        for &j in order.iter().take(k) {
            rows[[i, j]] = 1.0;
        }
    }
    Ok(rows)
}
