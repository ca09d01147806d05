//! Training objectives: per-joint cross-entropy over class logits, L2
//! regression over coordinates, and the weighted coarse-stage combination
//! L = δ₁·(reg2d + reg3d) + δ₂·(cls2d + cls3d) with δ₁ = 100, δ₂ = 1.
//!
//! Conventions: cross-entropy sums over the 21 joints and averages over the
//! batch; L2 averages over batch × joints × coordinates, so both weights
//! keep their meaning at any batch size. The refinement stage reuses the L2
//! form on 3D coordinates alone.

use ndarray::{Array3, ArrayView3};

use crate::error::{Error, Result};
use crate::quantizer::JointClassLabels;
use crate::skeleton::NUM_JOINTS;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Regression weight δ₁.
    pub delta1: f64,
    /// Classification weight δ₂.
    pub delta2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            delta1: 100.0,
            delta2: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta1.is_finite() && self.delta2.is_finite())
            || self.delta1 < 0.0
            || self.delta2 < 0.0
        {
            return Err(Error::InvalidConfig(format!(
                "loss weights must be finite and non-negative, got δ1={} δ2={}",
                self.delta1, self.delta2
            )));
        }
        Ok(())
    }
}

/// Per-component coarse losses and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseLosses {
    pub reg_2d: f64,
    pub reg_3d: f64,
    pub cls_2d: f64,
    pub cls_3d: f64,
    pub total: f64,
}

/// δ₁·(reg2d + reg3d) + δ₂·(cls2d + cls3d).
pub fn coarse_combination(
    reg_2d: f64,
    reg_3d: f64,
    cls_2d: f64,
    cls_3d: f64,
    weights: &LossWeights,
) -> f64 {
    weights.delta1 * (reg_2d + reg_3d) + weights.delta2 * (cls_2d + cls_3d)
}

fn check_labels(logits: &ArrayView3<f64>, labels: &[JointClassLabels]) -> Result<()> {
    let (batch, classes, joints) = logits.dim();
    if joints != NUM_JOINTS {
        return Err(Error::ShapeMismatch(format!(
            "logits must have {NUM_JOINTS} joints, got {joints}"
        )));
    }
    if labels.len() != batch {
        return Err(Error::ShapeMismatch(format!(
            "{} label sets for a batch of {batch}",
            labels.len()
        )));
    }
    for set in labels {
        if set.num_classes() != classes {
            return Err(Error::ShapeMismatch(format!(
                "labels drawn from {} classes but logits have {classes}",
                set.num_classes()
            )));
        }
    }
    Ok(())
}

/// Sum over joints of per-joint cross-entropy between class logits
/// (B, C, 21) and integer labels, averaged over the batch.
pub fn classification_loss(
    logits: ArrayView3<f64>,
    labels: &[JointClassLabels],
) -> Result<f64> {
    Ok(classification_loss_backward(logits, labels)?.0)
}

/// As [`classification_loss`], also returning ∂L/∂logits (softmax minus
/// one-hot, divided by the batch size).
pub fn classification_loss_backward(
    logits: ArrayView3<f64>,
    labels: &[JointClassLabels],
) -> Result<(f64, Array3<f64>)> {
    check_labels(&logits, labels)?;
    let (batch, classes, _) = logits.dim();
    let mut loss = 0.0;
    let mut dlogits = Array3::zeros(logits.raw_dim());
    for b in 0..batch {
        for j in 0..NUM_JOINTS {
            let col = logits.slice(ndarray::s![b, .., j]);
            let label = labels[b].labels()[j];
            let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = col.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + sum_exp.ln();
            loss += lse - col[label];
            for c in 0..classes {
                let p = (col[c] - max).exp() / sum_exp;
                let target = if c == label { 1.0 } else { 0.0 };
                dlogits[[b, c, j]] = (p - target) / batch as f64;
            }
        }
    }
    Ok((loss / batch as f64, dlogits))
}

fn check_same_shape(pred: &ArrayView3<f64>, gt: &ArrayView3<f64>) -> Result<()> {
    if pred.dim() != gt.dim() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    Ok(())
}

/// Mean squared error over every coordinate of a (B, 21, D) batch.
pub fn regression_loss(pred: ArrayView3<f64>, gt: ArrayView3<f64>) -> Result<f64> {
    check_same_shape(&pred, &gt)?;
    let n = pred.len() as f64;
    Ok((&pred - &gt).mapv(|v| v * v).sum() / n)
}

/// As [`regression_loss`], also returning ∂L/∂pred = 2(pred − gt)/n.
pub fn regression_loss_backward(
    pred: ArrayView3<f64>,
    gt: ArrayView3<f64>,
) -> Result<(f64, Array3<f64>)> {
    check_same_shape(&pred, &gt)?;
    let n = pred.len() as f64;
    let diff = &pred - &gt;
    let loss = diff.mapv(|v| v * v).sum() / n;
    Ok((loss, diff.mapv(|v| 2.0 * v / n)))
}

/// L2 objective of the refinement stage: identical to [`regression_loss`]
/// restricted to 3D coordinates.
pub fn refinement_loss(fine: ArrayView3<f64>, gt: ArrayView3<f64>) -> Result<f64> {
    if fine.dim().2 != 3 {
        return Err(Error::ShapeMismatch(format!(
            "refinement loss expects 3D coordinates, got {}",
            fine.dim().2
        )));
    }
    regression_loss(fine, gt)
}

/// Softmax over the last axis of a (B, 21, C) node-layout tensor.
pub fn softmax_last_axis(x: &Array3<f64>) -> Array3<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Backward of [`softmax_last_axis`]: dx = p ⊙ (dp − ⟨dp, p⟩) rowwise.
pub fn softmax_last_axis_backward(probs: &Array3<f64>, dprobs: &Array3<f64>) -> Array3<f64> {
    let mut dx = Array3::zeros(probs.raw_dim());
    for ((mut dx_row, p_row), dp_row) in dx
        .rows_mut()
        .into_iter()
        .zip(probs.rows())
        .zip(dprobs.rows())
    {
        let dot: f64 = p_row.iter().zip(dp_row.iter()).map(|(p, d)| p * d).sum();
        for ((dx_v, &p), &dp) in dx_row.iter_mut().zip(p_row.iter()).zip(dp_row.iter()) {
            *dx_v = p * (dp - dot);
        }
    }
    dx
}

/// Transpose between class layout (B, C, 21) and node layout (B, 21, C).
pub fn swap_class_and_node_axes(x: &Array3<f64>) -> Array3<f64> {
    let mut t = x.view();
    t.swap_axes(1, 2);
    t.to_owned()
}
