//! Ground-truth block-class labels for each joint.
//!
//! 2D space is a fixed `splits × splits` grid over the square crop frame;
//! 3D space is a `splits³` grid over the pose's own bounding box, so 3D
//! labels are invariant to global translation and uniform scaling. Labels
//! come from scanning closed intervals in order, which makes the tie rule
//! explicit: a joint sitting exactly on a grid line belongs to the lowest
//! matching class (the first set position of its multi-hot membership
//! vector). An independent floor-arithmetic oracle cross-checks the scan
//! everywhere except on those boundaries.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::skeleton::{HandPose2D, HandPose3D, NUM_JOINTS};

/// Grid resolutions for both quantizers plus the crop frame they apply to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizerConfig {
    /// The 2D grid is `splits_2d × splits_2d`, so N = splits_2d².
    pub splits_2d: usize,
    /// The 3D grid is `splits_3d³`, so K = splits_3d³.
    pub splits_3d: usize,
    /// Side of the square crop frame the 2D grid partitions.
    pub image_size: usize,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        // 16 2D classes and 27 3D classes over the 256-pixel crop.
        QuantizerConfig {
            splits_2d: 4,
            splits_3d: 3,
            image_size: 256,
        }
    }
}

impl QuantizerConfig {
    pub fn num_classes_2d(&self) -> usize {
        self.splits_2d * self.splits_2d
    }

    pub fn num_classes_3d(&self) -> usize {
        self.splits_3d * self.splits_3d * self.splits_3d
    }

    pub fn validate(&self) -> Result<()> {
        if self.splits_2d == 0 || self.splits_3d == 0 {
            return Err(Error::InvalidConfig("splits must be >= 1".into()));
        }
        if self.image_size / self.splits_2d == 0 {
            return Err(Error::InvalidConfig(format!(
                "image_size {} is smaller than splits_2d {}",
                self.image_size, self.splits_2d
            )));
        }
        Ok(())
    }
}

/// Per-joint class labels, all in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointClassLabels {
    labels: [usize; NUM_JOINTS],
    num_classes: usize,
}

impl JointClassLabels {
    pub fn from_labels(labels: [usize; NUM_JOINTS], num_classes: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidConfig(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(JointClassLabels { labels, num_classes })
    }

    pub fn labels(&self) -> &[usize; NUM_JOINTS] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// One-hot rows, shape (21, C); every row sums to exactly 1.
    pub fn one_hot(&self) -> Array2<f64> {
        let mut m = Array2::zeros((NUM_JOINTS, self.num_classes));
        for (j, &label) in self.labels.iter().enumerate() {
            m[[j, label]] = 1.0;
        }
        m
    }
}

/// Stacks per-sample labels into the batched ground-truth tensor of shape
/// (B, C, 21) used by the classification loss.
pub fn stack_targets(batch: &[JointClassLabels]) -> Result<Array3<f64>> {
    let first = batch
        .first()
        .ok_or_else(|| Error::InvalidData("empty label batch".into()))?;
    let c = first.num_classes();
    if batch.iter().any(|l| l.num_classes() != c) {
        return Err(Error::InvalidData("mixed class counts in label batch".into()));
    }
    let mut out = Array3::zeros((batch.len(), c, NUM_JOINTS));
    for (b, labels) in batch.iter().enumerate() {
        for (j, &label) in labels.labels().iter().enumerate() {
            out[[b, label, j]] = 1.0;
        }
    }
    Ok(out)
}

/// Index of the first closed interval `[parts[t], parts[t+1]]` containing `v`,
/// or None when `v` lies outside every interval.
fn scan_intervals(parts: &[f64], v: f64) -> Option<usize> {
    (0..parts.len() - 1).find(|&t| v >= parts[t] && v <= parts[t + 1])
}

/// 2D class labels over the square crop frame.
///
/// The grid has `splits` intervals per axis built from `block =
/// floor(size / splits)`: parts = {0, block, 2·block, ..., splits·block}.
/// A size not divisible by `splits` leaves a strip beyond the last interval
/// in which joints are out of range — surfaced as an error, never clamped.
/// Labels are `jx · splits + iy` with x scanned before y.
pub fn create_classes_2d(pose: &HandPose2D, splits: usize, size: usize) -> Result<JointClassLabels> {
    let parts = parts_2d(splits, size)?;
    let coords = pose.as_array();
    let mut labels = [0usize; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        let (x, y) = (coords[[j, 0]], coords[[j, 1]]);
        let jx = scan_intervals(&parts, x);
        let iy = scan_intervals(&parts, y);
        match (jx, iy) {
            (Some(jx), Some(iy)) => labels[j] = jx * splits + iy,
            _ => {
                return Err(Error::JointOutOfRange {
                    joint: j,
                    coords: vec![x, y],
                })
            }
        }
    }
    Ok(JointClassLabels {
        labels,
        num_classes: splits * splits,
    })
}

/// 3D class labels over the pose's own bounding box.
///
/// Each axis of the box is cut into `splits` equal closed intervals; an axis
/// with zero extent is widened by ±1e-6 so the step stays positive. Labels
/// are `jx · splits² + iy · splits + pz` with x outermost and z innermost.
pub fn create_classes_3d(pose: &HandPose3D, splits: usize) -> Result<JointClassLabels> {
    if splits == 0 {
        return Err(Error::InvalidConfig("splits must be >= 1".into()));
    }
    let parts = parts_3d(pose, splits);
    let coords = pose.as_array();
    let mut labels = [0usize; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            idx[a] = scan_intervals(&parts[a], coords[[j, a]]).ok_or(Error::JointOutOfRange {
                joint: j,
                coords: (0..3).map(|a| coords[[j, a]]).collect(),
            })?;
        }
        labels[j] = idx[0] * splits * splits + idx[1] * splits + idx[2];
    }
    Ok(JointClassLabels {
        labels,
        num_classes: splits * splits * splits,
    })
}

fn parts_2d(splits: usize, size: usize) -> Result<Vec<f64>> {
    if splits == 0 {
        return Err(Error::InvalidConfig("splits must be >= 1".into()));
    }
    let block = size / splits;
    if block == 0 {
        return Err(Error::InvalidConfig(format!(
            "size {size} is smaller than splits {splits}"
        )));
    }
    Ok((0..=splits).map(|t| (t * block) as f64).collect())
}

/// Per-axis interval boundaries for the 3D grid: splits+1 entries per axis,
/// first = min, last = exactly max (not min + splits·step, which can fall a
/// few ulps short and would orphan joints sitting on the maximum corner).
fn parts_3d(pose: &HandPose3D, splits: usize) -> [Vec<f64>; 3] {
    let coords = pose.as_array();
    let mut out: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for a in 0..3 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for j in 0..NUM_JOINTS {
            lo = lo.min(coords[[j, a]]);
            hi = hi.max(coords[[j, a]]);
        }
        if hi - lo == 0.0 {
            lo -= 1e-6;
            hi += 1e-6;
        }
        let step = (hi - lo) / splits as f64;
        let mut parts: Vec<f64> = (0..=splits).map(|t| lo + t as f64 * step).collect();
        parts[splits] = hi;
        out[a] = parts;
    }
    out
}

/// Independent oracle for [`create_classes_2d`]: direct floor arithmetic
/// `min(floor(v / block), splits − 1)` instead of interval scanning. Agrees
/// with the scan everywhere except exactly on interior grid lines, where the
/// scan's first-match rule is authoritative (the oracle picks the upper
/// block there).
pub fn oracle_classes_2d(pose: &HandPose2D, splits: usize, size: usize) -> Result<JointClassLabels> {
    let parts = parts_2d(splits, size)?;
    let block = (size / splits) as f64;
    let top = parts[splits];
    let coords = pose.as_array();
    let mut labels = [0usize; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        let (x, y) = (coords[[j, 0]], coords[[j, 1]]);
        if !(0.0..=top).contains(&x) || !(0.0..=top).contains(&y) {
            return Err(Error::JointOutOfRange {
                joint: j,
                coords: vec![x, y],
            });
        }
        let jx = ((x / block).floor() as usize).min(splits - 1);
        let iy = ((y / block).floor() as usize).min(splits - 1);
        labels[j] = jx * splits + iy;
    }
    Ok(JointClassLabels {
        labels,
        num_classes: splits * splits,
    })
}

/// Independent oracle for [`create_classes_3d`]: clamped
/// `floor((v − min) / step)` per axis over the same pose-relative grid.
pub fn oracle_classes_3d(pose: &HandPose3D, splits: usize) -> Result<JointClassLabels> {
    if splits == 0 {
        return Err(Error::InvalidConfig("splits must be >= 1".into()));
    }
    let parts = parts_3d(pose, splits);
    let coords = pose.as_array();
    let mut labels = [0usize; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let lo = parts[a][0];
            let hi = parts[a][splits];
            let step = (hi - lo) / splits as f64;
            let t = ((coords[[j, a]] - lo) / step).floor();
            idx[a] = (t.max(0.0) as usize).min(splits - 1);
        }
        labels[j] = idx[0] * splits * splits + idx[1] * splits + idx[2];
    }
    Ok(JointClassLabels {
        labels,
        num_classes: splits * splits * splits,
    })
}
