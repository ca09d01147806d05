//! The 21-joint hand model and coordinate conventions shared by every other
//! module.
//!
//! Joint 0 is the wrist. Joints 1..=20 cover the five fingers in thumb,
//! index, middle, ring, pinky order; within each finger the order is
//! tip, dip, pip, mcp. Every adjacency and relation matrix in this crate
//! indexes joints in exactly this order.
//!
//! Coordinate frames:
//! * 2D poses are either pixels (crop frame) or crop-relative units in [0, 1].
//! * 3D poses are either millimeters (dataset frame) or normalized units:
//!   root-relative with the wrist at the origin, divided by the
//!   wrist→middle-mcp reference bone length.

use ndarray::Array2;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 21;
pub const WRIST: usize = 0;

/// Finger names in index order (finger 0 is the thumb).
pub const FINGERS: [&str; 5] = ["thumb", "index", "middle", "ring", "pinky"];

/// Joint index of finger `f`'s tip (f in 0..5).
pub fn tip(finger: usize) -> usize {
    debug_assert!(finger < 5);
    1 + 4 * finger
}

/// Joint index of finger `f`'s dip joint.
pub fn dip(finger: usize) -> usize {
    debug_assert!(finger < 5);
    2 + 4 * finger
}

/// Joint index of finger `f`'s pip joint.
pub fn pip(finger: usize) -> usize {
    debug_assert!(finger < 5);
    3 + 4 * finger
}

/// Joint index of finger `f`'s mcp joint (knuckle).
pub fn mcp(finger: usize) -> usize {
    debug_assert!(finger < 5);
    4 + 4 * finger
}

/// Bones as (parent, child) pairs: wrist→mcp for each finger, then down the
/// finger mcp→pip→dip→tip.
pub const BONES: [(usize, usize); 20] = [
    (0, 4),
    (4, 3),
    (3, 2),
    (2, 1), // thumb
    (0, 8),
    (8, 7),
    (7, 6),
    (6, 5), // index
    (0, 12),
    (12, 11),
    (11, 10),
    (10, 9), // middle
    (0, 16),
    (16, 15),
    (15, 14),
    (14, 13), // ring
    (0, 20),
    (20, 19),
    (19, 18),
    (18, 17), // pinky
];

/// The wrist→middle-mcp bone whose length defines the normalized 3D scale.
pub const REFERENCE_BONE: (usize, usize) = (0, 12);

fn validate_coords(coords: &Array2<f64>, dims: usize) -> Result<()> {
    if coords.shape() != [NUM_JOINTS, dims] {
        return Err(Error::InvalidPose(format!(
            "expected shape [{NUM_JOINTS}, {dims}], got {:?}",
            coords.shape()
        )));
    }
    if let Some((idx, _)) = coords
        .indexed_iter()
        .find(|(_, v)| !v.is_finite())
    {
        return Err(Error::InvalidPose(format!(
            "non-finite coordinate at joint {}, axis {}",
            idx.0, idx.1
        )));
    }
    Ok(())
}

/// A 2D hand pose: 21 finite (x, y) rows.
#[derive(Debug, Clone, PartialEq)]
pub struct HandPose2D(Array2<f64>);

impl HandPose2D {
    pub fn new(coords: Array2<f64>) -> Result<Self> {
        validate_coords(&coords, 2)?;
        Ok(Self(coords))
    }

    pub fn from_rows(rows: [[f64; 2]; NUM_JOINTS]) -> Result<Self> {
        let mut coords = Array2::zeros((NUM_JOINTS, 2));
        for (j, row) in rows.iter().enumerate() {
            coords[[j, 0]] = row[0];
            coords[[j, 1]] = row[1];
        }
        Self::new(coords)
    }

    pub fn joint(&self, j: usize) -> [f64; 2] {
        [self.0[[j, 0]], self.0[[j, 1]]]
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }
}

/// A 3D hand pose: 21 finite (x, y, z) rows.
#[derive(Debug, Clone, PartialEq)]
pub struct HandPose3D(Array2<f64>);

impl HandPose3D {
    pub fn new(coords: Array2<f64>) -> Result<Self> {
        validate_coords(&coords, 3)?;
        Ok(Self(coords))
    }

    pub fn from_rows(rows: [[f64; 3]; NUM_JOINTS]) -> Result<Self> {
        let mut coords = Array2::zeros((NUM_JOINTS, 3));
        for (j, row) in rows.iter().enumerate() {
            for (a, v) in row.iter().enumerate() {
                coords[[j, a]] = *v;
            }
        }
        Self::new(coords)
    }

    pub fn joint(&self, j: usize) -> [f64; 3] {
        [self.0[[j, 0]], self.0[[j, 1]], self.0[[j, 2]]]
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }
}

// Poses serialize as a plain JSON array of 21 [x, y] or [x, y, z] rows; this
// is the interchange format the CLI reads and writes.
impl Serialize for HandPose2D {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<[f64; 2]> = (0..NUM_JOINTS).map(|j| self.joint(j)).collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for HandPose2D {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<[f64; 2]> = Vec::deserialize(deserializer)?;
        let rows: [[f64; 2]; NUM_JOINTS] = rows
            .try_into()
            .map_err(|v: Vec<_>| D::Error::custom(format!("expected 21 rows, got {}", v.len())))?;
        Self::from_rows(rows).map_err(D::Error::custom)
    }
}

impl Serialize for HandPose3D {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<[f64; 3]> = (0..NUM_JOINTS).map(|j| self.joint(j)).collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for HandPose3D {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<[f64; 3]> = Vec::deserialize(deserializer)?;
        let rows: [[f64; 3]; NUM_JOINTS] = rows
            .try_into()
            .map_err(|v: Vec<_>| D::Error::custom(format!("expected 21 rows, got {}", v.len())))?;
        Self::from_rows(rows).map_err(D::Error::custom)
    }
}

/// An axis-aligned box in the original image frame, guaranteed non-degenerate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl CropBox {
    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    /// Intersects the box with `[0, width] × [0, height]`. Used by dataset
    /// loaders whose margins may spill past the image edge.
    pub fn clamped(&self, width: f64, height: f64) -> CropBox {
        CropBox {
            min_x: self.min_x.max(0.0),
            min_y: self.min_y.max(0.0),
            max_x: self.max_x.min(width),
            max_y: self.max_y.min(height),
        }
    }
}

/// Smallest side allowed for a crop box; degenerate boxes (all joints
/// coincident) are expanded to this so the resize step stays well-defined.
pub const MIN_CROP_SIDE: f64 = 4.0;

/// Bounding box of all 21 joints expanded by `margin` pixels on every side.
///
/// The box is not clamped to any image; callers that need clamping apply
/// [`CropBox::clamped`]. Axes whose expanded extent falls below
/// [`MIN_CROP_SIDE`] are widened symmetrically to that minimum.
pub fn crop_box_from_joints(pose: &HandPose2D, margin: f64) -> Result<CropBox> {
    if !(margin.is_finite() && margin >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "crop margin must be finite and >= 0, got {margin}"
        )));
    }
    let coords = pose.as_array();
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for j in 0..NUM_JOINTS {
        for a in 0..2 {
            min[a] = min[a].min(coords[[j, a]]);
            max[a] = max[a].max(coords[[j, a]]);
        }
    }
    let mut lo = [min[0] - margin, min[1] - margin];
    let mut hi = [max[0] + margin, max[1] + margin];
    for a in 0..2 {
        let side = hi[a] - lo[a];
        if side < MIN_CROP_SIDE {
            let center = 0.5 * (lo[a] + hi[a]);
            lo[a] = center - 0.5 * MIN_CROP_SIDE;
            hi[a] = center + 0.5 * MIN_CROP_SIDE;
        }
    }
    Ok(CropBox {
        min_x: lo[0],
        min_y: lo[1],
        max_x: hi[0],
        max_y: hi[1],
    })
}

/// Centers a 3D pose on its wrist: `out[j] = in[j] − in[0]`.
pub fn root_relative(pose: &HandPose3D) -> HandPose3D {
    let coords = pose.as_array();
    let root = [coords[[WRIST, 0]], coords[[WRIST, 1]], coords[[WRIST, 2]]];
    let mut out = coords.clone();
    for j in 0..NUM_JOINTS {
        for a in 0..3 {
            out[[j, a]] -= root[a];
        }
    }
    // Subtraction of finite values from finite values stays finite.
    HandPose3D(out)
}

/// Euclidean length of the wrist→middle-mcp reference bone.
pub fn reference_bone_length(pose: &HandPose3D) -> f64 {
    let (a, b) = REFERENCE_BONE;
    let pa = pose.joint(a);
    let pb = pose.joint(b);
    ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2) + (pa[2] - pb[2]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pose2d_from_fn(mut f: impl FnMut(usize) -> [f64; 2]) -> HandPose2D {
        let mut rows = [[0.0; 2]; NUM_JOINTS];
        for (j, row) in rows.iter_mut().enumerate() {
            *row = f(j);
        }
        HandPose2D::from_rows(rows).unwrap()
    }

    fn pose3d_from_fn(f: impl Fn(usize) -> [f64; 3]) -> HandPose3D {
        let mut rows = [[0.0; 3]; NUM_JOINTS];
        for (j, row) in rows.iter_mut().enumerate() {
            *row = f(j);
        }
        HandPose3D::from_rows(rows).unwrap()
    }

    #[test]
    fn bone_table_is_a_tree_over_all_joints() {
        assert_eq!(BONES.len(), 20);
        let mut child_seen = [0usize; NUM_JOINTS];
        for &(parent, child) in BONES.iter() {
            assert!(parent < NUM_JOINTS && child < NUM_JOINTS);
            assert_ne!(parent, child);
            child_seen[child] += 1;
        }
        // Every joint except the wrist is the child of exactly one bone.
        assert_eq!(child_seen[WRIST], 0);
        for j in 1..NUM_JOINTS {
            assert_eq!(child_seen[j], 1, "joint {j}");
        }
    }

    #[test]
    fn finger_index_helpers_match_the_ordering() {
        // Finger 2 (middle): tip 9, dip 10, pip 11, mcp 12.
        assert_eq!(tip(2), 9);
        assert_eq!(dip(2), 10);
        assert_eq!(pip(2), 11);
        assert_eq!(mcp(2), 12);
        assert_eq!(REFERENCE_BONE, (WRIST, mcp(2)));
        // All 20 finger joints are distinct and cover 1..=20.
        let mut seen = [false; NUM_JOINTS];
        for f in 0..5 {
            for j in [tip(f), dip(f), pip(f), mcp(f)] {
                assert!(!seen[j]);
                seen[j] = true;
            }
        }
        assert!(seen[1..].iter().all(|&s| s));
    }

    #[test]
    fn pose_validation_rejects_bad_shapes_and_values() {
        assert!(HandPose2D::new(Array2::zeros((20, 2))).is_err());
        assert!(HandPose2D::new(Array2::zeros((21, 3))).is_err());
        let mut coords = Array2::zeros((21, 2));
        coords[[3, 1]] = f64::NAN;
        assert!(HandPose2D::new(coords).is_err());
        let mut coords = Array2::zeros((21, 3));
        coords[[0, 0]] = f64::INFINITY;
        assert!(HandPose3D::new(coords).is_err());
    }

    #[test]
    fn crop_box_matches_min_max_plus_margin() {
        // Joints spanning x in [50, 100], y in [60, 120].
        let pose = pose2d_from_fn(|j| match j {
            0 => [50.0, 60.0],
            1 => [100.0, 120.0],
            _ => [75.0, 90.0],
        });
        let b = crop_box_from_joints(&pose, 10.0).unwrap();
        assert_eq!((b.min_x, b.min_y, b.max_x, b.max_y), (40.0, 50.0, 110.0, 130.0));

        // STB-style margin of 20.
        let pose = pose2d_from_fn(|j| match j {
            0 => [200.0, 100.0],
            1 => [300.0, 250.0],
            _ => [250.0, 175.0],
        });
        let b = crop_box_from_joints(&pose, 20.0).unwrap();
        assert_eq!((b.min_x, b.min_y, b.max_x, b.max_y), (180.0, 80.0, 320.0, 270.0));
    }

    #[test]
    fn degenerate_crop_box_expands_to_minimum_side() {
        let pose = pose2d_from_fn(|_| [5.0, 5.0]);
        let b = crop_box_from_joints(&pose, 0.0).unwrap();
        assert_eq!((b.min_x, b.min_y, b.max_x, b.max_y), (3.0, 3.0, 7.0, 7.0));
        assert_eq!(b.width(), MIN_CROP_SIDE);
        assert_eq!(b.height(), MIN_CROP_SIDE);
    }

    #[test]
    fn crop_box_contains_every_joint() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let pose = pose2d_from_fn(|_| [rng.gen_range(-50.0..350.0), rng.gen_range(-50.0..350.0)]);
            let margin = rng.gen_range(0.0..30.0);
            let b = crop_box_from_joints(&pose, margin).unwrap();
            for j in 0..NUM_JOINTS {
                let [x, y] = pose.joint(j);
                assert!(x >= b.min_x && x <= b.max_x);
                assert!(y >= b.min_y && y <= b.max_y);
            }
        }
    }

    #[test]
    fn root_relative_centers_translates_and_is_idempotent() {
        let constant = pose3d_from_fn(|_| [1.0, 2.0, 3.0]);
        let centered = root_relative(&constant);
        assert!(centered.as_array().iter().all(|&v| v == 0.0));

        let pose = pose3d_from_fn(|j| match j {
            0 => [1.0, 0.0, 0.0],
            5 => [4.0, 4.0, 0.0],
            _ => [2.0, 2.0, 2.0],
        });
        let centered = root_relative(&pose);
        assert_eq!(centered.joint(0), [0.0, 0.0, 0.0]);
        assert_eq!(centered.joint(5), [3.0, 4.0, 0.0]);

        // Idempotence and translation invariance.
        assert_eq!(root_relative(&centered), centered);
        let translated = pose3d_from_fn(|j| {
            let p = pose.joint(j);
            [p[0] + 10.0, p[1] - 3.5, p[2] + 0.25]
        });
        assert_eq!(root_relative(&translated), centered);
    }

    #[test]
    fn reference_bone_length_is_euclidean() {
        let pose = pose3d_from_fn(|j| if j == 12 { [3.0, 4.0, 0.0] } else { [0.0; 3] });
        assert_eq!(reference_bone_length(&pose), 5.0);
    }

    #[test]
    fn poses_round_trip_through_json_rows() {
        let pose = pose3d_from_fn(|j| [j as f64, 0.5 * j as f64, -(j as f64)]);
        let text = serde_json::to_string(&pose).unwrap();
        assert!(text.starts_with("[[0.0,0.0,"));
        let back: HandPose3D = serde_json::from_str(&text).unwrap();
        assert_eq!(back, pose);

        let short: std::result::Result<HandPose2D, _> = serde_json::from_str("[[1.0,2.0]]");
        assert!(short.is_err());
    }

    #[test]
    fn clamped_crop_box_intersects_image_bounds() {
        let b = CropBox {
            min_x: -5.0,
            min_y: 10.0,
            max_x: 400.0,
            max_y: 200.0,
        };
        let c = b.clamped(320.0, 240.0);
        assert_eq!((c.min_x, c.min_y, c.max_x, c.max_y), (0.0, 10.0, 320.0, 200.0));
    }
}
