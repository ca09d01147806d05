//! Dataset-agnostic sample handling: camera projection, crop geometry,
//! coordinate normalization, batch assembly, and a deterministic synthetic
//! hand generator used by tests and desk-scale runs.
//!
//! A [`Sample`] carries the same fields regardless of origin — real loaders
//! and the synthetic generator all emit crops of the configured size with
//! poses expressed in crop pixels, crop-normalized 2D, metric 3D, and
//! root-relative bone-normalized 3D, plus the quantizer labels for both
//! spaces. [`Sample::validate`] enforces the cross-field consistency the
//! training loop assumes.

use ndarray::{Array3, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::quantizer::{create_classes_2d, create_classes_3d, JointClassLabels, QuantizerConfig};
use crate::skeleton::{
    crop_box_from_joints, dip, mcp, pip, reference_bone_length, root_relative, tip, HandPose2D,
    HandPose3D, BONES, NUM_JOINTS, WRIST,
};

/// Pinhole camera parameters in pixels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "intrinsics need positive focal lengths and finite centers: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Pinhole projection u = fx·x/z + cx, v = fy·y/z + cy. Every joint must
/// sit strictly in front of the camera.
pub fn project_3d_to_2d(pose: &HandPose3D, k: &CameraIntrinsics) -> Result<HandPose2D> {
    k.validate()?;
    let mut rows = [[0.0f64; 2]; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        let [x, y, z] = pose.joint(j);
        if z <= 0.0 {
            return Err(Error::JointOutOfRange {
                joint: j,
                coords: vec![x, y, z],
            });
        }
        rows[j] = [k.fx * x / z + k.cx, k.fy * y / z + k.cy];
    }
    HandPose2D::from_rows(rows)
}

/// Affine map from original-image pixels into a square crop of
/// `out_size`×`out_size` pixels: the joint bounding box plus margin, padded
/// to square about its center, then scaled.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CropTransform {
    /// Top-left corner of the square source region, original-image pixels.
    pub x0: f64,
    pub y0: f64,
    /// Side of the square source region.
    pub side: f64,
    pub out_size: usize,
}

impl CropTransform {
    pub fn for_pose(pose: &HandPose2D, margin: f64, out_size: usize) -> Result<Self> {
        if out_size == 0 {
            return Err(Error::InvalidConfig("crop output size must be nonzero".into()));
        }
        let b = crop_box_from_joints(pose, margin)?;
        let side = b.width().max(b.height());
        let cx = (b.min_x + b.max_x) / 2.0;
        let cy = (b.min_y + b.max_y) / 2.0;
        Ok(CropTransform {
            x0: cx - side / 2.0,
            y0: cy - side / 2.0,
            side,
            out_size,
        })
    }

    pub fn scale(&self) -> f64 {
        self.out_size as f64 / self.side
    }

    pub fn apply_point(&self, p: [f64; 2]) -> [f64; 2] {
        let s = self.scale();
        [(p[0] - self.x0) * s, (p[1] - self.y0) * s]
    }

    pub fn invert_point(&self, p: [f64; 2]) -> [f64; 2] {
        let s = self.scale();
        [p[0] / s + self.x0, p[1] / s + self.y0]
    }

    pub fn apply_pose(&self, pose: &HandPose2D) -> Result<HandPose2D> {
        let mut rows = [[0.0f64; 2]; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            rows[j] = self.apply_point(pose.joint(j));
        }
        HandPose2D::from_rows(rows)
    }

    pub fn invert_pose(&self, pose: &HandPose2D) -> Result<HandPose2D> {
        let mut rows = [[0.0f64; 2]; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            rows[j] = self.invert_point(pose.joint(j));
        }
        HandPose2D::from_rows(rows)
    }
}

/// Crop pixels → [0,1] crop-relative coordinates.
pub fn normalize_2d(pose_px: &HandPose2D, crop_size: usize) -> Result<HandPose2D> {
    let s = crop_size as f64;
    let mut rows = [[0.0f64; 2]; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        let [x, y] = pose_px.joint(j);
        rows[j] = [x / s, y / s];
    }
    HandPose2D::from_rows(rows)
}

/// Metric 3D → root-relative coordinates scaled so the wrist–middle-MCP
/// reference bone has length 1.
pub fn normalize_3d(pose: &HandPose3D) -> Result<HandPose3D> {
    let centered = root_relative(pose);
    let bone = reference_bone_length(&centered);
    if !(bone.is_finite() && bone > 1e-12) {
        return Err(Error::InvalidPose(format!(
            "degenerate reference bone length {bone}"
        )));
    }
    let scaled = centered.as_array().mapv(|v| v / bone);
    HandPose3D::new(scaled)
}

/// Provenance and calibration carried alongside each sample.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SampleMeta {
    /// Dataset tag ("rhd", "stb", "synth").
    pub source: String,
    /// Index within the source split.
    pub index: usize,
    /// True when a left hand was mirrored to right-hand canonical form.
    pub mirrored: bool,
    pub intrinsics: Option<CameraIntrinsics>,
    /// Reference bone length in source units, for mapping normalized
    /// predictions back to metric space.
    pub bone_length: f64,
}

/// One fully prepared training/evaluation example.
#[derive(Debug, Clone)]
pub struct Sample {
    /// RGB crop, (3, S, S), values in [0, 1].
    pub image: Array3<f64>,
    /// Joints in crop pixels, [0, S].
    pub pose_2d_px: HandPose2D,
    /// Joints in crop-relative [0, 1] coordinates.
    pub pose_2d_norm: HandPose2D,
    /// Joints in the source metric frame (camera-frame units).
    pub pose_3d_metric: HandPose3D,
    /// Root-relative, bone-normalized joints.
    pub pose_3d_norm: HandPose3D,
    pub labels_2d: JointClassLabels,
    pub labels_3d: JointClassLabels,
    pub meta: SampleMeta,
}

impl Sample {
    /// Checks every cross-field invariant: image shape and range, 2D joints
    /// inside the crop, normalized fields consistent with their sources,
    /// wrist at origin and unit reference bone after normalization, and
    /// stored labels equal to labels recomputed from the poses.
    pub fn validate(&self, quantizer: &QuantizerConfig) -> Result<()> {
        let s = quantizer.image_size;
        if self.image.dim() != (3, s, s) {
            return Err(Error::InvalidData(format!(
                "image shape {:?}, expected (3, {s}, {s})",
                self.image.dim()
            )));
        }
        if self.image.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidData("image values outside [0, 1]".into()));
        }
        for j in 0..NUM_JOINTS {
            let [x, y] = self.pose_2d_px.joint(j);
            if !(0.0..=s as f64).contains(&x) || !(0.0..=s as f64).contains(&y) {
                return Err(Error::JointOutOfRange {
                    joint: j,
                    coords: vec![x, y],
                });
            }
            let [nx, ny] = self.pose_2d_norm.joint(j);
            if (nx - x / s as f64).abs() > 1e-9 || (ny - y / s as f64).abs() > 1e-9 {
                return Err(Error::InvalidData(format!(
                    "normalized 2D joint {j} inconsistent with crop pixels"
                )));
            }
        }
        let wrist = self.pose_3d_norm.joint(WRIST);
        if wrist.iter().any(|&v| v.abs() > 1e-9) {
            return Err(Error::InvalidData(format!(
                "normalized wrist should sit at the origin, got {wrist:?}"
            )));
        }
        let bone = reference_bone_length(&self.pose_3d_norm);
        if (bone - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidData(format!(
                "normalized reference bone length {bone}, expected 1"
            )));
        }
        let renorm = normalize_3d(&self.pose_3d_metric)?;
        let drift = (renorm.as_array() - self.pose_3d_norm.as_array())
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if drift > 1e-9 {
            return Err(Error::InvalidData(format!(
                "normalized 3D drifts {drift} from renormalized metric pose"
            )));
        }
        let labels_2d = create_classes_2d(&self.pose_2d_px, quantizer.splits_2d, s)?;
        if labels_2d.labels() != self.labels_2d.labels() {
            return Err(Error::InvalidData("stored 2D labels are stale".into()));
        }
        let labels_3d = create_classes_3d(&self.pose_3d_norm, quantizer.splits_3d)?;
        if labels_3d.labels() != self.labels_3d.labels() {
            return Err(Error::InvalidData("stored 3D labels are stale".into()));
        }
        Ok(())
    }
}

/// Builds a [`Sample`] from a rendered crop and its crop-frame pose pair,
/// recomputing every derived field.
pub fn sample_from_crop(
    image: Array3<f64>,
    pose_2d_px: HandPose2D,
    pose_3d_metric: HandPose3D,
    quantizer: &QuantizerConfig,
    meta_source: &str,
    index: usize,
    mirrored: bool,
    intrinsics: Option<CameraIntrinsics>,
) -> Result<Sample> {
    let pose_3d_norm = normalize_3d(&pose_3d_metric)?;
    let centered = root_relative(&pose_3d_metric);
    let bone_length = reference_bone_length(&centered);
    let sample = Sample {
        pose_2d_norm: normalize_2d(&pose_2d_px, quantizer.image_size)?,
        labels_2d: create_classes_2d(&pose_2d_px, quantizer.splits_2d, quantizer.image_size)?,
        labels_3d: create_classes_3d(&pose_3d_norm, quantizer.splits_3d)?,
        meta: SampleMeta {
            source: meta_source.to_string(),
            index,
            mirrored,
            intrinsics,
            bone_length,
        },
        image,
        pose_2d_px,
        pose_3d_metric,
        pose_3d_norm,
    };
    sample.validate(quantizer)?;
    Ok(sample)
}

/// A training batch in the tensor layout the network consumes.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Array4<f64>,
    /// (B, 21, 2) normalized 2D targets.
    pub pose_2d: Array3<f64>,
    /// (B, 21, 3) normalized 3D targets.
    pub pose_3d: Array3<f64>,
    pub labels_2d: Vec<JointClassLabels>,
    pub labels_3d: Vec<JointClassLabels>,
}

/// Stacks samples into batch tensors.
pub fn assemble_batch(samples: &[&Sample]) -> Result<Batch> {
    if samples.is_empty() {
        return Err(Error::InvalidData("cannot assemble an empty batch".into()));
    }
    let (c, h, w) = samples[0].image.dim();
    let batch = samples.len();
    let mut images = Array4::zeros((batch, c, h, w));
    let mut pose_2d = Array3::zeros((batch, NUM_JOINTS, 2));
    let mut pose_3d = Array3::zeros((batch, NUM_JOINTS, 3));
    let mut labels_2d = Vec::with_capacity(batch);
    let mut labels_3d = Vec::with_capacity(batch);
    for (b, sample) in samples.iter().enumerate() {
        if sample.image.dim() != (c, h, w) {
            return Err(Error::ShapeMismatch(format!(
                "sample {b} image {:?} differs from {:?}",
                sample.image.dim(),
                (c, h, w)
            )));
        }
        images.index_axis_mut(Axis(0), b).assign(&sample.image);
        pose_2d
            .index_axis_mut(Axis(0), b)
            .assign(sample.pose_2d_norm.as_array());
        pose_3d
            .index_axis_mut(Axis(0), b)
            .assign(sample.pose_3d_norm.as_array());
        labels_2d.push(sample.labels_2d.clone());
        labels_3d.push(sample.labels_3d.clone());
    }
    Ok(Batch {
        images,
        pose_2d,
        pose_3d,
        labels_2d,
        labels_3d,
    })
}

// ---------------------------------------------------------------------------
// Synthetic hands
// ---------------------------------------------------------------------------

/// Crop margin used for generated samples, in virtual-image pixels.
pub const SYNTH_MARGIN: f64 = 12.0;

const SYNTH_INTRINSICS: CameraIntrinsics = CameraIntrinsics {
    fx: 420.0,
    fy: 420.0,
    cx: 160.0,
    cy: 160.0,
};

/// Per-finger fan angle in the palm plane, radians from the middle finger.
const FAN_ANGLES: [f64; 5] = [-1.05, -0.26, 0.0, 0.26, 0.56];
/// Distance from wrist to each finger's MCP, millimetres.
const MCP_RADII: [f64; 5] = [35.0, 80.0, 85.0, 80.0, 70.0];
/// Proximal/middle/distal segment lengths per finger, millimetres.
const SEGMENTS: [[f64; 3]; 5] = [
    [30.0, 25.0, 22.0],
    [35.0, 22.0, 18.0],
    [38.0, 25.0, 20.0],
    [35.0, 23.0, 19.0],
    [28.0, 18.0, 15.0],
];

fn rotation_from_axis_angle(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
    let (c, s) = (angle.cos(), angle.sin());
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

fn rotate(r: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
        r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
        r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
    ]
}

/// A plausible right-hand skeleton in a local millimetre frame: wrist at
/// the origin, fingers fanned in the x–y plane, each with a random curl
/// folding successive segments toward −z.
fn synth_skeleton(rng: &mut ChaCha8Rng) -> [[f64; 3]; NUM_JOINTS] {
    let mut joints = [[0.0f64; 3]; NUM_JOINTS];
    for f in 0..5 {
        let fan = FAN_ANGLES[f] + rng.gen_range(-0.06..0.06);
        let planar = [fan.sin(), fan.cos(), 0.0];
        let radius = MCP_RADII[f] * rng.gen_range(0.92..1.08);
        let base = [planar[0] * radius, planar[1] * radius, 0.0];
        joints[mcp(f)] = base;
        let curl = rng.gen_range(0.0..1.0);
        let mut pos = base;
        let mut bend = 0.0_f64;
        for (seg, joint) in [pip(f), dip(f), tip(f)].into_iter().enumerate() {
            bend += curl * rng.gen_range(0.25..0.45);
            let dir = [
                planar[0] * bend.cos(),
                planar[1] * bend.cos(),
                -bend.sin(),
            ];
            let len = SEGMENTS[f][seg] * rng.gen_range(0.95..1.05);
            pos = [
                pos[0] + dir[0] * len,
                pos[1] + dir[1] * len,
                pos[2] + dir[2] * len,
            ];
            joints[joint] = pos;
        }
    }
    joints
}

/// Color palette: one hue per finger so bones are visually distinctive.
const FINGER_COLORS: [[f64; 3]; 5] = [
    [1.0, 0.25, 0.25],
    [0.25, 1.0, 0.25],
    [0.3, 0.5, 1.0],
    [1.0, 1.0, 0.3],
    [1.0, 0.4, 1.0],
];

fn finger_of_joint(j: usize) -> Option<usize> {
    (j != WRIST).then(|| (j - 1) / 4)
}

fn splat(image: &mut Array3<f64>, x: f64, y: f64, color: [f64; 3], strength: f64) {
    let size = image.dim().1 as isize;
    let (cx, cy) = (x.round() as isize, y.round() as isize);
    for dy in -1..=1isize {
        for dx in -1..=1isize {
            let (px, py) = (cx + dx, cy + dy);
            if px < 0 || py < 0 || px >= size || py >= size {
                continue;
            }
            let falloff = if dx == 0 && dy == 0 { 1.0 } else { 0.45 };
            for c in 0..3 {
                let v = &mut image[[c, py as usize, px as usize]];
                *v = v.max(color[c] * strength * falloff);
            }
        }
    }
}

/// Renders a stick-figure hand into a (3, S, S) crop: bones as colored
/// strokes, joints as bright dots.
fn render_crop(pose_px: &HandPose2D, size: usize) -> Array3<f64> {
    let mut image = Array3::zeros((3, size, size));
    for &(a, b) in BONES.iter() {
        let color = FINGER_COLORS[finger_of_joint(b).or(finger_of_joint(a)).unwrap_or(2)];
        let [ax, ay] = pose_px.joint(a);
        let [bx, by] = pose_px.joint(b);
        let steps = 1 + (((bx - ax).abs().max((by - ay).abs())) * 1.5) as usize;
        for t in 0..=steps {
            let u = t as f64 / steps as f64;
            splat(
                &mut image,
                ax + (bx - ax) * u,
                ay + (by - ay) * u,
                color,
                0.75,
            );
        }
    }
    for j in 0..NUM_JOINTS {
        let [x, y] = pose_px.joint(j);
        splat(&mut image, x, y, [1.0, 1.0, 1.0], 1.0);
    }
    image
}

/// Generates `count` fully populated samples, deterministically from the
/// seed: random palm orientation and per-finger flexion, camera-frame
/// placement, pinhole projection, crop, and stick-figure rendering.
pub fn synth_dataset(
    count: usize,
    seed: u64,
    quantizer: &QuantizerConfig,
) -> Result<Vec<Sample>> {
    if count == 0 {
        return Err(Error::InvalidConfig("synthetic dataset needs count >= 1".into()));
    }
    quantizer.validate()?;
    let size = quantizer.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(count);
    for index in 0..count {
        let local = synth_skeleton(&mut rng);
        let axis = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0f64),
        ];
        let axis = if axis.iter().all(|v| v.abs() < 1e-3) {
            [0.0, 0.0, 1.0]
        } else {
            axis
        };
        let rot = rotation_from_axis_angle(axis, rng.gen_range(0.0..std::f64::consts::TAU));
        let t = [
            rng.gen_range(-40.0..40.0),
            rng.gen_range(-40.0..40.0),
            rng.gen_range(380.0..560.0),
        ];
        let mut rows = [[0.0f64; 3]; NUM_JOINTS];
        for (j, p) in local.iter().enumerate() {
            let r = rotate(&rot, *p);
            rows[j] = [r[0] + t[0], r[1] + t[1], r[2] + t[2]];
        }
        let pose_3d = HandPose3D::from_rows(rows)?;
        let projected = project_3d_to_2d(&pose_3d, &SYNTH_INTRINSICS)?;
        let transform = CropTransform::for_pose(&projected, SYNTH_MARGIN, size)?;
        let pose_2d_px = transform.apply_pose(&projected)?;
        let image = render_crop(&pose_2d_px, size);
        samples.push(sample_from_crop(
            image,
            pose_2d_px,
            pose_3d,
            quantizer,
            "synth",
            index,
            false,
            Some(SYNTH_INTRINSICS),
        )?);
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::{oracle_classes_2d, oracle_classes_3d};

    fn spread_pose() -> HandPose2D {
        let mut rows = [[0.0f64; 2]; NUM_JOINTS];
        for (j, row) in rows.iter_mut().enumerate() {
            *row = [40.0 + 7.0 * j as f64, 60.0 + 4.0 * ((j * j) % 17) as f64];
        }
        HandPose2D::from_rows(rows).unwrap()
    }

    #[test]
    fn pinhole_projection_worked_examples() {
        let mut rows = [[0.0, 0.0, 1.0]; NUM_JOINTS];
        rows[0] = [1.0, 2.0, 2.0];
        rows[1] = [0.0, 0.0, 5.0];
        rows[2] = [0.1, 0.0, 0.5];
        let pose = HandPose3D::from_rows(rows).unwrap();

        let unit = CameraIntrinsics {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
        };
        let p = project_3d_to_2d(&pose, &unit).unwrap();
        assert_eq!(p.joint(0), [0.5, 1.0]);
        assert_eq!(p.joint(1), [0.0, 0.0]);

        let vga = CameraIntrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
        };
        let p = project_3d_to_2d(&pose, &vga).unwrap();
        assert_eq!(p.joint(1), [320.0, 240.0]);
        assert!((p.joint(2)[0] - 420.0).abs() < 1e-12);
    }

    #[test]
    fn projection_rejects_non_positive_depth() {
        let mut rows = [[0.0, 0.0, 1.0]; NUM_JOINTS];
        rows[7] = [0.1, 0.1, 0.0];
        let pose = HandPose3D::from_rows(rows).unwrap();
        let k = CameraIntrinsics {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
        };
        match project_3d_to_2d(&pose, &k) {
            Err(Error::JointOutOfRange { joint, .. }) => assert_eq!(joint, 7),
            other => panic!("expected depth error, got {other:?}"),
        }
    }

    #[test]
    fn crop_transform_round_trips_points() {
        let pose = spread_pose();
        let t = CropTransform::for_pose(&pose, 10.0, 256).unwrap();
        for j in 0..NUM_JOINTS {
            let p = pose.joint(j);
            let back = t.invert_point(t.apply_point(p));
            assert!((back[0] - p[0]).abs() < 1e-9);
            assert!((back[1] - p[1]).abs() < 1e-9);
            // Inside the crop with room to spare for the margin.
            let c = t.apply_point(p);
            assert!(c[0] > 0.0 && c[0] < 256.0);
            assert!(c[1] > 0.0 && c[1] < 256.0);
        }
        // The source region is square.
        assert!((t.scale() * t.side - 256.0).abs() < 1e-9);
    }

    #[test]
    fn synth_is_bit_deterministic_per_seed() {
        let q = QuantizerConfig {
            image_size: 64,
            ..QuantizerConfig::default()
        };
        let a = synth_dataset(3, 99, &q).unwrap();
        let b = synth_dataset(3, 99, &q).unwrap();
        for (sa, sb) in a.iter().zip(&b) {
            assert_eq!(sa.image, sb.image);
            assert_eq!(sa.pose_2d_px.as_array(), sb.pose_2d_px.as_array());
            assert_eq!(sa.pose_3d_norm.as_array(), sb.pose_3d_norm.as_array());
            assert_eq!(sa.labels_2d.labels(), sb.labels_2d.labels());
        }
        let c = synth_dataset(3, 100, &q).unwrap();
        assert_ne!(a[0].pose_3d_norm.as_array(), c[0].pose_3d_norm.as_array());
    }

    #[test]
    fn synth_samples_satisfy_every_invariant() {
        let q = QuantizerConfig {
            image_size: 64,
            ..QuantizerConfig::default()
        };
        let samples = synth_dataset(40, 7, &q).unwrap();
        assert_eq!(samples.len(), 40);
        for s in &samples {
            s.validate(&q).unwrap();
            // Labels agree with the closed-form oracles.
            let o2 = oracle_classes_2d(&s.pose_2d_px, q.splits_2d, q.image_size).unwrap();
            assert_eq!(o2.labels(), s.labels_2d.labels());
            let o3 = oracle_classes_3d(&s.pose_3d_norm, q.splits_3d).unwrap();
            assert_eq!(o3.labels(), s.labels_3d.labels());
            // Wrist at origin, unit reference bone.
            assert_eq!(s.meta.source, "synth");
            assert!(s.meta.bone_length > 0.0);
        }
    }

    #[test]
    fn synth_images_carry_signal() {
        let q = QuantizerConfig {
            image_size: 64,
            ..QuantizerConfig::default()
        };
        let samples = synth_dataset(2, 3, &q).unwrap();
        for s in &samples {
            let lit = s.image.iter().filter(|&&v| v > 0.1).count();
            let total = s.image.len();
            assert!(lit > total / 200, "too sparse: {lit}/{total}");
            assert!(lit < total / 2, "too dense: {lit}/{total}");
        }
    }

    #[test]
    fn batch_assembly_stacks_fields() {
        let q = QuantizerConfig {
            image_size: 64,
            ..QuantizerConfig::default()
        };
        let samples = synth_dataset(3, 11, &q).unwrap();
        let refs: Vec<&Sample> = samples.iter().collect();
        let batch = assemble_batch(&refs).unwrap();
        assert_eq!(batch.images.dim(), (3, 3, 64, 64));
        assert_eq!(batch.pose_2d.dim(), (3, NUM_JOINTS, 2));
        assert_eq!(batch.pose_3d.dim(), (3, NUM_JOINTS, 3));
        assert_eq!(batch.labels_2d.len(), 3);
        assert_eq!(
            batch.images.index_axis(Axis(0), 1),
            samples[1].image.view()
        );
        assert!(assemble_batch(&[]).is_err());
    }

    #[test]
    fn normalize_3d_rejects_degenerate_bones() {
        let rows = [[1.0, 2.0, 3.0]; NUM_JOINTS];
        let pose = HandPose3D::from_rows(rows).unwrap();
        assert!(normalize_3d(&pose).is_err());
    }

    #[test]
    fn sample_validation_catches_stale_labels() {
        let q = QuantizerConfig {
            image_size: 64,
            ..QuantizerConfig::default()
        };
        let mut samples = synth_dataset(1, 5, &q).unwrap();
        let sample = &mut samples[0];
        let mut labels = *sample.labels_2d.labels();
        labels[3] = (labels[3] + 1) % q.num_classes_2d();
        sample.labels_2d =
            JointClassLabels::from_labels(labels, q.num_classes_2d()).unwrap();
        assert!(sample.validate(&q).is_err());
    }
}
