//! Stereo Hand Pose Tracking Benchmark loader.
//!
//! Expected layout under the dataset root:
//!
//! ```text
//! labels/B1Counting_SK.mat …   handPara: 3×21×F joint positions, mm
//! B1Counting/SK_color_0.png    640×480 RGB frames (RealSense)
//! B1Counting/BB_left_0.png     640×480 RGB frames (stereo left)
//! ```
//!
//! Sequences B2–B6 (Counting and Random, both cameras) form the training
//! split and B1 is held out for evaluation. 2D joints are not annotated;
//! they come from projecting the 3D labels through the published intrinsics
//! of the camera that took the frame.

use anyhow::{anyhow, bail, ensure, Context, Result};
use handgcn::data::{
    project_3d_to_2d, sample_from_crop, CameraIntrinsics, CropTransform, Sample,
};
use handgcn::quantizer::QuantizerConfig;
use handgcn::skeleton::{HandPose3D, NUM_JOINTS};
use ndarray::Array3;
use std::path::Path;

use crate::datasets::Split;
use crate::imgio::{crop_resample, load_png};

/// Pixels of padding around the joint bounding box before squaring; the
/// hand fills more of these 640×480 frames than in the rendered set.
pub const STB_MARGIN: f64 = 20.0;
/// Full-dataset split sizes (1500 frames × sequence × camera).
pub const STB_TRAIN_COUNT: usize = 30000;
pub const STB_EVAL_COUNT: usize = 6000;

const STB_WIDTH: usize = 640;
const STB_HEIGHT: usize = 480;

const TRAIN_BASES: &[&str] = &["B2", "B3", "B4", "B5", "B6"];
const EVAL_BASES: &[&str] = &["B1"];
const KINDS: &[&str] = &["Counting", "Random"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StbCamera {
    /// Intel RealSense color camera.
    Sk,
    /// Point Grey Bumblebee stereo rig, left view.
    Bb,
}

impl StbCamera {
    pub fn intrinsics(self) -> CameraIntrinsics {
        match self {
            StbCamera::Sk => CameraIntrinsics {
                fx: 607.92271,
                fy: 607.88192,
                cx: 314.78337,
                cy: 236.42484,
            },
            StbCamera::Bb => CameraIntrinsics {
                fx: 822.79041,
                fy: 822.79041,
                cx: 318.47345,
                cy: 250.31296,
            },
        }
    }

    fn label_suffix(self) -> &'static str {
        match self {
            StbCamera::Sk => "SK",
            StbCamera::Bb => "BB",
        }
    }

    fn image_name(self, frame: usize) -> String {
        match self {
            StbCamera::Sk => format!("SK_color_{frame}.png"),
            StbCamera::Bb => format!("BB_left_{frame}.png"),
        }
    }
}

/// Maps a canonical joint index to the row of `handPara` that holds it.
///
/// The labels run palm-first, then little→thumb with each finger ordered
/// knuckle→tip; the canonical skeleton runs wrist-first, then thumb→little
/// with each finger tip-first. Those two finger orders are exact reverses,
/// so row 0 stays and every other canonical index i reads label row 21−i.
/// The palm-center row stands in for the wrist root, which the labels do
/// not include.
fn label_row(canonical: usize) -> usize {
    if canonical == 0 {
        0
    } else {
        NUM_JOINTS - canonical
    }
}

pub fn load_split(
    root: &Path,
    split: Split,
    quantizer: &QuantizerConfig,
    limit: Option<usize>,
) -> Result<Vec<Sample>> {
    let bases = match split {
        Split::Train => TRAIN_BASES,
        Split::Eval => EVAL_BASES,
    };
    let mut samples = Vec::new();
    let mut index = 0usize;
    'sequences: for base in bases {
        for kind in KINDS {
            for camera in [StbCamera::Sk, StbCamera::Bb] {
                let sequence = format!("{base}{kind}");
                let positions = read_hand_para(root, &sequence, camera)?;
                let frames = positions.dim().2;
                for frame in 0..frames {
                    if limit.is_some_and(|l| samples.len() >= l) {
                        break 'sequences;
                    }
                    let sample =
                        load_frame(root, &sequence, camera, &positions, frame, quantizer, index)
                            .with_context(|| format!("{sequence} {camera:?} frame {frame}"))?;
                    samples.push(sample);
                    index += 1;
                }
            }
        }
    }
    ensure!(!samples.is_empty(), "no frames found under {}", root.display());
    Ok(samples)
}

/// Reads the 3×21×F `handPara` variable for one sequence/camera pair.
fn read_hand_para(root: &Path, sequence: &str, camera: StbCamera) -> Result<Array3<f64>> {
    let path = root
        .join("labels")
        .join(format!("{sequence}_{}.mat", camera.label_suffix()));
    let file = std::fs::File::open(&path)
        .with_context(|| format!("reading labels {}", path.display()))?;
    let mat = matfile::MatFile::parse(file)
        .with_context(|| format!("parsing {}", path.display()))?;
    let array = mat
        .find_by_name("handPara")
        .ok_or_else(|| anyhow!("{} has no handPara variable", path.display()))?;
    let size = array.size();
    ensure!(
        size.len() == 3 && size[0] == 3 && size[1] == NUM_JOINTS,
        "handPara in {} is {size:?}, expected 3×21×frames",
        path.display()
    );
    let frames = size[2];
    let flat: Vec<f64> = match array.data() {
        matfile::NumericData::Double { real, .. } => real.clone(),
        matfile::NumericData::Single { real, .. } => {
            real.iter().map(|&v| f64::from(v)).collect()
        }
        other => bail!("handPara in {} has unsupported type {other:?}", path.display()),
    };
    ensure!(
        flat.len() == 3 * NUM_JOINTS * frames,
        "handPara data length {} does not match {size:?}",
        flat.len()
    );
    // MAT files are column-major: element (i, j, f) sits at i + 3j + 63f.
    Ok(Array3::from_shape_fn((3, NUM_JOINTS, frames), |(i, j, f)| {
        flat[i + 3 * j + 3 * NUM_JOINTS * f]
    }))
}

fn load_frame(
    root: &Path,
    sequence: &str,
    camera: StbCamera,
    positions: &Array3<f64>,
    frame: usize,
    quantizer: &QuantizerConfig,
    index: usize,
) -> Result<Sample> {
    let mut rows = [[0.0f64; 3]; NUM_JOINTS];
    for (canonical, row) in rows.iter_mut().enumerate() {
        let src = label_row(canonical);
        *row = [
            positions[[0, src, frame]],
            positions[[1, src, frame]],
            positions[[2, src, frame]],
        ];
    }
    let pose_3d = HandPose3D::from_rows(rows)?;
    let intrinsics = camera.intrinsics();
    let pose_2d = project_3d_to_2d(&pose_3d, &intrinsics)?;

    let image_path = root.join(sequence).join(camera.image_name(frame));
    let image = load_png(&image_path)?;
    ensure!(
        image.dim() == (3, STB_HEIGHT, STB_WIDTH),
        "{} is {:?}, expected 640×480 RGB",
        image_path.display(),
        image.dim()
    );

    let ct = CropTransform::for_pose(&pose_2d, STB_MARGIN, quantizer.image_size)?;
    let crop = crop_resample(&image, &ct);
    let pose_2d_crop = ct.apply_pose(&pose_2d)?;
    Ok(sample_from_crop(
        crop,
        pose_2d_crop,
        pose_3d,
        quantizer,
        "stb",
        index,
        false,
        Some(intrinsics),
    )?)
}
