//! Rendered Handpose Dataset loader.
//!
//! Expected layout under the dataset root:
//!
//! ```text
//! training/color/00000.png …      320×320 RGB frames
//! training/anno_training.pickle   dict: index → {uv_vis, xyz, K}
//! evaluation/color/…  evaluation/anno_evaluation.pickle
//! ```
//!
//! Each annotation covers both hands as 42 keypoints (left block first). The
//! loader keeps the hand with more visible keypoints and mirrors left hands
//! into right-hand canonical form: image columns flip, u → (W−1)−u, x → −x,
//! and the principal point moves to (W−1)−cx so projection stays consistent.

use anyhow::{bail, ensure, Context, Result};
use handgcn::data::{sample_from_crop, CameraIntrinsics, CropTransform, Sample};
use handgcn::quantizer::QuantizerConfig;
use handgcn::skeleton::NUM_JOINTS;
use ndarray::ArrayD;
use std::path::Path;

use crate::datasets::Split;
use crate::imgio::{crop_resample, load_png, mirror_horizontal};
use crate::pickle::{self, Value};

/// Pixels of padding around the joint bounding box before squaring.
pub const RHD_MARGIN: f64 = 10.0;
/// Published split sizes, useful as a sanity reference when pointing the
/// tool at a full download.
pub const RHD_TRAIN_COUNT: usize = 41258;
pub const RHD_EVAL_COUNT: usize = 2728;

const RHD_IMAGE_SIZE: usize = 320;
/// Keypoints with visibility above this count toward hand selection.
const VISIBLE: f64 = 0.5;

pub fn load_split(
    root: &Path,
    split: Split,
    quantizer: &QuantizerConfig,
    limit: Option<usize>,
) -> Result<Vec<Sample>> {
    let split_name = match split {
        Split::Train => "training",
        Split::Eval => "evaluation",
    };
    let dir = root.join(split_name);
    let anno_path = dir.join(format!("anno_{split_name}.pickle"));
    let bytes = std::fs::read(&anno_path)
        .with_context(|| format!("reading annotations {}", anno_path.display()))?;
    let anno = pickle::loads(&bytes)
        .with_context(|| format!("decoding annotations {}", anno_path.display()))?;

    let mut indices: Vec<i64> = anno
        .dict()
        .map_err(anyhow::Error::from)?
        .iter()
        .map(|(k, _)| match k {
            Value::Int(i) => Ok(*i),
            other => bail!("annotation key is not an index: {other:?}"),
        })
        .collect::<Result<_>>()?;
    indices.sort_unstable();
    if let Some(limit) = limit {
        indices.truncate(limit);
    }

    let mut samples = Vec::with_capacity(indices.len());
    for &index in &indices {
        let entry = anno.get_int_key(index).expect("index came from the dict");
        let sample = load_one(&dir, index as usize, entry, quantizer)
            .with_context(|| format!("{split_name} sample {index}"))?;
        samples.push(sample);
    }
    Ok(samples)
}

fn field(entry: &Value, name: &str) -> Result<ArrayD<f64>> {
    entry
        .get_str_key(name)
        .with_context(|| format!("annotation missing {name:?}"))?
        .array()
        .map_err(anyhow::Error::from)?
        .to_f64()
}

fn load_one(
    dir: &Path,
    index: usize,
    entry: &Value,
    quantizer: &QuantizerConfig,
) -> Result<Sample> {
    let uv_vis = field(entry, "uv_vis")?;
    let xyz = field(entry, "xyz")?;
    let k = field(entry, "K")?;
    ensure!(uv_vis.shape() == [2 * NUM_JOINTS, 3], "uv_vis shape {:?}", uv_vis.shape());
    ensure!(xyz.shape() == [2 * NUM_JOINTS, 3], "xyz shape {:?}", xyz.shape());
    ensure!(k.shape() == [3, 3], "K shape {:?}", k.shape());

    // Left hand occupies rows 0..21, right hand 21..42. Ties go left.
    let visible = |offset: usize| {
        (offset..offset + NUM_JOINTS)
            .filter(|&j| uv_vis[[j, 2]] > VISIBLE)
            .count()
    };
    let (offset, mirrored) = if visible(NUM_JOINTS) > visible(0) {
        (NUM_JOINTS, false)
    } else {
        (0, true)
    };

    let mut intrinsics = CameraIntrinsics {
        fx: k[[0, 0]],
        fy: k[[1, 1]],
        cx: k[[0, 2]],
        cy: k[[1, 2]],
    };

    let width = RHD_IMAGE_SIZE as f64;
    let mut rows_2d = [[0.0f64; 2]; NUM_JOINTS];
    let mut rows_3d = [[0.0f64; 3]; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        let src = offset + j;
        let (mut u, v) = (uv_vis[[src, 0]], uv_vis[[src, 1]]);
        // Annotations are in meters; the model works in millimeters.
        let (mut x, y, z) = (xyz[[src, 0]] * 1000.0, xyz[[src, 1]] * 1000.0, xyz[[src, 2]] * 1000.0);
        if mirrored {
            u = (width - 1.0) - u;
            x = -x;
        }
        rows_2d[j] = [u, v];
        rows_3d[j] = [x, y, z];
    }
    if mirrored {
        intrinsics.cx = (width - 1.0) - intrinsics.cx;
    }
    let pose_2d = handgcn::skeleton::HandPose2D::from_rows(rows_2d)?;
    let pose_3d = handgcn::skeleton::HandPose3D::from_rows(rows_3d)?;

    let image_path = dir.join("color").join(format!("{index:05}.png"));
    let mut image = load_png(&image_path)?;
    ensure!(
        image.dim() == (3, RHD_IMAGE_SIZE, RHD_IMAGE_SIZE),
        "{} is {:?}, expected 320×320 RGB",
        image_path.display(),
        image.dim()
    );
    if mirrored {
        image = mirror_horizontal(&image);
    }

    let ct = CropTransform::for_pose(&pose_2d, RHD_MARGIN, quantizer.image_size)?;
    let crop = crop_resample(&image, &ct);
    let pose_2d_crop = ct.apply_pose(&pose_2d)?;
    Ok(sample_from_crop(
        crop,
        pose_2d_crop,
        pose_3d,
        quantizer,
        "rhd",
        index,
        mirrored,
        Some(intrinsics),
    )?)
}
