//! Dataset selection, loading, and the prepared-sample cache.
//!
//! Real datasets pay a decode-and-resample cost per image, so prepared
//! splits are cached as raw tensors keyed by everything that influences
//! preparation (dataset, split, quantizer geometry, limit). The cache stores
//! loader *inputs* — cropped pixels, crop-frame 2D joints, metric 3D joints,
//! per-sample metadata — and rebuilds each `Sample` through the same
//! preparation call the loaders use, so cached and fresh runs are
//! bit-identical. Synthetic data regenerates faster than disk IO and skips
//! the cache entirely.
//!
//! The cache never lives inside a dataset directory: it resolves to
//! `$HANDGCN_CACHE`, else `$XDG_CACHE_HOME/handgcn`, else
//! `$HOME/.cache/handgcn`, else caching is disabled for the run.

use anyhow::{ensure, Context, Result};
use handgcn::data::{sample_from_crop, CameraIntrinsics, Sample};
use handgcn::quantizer::QuantizerConfig;
use handgcn::skeleton::{HandPose2D, HandPose3D, NUM_JOINTS};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::blobio::{read_f64_blob, read_json_block, write_f64_blob, write_json_block};
use crate::{rhd, stb};

/// Seed for the fixed synthetic benchmark set; training seeds only steer
/// initialization and shuffling, never the data itself.
pub const SYNTH_DATA_SEED: u64 = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DatasetKind {
    Synth,
    Rhd,
    Stb,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Synth => "synth",
            DatasetKind::Rhd => "rhd",
            DatasetKind::Stb => "stb",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DataOptions {
    /// Size of the generated synthetic set.
    pub synth_count: usize,
    /// Cap on loaded samples for real datasets (after deterministic
    /// ordering); `None` loads the whole split.
    pub limit: Option<usize>,
}

/// Loads one split of the selected dataset, consulting the cache for real
/// datasets. The synthetic benchmark uses the same fixed set for both
/// splits: it exists to measure memorization, so evaluation on the training
/// set is the point, not an accident.
pub fn load_split(
    kind: DatasetKind,
    data_root: Option<&Path>,
    split: Split,
    quantizer: &QuantizerConfig,
    options: &DataOptions,
) -> Result<Vec<Sample>> {
    match kind {
        DatasetKind::Synth => {
            ensure!(options.synth_count >= 1, "synth dataset needs at least one sample");
            let count = match options.limit {
                Some(limit) => options.synth_count.min(limit),
                None => options.synth_count,
            };
            Ok(handgcn::data::synth_dataset(count, SYNTH_DATA_SEED, quantizer)?)
        }
        DatasetKind::Rhd | DatasetKind::Stb => {
            let root = data_root
                .with_context(|| format!("--data-root is required for {}", kind.name()))?;
            let cache_path = cache_file(kind, split, quantizer, options.limit);
            if let Some(path) = &cache_path {
                match read_cache(path, quantizer) {
                    Ok(Some(samples)) => return Ok(samples),
                    Ok(None) => {}
                    Err(err) => eprintln!(
                        "warning: ignoring unreadable cache {} ({err:#})",
                        path.display()
                    ),
                }
            }
            let samples = match kind {
                DatasetKind::Rhd => rhd::load_split(root, split, quantizer, options.limit)?,
                DatasetKind::Stb => stb::load_split(root, split, quantizer, options.limit)?,
                DatasetKind::Synth => unreachable!(),
            };
            if let Some(path) = &cache_path {
                if let Err(err) = write_cache(path, &samples) {
                    eprintln!("warning: could not write cache {} ({err:#})", path.display());
                }
            }
            Ok(samples)
        }
    }
}

// ---------------------------------------------------------------------------
// Cache
// ---------------------------------------------------------------------------

const CACHE_MAGIC: &[u8; 8] = b"HGCNDS01";

#[derive(Serialize, Deserialize)]
struct CacheManifest {
    dataset: String,
    /// Side of the stored crops; the only preparation parameter the cached
    /// tensors depend on — labels are recomputed from the current config.
    image_size: usize,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct CachedMeta {
    pose_2d_px: Vec<[f64; 2]>,
    pose_3d_metric: Vec<[f64; 3]>,
    index: usize,
    mirrored: bool,
    intrinsics: Option<(f64, f64, f64, f64)>,
}

pub fn cache_root() -> Option<PathBuf> {
    if let Some(dir) = std::env::var_os("HANDGCN_CACHE") {
        return Some(PathBuf::from(dir));
    }
    if let Some(dir) = std::env::var_os("XDG_CACHE_HOME") {
        return Some(PathBuf::from(dir).join("handgcn"));
    }
    std::env::var_os("HOME").map(|home| PathBuf::from(home).join(".cache").join("handgcn"))
}

fn cache_file(
    kind: DatasetKind,
    split: Split,
    quantizer: &QuantizerConfig,
    limit: Option<usize>,
) -> Option<PathBuf> {
    let root = cache_root()?;
    let mut hasher = Sha256::new();
    hasher.update(kind.name());
    hasher.update([0]);
    hasher.update(split.name());
    hasher.update([0]);
    hasher.update(serde_json::to_vec(quantizer).ok()?);
    hasher.update(serde_json::to_vec(&limit).ok()?);
    let digest = hasher.finalize();
    let mut key = String::new();
    for byte in &digest[..8] {
        key.push_str(&format!("{byte:02x}"));
    }
    Some(root.join(format!("{}-{}-{key}.samples", kind.name(), split.name())))
}

fn write_cache(path: &Path, samples: &[Sample]) -> Result<()> {
    let parent = path.parent().context("cache path has no parent")?;
    fs::create_dir_all(parent)?;
    let tmp = path.with_extension("samples.tmp");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        w.write_all(CACHE_MAGIC)?;
        let first = samples.first().context("refusing to cache an empty split")?;
        let manifest = CacheManifest {
            dataset: first.meta.source.clone(),
            image_size: first.image.dim().1,
            count: samples.len(),
        };
        write_json_block(&mut w, &manifest)?;
        for sample in samples {
            let meta = CachedMeta {
                pose_2d_px: (0..NUM_JOINTS).map(|j| sample.pose_2d_px.joint(j)).collect(),
                pose_3d_metric: (0..NUM_JOINTS)
                    .map(|j| sample.pose_3d_metric.joint(j))
                    .collect(),
                index: sample.meta.index,
                mirrored: sample.meta.mirrored,
                intrinsics: sample
                    .meta
                    .intrinsics
                    .as_ref()
                    .map(|k| (k.fx, k.fy, k.cx, k.cy)),
            };
            write_json_block(&mut w, &meta)?;
            write_f64_blob(&mut w, &sample.image.clone().into_dyn())?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Returns `Ok(None)` when the file is absent; errors on a file that exists
/// but cannot be decoded.
fn read_cache(path: &Path, quantizer: &QuantizerConfig) -> Result<Option<Vec<Sample>>> {
    let file = match fs::File::open(path) {
        Ok(file) => file,
        Err(err) if err.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(err) => return Err(err.into()),
    };
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    ensure!(&magic == CACHE_MAGIC, "bad cache magic");
    let manifest: CacheManifest = read_json_block(&mut r)?;
    let size = quantizer.image_size;
    ensure!(
        manifest.image_size == size,
        "cache stores {}px crops, run needs {size}px",
        manifest.image_size
    );
    let source = manifest.dataset;
    let mut samples = Vec::with_capacity(manifest.count);
    for _ in 0..manifest.count {
        let meta: CachedMeta = read_json_block(&mut r)?;
        let image = read_f64_blob(&mut r, &[3, size, size])?
            .into_dimensionality::<ndarray::Ix3>()
            .context("cached image is not 3-dimensional")?;
        let pose_2d = pose2d_from_vec(&meta.pose_2d_px)?;
        let pose_3d = pose3d_from_vec(&meta.pose_3d_metric)?;
        let intrinsics = meta.intrinsics.map(|(fx, fy, cx, cy)| CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
        });
        samples.push(sample_from_crop(
            image,
            pose_2d,
            pose_3d,
            quantizer,
            &source,
            meta.index,
            meta.mirrored,
            intrinsics,
        )?);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    ensure!(rest.is_empty(), "{} trailing bytes after cached samples", rest.len());
    Ok(Some(samples))
}

fn pose2d_from_vec(rows: &[[f64; 2]]) -> Result<HandPose2D> {
    ensure!(rows.len() == NUM_JOINTS, "cached 2D pose has {} joints", rows.len());
    let mut fixed = [[0.0f64; 2]; NUM_JOINTS];
    fixed.copy_from_slice(rows);
    Ok(HandPose2D::from_rows(fixed)?)
}

fn pose3d_from_vec(rows: &[[f64; 3]]) -> Result<HandPose3D> {
    ensure!(rows.len() == NUM_JOINTS, "cached 3D pose has {} joints", rows.len());
    let mut fixed = [[0.0f64; 3]; NUM_JOINTS];
    fixed.copy_from_slice(rows);
    Ok(HandPose3D::from_rows(fixed)?)
}
