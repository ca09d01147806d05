//! Checkpoint files: a magic tag, a JSON manifest describing configs,
//! trainer position, and tensor shapes, then the tensors as little-endian
//! f64 blobs in manifest order. Writes go through a temporary file and a
//! rename so a crash never leaves a truncated checkpoint behind.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use handgcn::nn::adadelta::AdaDeltaSlot;
use handgcn::posenet::ModelConfig;
use handgcn::train::{Checkpoint, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::blobio::{read_f64_blob, read_json_block, write_f64_blob, write_json_block};

const MAGIC: &[u8; 8] = b"HGCNCKPT";

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    model: ModelConfig,
    train: TrainConfig,
    epoch: usize,
    step_in_epoch: usize,
    global_step: usize,
    /// Parameter tensors, one blob each, in this order.
    params: Vec<TensorEntry>,
    /// Batch-norm layers, two blobs each (running mean, then variance).
    bn_running: Vec<TensorEntry>,
    /// Optimizer slots, two blobs each (grad accumulator, then update).
    optimizer: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(
            File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?,
        );
        w.write_all(MAGIC)?;
        let manifest = Manifest {
            format_version: checkpoint.format_version,
            model: checkpoint.model.clone(),
            train: checkpoint.train.clone(),
            epoch: checkpoint.epoch,
            step_in_epoch: checkpoint.step_in_epoch,
            global_step: checkpoint.global_step,
            params: entries(checkpoint.params.iter().map(|(n, v)| (n, v.shape()))),
            bn_running: entries(
                checkpoint.bn_running.iter().map(|(n, (mean, _))| (n, mean.shape())),
            ),
            optimizer: entries(
                checkpoint.optimizer.iter().map(|(n, slot)| (n, slot.acc_grad.shape())),
            ),
        };
        write_json_block(&mut w, &manifest)?;
        for value in checkpoint.params.values() {
            write_f64_blob(&mut w, value)?;
        }
        for (mean, var) in checkpoint.bn_running.values() {
            write_f64_blob(&mut w, mean)?;
            write_f64_blob(&mut w, var)?;
        }
        for slot in checkpoint.optimizer.values() {
            write_f64_blob(&mut w, &slot.acc_grad)?;
            write_f64_blob(&mut w, &slot.acc_update)?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)
        .with_context(|| format!("moving checkpoint into place at {}", path.display()))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(
        File::open(path).with_context(|| format!("opening checkpoint {}", path.display()))?,
    );
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .with_context(|| format!("reading magic of {}", path.display()))?;
    if &magic != MAGIC {
        bail!("{} is not a checkpoint file (bad magic)", path.display());
    }
    let manifest: Manifest = read_json_block(&mut r)
        .with_context(|| format!("reading manifest of {}", path.display()))?;

    let mut params = BTreeMap::new();
    for entry in &manifest.params {
        params.insert(entry.name.clone(), read_f64_blob(&mut r, &entry.shape)?);
    }
    let mut bn_running = BTreeMap::new();
    for entry in &manifest.bn_running {
        let mean = read_f64_blob(&mut r, &entry.shape)?;
        let var = read_f64_blob(&mut r, &entry.shape)?;
        bn_running.insert(entry.name.clone(), (mean, var));
    }
    let mut optimizer = BTreeMap::new();
    for entry in &manifest.optimizer {
        let acc_grad = read_f64_blob(&mut r, &entry.shape)?;
        let acc_update = read_f64_blob(&mut r, &entry.shape)?;
        optimizer.insert(entry.name.clone(), AdaDeltaSlot { acc_grad, acc_update });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        bail!("{} has trailing bytes after the last tensor", path.display());
    }

    Ok(Checkpoint {
        format_version: manifest.format_version,
        model: manifest.model,
        train: manifest.train,
        epoch: manifest.epoch,
        step_in_epoch: manifest.step_in_epoch,
        global_step: manifest.global_step,
        params,
        bn_running,
        optimizer,
    })
}

fn entries<'a>(items: impl Iterator<Item = (&'a String, &'a [usize])>) -> Vec<TensorEntry> {
    items
        .map(|(name, shape)| TensorEntry { name: name.clone(), shape: shape.to_vec() })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use handgcn::backbone::BackboneConfig;
    use handgcn::posenet::{ModelVariant, PoseNet};
    use handgcn::quantizer::QuantizerConfig;
    use handgcn::relations::THETA_RELAX_TAU;
    use handgcn::skeleton::NUM_JOINTS;
    use handgcn::train::{Stage, TrainerState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_checkpoint() -> Checkpoint {
        let config = ModelConfig {
            image_size: 32,
            quantizer: QuantizerConfig { splits_2d: 2, splits_3d: 2, image_size: 32 },
            backbone: BackboneConfig {
                stem_width: 4,
                stage_widths: [4, 5, 6, 8],
                out_channels: NUM_JOINTS,
            },
            variant: ModelVariant::full(),
            classifier_hidden: 6,
            regressor_hidden: 5,
            regressor_hidden_layers: 2,
            refine_hidden: 5,
            refine_hidden_layers: 2,
            knn_k: 5,
            theta_tau: THETA_RELAX_TAU,
        };
        let mut model = PoseNet::new(config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        model.init(&mut rng);
        let mut train = TrainConfig::default();
        train.stage = Stage::Coarse;
        train.seed = 33;
        let state = TrainerState::fresh();
        Checkpoint::capture(&mut model, &train, &state)
    }

    #[test]
    fn checkpoint_file_round_trips_bit_for_bit() {
        let checkpoint = tiny_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        write_checkpoint(&path, &checkpoint).unwrap();
        let loaded = read_checkpoint(&path).unwrap();

        assert_eq!(loaded.format_version, checkpoint.format_version);
        assert_eq!(loaded.model, checkpoint.model);
        assert_eq!(loaded.train, checkpoint.train);
        assert_eq!(loaded.params, checkpoint.params);
        assert_eq!(loaded.bn_running, checkpoint.bn_running);
        assert_eq!(loaded.optimizer, checkpoint.optimizer);
        // Bit equality, not just value equality.
        for (name, value) in &checkpoint.params {
            let got = &loaded.params[name];
            for (a, b) in value.iter().zip(got.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn damaged_files_are_rejected() {
        let checkpoint = tiny_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        write_checkpoint(&path, &checkpoint).unwrap();

        let bytes = fs::read(&path).unwrap();
        let bad_magic_path = dir.path().join("bad-magic.ckpt");
        let mut bad = bytes.clone();
        bad[0] ^= 0xff;
        fs::write(&bad_magic_path, &bad).unwrap();
        assert!(read_checkpoint(&bad_magic_path).is_err());

        let truncated_path = dir.path().join("truncated.ckpt");
        fs::write(&truncated_path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(read_checkpoint(&truncated_path).is_err());

        let padded_path = dir.path().join("padded.ckpt");
        let mut padded = bytes;
        padded.extend_from_slice(&[0u8; 8]);
        fs::write(&padded_path, &padded).unwrap();
        assert!(read_checkpoint(&padded_path).is_err());
    }

    #[test]
    fn restored_checkpoint_rebuilds_the_model() {
        let checkpoint = tiny_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        write_checkpoint(&path, &checkpoint).unwrap();
        let loaded = read_checkpoint(&path).unwrap();
        let (model, state) = loaded.restore().unwrap();
        assert_eq!(model.config(), &checkpoint.model);
        assert_eq!(state.global_step, 0);
    }
}
