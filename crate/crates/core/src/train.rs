//! Two-stage training loop and checkpointing.
//!
//! The coarse stage optimizes the backbone, classifiers, and regressors
//! against the weighted combination loss; the refinement stage freezes all
//! of those and trains only the residual refinement head (and its distance
//! threshold) against the 3D regression loss, consuming coarse predictions
//! that are computed once up front in evaluation mode.
//!
//! Determinism contract: batch order is a pure function of (seed, epoch),
//! so a run interrupted at any step and resumed from a [`Checkpoint`]
//! replays the remaining steps bit-for-bit. Stream 0 of the seed is
//! reserved for parameter initialization; epoch `e` shuffles on stream
//! `e + 1`.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array3, ArrayD, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{assemble_batch, Sample};
use crate::error::{Error, Result};
use crate::losses::{refinement_loss, regression_loss_backward, CoarseLosses, LossWeights};
use crate::nn::adadelta::AdaDeltaSlot;
use crate::nn::{AdaDelta, Params};
use crate::posenet::{ModelConfig, PoseNet, Refinement};
use crate::skeleton::NUM_JOINTS;

/// Which half of the two-stage schedule a run belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Coarse,
    Refinement,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Coarse => "coarse",
            Stage::Refinement => "refinement",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "coarse" => Some(Stage::Coarse),
            "refinement" | "refine" => Some(Stage::Refinement),
            _ => None,
        }
    }
}

/// Hyper-parameters for one training stage.
///
/// The optimizer is AdaDelta with its default parameters; parameter
/// initialization (normal backbone weights, Xavier graph weights) lives with
/// the layers themselves and is driven by the caller's RNG before training.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    /// Total epoch budget for the stage; a resumed run continues toward the
    /// same budget.
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds both the per-epoch shuffle (streams 1..) and, by convention,
    /// parameter initialization (stream 0).
    pub seed: u64,
    pub weights: LossWeights,
    /// Emit a [`LossRow`] every this many global steps (the final step of a
    /// run is always emitted).
    pub log_every: usize,
    /// Optional cap on the global step count, checked before each step;
    /// lets short runs stop mid-epoch without consuming the epoch budget.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: Stage::Coarse,
            epochs: 400,
            batch_size: 64,
            seed: 0,
            weights: LossWeights::default(),
            log_every: 50,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidConfig("log_every must be >= 1".into()));
        }
        if self.max_steps == Some(0) {
            return Err(Error::InvalidConfig("max_steps must be >= 1 when set".into()));
        }
        self.weights.validate()
    }
}

/// Mutable position of a run inside a stage, advanced step by step so a
/// checkpoint taken between any two steps resumes exactly.
#[derive(Debug, Clone)]
pub struct TrainerState {
    pub optimizer: AdaDelta,
    /// Completed epochs.
    pub epoch: usize,
    /// Batches consumed within the current epoch.
    pub step_in_epoch: usize,
    /// Batches consumed across the whole stage (1-based after a step).
    pub global_step: usize,
}

impl TrainerState {
    pub fn fresh() -> Self {
        TrainerState {
            optimizer: AdaDelta::default(),
            epoch: 0,
            step_in_epoch: 0,
            global_step: 0,
        }
    }
}

/// One logged optimization step. Refinement rows carry the refinement loss
/// in `total` and zeros for the four coarse components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub stage: Stage,
    pub epoch: usize,
    pub global_step: usize,
    pub reg_2d: f64,
    pub reg_3d: f64,
    pub cls_2d: f64,
    pub cls_3d: f64,
    pub total: f64,
}

/// What a [`train_stage`] call accomplished.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageSummary {
    pub stage: Stage,
    /// Steps executed by this call (not counting resumed history).
    pub steps_run: usize,
    /// Completed epochs at exit.
    pub epoch: usize,
    /// Coarse: the last training-step total (None when no step ran).
    /// Refinement: full-dataset refined loss after best restoration.
    pub final_loss: Option<f64>,
    /// Refinement only: full-dataset loss of the head as it entered this
    /// call — the identity residual's loss when starting from scratch.
    pub identity_loss: Option<f64>,
    /// Whether the refinement head was rolled back to the best epoch.
    pub restored_best: bool,
}

/// Runs one training stage from `state` toward `config.epochs`.
///
/// `on_row` receives loss curves at `log_every` cadence; `on_epoch_end` runs
/// after every completed epoch (checkpoint cadence lives with the caller).
/// Coarse steps update every parameter outside `refine.*`; refinement steps
/// update only `refine.*`, leaving the coarse network bit-identical. The
/// refinement stage tracks the best full-dataset loss across its epochs and
/// restores that head before returning, so a completed stage never ends
/// worse than it began — in particular never worse than the identity
/// residual it was initialized to.
pub fn train_stage(
    model: &mut PoseNet,
    samples: &[Sample],
    config: &TrainConfig,
    state: &mut TrainerState,
    on_row: &mut dyn FnMut(&LossRow),
    on_epoch_end: &mut dyn FnMut(&mut PoseNet, &TrainerState) -> Result<()>,
) -> Result<StageSummary> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidData("training requires at least one sample".into()));
    }
    if config.stage == Stage::Refinement
        && model.config().variant.refinement == Refinement::None
    {
        return Err(Error::InvalidConfig(
            "refinement stage requires a variant with a refinement head".into(),
        ));
    }

    let n = samples.len();
    // The refinement stage consumes frozen coarse predictions; compute them
    // once for the whole dataset in evaluation mode.
    let refine_data = match config.stage {
        Stage::Coarse => None,
        Stage::Refinement => Some(precompute_coarse(model, samples, config.batch_size)?),
    };

    let mut identity_loss = None;
    let mut best: Option<(f64, BTreeMap<String, ArrayD<f64>>)> = None;
    if let Some((coarse_all, gt_all)) = &refine_data {
        let start = refinement_eval(model, coarse_all, gt_all, config.batch_size)?;
        identity_loss = Some(start);
        best = Some((start, snapshot_refine(model)));
    }

    let mut steps_run = 0usize;
    let mut tail: Option<LossRow> = None;
    let mut last_logged = 0usize;

    'stage: while state.epoch < config.epochs {
        let order = epoch_permutation(config.seed, state.epoch, n);
        let batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        while state.step_in_epoch < batches.len() {
            if let Some(max) = config.max_steps {
                if state.global_step >= max {
                    break 'stage;
                }
            }
            let idx = batches[state.step_in_epoch];
            let losses = match (config.stage, &refine_data) {
                (Stage::Coarse, _) => coarse_step(model, samples, idx, &config.weights)?,
                (Stage::Refinement, Some(data)) => refine_step(model, data, idx)?,
                (Stage::Refinement, None) => unreachable!(),
            };
            apply_updates(model, &mut state.optimizer, config.stage);
            state.step_in_epoch += 1;
            state.global_step += 1;
            steps_run += 1;

            let row = LossRow {
                stage: config.stage,
                epoch: state.epoch,
                global_step: state.global_step,
                reg_2d: losses.reg_2d,
                reg_3d: losses.reg_3d,
                cls_2d: losses.cls_2d,
                cls_3d: losses.cls_3d,
                total: losses.total,
            };
            if state.global_step % config.log_every == 0 {
                on_row(&row);
                last_logged = state.global_step;
            }
            tail = Some(row);
        }
        state.epoch += 1;
        state.step_in_epoch = 0;
        if let Some((coarse_all, gt_all)) = &refine_data {
            let loss = refinement_eval(model, coarse_all, gt_all, config.batch_size)?;
            if best.as_ref().is_none_or(|(b, _)| loss < *b) {
                best = Some((loss, snapshot_refine(model)));
            }
        }
        on_epoch_end(model, state)?;
    }

    if let Some(row) = &tail {
        if row.global_step != last_logged {
            on_row(row);
        }
    }

    let mut restored_best = false;
    let final_loss = if let Some((coarse_all, gt_all)) = &refine_data {
        let mut current = refinement_eval(model, coarse_all, gt_all, config.batch_size)?;
        if let Some((best_loss, best_params)) = &best {
            if *best_loss < current {
                restore_refine(model, best_params);
                current = *best_loss;
                restored_best = true;
            }
        }
        Some(current)
    } else {
        tail.map(|row| row.total)
    };

    Ok(StageSummary {
        stage: config.stage,
        steps_run,
        epoch: state.epoch,
        final_loss,
        identity_loss,
        restored_best,
    })
}

/// Deterministic sample order for one epoch: a shuffle seeded by
/// (seed, epoch) alone, independent of run history.
fn epoch_permutation(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn coarse_step(
    model: &mut PoseNet,
    samples: &[Sample],
    idx: &[usize],
    weights: &LossWeights,
) -> Result<CoarseLosses> {
    let refs: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
    let batch = assemble_batch(&refs)?;
    model.zero_grad();
    model.coarse_loss_backward(
        &batch.images,
        &batch.pose_2d,
        &batch.pose_3d,
        &batch.labels_2d,
        &batch.labels_3d,
        weights,
    )
}

fn refine_step(
    model: &mut PoseNet,
    (coarse_all, gt_all): &(Array3<f64>, Array3<f64>),
    idx: &[usize],
) -> Result<CoarseLosses> {
    let coarse = gather(coarse_all, idx);
    let gt = gather(gt_all, idx);
    model.zero_grad();
    let (refined, _) = model.refine_forward(&coarse, true)?;
    let (loss, d_refined) = regression_loss_backward(refined.view(), gt.view())?;
    if !loss.is_finite() {
        return Err(Error::InvalidData(format!("non-finite refinement loss: {loss}")));
    }
    model.refine_backward(&d_refined)?;
    Ok(CoarseLosses {
        reg_2d: 0.0,
        reg_3d: 0.0,
        cls_2d: 0.0,
        cls_3d: 0.0,
        total: loss,
    })
}

/// Applies accumulated gradients to the parameters the stage owns.
fn apply_updates(model: &mut PoseNet, optimizer: &mut AdaDelta, stage: Stage) {
    model.visit_mut("", &mut |name, param| {
        let refines = name.starts_with("refine.");
        let trained = match stage {
            Stage::Coarse => !refines,
            Stage::Refinement => refines,
        };
        if trained {
            optimizer.update(name, param);
        }
    });
}

/// Frozen coarse 3D predictions and their targets for the whole dataset,
/// in dataset order.
fn precompute_coarse(
    model: &mut PoseNet,
    samples: &[Sample],
    batch_size: usize,
) -> Result<(Array3<f64>, Array3<f64>)> {
    let n = samples.len();
    let mut coarse = Array3::zeros((n, NUM_JOINTS, 3));
    let mut gt = Array3::zeros((n, NUM_JOINTS, 3));
    for start in (0..n).step_by(batch_size) {
        let end = (start + batch_size).min(n);
        let refs: Vec<&Sample> = samples[start..end].iter().collect();
        let batch = assemble_batch(&refs)?;
        let outputs = model.coarse_forward(&batch.images, false)?;
        for (k, i) in (start..end).enumerate() {
            coarse
                .index_axis_mut(Axis(0), i)
                .assign(&outputs.pose_3d_coarse.index_axis(Axis(0), k));
            gt.index_axis_mut(Axis(0), i)
                .assign(&batch.pose_3d.index_axis(Axis(0), k));
        }
    }
    Ok((coarse, gt))
}

/// Full-dataset refinement loss in evaluation mode, batch-count weighted so
/// the result is independent of `batch_size`.
fn refinement_eval(
    model: &mut PoseNet,
    coarse_all: &Array3<f64>,
    gt_all: &Array3<f64>,
    batch_size: usize,
) -> Result<f64> {
    let n = coarse_all.dim().0;
    let mut weighted_sum = 0.0;
    for start in (0..n).step_by(batch_size) {
        let end = (start + batch_size).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let (refined, _) = model.refine_forward(&gather(coarse_all, &idx), false)?;
        let loss = refinement_loss(refined.view(), gather(gt_all, &idx).view())?;
        weighted_sum += loss * (end - start) as f64;
    }
    Ok(weighted_sum / n as f64)
}

fn gather(all: &Array3<f64>, idx: &[usize]) -> Array3<f64> {
    let (_, j, d) = all.dim();
    let mut out = Array3::zeros((idx.len(), j, d));
    for (k, &i) in idx.iter().enumerate() {
        out.index_axis_mut(Axis(0), k)
            .assign(&all.index_axis(Axis(0), i));
    }
    out
}

fn snapshot_refine(model: &PoseNet) -> BTreeMap<String, ArrayD<f64>> {
    let mut snap = BTreeMap::new();
    model.visit("", &mut |name, param| {
        if name.starts_with("refine.") {
            snap.insert(name.to_string(), param.value.clone());
        }
    });
    snap
}

fn restore_refine(model: &mut PoseNet, snap: &BTreeMap<String, ArrayD<f64>>) {
    model.visit_mut("", &mut |name, param| {
        if let Some(value) = snap.get(name) {
            param.value.assign(value);
        }
    });
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Everything needed to resume a stage bit-compatibly: configs, loop
/// position, parameters, batch-norm running statistics, and optimizer
/// accumulators. Serialization to disk lives with the CLI.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub epoch: usize,
    pub step_in_epoch: usize,
    pub global_step: usize,
    pub params: BTreeMap<String, ArrayD<f64>>,
    /// Per-layer (running_mean, running_var).
    pub bn_running: BTreeMap<String, (ArrayD<f64>, ArrayD<f64>)>,
    pub optimizer: BTreeMap<String, AdaDeltaSlot>,
}

impl Checkpoint {
    /// Snapshots a model mid-run. Needs `&mut` only to walk the batch-norm
    /// layers; the model is not modified.
    pub fn capture(model: &mut PoseNet, config: &TrainConfig, state: &TrainerState) -> Self {
        let mut params = BTreeMap::new();
        model.visit("", &mut |name, param| {
            params.insert(name.to_string(), param.value.clone());
        });
        let mut bn_running = BTreeMap::new();
        model.backbone.visit_batchnorms("backbone", &mut |name, bn| {
            bn_running.insert(
                name.to_string(),
                (
                    bn.running_mean.clone().into_dyn(),
                    bn.running_var.clone().into_dyn(),
                ),
            );
        });
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model: model.config().clone(),
            train: config.clone(),
            epoch: state.epoch,
            step_in_epoch: state.step_in_epoch,
            global_step: state.global_step,
            params,
            bn_running,
            optimizer: state.optimizer.state().clone(),
        }
    }

    /// Rebuilds the model and trainer position. Every stored tensor must
    /// match a parameter of the reconstructed architecture exactly — extra,
    /// missing, or reshaped entries are checkpoint corruption.
    pub fn restore(&self) -> Result<(PoseNet, TrainerState)> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.train.validate()?;
        let mut model = PoseNet::new(self.model.clone())?;

        let mut problems = Vec::new();
        let mut visited = BTreeSet::new();
        model.visit_mut("", &mut |name, param| {
            visited.insert(name.to_string());
            match self.params.get(name) {
                Some(value) if value.shape() == param.value.shape() => {
                    param.value.assign(value);
                }
                Some(value) => problems.push(format!(
                    "param {name}: stored shape {:?} vs model {:?}",
                    value.shape(),
                    param.value.shape()
                )),
                None => problems.push(format!("param {name}: missing")),
            }
        });
        for name in self.params.keys() {
            if !visited.contains(name) {
                problems.push(format!("param {name}: not part of this architecture"));
            }
        }

        let mut bn_visited = BTreeSet::new();
        model.backbone.visit_batchnorms("backbone", &mut |name, bn| {
            bn_visited.insert(name.to_string());
            match self.bn_running.get(name) {
                Some((mean, var))
                    if mean.shape() == bn.running_mean.shape()
                        && var.shape() == bn.running_var.shape() =>
                {
                    bn.running_mean.assign(mean);
                    bn.running_var.assign(var);
                }
                Some(_) => problems.push(format!("batch-norm {name}: shape mismatch")),
                None => problems.push(format!("batch-norm {name}: missing")),
            }
        });
        for name in self.bn_running.keys() {
            if !bn_visited.contains(name) {
                problems.push(format!("batch-norm {name}: not part of this architecture"));
            }
        }

        for (name, slot) in &self.optimizer {
            match self.params.get(name) {
                Some(value) if value.shape() == slot.acc_grad.shape() => {}
                Some(_) => problems.push(format!("optimizer slot {name}: shape mismatch")),
                None => problems.push(format!("optimizer slot {name}: unknown parameter")),
            }
        }

        if !problems.is_empty() {
            return Err(Error::Checkpoint(problems.join("; ")));
        }

        let mut optimizer = AdaDelta::default();
        optimizer.set_state(self.optimizer.clone())?;
        let state = TrainerState {
            optimizer,
            epoch: self.epoch,
            step_in_epoch: self.step_in_epoch,
            global_step: self.global_step,
        };
        Ok((model, state))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::data::synth_dataset;
    use crate::posenet::{ModelVariant, PoseNet};
    use crate::quantizer::QuantizerConfig;
    use crate::relations::THETA_RELAX_TAU;
    use ndarray::ArrayD;

    fn tiny_config(variant: ModelVariant) -> ModelConfig {
        ModelConfig {
            image_size: 32,
            quantizer: QuantizerConfig {
                splits_2d: 2,
                splits_3d: 2,
                image_size: 32,
            },
            backbone: BackboneConfig {
                stem_width: 4,
                stage_widths: [4, 5, 6, 8],
                out_channels: NUM_JOINTS,
            },
            variant,
            classifier_hidden: 6,
            regressor_hidden: 5,
            regressor_hidden_layers: 2,
            refine_hidden: 5,
            refine_hidden_layers: 2,
            knn_k: 5,
            theta_tau: THETA_RELAX_TAU,
        }
    }

    fn tiny_setup(variant: ModelVariant, seed: u64) -> (PoseNet, Vec<Sample>) {
        let config = tiny_config(variant);
        let samples = synth_dataset(8, 77, &config.quantizer).unwrap();
        let mut model = PoseNet::new(config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        model.init(&mut rng);
        (model, samples)
    }

    fn tiny_train_config(stage: Stage, max_steps: Option<usize>) -> TrainConfig {
        TrainConfig {
            stage,
            epochs: 1000,
            batch_size: 4,
            seed: 3,
            weights: LossWeights::default(),
            log_every: 1,
            max_steps,
        }
    }

    fn param_bits(model: &PoseNet, prefix_filter: &str) -> Vec<(String, Vec<u64>)> {
        let mut out = Vec::new();
        model.visit("", &mut |name, param| {
            if name.starts_with(prefix_filter) || prefix_filter.is_empty() {
                out.push((
                    name.to_string(),
                    param.value.iter().map(|v| v.to_bits()).collect(),
                ));
            }
        });
        out
    }

    #[test]
    fn coarse_training_reduces_loss_and_leaves_refinement_untouched() {
        let (mut model, samples) = tiny_setup(ModelVariant::full(), 9);
        let refine_before = param_bits(&model, "refine.");
        let config = tiny_train_config(Stage::Coarse, Some(30));
        let mut state = TrainerState::fresh();
        let mut rows = Vec::new();
        let summary = train_stage(
            &mut model,
            &samples,
            &config,
            &mut state,
            &mut |row| rows.push(*row),
            &mut |_, _| Ok(()),
        )
        .unwrap();

        assert_eq!(summary.steps_run, 30);
        assert_eq!(rows.len(), 30);
        assert_eq!(rows.last().unwrap().global_step, 30);
        let first = rows.first().unwrap().total;
        let last = rows.last().unwrap().total;
        assert!(
            last < first,
            "30 optimizer steps should reduce the training loss: {first} -> {last}"
        );
        for row in &rows {
            let recombined = 100.0 * (row.reg_2d + row.reg_3d) + (row.cls_2d + row.cls_3d);
            assert!((row.total - recombined).abs() <= 1e-12 * row.total.abs());
        }
        assert_eq!(param_bits(&model, "refine."), refine_before);
    }

    #[test]
    fn refinement_training_freezes_coarse_and_never_ends_worse_than_identity() {
        let (mut model, samples) = tiny_setup(ModelVariant::full(), 11);
        let coarse_before: Vec<_> = param_bits(&model, "")
            .into_iter()
            .filter(|(name, _)| !name.starts_with("refine."))
            .collect();

        let mut config = tiny_train_config(Stage::Refinement, None);
        config.epochs = 3;
        let mut state = TrainerState::fresh();
        let summary = train_stage(
            &mut model,
            &samples,
            &config,
            &mut state,
            &mut |_| {},
            &mut |_, _| Ok(()),
        )
        .unwrap();

        let identity = summary.identity_loss.expect("refinement records identity loss");
        let final_loss = summary.final_loss.expect("refinement records final loss");
        assert!(
            final_loss <= identity,
            "best-epoch restoration keeps the head at least as good as identity: \
             identity {identity}, final {final_loss}"
        );
        let coarse_after: Vec<_> = param_bits(&model, "")
            .into_iter()
            .filter(|(name, _)| !name.starts_with("refine."))
            .collect();
        assert_eq!(coarse_after, coarse_before, "coarse parameters must stay frozen");
    }

    #[test]
    fn resume_from_checkpoint_matches_uninterrupted_run_bit_for_bit() {
        let (mut one_shot, samples) = tiny_setup(ModelVariant::full(), 21);
        let config = tiny_train_config(Stage::Coarse, Some(6));
        let mut one_state = TrainerState::fresh();
        let mut one_rows = Vec::new();
        train_stage(
            &mut one_shot,
            &samples,
            &config,
            &mut one_state,
            &mut |row| one_rows.push(*row),
            &mut |_, _| Ok(()),
        )
        .unwrap();

        let (mut interrupted, _) = tiny_setup(ModelVariant::full(), 21);
        let half_config = tiny_train_config(Stage::Coarse, Some(3));
        let mut half_state = TrainerState::fresh();
        train_stage(
            &mut interrupted,
            &samples,
            &half_config,
            &mut half_state,
            &mut |_| {},
            &mut |_, _| Ok(()),
        )
        .unwrap();
        let checkpoint = Checkpoint::capture(&mut interrupted, &half_config, &half_state);

        let (mut resumed, mut resumed_state) = checkpoint.restore().unwrap();
        assert_eq!(resumed_state.global_step, 3);
        let mut resumed_rows = Vec::new();
        train_stage(
            &mut resumed,
            &samples,
            &config,
            &mut resumed_state,
            &mut |row| resumed_rows.push(*row),
            &mut |_, _| Ok(()),
        )
        .unwrap();

        let one_tail: Vec<_> = one_rows
            .iter()
            .filter(|row| row.global_step > 3)
            .map(|row| (row.global_step, row.total.to_bits()))
            .collect();
        let resumed_tail: Vec<_> = resumed_rows
            .iter()
            .map(|row| (row.global_step, row.total.to_bits()))
            .collect();
        assert_eq!(resumed_tail, one_tail, "post-resume loss curve must match");
        assert_eq!(
            param_bits(&resumed, ""),
            param_bits(&one_shot, ""),
            "post-resume parameters must match the uninterrupted run"
        );
    }

    #[test]
    fn checkpoint_roundtrip_is_lossless() {
        let (mut model, samples) = tiny_setup(ModelVariant::full(), 5);
        let config = tiny_train_config(Stage::Coarse, Some(2));
        let mut state = TrainerState::fresh();
        train_stage(&mut model, &samples, &config, &mut state, &mut |_| {}, &mut |_, _| Ok(()))
            .unwrap();

        let first = Checkpoint::capture(&mut model, &config, &state);
        let (mut restored, restored_state) = first.restore().unwrap();
        let second = Checkpoint::capture(&mut restored, &config, &restored_state);

        assert_eq!(first.params, second.params);
        assert_eq!(first.bn_running, second.bn_running);
        assert_eq!(first.optimizer, second.optimizer);
        assert_eq!(
            (first.epoch, first.step_in_epoch, first.global_step),
            (second.epoch, second.step_in_epoch, second.global_step)
        );
    }

    #[test]
    fn checkpoint_restore_rejects_corruption() {
        let (mut model, _) = tiny_setup(ModelVariant::full(), 5);
        let config = tiny_train_config(Stage::Coarse, None);
        let state = TrainerState::fresh();
        let clean = Checkpoint::capture(&mut model, &config, &state);

        let mut reshaped = clean.clone();
        let name = reshaped.params.keys().next().unwrap().clone();
        reshaped.params.insert(name, ArrayD::zeros(vec![1, 2, 3]));
        assert!(reshaped.restore().is_err(), "reshaped tensor must be rejected");

        let mut missing = clean.clone();
        let name = missing.params.keys().next_back().unwrap().clone();
        missing.params.remove(&name);
        assert!(missing.restore().is_err(), "missing tensor must be rejected");

        let mut extra = clean.clone();
        extra
            .params
            .insert("no.such.param".into(), ArrayD::zeros(vec![2]));
        assert!(extra.restore().is_err(), "unknown tensor must be rejected");

        let mut stale = clean;
        stale.format_version += 1;
        assert!(stale.restore().is_err(), "future format version must be rejected");
    }

    #[test]
    fn non_finite_loss_aborts_with_an_error() {
        let (mut model, samples) = tiny_setup(ModelVariant::full(), 5);
        model.visit_mut("", &mut |name, param| {
            if name == "reg2d.out.w_a" {
                param.value.fill(1e200);
            }
        });
        let config = tiny_train_config(Stage::Coarse, Some(1));
        let mut state = TrainerState::fresh();
        let err = train_stage(
            &mut model,
            &samples,
            &config,
            &mut state,
            &mut |_| {},
            &mut |_, _| Ok(()),
        )
        .unwrap_err();
        assert!(
            err.to_string().contains("non-finite"),
            "diverged training should mention the non-finite loss, got: {err}"
        );
    }

    #[test]
    fn loss_rows_follow_logging_cadence_with_final_row() {
        let (mut model, samples) = tiny_setup(ModelVariant::full(), 13);
        let mut config = tiny_train_config(Stage::Coarse, Some(5));
        config.log_every = 2;
        let mut state = TrainerState::fresh();
        let mut steps = Vec::new();
        train_stage(
            &mut model,
            &samples,
            &config,
            &mut state,
            &mut |row| steps.push(row.global_step),
            &mut |_, _| Ok(()),
        )
        .unwrap();
        assert_eq!(steps, vec![2, 4, 5], "cadence rows plus the final step");
    }

    #[test]
    fn epoch_end_hook_sees_each_completed_epoch() {
        let (mut model, samples) = tiny_setup(ModelVariant::full(), 13);
        let mut config = tiny_train_config(Stage::Coarse, None);
        config.epochs = 3;
        let mut state = TrainerState::fresh();
        let mut epochs = Vec::new();
        train_stage(
            &mut model,
            &samples,
            &config,
            &mut state,
            &mut |_| {},
            &mut |_, st| {
                epochs.push((st.epoch, st.step_in_epoch));
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(epochs, vec![(1, 0), (2, 0), (3, 0)]);
        assert_eq!(state.global_step, 6, "8 samples / batch 4 = 2 steps per epoch");
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let (mut model, samples) = tiny_setup(ModelVariant::full(), 5);
        let mut state = TrainerState::fresh();
        let config = tiny_train_config(Stage::Coarse, None);
        assert!(train_stage(
            &mut model,
            &[],
            &config,
            &mut state,
            &mut |_| {},
            &mut |_, _| Ok(())
        )
        .is_err());

        let mut bad = config.clone();
        bad.batch_size = 0;
        assert!(train_stage(
            &mut model,
            &samples,
            &bad,
            &mut state,
            &mut |_| {},
            &mut |_, _| Ok(())
        )
        .is_err());

        let (mut headless, samples_b) = tiny_setup(ModelVariant::baseline_b(), 5);
        let refine_config = tiny_train_config(Stage::Refinement, None);
        let err = train_stage(
            &mut headless,
            &samples_b,
            &refine_config,
            &mut state,
            &mut |_| {},
            &mut |_, _| Ok(()),
        )
        .unwrap_err();
        assert!(err.to_string().contains("refinement"));
    }

    #[test]
    fn stage_names_round_trip() {
        for stage in [Stage::Coarse, Stage::Refinement] {
            assert_eq!(Stage::from_name(stage.name()), Some(stage));
        }
        assert_eq!(Stage::from_name("refine"), Some(Stage::Refinement));
        assert_eq!(Stage::from_name("warmup"), None);
    }
}
