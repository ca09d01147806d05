//! The four subcommands: train, eval, inspect, ablate.
//!
//! Shared conventions: every run resolves an [`AppConfig`] (TOML file +
//! flag overrides), locks its output directory, and embeds the config hash
//! in every file it writes so differently-configured runs never collide.

use anyhow::{bail, ensure, Context, Result};
use handgcn::data::{assemble_batch, Sample};
use handgcn::evalkit::{
    classification_report, default_thresholds, epe, joint_errors, pck_auc, ClassificationReport,
    PckCurve,
};
use handgcn::posenet::{ModelVariant, PoseNet, Refinement};
use handgcn::skeleton::{HandPose2D, HandPose3D, NUM_JOINTS};
use handgcn::train::{train_stage, Checkpoint, Stage, TrainConfig, TrainerState};
use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::appconfig::AppConfig;
use crate::checkpoint_io::{read_checkpoint, write_checkpoint};
use crate::datasets::{load_split, DataOptions, DatasetKind, Split};
use crate::plot;

/// Everything the command line hands over, with `None` for flags the user
/// did not pass — overrides only apply when explicit.
#[derive(Debug, Clone)]
pub struct RunArgs {
    pub dataset: DatasetKind,
    pub data_root: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub stage: Option<String>,
    pub variant: Option<String>,
    pub steps: Option<usize>,
}

impl RunArgs {
    /// Loads the config file and applies flag overrides.
    fn resolve_config(&self) -> Result<AppConfig> {
        let mut config = AppConfig::load(self.config.as_deref())?;
        self.apply_train_overrides(&mut config.train)?;
        if let Some(name) = &self.variant {
            config.model.variant = parse_variant(name)?;
        }
        config.validate()?;
        Ok(config)
    }

    fn apply_train_overrides(&self, train: &mut TrainConfig) -> Result<()> {
        if let Some(seed) = self.seed {
            train.seed = seed;
        }
        if let Some(steps) = self.steps {
            train.max_steps = Some(steps);
        }
        if let Some(name) = &self.stage {
            train.stage = Stage::from_name(name)
                .with_context(|| format!("unknown stage {name:?} (coarse, refinement)"))?;
        }
        Ok(())
    }

    fn data_options(&self, config: &AppConfig) -> DataOptions {
        DataOptions {
            synth_count: config.data.synth_count,
            limit: config.data.limit,
        }
    }

    fn load(&self, config: &AppConfig, split: Split) -> Result<Vec<Sample>> {
        load_split(
            self.dataset,
            self.data_root.as_deref(),
            split,
            &config.model.quantizer,
            &self.data_options(config),
        )
    }
}

fn parse_variant(name: &str) -> Result<ModelVariant> {
    ModelVariant::from_name(name).with_context(|| {
        format!("unknown variant {name:?} (full, baseline-a … baseline-d)")
    })
}

/// Fresh-initialization RNG: stream 0 of the training seed. Shuffle streams
/// start at 1, so init never shares a stream with epoch ordering.
fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Output-directory lock
// ---------------------------------------------------------------------------

/// Exclusive marker so two runs cannot interleave files in one directory.
/// Dropped (and removed) when the command finishes either way.
#[derive(Debug)]
pub struct OutDirLock {
    path: PathBuf,
}

impl OutDirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        let path = dir.join(".handgcn.lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut file) => {
                let _ = writeln!(file, "{}", std::process::id());
                Ok(OutDirLock { path })
            }
            Err(err) if err.kind() == std::io::ErrorKind::AlreadyExists => bail!(
                "output directory {} is locked by another run; if that run is \
                 gone, delete {}",
                dir.display(),
                path.display()
            ),
            Err(err) => {
                Err(err).with_context(|| format!("creating lock {}", path.display()))
            }
        }
    }
}

impl Drop for OutDirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub fn cmd_train(args: &RunArgs) -> Result<()> {
    let _lock = OutDirLock::acquire(&args.out)?;
    let started = Instant::now();

    // Resolve model/state from scratch or from a checkpoint. On a same-stage
    // resume the checkpoint's configs are authoritative (explicit flags still
    // override); a coarse checkpoint plus --stage refinement starts the
    // second stage fresh on top of the trained coarse weights.
    let mut config = args.resolve_config()?;
    let (mut model, mut state) = match &args.checkpoint {
        None => {
            if config.train.stage == Stage::Refinement {
                bail!("the refinement stage needs --checkpoint with a trained coarse model");
            }
            let mut model = PoseNet::new(config.model.clone())?;
            model.init(&mut init_rng(config.train.seed));
            (model, TrainerState::fresh())
        }
        Some(path) => {
            let ckpt = read_checkpoint(path)?;
            if let Some(name) = &args.variant {
                let requested = parse_variant(name)?;
                ensure!(
                    requested == ckpt.model.variant,
                    "--variant {} conflicts with the checkpoint's {} — train a new \
                     model or drop the flag",
                    requested.name(),
                    ckpt.model.variant.name()
                );
            }
            let same_stage = ckpt.train.stage == config.train.stage;
            if same_stage {
                let mut train = ckpt.train.clone();
                args.apply_train_overrides(&mut train)?;
                config.model = ckpt.model.clone();
                config.train = train;
                config.validate()?;
                let (model, state) = ckpt.restore()?;
                (model, state)
            } else if ckpt.train.stage == Stage::Coarse
                && config.train.stage == Stage::Refinement
            {
                ensure!(
                    ckpt.model.variant.refinement != Refinement::None,
                    "checkpoint variant {} has no refinement head",
                    ckpt.model.variant.name()
                );
                config.model = ckpt.model.clone();
                config.validate()?;
                let (model, _) = ckpt.restore()?;
                (model, TrainerState::fresh())
            } else {
                bail!(
                    "cannot train {} from a {} checkpoint",
                    config.train.stage.name(),
                    ckpt.train.stage.name()
                );
            }
        }
    };

    let hash = config.hash();
    let stage = config.train.stage;
    let samples = args.load(&config, Split::Train)?;
    println!(
        "training {} stage on {} {} samples (config {hash})",
        stage.name(),
        samples.len(),
        args.dataset.name()
    );

    let csv_path = args.out.join(format!("loss_{}_{hash}.csv", stage.name()));
    let resuming = state.global_step > 0 && csv_path.exists();
    let mut csv = if resuming {
        fs::OpenOptions::new().append(true).open(&csv_path)?
    } else {
        let mut file = fs::File::create(&csv_path)?;
        writeln!(file, "stage,epoch,global_step,reg_2d,reg_3d,cls_2d,cls_3d,total")?;
        file
    };

    let ckpt_path = args.out.join(format!("checkpoint_{}_{hash}.ckpt", stage.name()));
    let every = config.output.checkpoint_every_epochs;
    let train_config = config.train.clone();
    let summary = train_stage(
        &mut model,
        &samples,
        &train_config,
        &mut state,
        &mut |row| {
            println!(
                "  step {:6}  epoch {:4}  total {:.6}",
                row.global_step, row.epoch, row.total
            );
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{}",
                row.stage.name(),
                row.epoch,
                row.global_step,
                row.reg_2d,
                row.reg_3d,
                row.cls_2d,
                row.cls_3d,
                row.total
            );
        },
        &mut |model, state| {
            if state.epoch % every == 0 {
                let ckpt = Checkpoint::capture(model, &train_config, state);
                write_checkpoint(&ckpt_path, &ckpt).map_err(|err| {
                    handgcn::Error::Checkpoint(format!("{err:#}"))
                })?;
            }
            Ok(())
        },
    )?;

    let ckpt = Checkpoint::capture(&mut model, &config.train, &state);
    write_checkpoint(&ckpt_path, &ckpt)?;
    csv.flush()?;

    println!(
        "{} stage done: {} steps, final loss {}, checkpoint {}, loss curve {} ({:.1}s)",
        summary.stage.name(),
        summary.steps_run,
        summary
            .final_loss
            .map_or_else(|| "n/a".to_string(), |l| format!("{l:.6}")),
        ckpt_path.display(),
        csv_path.display(),
        started.elapsed().as_secs_f64()
    );
    if let (Some(identity), Some(final_loss)) = (summary.identity_loss, summary.final_loss) {
        println!(
            "  refinement: identity loss {identity:.6} → {final_loss:.6}{}",
            if summary.restored_best {
                " (restored best epoch)"
            } else {
                ""
            }
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

/// Everything the evaluation writes into `metrics_<hash>.json`.
#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub dataset: String,
    pub variant: String,
    pub samples: usize,
    /// Mean 2D error in crop pixels.
    pub epe_2d_px: f64,
    /// Mean coarse 3D error in normalized units.
    pub epe_3d_coarse_norm: f64,
    /// Mean final (refined when available) 3D error, normalized units.
    pub epe_3d_norm: f64,
    /// Final 3D error mapped back through each sample's reference bone, mm.
    pub epe_3d_mm: f64,
    /// Area under the PCK curve for thresholds 20–50 mm, in [0, 1].
    pub auc_20_50mm: f64,
    pub pck: PckCurve,
    pub classification_2d: Option<ClassificationReport>,
    pub classification_3d: Option<ClassificationReport>,
}

/// Runs eval-mode inference over `samples` and aggregates every metric the
/// kit defines. Batch size only controls memory, not results.
fn evaluate_model(
    model: &mut PoseNet,
    samples: &[Sample],
    batch_size: usize,
    dataset: &str,
) -> Result<EvalReport> {
    ensure!(!samples.is_empty(), "evaluation needs at least one sample");
    let size = model.config().image_size as f64;
    let n2 = model.config().quantizer.num_classes_2d();
    let n3 = model.config().quantizer.num_classes_3d();
    let count = samples.len();

    let mut pred_2d = Array3::zeros((count, NUM_JOINTS, 2));
    let mut gt_2d = Array3::zeros((count, NUM_JOINTS, 2));
    let mut coarse_3d = Array3::zeros((count, NUM_JOINTS, 3));
    let mut final_3d = Array3::zeros((count, NUM_JOINTS, 3));
    let mut gt_3d = Array3::zeros((count, NUM_JOINTS, 3));
    let mut cls_pred_2d = Vec::new();
    let mut cls_gt_2d = Vec::new();
    let mut cls_pred_3d = Vec::new();
    let mut cls_gt_3d = Vec::new();

    let mut offset = 0usize;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let batch = assemble_batch(&refs)?;
        let out = model.forward(&batch.images, false)?;
        let b = chunk.len();
        for i in 0..b {
            let row = offset + i;
            pred_2d
                .index_axis_mut(Axis(0), row)
                .assign(&out.pose_2d.index_axis(Axis(0), i));
            gt_2d
                .index_axis_mut(Axis(0), row)
                .assign(&batch.pose_2d.index_axis(Axis(0), i));
            coarse_3d
                .index_axis_mut(Axis(0), row)
                .assign(&out.pose_3d_coarse.index_axis(Axis(0), i));
            let refined = out.pose_3d_refined.as_ref().unwrap_or(&out.pose_3d_coarse);
            final_3d
                .index_axis_mut(Axis(0), row)
                .assign(&refined.index_axis(Axis(0), i));
            gt_3d
                .index_axis_mut(Axis(0), row)
                .assign(&batch.pose_3d.index_axis(Axis(0), i));
        }
        if let Some(logits) = &out.logits_2d {
            for i in 0..b {
                cls_pred_2d.extend(argmax_per_joint(&logits.index_axis(Axis(0), i).to_owned()));
                cls_gt_2d.extend(batch.labels_2d[i].labels().iter().copied());
            }
        }
        if let Some(logits) = &out.logits_3d {
            for i in 0..b {
                cls_pred_3d.extend(argmax_per_joint(&logits.index_axis(Axis(0), i).to_owned()));
                cls_gt_3d.extend(batch.labels_3d[i].labels().iter().copied());
            }
        }
        offset += b;
    }

    // The 2D head emits crop-relative coordinates; pixel errors are the
    // normalized errors scaled by the crop side.
    let epe_2d_px = epe(pred_2d.view(), gt_2d.view())? * size;
    let epe_3d_coarse_norm = epe(coarse_3d.view(), gt_3d.view())?;
    let epe_3d_norm = epe(final_3d.view(), gt_3d.view())?;

    // Millimetre errors: scale each sample's normalized joint errors by its
    // own reference bone length before pooling.
    let flat_norm = joint_errors(final_3d.view(), gt_3d.view())?;
    let mut flat_mm = Vec::with_capacity(flat_norm.len());
    for (row, chunk) in flat_norm.chunks(NUM_JOINTS).enumerate() {
        let bone = samples[row].meta.bone_length;
        flat_mm.extend(chunk.iter().map(|e| e * bone));
    }
    let epe_3d_mm = flat_mm.iter().sum::<f64>() / flat_mm.len() as f64;
    let (pck, auc) = pck_auc(&flat_mm, &default_thresholds())?;

    let classification_2d = if cls_pred_2d.is_empty() {
        None
    } else {
        Some(classification_report(&cls_pred_2d, &cls_gt_2d, n2)?)
    };
    let classification_3d = if cls_pred_3d.is_empty() {
        None
    } else {
        Some(classification_report(&cls_pred_3d, &cls_gt_3d, n3)?)
    };

    Ok(EvalReport {
        dataset: dataset.to_string(),
        variant: model.variant().name().to_string(),
        samples: count,
        epe_2d_px,
        epe_3d_coarse_norm,
        epe_3d_norm,
        epe_3d_mm,
        auc_20_50mm: auc,
        pck,
        classification_2d,
        classification_3d,
    })
}

/// First-maximum argmax down the class axis of a (C, J) logit block.
fn argmax_per_joint(logits: &Array2<f64>) -> Vec<usize> {
    let (classes, joints) = logits.dim();
    (0..joints)
        .map(|j| {
            let mut best = 0usize;
            for c in 1..classes {
                if logits[[c, j]] > logits[[best, j]] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Restores a checkpointed model for read-only use, rejecting explicit
/// flag/config contradictions against the stored model schema.
fn restore_for_reading(args: &RunArgs) -> Result<(PoseNet, Checkpoint, AppConfig)> {
    let path = args
        .checkpoint
        .as_ref()
        .context("--checkpoint is required for this subcommand")?;
    let ckpt = read_checkpoint(path)?;
    let mut config = args.resolve_config()?;
    if args.config.is_some() || args.variant.is_some() {
        ensure!(
            config.model == ckpt.model,
            "configured model disagrees with the checkpoint's (classes, sizes, or \
             variant); re-run without the conflicting --config/--variant or match them"
        );
    }
    config.model = ckpt.model.clone();
    let (model, _) = ckpt.restore()?;
    Ok((model, ckpt, config))
}

pub fn cmd_eval(args: &RunArgs) -> Result<()> {
    let _lock = OutDirLock::acquire(&args.out)?;
    let (mut model, _ckpt, config) = restore_for_reading(args)?;
    let hash = config.hash();
    let samples = args.load(&config, Split::Eval)?;
    println!(
        "evaluating {} on {} {} samples (config {hash})",
        model.variant().name(),
        samples.len(),
        args.dataset.name()
    );

    let report = evaluate_model(
        &mut model,
        &samples,
        config.train.batch_size,
        args.dataset.name(),
    )?;

    let json_path = args.out.join(format!("metrics_{hash}.json"));
    let file = fs::File::create(&json_path)?;
    serde_json::to_writer_pretty(file, &report)?;

    let pck_csv = args.out.join(format!("pck_{hash}.csv"));
    let mut csv = fs::File::create(&pck_csv)?;
    writeln!(csv, "threshold_mm,pck")?;
    for (t, v) in report.pck.thresholds.iter().zip(&report.pck.values) {
        writeln!(csv, "{t},{v}")?;
    }
    let pck_png = args.out.join(format!("pck_{hash}.png"));
    plot::save_pck_curve(&pck_png, &report.pck)?;

    println!(
        "  2D EPE {:.4} px | 3D EPE {:.6} norm ({:.3} mm) | AUC[20,50] {:.4}",
        report.epe_2d_px, report.epe_3d_norm, report.epe_3d_mm, report.auc_20_50mm
    );
    if let Some(cls) = &report.classification_2d {
        println!("  2D classes: accuracy {:.4}", cls.accuracy);
    }
    if let Some(cls) = &report.classification_3d {
        println!("  3D classes: accuracy {:.4}", cls.accuracy);
    }
    println!("  wrote {} and {}", json_path.display(), pck_csv.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// inspect
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct InspectReport {
    sample_index: usize,
    source: String,
    mirrored: bool,
    variant: String,
    theta: Option<f64>,
    /// 21×21 binary matrices; absent branches are null.
    r_2d: Option<Vec<Vec<u8>>>,
    r_3d: Option<Vec<Vec<u8>>>,
    r_refine: Option<Vec<Vec<u8>>>,
    labels_2d_gt: Vec<usize>,
    labels_2d_pred: Vec<usize>,
    labels_3d_gt: Vec<usize>,
    labels_3d_pred: Vec<usize>,
    pose_2d_px_pred: Vec<[f64; 2]>,
    pose_2d_px_gt: Vec<[f64; 2]>,
    pose_3d_coarse: Vec<[f64; 3]>,
    pose_3d_refined: Vec<[f64; 3]>,
    pose_3d_gt: Vec<[f64; 3]>,
}

fn binary_rows(matrix: &Array2<f64>) -> Vec<Vec<u8>> {
    matrix
        .rows()
        .into_iter()
        .map(|row| row.iter().map(|&v| if v != 0.0 { 1 } else { 0 }).collect())
        .collect()
}

pub fn cmd_inspect(args: &RunArgs) -> Result<()> {
    let _lock = OutDirLock::acquire(&args.out)?;
    let (mut model, _ckpt, config) = restore_for_reading(args)?;
    let hash = config.hash();
    let samples = args.load(&config, Split::Eval)?;
    let sample = samples.first().context("dataset produced no samples")?;
    let size = model.config().image_size as f64;

    let refs = [sample];
    let batch = assemble_batch(&refs)?;
    let out = model.forward(&batch.images, false)?;

    // Relation matrices per branch; the refinement slot depicts what the
    // head actually couples: ANN/KNN masks from the forward pass, all-ones
    // for the dense refiner, all-zeros when refinement is disabled.
    let r_2d = out.r_2d.as_ref().map(|r| r[0].as_array().clone());
    let r_3d = out.r_3d.as_ref().map(|r| r[0].as_array().clone());
    let r_refine = match (model.variant().refinement, &out.r_ann) {
        (_, Some(r)) => Some(r[0].as_array().clone()),
        (Refinement::FullyConnected, None) => {
            Some(Array2::ones((NUM_JOINTS, NUM_JOINTS)))
        }
        _ => None,
    };

    let pred_2d_px: Vec<[f64; 2]> = (0..NUM_JOINTS)
        .map(|j| [out.pose_2d[[0, j, 0]] * size, out.pose_2d[[0, j, 1]] * size])
        .collect();
    let pred_pose_2d = HandPose2D::from_rows(std::array::from_fn(|j| pred_2d_px[j]))?;
    let coarse: Vec<[f64; 3]> = (0..NUM_JOINTS)
        .map(|j| std::array::from_fn(|c| out.pose_3d_coarse[[0, j, c]]))
        .collect();
    let refined: Vec<[f64; 3]> = match &out.pose_3d_refined {
        Some(r) => (0..NUM_JOINTS)
            .map(|j| std::array::from_fn(|c| r[[0, j, c]]))
            .collect(),
        None => coarse.clone(),
    };
    let coarse_pose = HandPose3D::from_rows(std::array::from_fn(|j| coarse[j]))?;
    let refined_pose = HandPose3D::from_rows(std::array::from_fn(|j| refined[j]))?;

    let panel = |name: &str| args.out.join(format!("inspect_{hash}_{name}.png"));
    plot::save_image(&panel("1_input"), &sample.image)?;
    save_relation_panel(&panel("2_relation_2d"), r_2d.as_ref())?;
    plot::save_skeleton_2d(
        &panel("3_skeleton_2d"),
        &sample.image,
        &pred_pose_2d,
        Some(&sample.pose_2d_px),
    )?;
    save_relation_panel(&panel("4_relation_3d"), r_3d.as_ref())?;
    plot::save_pose_3d(&panel("5_pose_coarse"), &coarse_pose, Some(&sample.pose_3d_norm))?;
    save_relation_panel(&panel("6_relation_refine"), r_refine.as_ref())?;
    plot::save_pose_3d(&panel("7_pose_refined"), &refined_pose, Some(&sample.pose_3d_norm))?;
    plot::save_pose_3d(&panel("8_pose_gt"), &sample.pose_3d_norm, None)?;

    let report = InspectReport {
        sample_index: sample.meta.index,
        source: sample.meta.source.clone(),
        mirrored: sample.meta.mirrored,
        variant: model.variant().name().to_string(),
        theta: model.theta(),
        r_2d: r_2d.as_ref().map(binary_rows),
        r_3d: r_3d.as_ref().map(binary_rows),
        r_refine: r_refine.as_ref().map(binary_rows),
        labels_2d_gt: sample.labels_2d.labels().to_vec(),
        labels_2d_pred: out
            .logits_2d
            .as_ref()
            .map(|l| argmax_per_joint(&l.index_axis(Axis(0), 0).to_owned()))
            .unwrap_or_default(),
        labels_3d_gt: sample.labels_3d.labels().to_vec(),
        labels_3d_pred: out
            .logits_3d
            .as_ref()
            .map(|l| argmax_per_joint(&l.index_axis(Axis(0), 0).to_owned()))
            .unwrap_or_default(),
        pose_2d_px_pred: pred_2d_px,
        pose_2d_px_gt: (0..NUM_JOINTS).map(|j| sample.pose_2d_px.joint(j)).collect(),
        pose_3d_coarse: coarse,
        pose_3d_refined: refined,
        pose_3d_gt: (0..NUM_JOINTS).map(|j| sample.pose_3d_norm.joint(j)).collect(),
    };
    let json_path = args.out.join(format!("inspect_{hash}.json"));
    serde_json::to_writer_pretty(fs::File::create(&json_path)?, &report)?;
    println!(
        "inspect: sample {} of {} → 8 panels + {}",
        report.sample_index,
        report.source,
        json_path.display()
    );
    Ok(())
}

/// Absent relation branches render as the all-zero matrix.
fn save_relation_panel(path: &Path, matrix: Option<&Array2<f64>>) -> Result<()> {
    match matrix {
        Some(m) => plot::save_heatmap(path, m.view()),
        None => plot::save_heatmap(path, Array2::zeros((NUM_JOINTS, NUM_JOINTS)).view()),
    }
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct AblationRow {
    variant: String,
    epe_3d_mm: f64,
    auc_20_50mm: f64,
}

/// Builds a model with `variant` and the coarse weights (and BN statistics)
/// of `ckpt`. Refinement-head parameters come from seed-pinned fresh
/// initialization; the coarse sub-networks must be architecturally
/// identical, which holds across every classification-enabled variant.
fn model_from_coarse(ckpt: &Checkpoint, variant: ModelVariant) -> Result<PoseNet> {
    ensure!(
        variant.use_classification == ckpt.model.variant.use_classification,
        "coarse weights for {} cannot seed {}",
        ckpt.model.variant.name(),
        variant.name()
    );
    let mut config = ckpt.model.clone();
    config.variant = variant;
    let mut model = PoseNet::new(config)?;
    model.init(&mut init_rng(ckpt.train.seed));
    let mut missing = Vec::new();
    model.visit_coarse_mut(&mut |name, param| match ckpt.params.get(name) {
        Some(value) if value.shape() == param.value.shape() => {
            param.value.assign(value);
        }
        _ => missing.push(name.to_string()),
    });
    ensure!(
        missing.is_empty(),
        "checkpoint lacks coarse parameters: {}",
        missing.join(", ")
    );
    let mut bn_missing = Vec::new();
    model.backbone.visit_batchnorms("backbone", &mut |name, bn| {
        match ckpt.bn_running.get(name) {
            Some((mean, var))
                if mean.shape() == bn.running_mean.shape()
                    && var.shape() == bn.running_var.shape() =>
            {
                bn.running_mean.assign(mean);
                bn.running_var.assign(var);
            }
            _ => bn_missing.push(name.to_string()),
        }
    });
    ensure!(
        bn_missing.is_empty(),
        "checkpoint lacks batch-norm statistics: {}",
        bn_missing.join(", ")
    );
    Ok(model)
}

/// Trains one stage quietly (no CSV/checkpoint side channel) and returns
/// the per-row totals.
fn run_stage_quiet(
    model: &mut PoseNet,
    samples: &[Sample],
    config: &TrainConfig,
) -> Result<()> {
    let mut state = TrainerState::fresh();
    train_stage(model, samples, config, &mut state, &mut |_| {}, &mut |_, _| Ok(()))?;
    Ok(())
}

pub fn cmd_ablate(args: &RunArgs) -> Result<()> {
    let _lock = OutDirLock::acquire(&args.out)?;
    let started = Instant::now();
    let mut config = args.resolve_config()?;
    ensure!(
        args.stage.is_none(),
        "--stage does not apply to ablate; both stages run per variant"
    );
    ensure!(
        args.variant.is_none(),
        "--variant does not apply to ablate; the five-variant set is fixed"
    );
    config.model.variant = ModelVariant::full();
    let hash = config.hash();
    let train_samples = args.load(&config, Split::Train)?;
    let eval_samples = args.load(&config, Split::Eval)?;
    println!(
        "ablation on {} ({} train / {} eval samples, config {hash})",
        args.dataset.name(),
        train_samples.len(),
        eval_samples.len()
    );

    let mut coarse_config = config.train.clone();
    coarse_config.stage = Stage::Coarse;
    let mut refine_config = config.train.clone();
    refine_config.stage = Stage::Refinement;

    // One coarse model serves every classification-enabled variant: B, C,
    // D, and Full differ only in their refinement heads, which the coarse
    // stage never touches.
    println!("  [shared] coarse stage…");
    let mut shared = PoseNet::new(config.model.clone())?;
    shared.init(&mut init_rng(coarse_config.seed));
    let mut shared_state = TrainerState::fresh();
    train_stage(
        &mut shared,
        &train_samples,
        &coarse_config,
        &mut shared_state,
        &mut |_| {},
        &mut |_, _| Ok(()),
    )?;
    let shared_ckpt = Checkpoint::capture(&mut shared, &coarse_config, &shared_state);
    write_checkpoint(
        &args.out.join(format!("checkpoint_coarse_shared_{hash}.ckpt")),
        &shared_ckpt,
    )?;

    let mut rows = Vec::new();
    for variant in ModelVariant::ablation_set() {
        let label = variant.name();
        let mut model = if variant.use_classification {
            model_from_coarse(&shared_ckpt, variant)?
        } else {
            // Baseline A drops the classifiers, so its coarse network is a
            // different architecture and trains from scratch.
            println!("  [{label}] coarse stage…");
            let mut model = PoseNet::new({
                let mut m = config.model.clone();
                m.variant = variant;
                m
            })?;
            model.init(&mut init_rng(coarse_config.seed));
            run_stage_quiet(&mut model, &train_samples, &coarse_config)?;
            model
        };
        if variant.refinement != Refinement::None {
            println!("  [{label}] refinement stage…");
            run_stage_quiet(&mut model, &train_samples, &refine_config)?;
        }
        let report = evaluate_model(
            &mut model,
            &eval_samples,
            config.train.batch_size,
            args.dataset.name(),
        )?;
        println!(
            "  [{label}] 3D EPE {:.3} mm, AUC {:.4}",
            report.epe_3d_mm, report.auc_20_50mm
        );
        rows.push(AblationRow {
            variant: label.to_string(),
            epe_3d_mm: report.epe_3d_mm,
            auc_20_50mm: report.auc_20_50mm,
        });
    }

    let csv_path = args.out.join(format!("ablation_{hash}.csv"));
    let mut csv = fs::File::create(&csv_path)?;
    writeln!(csv, "variant,epe_3d_mm,auc_20_50mm")?;
    for row in &rows {
        writeln!(csv, "{},{},{}", row.variant, row.epe_3d_mm, row.auc_20_50mm)?;
    }
    println!(
        "ablation table → {} ({:.1}s)",
        csv_path.display(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}
