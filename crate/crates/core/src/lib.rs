//! Two-stage hybrid classification–regression graph network for 2D/3D hand
//! pose estimation from a single RGB image.
//!
//! Stage one predicts coarse poses: a small residual CNN extracts one feature
//! vector per joint, joint-wise classifiers assign each joint to a spatial
//! block class, and dual-branch graph-convolution regressors — one branch
//! driven by a learned global adjacency, the other by per-pose relation
//! matrices built from the class predictions — regress 2D then 3D joint
//! coordinates. Stage two freezes the coarse network and trains a residual
//! refinement head whose relation matrix connects joints closer than a
//! learnable distance threshold.
//!
//! Module map:
//! * [`skeleton`] — 21-joint hand model, pose containers, coordinate frames.
//! * [`quantizer`] — ground-truth block-class labels (2D grid, 3D per-pose grid).
//! * [`relations`] — per-pose relation matrices from predictions and distances.
//! * [`graph`] — pure adjacency normalization and graph-convolution ops.
//! * [`nn`] — tensors-with-gradients machinery: conv/BN/pool/graph layers, AdaDelta.
//! * [`backbone`] — the modified 10-layer residual CNN feature extractor.
//! * [`posenet`] — full model assembly, variants, forward/backward.
//! * [`losses`] — classification, regression, and combined stage losses.
//! * [`train`] — two-stage training loop, checkpoints, determinism.
//! * [`data`] — samples, batches, camera projection, synthetic hands.
//! * [`evalkit`] — EPE, PCK/AUC, classification metrics, ablation table.

pub mod backbone;
pub mod data;
pub mod error;
pub mod evalkit;
pub mod graph;
pub mod losses;
pub mod nn;
pub mod posenet;
pub mod quantizer;
pub mod relations;
pub mod skeleton;
pub mod train;

pub use error::{Error, Result};
