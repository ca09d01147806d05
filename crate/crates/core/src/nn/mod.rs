//! Minimal trainable-layer toolkit: explicit forward/backward pairs over
//! f64 ndarrays, a shared parameter registry, and the AdaDelta optimizer.
//!
//! Every layer caches what its backward pass needs during a training-mode
//! forward and releases the cache when backward runs. Gradients accumulate
//! into [`param::Param::grad`]; callers zero them between steps.

pub mod adadelta;
pub mod batchnorm;
pub mod conv;
pub mod graph_layers;
pub mod init;
pub mod linear;
pub mod param;
pub mod pool;

#[cfg(test)]
pub(crate) mod testutil;

pub use adadelta::AdaDelta;
pub use batchnorm::BatchNorm2d;
pub use conv::Conv2d;
pub use graph_layers::{DualBranchStack, GcnClassifier};
pub use linear::Linear;
pub use param::{Param, Params};
pub use pool::MaxPool2d;
