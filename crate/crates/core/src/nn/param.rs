//! Learnable tensors and the parameter-traversal contract.

use ndarray::{ArrayD, IxDyn};

/// A learnable tensor paired with its gradient accumulator. Gradients are
/// summed across backward calls until [`Param::zero_grad`] resets them.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
}

impl Param {
    pub fn new(value: ArrayD<f64>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param { value, grad }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Param::new(ArrayD::zeros(IxDyn(shape)))
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Uniform traversal over every learnable tensor of a model part, in a
/// deterministic order. Names are dotted paths ("backbone.conv1.weight");
/// the optimizer keys its state and the checkpoint its tensor table by them.
pub trait Params {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));

    fn num_params(&self) -> usize {
        let mut count = 0;
        self.visit("", &mut |_, p| count += p.numel());
        count
    }

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }

    /// Collects (name, numel) pairs, useful for diagnostics and tests.
    fn param_sizes(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, p| out.push((name.to_string(), p.numel())));
        out
    }
}

/// Joins a traversal prefix with a component name.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
