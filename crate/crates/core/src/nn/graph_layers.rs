//! Trainable graph-convolution stacks over 21-joint feature graphs.
//!
//! Both structures own a learnable global adjacency Â (initialized near the
//! identity) that is applied directly — never renormalized — and bias-free
//! weight matrices per layer. The dual-branch stack additionally consumes a
//! per-sample relation matrix R.
//!
//! Relation matrices are constants to the autodiff: their entries receive
//! gradients only when `track_relation_grad` is set (the straight-through
//! path that trains the ANN threshold θ), and those gradients are returned
//! to the caller rather than applied to R itself.
//!
//! Hidden dual-branch layers concatenate their two aggregations,
//! ReLU([Â·H·W_A, R·H·W_R]), doubling the width. Concatenation cannot emit
//! odd widths, so the final coordinate-emitting layer uses the sum form
//! Â·H·W_A + R·H·W_R with no activation.

use ndarray::{Array2, Array3, Axis, Ix2};
use rand::Rng;

use crate::nn::init;
use crate::nn::param::{join, Param, Params};
use crate::skeleton::NUM_JOINTS;

fn view2(p: &Param) -> ndarray::ArrayView2<'_, f64> {
    p.value.view().into_dimensionality::<Ix2>().expect("matrix param")
}

fn grad2_add(p: &mut Param, delta: &Array2<f64>) {
    let mut g = p.grad.view_mut().into_dimensionality::<Ix2>().expect("matrix param");
    g += delta;
}

/// Two stacked single-branch GCN layers with learnable Â:
/// out = Â·ReLU(Â·H⁰·W₁)·W₂. The output layer carries no activation — it
/// emits raw class scores.
#[derive(Debug, Clone)]
pub struct GcnClassifier {
    pub a_hat: Param,
    pub w1: Param,
    pub w2: Param,
    cache: Option<ClassifierCache>,
}

#[derive(Debug, Clone)]
struct ClassifierCache {
    h0: Array3<f64>,
    z1: Array3<f64>,
    h1: Array3<f64>,
}

impl GcnClassifier {
    pub fn new(f_in: usize, hidden: usize, classes: usize) -> Self {
        GcnClassifier {
            a_hat: Param::zeros(&[NUM_JOINTS, NUM_JOINTS]),
            w1: Param::zeros(&[f_in, hidden]),
            w2: Param::zeros(&[hidden, classes]),
            cache: None,
        }
    }

    pub fn init(&mut self, rng: &mut impl Rng) {
        self.a_hat.value = init::adjacency(rng, NUM_JOINTS).into_dyn();
        let (f_in, hidden) = (self.w1.value.shape()[0], self.w1.value.shape()[1]);
        let classes = self.w2.value.shape()[1];
        self.w1.value = init::xavier_uniform(rng, f_in, hidden, init::GRAPH_GAIN).into_dyn();
        self.w2.value = init::xavier_uniform(rng, hidden, classes, init::GRAPH_GAIN).into_dyn();
    }

    pub fn classes(&self) -> usize {
        self.w2.value.shape()[1]
    }

    /// Features (B, 21, F_in) → node-layout logits (B, 21, C).
    pub fn forward(&mut self, h0: &Array3<f64>, train: bool) -> Array3<f64> {
        let (batch, joints, _) = h0.dim();
        assert_eq!(joints, NUM_JOINTS);
        let a = view2(&self.a_hat);
        let w1 = view2(&self.w1);
        let w2 = view2(&self.w2);
        let mut z1 = Array3::zeros((batch, NUM_JOINTS, w1.dim().1));
        let mut logits = Array3::zeros((batch, NUM_JOINTS, w2.dim().1));
        for b in 0..batch {
            let h0_b = h0.index_axis(Axis(0), b);
            let z1_b = a.dot(&h0_b).dot(&w1);
            let h1_b = z1_b.mapv(|v| v.max(0.0));
            logits
                .index_axis_mut(Axis(0), b)
                .assign(&a.dot(&h1_b).dot(&w2));
            z1.index_axis_mut(Axis(0), b).assign(&z1_b);
        }
        if train {
            let h1 = z1.mapv(|v| v.max(0.0));
            self.cache = Some(ClassifierCache {
                h0: h0.clone(),
                z1,
                h1,
            });
        }
        logits
    }

    /// Backward from node-layout logit gradients; returns ∂L/∂H⁰.
    pub fn backward(&mut self, dlogits: &Array3<f64>) -> Array3<f64> {
        let cache = self
            .cache
            .take()
            .expect("GcnClassifier::backward requires a training-mode forward first");
        let (batch, _, _) = dlogits.dim();
        let a = view2(&self.a_hat).to_owned();
        let w1 = view2(&self.w1).to_owned();
        let w2 = view2(&self.w2).to_owned();
        let mut da = Array2::zeros((NUM_JOINTS, NUM_JOINTS));
        let mut dw1 = Array2::zeros(w1.raw_dim());
        let mut dw2 = Array2::zeros(w2.raw_dim());
        let mut dh0 = Array3::zeros(cache.h0.raw_dim());
        for b in 0..batch {
            let dl_b = dlogits.index_axis(Axis(0), b);
            let h0_b = cache.h0.index_axis(Axis(0), b);
            let z1_b = cache.z1.index_axis(Axis(0), b);
            let h1_b = cache.h1.index_axis(Axis(0), b);

            // logits = Â·H¹·W₂
            da = da + dl_b.dot(&h1_b.dot(&w2).t());
            dw2 = dw2 + a.dot(&h1_b).t().dot(&dl_b);
            let dh1 = a.t().dot(&dl_b).dot(&w2.t());

            // H¹ = ReLU(Z¹), Z¹ = Â·H⁰·W₁
            let mut dz1 = dh1;
            ndarray::Zip::from(&mut dz1).and(&z1_b).for_each(|g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
            da = da + dz1.dot(&h0_b.dot(&w1).t());
            dw1 = dw1 + a.dot(&h0_b).t().dot(&dz1);
            dh0.index_axis_mut(Axis(0), b)
                .assign(&a.t().dot(&dz1).dot(&w1.t()));
        }
        grad2_add(&mut self.a_hat, &da);
        grad2_add(&mut self.w1, &dw1);
        grad2_add(&mut self.w2, &dw2);
        dh0
    }
}

impl Params for GcnClassifier {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "a_hat"), &self.a_hat);
        f(&join(prefix, "w1"), &self.w1);
        f(&join(prefix, "w2"), &self.w2);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "a_hat"), &mut self.a_hat);
        f(&join(prefix, "w1"), &mut self.w1);
        f(&join(prefix, "w2"), &mut self.w2);
    }
}

/// One layer's weights: the relation branch is absent in single-branch
/// (global-constraints-only) stacks.
#[derive(Debug, Clone)]
pub struct DualBranchLayer {
    pub w_a: Param,
    pub w_r: Option<Param>,
}

impl DualBranchLayer {
    fn new(f_in: usize, f_out: usize, dual: bool) -> Self {
        DualBranchLayer {
            w_a: Param::zeros(&[f_in, f_out]),
            w_r: dual.then(|| Param::zeros(&[f_in, f_out])),
        }
    }
}

/// A stack of hidden dual-branch layers plus a sum-form output layer.
#[derive(Debug, Clone)]
pub struct DualBranchStack {
    pub a_hat: Param,
    pub hidden: Vec<DualBranchLayer>,
    pub output: DualBranchLayer,
    track_relation_grad: bool,
    cache: Option<StackCache>,
}

#[derive(Debug, Clone)]
struct StackCache {
    /// Input to each hidden layer, then the input to the output layer.
    inputs: Vec<Array3<f64>>,
    /// Pre-activation of each hidden layer.
    preacts: Vec<Array3<f64>>,
    relations: Option<Vec<Array2<f64>>>,
}

impl DualBranchStack {
    /// `hidden_widths` are per-branch F_out values; with `dual` set each
    /// hidden layer's true output width is twice its entry.
    pub fn new(
        f_in: usize,
        hidden_widths: &[usize],
        out_dim: usize,
        dual: bool,
        track_relation_grad: bool,
    ) -> Self {
        let mut width = f_in;
        let mut hidden = Vec::new();
        for &h in hidden_widths {
            hidden.push(DualBranchLayer::new(width, h, dual));
            width = if dual { 2 * h } else { h };
        }
        DualBranchStack {
            a_hat: Param::zeros(&[NUM_JOINTS, NUM_JOINTS]),
            hidden,
            output: DualBranchLayer::new(width, out_dim, dual),
            track_relation_grad,
            cache: None,
        }
    }

    pub fn is_dual(&self) -> bool {
        self.output.w_r.is_some()
    }

    pub fn out_dim(&self) -> usize {
        self.output.w_a.value.shape()[1]
    }

    pub fn init(&mut self, rng: &mut impl Rng) {
        self.a_hat.value = init::adjacency(rng, NUM_JOINTS).into_dyn();
        let mut init_layer = |layer: &mut DualBranchLayer| {
            let (f_in, f_out) = (layer.w_a.value.shape()[0], layer.w_a.value.shape()[1]);
            layer.w_a.value = init::xavier_uniform(rng, f_in, f_out, init::GRAPH_GAIN).into_dyn();
            if let Some(w_r) = &mut layer.w_r {
                w_r.value = init::xavier_uniform(rng, f_in, f_out, init::GRAPH_GAIN).into_dyn();
            }
        };
        for layer in &mut self.hidden {
            init_layer(layer);
        }
        init_layer(&mut self.output);
    }

    /// Zeroes the output layer so the stack emits exactly 0 — the identity
    /// start for residual refinement heads.
    pub fn zero_output_layer(&mut self) {
        self.output.w_a.value.fill(0.0);
        if let Some(w_r) = &mut self.output.w_r {
            w_r.value.fill(0.0);
        }
    }

    /// H⁰ (B, 21, F_in) → (B, 21, out_dim). Dual stacks require one relation
    /// matrix per sample; single-branch stacks require none.
    pub fn forward(
        &mut self,
        h0: &Array3<f64>,
        relations: Option<&[Array2<f64>]>,
        train: bool,
    ) -> Array3<f64> {
        let (batch, joints, _) = h0.dim();
        assert_eq!(joints, NUM_JOINTS);
        match (self.is_dual(), relations) {
            (true, Some(r)) => assert_eq!(r.len(), batch, "one relation matrix per sample"),
            (true, None) => panic!("dual-branch stack requires relation matrices"),
            (false, Some(_)) => panic!("single-branch stack takes no relation matrices"),
            (false, None) => {}
        }
        let a = view2(&self.a_hat).to_owned();
        let mut inputs = Vec::new();
        let mut preacts = Vec::new();
        let mut h = h0.clone();
        for layer in &self.hidden {
            let w_a = view2(&layer.w_a);
            let f_out = w_a.dim().1;
            let width = if self.is_dual() { 2 * f_out } else { f_out };
            let mut z = Array3::zeros((batch, NUM_JOINTS, width));
            for b in 0..batch {
                let h_b = h.index_axis(Axis(0), b);
                let left = a.dot(&h_b).dot(&w_a);
                let mut z_b = z.index_axis_mut(Axis(0), b);
                z_b.slice_mut(ndarray::s![.., ..f_out]).assign(&left);
                if let Some(w_r) = &layer.w_r {
                    let right = relations.unwrap()[b].dot(&h_b).dot(&view2(w_r));
                    z_b.slice_mut(ndarray::s![.., f_out..]).assign(&right);
                }
            }
            let h_next = z.mapv(|v| v.max(0.0));
            if train {
                inputs.push(h);
                preacts.push(z);
            }
            h = h_next;
        }
        let w_a = view2(&self.output.w_a);
        let mut y = Array3::zeros((batch, NUM_JOINTS, w_a.dim().1));
        for b in 0..batch {
            let h_b = h.index_axis(Axis(0), b);
            let mut y_b = a.dot(&h_b).dot(&w_a);
            if let Some(w_r) = &self.output.w_r {
                y_b = y_b + relations.unwrap()[b].dot(&h_b).dot(&view2(w_r));
            }
            y.index_axis_mut(Axis(0), b).assign(&y_b);
        }
        if train {
            inputs.push(h);
            self.cache = Some(StackCache {
                inputs,
                preacts,
                relations: relations.map(|r| r.to_vec()),
            });
        }
        y
    }

    /// Backward from output gradients. Returns ∂L/∂H⁰ and, when
    /// `track_relation_grad` is set, per-sample ∂L/∂R accumulated across
    /// every layer that consumed R.
    pub fn backward(&mut self, dy: &Array3<f64>) -> (Array3<f64>, Option<Vec<Array2<f64>>>) {
        let cache = self
            .cache
            .take()
            .expect("DualBranchStack::backward requires a training-mode forward first");
        let batch = dy.dim().0;
        let a = view2(&self.a_hat).to_owned();
        let mut da = Array2::zeros((NUM_JOINTS, NUM_JOINTS));
        let mut dr = self
            .track_relation_grad
            .then(|| vec![Array2::<f64>::zeros((NUM_JOINTS, NUM_JOINTS)); batch]);

        // Output layer (sum form, no activation).
        let h_last = &cache.inputs[cache.inputs.len() - 1];
        let mut dh = Array3::zeros(h_last.raw_dim());
        {
            let w_a = view2(&self.output.w_a).to_owned();
            let mut dw_a = Array2::zeros(w_a.raw_dim());
            let w_r = self.output.w_r.as_ref().map(|p| view2(p).to_owned());
            let mut dw_r = w_r.as_ref().map(|w| Array2::zeros(w.raw_dim()));
            for b in 0..batch {
                let dy_b = dy.index_axis(Axis(0), b);
                let h_b = h_last.index_axis(Axis(0), b);
                da = da + dy_b.dot(&h_b.dot(&w_a).t());
                dw_a = dw_a + a.dot(&h_b).t().dot(&dy_b);
                let mut dh_b = a.t().dot(&dy_b).dot(&w_a.t());
                if let (Some(w_r), Some(dw_r)) = (&w_r, &mut dw_r) {
                    let r_b = &cache.relations.as_ref().unwrap()[b];
                    *dw_r = &*dw_r + &r_b.dot(&h_b).t().dot(&dy_b);
                    dh_b = dh_b + r_b.t().dot(&dy_b).dot(&w_r.t());
                    if let Some(dr) = &mut dr {
                        dr[b] = &dr[b] + &dy_b.dot(&h_b.dot(w_r).t());
                    }
                }
                dh.index_axis_mut(Axis(0), b).assign(&dh_b);
            }
            grad2_add(&mut self.output.w_a, &dw_a);
            if let (Some(p), Some(dw_r)) = (&mut self.output.w_r, dw_r) {
                grad2_add(p, &dw_r);
            }
        }

        // Hidden layers, last to first.
        for (idx, layer) in self.hidden.iter_mut().enumerate().rev() {
            let z = &cache.preacts[idx];
            let h_in = &cache.inputs[idx];
            let w_a = view2(&layer.w_a).to_owned();
            let f_out = w_a.dim().1;
            let mut dw_a = Array2::zeros(w_a.raw_dim());
            let w_r = layer.w_r.as_ref().map(|p| view2(p).to_owned());
            let mut dw_r = w_r.as_ref().map(|w| Array2::zeros(w.raw_dim()));
            let mut dh_prev = Array3::zeros(h_in.raw_dim());
            for b in 0..batch {
                let mut dz_b = dh.index_axis(Axis(0), b).to_owned();
                let z_b = z.index_axis(Axis(0), b);
                ndarray::Zip::from(&mut dz_b).and(&z_b).for_each(|g, &zv| {
                    if zv <= 0.0 {
                        *g = 0.0;
                    }
                });
                let h_b = h_in.index_axis(Axis(0), b);
                let dz_a = dz_b.slice(ndarray::s![.., ..f_out]);
                da = da + dz_a.dot(&h_b.dot(&w_a).t());
                dw_a = dw_a + a.dot(&h_b).t().dot(&dz_a);
                let mut dh_b = a.t().dot(&dz_a).dot(&w_a.t());
                if let (Some(w_r), Some(dw_r)) = (&w_r, &mut dw_r) {
                    let dz_r = dz_b.slice(ndarray::s![.., f_out..]);
                    let r_b = &cache.relations.as_ref().unwrap()[b];
                    *dw_r = &*dw_r + &r_b.dot(&h_b).t().dot(&dz_r);
                    dh_b = dh_b + r_b.t().dot(&dz_r).dot(&w_r.t());
                    if let Some(dr) = &mut dr {
                        dr[b] = &dr[b] + &dz_r.dot(&h_b.dot(w_r).t());
                    }
                }
                dh_prev.index_axis_mut(Axis(0), b).assign(&dh_b);
            }
            grad2_add(&mut layer.w_a, &dw_a);
            if let (Some(p), Some(dw_r)) = (&mut layer.w_r, dw_r) {
                grad2_add(p, &dw_r);
            }
            dh = dh_prev;
        }
        grad2_add(&mut self.a_hat, &da);
        (dh, dr)
    }
}

impl Params for DualBranchStack {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "a_hat"), &self.a_hat);
        for (i, layer) in self.hidden.iter().enumerate() {
            f(&join(prefix, &format!("hidden.{i}.w_a")), &layer.w_a);
            if let Some(w_r) = &layer.w_r {
                f(&join(prefix, &format!("hidden.{i}.w_r")), w_r);
            }
        }
        f(&join(prefix, "out.w_a"), &self.output.w_a);
        if let Some(w_r) = &self.output.w_r {
            f(&join(prefix, "out.w_r"), w_r);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "a_hat"), &mut self.a_hat);
        for (i, layer) in self.hidden.iter_mut().enumerate() {
            f(&join(prefix, &format!("hidden.{i}.w_a")), &mut layer.w_a);
            if let Some(w_r) = &mut layer.w_r {
                f(&join(prefix, &format!("hidden.{i}.w_r")), w_r);
            }
        }
        f(&join(prefix, "out.w_a"), &mut self.output.w_a);
        if let Some(w_r) = &mut self.output.w_r {
            f(&join(prefix, "out.w_r"), w_r);
        }
    }
}
