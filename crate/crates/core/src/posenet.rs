//! Assembly of the full two-stage network: backbone features feed 2D/3D
//! joint classifiers and dual-branch coordinate regressors (coarse stage),
//! and a residual refinement head re-estimates the 3D pose from the coarse
//! coordinates alone (refinement stage).
//!
//! Coarse data flow for the full variant:
//!
//! ```text
//! image ─ backbone ─ F (B,21,L) ─┬─ cls2d ─ logits2d ─ softmax ─ probs2d
//!                                │            └─ relations ─ R2d
//!                                ├─ [F ‖ probs2d] ─ reg2d(R2d) ─ pose2d
//!                                ├─ cls3d ─ logits3d ─ softmax ─ probs3d
//!                                │            └─ relations ─ R3d
//!                                └─ [pose2d ‖ F ‖ probs2d ‖ probs3d]
//!                                             ─ reg3d(R3d) ─ pose3d
//! ```
//!
//! Softmaxed probabilities concatenated into regressor inputs are live
//! gradient paths back into the classifiers; the relation matrices are
//! gradient constants. With classification off (Baseline A) the classifiers
//! disappear, regressor inputs shrink to the feature (and pose) columns,
//! and the stacks run single-branch.
//!
//! The refinement head adds a learned residual to the coarse pose. Its
//! relation matrix comes from adaptive nearest neighbours over the coarse
//! pose (full variant), fixed k-nearest neighbours (Baseline D), or is
//! absent entirely for the two-dense-layer head (Baseline C). The ANN
//! threshold θ trains through a straight-through estimator: the forward
//! pass thresholds hard, while ∂R/∂θ is taken from the sigmoid relaxation
//! σ((θ − D)/τ).

use ndarray::{concatenate, Array2, Array3, Array4, Axis};
use rand::Rng;

use crate::backbone::{feature_len, Backbone, BackboneConfig};
use crate::error::{Error, Result};
use crate::losses::{
    classification_loss_backward, coarse_combination, regression_loss_backward,
    softmax_last_axis, softmax_last_axis_backward, swap_class_and_node_axes, CoarseLosses,
    LossWeights,
};
use crate::nn::graph_layers::{DualBranchStack, GcnClassifier};
use crate::nn::linear::Linear;
use crate::nn::param::{join, Param, Params};
use crate::quantizer::{JointClassLabels, QuantizerConfig};
use crate::relations::{
    ann_adjacency, ann_theta_grad, knn_adjacency, relations_function, AnnThreshold,
    RelationMatrix, THETA_INIT, THETA_RELAX_TAU,
};
use crate::skeleton::NUM_JOINTS;

/// Refinement-head flavour. Exactly one is active per model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refinement {
    /// Coarse predictions are final (Baseline B).
    None,
    /// Two dense layers over the flattened pose (Baseline C).
    FullyConnected,
    /// Dual-branch GCN with fixed k-nearest-neighbour relations (Baseline D).
    Knn,
    /// Dual-branch GCN with adaptive nearest-neighbour relations (full model).
    Ann,
}

/// Ablation switchboard: classification on/off × refinement flavour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelVariant {
    pub use_classification: bool,
    pub refinement: Refinement,
}

impl ModelVariant {
    pub fn full() -> Self {
        ModelVariant {
            use_classification: true,
            refinement: Refinement::Ann,
        }
    }

    /// Full model without the classification branch.
    pub fn baseline_a() -> Self {
        ModelVariant {
            use_classification: false,
            refinement: Refinement::Ann,
        }
    }

    /// Coarse stage only.
    pub fn baseline_b() -> Self {
        ModelVariant {
            use_classification: true,
            refinement: Refinement::None,
        }
    }

    /// Fully-connected refinement.
    pub fn baseline_c() -> Self {
        ModelVariant {
            use_classification: true,
            refinement: Refinement::FullyConnected,
        }
    }

    /// Fixed-k nearest-neighbour refinement.
    pub fn baseline_d() -> Self {
        ModelVariant {
            use_classification: true,
            refinement: Refinement::Knn,
        }
    }

    pub fn name(&self) -> &'static str {
        match (self.use_classification, self.refinement) {
            (true, Refinement::Ann) => "full",
            (false, Refinement::Ann) => "baseline-a",
            (true, Refinement::None) => "baseline-b",
            (true, Refinement::FullyConnected) => "baseline-c",
            (true, Refinement::Knn) => "baseline-d",
            _ => "custom",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "full" => Some(Self::full()),
            "baseline-a" | "a" => Some(Self::baseline_a()),
            "baseline-b" | "b" => Some(Self::baseline_b()),
            "baseline-c" | "c" => Some(Self::baseline_c()),
            "baseline-d" | "d" => Some(Self::baseline_d()),
            _ => None,
        }
    }

    /// The five configurations of the ablation study.
    pub fn ablation_set() -> [ModelVariant; 5] {
        [
            Self::baseline_a(),
            Self::baseline_b(),
            Self::baseline_c(),
            Self::baseline_d(),
            Self::full(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Square crop side; must be a multiple of 32.
    pub image_size: usize,
    pub quantizer: QuantizerConfig,
    pub backbone: BackboneConfig,
    pub variant: ModelVariant,
    /// Hidden width of the two classifier GCN layers.
    pub classifier_hidden: usize,
    /// Per-branch hidden width of regressor layers (concat doubles it).
    pub regressor_hidden: usize,
    /// Number of hidden regressor layers before the output layer.
    pub regressor_hidden_layers: usize,
    /// Per-branch hidden width of the GCN refinement stack.
    pub refine_hidden: usize,
    pub refine_hidden_layers: usize,
    /// Neighbour count for the fixed-k refinement variant.
    pub knn_k: usize,
    /// Temperature of the sigmoid relaxation behind ∂R/∂θ.
    pub theta_tau: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 256,
            quantizer: QuantizerConfig::default(),
            backbone: BackboneConfig::default(),
            variant: ModelVariant::full(),
            classifier_hidden: 64,
            regressor_hidden: 64,
            regressor_hidden_layers: 2,
            refine_hidden: 64,
            refine_hidden_layers: 2,
            knn_k: 5,
            theta_tau: THETA_RELAX_TAU,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.quantizer.validate()?;
        self.backbone.validate()?;
        feature_len(self.image_size)?;
        if self.quantizer.image_size != self.image_size {
            return Err(Error::InvalidConfig(format!(
                "quantizer operates on {}px crops but the model takes {}px",
                self.quantizer.image_size, self.image_size
            )));
        }
        if self.backbone.out_channels != NUM_JOINTS {
            return Err(Error::InvalidConfig(format!(
                "backbone must emit {NUM_JOINTS} channels, got {}",
                self.backbone.out_channels
            )));
        }
        if self.classifier_hidden == 0
            || self.regressor_hidden == 0
            || self.regressor_hidden_layers == 0
            || self.refine_hidden == 0
            || self.refine_hidden_layers == 0
        {
            return Err(Error::InvalidConfig("layer widths must be nonzero".into()));
        }
        if self.knn_k == 0 || self.knn_k > NUM_JOINTS {
            return Err(Error::InvalidConfig(format!("knn_k out of range: {}", self.knn_k)));
        }
        if !(self.theta_tau.is_finite() && self.theta_tau > 0.0) {
            return Err(Error::InvalidConfig(format!("theta_tau must be positive, got {}", self.theta_tau)));
        }
        Ok(())
    }

    /// Per-joint feature length L = (image_size/32)².
    pub fn feature_len(&self) -> usize {
        feature_len(self.image_size).expect("validated image size")
    }

    /// 2D regressor input width: L (+ N with classification).
    pub fn reg_2d_input_width(&self) -> usize {
        let mut w = self.feature_len();
        if self.variant.use_classification {
            w += self.quantizer.num_classes_2d();
        }
        w
    }

    /// 3D regressor input width: 2 + L (+ N + K with classification).
    pub fn reg_3d_input_width(&self) -> usize {
        let mut w = 2 + self.feature_len();
        if self.variant.use_classification {
            w += self.quantizer.num_classes_2d() + self.quantizer.num_classes_3d();
        }
        w
    }
}

/// Baseline C head: flatten 21×3 → dense → ReLU → dense → 21×3 residual.
#[derive(Debug, Clone)]
pub struct FcRefiner {
    pub lin1: Linear,
    pub lin2: Linear,
    cache: Option<Array2<f64>>,
}

const FC_REFINER_HIDDEN: usize = 256;

impl FcRefiner {
    fn new() -> Self {
        FcRefiner {
            lin1: Linear::new(NUM_JOINTS * 3, FC_REFINER_HIDDEN, true),
            lin2: Linear::new(FC_REFINER_HIDDEN, NUM_JOINTS * 3, true),
            cache: None,
        }
    }

    fn init(&mut self, rng: &mut impl Rng) {
        let w = crate::nn::init::xavier_uniform(
            rng,
            NUM_JOINTS * 3,
            FC_REFINER_HIDDEN,
            crate::nn::init::GRAPH_GAIN,
        );
        self.lin1.weight.value = w.into_dyn();
        // lin2 stays zero: the head starts as the identity residual.
    }

    fn forward(&mut self, coarse: &Array3<f64>, train: bool) -> Array3<f64> {
        let batch = coarse.dim().0;
        let x = coarse
            .clone()
            .into_shape_with_order((batch, NUM_JOINTS * 3))
            .expect("flatten pose");
        let z1 = self.lin1.forward(&x, train);
        let h1 = z1.mapv(|v| v.max(0.0));
        let y = self.lin2.forward(&h1, train);
        if train {
            self.cache = Some(z1);
        }
        y.into_shape_with_order((batch, NUM_JOINTS, 3))
            .expect("unflatten pose")
    }

    fn backward(&mut self, d_delta: &Array3<f64>) {
        let z1 = self
            .cache
            .take()
            .expect("FcRefiner::backward requires a training-mode forward first");
        let batch = d_delta.dim().0;
        let dy = d_delta
            .clone()
            .into_shape_with_order((batch, NUM_JOINTS * 3))
            .expect("flatten gradient");
        let mut dz1 = self.lin2.backward(&dy);
        ndarray::Zip::from(&mut dz1).and(&z1).for_each(|g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
        let _ = self.lin1.backward(&dz1);
    }
}

impl Params for FcRefiner {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.lin1.visit(&join(prefix, "lin1"), f);
        self.lin2.visit(&join(prefix, "lin2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.lin1.visit_mut(&join(prefix, "lin1"), f);
        self.lin2.visit_mut(&join(prefix, "lin2"), f);
    }
}

/// How the GCN refinement head derives its per-sample relation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum RefineRelation {
    Ann,
    Knn(usize),
}

#[derive(Debug, Clone)]
pub(crate) enum RefineHead {
    Disabled,
    Gcn {
        stack: DualBranchStack,
        /// Learnable threshold (1-element tensor); absent for the knn head.
        theta: Option<Param>,
        relation: RefineRelation,
    },
    Fc(FcRefiner),
}

impl Params for RefineHead {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        match self {
            RefineHead::Disabled => {}
            RefineHead::Gcn { stack, theta, .. } => {
                stack.visit(prefix, f);
                if let Some(theta) = theta {
                    f(&join(prefix, "theta"), theta);
                }
            }
            RefineHead::Fc(fc) => fc.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        match self {
            RefineHead::Disabled => {}
            RefineHead::Gcn { stack, theta, .. } => {
                stack.visit_mut(prefix, f);
                if let Some(theta) = theta {
                    f(&join(prefix, "theta"), theta);
                }
            }
            RefineHead::Fc(fc) => fc.visit_mut(prefix, f),
        }
    }
}

/// Everything one forward pass produces. Classification and refinement
/// fields are absent exactly when the variant disables them.
#[derive(Debug, Clone)]
pub struct ForwardOutputs {
    /// Class-layout 2D logits (B, N, 21).
    pub logits_2d: Option<Array3<f64>>,
    /// Class-layout 3D logits (B, K, 21).
    pub logits_3d: Option<Array3<f64>>,
    /// Normalized crop coordinates (B, 21, 2).
    pub pose_2d: Array3<f64>,
    /// Root-relative normalized coordinates (B, 21, 3).
    pub pose_3d_coarse: Array3<f64>,
    pub pose_3d_refined: Option<Array3<f64>>,
    pub r_2d: Option<Vec<RelationMatrix>>,
    pub r_3d: Option<Vec<RelationMatrix>>,
    pub r_ann: Option<Vec<RelationMatrix>>,
}

#[derive(Debug, Clone)]
struct CoarseCache {
    probs_2d: Option<Array3<f64>>,
    probs_3d: Option<Array3<f64>>,
}

pub struct PoseNet {
    config: ModelConfig,
    pub backbone: Backbone,
    pub cls_2d: Option<GcnClassifier>,
    pub cls_3d: Option<GcnClassifier>,
    pub reg_2d: DualBranchStack,
    pub reg_3d: DualBranchStack,
    pub(crate) refine: RefineHead,
    coarse_cache: Option<CoarseCache>,
    refine_cache: Option<Array3<f64>>,
}

impl PoseNet {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let dual = config.variant.use_classification;
        let (cls_2d, cls_3d) = if dual {
            let feat = config.feature_len();
            (
                Some(GcnClassifier::new(
                    feat,
                    config.classifier_hidden,
                    config.quantizer.num_classes_2d(),
                )),
                Some(GcnClassifier::new(
                    feat,
                    config.classifier_hidden,
                    config.quantizer.num_classes_3d(),
                )),
            )
        } else {
            (None, None)
        };
        let hidden = vec![config.regressor_hidden; config.regressor_hidden_layers];
        let reg_2d = DualBranchStack::new(config.reg_2d_input_width(), &hidden, 2, dual, false);
        let reg_3d = DualBranchStack::new(config.reg_3d_input_width(), &hidden, 3, dual, false);
        let refine = match config.variant.refinement {
            Refinement::None => RefineHead::Disabled,
            Refinement::FullyConnected => RefineHead::Fc(FcRefiner::new()),
            Refinement::Knn | Refinement::Ann => {
                let ann = config.variant.refinement == Refinement::Ann;
                let refine_hidden = vec![config.refine_hidden; config.refine_hidden_layers];
                RefineHead::Gcn {
                    stack: DualBranchStack::new(3, &refine_hidden, 3, true, ann),
                    theta: ann.then(|| {
                        let mut p = Param::zeros(&[1]);
                        p.value[[0]] = THETA_INIT;
                        p
                    }),
                    relation: if ann {
                        RefineRelation::Ann
                    } else {
                        RefineRelation::Knn(config.knn_k)
                    },
                }
            }
        };
        Ok(PoseNet {
            backbone: Backbone::new(config.backbone.clone())?,
            cls_2d,
            cls_3d,
            reg_2d,
            reg_3d,
            refine,
            config,
            coarse_cache: None,
            refine_cache: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> ModelVariant {
        self.config.variant
    }

    pub fn theta(&self) -> Option<f64> {
        match &self.refine {
            RefineHead::Gcn {
                theta: Some(theta), ..
            } => Some(theta.value[[0]]),
            _ => None,
        }
    }

    /// Applies the initialization scheme to every submodule. Refinement
    /// emission layers start at zero so refinement begins as the identity.
    ///
    /// The coarse regressor output layers also start at zero. Before any
    /// training the classifiers argmax every joint to one class, which makes
    /// the relation branch an unnormalized all-ones mask; with a random
    /// output layer the 21× fan-in per relation hop compounds through the
    /// stack into initial predictions (and losses) many orders of magnitude
    /// out of range. Zeroing only the final layer keeps hidden weights at
    /// their regular scale while the first predictions start at the origin.
    pub fn init(&mut self, rng: &mut impl Rng) {
        self.backbone.init(rng);
        if let Some(cls) = &mut self.cls_2d {
            cls.init(rng);
        }
        if let Some(cls) = &mut self.cls_3d {
            cls.init(rng);
        }
        self.reg_2d.init(rng);
        self.reg_2d.zero_output_layer();
        self.reg_3d.init(rng);
        self.reg_3d.zero_output_layer();
        match &mut self.refine {
            RefineHead::Disabled => {}
            RefineHead::Gcn { stack, .. } => {
                stack.init(rng);
                stack.zero_output_layer();
            }
            RefineHead::Fc(fc) => fc.init(rng),
        }
    }

    /// Visits only coarse-stage parameters (backbone, classifiers,
    /// regressors) — the set the refinement stage freezes.
    pub fn visit_coarse(&self, f: &mut dyn FnMut(&str, &Param)) {
        self.backbone.visit("backbone", f);
        if let Some(cls) = &self.cls_2d {
            cls.visit("cls2d", f);
        }
        if let Some(cls) = &self.cls_3d {
            cls.visit("cls3d", f);
        }
        self.reg_2d.visit("reg2d", f);
        self.reg_3d.visit("reg3d", f);
    }

    pub fn visit_coarse_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.backbone.visit_mut("backbone", f);
        if let Some(cls) = &mut self.cls_2d {
            cls.visit_mut("cls2d", f);
        }
        if let Some(cls) = &mut self.cls_3d {
            cls.visit_mut("cls3d", f);
        }
        self.reg_2d.visit_mut("reg2d", f);
        self.reg_3d.visit_mut("reg3d", f);
    }

    fn check_images(&self, images: &Array4<f64>) -> Result<()> {
        let (_, c, h, w) = images.dim();
        if c != 3 || h != self.config.image_size || w != self.config.image_size {
            return Err(Error::ShapeMismatch(format!(
                "expected (B, 3, {0}, {0}) images, got {1:?}",
                self.config.image_size,
                images.dim()
            )));
        }
        Ok(())
    }

    /// Coarse pass: features → (classifiers) → 2D pose → 3D pose.
    pub fn coarse_forward(&mut self, images: &Array4<f64>, train: bool) -> Result<ForwardOutputs> {
        self.check_images(images)?;
        let feat = self.backbone.forward(images, train);
        let (outputs, cache) = self.coarse_from_features(feat, train)?;
        if train {
            self.coarse_cache = Some(cache);
        }
        Ok(outputs)
    }

    fn coarse_from_features(
        &mut self,
        feat: Array3<f64>,
        train: bool,
    ) -> Result<(ForwardOutputs, CoarseCache)> {
        if self.config.variant.use_classification {
            let cls_2d = self.cls_2d.as_mut().expect("classification variant");
            let logits_2d_nodes = cls_2d.forward(&feat, train);
            let logits_2d = swap_class_and_node_axes(&logits_2d_nodes);
            let probs_2d = softmax_last_axis(&logits_2d_nodes);
            let r_2d = relations_function(logits_2d.view())?;
            let rel_2d: Vec<Array2<f64>> =
                r_2d.iter().map(|m| m.as_array().clone()).collect();

            let h0_2d = concatenate(Axis(2), &[feat.view(), probs_2d.view()])
                .expect("concat 2D regressor input");
            let pose_2d = self.reg_2d.forward(&h0_2d, Some(&rel_2d), train);

            let cls_3d = self.cls_3d.as_mut().expect("classification variant");
            let logits_3d_nodes = cls_3d.forward(&feat, train);
            let logits_3d = swap_class_and_node_axes(&logits_3d_nodes);
            let probs_3d = softmax_last_axis(&logits_3d_nodes);
            let r_3d = relations_function(logits_3d.view())?;
            let rel_3d: Vec<Array2<f64>> =
                r_3d.iter().map(|m| m.as_array().clone()).collect();

            let h0_3d = concatenate(
                Axis(2),
                &[pose_2d.view(), feat.view(), probs_2d.view(), probs_3d.view()],
            )
            .expect("concat 3D regressor input");
            let pose_3d = self.reg_3d.forward(&h0_3d, Some(&rel_3d), train);

            Ok((
                ForwardOutputs {
                    logits_2d: Some(logits_2d),
                    logits_3d: Some(logits_3d),
                    pose_2d,
                    pose_3d_coarse: pose_3d,
                    pose_3d_refined: None,
                    r_2d: Some(r_2d),
                    r_3d: Some(r_3d),
                    r_ann: None,
                },
                CoarseCache {
                    probs_2d: Some(probs_2d),
                    probs_3d: Some(probs_3d),
                },
            ))
        } else {
            let pose_2d = self.reg_2d.forward(&feat, None, train);
            let h0_3d = concatenate(Axis(2), &[pose_2d.view(), feat.view()])
                .expect("concat 3D regressor input");
            let pose_3d = self.reg_3d.forward(&h0_3d, None, train);
            Ok((
                ForwardOutputs {
                    logits_2d: None,
                    logits_3d: None,
                    pose_2d,
                    pose_3d_coarse: pose_3d,
                    pose_3d_refined: None,
                    r_2d: None,
                    r_3d: None,
                    r_ann: None,
                },
                CoarseCache {
                    probs_2d: None,
                    probs_3d: None,
                },
            ))
        }
    }

    /// Runs one coarse training step's loss and full backward pass,
    /// accumulating parameter gradients. Label slices are ignored with
    /// classification off.
    pub fn coarse_loss_backward(
        &mut self,
        images: &Array4<f64>,
        gt_2d: &Array3<f64>,
        gt_3d: &Array3<f64>,
        labels_2d: &[JointClassLabels],
        labels_3d: &[JointClassLabels],
        weights: &LossWeights,
    ) -> Result<CoarseLosses> {
        weights.validate()?;
        let outputs = self.coarse_forward(images, true)?;
        let (reg_2d, mut d_pose_2d) =
            regression_loss_backward(outputs.pose_2d.view(), gt_2d.view())?;
        let (reg_3d, mut d_pose_3d) =
            regression_loss_backward(outputs.pose_3d_coarse.view(), gt_3d.view())?;
        d_pose_2d.mapv_inplace(|v| v * weights.delta1);
        d_pose_3d.mapv_inplace(|v| v * weights.delta1);

        let (cls_2d, cls_3d, d_logits) = if self.config.variant.use_classification {
            let (c2, mut dl2) = classification_loss_backward(
                outputs.logits_2d.as_ref().unwrap().view(),
                labels_2d,
            )?;
            let (c3, mut dl3) = classification_loss_backward(
                outputs.logits_3d.as_ref().unwrap().view(),
                labels_3d,
            )?;
            dl2.mapv_inplace(|v| v * weights.delta2);
            dl3.mapv_inplace(|v| v * weights.delta2);
            (c2, c3, Some((dl2, dl3)))
        } else {
            (0.0, 0.0, None)
        };

        self.coarse_backward(d_pose_2d, d_pose_3d, d_logits)?;
        let total = coarse_combination(reg_2d, reg_3d, cls_2d, cls_3d, weights);
        if !total.is_finite() {
            return Err(Error::InvalidData(format!(
                "non-finite coarse loss: reg2d={reg_2d} reg3d={reg_3d} cls2d={cls_2d} cls3d={cls_3d}"
            )));
        }
        Ok(CoarseLosses {
            reg_2d,
            reg_3d,
            cls_2d,
            cls_3d,
            total,
        })
    }

    /// Loss evaluation with the same batch-statistics forward the training
    /// step uses, without touching gradients. Supports finite-difference
    /// probing of [`Self::coarse_loss_backward`]'s gradients.
    pub fn coarse_loss_value(
        &mut self,
        images: &Array4<f64>,
        gt_2d: &Array3<f64>,
        gt_3d: &Array3<f64>,
        labels_2d: &[JointClassLabels],
        labels_3d: &[JointClassLabels],
        weights: &LossWeights,
    ) -> Result<f64> {
        let outputs = self.coarse_forward(images, true)?;
        self.coarse_cache = None;
        let reg_2d = crate::losses::regression_loss(outputs.pose_2d.view(), gt_2d.view())?;
        let reg_3d =
            crate::losses::regression_loss(outputs.pose_3d_coarse.view(), gt_3d.view())?;
        let (cls_2d, cls_3d) = if self.config.variant.use_classification {
            (
                crate::losses::classification_loss(
                    outputs.logits_2d.as_ref().unwrap().view(),
                    labels_2d,
                )?,
                crate::losses::classification_loss(
                    outputs.logits_3d.as_ref().unwrap().view(),
                    labels_3d,
                )?,
            )
        } else {
            (0.0, 0.0)
        };
        Ok(coarse_combination(reg_2d, reg_3d, cls_2d, cls_3d, weights))
    }

    fn coarse_backward(
        &mut self,
        d_pose_2d: Array3<f64>,
        d_pose_3d: Array3<f64>,
        d_logits: Option<(Array3<f64>, Array3<f64>)>,
    ) -> Result<()> {
        let cache = self.coarse_cache.take().ok_or_else(|| {
            Error::InvalidData("coarse backward without a training-mode forward".into())
        })?;
        let feat_len = self.config.feature_len();
        let n = self.config.quantizer.num_classes_2d();

        // 3D regressor input was [pose2d ‖ F ‖ probs2d ‖ probs3d].
        let (dh0_3d, _) = self.reg_3d.backward(&d_pose_3d);
        let d_pose_2d_total =
            d_pose_2d + dh0_3d.slice(ndarray::s![.., .., 0..2]).to_owned();
        let mut d_feat = dh0_3d
            .slice(ndarray::s![.., .., 2..2 + feat_len])
            .to_owned();
        let mut d_probs_2d = self
            .config
            .variant
            .use_classification
            .then(|| {
                dh0_3d
                    .slice(ndarray::s![.., .., 2 + feat_len..2 + feat_len + n])
                    .to_owned()
            });
        let d_probs_3d = self
            .config
            .variant
            .use_classification
            .then(|| {
                dh0_3d
                    .slice(ndarray::s![.., .., 2 + feat_len + n..])
                    .to_owned()
            });

        // 2D regressor input was [F ‖ probs2d].
        let (dh0_2d, _) = self.reg_2d.backward(&d_pose_2d_total);
        d_feat = d_feat + dh0_2d.slice(ndarray::s![.., .., 0..feat_len]);
        if let Some(d_probs_2d) = &mut d_probs_2d {
            *d_probs_2d =
                &*d_probs_2d + &dh0_2d.slice(ndarray::s![.., .., feat_len..]).to_owned();
        }
        drop(d_pose_2d_total);

        if let Some((dl2_ce, dl3_ce)) = d_logits {
            let probs_2d = cache.probs_2d.as_ref().expect("classification cache");
            let probs_3d = cache.probs_3d.as_ref().expect("classification cache");
            // Probability paths re-enter the logits through the softmax;
            // the cross-entropy path arrives in class layout.
            let d_logits_2d_nodes = softmax_last_axis_backward(probs_2d, &d_probs_2d.unwrap())
                + swap_class_and_node_axes(&dl2_ce);
            let d_logits_3d_nodes = softmax_last_axis_backward(probs_3d, &d_probs_3d.unwrap())
                + swap_class_and_node_axes(&dl3_ce);
            let cls_2d = self.cls_2d.as_mut().expect("classification variant");
            d_feat = d_feat + cls_2d.backward(&d_logits_2d_nodes);
            let cls_3d = self.cls_3d.as_mut().expect("classification variant");
            d_feat = d_feat + cls_3d.backward(&d_logits_3d_nodes);
        }

        self.backbone.backward(&d_feat);
        Ok(())
    }

    /// Builds the refinement head's per-sample relation matrices from a
    /// coarse pose batch. Hard θ threshold — also used during training
    /// (straight-through estimator).
    fn refine_relations(&self, coarse: &Array3<f64>) -> Result<Option<Vec<RelationMatrix>>> {
        match &self.refine {
            RefineHead::Disabled | RefineHead::Fc(_) => Ok(None),
            RefineHead::Gcn { theta, relation, .. } => {
                let batch = coarse.dim().0;
                let mut rels = Vec::with_capacity(batch);
                for b in 0..batch {
                    let pose = coarse.index_axis(Axis(0), b);
                    rels.push(match relation {
                        RefineRelation::Ann => {
                            let theta =
                                AnnThreshold::new(theta.as_ref().expect("ann theta").value[[0]])?;
                            ann_adjacency(pose, theta)?
                        }
                        RefineRelation::Knn(k) => knn_adjacency(pose, *k)?,
                    });
                }
                Ok(Some(rels))
            }
        }
    }

    /// Refinement pass: residual head over the coarse 3D pose. Returns the
    /// refined pose and the relation matrices it used (absent for the
    /// fully-connected head).
    pub fn refine_forward(
        &mut self,
        coarse: &Array3<f64>,
        train: bool,
    ) -> Result<(Array3<f64>, Option<Vec<RelationMatrix>>)> {
        if coarse.dim().1 != NUM_JOINTS || coarse.dim().2 != 3 {
            return Err(Error::ShapeMismatch(format!(
                "coarse pose batch must be (B, {NUM_JOINTS}, 3), got {:?}",
                coarse.dim()
            )));
        }
        let rels = self.refine_relations(coarse)?;
        match &mut self.refine {
            RefineHead::Disabled => Err(Error::InvalidConfig(
                "refinement is disabled for this variant".into(),
            )),
            RefineHead::Fc(fc) => {
                let delta = fc.forward(coarse, train);
                Ok((coarse + &delta, None))
            }
            RefineHead::Gcn { stack, .. } => {
                let arrays: Vec<Array2<f64>> = rels
                    .as_ref()
                    .unwrap()
                    .iter()
                    .map(|m| m.as_array().clone())
                    .collect();
                let delta = stack.forward(coarse, Some(&arrays), train);
                if train {
                    self.refine_cache = Some(coarse.clone());
                }
                Ok((coarse + &delta, rels))
            }
        }
    }

    /// Backward through the refinement head only — coarse parameters are
    /// frozen in this stage, so no gradient flows past the head's input.
    /// The θ gradient arrives through the sigmoid relaxation of the hard
    /// threshold.
    pub fn refine_backward(&mut self, d_refined: &Array3<f64>) -> Result<()> {
        let tau = self.config.theta_tau;
        match &mut self.refine {
            RefineHead::Disabled => Err(Error::InvalidConfig(
                "refinement is disabled for this variant".into(),
            )),
            RefineHead::Fc(fc) => {
                fc.backward(d_refined);
                Ok(())
            }
            RefineHead::Gcn { stack, theta, .. } => {
                let (_, d_relations) = stack.backward(d_refined);
                if let (Some(theta), Some(d_relations)) = (theta, d_relations) {
                    let coarse = self.refine_cache.take().ok_or_else(|| {
                        Error::InvalidData(
                            "refine backward without a training-mode forward".into(),
                        )
                    })?;
                    let t = AnnThreshold::new(theta.value[[0]])?;
                    for (b, dr) in d_relations.iter().enumerate() {
                        let relax =
                            ann_theta_grad(coarse.index_axis(Axis(0), b), t, tau)?;
                        theta.grad[[0]] += (dr * &relax).sum();
                    }
                }
                Ok(())
            }
        }
    }

    /// Full inference pass: coarse, then refinement when present.
    pub fn forward(&mut self, images: &Array4<f64>, train: bool) -> Result<ForwardOutputs> {
        let mut outputs = self.coarse_forward(images, train)?;
        if !matches!(self.refine, RefineHead::Disabled) {
            let (refined, r_ann) = self.refine_forward(&outputs.pose_3d_coarse, train)?;
            outputs.pose_3d_refined = Some(refined);
            outputs.r_ann = r_ann;
        }
        Ok(outputs)
    }
}

impl Params for PoseNet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.backbone.visit(&join(prefix, "backbone"), f);
        if let Some(cls) = &self.cls_2d {
            cls.visit(&join(prefix, "cls2d"), f);
        }
        if let Some(cls) = &self.cls_3d {
            cls.visit(&join(prefix, "cls3d"), f);
        }
        self.reg_2d.visit(&join(prefix, "reg2d"), f);
        self.reg_3d.visit(&join(prefix, "reg3d"), f);
        self.refine.visit(&join(prefix, "refine"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.backbone.visit_mut(&join(prefix, "backbone"), f);
        if let Some(cls) = &mut self.cls_2d {
            cls.visit_mut(&join(prefix, "cls2d"), f);
        }
        if let Some(cls) = &mut self.cls_3d {
            cls.visit_mut(&join(prefix, "cls3d"), f);
        }
        self.reg_2d.visit_mut(&join(prefix, "reg2d"), f);
        self.reg_3d.visit_mut(&join(prefix, "reg3d"), f);
        self.refine.visit_mut(&join(prefix, "refine"), f);
    }
}
