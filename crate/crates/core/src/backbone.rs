//! Compact residual CNN that maps an RGB crop to per-joint feature vectors.
//!
//! The network is a slimmed ResNet-10: a 7×7/2 stem into a 3×3/2 max-pool,
//! four basic residual blocks (strides 1, 2, 2, 2), and a 3×3 head
//! convolution that emits one channel per joint. Channel widths start at 32
//! and double per stage, a quarter of the classic ResNet widths. The head
//! keeps its bias and carries no normalization or activation — its raw maps
//! are the joint features.
//!
//! Total downsampling is 32×, so a (B, 3, S, S) input yields a
//! (B, out_channels, S/32, S/32) map, flattened to (B, out_channels,
//! (S/32)²): each joint's feature vector is its full flattened map. At the
//! default 256×256 input that is 64 features per joint.

use ndarray::{Array3, Array4};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::batchnorm::BatchNorm2d;
use crate::nn::conv::Conv2d;
use crate::nn::init;
use crate::nn::param::{join, Param, Params};
use crate::nn::pool::MaxPool2d;
use crate::skeleton::NUM_JOINTS;

/// Total spatial reduction from input image to feature map (stem 2× ·
/// pool 2× · three strided blocks 8×).
pub const DOWNSAMPLE: usize = 32;

/// Flattened per-joint feature length for a square input: (S/32)².
pub fn feature_len(image_size: usize) -> Result<usize> {
    if image_size == 0 || image_size % DOWNSAMPLE != 0 {
        return Err(Error::InvalidConfig(format!(
            "image size {image_size} must be a positive multiple of {DOWNSAMPLE}"
        )));
    }
    Ok((image_size / DOWNSAMPLE).pow(2))
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    /// Stem output channels (default 32).
    pub stem_width: usize,
    /// Output channels of the four residual stages (default [32, 64, 128, 256]).
    pub stage_widths: [usize; 4],
    /// Head output channels — one per joint.
    pub out_channels: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            stem_width: 32,
            stage_widths: [32, 64, 128, 256],
            out_channels: NUM_JOINTS,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stem_width == 0 || self.out_channels == 0 || self.stage_widths.contains(&0) {
            return Err(Error::InvalidConfig(
                "backbone channel widths must be nonzero".into(),
            ));
        }
        Ok(())
    }
}

/// Two 3×3 convolutions with batch norm and a residual skip. When the block
/// changes width or stride the skip is a 1×1 strided projection (with its
/// own batch norm); otherwise it is the identity.
#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    proj: Option<(Conv2d, BatchNorm2d)>,
    cache: Option<BlockCache>,
}

#[derive(Debug, Clone)]
struct BlockCache {
    /// Pre-activation of the first ReLU.
    z1: Array4<f64>,
    /// Main path + skip, before the final ReLU.
    z_sum: Array4<f64>,
}

impl BasicBlock {
    fn new(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        let proj = (stride != 1 || in_channels != out_channels)
            .then(|| (Conv2d::new(in_channels, out_channels, 1, stride, 0, false), BatchNorm2d::new(out_channels)));
        BasicBlock {
            conv1: Conv2d::new(in_channels, out_channels, 3, stride, 1, false),
            bn1: BatchNorm2d::new(out_channels),
            conv2: Conv2d::new(out_channels, out_channels, 3, 1, 1, false),
            bn2: BatchNorm2d::new(out_channels),
            proj,
            cache: None,
        }
    }

    fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let z1 = self.bn1.forward(&self.conv1.forward(x, train), train);
        let h1 = z1.mapv(|v| v.max(0.0));
        let main = self.bn2.forward(&self.conv2.forward(&h1, train), train);
        let skip = match &mut self.proj {
            Some((conv, bn)) => bn.forward(&conv.forward(x, train), train),
            None => x.clone(),
        };
        let z_sum = main + skip;
        let y = z_sum.mapv(|v| v.max(0.0));
        if train {
            self.cache = Some(BlockCache { z1, z_sum });
        }
        y
    }

    fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let cache = self
            .cache
            .take()
            .expect("BasicBlock::backward requires a training-mode forward first");
        let mut dz = dy.clone();
        ndarray::Zip::from(&mut dz).and(&cache.z_sum).for_each(|g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
        let mut dz1 = self.conv2.backward(&self.bn2.backward(&dz));
        ndarray::Zip::from(&mut dz1).and(&cache.z1).for_each(|g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
        let mut dx = self.conv1.backward(&self.bn1.backward(&dz1));
        match &mut self.proj {
            Some((conv, bn)) => dx = dx + conv.backward(&bn.backward(&dz)),
            None => dx = dx + &dz,
        }
        dx
    }

    fn visit_bns(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut BatchNorm2d)) {
        f(&join(prefix, "bn1"), &mut self.bn1);
        f(&join(prefix, "bn2"), &mut self.bn2);
        if let Some((_, bn)) = &mut self.proj {
            f(&join(prefix, "proj.bn"), bn);
        }
    }
}

impl Params for BasicBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.bn2.visit(&join(prefix, "bn2"), f);
        if let Some((conv, bn)) = &self.proj {
            conv.visit(&join(prefix, "proj.conv"), f);
            bn.visit(&join(prefix, "proj.bn"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.bn1.visit_mut(&join(prefix, "bn1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.bn2.visit_mut(&join(prefix, "bn2"), f);
        if let Some((conv, bn)) = &mut self.proj {
            conv.visit_mut(&join(prefix, "proj.conv"), f);
            bn.visit_mut(&join(prefix, "proj.bn"), f);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    config: BackboneConfig,
    stem_conv: Conv2d,
    stem_bn: BatchNorm2d,
    pool: MaxPool2d,
    blocks: Vec<BasicBlock>,
    head: Conv2d,
    cache: Option<StemCache>,
}

#[derive(Debug, Clone)]
struct StemCache {
    /// Stem batch-norm output, before the stem ReLU.
    z_stem: Array4<f64>,
    feature_side: usize,
}

impl Backbone {
    pub fn new(config: BackboneConfig) -> Result<Self> {
        config.validate()?;
        let w = &config.stage_widths;
        let blocks = vec![
            BasicBlock::new(config.stem_width, w[0], 1),
            BasicBlock::new(w[0], w[1], 2),
            BasicBlock::new(w[1], w[2], 2),
            BasicBlock::new(w[2], w[3], 2),
        ];
        Ok(Backbone {
            stem_conv: Conv2d::new(3, config.stem_width, 7, 2, 3, false),
            stem_bn: BatchNorm2d::new(config.stem_width),
            pool: MaxPool2d::new(3, 2, 1),
            blocks,
            head: Conv2d::new(config.stage_widths[3], config.out_channels, 3, 1, 1, true),
            config,
            cache: None,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    /// Draws every convolution weight from N(0, 0.02); head bias stays 0,
    /// batch norms keep γ=1, β=0.
    pub fn init(&mut self, rng: &mut impl Rng) {
        self.visit_mut("", &mut |name, p| {
            if name.ends_with("weight") {
                let shape = p.value.shape().to_vec();
                p.value = init::normal(rng, &shape, init::BACKBONE_STD);
            }
        });
    }

    /// (B, 3, S, S) image batch → (B, out_channels, (S/32)²) features.
    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array3<f64> {
        let (batch, channels, h, w) = x.dim();
        assert_eq!(channels, 3, "backbone expects RGB input");
        assert_eq!(h, w, "backbone expects square input");
        let len = feature_len(h).expect("input side must be a multiple of 32");
        let z_stem = self.stem_bn.forward(&self.stem_conv.forward(x, train), train);
        let mut t = self.pool.forward(&z_stem.mapv(|v| v.max(0.0)), train);
        for block in &mut self.blocks {
            t = block.forward(&t, train);
        }
        let maps = self.head.forward(&t, train);
        let side = maps.dim().2;
        debug_assert_eq!(side * side, len);
        if train {
            self.cache = Some(StemCache {
                z_stem,
                feature_side: side,
            });
        }
        maps.into_shape_with_order((batch, self.config.out_channels, len))
            .expect("flatten feature maps")
    }

    /// Backward from (B, out_channels, L) feature gradients to the input
    /// image gradient.
    pub fn backward(&mut self, dfeat: &Array3<f64>) -> Array4<f64> {
        let cache = self
            .cache
            .take()
            .expect("Backbone::backward requires a training-mode forward first");
        let (batch, channels, _) = dfeat.dim();
        let side = cache.feature_side;
        let dmaps = dfeat
            .clone()
            .into_shape_with_order((batch, channels, side, side))
            .expect("unflatten feature gradients");
        let mut dt = self.head.backward(&dmaps);
        for block in self.blocks.iter_mut().rev() {
            dt = block.backward(&dt);
        }
        let mut dz = self.pool.backward(&dt);
        ndarray::Zip::from(&mut dz).and(&cache.z_stem).for_each(|g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
        self.stem_conv.backward(&self.stem_bn.backward(&dz))
    }

    /// Visits every batch-norm layer with its dotted path — the checkpoint
    /// writer reads the running buffers through this, the loader writes them.
    pub fn visit_batchnorms(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut BatchNorm2d)) {
        f(&join(prefix, "stem.bn"), &mut self.stem_bn);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.visit_bns(&join(prefix, &format!("block{i}")), f);
        }
    }
}

impl Params for Backbone {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.stem_conv.visit(&join(prefix, "stem.conv"), f);
        self.stem_bn.visit(&join(prefix, "stem.bn"), f);
        for (i, block) in self.blocks.iter().enumerate() {
            block.visit(&join(prefix, &format!("block{i}")), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.stem_conv.visit_mut(&join(prefix, "stem.conv"), f);
        self.stem_bn.visit_mut(&join(prefix, "stem.bn"), f);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.visit_mut(&join(prefix, &format!("block{i}")), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::gradcheck_scalar_loss;
    use ndarray::{Ix3, Ix4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_config() -> BackboneConfig {
        BackboneConfig {
            stem_width: 4,
            stage_widths: [4, 5, 6, 7],
            out_channels: 3,
        }
    }

    #[test]
    fn parameter_count_matches_hand_tally() {
        let backbone = Backbone::new(BackboneConfig::default()).unwrap();
        // Stem 7·7·3·32 + 2·32; blocks tallied conv+bn (+projection);
        // head 3·3·256·21 + 21.
        assert_eq!(backbone.num_params(), 1_278_645);
    }

    #[test]
    fn feature_length_follows_downsampling() {
        assert_eq!(feature_len(256).unwrap(), 64);
        assert_eq!(feature_len(128).unwrap(), 16);
        assert_eq!(feature_len(64).unwrap(), 4);
        assert!(feature_len(100).is_err());
        assert!(feature_len(0).is_err());
    }

    #[test]
    fn forward_shapes_and_finiteness() {
        let mut rng = ChaCha8Rng::seed_from_u64(601);
        let mut backbone = Backbone::new(BackboneConfig::default()).unwrap();
        backbone.init(&mut rng);
        let mut x = Array4::zeros((2, 3, 64, 64));
        x.mapv_inplace(|_| rng.gen_range(0.0..1.0));
        let feat = backbone.forward(&x, false);
        assert_eq!(feat.dim(), (2, NUM_JOINTS, 4));
        assert!(feat.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn train_and_eval_modes_differ_through_batch_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(603);
        let mut backbone = Backbone::new(toy_config()).unwrap();
        backbone.init(&mut rng);
        let mut x = Array4::zeros((2, 3, 64, 64));
        x.mapv_inplace(|_| rng.gen_range(0.0..1.0));
        let train_feat = backbone.forward(&x, true);
        backbone.cache = None; // discard the unused backward cache
        let eval_feat = backbone.forward(&x, false);
        let diff = (&train_feat - &eval_feat)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(
            diff > 1e-6,
            "fresh running stats should not reproduce batch stats (diff {diff})"
        );
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(605);
        let mut backbone = Backbone::new(toy_config()).unwrap();
        backbone.init(&mut rng);
        let mut x = Array4::zeros((2, 3, 64, 64));
        x.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
        // Looser than the per-layer checks: with thousands of ReLU
        // pre-activations some sit within the FD step of zero, and a central
        // difference across a kink is biased no matter how small the step.
        gradcheck_scalar_loss(
            &mut backbone,
            x.into_dyn(),
            |net, x| {
                net.forward(&x.clone().into_dimensionality::<Ix4>().unwrap(), true)
                    .into_dyn()
            },
            |net, dy| {
                net.backward(&dy.clone().into_dimensionality::<Ix3>().unwrap())
                    .into_dyn()
            },
            &mut rng,
            1e-6,
            5e-4,
        );
    }

    #[test]
    fn batchnorm_visitor_covers_all_normalization_layers() {
        let mut backbone = Backbone::new(BackboneConfig::default()).unwrap();
        let mut names = Vec::new();
        backbone.visit_batchnorms("", &mut |name, _| names.push(name.to_string()));
        // Stem + 2 per block + 1 projection norm in each strided block.
        assert_eq!(names.len(), 1 + 4 * 2 + 3);
        assert!(names.contains(&"stem.bn".to_string()));
        assert!(names.contains(&"block1.proj.bn".to_string()));
        assert!(!names.contains(&"block0.proj.bn".to_string()));
    }
}
