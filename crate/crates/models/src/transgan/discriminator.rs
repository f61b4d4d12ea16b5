use candle_core::{Module, Tensor};
use candle_nn::Conv2d;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::params::ParamStore;

/// One row of the PatchGAN layer table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    /// Output channels as a multiple of `base_channels` (0 means a single score channel).
    pub width_mult: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub leaky: bool,
}

/// 70x70-receptive-field PatchGAN: three stride-2 4x4 convolutions, then two
/// stride-1 4x4 convolutions. A 64x64 input yields a 6x6 score map.
pub const DISCRIMINATOR_LAYERS: [LayerSpec; 5] = [
    LayerSpec { width_mult: 1, kernel: 4, stride: 2, padding: 1, leaky: true },
    LayerSpec { width_mult: 2, kernel: 4, stride: 2, padding: 1, leaky: true },
    LayerSpec { width_mult: 4, kernel: 4, stride: 2, padding: 1, leaky: true },
    LayerSpec { width_mult: 8, kernel: 4, stride: 1, padding: 1, leaky: true },
    LayerSpec { width_mult: 0, kernel: 4, stride: 1, padding: 1, leaky: false },
];

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub base_channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { base_channels: 8 }
    }
}

impl DiscriminatorConfig {
    /// Score-map side for a square input of side `n`, or `None` if it collapses.
    pub fn score_side(n: usize) -> Option<usize> {
        DISCRIMINATOR_LAYERS.iter().try_fold(n, |n, l| {
            (n + 2 * l.padding).checked_sub(l.kernel).map(|v| v / l.stride + 1)
        })
    }

    pub fn receptive_field() -> usize {
        DISCRIMINATOR_LAYERS
            .iter()
            .rev()
            .fold(1, |rf, l| (rf - 1) * l.stride + l.kernel)
    }
}

/// Conditional discriminator scoring a candidate F-PET slice given the L-PET centre slice.
pub struct Discriminator {
    layers: Vec<(Conv2d, bool)>,
}

impl Discriminator {
    pub fn new(cfg: &DiscriminatorConfig, ps: &mut ParamStore) -> Result<Self> {
        if cfg.base_channels == 0 {
            return Err(ModelError::Config("discriminator base_channels must be >= 1".into()));
        }
        let mut in_c = 2;
        let mut layers = Vec::new();
        for (i, l) in DISCRIMINATOR_LAYERS.iter().enumerate() {
            let out_c = if l.width_mult == 0 { 1 } else { l.width_mult * cfg.base_channels };
            layers.push((ps.conv2d(&format!("disc.{i}"), in_c, out_c, l.kernel, l.stride, l.padding)?, l.leaky));
            in_c = out_c;
        }
        Ok(Self { layers })
    }

    /// `(B, 1, H, W)` conditioning and candidate slices to a `(B, 1, h, w)` score map.
    pub fn forward(&self, condition: &Tensor, candidate: &Tensor) -> Result<Tensor> {
        if condition.dims() != candidate.dims() {
            return Err(ModelError::Shape(format!(
                "condition {:?} vs candidate {:?}",
                condition.dims(),
                candidate.dims()
            )));
        }
        let mut h = Tensor::cat(&[condition, candidate], 1)?;
        for (conv, leaky) in &self.layers {
            h = conv.forward(&h)?;
            if *leaky {
                h = candle_nn::ops::leaky_relu(&h, LEAKY_SLOPE)?;
            }
        }
        Ok(h)
    }
}
