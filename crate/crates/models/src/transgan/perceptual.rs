use std::collections::HashMap;
use std::path::PathBuf;

use candle_core::{DType, Module, Tensor};
use candle_nn::Conv2d;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::params::{max_pool2x2, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Topology {
    Vgg16,
    Vgg19,
}

impl Topology {
    /// Convolutions per stage up to (not including) the third pooling layer.
    fn stages(self) -> [(usize, usize); 3] {
        match self {
            Topology::Vgg16 => [(2, 64), (2, 128), (3, 256)],
            Topology::Vgg19 => [(2, 64), (2, 128), (4, 256)],
        }
    }

    pub fn prefix(self) -> &'static str {
        match self {
            Topology::Vgg16 => "vgg16",
            Topology::Vgg19 => "vgg19",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Channel widths are the VGG widths divided by this (1 = full VGG).
    pub width_divisor: usize,
    /// Optional safetensors file with `vgg16.*` / `vgg19.*` weights.
    pub weights_path: Option<PathBuf>,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            width_divisor: 8,
            weights_path: None,
            seed: 16_19,
        }
    }
}

/// Frozen VGG-topology feature extractor tapped at the activation before
/// the third pooling stage. Single-channel slices are replicated to RGB.
pub struct FeatureEncoder {
    topology: Topology,
    stages: Vec<Vec<Conv2d>>,
    store: ParamStore,
}

impl FeatureEncoder {
    pub fn new(topology: Topology, width_divisor: usize, mut store: ParamStore) -> Result<Self> {
        if width_divisor == 0 {
            return Err(ModelError::Config("encoder width_divisor must be >= 1".into()));
        }
        let mut in_c = 3;
        let mut stages = Vec::new();
        for (s, (n_conv, width)) in topology.stages().into_iter().enumerate() {
            let out_c = (width / width_divisor).max(1);
            let mut convs = Vec::new();
            for c in 0..n_conv {
                let name = format!("{}.conv{}_{}", topology.prefix(), s + 1, c + 1);
                convs.push(store.conv2d_he(&name, in_c, out_c, 3, 1)?);
                in_c = out_c;
            }
            stages.push(convs);
        }
        Ok(Self { topology, stages, store })
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// `(B, 1, H, W)` slices to feature maps at quarter resolution.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != 1 {
            return Err(ModelError::Shape(format!("encoder expects 1-channel slices, got {c}")));
        }
        if h % 4 != 0 || w % 4 != 0 || h < 4 || w < 4 {
            return Err(ModelError::Shape(format!(
                "encoder input {h}x{w} must be a positive multiple of 4 on both sides"
            )));
        }
        let mut h = x.repeat((1, 3, 1, 1))?;
        for (i, stage) in self.stages.iter().enumerate() {
            if i > 0 {
                h = max_pool2x2(&h)?;
            }
            for conv in stage {
                h = conv.forward(&h)?.relu()?;
            }
        }
        Ok(h)
    }
}

/// The two frozen encoders of the dual perceptual loss.
pub struct PerceptualEncoders {
    pub vgg16: FeatureEncoder,
    pub vgg19: FeatureEncoder,
}

impl PerceptualEncoders {
    pub fn new(cfg: &EncoderConfig, dtype: DType) -> Result<Self> {
        let stores = match &cfg.weights_path {
            Some(path) => {
                let tensors: HashMap<String, Tensor> =
                    candle_core::safetensors::load(path, &candle_core::Device::Cpu).map_err(|e| {
                        ModelError::Checkpoint(format!("encoder weights {}: {e}", path.display()))
                    })?;
                (
                    ParamStore::frozen_from(tensors.clone(), dtype),
                    ParamStore::frozen_from(tensors, dtype),
                )
            }
            None => (
                ParamStore::frozen(cfg.seed, dtype),
                ParamStore::frozen(cfg.seed.wrapping_add(1), dtype),
            ),
        };
        Ok(Self {
            vgg16: FeatureEncoder::new(Topology::Vgg16, cfg.width_divisor, stores.0)?,
            vgg19: FeatureEncoder::new(Topology::Vgg19, cfg.width_divisor, stores.1)?,
        })
    }

    /// Combined parameter digest, used to verify the encoders never change.
    pub fn digest(&self) -> Result<String> {
        Ok(format!("{}:{}", self.vgg16.store().digest()?, self.vgg19.store().digest()?))
    }

    pub fn trainable_count(&self) -> usize {
        self.vgg16.store().trainable_count() + self.vgg19.store().trainable_count()
    }
}
