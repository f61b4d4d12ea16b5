use candle_core::{DType, Module, Tensor, D};
use candle_nn::{Conv2d, Linear};
use petrec_core::SliceWindow;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::params::{LayerNorm, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub height: usize,
    pub width: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub n_attention_heads: usize,
    pub n_encoder_layers: usize,
    pub mlp_ratio: usize,
    pub n_resnet_blocks: usize,
    pub base_channels: usize,
    /// Slices in the 2.5D input window (`2 * r_g + 1`).
    pub input_slices: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            patch_size: 8,
            embed_dim: 64,
            n_attention_heads: 4,
            n_encoder_layers: 2,
            mlp_ratio: 2,
            n_resnet_blocks: 3,
            base_channels: 8,
            input_slices: 3,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.patch_size == 0 || self.height % self.patch_size != 0 || self.width % self.patch_size != 0 {
            return err(format!(
                "slice {}x{} is not divisible by patch size {}",
                self.height, self.width, self.patch_size
            ));
        }
        if self.n_attention_heads == 0 || self.embed_dim % self.n_attention_heads != 0 {
            return err(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.n_attention_heads
            ));
        }
        if self.input_slices % 2 == 0 {
            return err(format!("input_slices {} must be odd", self.input_slices));
        }
        if self.base_channels == 0 || self.mlp_ratio == 0 {
            return err("base_channels and mlp_ratio must be >= 1".into());
        }
        Ok(())
    }

    pub fn n_tokens(&self) -> usize {
        (self.height / self.patch_size) * (self.width / self.patch_size)
    }

    pub fn window_radius(&self) -> usize {
        self.input_slices / 2
    }
}

struct EncoderLayer {
    norm1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    heads: usize,
}

impl EncoderLayer {
    fn new(ps: &mut ParamStore, name: &str, dim: usize, heads: usize, mlp_ratio: usize) -> Result<Self> {
        Ok(Self {
            norm1: ps.layer_norm(&format!("{name}.norm1"), dim)?,
            qkv: ps.linear(&format!("{name}.attn.qkv"), dim, 3 * dim)?,
            proj: ps.linear(&format!("{name}.attn.proj"), dim, dim)?,
            norm2: ps.layer_norm(&format!("{name}.norm2"), dim)?,
            fc1: ps.linear(&format!("{name}.mlp.fc1"), dim, mlp_ratio * dim)?,
            fc2: ps.linear(&format!("{name}.mlp.fc2"), mlp_ratio * dim, dim)?,
            heads,
        })
    }

    fn attention(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let (b, n, c) = x.dims3()?;
        let hd = c / self.heads;
        let qkv = self
            .qkv
            .forward(x)?
            .reshape((b, n, 3, self.heads, hd))?
            .permute((2, 0, 3, 1, 4))?;
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let scores = (q.matmul(&k.t()?)? / (hd as f64).sqrt())?;
        let attn = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.reshape((b, n, c))?;
        self.proj.forward(&out)
    }

    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let x = (x + self.attention(&self.norm1.forward(x)?)?)?;
        let h = self.fc1.forward(&self.norm2.forward(&x)?)?.gelu_erf()?;
        &x + self.fc2.forward(&h)?
    }
}

struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl ResBlock {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        x + self.conv2.forward(&self.conv1.forward(x)?.relu()?)?
    }
}

/// Patch tokens pass through a pre-norm transformer encoder, are unfolded back
/// to a spatial map, merged with a convolutional stem and decoded by residual
/// blocks into one non-negative slice.
pub struct Generator {
    cfg: GeneratorConfig,
    patch_embed: Conv2d,
    pos_embed: Tensor,
    layers: Vec<EncoderLayer>,
    norm: LayerNorm,
    unfold: Linear,
    stem: Conv2d,
    blocks: Vec<ResBlock>,
    head: Conv2d,
}

impl Generator {
    pub fn new(cfg: &GeneratorConfig, ps: &mut ParamStore) -> Result<Self> {
        cfg.validate()?;
        let (e, p, c) = (cfg.embed_dim, cfg.patch_size, cfg.base_channels);
        let patch_embed = ps.conv2d("gen.patch_embed", cfg.input_slices, e, p, p, 0)?;
        let pos_embed = ps.normal("gen.pos_embed", &[1, cfg.n_tokens(), e], 0.02)?;
        let layers = (0..cfg.n_encoder_layers)
            .map(|i| EncoderLayer::new(ps, &format!("gen.encoder.{i}"), e, cfg.n_attention_heads, cfg.mlp_ratio))
            .collect::<Result<_>>()?;
        let norm = ps.layer_norm("gen.encoder.norm", e)?;
        let unfold = ps.linear("gen.unfold", e, c * p * p)?;
        let stem = ps.conv2d("gen.stem", cfg.input_slices, c, 3, 1, 1)?;
        let blocks = (0..cfg.n_resnet_blocks)
            .map(|i| {
                Ok(ResBlock {
                    conv1: ps.conv2d(&format!("gen.res.{i}.conv1"), c, c, 3, 1, 1)?,
                    conv2: ps.conv2d(&format!("gen.res.{i}.conv2"), c, c, 3, 1, 1)?,
                })
            })
            .collect::<Result<_>>()?;
        let head = ps.conv2d("gen.head", c, 1, 3, 1, 1)?;
        Ok(Self {
            cfg: cfg.clone(),
            patch_embed,
            pos_embed,
            layers,
            norm,
            unfold,
            stem,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    /// Token sequence after the transformer encoder, `(B, N, E)`.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let (_, t, h, w) = x.dims4()?;
        if t != self.cfg.input_slices || h != self.cfg.height || w != self.cfg.width {
            return Err(ModelError::Shape(format!(
                "generator expects (B, {}, {}, {}), got {:?}",
                self.cfg.input_slices,
                self.cfg.height,
                self.cfg.width,
                x.dims()
            )));
        }
        let tokens = self.patch_embed.forward(x)?.flatten_from(2)?.transpose(1, 2)?;
        let mut z = tokens.broadcast_add(&self.pos_embed)?;
        for layer in &self.layers {
            z = layer.forward(&z)?;
        }
        Ok(self.norm.forward(&z)?)
    }

    /// `(B, T, H, W)` windows to `(B, 1, H, W)` slices.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let z = self.encode(x)?;
        let (b, _, _) = z.dims3()?;
        let (p, c) = (self.cfg.patch_size, self.cfg.base_channels);
        let (hp, wp) = (self.cfg.height / p, self.cfg.width / p);
        let spatial = self
            .unfold
            .forward(&z)?
            .reshape((b, hp, wp, c, p, p))?
            .permute((0, 3, 1, 4, 2, 5))?
            .reshape((b, c, self.cfg.height, self.cfg.width))?;
        let mut h = (self.stem.forward(x)?.relu()? + spatial)?;
        for block in &self.blocks {
            h = block.forward(&h)?;
        }
        Ok(softplus(&self.head.forward(&h.relu()?)?)?)
    }

    /// Generate the centre slice of one window.
    pub fn generate_slice(&self, window: &SliceWindow) -> Result<Vec<f32>> {
        let [h, w] = window.hw();
        let x = Tensor::from_slice(window.data(), (1, window.len(), h, w), &candle_core::Device::Cpu)?
            .to_dtype(self.pos_embed.dtype())?;
        Ok(self.forward(&x)?.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?)
    }
}

/// `log(1 + e^x)` evaluated as `relu(x) + log(1 + e^-|x|)`.
pub fn softplus(x: &Tensor) -> candle_core::Result<Tensor> {
    x.relu()? + (x.abs()?.neg()?.exp()? + 1.0)?.log()?
}
