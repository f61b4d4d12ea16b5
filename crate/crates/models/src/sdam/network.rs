use candle_core::{DType, Device, Module, Tensor};
use candle_nn::Conv2d;
use petrec_core::deform::OffsetField;
use petrec_core::SliceWindow;
use serde::{Deserialize, Serialize};

use crate::deform_op::deform_aggregate;
use crate::error::{ModelError, Result};
use crate::params::{max_pool2x2, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossReduction {
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdamConfig {
    /// Window half-width; the window holds `2 * radius + 1` slices.
    pub radius: usize,
    /// Deformable kernel side `S` (odd).
    pub kernel_side: usize,
    pub fused_channels: usize,
    pub offset_base_channels: usize,
    /// Resolution levels of the offset U-Net.
    pub offset_depth: usize,
    pub recon_channels: usize,
    pub recon_blocks: usize,
    pub loss_reduction: LossReduction,
}

impl Default for SdamConfig {
    fn default() -> Self {
        Self {
            radius: 2,
            kernel_side: 3,
            fused_channels: 8,
            offset_base_channels: 8,
            offset_depth: 3,
            recon_channels: 8,
            recon_blocks: 4,
            loss_reduction: LossReduction::Sum,
        }
    }
}

impl SdamConfig {
    pub fn slices(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn offset_channels(&self) -> usize {
        self.slices() * 2 * self.kernel_side * self.kernel_side
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_side % 2 == 0 {
            return Err(ModelError::Config(format!("kernel_side {} must be odd", self.kernel_side)));
        }
        if self.offset_depth == 0 || self.offset_depth > 6 {
            return Err(ModelError::Config(format!("offset_depth {} outside [1, 6]", self.offset_depth)));
        }
        if self.fused_channels == 0 || self.offset_base_channels == 0 || self.recon_channels == 0 {
            return Err(ModelError::Config("channel counts must be >= 1".into()));
        }
        Ok(())
    }

    /// Slice sides must be divisible by this for the U-Net pooling.
    pub fn size_multiple(&self) -> usize {
        1 << (self.offset_depth - 1)
    }
}

struct DoubleConv {
    a: Conv2d,
    b: Conv2d,
}

impl DoubleConv {
    fn new(ps: &mut ParamStore, name: &str, in_c: usize, out_c: usize) -> Result<Self> {
        Ok(Self {
            a: ps.conv2d(&format!("{name}.conv1"), in_c, out_c, 3, 1, 1)?,
            b: ps.conv2d(&format!("{name}.conv2"), out_c, out_c, 3, 1, 1)?,
        })
    }

    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        self.b.forward(&self.a.forward(x)?.relu()?)?.relu()
    }
}

/// U-Net over the concatenated raw window with a zero-initialised output layer.
struct OffsetNet {
    down: Vec<DoubleConv>,
    up: Vec<DoubleConv>,
    out: Conv2d,
}

impl OffsetNet {
    fn new(cfg: &SdamConfig, ps: &mut ParamStore) -> Result<Self> {
        let c = cfg.offset_base_channels;
        let width = |level: usize| c << level;
        let mut down = Vec::new();
        for level in 0..cfg.offset_depth {
            let in_c = if level == 0 { cfg.slices() } else { width(level - 1) };
            down.push(DoubleConv::new(ps, &format!("sdam.offset.down{level}"), in_c, width(level))?);
        }
        let mut up = Vec::new();
        for level in (0..cfg.offset_depth - 1).rev() {
            let in_c = width(level + 1) + width(level);
            up.push(DoubleConv::new(ps, &format!("sdam.offset.up{level}"), in_c, width(level))?);
        }
        let out = ps.conv2d_zeros("sdam.offset.out", c, cfg.offset_channels(), 3, 1)?;
        Ok(Self { down, up, out })
    }

    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mut skips = Vec::new();
        let mut h = x.clone();
        for (i, block) in self.down.iter().enumerate() {
            if i > 0 {
                h = max_pool2x2(&h)?;
            }
            h = block.forward(&h)?;
            skips.push(h.clone());
        }
        skips.pop();
        for block in &self.up {
            let skip = skips.pop().expect("one skip per decoder level");
            let (_, _, sh, sw) = skip.dims4()?;
            h = block.forward(&Tensor::cat(&[&h.upsample_nearest2d(sh, sw)?, &skip], 1)?)?;
        }
        self.out.forward(&h)
    }
}

struct ReconNet {
    input: Conv2d,
    blocks: Vec<(Conv2d, Conv2d)>,
    output: Conv2d,
}

impl ReconNet {
    fn new(cfg: &SdamConfig, ps: &mut ParamStore) -> Result<Self> {
        let c = cfg.recon_channels;
        let input = ps.conv2d("sdam.recon.in", cfg.fused_channels, c, 3, 1, 1)?;
        let blocks = (0..cfg.recon_blocks)
            .map(|i| {
                Ok((
                    ps.conv2d(&format!("sdam.recon.res.{i}.conv1"), c, c, 3, 1, 1)?,
                    ps.conv2d(&format!("sdam.recon.res.{i}.conv2"), c, c, 3, 1, 1)?,
                ))
            })
            .collect::<Result<_>>()?;
        let output = ps.conv2d_zeros("sdam.recon.out", c, 1, 3, 1)?;
        Ok(Self { input, blocks, output })
    }

    fn forward(&self, fused: &Tensor) -> candle_core::Result<Tensor> {
        let mut h = self.input.forward(fused)?.relu()?;
        for (a, b) in &self.blocks {
            h = (&h + b.forward(&a.forward(&h)?.relu()?)?)?;
        }
        self.output.forward(&h.relu()?)
    }
}

/// Refined centre slice and the residual that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedSlice {
    pub data: Vec<f32>,
    pub residual: Vec<f32>,
    pub t0: usize,
}

pub struct Sdam {
    config: SdamConfig,
    store: ParamStore,
    offset_net: OffsetNet,
    kernel: Tensor,
    recon: ReconNet,
}

impl Sdam {
    pub fn new(config: &SdamConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(seed, dtype);
        let offset_net = OffsetNet::new(config, &mut store)?;
        let s = config.kernel_side;
        let bound = 1.0 / ((config.slices() * s * s) as f64).sqrt();
        let kernel = store.uniform("sdam.kernel", &[config.fused_channels, config.slices(), s, s], bound)?;
        let recon = ReconNet::new(config, &mut store)?;
        Ok(Self {
            config: config.clone(),
            store,
            offset_net,
            kernel,
            recon,
        })
    }

    pub fn config(&self) -> &SdamConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn parameter_count(&self) -> usize {
        self.store.trainable_count()
    }

    /// Force the reconstruction network to emit a zero residual.
    pub fn zero_residual(&self) -> Result<()> {
        self.store.zero_prefix("sdam.recon.out")?;
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, t, h, w) = x.dims4()?;
        let m = self.config.size_multiple();
        if t != self.config.slices() || h % m != 0 || w % m != 0 {
            return Err(ModelError::Shape(format!(
                "sdam expects (B, {}, H, W) with H, W divisible by {m}, got {:?}",
                self.config.slices(),
                x.dims()
            )));
        }
        Ok(())
    }

    /// Offsets for a batch of windows, `(B, T * 2S^2, H, W)`, from a single forward pass.
    pub fn offsets(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        Ok(self.offset_net.forward(x)?)
    }

    /// `(B, T, H, W)` windows to `(refined, residual)`, both `(B, 1, H, W)`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let offsets = self.offsets(x)?;
        let fused = deform_aggregate(x, &offsets, &self.kernel)?;
        let residual = self.recon.forward(&fused)?;
        let center = x.narrow(1, self.config.radius, 1)?;
        Ok(((&residual + center)?, residual))
    }

    pub fn predict_offsets(&self, window: &SliceWindow) -> Result<OffsetField> {
        let x = window_tensor(window, self.store.dtype())?;
        let [h, w] = window.hw();
        let s = self.config.kernel_side;
        let data = self.offsets(&x)?.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
        Ok(OffsetField::new([window.len(), 2 * s * s, h, w], data)?)
    }

    /// Refine the centre slice of one window; `data = residual + centre` elementwise.
    pub fn refine_slice(&self, window: &SliceWindow) -> Result<RefinedSlice> {
        let x = window_tensor(window, self.store.dtype())?;
        let (_, residual) = self.forward(&x)?;
        let residual = residual.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
        let data = residual.iter().zip(window.center()).map(|(r, c)| r + c).collect();
        Ok(RefinedSlice {
            data,
            residual,
            t0: window.t0,
        })
    }
}

fn window_tensor(window: &SliceWindow, dtype: DType) -> Result<Tensor> {
    let [h, w] = window.hw();
    Ok(Tensor::from_slice(window.data(), (1, window.len(), h, w), &Device::Cpu)?.to_dtype(dtype)?)
}
