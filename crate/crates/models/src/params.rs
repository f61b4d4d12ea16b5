//! Seeded parameter creation and bookkeeping.
//!
//! candle's CPU backend cannot be seeded, so every parameter is drawn from a
//! ChaCha stream owned by the store. Trainable stores hand out `Var`s;
//! frozen stores hand out plain tensors that never enter an optimizer.

use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{Conv2d, Conv2dConfig, Linear};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{ModelError, Result};

struct Param {
    name: String,
    tensor: Tensor,
    var: Option<Var>,
}

pub struct ParamStore {
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
    trainable: bool,
    preset: Option<HashMap<String, Tensor>>,
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            dtype,
            device: Device::Cpu,
            rng: ChaCha8Rng::seed_from_u64(seed),
            trainable: true,
            preset: None,
            params: Vec::new(),
        }
    }

    /// A store whose parameters are constants (no gradients, no optimizer).
    pub fn frozen(seed: u64, dtype: DType) -> Self {
        Self {
            trainable: false,
            ..Self::new(seed, dtype)
        }
    }

    /// A frozen store whose parameters are taken by name from `tensors`
    /// (for example pretrained encoder weights) instead of being drawn.
    pub fn frozen_from(tensors: HashMap<String, Tensor>, dtype: DType) -> Self {
        Self {
            preset: Some(tensors),
            ..Self::frozen(0, dtype)
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    fn push(&mut self, name: &str, values: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        let t = match &self.preset {
            Some(preset) => {
                let t = preset
                    .get(name)
                    .ok_or_else(|| ModelError::Checkpoint(format!("weights file lacks tensor {name}")))?;
                if t.dims() != shape {
                    return Err(ModelError::Checkpoint(format!(
                        "tensor {name}: shape {:?}, expected {shape:?}",
                        t.dims()
                    )));
                }
                t.to_dtype(self.dtype)?
            }
            None => Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?,
        };
        let (tensor, var) = if self.trainable {
            let var = Var::from_tensor(&t)?;
            (var.as_tensor().clone(), Some(var))
        } else {
            (t, None)
        };
        self.params.push(Param {
            name: name.to_string(),
            tensor: tensor.clone(),
            var,
        });
        Ok(tensor)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        let v = (0..n)
            .map(|_| self.rng.random_range(-bound..=bound) as f32)
            .collect();
        self.push(name, v, shape)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        let dist = Normal::new(0.0, std).map_err(|e| ModelError::Config(e.to_string()))?;
        let v = (0..n).map(|_| dist.sample(&mut self.rng) as f32).collect();
        self.push(name, v, shape)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f32) -> Result<Tensor> {
        self.push(name, vec![value; shape.iter().product()], shape)
    }

    /// Square-kernel convolution with weights and bias uniform in `±1/sqrt(fan_in)`.
    pub fn conv2d(
        &mut self,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Conv2d> {
        let bound = 1.0 / ((in_c * k * k) as f64).sqrt();
        let w = self.uniform(&format!("{name}.weight"), &[out_c, in_c, k, k], bound)?;
        let b = self.uniform(&format!("{name}.bias"), &[out_c], bound)?;
        Ok(Conv2d::new(w, Some(b), conv_cfg(stride, padding)))
    }

    /// Convolution initialised to output exactly zero.
    pub fn conv2d_zeros(
        &mut self,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        padding: usize,
    ) -> Result<Conv2d> {
        let w = self.constant(&format!("{name}.weight"), &[out_c, in_c, k, k], 0.0)?;
        let b = self.constant(&format!("{name}.bias"), &[out_c], 0.0)?;
        Ok(Conv2d::new(w, Some(b), conv_cfg(1, padding)))
    }

    /// He-normal weights and zero bias, used for the frozen feature encoders.
    pub fn conv2d_he(&mut self, name: &str, in_c: usize, out_c: usize, k: usize, padding: usize) -> Result<Conv2d> {
        let std = (2.0 / (in_c * k * k) as f64).sqrt();
        let w = self.normal(&format!("{name}.weight"), &[out_c, in_c, k, k], std)?;
        let b = self.constant(&format!("{name}.bias"), &[out_c], 0.0)?;
        Ok(Conv2d::new(w, Some(b), conv_cfg(1, padding)))
    }

    pub fn linear(&mut self, name: &str, in_dim: usize, out_dim: usize) -> Result<Linear> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = self.uniform(&format!("{name}.weight"), &[out_dim, in_dim], bound)?;
        let b = self.uniform(&format!("{name}.bias"), &[out_dim], bound)?;
        Ok(Linear::new(w, Some(b)))
    }

    pub fn layer_norm(&mut self, name: &str, dim: usize) -> Result<LayerNorm> {
        Ok(LayerNorm {
            weight: self.constant(&format!("{name}.weight"), &[dim], 1.0)?,
            bias: self.constant(&format!("{name}.bias"), &[dim], 0.0)?,
            eps: 1e-5,
        })
    }

    pub fn vars(&self) -> Vec<Var> {
        self.params.iter().filter_map(|p| p.var.clone()).collect()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|p| (p.name.as_str(), &p.tensor))
    }

    /// Total trainable scalars; frozen stores count zero.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.var.is_some())
            .map(|p| p.tensor.elem_count())
            .sum()
    }

    pub fn total_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.elem_count()).sum()
    }

    /// Deep copy of every parameter value.
    pub fn snapshot(&self) -> Result<Vec<Tensor>> {
        Ok(self
            .params
            .iter()
            .map(|p| p.tensor.copy())
            .collect::<candle_core::Result<_>>()?)
    }

    pub fn restore(&self, snapshot: &[Tensor]) -> Result<()> {
        if snapshot.len() != self.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "snapshot has {} tensors, store has {}",
                snapshot.len(),
                self.params.len()
            )));
        }
        for (p, t) in self.params.iter().zip(snapshot) {
            let var = p.var.as_ref().ok_or_else(|| {
                ModelError::Checkpoint(format!("cannot overwrite frozen parameter {}", p.name))
            })?;
            var.set(t)?;
        }
        Ok(())
    }

    /// Overwrite parameters by name; every parameter must be present with its shape.
    pub fn load(&self, tensors: &HashMap<String, Tensor>, prefix: &str) -> Result<()> {
        for p in &self.params {
            let key = format!("{prefix}{}", p.name);
            let t = tensors
                .get(&key)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {key}")))?;
            if t.dims() != p.tensor.dims() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {key}: shape {:?}, expected {:?}",
                    t.dims(),
                    p.tensor.dims()
                )));
            }
            let t = t.to_dtype(self.dtype)?.copy()?;
            match &p.var {
                Some(var) => var.set(&t)?,
                None => {
                    return Err(ModelError::Checkpoint(format!(
                        "frozen parameter {key} must be supplied at construction"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Set every trainable parameter whose name starts with `prefix` to zero.
    pub fn zero_prefix(&self, prefix: &str) -> Result<usize> {
        let mut n = 0;
        for p in self.params.iter().filter(|p| p.name.starts_with(prefix)) {
            if let Some(var) = &p.var {
                var.set(&p.tensor.zeros_like()?)?;
                n += 1;
            }
        }
        Ok(n)
    }

    /// SHA-256 over names and f32 values of every parameter.
    pub fn digest(&self) -> Result<String> {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            for v in p.tensor.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()? {
                h.update(v.to_le_bytes());
            }
        }
        Ok(format!("{:x}", h.finalize()))
    }
}

pub fn conv_cfg(stride: usize, padding: usize) -> Conv2dConfig {
    Conv2dConfig {
        padding,
        stride,
        dilation: 1,
        groups: 1,
        cudnn_fwd_algo: None,
    }
}

/// 2x2 stride-2 max pooling from reshape and reductions, so gradients route
/// to the arg-max of each window.
pub fn max_pool2x2(x: &Tensor) -> candle_core::Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        candle_core::bail!("max_pool2x2 needs even sides, got {h}x{w}");
    }
    x.reshape((b, c, h / 2, 2, w / 2, 2))?.max(5)?.max(3)
}

/// Layer normalisation over the last dimension, built from differentiable primitives.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let dim = x.dim(candle_core::D::Minus1)? as f64;
        let mean = (x.sum_keepdim(candle_core::D::Minus1)? / dim)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = (xc.sqr()?.sum_keepdim(candle_core::D::Minus1)? / dim)?;
        xc.broadcast_div(&(var + self.eps)?.sqrt()?)?
            .broadcast_mul(&self.weight)?
            .broadcast_add(&self.bias)
    }
}
