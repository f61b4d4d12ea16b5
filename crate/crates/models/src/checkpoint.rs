//! Self-describing checkpoints: a safetensors file whose header metadata
//! carries the model kind, its JSON config, the normalization constant,
//! the seed and the validation-best step. Tensors are stored as f32 under
//! their parameter names.

use std::borrow::Cow;
use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype, View};
use safetensors::SafeTensors;

use crate::data::Normalizer;
use crate::error::{ModelError, Result};
use crate::params::ParamStore;
use crate::sdam::{Sdam, SdamConfig};
use crate::transgan::{TransGan, TransGanConfig};

pub const FORMAT_TAG: &str = "petrec-checkpoint-1";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub kind: String,
    pub config: String,
    pub norm_scale: f32,
    pub seed: u64,
    pub best_step: usize,
    pub best_val_psnr: f64,
}

impl CheckpointMeta {
    fn to_map(&self) -> HashMap<String, String> {
        HashMap::from([
            ("format".to_string(), FORMAT_TAG.to_string()),
            ("kind".to_string(), self.kind.clone()),
            ("config".to_string(), self.config.clone()),
            ("norm_scale".to_string(), self.norm_scale.to_string()),
            ("seed".to_string(), self.seed.to_string()),
            ("best_step".to_string(), self.best_step.to_string()),
            ("best_val_psnr".to_string(), self.best_val_psnr.to_string()),
        ])
    }

    fn from_map(map: &HashMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            map.get(k)
                .ok_or_else(|| ModelError::Checkpoint(format!("metadata lacks `{k}`")))
        };
        let parse_err = |k: &str| ModelError::Checkpoint(format!("metadata `{k}` is malformed"));
        if get("format")? != FORMAT_TAG {
            return Err(ModelError::Checkpoint(format!("unknown format {}", get("format")?)));
        }
        Ok(Self {
            kind: get("kind")?.clone(),
            config: get("config")?.clone(),
            norm_scale: get("norm_scale")?.parse().map_err(|_| parse_err("norm_scale"))?,
            seed: get("seed")?.parse().map_err(|_| parse_err("seed"))?,
            best_step: get("best_step")?.parse().map_err(|_| parse_err("best_step"))?,
            best_val_psnr: get("best_val_psnr")?.parse().map_err(|_| parse_err("best_val_psnr"))?,
        })
    }

    pub fn normalizer(&self) -> Result<Normalizer> {
        Normalizer::new(self.norm_scale)
    }
}

struct RawF32 {
    shape: Vec<usize>,
    bytes: Vec<u8>,
}

impl View for &RawF32 {
    fn dtype(&self) -> Dtype {
        Dtype::F32
    }
    fn shape(&self) -> &[usize] {
        &self.shape
    }
    fn data(&self) -> Cow<'_, [u8]> {
        Cow::Borrowed(&self.bytes)
    }
    fn data_len(&self) -> usize {
        self.bytes.len()
    }
}

fn ck(e: safetensors::SafeTensorError) -> ModelError {
    ModelError::Checkpoint(e.to_string())
}

/// Write every parameter of `stores` with `meta` into one file.
pub fn save(path: &Path, meta: &CheckpointMeta, stores: &[&ParamStore]) -> Result<()> {
    let mut raw = Vec::new();
    for store in stores {
        for (name, t) in store.tensors() {
            let values = t.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
            let bytes = values.iter().flat_map(|v| v.to_le_bytes()).collect();
            raw.push((name.to_string(), RawF32 { shape: t.dims().to_vec(), bytes }));
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    if let Some((dup, _)) = raw.iter().find(|(n, _)| !seen.insert(n.clone())) {
        return Err(ModelError::Checkpoint(format!("duplicate tensor name {dup}")));
    }
    let buf = safetensors::serialize(raw.iter().map(|(n, r)| (n.as_str(), r)), Some(meta.to_map())).map_err(ck)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Read metadata and tensors (as f32 CPU tensors).
pub fn load(path: &Path) -> Result<(CheckpointMeta, HashMap<String, Tensor>)> {
    let buf = std::fs::read(path)
        .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
    let (_, header) = SafeTensors::read_metadata(&buf).map_err(ck)?;
    let meta = header
        .metadata()
        .as_ref()
        .ok_or_else(|| ModelError::Checkpoint("missing metadata".into()))
        .and_then(CheckpointMeta::from_map)?;
    let st = SafeTensors::deserialize(&buf).map_err(ck)?;
    let mut tensors = HashMap::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F32 {
            return Err(ModelError::Checkpoint(format!("tensor {name} is not f32")));
        }
        let values: Vec<f32> = view
            .data()
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.insert(name, Tensor::from_vec(values, view.shape(), &Device::Cpu)?);
    }
    Ok((meta, tensors))
}

fn expect_kind(meta: &CheckpointMeta, kind: &str) -> Result<()> {
    if meta.kind != kind {
        return Err(ModelError::Checkpoint(format!("expected a {kind} checkpoint, found {}", meta.kind)));
    }
    Ok(())
}

fn config_json<T: serde::Serialize>(cfg: &T) -> Result<String> {
    serde_json::to_string(cfg).map_err(|e| ModelError::Checkpoint(e.to_string()))
}

fn parse_config<T: serde::de::DeserializeOwned>(meta: &CheckpointMeta) -> Result<T> {
    serde_json::from_str(&meta.config).map_err(|e| ModelError::Checkpoint(format!("config: {e}")))
}

/// Metadata for a model checkpoint of the given kind.
pub fn meta<T: serde::Serialize>(
    kind: &str,
    config: &T,
    norm: &Normalizer,
    seed: u64,
    best_step: usize,
    best_val_psnr: f64,
) -> Result<CheckpointMeta> {
    Ok(CheckpointMeta {
        kind: kind.into(),
        config: config_json(config)?,
        norm_scale: norm.scale,
        seed,
        best_step,
        best_val_psnr,
    })
}

pub fn save_transgan(path: &Path, model: &TransGan, meta: &CheckpointMeta) -> Result<()> {
    expect_kind(meta, "transgan")?;
    save(path, meta, &[model.generator_store(), model.discriminator_store()])
}

pub fn load_transgan(path: &Path, dtype: DType) -> Result<(TransGan, CheckpointMeta)> {
    let (meta, tensors) = load(path)?;
    expect_kind(&meta, "transgan")?;
    let cfg: TransGanConfig = parse_config(&meta)?;
    let model = TransGan::new(&cfg, meta.seed, dtype)?;
    model.generator_store().load(&tensors, "")?;
    model.discriminator_store().load(&tensors, "")?;
    Ok((model, meta))
}

pub fn save_sdam(path: &Path, model: &Sdam, meta: &CheckpointMeta) -> Result<()> {
    expect_kind(meta, "sdam")?;
    save(path, meta, &[model.store()])
}

pub fn load_sdam(path: &Path, dtype: DType) -> Result<(Sdam, CheckpointMeta)> {
    let (meta, tensors) = load(path)?;
    expect_kind(&meta, "sdam")?;
    let cfg: SdamConfig = parse_config(&meta)?;
    let model = Sdam::new(&cfg, meta.seed, dtype)?;
    model.store().load(&tensors, "")?;
    Ok((model, meta))
}
