//! Run configuration: a JSON document overlaid on a named profile's defaults.

use std::path::{Path, PathBuf};

use petrec_core::phantom::{DEFAULT_DOSE_FRACTION, DEFAULT_SCALE_COUNTS};
use petrec_core::PhantomSpec;
use petrec_models::sdam::{SdamConfig, SdamHyper};
use petrec_models::train::OptimConfig;
use petrec_models::transgan::{DiscriminatorConfig, GeneratorConfig, TransGanConfig, TransGanHyper};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{PipelineError, Result};

pub const SEED_ENV: &str = "PETREC_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Desk,
    PaperShape,
}

impl Profile {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "desk" => Some(Self::Desk),
            "paper-shape" => Some(Self::PaperShape),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldConfig {
    pub k: usize,
    /// Test folds actually run, `0..folds_used`.
    pub folds_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotConfig {
    pub difference_maps: bool,
    pub bland_altman: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    /// Master seed; every other seed is derived from it.
    pub seed: u64,
    pub n_subjects: usize,
    pub phantom: PhantomSpec,
    pub dose_fraction: f64,
    pub scale_counts: f64,
    pub reference_region: u8,
    pub folds: FoldConfig,
    pub transgan: TransGanConfig,
    pub transgan_training: TransGanHyper,
    pub sdam: SdamConfig,
    pub sdam_training: SdamHyper,
    pub output_dir: PathBuf,
    pub plots: PlotConfig,
}

impl RunConfig {
    pub fn profile_defaults(profile: Profile) -> Self {
        let desk = Self {
            profile,
            seed: 2024,
            n_subjects: 6,
            phantom: PhantomSpec::default(),
            dose_fraction: DEFAULT_DOSE_FRACTION,
            scale_counts: DEFAULT_SCALE_COUNTS,
            reference_region: 1,
            folds: FoldConfig { k: 3, folds_used: 2 },
            transgan: TransGanConfig::default(),
            transgan_training: TransGanHyper {
                steps: 600,
                val_every: 100,
                generator_optim: OptimConfig {
                    lr: 1e-3,
                    ..OptimConfig::default()
                },
                ..TransGanHyper::default()
            },
            sdam: SdamConfig::default(),
            sdam_training: SdamHyper {
                steps: 200,
                val_every: 50,
                ..SdamHyper::default()
            },
            output_dir: PathBuf::from("petrec-out"),
            plots: PlotConfig {
                difference_maps: true,
                bland_altman: true,
            },
        };
        match profile {
            Profile::Desk => desk,
            Profile::PaperShape => Self {
                n_subjects: 10,
                phantom: PhantomSpec {
                    dims: [8, 256, 256],
                    ..PhantomSpec::default()
                },
                folds: FoldConfig { k: 10, folds_used: 1 },
                transgan: TransGanConfig {
                    generator: GeneratorConfig {
                        height: 256,
                        width: 256,
                        patch_size: 16,
                        ..GeneratorConfig::default()
                    },
                    discriminator: DiscriminatorConfig::default(),
                    ..TransGanConfig::default()
                },
                transgan_training: TransGanHyper {
                    steps: 20,
                    batch_size: 1,
                    val_every: 10,
                    inference_batch: 2,
                    ..desk.transgan_training.clone()
                },
                sdam_training: SdamHyper {
                    steps: 10,
                    batch_size: 1,
                    val_every: 5,
                    inference_batch: 2,
                    ..desk.sdam_training.clone()
                },
                output_dir: PathBuf::from("petrec-out-paper-shape"),
                ..desk
            },
        }
    }

    /// Profile defaults, overlaid with `overlay`, with the seed environment override applied.
    pub fn resolve(profile: Profile, overlay: Option<&Value>, seed_env: Option<&str>) -> Result<Self> {
        let mut value = serde_json::to_value(Self::profile_defaults(profile))?;
        if let Some(overlay) = overlay {
            if !overlay.is_object() {
                return Err(PipelineError::config("", "config must be a JSON object"));
            }
            merge(&mut value, overlay);
        }
        if let Some(raw) = seed_env {
            let seed: u64 = raw
                .trim()
                .parse()
                .map_err(|_| PipelineError::config("seed", format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
            value["seed"] = Value::from(seed);
        }
        let cfg: Self = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            PipelineError::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, profile: Profile) -> Result<Self> {
        let overlay = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| PipelineError::config("", format!("cannot read {}: {e}", p.display())))?;
                Some(
                    serde_json::from_str::<Value>(&text)
                        .map_err(|e| PipelineError::config("", format!("{}: {e}", p.display())))?,
                )
            }
            None => None,
        };
        let env = std::env::var(SEED_ENV).ok();
        Self::resolve(profile, overlay.as_ref(), env.as_deref())
    }

    pub fn validate(&self) -> Result<()> {
        let err = |path: &str, msg: String| Err(PipelineError::config(path, msg));
        if let Err(e) = self.phantom.validate() {
            return err("phantom", e.to_string());
        }
        let [_, h, w] = self.phantom.dims;
        if !(self.dose_fraction > 0.0 && self.dose_fraction <= 1.0) {
            return err("dose_fraction", format!("{} outside (0, 1]", self.dose_fraction));
        }
        if !(self.scale_counts > 0.0 && self.scale_counts.is_finite()) {
            return err("scale_counts", format!("{} must be > 0", self.scale_counts));
        }
        if self.reference_region == 0 || usize::from(self.reference_region) > self.phantom.n_regions {
            return err(
                "reference_region",
                format!("{} is not a region of a {}-region atlas", self.reference_region, self.phantom.n_regions),
            );
        }
        if self.folds.k < 3 {
            return err("folds.k", format!("k = {} must be >= 3", self.folds.k));
        }
        if self.n_subjects < self.folds.k {
            return err("n_subjects", format!("{} subjects cannot fill {} folds", self.n_subjects, self.folds.k));
        }
        if self.folds.folds_used == 0 || self.folds.folds_used > self.folds.k {
            return err("folds.folds_used", format!("{} outside [1, {}]", self.folds.folds_used, self.folds.k));
        }
        let g = &self.transgan.generator;
        if [g.height, g.width] != [h, w] {
            return err(
                "transgan.generator",
                format!("generator is {}x{} but phantom slices are {h}x{w}", g.height, g.width),
            );
        }
        if let Err(e) = g.validate() {
            return err("transgan.generator", e.to_string());
        }
        if h % 4 != 0 || w % 4 != 0 {
            return err("phantom.dims", format!("perceptual encoders need sides divisible by 4, got {h}x{w}"));
        }
        if DiscriminatorConfig::score_side(h.min(w)).is_none() {
            return err("phantom.dims", format!("{h}x{w} is too small for the discriminator"));
        }
        if let Some(p) = &self.transgan.encoders.weights_path {
            if !p.is_file() {
                return err("transgan.encoders.weights_path", format!("{} does not exist", p.display()));
            }
        }
        if let Err(e) = self.sdam.validate() {
            return err("sdam", e.to_string());
        }
        let m = self.sdam.size_multiple();
        if h % m != 0 || w % m != 0 {
            return err("sdam.offset_depth", format!("slice sides {h}x{w} must be divisible by {m}"));
        }
        if let Err(e) = self.transgan_training.validate() {
            return err("transgan_training", e.to_string());
        }
        let s = &self.sdam_training;
        if s.steps == 0 || s.batch_size == 0 || s.inference_batch == 0 {
            return err("sdam_training", "steps, batch_size and inference_batch must be >= 1".into());
        }
        if let Err(e) = s.optim.validate() {
            return err("sdam_training.optim", e.to_string());
        }
        if self.output_dir.as_os_str().is_empty() {
            return err("output_dir", "must not be empty".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical (key-sorted) JSON encoding.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        format!("{:x}", Sha256::digest(canonical.as_bytes()))
    }

    pub fn subject_ids(&self) -> Vec<String> {
        (0..self.n_subjects).map(|i| format!("sub-{i:03}")).collect()
    }
}

/// Deep-merge `overlay` into `base`; objects merge key by key, anything else replaces.
pub fn merge(base: &mut Value, overlay: &Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// Independent 64-bit seed for a named stream.
pub fn derive_seed(master: u64, stream: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(stream.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn profiles_validate() {
        for p in [Profile::Desk, Profile::PaperShape] {
            RunConfig::resolve(p, None, None).unwrap();
        }
    }

    #[test]
    fn errors_carry_paths() {
        let e = RunConfig::resolve(Profile::Desk, Some(&json!({"folds": {"k": 2}})), None).unwrap_err();
        assert!(matches!(&e, PipelineError::Config { path, .. } if path == "folds.k"), "{e}");
        let e = RunConfig::resolve(Profile::Desk, Some(&json!({"sdam": {"radius": "two"}})), None).unwrap_err();
        assert!(matches!(&e, PipelineError::Config { path, .. } if path == "sdam.radius"), "{e}");
        let e = RunConfig::resolve(Profile::Desk, Some(&json!({"transgan": {"generator": {"bogus": 1}}})), None)
            .unwrap_err();
        assert!(e.to_string().contains("transgan.generator"), "{e}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn seed_env_overrides() {
        let c = RunConfig::resolve(Profile::Desk, Some(&json!({"seed": 5})), Some("77")).unwrap();
        assert_eq!(c.seed, 77);
        assert!(RunConfig::resolve(Profile::Desk, None, Some("x")).is_err());
    }

    #[test]
    fn hash_tracks_every_field() {
        let base = RunConfig::resolve(Profile::Desk, None, None).unwrap();
        assert_eq!(base.hash(), RunConfig::resolve(Profile::Desk, None, None).unwrap().hash());
        let overlays = [
            json!({"seed": 1}),
            json!({"dose_fraction": 0.1}),
            json!({"sdam": {"loss_reduction": "mean"}}),
            json!({"transgan_training": {"alpha": 10.0}}),
            json!({"plots": {"bland_altman": false}}),
        ];
        for o in overlays {
            let c = RunConfig::resolve(Profile::Desk, Some(&o), None).unwrap();
            assert_ne!(c.hash(), base.hash(), "{o}");
        }
    }

    #[test]
    fn derived_seeds_differ_by_stream() {
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "b", 0));
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "a", 1));
        assert_eq!(derive_seed(3, "a", 2), derive_seed(3, "a", 2));
    }
}
