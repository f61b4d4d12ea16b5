//! Pieces shared by both training loops: optimizer settings, validation
//! scoring and best-snapshot tracking.

use candle_core::{DType, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use petrec_core::metrics::evaluate_volume;
use petrec_core::Volume3D;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

/// Adam settings (AdamW with zero weight decay).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0 && (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2);
        if !ok {
            return Err(ModelError::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }

    pub fn build(&self, vars: Vec<Var>) -> Result<AdamW> {
        self.validate()?;
        Ok(AdamW::new(
            vars,
            ParamsAdamW {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: 1e-8,
                weight_decay: 0.0,
            },
        )?)
    }
}

/// Held-out subjects: normalized network inputs with raw ground truth and brain masks.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    pub inputs: Vec<Volume3D>,
    pub truth: Vec<Volume3D>,
    pub masks: Vec<Vec<bool>>,
}

impl ValidationSet {
    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Mean per-subject PSNR of `predict(input)` against the ground truth.
    pub fn mean_psnr(&self, mut predict: impl FnMut(&Volume3D) -> Result<Volume3D>) -> Result<f64> {
        if self.is_empty() {
            return Err(ModelError::Dataset("empty validation split".into()));
        }
        let mut total = 0.0;
        for ((x, y), m) in self.inputs.iter().zip(&self.truth).zip(&self.masks) {
            let report = evaluate_volume(y, &predict(x)?, m)?;
            total += report.psnr_db;
        }
        Ok(total / self.inputs.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub step: usize,
    pub psnr_db: f64,
}

/// Keeps the parameter snapshot with the highest validation PSNR.
/// Ties keep the earlier step.
pub struct BestTracker {
    pub step: usize,
    pub psnr_db: f64,
    snapshot: Option<Vec<Tensor>>,
}

impl Default for BestTracker {
    fn default() -> Self {
        Self {
            step: 0,
            psnr_db: f64::NEG_INFINITY,
            snapshot: None,
        }
    }
}

impl BestTracker {
    pub fn offer(&mut self, step: usize, psnr_db: f64, snapshot: impl FnOnce() -> Result<Vec<Tensor>>) -> Result<bool> {
        if psnr_db > self.psnr_db || self.snapshot.is_none() {
            self.step = step;
            self.psnr_db = psnr_db;
            self.snapshot = Some(snapshot()?);
            return Ok(true);
        }
        Ok(false)
    }

    pub fn take(self) -> Option<Vec<Tensor>> {
        self.snapshot
    }
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Abort with the first non-finite named value.
pub fn ensure_finite(step: usize, values: &[(&str, f64)]) -> Result<()> {
    match values.iter().find(|(_, v)| !v.is_finite()) {
        Some((name, v)) => Err(ModelError::NonFinite {
            step,
            detail: format!("{name} = {v}"),
        }),
        None => Ok(()),
    }
}

/// Validate at every multiple of `every` and always at the final step.
pub fn is_validation_step(step: usize, steps: usize, every: usize) -> bool {
    step == steps || (every > 0 && step % every == 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracker_keeps_maximum() {
        let mut b = BestTracker::default();
        let snap = |v: f64| move || Ok(vec![Tensor::new(v, &candle_core::Device::Cpu)?]);
        assert!(b.offer(0, 10.0, snap(0.0)).unwrap());
        assert!(b.offer(5, 12.0, snap(5.0)).unwrap());
        assert!(!b.offer(10, 12.0, snap(10.0)).unwrap());
        assert_eq!(b.step, 5);
        assert_eq!(scalar(&b.take().unwrap()[0]).unwrap(), 5.0);
    }

    #[test]
    fn non_finite_names_value() {
        let e = ensure_finite(7, &[("a", 1.0), ("l_total_g", f64::NAN)]).unwrap_err();
        assert!(e.to_string().contains("step 7") && e.to_string().contains("l_total_g"));
    }

    #[test]
    fn validation_schedule() {
        let hits: Vec<usize> = (1..=10).filter(|&s| is_validation_step(s, 10, 4)).collect();
        assert_eq!(hits, vec![4, 8, 10]);
    }
}
