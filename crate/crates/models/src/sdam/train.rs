use candle_core::Tensor;
use candle_nn::Optimizer;
use petrec_core::{Modality, Volume3D};
use serde::{Deserialize, Serialize};

use super::network::{LossReduction, Sdam};
use crate::data::{map_slices, Normalizer, PairedSet, SampleStream};
use crate::error::{ModelError, Result};
use crate::train::{ensure_finite, is_validation_step, scalar, BestTracker, OptimConfig, ValidationRecord, ValidationSet};

/// Squared error between refined and target slices, summed or averaged.
pub fn sdam_loss(refined: &Tensor, target: &Tensor, reduction: LossReduction) -> Result<Tensor> {
    if refined.dims() != target.dims() {
        return Err(ModelError::Shape(format!("{:?} vs {:?}", refined.dims(), target.dims())));
    }
    let se = (target - refined)?.sqr()?;
    Ok(match reduction {
        LossReduction::Sum => se.sum_all()?,
        LossReduction::Mean => se.mean_all()?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdamHyper {
    pub steps: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    pub val_every: usize,
    pub inference_batch: usize,
    pub seed: u64,
}

impl Default for SdamHyper {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 4,
            optim: OptimConfig {
                lr: 5e-4,
                beta1: 0.9,
                beta2: 0.999,
            },
            val_every: 50,
            inference_batch: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdamOutcome {
    /// Training loss of every step, in order.
    pub history: Vec<f64>,
    pub validation: Vec<ValidationRecord>,
    pub best_step: usize,
    pub best_val_psnr: f64,
}

fn refine_normalized(model: &Sdam, generated: &Volume3D, batch: usize) -> Result<Volume3D> {
    map_slices(
        generated,
        model.config().radius,
        batch,
        model.store().dtype(),
        Modality::Refined,
        |x| Ok(model.forward(x)?.0),
    )
}

/// Refine every slice of a raw generated volume. Values are clamped at zero.
pub fn refine_volume(model: &Sdam, generated: &Volume3D, norm: &Normalizer, batch: usize) -> Result<Volume3D> {
    let refined = refine_normalized(model, &norm.normalize(generated)?, batch)?;
    norm.denormalize(&refined, Modality::Refined)
}

/// Minimize the refinement loss over windows of generated slices.
///
/// `train.inputs` are normalized generated volumes and `train.targets` the
/// normalized F-PET. The untrained module (an identity map) is scored at
/// step 0, so the kept snapshot never validates below the generated input.
pub fn train_sdam(
    model: &mut Sdam,
    train: &PairedSet,
    val: &ValidationSet,
    norm: &Normalizer,
    hyper: &SdamHyper,
) -> Result<SdamOutcome> {
    if hyper.steps == 0 || hyper.batch_size == 0 || hyper.inference_batch == 0 {
        return Err(ModelError::Config("steps, batch_size and inference_batch must be >= 1".into()));
    }
    if train.inputs.iter().any(|v| v.modality != Modality::Generated) {
        return Err(ModelError::Dataset("sdam trains on generated volumes only".into()));
    }
    let r = model.config().radius;
    let reduction = model.config().loss_reduction;
    let dtype = model.store().dtype();
    let mut opt = hyper.optim.build(model.store().vars())?;
    let mut stream = SampleStream::new(train.samples(), hyper.seed)?;
    let mut history = Vec::with_capacity(hyper.steps);
    let mut validation = Vec::new();
    let mut best = BestTracker::default();

    let mut validate = |step: usize, model: &Sdam, best: &mut BestTracker| -> Result<()> {
        let psnr = val.mean_psnr(|x| {
            norm.denormalize(&refine_normalized(model, x, hyper.inference_batch)?, Modality::Refined)
        })?;
        validation.push(ValidationRecord { step, psnr_db: psnr });
        best.offer(step, psnr, || model.store().snapshot())?;
        Ok(())
    };

    if !val.is_empty() {
        validate(0, model, &mut best)?;
    }
    for step in 1..=hyper.steps {
        let (x, y) = train.batch(&stream.next_batch(hyper.batch_size), r, dtype)?;
        let (refined, _) = model.forward(&x)?;
        let loss = sdam_loss(&refined, &y, reduction)?;
        let value = scalar(&loss)?;
        ensure_finite(step, &[("sdam_loss", value)])?;
        opt.backward_step(&loss)?;
        history.push(value);
        if !val.is_empty() && is_validation_step(step, hyper.steps, hyper.val_every) {
            validate(step, model, &mut best)?;
        }
    }

    let (best_step, best_val_psnr) = (best.step, best.psnr_db);
    if let Some(snapshot) = best.take() {
        model.store().restore(&snapshot)?;
    }
    Ok(SdamOutcome {
        history,
        validation,
        best_step: if val.is_empty() { hyper.steps } else { best_step },
        best_val_psnr,
    })
}
