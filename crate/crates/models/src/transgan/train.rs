use candle_core::{DType, Tensor};
use candle_nn::Optimizer;
use petrec_core::{Modality, Volume3D};
use serde::{Deserialize, Serialize};

use super::{
    adversarial_losses, charbonnier_loss, perceptual_loss, Discriminator, Generator, LossBundle,
    PerceptualEncoders, TransGanConfig, DEFAULT_EPS,
};
use crate::data::{map_slices, Normalizer, PairedSet, SampleStream};
use crate::error::{ModelError, Result};
use crate::params::ParamStore;
use crate::train::{ensure_finite, is_validation_step, scalar, BestTracker, OptimConfig, ValidationRecord, ValidationSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransGanHyper {
    pub steps: usize,
    pub batch_size: usize,
    pub generator_optim: OptimConfig,
    pub discriminator_optim: OptimConfig,
    /// Charbonnier weight.
    pub alpha: f64,
    /// Perceptual weight.
    pub beta: f64,
    pub eps: f64,
    pub val_every: usize,
    pub inference_batch: usize,
    pub seed: u64,
}

impl Default for TransGanHyper {
    fn default() -> Self {
        Self {
            steps: 400,
            batch_size: 4,
            generator_optim: OptimConfig::default(),
            discriminator_optim: OptimConfig::default(),
            alpha: 100.0,
            beta: 100.0,
            eps: DEFAULT_EPS,
            val_every: 50,
            inference_batch: 8,
            seed: 0,
        }
    }
}

impl TransGanHyper {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.inference_batch == 0 {
            return Err(ModelError::Config("steps, batch_size and inference_batch must be >= 1".into()));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.eps > 0.0) {
            return Err(ModelError::Config("alpha, beta must be >= 0 and eps > 0".into()));
        }
        self.generator_optim.validate()?;
        self.discriminator_optim.validate()
    }
}

/// Generator, discriminator and frozen encoders with their parameter stores.
pub struct TransGan {
    pub config: TransGanConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub encoders: PerceptualEncoders,
    gen_store: ParamStore,
    disc_store: ParamStore,
}

impl TransGan {
    pub fn new(config: &TransGanConfig, seed: u64, dtype: DType) -> Result<Self> {
        let mut gen_store = ParamStore::new(seed, dtype);
        let generator = Generator::new(&config.generator, &mut gen_store)?;
        let mut disc_store = ParamStore::new(seed.wrapping_add(0x5EED), dtype);
        let discriminator = Discriminator::new(&config.discriminator, &mut disc_store)?;
        let encoders = PerceptualEncoders::new(&config.encoders, dtype)?;
        Ok(Self {
            config: config.clone(),
            generator,
            discriminator,
            encoders,
            gen_store,
            disc_store,
        })
    }

    pub fn generator_store(&self) -> &ParamStore {
        &self.gen_store
    }

    pub fn discriminator_store(&self) -> &ParamStore {
        &self.disc_store
    }

    /// Trainable scalars of generator and discriminator; frozen encoders count zero.
    pub fn parameter_count(&self) -> usize {
        self.gen_store.trainable_count() + self.disc_store.trainable_count() + self.encoders.trainable_count()
    }

    fn snapshot(&self) -> Result<Vec<Tensor>> {
        let mut s = self.gen_store.snapshot()?;
        s.extend(self.disc_store.snapshot()?);
        Ok(s)
    }

    fn restore(&self, snapshot: &[Tensor]) -> Result<()> {
        let n = self.gen_store.names().count();
        self.gen_store.restore(&snapshot[..n])?;
        self.disc_store.restore(&snapshot[n..])
    }

    /// Generated F-PET for a normalized L-PET volume, still normalized.
    pub fn generate_normalized(&self, lpet: &Volume3D, batch: usize) -> Result<Volume3D> {
        let r = self.config.generator.window_radius();
        map_slices(lpet, r, batch, self.gen_store.dtype(), Modality::Generated, |x| {
            self.generator.forward(x)
        })
    }

    /// Generated F-PET in raw intensity units for a raw L-PET volume.
    pub fn generate_volume(&self, lpet: &Volume3D, norm: &Normalizer, batch: usize) -> Result<Volume3D> {
        let g = self.generate_normalized(&norm.normalize(lpet)?, batch)?;
        norm.denormalize(&g, Modality::Generated)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransGanOutcome {
    pub history: Vec<LossBundle>,
    pub validation: Vec<ValidationRecord>,
    pub best_step: usize,
    pub best_val_psnr: f64,
    pub encoder_digest_before: String,
    pub encoder_digest_after: String,
}

/// Alternating LSGAN training; the generator also minimizes weighted
/// Charbonnier and dual perceptual terms. Parameters are left at the
/// validation-best snapshot.
pub fn train_transgan(
    model: &mut TransGan,
    train: &PairedSet,
    val: &ValidationSet,
    norm: &Normalizer,
    hyper: &TransGanHyper,
) -> Result<TransGanOutcome> {
    hyper.validate()?;
    let cfg = &model.config.generator;
    if train.hw() != [cfg.height, cfg.width] {
        return Err(ModelError::Dataset(format!(
            "slices are {:?}, generator expects {}x{}",
            train.hw(),
            cfg.height,
            cfg.width
        )));
    }
    let r = cfg.window_radius();
    let dtype = model.gen_store.dtype();
    let digest_before = model.encoders.digest()?;
    let mut opt_g = hyper.generator_optim.build(model.gen_store.vars())?;
    let mut opt_d = hyper.discriminator_optim.build(model.disc_store.vars())?;
    let mut stream = SampleStream::new(train.samples(), hyper.seed)?;
    let mut history = Vec::with_capacity(hyper.steps);
    let mut validation = Vec::new();
    let mut best = BestTracker::default();

    for step in 1..=hyper.steps {
        let (x, y) = train.batch(&stream.next_batch(hyper.batch_size), r, dtype)?;
        let center = x.narrow(1, r, 1)?;

        let fake = model.generator.forward(&x)?;
        let real_score = model.discriminator.forward(&center, &y)?;
        let fake_score = model.discriminator.forward(&center, &fake.detach())?;
        let (l_d, _) = adversarial_losses(&real_score, &fake_score)?;
        let l_gan_d = scalar(&l_d)?;
        ensure_finite(step, &[("l_gan_d", l_gan_d)])?;
        opt_d.backward_step(&l_d)?;

        let fake_score = model.discriminator.forward(&center, &fake)?;
        let (_, l_adv) = adversarial_losses(&real_score.detach(), &fake_score)?;
        let l_charb = charbonnier_loss(&fake, &y, hyper.eps)?;
        let l_perc = perceptual_loss(&model.encoders, &y, &fake, hyper.eps)?;
        let l_total = ((&l_adv + l_charb.affine(hyper.alpha, 0.0)?)? + l_perc.affine(hyper.beta, 0.0)?)?;
        let bundle = LossBundle {
            step,
            l_gan_d,
            l_gan_g: scalar(&l_adv)?,
            l_charbonnier: scalar(&l_charb)?,
            l_perceptual: scalar(&l_perc)?,
            l_total_g: scalar(&l_total)?,
        };
        ensure_finite(
            step,
            &[
                ("l_gan_g", bundle.l_gan_g),
                ("l_charbonnier", bundle.l_charbonnier),
                ("l_perceptual", bundle.l_perceptual),
                ("l_total_g", bundle.l_total_g),
            ],
        )?;
        opt_g.backward_step(&l_total)?;
        history.push(bundle);

        if !val.is_empty() && is_validation_step(step, hyper.steps, hyper.val_every) {
            let psnr = val.mean_psnr(|x| {
                let g = model.generate_normalized(x, hyper.inference_batch)?;
                norm.denormalize(&g, Modality::Generated)
            })?;
            validation.push(ValidationRecord { step, psnr_db: psnr });
            best.offer(step, psnr, || model.snapshot())?;
        }
    }

    let (best_step, best_val_psnr) = (best.step, best.psnr_db);
    if let Some(snapshot) = best.take() {
        model.restore(&snapshot)?;
    }
    Ok(TransGanOutcome {
        history,
        validation,
        best_step: if val.is_empty() { hyper.steps } else { best_step },
        best_val_psnr,
        encoder_digest_before: digest_before,
        encoder_digest_after: model.encoders.digest()?,
    })
}
