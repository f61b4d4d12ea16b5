use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::perceptual::PerceptualEncoders;
use crate::error::{ModelError, Result};

/// Charbonnier smoothing constant.
pub const DEFAULT_EPS: f64 = 1e-8;

/// Mean of `sqrt((a - b)^2 + eps^2)`.
///
/// Evaluated as `eps + mean(sqrt(d^2 + eps^2) - eps)`, which is the same
/// quantity but never rounds below `eps`.
pub fn charbonnier_loss(a: &Tensor, b: &Tensor, eps: f64) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(ModelError::Shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    if !(eps > 0.0) {
        return Err(ModelError::Config(format!("eps {eps} must be > 0")));
    }
    let d2 = (a - b)?.sqr()?;
    Ok(((d2 + eps * eps)?.sqrt()? - eps)?.mean_all()?.affine(1.0, eps)?)
}

/// Charbonnier distance between frozen VGG16- and VGG19-topology features.
pub fn perceptual_loss(enc: &PerceptualEncoders, y: &Tensor, g: &Tensor, eps: f64) -> Result<Tensor> {
    if y.dims() != g.dims() {
        return Err(ModelError::Shape(format!("{:?} vs {:?}", y.dims(), g.dims())));
    }
    let l16 = charbonnier_loss(&enc.vgg16.forward(y)?, &enc.vgg16.forward(g)?, eps)?;
    let l19 = charbonnier_loss(&enc.vgg19.forward(y)?, &enc.vgg19.forward(g)?, eps)?;
    Ok((l16 + l19)?)
}

/// Least-squares adversarial objectives `(l_d, l_g_adv)`:
/// `l_d = mean((real - 1)^2) + mean(fake^2)`, `l_g_adv = mean((fake - 1)^2)`.
pub fn adversarial_losses(score_real: &Tensor, score_fake: &Tensor) -> Result<(Tensor, Tensor)> {
    if score_real.dims() != score_fake.dims() {
        return Err(ModelError::Shape(format!(
            "score maps {:?} vs {:?}",
            score_real.dims(),
            score_fake.dims()
        )));
    }
    let l_d = ((score_real - 1.0)?.sqr()?.mean_all()? + score_fake.sqr()?.mean_all()?)?;
    let l_g = (score_fake - 1.0)?.sqr()?.mean_all()?;
    Ok((l_d, l_g))
}

/// `l_g_adv + alpha * l_charb + beta * l_perc`.
pub fn total_generator_loss(l_g_adv: f64, l_charb: f64, l_perc: f64, alpha: f64, beta: f64) -> f64 {
    l_g_adv + alpha * l_charb + beta * l_perc
}

/// Scalar objectives of one training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub step: usize,
    pub l_gan_d: f64,
    pub l_gan_g: f64,
    pub l_charbonnier: f64,
    pub l_perceptual: f64,
    pub l_total_g: f64,
}

impl LossBundle {
    pub fn is_finite(&self) -> bool {
        [self.l_gan_d, self.l_gan_g, self.l_charbonnier, self.l_perceptual, self.l_total_g]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn full(v: f64, n: usize) -> Tensor {
        Tensor::full(v, (1, 1, n, n), &Device::Cpu).unwrap()
    }

    fn scalar(t: &Tensor) -> f64 {
        t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn charbonnier_of_equal_inputs_is_eps() {
        let a = Tensor::randn(0f64, 1.0, (3, 5), &Device::Cpu).unwrap();
        assert_eq!(scalar(&charbonnier_loss(&a, &a, DEFAULT_EPS).unwrap()), DEFAULT_EPS);
        let a32 = a.to_dtype(DType::F32).unwrap();
        assert!(scalar(&charbonnier_loss(&a32, &a32, DEFAULT_EPS).unwrap()) >= 1e-8f32 as f64);
    }

    #[test]
    fn charbonnier_constant_gap() {
        let v = scalar(&charbonnier_loss(&full(3.0, 4), &full(0.0, 4), DEFAULT_EPS).unwrap());
        assert!((v - 3.0).abs() < 1e-12);
        assert!(charbonnier_loss(&full(0.0, 4), &full(0.0, 3), DEFAULT_EPS).is_err());
    }

    #[test]
    fn lsgan_fixed_points() {
        let (d, g) = adversarial_losses(&full(1.0, 6), &full(0.0, 6)).unwrap();
        assert_eq!(scalar(&d), 0.0);
        assert_eq!(scalar(&g), 1.0);
        let (_, g) = adversarial_losses(&full(0.3, 6), &full(1.0, 6)).unwrap();
        assert_eq!(scalar(&g), 0.0);
        let (d, _) = adversarial_losses(&full(0.0, 6), &full(1.0, 6)).unwrap();
        assert_eq!(scalar(&d), 2.0);
    }

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_generator_loss(1.0, 0.5, 0.2, 100.0, 100.0), 71.0);
        assert_eq!(total_generator_loss(0.7, 0.5, 0.2, 0.0, 0.0), 0.7);
    }
}
