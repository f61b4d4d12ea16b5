//! Transformer-encoded adversarial generation of full-dose slices.

mod discriminator;
mod generator;
pub mod losses;
mod perceptual;
mod train;

use serde::{Deserialize, Serialize};

pub use discriminator::{Discriminator, DiscriminatorConfig, DISCRIMINATOR_LAYERS};
pub use generator::{Generator, GeneratorConfig};
pub use losses::{adversarial_losses, charbonnier_loss, perceptual_loss, total_generator_loss, LossBundle, DEFAULT_EPS};
pub use perceptual::{EncoderConfig, FeatureEncoder, PerceptualEncoders, Topology};
pub use train::{train_transgan, TransGan, TransGanHyper, TransGanOutcome};

/// Everything needed to rebuild the transGAN networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransGanConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub encoders: EncoderConfig,
}

impl Default for TransGanConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            encoders: EncoderConfig::default(),
        }
    }
}
