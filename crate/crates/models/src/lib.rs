//! Neural components of the low-dose PET pipeline, built on candle.
//!
//! * [`transgan`]: transformer-encoded residual generator, conditional
//!   PatchGAN discriminator, frozen dual perceptual encoders, the four
//!   training objectives and the adversarial training loop.
//! * [`sdam`]: joint offset prediction over a slice window, deformable
//!   aggregation, residual reconstruction and its training loop.

pub mod checkpoint;
pub mod data;
pub mod deform_op;
pub mod error;
pub mod params;
pub mod sdam;
pub mod train;
pub mod transgan;

pub use error::{ModelError, Result};
pub use params::ParamStore;
