//! Spatial deformable aggregation: one offset-network pass predicts the
//! sampling offsets of every slice and tap of a window, the window is fused
//! by deformable convolution and a residual network corrects the centre slice.

mod network;
mod train;

pub use network::{LossReduction, RefinedSlice, Sdam, SdamConfig};
pub use train::{refine_volume, sdam_loss, train_sdam, SdamHyper, SdamOutcome};
