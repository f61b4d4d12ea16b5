//! Core data model and numerics for low-dose PET reconstruction experiments.
//!
//! Everything in this crate is framework-free: synthetic phantoms and dose
//! thinning, the `.pvol` volume container, cross-validation folds, image
//! quality metrics, SUVR agreement analysis and the position-specific
//! deformable sampling kernel used by the multi-slice refinement network.

pub mod colormap;
pub mod deform;
pub mod error;
pub mod folds;
pub mod metrics;
pub mod phantom;
pub mod pvol;
pub mod suvr;
pub mod volume;
pub mod window;

pub use error::{Error, Result};
pub use folds::{make_folds, FoldAssignment, FoldRoles};
pub use phantom::{generate_phantom, simulate_low_dose, Phantom, PhantomSpec};
pub use suvr::RoiAtlas;
pub use volume::{Modality, Volume3D};
pub use window::{extract_window, SliceWindow};
