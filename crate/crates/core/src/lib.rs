//! Adversarially trained conditional occupancy/radiance fields rendered from
//! image patches, with marching-cubes mesh export.

pub mod adversarial;
pub mod checks;
pub mod config;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod evaluation;
pub mod field;
pub mod meshing;
pub mod real;
pub mod rendering;
pub mod surface;

pub use error::{Error, Result};
