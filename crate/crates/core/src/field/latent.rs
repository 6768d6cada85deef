use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::real::Real;

/// Shape code `z_s` and appearance code `z_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCodes<T = f32> {
    pub shape: Vec<T>,
    pub appearance: Vec<T>,
}

impl<T: Real> LatentCodes<T> {
    pub fn new(shape: Vec<T>, appearance: Vec<T>) -> Result<Self> {
        contract!(
            !shape.is_empty() && !appearance.is_empty(),
            "latent dimensions must be at least 1"
        );
        contract!(
            shape.iter().chain(&appearance).all(|v| v.is_finite()),
            "latent codes must be finite"
        );
        Ok(Self { shape, appearance })
    }

    pub fn cast<U: Real>(&self) -> LatentCodes<U> {
        LatentCodes {
            shape: self.shape.iter().map(|v| U::lit(v.as_f64())).collect(),
            appearance: self.appearance.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Draws both codes i.i.d. from the standard normal prior.
pub fn sample_latents<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    shape_dim: usize,
    appearance_dim: usize,
) -> Result<LatentCodes<T>> {
    contract!(
        shape_dim >= 1 && appearance_dim >= 1,
        "latent dimensions must be at least 1 (got {shape_dim}, {appearance_dim})"
    );
    let mut draw = |n: usize| -> Vec<T> {
        (0..n)
            .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
            .collect()
    };
    let shape = draw(shape_dim);
    let appearance = draw(appearance_dim);
    Ok(LatentCodes { shape, appearance })
}
