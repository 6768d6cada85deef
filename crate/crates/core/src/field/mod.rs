//! The conditional field: position, view direction, shape and appearance
//! codes in; color and occupancy out.

pub mod analytic;
pub mod encoding;
pub mod latent;
pub mod network;

use ndarray::Array2;

pub use latent::{sample_latents, LatentCodes};
pub use network::{FieldConfig, FieldNetwork};

use crate::diffcore::ParameterStore;
use crate::error::{contract, Result};
use crate::real::{sigmoid, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldInput<T = f32> {
    pub x: [T; 3],
    pub d: [T; 3],
}

impl<T: Real> FieldInput<T> {
    pub fn new(x: [T; 3], d: [T; 3]) -> Result<Self> {
        let norm = d.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
        contract!(
            (norm - 1.0).abs() <= 1e-6,
            "view direction must be unit length (norm {norm})"
        );
        contract!(
            x.iter().all(|v| v.is_finite()),
            "position must be finite"
        );
        Ok(Self { x, d })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample<T = f32> {
    pub color: [T; 3],
    pub occupancy: T,
    /// Pre-sigmoid occupancy.
    pub logit: T,
}

impl<T: Real> FieldSample<T> {
    pub fn from_logit(logit: T, color: [T; 3]) -> Self {
        Self {
            color,
            occupancy: sigmoid(logit),
            logit,
        }
    }
}

/// `α = 1 − exp(−σ·δ)`.
pub fn sigma_to_alpha(sigma: f64, delta: f64) -> Result<f64> {
    contract!(sigma >= 0.0, "density must be non-negative, got {sigma}");
    contract!(delta > 0.0, "sample spacing must be positive, got {delta}");
    Ok(-(-sigma * delta).exp_m1())
}

/// A scalar occupancy field queried in scene coordinates.
pub trait OccupancyField: Sync {
    /// Pre-sigmoid occupancy at each point.
    fn logits(&self, points: &[[f64; 3]]) -> Result<Vec<f64>>;

    /// `∇_x` of the pre-sigmoid occupancy at each point.
    fn logit_gradients(&self, points: &[[f64; 3]]) -> Result<Vec<[f64; 3]>>;

    fn occupancies(&self, points: &[[f64; 3]]) -> Result<Vec<f64>> {
        Ok(self.logits(points)?.into_iter().map(sigmoid).collect())
    }
}

/// An occupancy field that also emits view-dependent color.
pub trait RadianceField: OccupancyField {
    fn samples(&self, points: &[[f64; 3]], direction: [f64; 3]) -> Result<Vec<FieldSample<f64>>>;
}

/// A [`FieldNetwork`] bound to parameters and latent codes.
pub struct NeuralField<'a, T: Real = f32> {
    pub net: &'a FieldNetwork,
    pub params: &'a ParameterStore<T>,
    pub codes: &'a LatentCodes<T>,
}

fn to_matrix<T: Real>(points: &[[f64; 3]]) -> Array2<T> {
    Array2::from_shape_fn((points.len(), 3), |(i, j)| T::lit(points[i][j]))
}

impl<T: Real> OccupancyField for NeuralField<'_, T> {
    fn logits(&self, points: &[[f64; 3]]) -> Result<Vec<f64>> {
        let l = self
            .net
            .occupancy_logits(self.params, &to_matrix(points), &self.codes.shape)?;
        Ok(l.iter().map(|v| v.as_f64()).collect())
    }

    fn logit_gradients(&self, points: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
        let lg = self
            .net
            .logit_gradient(self.params, &to_matrix(points), &self.codes.shape)?;
        Ok((0..points.len())
            .map(|i| std::array::from_fn(|j| lg.gradients[[i, j]].as_f64()))
            .collect())
    }
}

impl<T: Real> RadianceField for NeuralField<'_, T> {
    fn samples(&self, points: &[[f64; 3]], direction: [f64; 3]) -> Result<Vec<FieldSample<f64>>> {
        let pts = to_matrix::<T>(points);
        let dirs = Array2::from_shape_fn((points.len(), 3), |(_, j)| T::lit(direction[j]));
        let f = self.net.forward(self.params, &pts, &dirs, self.codes)?;
        Ok((0..points.len())
            .map(|i| {
                FieldSample::from_logit(
                    f.logits[i].as_f64(),
                    std::array::from_fn(|j| f.colors[[i, j]].as_f64()),
                )
            })
            .collect())
    }
}

#[cfg(test)]
mod tests;
