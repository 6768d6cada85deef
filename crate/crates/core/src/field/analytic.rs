//! Closed-form occupancy fields used as references and by the toy renderer
//! comparisons.

use super::{FieldSample, OccupancyField, RadianceField};
use crate::error::Result;

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// `sigmoid(sharpness·(r − ‖x − c‖))`.
#[derive(Debug, Clone, Copy)]
pub struct SphereField {
    pub center: [f64; 3],
    pub radius: f64,
    pub sharpness: f64,
    pub color: [f64; 3],
}

impl SphereField {
    pub fn new(radius: f64, sharpness: f64) -> Self {
        Self {
            center: [0.0; 3],
            radius,
            sharpness,
            color: [0.8, 0.3, 0.2],
        }
    }
}

impl OccupancyField for SphereField {
    fn logits(&self, points: &[[f64; 3]]) -> Result<Vec<f64>> {
        Ok(points
            .iter()
            .map(|p| {
                let d = std::array::from_fn(|j| p[j] - self.center[j]);
                self.sharpness * (self.radius - norm(d))
            })
            .collect())
    }

    fn logit_gradients(&self, points: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
        Ok(points
            .iter()
            .map(|p| {
                let d: [f64; 3] = std::array::from_fn(|j| p[j] - self.center[j]);
                let n = norm(d).max(1e-300);
                std::array::from_fn(|j| -self.sharpness * d[j] / n)
            })
            .collect())
    }
}

impl RadianceField for SphereField {
    fn samples(&self, points: &[[f64; 3]], _direction: [f64; 3]) -> Result<Vec<FieldSample<f64>>> {
        Ok(self
            .logits(points)?
            .into_iter()
            .map(|l| FieldSample::from_logit(l, self.color))
            .collect())
    }
}

/// `sigmoid(sharpness·(n·x − offset))`: constant normals everywhere.
#[derive(Debug, Clone, Copy)]
pub struct HalfSpaceField {
    pub normal: [f64; 3],
    pub offset: f64,
    pub sharpness: f64,
}

impl HalfSpaceField {
    /// `sigmoid(z)`.
    pub fn z_axis() -> Self {
        Self {
            normal: [0.0, 0.0, 1.0],
            offset: 0.0,
            sharpness: 1.0,
        }
    }
}

impl OccupancyField for HalfSpaceField {
    fn logits(&self, points: &[[f64; 3]]) -> Result<Vec<f64>> {
        Ok(points
            .iter()
            .map(|p| {
                let d: f64 = (0..3).map(|j| self.normal[j] * p[j]).sum();
                self.sharpness * (d - self.offset)
            })
            .collect())
    }

    fn logit_gradients(&self, points: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
        let g = std::array::from_fn(|j| self.sharpness * self.normal[j]);
        Ok(vec![g; points.len()])
    }
}

/// Occupancy that is affine along `direction`:
/// `occupancy = clamp(0.5 + slope·(direction·x − offset))`.
#[derive(Debug, Clone, Copy)]
pub struct RampField {
    pub direction: [f64; 3],
    pub offset: f64,
    pub slope: f64,
}

impl RampField {
    fn occupancy(&self, p: &[f64; 3]) -> f64 {
        let d: f64 = (0..3).map(|j| self.direction[j] * p[j]).sum();
        (0.5 + self.slope * (d - self.offset)).clamp(1e-12, 1.0 - 1e-12)
    }
}

impl OccupancyField for RampField {
    fn logits(&self, points: &[[f64; 3]]) -> Result<Vec<f64>> {
        Ok(points
            .iter()
            .map(|p| {
                let o = self.occupancy(p);
                (o / (1.0 - o)).ln()
            })
            .collect())
    }

    fn occupancies(&self, points: &[[f64; 3]]) -> Result<Vec<f64>> {
        Ok(points.iter().map(|p| self.occupancy(p)).collect())
    }

    fn logit_gradients(&self, points: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
        Ok(points
            .iter()
            .map(|p| {
                let o = self.occupancy(p);
                let k = self.slope / (o * (1.0 - o));
                std::array::from_fn(|j| k * self.direction[j])
            })
            .collect())
    }
}

/// Solid torus around the z axis.
#[derive(Debug, Clone, Copy)]
pub struct TorusField {
    pub major: f64,
    pub minor: f64,
    pub sharpness: f64,
}

impl OccupancyField for TorusField {
    fn logits(&self, points: &[[f64; 3]]) -> Result<Vec<f64>> {
        Ok(points
            .iter()
            .map(|p| {
                let q = (p[0] * p[0] + p[1] * p[1]).sqrt() - self.major;
                self.sharpness * (self.minor - (q * q + p[2] * p[2]).sqrt())
            })
            .collect())
    }

    fn logit_gradients(&self, points: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
        Ok(points
            .iter()
            .map(|p| {
                let rho = (p[0] * p[0] + p[1] * p[1]).sqrt().max(1e-300);
                let q = rho - self.major;
                let d = (q * q + p[2] * p[2]).sqrt().max(1e-300);
                let k = -self.sharpness / d;
                [k * q * p[0] / rho, k * q * p[1] / rho, k * p[2]]
            })
            .collect())
    }
}

/// Spatially constant occupancy.
#[derive(Debug, Clone, Copy)]
pub struct ConstantField {
    pub occupancy: f64,
    pub color: [f64; 3],
}

impl OccupancyField for ConstantField {
    fn logits(&self, points: &[[f64; 3]]) -> Result<Vec<f64>> {
        let l = (self.occupancy / (1.0 - self.occupancy)).ln();
        Ok(vec![l; points.len()])
    }

    fn occupancies(&self, points: &[[f64; 3]]) -> Result<Vec<f64>> {
        Ok(vec![self.occupancy; points.len()])
    }

    fn logit_gradients(&self, points: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
        Ok(vec![[0.0; 3]; points.len()])
    }
}

impl RadianceField for ConstantField {
    fn samples(&self, points: &[[f64; 3]], _direction: [f64; 3]) -> Result<Vec<FieldSample<f64>>> {
        let l = (self.occupancy / (1.0 - self.occupancy)).ln();
        Ok(vec![
            FieldSample {
                color: self.color,
                occupancy: self.occupancy,
                logit: l,
            };
            points.len()
        ])
    }
}
