use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::field::OccupancyField;
use crate::real::softplus;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn cube(half: f64) -> Self {
        Self {
            min: [-half; 3],
            max: [half; 3],
        }
    }

    pub fn contains(&self, p: [f64; 3], tol: f64) -> bool {
        (0..3).all(|d| p[d] >= self.min[d] - tol && p[d] <= self.max[d] + tol)
    }

    pub fn extent(&self) -> [f64; 3] {
        std::array::from_fn(|d| self.max[d] - self.min[d])
    }
}

/// Which per-point quantity a grid holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridQuantity {
    /// `α = sigmoid(s)`, extracted at 0.5.
    #[default]
    Occupancy,
    /// `σ = softplus(s)`, for density level sets.
    Density,
}

/// Values on a regular lattice; `x` varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    pub resolution: [usize; 3],
    pub bounds: Aabb,
    pub values: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(resolution: [usize; 3], bounds: Aabb, values: Vec<f64>) -> Result<Self> {
        contract!(
            resolution.iter().all(|&n| n >= 2),
            "grid resolution must be >= 2 per axis, got {resolution:?}"
        );
        contract!(
            (0..3).all(|d| bounds.max[d] > bounds.min[d]),
            "degenerate grid bounds {bounds:?}"
        );
        contract!(
            values.len() == resolution.iter().product::<usize>(),
            "grid {resolution:?} needs {} values, got {}",
            resolution.iter().product::<usize>(),
            values.len()
        );
        Ok(Self {
            resolution,
            bounds,
            values,
        })
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let [nx, ny, _] = self.resolution;
        (k * ny + j) * nx + i
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    /// Lattice spacing `extent/(n − 1)` per axis.
    pub fn spacing(&self) -> [f64; 3] {
        let e = self.bounds.extent();
        std::array::from_fn(|d| e[d] / (self.resolution[d] - 1) as f64)
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let h = self.spacing();
        let ijk = [i, j, k];
        std::array::from_fn(|d| {
            if ijk[d] + 1 == self.resolution[d] {
                self.bounds.max[d]
            } else {
                self.bounds.min[d] + ijk[d] as f64 * h[d]
            }
        })
    }

    /// All lattice points in storage order.
    pub fn points(&self) -> Vec<[f64; 3]> {
        let [nx, ny, nz] = self.resolution;
        let mut out = Vec::with_capacity(nx * ny * nz);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    out.push(self.point(i, j, k));
                }
            }
        }
        out
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Central-difference gradient at every lattice point (one-sided on the
    /// boundary).
    pub fn gradients(&self) -> Vec<[f64; 3]> {
        let [nx, ny, nz] = self.resolution;
        let n = [nx, ny, nz];
        let h = self.spacing();
        let mut out = Vec::with_capacity(self.values.len());
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let ijk = [i, j, k];
                    out.push(std::array::from_fn(|d| {
                        let step = |delta: isize| {
                            let mut q = ijk;
                            q[d] = (q[d] as isize + delta) as usize;
                            self.value(q[0], q[1], q[2])
                        };
                        let lo = if ijk[d] > 0 { -1 } else { 0 };
                        let hi = if ijk[d] + 1 < n[d] { 1 } else { 0 };
                        (step(hi) - step(lo)) / ((hi - lo) as f64 * h[d])
                    }));
                }
            }
        }
        out
    }

    /// Forces every boundary lattice value strictly below `level`, so the
    /// extracted surface closes at the grid boundary.
    pub fn close_boundary(&mut self, level: f64) {
        let cap = level - 1e-3 * level.abs().max(1.0);
        let [nx, ny, nz] = self.resolution;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    if i == 0 || j == 0 || k == 0 || i + 1 == nx || j + 1 == ny || k + 1 == nz {
                        let idx = self.index(i, j, k);
                        self.values[idx] = self.values[idx].min(cap);
                    }
                }
            }
        }
    }
}

/// Evaluates `quantity` of `field` at every lattice point of
/// `resolution` over `bounds`, one z-slice per field call.
pub fn sample_grid(
    field: &dyn OccupancyField,
    resolution: [usize; 3],
    bounds: Aabb,
    quantity: GridQuantity,
) -> Result<ScalarGrid> {
    let mut grid = ScalarGrid::new(resolution, bounds, vec![0.0; resolution.iter().product()])?;
    let pts = grid.points();
    let slice = resolution[0] * resolution[1];
    let mut values = Vec::with_capacity(pts.len());
    for chunk in pts.chunks(slice) {
        match quantity {
            GridQuantity::Occupancy => values.extend(field.occupancies(chunk)?),
            GridQuantity::Density => values.extend(field.logits(chunk)?.into_iter().map(softplus)),
        }
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(crate::error::Error::Evaluation(format!("non-finite grid value {v}")));
    }
    grid.values = values;
    Ok(grid)
}

/// Occupancy on the lattice.
pub fn sample_occupancy_grid(field: &dyn OccupancyField, resolution: [usize; 3], bounds: Aabb) -> Result<ScalarGrid> {
    sample_grid(field, resolution, bounds, GridQuantity::Occupancy)
}
