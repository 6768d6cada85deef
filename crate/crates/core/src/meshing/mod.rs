//! Occupancy grids, marching-cubes isosurfaces, mesh checks and export.

pub mod cubes;
pub mod grid;
pub mod mesh;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::field::OccupancyField;

pub use cubes::marching_cubes;
pub use grid::{sample_grid, sample_occupancy_grid, Aabb, GridQuantity, ScalarGrid};
pub use mesh::{export_mesh, import_mesh, mesh_diagnostics, MeshDiagnostics, MeshFormat, TriangleMesh};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    /// Lattice points per axis.
    pub resolution: usize,
    /// Push boundary values outside so meshes always close.
    pub close_boundary: bool,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            resolution: 128,
            close_boundary: true,
        }
    }
}

impl MeshConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(self.resolution >= 2, "mesh resolution must be at least 2");
        Ok(())
    }
}

/// What to extract: the occupancy 0.5 surface or a density level set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IsoLevel {
    Occupancy,
    Density(f64),
}

impl IsoLevel {
    pub fn quantity(self) -> GridQuantity {
        match self {
            IsoLevel::Occupancy => GridQuantity::Occupancy,
            IsoLevel::Density(_) => GridQuantity::Density,
        }
    }

    pub fn value(self) -> f64 {
        match self {
            IsoLevel::Occupancy => 0.5,
            IsoLevel::Density(s) => s,
        }
    }
}

/// Samples `field` on `bounds` and extracts the requested level set.
pub fn extract_mesh(field: &dyn OccupancyField, config: &MeshConfig, bounds: Aabb, level: IsoLevel) -> Result<TriangleMesh> {
    config.validate()?;
    let n = config.resolution;
    let mut grid = sample_grid(field, [n; 3], bounds, level.quantity())?;
    if config.close_boundary {
        grid.close_boundary(level.value());
    }
    Ok(marching_cubes(&grid, level.value()))
}
