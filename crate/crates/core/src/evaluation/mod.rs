//! Fréchet distance between patch feature sets and latent interpolation.

mod frechet;
mod interpolate;

use rayon::prelude::*;

use crate::error::{contract, Result};
use crate::rendering::Patch;

pub use frechet::{frechet_distance, FeatureStats};
pub use interpolate::{interpolate_codes, Freeze};

/// A feature map from K×K patches to fixed-length vectors.
pub trait Embedder: Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn embed(&self, patch: &Patch) -> Result<Vec<f64>>;
}

/// Grayscale box-downsampling to `grid × grid`, flattened row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolEmbedder {
    pub grid: usize,
}

impl Default for PoolEmbedder {
    fn default() -> Self {
        Self { grid: 8 }
    }
}

/// Length of the overlap of `[a0, a1)` and `[b0, b1)`.
fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

impl Embedder for PoolEmbedder {
    fn name(&self) -> &str {
        "gray-pool"
    }

    fn dim(&self) -> usize {
        self.grid * self.grid
    }

    /// Each output cell is the area-weighted mean over the source pixels it
    /// covers, so any K works.
    fn embed(&self, patch: &Patch) -> Result<Vec<f64>> {
        contract!(self.grid >= 1, "pool grid must be at least 1");
        let k = patch.size;
        contract!(
            patch.pixels.len() == 3 * k * k && k >= 1,
            "malformed {k}x{k} patch with {} values",
            patch.pixels.len()
        );
        let g = self.grid;
        let gray = |x: usize, y: usize| {
            let i = 3 * (y * k + x);
            patch.pixels[i..i + 3].iter().map(|&c| c as f64).sum::<f64>() / 3.0
        };
        let cell = k as f64 / g as f64;
        let mut out = vec![0.0; g * g];
        for (oy, row) in out.chunks_mut(g).enumerate() {
            let (y0, y1) = (oy as f64 * cell, (oy + 1) as f64 * cell);
            for (ox, v) in row.iter_mut().enumerate() {
                let (x0, x1) = (ox as f64 * cell, (ox + 1) as f64 * cell);
                let mut acc = 0.0;
                for y in (y0.floor() as usize)..(y1.ceil() as usize).min(k) {
                    let wy = overlap(y0, y1, y as f64, y as f64 + 1.0);
                    for x in (x0.floor() as usize)..(x1.ceil() as usize).min(k) {
                        acc += wy * overlap(x0, x1, x as f64, x as f64 + 1.0) * gray(x, y);
                    }
                }
                *v = acc / (cell * cell);
            }
        }
        Ok(out)
    }
}

/// Embeds each patch; all patches must share one size.
pub fn embed_patches(patches: &[Patch], embedder: &dyn Embedder) -> Result<Vec<Vec<f64>>> {
    if let Some(first) = patches.first() {
        contract!(
            patches.iter().all(|p| p.size == first.size),
            "patches must share one size"
        );
    }
    patches.par_iter().map(|p| embedder.embed(p)).collect()
}

/// One row of the evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub value: f64,
    pub n_real: usize,
    pub n_fake: usize,
    pub embedder: String,
}

impl FdReport {
    pub const HEADER: &'static str = "metric,value,n_real,n_fake,embedder";

    pub fn csv(&self) -> String {
        format!(
            "{}\nfd_proxy,{},{},{},{}\n",
            Self::HEADER,
            self.value,
            self.n_real,
            self.n_fake,
            self.embedder
        )
    }
}

/// FD between embedded real and generated patches.
pub fn patch_fd(real: &[Patch], fake: &[Patch], embedder: &dyn Embedder) -> Result<FdReport> {
    let a = FeatureStats::from_features(&embed_patches(real, embedder)?)?;
    let b = FeatureStats::from_features(&embed_patches(fake, embedder)?)?;
    Ok(FdReport {
        value: frechet_distance(&a, &b)?,
        n_real: real.len(),
        n_fake: fake.len(),
        embedder: embedder.name().to_string(),
    })
}
