use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::real::Real;

/// Row-major RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "image {width}x{height} needs {} values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        std::array::from_fn(|c| self.get(x, y, c))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
        Ok(Self {
            width: w as usize,
            height: h as usize,
            data,
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .ok_or_else(|| Error::Shape("image buffer size".into()))?;
        buf.save(path)
            .map_err(|e| Error::Load(format!("writing {}: {e}", path.display())))
    }
}

/// The patching strategy: patch size and the range of patch scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchConfig {
    pub size: usize,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            size: 32,
            scale_min: 0.5,
            scale_max: 1.0,
        }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(self.size >= 1, "patch size must be positive");
        contract!(
            self.scale_min > 0.0 && self.scale_min <= self.scale_max,
            "patch scales must satisfy 0 < min <= max (got [{}, {}])",
            self.scale_min,
            self.scale_max
        );
        Ok(())
    }
}

/// Patch center in normalized image coordinates and relative scale. A scale
/// of 1 spans the whole image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchSpec {
    pub center: [f64; 2],
    pub scale: f64,
}

impl PatchSpec {
    pub fn full() -> Self {
        Self {
            center: [0.5, 0.5],
            scale: 1.0,
        }
    }

    /// Continuous pixel coordinates of the K×K grid, row-major.
    pub fn pixels(&self, k: usize, width: usize, height: usize) -> Vec<[f64; 2]> {
        let (w, h) = (width as f64, height as f64);
        let offset = |i: usize| self.scale * ((i as f64 + 0.5) / k as f64 - 0.5);
        let mut out = Vec::with_capacity(k * k);
        for j in 0..k {
            for i in 0..k {
                out.push([self.center[0] * w + offset(i) * w, self.center[1] * h + offset(j) * h]);
            }
        }
        out
    }

    /// Whether every grid point lies between the outermost pixel centers.
    pub fn in_bounds(&self, k: usize, width: usize, height: usize) -> bool {
        let tol = 1e-9;
        self.pixels(k, width, height).iter().all(|p| {
            p[0] >= 0.5 - tol
                && p[0] <= width as f64 - 0.5 + tol
                && p[1] >= 0.5 - tol
                && p[1] <= height as f64 - 0.5 + tol
        })
    }
}

/// Valid normalized center range along one axis of `n` pixels.
fn center_range(k: usize, n: usize, scale: f64) -> Option<(f64, f64)> {
    let n = n as f64;
    let half = scale * n * (k as f64 - 1.0) / (2.0 * k as f64);
    let (lo, hi) = ((0.5 + half) / n, (n - 0.5 - half) / n);
    (lo <= hi + 1e-12).then_some((lo, hi.max(lo)))
}

/// Draws `s ∼ U[scale_min, scale_max]`, then a center uniform over the
/// positions that keep the grid inside the image.
pub fn sample_patch_spec<R: Rng + ?Sized>(
    rng: &mut R,
    config: &PatchConfig,
    width: usize,
    height: usize,
) -> Result<PatchSpec> {
    config.validate()?;
    let k = config.size;
    contract!(
        k <= width.min(height),
        "patch size {k} exceeds image {width}x{height}"
    );
    let feasible = |s| center_range(k, width, s).zip(center_range(k, height, s));
    contract!(
        feasible(config.scale_max).is_some(),
        "no patch center keeps a scale-{} grid inside a {width}x{height} image",
        config.scale_max
    );
    let scale = if config.scale_min == config.scale_max {
        config.scale_min
    } else {
        rng.random_range(config.scale_min..=config.scale_max)
    };
    let ((x0, x1), (y0, y1)) = feasible(scale).expect("feasible at scale_max implies smaller");
    let mut draw = |lo: f64, hi: f64| if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let cx = draw(x0, x1);
    let cy = draw(y0, y1);
    Ok(PatchSpec {
        center: [cx, cy],
        scale,
    })
}

/// K×K RGB patch, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch<T = f32> {
    pub size: usize,
    pub pixels: Vec<T>,
}

impl<T: Real> Patch<T> {
    pub fn new(size: usize, pixels: Vec<T>) -> Result<Self> {
        if pixels.len() != size * size * 3 {
            return Err(Error::Shape(format!(
                "patch of size {size} needs {} values, got {}",
                size * size * 3,
                pixels.len()
            )));
        }
        Ok(Self { size, pixels })
    }

    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            pixels: vec![T::zero(); size * size * 3],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.pixels[(y * self.size + x) * 3 + c]
    }

    /// Channels-first matrix (`3 × K²`).
    pub fn to_channels(&self) -> Array2<T> {
        let n = self.size * self.size;
        Array2::from_shape_fn((3, n), |(c, i)| self.pixels[i * 3 + c])
    }

    pub fn from_channels(size: usize, m: &Array2<T>) -> Self {
        let n = size * size;
        let mut pixels = vec![T::zero(); n * 3];
        for c in 0..3 {
            for i in 0..n {
                pixels[i * 3 + c] = m[[c, i]];
            }
        }
        Self { size, pixels }
    }

    pub fn cast<U: Real>(&self) -> Patch<U> {
        Patch {
            size: self.size,
            pixels: self.pixels.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn to_image(&self) -> Image {
        Image {
            width: self.size,
            height: self.size,
            data: self.pixels.iter().map(|v| v.as_f64() as f32).collect(),
        }
    }
}

/// Bilinear sample at a continuous pixel coordinate (pixel `i` has its
/// center at `i + 0.5`).
fn bilinear(image: &Image, p: [f64; 2]) -> [f32; 3] {
    let split = |v: f64, n: usize| -> (usize, f32) {
        let f = v - 0.5;
        let i = (f.floor().max(0.0) as usize).min(n - 1);
        (i, (f - i as f64) as f32)
    };
    let (x0, fx) = split(p[0], image.width);
    let (y0, fy) = split(p[1], image.height);
    let x1 = (x0 + 1).min(image.width - 1);
    let y1 = (y0 + 1).min(image.height - 1);
    std::array::from_fn(|c| {
        let lerp = |a: f32, b: f32, t: f32| a + (b - a) * t;
        let top = lerp(image.get(x0, y0, c), image.get(x1, y0, c), fx);
        let bottom = lerp(image.get(x0, y1, c), image.get(x1, y1, c), fx);
        lerp(top, bottom, fy)
    })
}

/// The patching operator: bilinear resampling of `image` on the patch grid.
pub fn extract_patch(image: &Image, spec: &PatchSpec, k: usize) -> Result<Patch> {
    contract!(
        spec.in_bounds(k, image.width, image.height),
        "patch grid {spec:?} leaves the {}x{} image",
        image.width,
        image.height
    );
    let pixels = spec
        .pixels(k, image.width, image.height)
        .into_iter()
        .flat_map(|p| bilinear(image, p))
        .collect();
    Ok(Patch { size: k, pixels })
}
