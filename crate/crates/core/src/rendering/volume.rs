use rand::Rng;
use serde::{Deserialize, Serialize};

use super::camera::{generate_rays, CameraPose, Ray};
use super::patch::{Patch, PatchSpec};
use crate::error::{contract, Error, Result};
use crate::field::{sigma_to_alpha, RadianceField};
use crate::real::{sigmoid, softplus, Real};

/// How the field output becomes a per-sample alpha.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    /// `α = occupancy`.
    #[default]
    Occupancy,
    /// `σ = softplus(logit)`, `α = 1 − exp(−σ·δ)`.
    Density,
}

impl AlphaMode {
    /// Alpha and `∂α/∂logit` for one sample.
    pub fn alpha<T: Real>(self, logit: T, delta: T) -> (T, T) {
        match self {
            AlphaMode::Occupancy => {
                let a = sigmoid(logit);
                (a, a * (T::one() - a))
            }
            AlphaMode::Density => {
                let sigma = softplus(logit);
                let keep = (-sigma * delta).exp();
                (T::one() - keep, keep * delta * sigmoid(logit))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Samples per ray.
    pub samples: usize,
    pub background: [f64; 3],
    pub alpha_mode: AlphaMode,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            samples: 64,
            background: [1.0; 3],
            alpha_mode: AlphaMode::Occupancy,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(self.samples >= 2, "need at least 2 samples per ray");
        contract!(
            self.background.iter().all(|v| (0.0..=1.0).contains(v)),
            "background must lie in [0, 1]"
        );
        Ok(())
    }
}

/// Uniform draw inside each of `n` equal bins of `[t0, t1]`.
pub fn stratified_in<R: Rng + ?Sized>(t0: f64, t1: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let w = (t1 - t0) / n as f64;
    let mut ts: Vec<f64> = (0..n).map(|i| t0 + (i as f64 + rng.random::<f64>()) * w).collect();
    // Keep strictly increasing even if a draw lands on a bin edge.
    for i in 1..n {
        if ts[i] <= ts[i - 1] {
            ts[i] = f64::min(ts[i - 1] + w * 1e-9, t1);
        }
    }
    ts
}

pub fn stratified_samples<R: Rng + ?Sized>(ray: &Ray, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    contract!(n >= 2, "need at least 2 samples per ray, got {n}");
    Ok(stratified_in(ray.t_near, ray.t_far, n, rng))
}

/// Bin midpoints (the deterministic stratified sampler).
pub fn midpoint_samples(ray: &Ray, n: usize) -> Vec<f64> {
    let w = (ray.t_far - ray.t_near) / n as f64;
    (0..n).map(|i| ray.t_near + (i as f64 + 0.5) * w).collect()
}

/// `δ_i = t_{i+1} − t_i`, with `δ_N = t_far − t_N`.
pub fn deltas(ts: &[f64], t_far: f64) -> Vec<f64> {
    let n = ts.len();
    (0..n)
        .map(|i| if i + 1 < n { ts[i + 1] - ts[i] } else { (t_far - ts[i]).max(0.0) })
        .collect()
}

/// Front-to-back alpha compositing. Returns the color and the transmittances
/// `T_1..T_{N+1}` (the last one is the residual weight of the background).
pub fn composite<T: Real>(alphas: &[T], colors: &[[T; 3]], background: [T; 3]) -> ([T; 3], Vec<T>) {
    let mut trans = Vec::with_capacity(alphas.len() + 1);
    let mut t = T::one();
    let mut c = [T::zero(); 3];
    for (a, col) in alphas.iter().zip(colors) {
        trans.push(t);
        let w = t * *a;
        for j in 0..3 {
            c[j] += w * col[j];
        }
        t *= T::one() - *a;
    }
    trans.push(t);
    for j in 0..3 {
        c[j] += t * background[j];
    }
    (c, trans)
}

/// Reverse pass of [`composite`]: `∂L/∂α_k = T_k (c_k − R_k)·∂L/∂C` where
/// `R_k` is the color composited behind sample `k`, and
/// `∂L/∂c_k = T_k α_k ∂L/∂C`.
pub fn composite_backward<T: Real>(
    alphas: &[T],
    colors: &[[T; 3]],
    trans: &[T],
    background: [T; 3],
    d_color: [T; 3],
) -> (Vec<T>, Vec<[T; 3]>) {
    let n = alphas.len();
    let mut d_alpha = vec![T::zero(); n];
    let mut d_col = vec![[T::zero(); 3]; n];
    let mut behind = background;
    for k in (0..n).rev() {
        let (a, c, t) = (alphas[k], colors[k], trans[k]);
        let mut s = T::zero();
        for j in 0..3 {
            s += (c[j] - behind[j]) * d_color[j];
            d_col[k][j] = t * a * d_color[j];
            behind[j] = a * c[j] + (T::one() - a) * behind[j];
        }
        d_alpha[k] = t * s;
    }
    (d_alpha, d_col)
}

/// Per-ray sample record.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySampleBatch {
    pub ts: Vec<f64>,
    pub positions: Vec<[f64; 3]>,
    pub deltas: Vec<f64>,
    pub alphas: Vec<f64>,
    /// `T_1..T_N`; the residual `T_{N+1}` is kept separately.
    pub transmittances: Vec<f64>,
    pub residual: f64,
    pub colors: Vec<[f64; 3]>,
}

impl RaySampleBatch {
    pub fn weights(&self) -> Vec<f64> {
        self.transmittances
            .iter()
            .zip(&self.alphas)
            .map(|(t, a)| t * a)
            .collect()
    }
}

fn check_ts(ray: &Ray, ts: &[f64]) -> Result<()> {
    contract!(!ts.is_empty(), "no samples on ray");
    contract!(
        ts.windows(2).all(|w| w[0] < w[1]),
        "sample positions must be strictly increasing"
    );
    contract!(
        ts[0] >= ray.t_near - 1e-9 && ts[ts.len() - 1] <= ray.t_far + 1e-9,
        "samples leave the ray bounds [{}, {}]",
        ray.t_near,
        ray.t_far
    );
    Ok(())
}

/// Renders one ray through an arbitrary radiance field.
pub fn render_ray(
    field: &dyn RadianceField,
    ray: &Ray,
    ts: &[f64],
    background: [f64; 3],
    mode: AlphaMode,
) -> Result<([f64; 3], RaySampleBatch)> {
    check_ts(ray, ts)?;
    let positions: Vec<[f64; 3]> = ts.iter().map(|&t| ray.at(t)).collect();
    let deltas = deltas(ts, ray.t_far);
    let samples = field.samples(&positions, ray.direction)?;
    let mut alphas = Vec::with_capacity(ts.len());
    let mut colors = Vec::with_capacity(ts.len());
    for (s, &d) in samples.iter().zip(&deltas) {
        if s.logit.is_nan()
            || !s.occupancy.is_finite()
            || s.color.iter().any(|c| !c.is_finite())
        {
            return Err(Error::Evaluation(format!("non-finite field sample {s:?}")));
        }
        let a = match mode {
            AlphaMode::Occupancy => s.occupancy,
            AlphaMode::Density => sigma_to_alpha(softplus(s.logit), d.max(f64::MIN_POSITIVE))?,
        };
        alphas.push(a);
        colors.push(s.color);
    }
    let (color, mut trans) = composite(&alphas, &colors, background);
    let residual = trans.pop().expect("N+1 transmittances");
    Ok((
        color,
        RaySampleBatch {
            ts: ts.to_vec(),
            positions,
            deltas,
            alphas,
            transmittances: trans,
            residual,
            colors,
        },
    ))
}

/// Renders the K×K patch grid of `spec`, one stratified sample set per ray
/// drawn in row-major ray order.
#[allow(clippy::too_many_arguments)]
pub fn render_patch<R: Rng + ?Sized>(
    field: &dyn RadianceField,
    pose: &CameraPose,
    spec: &PatchSpec,
    k: usize,
    config: &RenderConfig,
    scene_radius: f64,
    rng: &mut R,
) -> Result<Patch<f64>> {
    config.validate()?;
    let rays = generate_rays(pose, &spec.pixels(k, pose.width, pose.height), scene_radius)?;
    let ts: Vec<Vec<f64>> = rays
        .iter()
        .map(|r| stratified_samples(r, config.samples, rng))
        .collect::<Result<_>>()?;
    let mut pixels = Vec::with_capacity(k * k * 3);
    for (ray, ts) in rays.iter().zip(&ts) {
        let (c, _) = render_ray(field, ray, ts, config.background, config.alpha_mode)?;
        pixels.extend(c);
    }
    Patch::new(k, pixels)
}
