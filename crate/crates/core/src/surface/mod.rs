//! Implicit-surface machinery: ray intersection search, the narrowing sample
//! interval, surface normals and the normal-smoothness loss.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{GradientRecord, ParameterStore};
use crate::error::{contract, Error, Result};
use crate::field::{FieldNetwork, OccupancyField};
use crate::real::{sigmoid, Real};
use crate::rendering::volume::stratified_in;
use crate::rendering::Ray;

/// Exponentially narrowing sampling interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalSchedule {
    pub delta_max: f64,
    pub delta_min: f64,
    pub decay_rate: f64,
    pub start_iteration: usize,
}

impl IntervalSchedule {
    pub fn new(delta_max: f64, delta_min: f64, decay_rate: f64, start_iteration: usize) -> Result<Self> {
        let s = Self {
            delta_max,
            delta_min,
            decay_rate,
            start_iteration,
        };
        s.validate()?;
        Ok(s)
    }

    /// Starts at the full ray extent and reaches 5% of it after 80% of
    /// `iterations`.
    pub fn for_training(extent: f64, iterations: usize) -> Self {
        let horizon = (0.8 * iterations.max(1) as f64).max(1.0);
        Self {
            delta_max: extent,
            delta_min: 0.05 * extent,
            decay_rate: 20f64.ln() / horizon,
            start_iteration: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        contract!(
            self.delta_max >= self.delta_min && self.delta_min > 0.0,
            "interval widths must satisfy max >= min > 0 (got {}, {})",
            self.delta_max,
            self.delta_min
        );
        contract!(self.decay_rate > 0.0, "decay rate must be positive");
        Ok(())
    }
}

/// `Δ = max(δ_min, δ_max·exp(−β·max(0, it − start)))`.
pub fn interval_width(schedule: &IntervalSchedule, iteration: usize) -> f64 {
    let k = iteration.saturating_sub(schedule.start_iteration) as f64;
    (schedule.delta_max * (-schedule.decay_rate * k).exp()).max(schedule.delta_min)
}

/// Surface search and loss settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceConfig {
    pub coarse_samples: usize,
    pub secant_iters: usize,
    /// Norm of the normal-smoothness offset.
    pub epsilon: f64,
    /// Cap on surface points per smoothness evaluation.
    pub max_points: usize,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self {
            coarse_samples: 64,
            secant_iters: 8,
            epsilon: 0.01,
            max_points: 256,
        }
    }
}

impl SurfaceConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(self.coarse_samples >= 2, "need at least 2 coarse samples");
        contract!(self.epsilon >= 0.0, "epsilon must be non-negative");
        Ok(())
    }
}

/// Roots are accepted once `|α − 0.5|` drops below this.
const ROOT_TOL: f64 = 1e-4;
/// Secant steps stop early below this residual.
const EXACT_TOL: f64 = 1e-12;
const MAX_BISECTIONS: usize = 80;

/// Sign-changing bracket: `f(lo) < 0 < f(hi)`, plus the Illinois-weighted
/// values used for the next secant point.
struct Bracket {
    ray: usize,
    lo: f64,
    f_lo: f64,
    w_lo: f64,
    hi: f64,
    f_hi: f64,
    w_hi: f64,
    side: i8,
}

impl Bracket {
    fn best(&self) -> (f64, f64) {
        if self.f_lo.abs() <= self.f_hi.abs() {
            (self.lo, self.f_lo)
        } else {
            (self.hi, self.f_hi)
        }
    }

    fn probe(&self, secant: bool) -> f64 {
        let mid = 0.5 * (self.lo + self.hi);
        if !secant {
            return mid;
        }
        let t = self.lo - self.w_lo * (self.hi - self.lo) / (self.w_hi - self.w_lo);
        let (a, b) = (self.lo.min(self.hi), self.lo.max(self.hi));
        if t > a && t < b {
            t
        } else {
            mid
        }
    }

    fn update(&mut self, t: f64, f: f64) {
        if f < 0.0 {
            self.lo = t;
            self.f_lo = f;
            self.w_lo = f;
            if self.side < 0 {
                self.w_hi *= 0.5;
            }
            self.side = -1;
        } else {
            self.hi = t;
            self.f_hi = f;
            self.w_hi = f;
            if self.side > 0 {
                self.w_lo *= 0.5;
            }
            self.side = 1;
        }
    }
}

fn eval_at(field: &dyn OccupancyField, rays: &[Ray], items: &[(usize, f64)]) -> Result<Vec<f64>> {
    let pts: Vec<[f64; 3]> = items.iter().map(|&(r, t)| rays[r].at(t)).collect();
    let occ = field.occupancies(&pts)?;
    if let Some(v) = occ.iter().find(|v| !v.is_finite()) {
        return Err(Error::Evaluation(format!("non-finite occupancy {v} during root search")));
    }
    Ok(occ.into_iter().map(|o| o - 0.5).collect())
}

/// First outside→inside crossing of the 0.5 level on each ray: a coarse scan
/// over `coarse_n` evenly spaced points, then Illinois-secant refinement
/// (falling back to bisection if the secant steps do not meet tolerance).
pub fn find_surface_intersections(
    field: &dyn OccupancyField,
    rays: &[Ray],
    coarse_n: usize,
    secant_iters: usize,
) -> Result<Vec<Option<f64>>> {
    contract!(coarse_n >= 2, "need at least 2 coarse samples, got {coarse_n}");
    let grid: Vec<(usize, f64)> = rays
        .iter()
        .enumerate()
        .flat_map(|(r, ray)| {
            let step = (ray.t_far - ray.t_near) / (coarse_n - 1) as f64;
            (0..coarse_n).map(move |k| (r, ray.t_near + k as f64 * step))
        })
        .collect();
    let f = eval_at(field, rays, &grid)?;
    let mut brackets = Vec::new();
    for r in 0..rays.len() {
        let row = &f[r * coarse_n..(r + 1) * coarse_n];
        let ts = &grid[r * coarse_n..(r + 1) * coarse_n];
        if let Some(k) = (0..coarse_n - 1).find(|&k| row[k] < 0.0 && row[k + 1] >= 0.0) {
            brackets.push(Bracket {
                ray: r,
                lo: ts[k].1,
                f_lo: row[k],
                w_lo: row[k],
                hi: ts[k + 1].1,
                f_hi: row[k + 1],
                w_hi: row[k + 1],
                side: 0,
            });
        }
    }

    let mut active: Vec<usize> = (0..brackets.len()).collect();
    for it in 0..secant_iters + MAX_BISECTIONS {
        let secant = it < secant_iters;
        let tol = if secant { EXACT_TOL } else { ROOT_TOL };
        active.retain(|&i| brackets[i].best().1.abs() >= tol);
        if active.is_empty() {
            break;
        }
        let probes: Vec<(usize, f64)> = active
            .iter()
            .map(|&i| (brackets[i].ray, brackets[i].probe(secant)))
            .collect();
        let fc = eval_at(field, rays, &probes)?;
        for ((&i, &(_, t)), &f) in active.iter().zip(&probes).zip(&fc) {
            brackets[i].update(t, f);
        }
    }

    let mut out = vec![None; rays.len()];
    for br in &brackets {
        let (t, f) = br.best();
        if f.abs() < 1e-3 {
            out[br.ray] = Some(t);
        }
    }
    Ok(out)
}

/// Single-ray form of [`find_surface_intersections`].
pub fn find_surface_intersection(
    field: &dyn OccupancyField,
    ray: &Ray,
    coarse_n: usize,
    secant_iters: usize,
) -> Result<Option<f64>> {
    Ok(find_surface_intersections(field, std::slice::from_ref(ray), coarse_n, secant_iters)?[0])
}

/// Stratified samples on `[t_s − Δ/2, t_s + Δ/2]` clipped to the ray, or on
/// the full ray when there is no surface hit.
pub fn place_samples<R: Rng + ?Sized>(
    ray: &Ray,
    t_s: Option<f64>,
    delta: f64,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    contract!(n >= 2, "need at least 2 samples per ray, got {n}");
    contract!(delta > 0.0, "interval width must be positive, got {delta}");
    let (lo, hi) = match t_s {
        Some(t) => (
            (t - 0.5 * delta).max(ray.t_near),
            (t + 0.5 * delta).min(ray.t_far),
        ),
        None => (ray.t_near, ray.t_far),
    };
    contract!(lo < hi, "sample interval [{lo}, {hi}] is empty");
    Ok(stratified_in(lo, hi, n, rng))
}

/// Occupancy gradient norm below which a normal is undefined.
const DEGENERATE_GRAD: f64 = 1e-12;

/// Unit normal `∇α/‖∇α‖` at each point (pointing toward higher occupancy),
/// or `None` where the gradient is degenerate.
fn normals(field: &dyn OccupancyField, points: &[[f64; 3]]) -> Result<Vec<Option<[f64; 3]>>> {
    let occ = field.occupancies(points)?;
    let grads = field.logit_gradients(points)?;
    Ok(occ
        .iter()
        .zip(&grads)
        .map(|(&o, g)| {
            let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(o * (1.0 - o) * gn >= DEGENERATE_GRAD) {
                return None;
            }
            Some(g.map(|v| v / gn))
        })
        .collect())
}

pub fn surface_normal(field: &dyn OccupancyField, x: [f64; 3]) -> Result<[f64; 3]> {
    match normals(field, &[x])?[0] {
        Some(n) => Ok(n),
        None => {
            let g = field.logit_gradients(&[x])?[0];
            let o = field.occupancies(&[x])?[0];
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt() * o * (1.0 - o);
            Err(Error::DegenerateGradient(norm))
        }
    }
}

/// Surface hits and their random offsets, frozen so the smoothness loss can
/// be re-evaluated (and differentiated) deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceProbe {
    pub points: Vec<[f64; 3]>,
    pub offsets: Vec<[f64; 3]>,
    /// Index of the ray each point came from.
    pub rays: Vec<usize>,
}

/// Uniform direction on the sphere of radius `scale`.
pub fn sphere_offset<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> [f64; 3] {
    loop {
        let g: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-12 {
            return g.map(|v| scale * v / n);
        }
    }
}

/// Intersects `rays` with the surface and draws one offset per hit (in ray
/// order), keeping at most `config.max_points` hits.
pub fn probe_surface<R: Rng + ?Sized>(
    field: &dyn OccupancyField,
    rays: &[Ray],
    config: &SurfaceConfig,
    rng: &mut R,
) -> Result<SurfaceProbe> {
    config.validate()?;
    let hits = find_surface_intersections(field, rays, config.coarse_samples, config.secant_iters)?;
    Ok(probe_from_hits(rays, &hits, config, rng))
}

/// Builds a probe from precomputed hit distances (one per ray).
pub fn probe_from_hits<R: Rng + ?Sized>(
    rays: &[Ray],
    hits: &[Option<f64>],
    config: &SurfaceConfig,
    rng: &mut R,
) -> SurfaceProbe {
    let mut probe = SurfaceProbe {
        points: Vec::new(),
        offsets: Vec::new(),
        rays: Vec::new(),
    };
    for (r, t) in hits.iter().enumerate() {
        if let Some(t) = *t {
            if probe.points.len() == config.max_points {
                break;
            }
            probe.points.push(rays[r].at(t));
            probe.offsets.push(sphere_offset(rng, config.epsilon));
            probe.rays.push(r);
        }
    }
    probe
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessValue {
    /// `Σ ‖n(x) − n(x + ε)‖` over the points used.
    pub loss: f64,
    pub used: usize,
    /// Points dropped because a normal was degenerate.
    pub skipped: usize,
}

fn shifted(probe: &SurfaceProbe) -> Vec<[f64; 3]> {
    probe
        .points
        .iter()
        .zip(&probe.offsets)
        .map(|(x, e)| std::array::from_fn(|j| x[j] + e[j]))
        .collect()
}

/// Smoothness loss of an arbitrary field on a frozen probe.
pub fn smoothness_value(field: &dyn OccupancyField, probe: &SurfaceProbe) -> Result<SmoothnessValue> {
    let a = normals(field, &probe.points)?;
    let b = normals(field, &shifted(probe))?;
    let mut v = SmoothnessValue {
        loss: 0.0,
        used: 0,
        skipped: 0,
    };
    for (na, nb) in a.iter().zip(&b) {
        match (na, nb) {
            (Some(na), Some(nb)) => {
                v.loss += (0..3).map(|j| (na[j] - nb[j]).powi(2)).sum::<f64>().sqrt();
                v.used += 1;
            }
            _ => v.skipped += 1,
        }
    }
    Ok(v)
}

/// Casts `rays` (the rays of one camera), finds surface points, and sums the
/// normal differences under random offsets of norm `config.epsilon`.
pub fn smoothness_loss<R: Rng + ?Sized>(
    field: &dyn OccupancyField,
    rays: &[Ray],
    config: &SurfaceConfig,
    rng: &mut R,
) -> Result<SmoothnessValue> {
    let probe = probe_surface(field, rays, config, rng)?;
    smoothness_value(field, &probe)
}

/// Smoothness loss of a neural field on a frozen probe, accumulating
/// `weight · ∂loss/∂θ` into `grads`. Surface points are held fixed.
pub fn smoothness_neural<T: Real>(
    net: &FieldNetwork,
    p: &ParameterStore<T>,
    shape: &[T],
    probe: &SurfaceProbe,
    weight: T,
    grads: &mut GradientRecord<T>,
) -> Result<SmoothnessValue> {
    let m = probe.points.len();
    let mut v = SmoothnessValue {
        loss: 0.0,
        used: 0,
        skipped: 0,
    };
    if m == 0 {
        return Ok(v);
    }
    let all: Vec<[f64; 3]> = probe.points.iter().copied().chain(shifted(probe)).collect();
    let pts = Array2::from_shape_fn((2 * m, 3), |(i, j)| T::lit(all[i][j]));
    let lg = net.logit_gradient(p, &pts, shape)?;
    let g = |i: usize| -> [T; 3] { std::array::from_fn(|j| lg.gradients[[i, j]]) };
    let norm = |v: [T; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let mut d_grad = Array2::<T>::zeros((2 * m, 3));
    for i in 0..m {
        let (ga, gb) = (g(i), g(m + i));
        let (la, lb) = (norm(ga), norm(gb));
        let occ_slope = |s: T| {
            let o = sigmoid(s);
            o * (T::one() - o)
        };
        let ok = |s: T, n: T| (occ_slope(s) * n).as_f64() >= DEGENERATE_GRAD;
        if !(ok(lg.logits[i], la) && ok(lg.logits[m + i], lb)) {
            v.skipped += 1;
            continue;
        }
        let na = ga.map(|x| x / la);
        let nb = gb.map(|x| x / lb);
        let diff: [T; 3] = std::array::from_fn(|j| na[j] - nb[j]);
        let dn = norm(diff);
        v.loss += dn.as_f64();
        v.used += 1;
        if dn == T::zero() {
            continue;
        }
        // ∂‖na − nb‖/∂na = diff/‖diff‖; ∂n/∂g = (I − n nᵀ)/‖g‖.
        let u = diff.map(|x| weight * x / dn);
        for (row, n, l, sgn) in [(i, na, la, T::one()), (m + i, nb, lb, -T::one())] {
            let dot = (0..3).map(|j| n[j] * u[j]).fold(T::zero(), |a, b| a + b);
            for j in 0..3 {
                d_grad[[row, j]] = sgn * (u[j] - n[j] * dot) / l;
            }
        }
    }
    net.logit_gradient_backward(p, &lg, &d_grad, grads);
    Ok(v)
}
