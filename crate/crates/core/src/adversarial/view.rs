//! Full-image rendering of the generator for inspection and evaluation.

use ndarray::Array2;
use rand::Rng;

use super::train::{draw_generator_input, render_draw};
use crate::config::RunConfig;
use crate::diffcore::ParameterStore;
use crate::error::Result;
use crate::field::{FieldNetwork, LatentCodes, NeuralField};
use crate::rendering::{generate_rays, render_rays, CameraPose, Image, Patch};
use crate::surface::{find_surface_intersections, place_samples};

const RAY_CHUNK: usize = 1024;

/// Renders every pixel of `pose` for one latent draw, sampling within
/// `delta` of the surface as during training.
#[allow(clippy::too_many_arguments)]
pub fn render_view<R: Rng + ?Sized>(
    cfg: &RunConfig,
    net: &FieldNetwork,
    theta: &ParameterStore<f32>,
    codes: &LatentCodes<f32>,
    pose: &CameraPose,
    delta: f64,
    rng: &mut R,
) -> Result<Image> {
    let (w, h) = (pose.width, pose.height);
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            pixels.push([x as f64 + 0.5, y as f64 + 0.5]);
        }
    }
    let rays = generate_rays(pose, &pixels, cfg.camera.scene_radius)?;
    let field = NeuralField {
        net,
        params: theta,
        codes,
    };
    let n = cfg.render.samples;
    let mut data = Vec::with_capacity(w * h * 3);
    for chunk in rays.chunks(RAY_CHUNK) {
        let hits = find_surface_intersections(&field, chunk, cfg.surface.coarse_samples, cfg.surface.secant_iters)?;
        let mut ts = Array2::zeros((chunk.len(), n));
        for (r, (ray, hit)) in chunk.iter().zip(&hits).enumerate() {
            let row = place_samples(ray, *hit, delta, n, rng)?;
            ts.row_mut(r).assign(&ndarray::ArrayView1::from(&row));
        }
        let (colors, _) = render_rays(net, theta, codes, chunk, &ts, cfg.render.background, cfg.render.alpha_mode)?;
        data.extend(colors.iter().copied());
    }
    Image::new(w, h, data)
}

/// `n` generated K×K patches drawn exactly as in training.
pub fn generated_patches<R: Rng + ?Sized>(
    cfg: &RunConfig,
    net: &FieldNetwork,
    theta: &ParameterStore<f32>,
    delta: f64,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Patch>> {
    (0..n)
        .map(|_| {
            let draw = draw_generator_input(cfg, net, theta, delta, rng)?;
            Ok(render_draw(cfg, net, theta, &draw)?.0)
        })
        .collect()
}

/// Sharpest interval width reached by a configured run.
pub fn final_delta(cfg: &RunConfig) -> f64 {
    let schedule = cfg.train.schedule_for(cfg.camera.scene_radius);
    crate::surface::interval_width(&schedule, cfg.train.iterations)
}
