//! Finite-difference verification of every training loss, in `f64`, on the
//! configured architecture.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adversarial::{
    discriminator_gradient, draw_generator_input, generator_gradient, r1_penalty, render_draw, ConvDiscriminator,
    Critic, GeneratorDraw, RenderedDraw,
};
use crate::config::RunConfig;
use crate::diffcore::{finite_difference_check, FnObjective, GradCheckReport, GradientRecord, ParameterStore};
use crate::error::{contract, Error, Result};
use crate::field::FieldNetwork;
use crate::real::softplus;
use crate::rendering::{render_rays_backward, Patch};
use crate::surface::smoothness_neural;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteSettings {
    /// Coordinates probed per loss term.
    pub samples: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Generated patches in the generator-side checks.
    pub batch: usize,
}

impl Default for SuiteSettings {
    fn default() -> Self {
        Self {
            samples: 64,
            step: 1e-6,
            tolerance: 1e-3,
            seed: 0,
            batch: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TermCheck {
    pub name: &'static str,
    pub report: GradCheckReport,
    /// `max |a − n| / max(|n|, 0.01·max|n|)` over the probed coordinates.
    pub scaled_error: f64,
    pub passed: bool,
}

/// Error relative to each coordinate, floored at 1% of the largest probed
/// derivative so near-zero entries do not dominate.
pub fn scaled_error(report: &GradCheckReport) -> f64 {
    let peak = report
        .coordinates
        .iter()
        .map(|c| c.numeric.abs())
        .fold(0.0, f64::max);
    let floor = (0.01 * peak).max(1e-12);
    report
        .coordinates
        .iter()
        .map(|c| (c.analytic - c.numeric).abs() / c.numeric.abs().max(floor))
        .fold(0.0, f64::max)
}

struct Fixture {
    net: FieldNetwork,
    theta: ParameterStore<f64>,
    critic: ConvDiscriminator,
    phi: ParameterStore<f64>,
    draws: Vec<GeneratorDraw>,
    real: Vec<Patch<f64>>,
}

fn fixture(cfg: &RunConfig, s: &SuiteSettings) -> Result<Fixture> {
    let net = FieldNetwork::new(cfg.field.clone())?;
    let theta = net.geometric_sphere_init::<f64>(s.seed);
    let critic = ConvDiscriminator::new(cfg.discriminator.clone(), cfg.patch.size)?;
    // The standard init zeroes the output layer, which would leave every
    // inner discriminator gradient at exactly zero.
    let mut phi: ParameterStore<f64> = critic.init(s.seed.wrapping_add(1));
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed.wrapping_add(2));
    for name in ["out.weight", "out.bias"] {
        if let Some(id) = phi.layout().find(name) {
            for v in phi.segment_mut(id) {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }
    let t32 = theta.cast::<f32>();
    let delta = 0.25 * cfg.camera.scene_radius;
    let draws = (0..s.batch)
        .map(|_| draw_generator_input(cfg, &net, &t32, delta, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let k = cfg.patch.size;
    let real = (0..s.batch)
        .map(|_| Patch::new(k, (0..3 * k * k).map(|_| rng.random::<f64>()).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Fixture {
        net,
        theta,
        critic,
        phi,
        draws,
        real,
    })
}

fn shape_code(d: &GeneratorDraw) -> Vec<f64> {
    d.codes.shape.iter().map(|&z| z as f64).collect()
}

/// Runs one check per loss term: the discriminator's adversarial term, R1,
/// the generator's adversarial term through the renderer, the smoothness
/// term and the bare rendering path.
pub fn gradient_suite(cfg: &RunConfig, s: &SuiteSettings) -> Result<Vec<TermCheck>> {
    cfg.validate()?;
    contract!(s.batch >= 1 && s.samples >= 1, "suite needs a batch and probe coordinates");
    let fx = fixture(cfg, s)?;
    let Fixture {
        net,
        theta,
        critic,
        phi,
        draws,
        real,
    } = &fx;
    if draws.iter().all(|d| d.probe.points.is_empty()) {
        return Err(Error::Evaluation(
            "no generated ray hit the surface, so the smoothness check would be vacuous".into(),
        ));
    }
    let fake: Vec<Patch<f64>> = draws
        .iter()
        .map(|d| Ok(render_draw(cfg, net, theta, d)?.0))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    let mut record = |name: &'static str, report: GradCheckReport| {
        let scaled = scaled_error(&report);
        out.push(TermCheck {
            name,
            passed: report.max_relative_error < s.tolerance && scaled < s.tolerance,
            scaled_error: scaled,
            report,
        });
    };

    let f = |x: f64| -softplus(-x);
    let adv = FnObjective {
        value: |q: &ParameterStore<f64>| -> Result<f64> {
            let mut v = 0.0;
            for x in real {
                v += f(-critic.logit(q, x)?) / real.len() as f64;
            }
            for x in &fake {
                v += f(critic.logit(q, x)?) / fake.len() as f64;
            }
            Ok(v)
        },
        gradient: |q: &ParameterStore<f64>| Ok(discriminator_gradient(critic, q, real, &fake, 0.0)?.0),
    };
    record("adversarial/discriminator", finite_difference_check(&adv, phi, s.step, s.samples, s.seed)?);

    let r1 = FnObjective {
        value: |q: &ParameterStore<f64>| {
            let mut scratch = GradientRecord::zeros_like(q);
            r1_penalty(critic, q, real, 0.0, &mut scratch)
        },
        gradient: |q: &ParameterStore<f64>| {
            let mut g = GradientRecord::zeros_like(q);
            r1_penalty(critic, q, real, 1.0, &mut g)?;
            Ok(g)
        },
    };
    record("r1", finite_difference_check(&r1, phi, s.step, s.samples, s.seed)?);

    let objective = cfg.train.generator_objective;
    let gen = FnObjective {
        value: |q: &ParameterStore<f64>| -> Result<f64> {
            let mut v = 0.0;
            for d in draws {
                let (patch, _) = render_draw(cfg, net, q, d)?;
                v += objective.value(critic.logit(phi, &patch)?) / draws.len() as f64;
            }
            Ok(v)
        },
        gradient: |q: &ParameterStore<f64>| {
            let rendered = draws
                .iter()
                .map(|d| {
                    let (patch, tape) = render_draw(cfg, net, q, d)?;
                    Ok(RenderedDraw { draw: d, patch, tape })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(generator_gradient(net, q, critic, phi, &rendered, objective, 0.0)?.0)
        },
    };
    record("adversarial/generator", finite_difference_check(&gen, theta, s.step, s.samples, s.seed)?);

    let smooth = FnObjective {
        value: |q: &ParameterStore<f64>| -> Result<f64> {
            let mut v = 0.0;
            let mut scratch = GradientRecord::zeros_like(q);
            for d in draws {
                v += smoothness_neural(net, q, &shape_code(d), &d.probe, 0.0, &mut scratch)?.loss;
            }
            Ok(v)
        },
        gradient: |q: &ParameterStore<f64>| {
            let mut g = GradientRecord::zeros_like(q);
            for d in draws {
                smoothness_neural(net, q, &shape_code(d), &d.probe, 1.0, &mut g)?;
            }
            Ok(g)
        },
    };
    record("smoothness", finite_difference_check(&smooth, theta, s.step, s.samples, s.seed)?);

    let mut rng = ChaCha8Rng::seed_from_u64(s.seed.wrapping_add(3));
    let weights: Vec<Array2<f64>> = draws
        .iter()
        .map(|d| Array2::from_shape_fn((d.rays.len(), 3), |_| rng.random_range(-1.0..1.0)))
        .collect();
    let render = FnObjective {
        value: |q: &ParameterStore<f64>| -> Result<f64> {
            let mut v = 0.0;
            for (d, w) in draws.iter().zip(&weights) {
                let (patch, _) = render_draw(cfg, net, q, d)?;
                v += patch.pixels.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>();
            }
            Ok(v)
        },
        gradient: |q: &ParameterStore<f64>| {
            let mut g = GradientRecord::zeros_like(q);
            for (d, w) in draws.iter().zip(&weights) {
                let (_, tape) = render_draw(cfg, net, q, d)?;
                render_rays_backward(net, q, &tape, w, &mut g);
            }
            Ok(g)
        },
    };
    record("rendering", finite_difference_check(&render, theta, s.step, s.samples, s.seed)?);

    Ok(out)
}
