//! Alternating discriminator/generator updates and the training driver.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::discriminator::{r1_penalty, ConvDiscriminator, Critic};
use super::loss::{adversarial_loss, f_nonsat_derivative, GeneratorObjective};
use crate::config::RunConfig;
use crate::data::{sample_real_patch, ImageSource};
use crate::diffcore::{checkpoint, Direction, GradientRecord, Optimizer, OptimizerKind, ParameterStore};
use crate::error::{contract, Error, Result};
use crate::field::{sample_latents, FieldNetwork, LatentCodes, NeuralField};
use crate::real::Real;
use crate::rendering::{
    generate_rays, render_rays, render_rays_backward, sample_camera, sample_patch_spec, CameraPose, Patch, PatchSpec,
    Ray, RenderTape,
};
use crate::surface::{
    find_surface_intersections, interval_width, place_samples, probe_from_hits, smoothness_neural, IntervalSchedule,
    SurfaceProbe,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch: usize,
    /// λ, the R1 weight.
    pub r1_weight: f64,
    /// γ, the surface smoothness weight.
    pub smooth_weight: f64,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub optimizer: OptimizerKind,
    pub generator_objective: GeneratorObjective,
    /// Defaults to [`IntervalSchedule::for_training`] over the ray extent.
    pub schedule: Option<IntervalSchedule>,
    /// Checkpoint period in iterations; 0 keeps only the first and last.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch: 8,
            r1_weight: 10.0,
            smooth_weight: 0.01,
            lr_generator: 1e-3,
            lr_discriminator: 1e-3,
            optimizer: OptimizerKind::default(),
            generator_objective: GeneratorObjective::default(),
            schedule: None,
            checkpoint_every: 500,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(self.batch >= 1, "batch must be at least 1");
        contract!(
            self.r1_weight >= 0.0 && self.smooth_weight >= 0.0,
            "loss weights must be non-negative (r1 {}, smooth {})",
            self.r1_weight,
            self.smooth_weight
        );
        contract!(
            self.lr_generator >= 0.0 && self.lr_discriminator >= 0.0,
            "learning rates must be non-negative"
        );
        if let Some(s) = &self.schedule {
            s.validate()?;
        }
        Ok(())
    }

    pub fn schedule_for(&self, scene_radius: f64) -> IntervalSchedule {
        self.schedule
            .clone()
            .unwrap_or_else(|| IntervalSchedule::for_training(2.0 * scene_radius, self.iterations))
    }
}

/// Everything random about one generated patch, frozen for a training step.
#[derive(Debug, Clone)]
pub struct GeneratorDraw {
    pub codes: LatentCodes<f32>,
    pub pose: CameraPose,
    pub spec: PatchSpec,
    pub rays: Vec<Ray>,
    /// Sample positions, one row per ray.
    pub ts: Array2<f64>,
    pub probe: SurfaceProbe,
}

/// Draws latents, a camera and a patch, finds the current surface along the
/// patch rays and places samples within `delta` of it.
pub fn draw_generator_input<R: rand::Rng + ?Sized>(
    cfg: &RunConfig,
    net: &FieldNetwork,
    theta: &ParameterStore<f32>,
    delta: f64,
    rng: &mut R,
) -> Result<GeneratorDraw> {
    let fc = net.config();
    let codes = sample_latents(rng, fc.shape_dim, fc.appearance_dim)?;
    let pose = sample_camera(rng, &cfg.camera)?;
    let spec = sample_patch_spec(rng, &cfg.patch, pose.width, pose.height)?;
    let rays = generate_rays(&pose, &spec.pixels(cfg.patch.size, pose.width, pose.height), cfg.camera.scene_radius)?;
    let field = NeuralField {
        net,
        params: theta,
        codes: &codes,
    };
    let hits = find_surface_intersections(&field, &rays, cfg.surface.coarse_samples, cfg.surface.secant_iters)?;
    let n = cfg.render.samples;
    let mut ts = Array2::zeros((rays.len(), n));
    for (r, (ray, hit)) in rays.iter().zip(&hits).enumerate() {
        let row = place_samples(ray, *hit, delta, n, rng)?;
        ts.row_mut(r).assign(&ndarray::ArrayView1::from(&row));
    }
    let probe = probe_from_hits(&rays, &hits, &cfg.surface, rng);
    Ok(GeneratorDraw {
        codes,
        pose,
        spec,
        rays,
        ts,
        probe,
    })
}

/// Renders a draw into a patch, keeping the tape for the reverse pass.
pub fn render_draw<T: Real>(
    cfg: &RunConfig,
    net: &FieldNetwork,
    theta: &ParameterStore<T>,
    draw: &GeneratorDraw,
) -> Result<(Patch<T>, RenderTape<T>)> {
    let codes = draw.codes.cast::<T>();
    let (colors, tape) = render_rays(
        net,
        theta,
        &codes,
        &draw.rays,
        &draw.ts,
        cfg.render.background,
        cfg.render.alpha_mode,
    )?;
    let patch = Patch::new(cfg.patch.size, colors.into_raw_vec_and_offset().0)?;
    Ok((patch, tape))
}

fn mean<T: Real>(xs: &[T]) -> T {
    xs.iter().fold(T::zero(), |a, &b| a + b) / T::lit(xs.len() as f64)
}

fn check_finite(what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Evaluation(format!("{what} is {v}")))
    }
}

fn check_store<T: Real>(what: &str, p: &ParameterStore<T>) -> Result<()> {
    match p.values().iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => {
            let (seg, k) = p.layout().locate(i).unwrap_or(("?", i));
            Err(Error::Evaluation(format!("{what} parameter {seg}[{k}] is {}", p.values()[i])))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscriminatorStats {
    /// `L_adv` on the batch, before the update.
    pub loss: f64,
    pub r1: f64,
    pub mean_real: f64,
    pub mean_fake: f64,
}

/// Gradient of `L_adv − λ·R1` w.r.t. φ on fixed real and fake batches.
pub fn discriminator_gradient<C: Critic, T: Real>(
    critic: &C,
    phi: &ParameterStore<T>,
    real: &[Patch<T>],
    fake: &[Patch<T>],
    r1_weight: f64,
) -> Result<(GradientRecord<T>, DiscriminatorStats)> {
    contract!(!real.is_empty() && !fake.is_empty(), "discriminator step needs non-empty batches");
    let mut g = GradientRecord::zeros_like(phi);
    let (nr, nf) = (T::lit(real.len() as f64), T::lit(fake.len() as f64));
    let mut real_logits = Vec::with_capacity(real.len());
    for x in real {
        // d/dD f(−D) = −f'(−D)
        let (d, _) = critic.backward(phi, x, |d| -f_nonsat_derivative(-d) / nr, &mut g)?;
        real_logits.push(d);
    }
    let mut fake_logits = Vec::with_capacity(fake.len());
    for x in fake {
        let (d, _) = critic.backward(phi, x, |d| f_nonsat_derivative(d) / nf, &mut g)?;
        fake_logits.push(d);
    }
    let r1 = if r1_weight > 0.0 {
        r1_penalty(critic, phi, real, T::lit(-r1_weight), &mut g)?
    } else {
        T::zero()
    };
    let loss = adversarial_loss(&real_logits, &fake_logits)?;
    g.loss_value = loss.as_f64() - r1_weight * r1.as_f64();
    let stats = DiscriminatorStats {
        loss: loss.as_f64(),
        r1: r1.as_f64(),
        mean_real: mean(&real_logits).as_f64(),
        mean_fake: mean(&fake_logits).as_f64(),
    };
    check_finite("discriminator loss", stats.loss)?;
    check_finite("R1 penalty", stats.r1)?;
    Ok((g, stats))
}

/// One ascent step on `L_adv − λ·R1`; fake patches are plain values.
pub fn discriminator_step<C: Critic, T: Real>(
    critic: &C,
    phi: &ParameterStore<T>,
    optimizer: &mut Optimizer<T>,
    real: &[Patch<T>],
    fake: &[Patch<T>],
    r1_weight: f64,
) -> Result<(ParameterStore<T>, DiscriminatorStats)> {
    let (g, stats) = discriminator_gradient(critic, phi, real, fake, r1_weight)?;
    let next = optimizer.step(phi, &g)?;
    check_store("discriminator", &next)?;
    Ok((next, stats))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorStats {
    /// Batch mean of the generator objective on the fake logits.
    pub loss: f64,
    /// Batch mean of the per-camera smoothness sums.
    pub smooth: f64,
    pub mean_fake: f64,
}

/// A rendered draw: the patch and the tape needed to backpropagate into θ.
pub struct RenderedDraw<'a, T> {
    pub draw: &'a GeneratorDraw,
    pub patch: Patch<T>,
    pub tape: RenderTape<T>,
}

/// Gradient w.r.t. θ of `mean objective(D(fake)) + γ·mean L_smooth`, with
/// every draw frozen.
pub fn generator_gradient<C: Critic, T: Real>(
    net: &FieldNetwork,
    theta: &ParameterStore<T>,
    critic: &C,
    phi: &ParameterStore<T>,
    rendered: &[RenderedDraw<'_, T>],
    objective: GeneratorObjective,
    smooth_weight: f64,
) -> Result<(GradientRecord<T>, GeneratorStats)> {
    contract!(!rendered.is_empty(), "generator step needs a non-empty batch");
    let b = T::lit(rendered.len() as f64);
    let mut g = GradientRecord::zeros_like(theta);
    let mut scratch = GradientRecord::zeros_like(phi);
    let mut logits = Vec::with_capacity(rendered.len());
    let mut smooth = 0.0;
    for r in rendered {
        let (d, dx) = critic.backward(phi, &r.patch, |d| objective.derivative(d) / b, &mut scratch)?;
        logits.push(d);
        let k2 = dx.size * dx.size;
        let d_colors = Array2::from_shape_vec((k2, 3), dx.pixels).map_err(|e| Error::Shape(e.to_string()))?;
        render_rays_backward(net, theta, &r.tape, &d_colors, &mut g);
        if smooth_weight > 0.0 {
            let v = smoothness_neural(
                net,
                theta,
                &r.draw.codes.shape.iter().map(|&z| T::lit(z as f64)).collect::<Vec<_>>(),
                &r.draw.probe,
                T::lit(smooth_weight) / b,
                &mut g,
            )?;
            smooth += v.loss;
        }
    }
    let loss = mean(&logits.iter().map(|&d| objective.value(d)).collect::<Vec<_>>()).as_f64();
    let smooth = smooth / rendered.len() as f64;
    g.loss_value = loss + smooth_weight * smooth;
    check_finite("generator loss", loss)?;
    check_finite("smoothness loss", smooth)?;
    Ok((
        g,
        GeneratorStats {
            loss,
            smooth,
            mean_fake: mean(&logits).as_f64(),
        },
    ))
}

/// One descent step on the generator objective plus γ·smoothness.
#[allow(clippy::too_many_arguments)]
pub fn generator_step<C: Critic, T: Real>(
    net: &FieldNetwork,
    theta: &ParameterStore<T>,
    optimizer: &mut Optimizer<T>,
    critic: &C,
    phi: &ParameterStore<T>,
    rendered: &[RenderedDraw<'_, T>],
    objective: GeneratorObjective,
    smooth_weight: f64,
) -> Result<(ParameterStore<T>, GeneratorStats)> {
    let (g, stats) = generator_gradient(net, theta, critic, phi, rendered, objective, smooth_weight)?;
    let next = optimizer.step(theta, &g)?;
    check_store("generator", &next)?;
    Ok((next, stats))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub iteration: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub r1: f64,
    pub smooth: f64,
    pub delta: f64,
    pub mean_real: f64,
    pub mean_fake: f64,
}

impl StepMetrics {
    pub const HEADER: &'static str = "iter,loss_d,loss_g,r1,smooth,delta";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.iteration, self.loss_d, self.loss_g, self.r1, self.smooth, self.delta
        )
    }
}

/// Generator, discriminator and optimizer state of a run.
pub struct Trainer<'a, S: ImageSource + ?Sized> {
    cfg: &'a RunConfig,
    data: &'a S,
    net: FieldNetwork,
    critic: ConvDiscriminator,
    theta: ParameterStore<f32>,
    phi: ParameterStore<f32>,
    opt_g: Optimizer<f32>,
    opt_d: Optimizer<f32>,
    schedule: IntervalSchedule,
    gen_rng: ChaCha8Rng,
    real_rng: ChaCha8Rng,
    iteration: usize,
}

impl<'a, S: ImageSource + ?Sized> Trainer<'a, S> {
    /// Sphere-initialized generator, zero-output discriminator.
    pub fn new(cfg: &'a RunConfig, data: &'a S) -> Result<Self> {
        cfg.validate()?;
        contract!(!data.is_empty(), "training data is empty");
        let net = FieldNetwork::new(cfg.field.clone())?;
        let critic = ConvDiscriminator::new(cfg.discriminator.clone(), cfg.patch.size)?;
        let seed = cfg.train.seed;
        let theta = net.geometric_sphere_init(seed);
        let phi = critic.init(seed.wrapping_add(1));
        let t = &cfg.train;
        let opt_g = Optimizer::new(t.optimizer, t.lr_generator, Direction::Descent, theta.len());
        let opt_d = Optimizer::new(t.optimizer, t.lr_discriminator, Direction::Ascent, phi.len());
        let stream = |k| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        Ok(Self {
            cfg,
            data,
            net,
            critic,
            theta,
            phi,
            opt_g,
            opt_d,
            schedule: t.schedule_for(cfg.camera.scene_radius),
            gen_rng: stream(1),
            real_rng: stream(2),
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn network(&self) -> &FieldNetwork {
        &self.net
    }

    pub fn critic(&self) -> &ConvDiscriminator {
        &self.critic
    }

    pub fn generator_params(&self) -> &ParameterStore<f32> {
        &self.theta
    }

    pub fn discriminator_params(&self) -> &ParameterStore<f32> {
        &self.phi
    }

    /// One discriminator step followed by one generator step on the same
    /// generated batch. θ does not change in between, so the render tape of
    /// the discriminator's fake batch is reused for the generator update.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let cfg = self.cfg;
        let delta = interval_width(&self.schedule, self.iteration);
        let b = cfg.train.batch;
        let draws = (0..b)
            .map(|_| draw_generator_input(cfg, &self.net, &self.theta, delta, &mut self.gen_rng))
            .collect::<Result<Vec<_>>>()?;
        let rendered = draws
            .iter()
            .map(|d| {
                let (patch, tape) = render_draw(cfg, &self.net, &self.theta, d)?;
                Ok(RenderedDraw { draw: d, patch, tape })
            })
            .collect::<Result<Vec<_>>>()?;
        let real = (0..b)
            .map(|_| sample_real_patch(self.data, &mut self.real_rng, &cfg.patch))
            .collect::<Result<Vec<_>>>()?;
        let fake: Vec<Patch> = rendered.iter().map(|r| r.patch.clone()).collect();

        let (phi, ds) = discriminator_step(
            &self.critic,
            &self.phi,
            &mut self.opt_d,
            &real,
            &fake,
            cfg.train.r1_weight,
        )?;
        self.phi = phi;
        let (theta, gs) = generator_step(
            &self.net,
            &self.theta,
            &mut self.opt_g,
            &self.critic,
            &self.phi,
            &rendered,
            cfg.train.generator_objective,
            cfg.train.smooth_weight,
        )?;
        self.theta = theta;
        let m = StepMetrics {
            iteration: self.iteration,
            loss_d: ds.loss,
            loss_g: gs.loss,
            r1: ds.r1,
            smooth: gs.smooth,
            delta,
            mean_real: ds.mean_real,
            mean_fake: ds.mean_fake,
        };
        self.iteration += 1;
        Ok(m)
    }

    /// Generator and discriminator parameters as one store with segment
    /// prefixes `g/` and `d/`.
    pub fn checkpoint_store(&self) -> Result<ParameterStore<f32>> {
        ParameterStore::concat(&[("g", &self.theta), ("d", &self.phi)])
    }

    pub fn save_checkpoint(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("iter_{:06}.ckpt", self.iteration));
        checkpoint::save(&self.checkpoint_store()?, &path)?;
        Ok(path)
    }

    /// Runs the remaining iterations, writing `metrics.csv`, `critic.csv`
    /// (mean logits) and checkpoints under `out`. On failure, writes
    /// `diagnostics.txt` and returns the error.
    pub fn run(&mut self, out: &Path, mut progress: impl FnMut(&StepMetrics)) -> Result<TrainSummary> {
        let ckpt_dir = out.join("checkpoints");
        fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
        let open = |name: &str, header: &str| -> Result<BufWriter<File>> {
            let p = out.join(name);
            let mut w = BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?);
            writeln!(w, "{header}").map_err(|e| Error::io(&p, e))?;
            Ok(w)
        };
        let mut metrics = open("metrics.csv", StepMetrics::HEADER)?;
        let mut critic_log = open("critic.csv", "iter,d_real,d_fake")?;
        let mut checkpoints = vec![self.save_checkpoint(&ckpt_dir)?];
        let mut last = None;
        let every = self.cfg.train.checkpoint_every;
        while self.iteration < self.cfg.train.iterations {
            let m = match self.step() {
                Ok(m) => m,
                Err(e) => {
                    self.write_diagnostics(out, &e, last.as_ref())?;
                    return Err(e);
                }
            };
            let io = |e| Error::io(out, e);
            writeln!(metrics, "{}", m.csv_row()).map_err(io)?;
            writeln!(critic_log, "{},{},{}", m.iteration, m.mean_real, m.mean_fake).map_err(io)?;
            metrics.flush().map_err(io)?;
            progress(&m);
            last = Some(m);
            if every > 0 && self.iteration.is_multiple_of(every) && self.iteration < self.cfg.train.iterations {
                checkpoints.push(self.save_checkpoint(&ckpt_dir)?);
            }
        }
        if self.iteration > 0 {
            checkpoints.push(self.save_checkpoint(&ckpt_dir)?);
        }
        metrics.flush().map_err(|e| Error::io(out, e))?;
        critic_log.flush().map_err(|e| Error::io(out, e))?;
        Ok(TrainSummary {
            checkpoints,
            last,
            metrics: out.join("metrics.csv"),
        })
    }

    fn write_diagnostics(&self, out: &Path, err: &Error, last: Option<&StepMetrics>) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "error: {err}");
        let _ = writeln!(s, "iteration: {}", self.iteration);
        let _ = writeln!(s, "delta: {}", interval_width(&self.schedule, self.iteration));
        if let Some(m) = last {
            let _ = writeln!(s, "last metrics: {}\n{}", StepMetrics::HEADER, m.csv_row());
        }
        for (name, p) in [("generator", &self.theta), ("discriminator", &self.phi)] {
            let norm = p.values().iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            let bad = p.values().iter().filter(|v| !v.is_finite()).count();
            let _ = writeln!(s, "{name}: {} params, l2 norm {norm}, {bad} non-finite", p.len());
        }
        let path = out.join("diagnostics.txt");
        fs::write(&path, s).map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoints: Vec<PathBuf>,
    pub last: Option<StepMetrics>,
    pub metrics: PathBuf,
}

/// Generator and discriminator parameters read back from a checkpoint.
pub fn load_checkpoint(
    path: &Path,
    net: &FieldNetwork,
    critic: &ConvDiscriminator,
) -> Result<(ParameterStore<f32>, ParameterStore<f32>)> {
    let all = checkpoint::load(path)?;
    let rebind = |prefix: &str, layout: &std::sync::Arc<crate::diffcore::ParameterLayout>| {
        let part = all.split_prefix(prefix)?;
        if !part.same_layout(layout) {
            return Err(Error::Load(format!(
                "{}: `{prefix}` parameters do not match the configured architecture",
                path.display()
            )));
        }
        ParameterStore::from_values(layout.clone(), part.into_values())
    };
    Ok((rebind("g", net.layout())?, rebind("d", critic.layout())?))
}

/// Generator parameters only; the discriminator section is ignored.
pub fn load_generator(path: &Path, net: &FieldNetwork) -> Result<ParameterStore<f32>> {
    let part = checkpoint::load(path)?.split_prefix("g")?;
    if !part.same_layout(net.layout()) {
        return Err(Error::Load(format!(
            "{}: generator parameters do not match the configured architecture",
            path.display()
        )));
    }
    ParameterStore::from_values(net.layout().clone(), part.into_values())
}
