use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gen3d::adversarial::{final_delta, generated_patches, load_generator, render_view, Trainer};
use gen3d::checks::{gradient_suite, SuiteSettings};
use gen3d::config::RunConfig;
use gen3d::data::{generate_toy_dataset, sample_real_patch, Dataset};
use gen3d::diffcore::ParameterStore;
use gen3d::evaluation::{interpolate_codes, patch_fd, Freeze, PoolEmbedder};
use gen3d::field::{sample_latents, FieldNetwork, LatentCodes, NeuralField};
use gen3d::meshing::{export_mesh, extract_mesh, mesh_diagnostics, Aabb, IsoLevel, MeshConfig, TriangleMesh};
use gen3d::rendering::CameraPose;

#[derive(Parser)]
#[command(name = "3dgen", version, about = "Train and inspect 3D-aware generative occupancy fields")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; absent keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: `output` from the config, else `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the procedural toy dataset.
    GenData,
    /// Adversarial training from the sphere initialization.
    Train {
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Orbit the camera around one latent draw.
    RenderTurntable {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        views: usize,
        /// Degrees; defaults to the middle of the configured range.
        #[arg(long)]
        elevation: Option<f64>,
    },
    /// Render (and mesh) a linear sweep between two latent draws.
    Interpolate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        #[arg(long, value_enum, default_value_t = FreezeArg::None)]
        freeze: FreezeArg,
        /// Skip mesh extraction.
        #[arg(long)]
        no_meshes: bool,
    },
    /// Marching-cubes meshes for latent draws.
    ExtractMesh {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        resolution: Option<usize>,
        /// Density level σ; without it the occupancy 0.5 surface is used.
        #[arg(long)]
        level: Option<f64>,
        #[arg(long, default_value_t = 1)]
        latents: usize,
        #[arg(long, value_enum, default_value_t = Format::Obj)]
        format: Format,
    },
    /// Fréchet distance between real and generated patches on proxy features.
    EvalFd {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        n_samples: usize,
    },
    /// Finite-difference check of every training loss.
    GradCheck {
        #[arg(long, default_value_t = 64)]
        samples: usize,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FreezeArg {
    None,
    Shape,
    Appearance,
}

impl From<FreezeArg> for Freeze {
    fn from(f: FreezeArg) -> Self {
        match f {
            FreezeArg::None => Freeze::None,
            FreezeArg::Shape => Freeze::Shape,
            FreezeArg::Appearance => Freeze::Appearance,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Obj,
    Ply,
}

impl Format {
    fn ext(self) -> &'static str {
        match self {
            Format::Obj => "obj",
            Format::Ply => "ply",
        }
    }
}

/// Resolved configuration plus the directories every command writes into.
struct Run {
    cfg: RunConfig,
    out: PathBuf,
    dataset: PathBuf,
    seed: u64,
}

impl Run {
    fn new(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = common.seed {
            cfg.train.seed = s;
            cfg.data.seed = s;
        }
        if let Some(o) = &common.out {
            cfg.output = o.clone();
        }
        if cfg.output.as_os_str().is_empty() {
            cfg.output = PathBuf::from("out");
        }
        let out = cfg.output.clone();
        let dataset = if cfg.dataset.as_os_str().is_empty() {
            out.join("dataset")
        } else {
            cfg.dataset.clone()
        };
        cfg.dataset = dataset.clone();
        let seed = cfg.train.seed;
        Ok(Self {
            cfg,
            out,
            dataset,
            seed,
        })
    }

    fn dir(&self, name: &str) -> Result<PathBuf> {
        let d = self.out.join(name);
        fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
        Ok(d)
    }

    /// Latent draws for inspection commands, independent of training draws.
    fn latent_rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(3);
        r
    }

    fn generator(&self, checkpoint: Option<&Path>) -> Result<(FieldNetwork, ParameterStore<f32>, PathBuf)> {
        let path = match checkpoint {
            Some(p) => p.to_path_buf(),
            None => latest_checkpoint(&self.out.join("checkpoints"))?,
        };
        let net = FieldNetwork::new(self.cfg.field.clone())?;
        let theta = load_generator(&path, &net)?;
        Ok((net, theta, path))
    }

    fn codes(&self, net: &FieldNetwork, rng: &mut ChaCha8Rng) -> Result<LatentCodes<f32>> {
        let fc = net.config();
        Ok(sample_latents(rng, fc.shape_dim, fc.appearance_dim)?)
    }

    fn bounds(&self) -> Aabb {
        Aabb::cube(self.cfg.camera.scene_radius)
    }

    fn default_elevation(&self) -> f64 {
        0.5 * (self.cfg.camera.elevation_min + self.cfg.camera.elevation_max)
    }
}

fn latest_checkpoint(dir: &Path) -> Result<PathBuf> {
    let mut found: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("no checkpoints in {} (pass --checkpoint)", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ckpt"))
        .collect();
    found.sort();
    found
        .pop()
        .with_context(|| format!("no checkpoints in {} (pass --checkpoint)", dir.display()))
}

fn mesh_row(name: &str, mesh: &TriangleMesh) -> String {
    let d = mesh_diagnostics(mesh);
    let (lo, hi) = d.bbox.unwrap_or(([f64::NAN; 3], [f64::NAN; 3]));
    format!(
        "{name},{},{},{},{},{},{},{},{},{},{}",
        d.watertight, d.euler_characteristic, d.triangles, lo[0], lo[1], lo[2], hi[0], hi[1], hi[2], d.boundary_edges
    )
}

const MESH_HEADER: &str = "mesh,watertight,euler,triangles,min_x,min_y,min_z,max_x,max_y,max_z,boundary_edges";

fn extract(
    run: &Run,
    net: &FieldNetwork,
    theta: &ParameterStore<f32>,
    codes: &LatentCodes<f32>,
    mesh: &MeshConfig,
    level: IsoLevel,
) -> Result<TriangleMesh> {
    let field = NeuralField {
        net,
        params: theta,
        codes,
    };
    Ok(extract_mesh(&field, mesh, run.bounds(), level)?)
}

fn gen_data(run: &Run) -> Result<()> {
    let manifest = generate_toy_dataset(&run.cfg.data, &run.cfg.camera, &run.dataset)?;
    println!("wrote {} images to {}", manifest.entries.len(), run.dataset.display());
    Ok(())
}

fn train(run: &mut Run, iters: Option<usize>) -> Result<()> {
    if let Some(n) = iters {
        run.cfg.train.iterations = n;
    }
    run.cfg.validate()?;
    run.cfg.echo(&run.out)?;
    let data = Dataset::open(&run.dataset)?;
    let mut trainer = Trainer::new(&run.cfg, &data)?;
    let total = run.cfg.train.iterations;
    let every = (total / 20).max(1);
    let summary = trainer.run(&run.out, |m| {
        if m.iteration % every == 0 || m.iteration + 1 == total {
            eprintln!(
                "iter {:>6}/{total}  loss_d {:.4}  loss_g {:.4}  r1 {:.4}  smooth {:.4}  delta {:.4}",
                m.iteration, m.loss_d, m.loss_g, m.r1, m.smooth, m.delta
            );
        }
    })?;
    println!(
        "trained {total} iterations; {} checkpoints, metrics in {}",
        summary.checkpoints.len(),
        summary.metrics.display()
    );
    Ok(())
}

fn turntable(run: &Run, checkpoint: Option<&Path>, views: usize, elevation: Option<f64>) -> Result<()> {
    if views == 0 {
        bail!("--views must be at least 1");
    }
    let (net, theta, _) = run.generator(checkpoint)?;
    let mut rng = run.latent_rng();
    let codes = run.codes(&net, &mut rng)?;
    let dir = run.dir("turntable")?;
    let el = elevation.unwrap_or_else(|| run.default_elevation());
    let delta = final_delta(&run.cfg);
    for i in 0..views {
        let pose = CameraPose::orbit(&run.cfg.camera, 360.0 * i as f64 / views as f64, el)?;
        let img = render_view(&run.cfg, &net, &theta, &codes, &pose, delta, &mut rng)?;
        img.save_png(&dir.join(format!("view_{i:02}.png")))?;
    }
    println!("wrote {views} views to {}", dir.display());
    Ok(())
}

fn interpolate(run: &Run, checkpoint: Option<&Path>, steps: usize, freeze: Freeze, meshes: bool) -> Result<()> {
    let (net, theta, _) = run.generator(checkpoint)?;
    let mut rng = run.latent_rng();
    let a = run.codes(&net, &mut rng)?;
    let b = run.codes(&net, &mut rng)?;
    let sweep = interpolate_codes(&a, &b, steps, freeze)?;
    let dir = run.dir("interpolate")?;
    let pose = CameraPose::orbit(&run.cfg.camera, 30.0, run.default_elevation())?;
    let delta = final_delta(&run.cfg);
    let mut report = vec![MESH_HEADER.to_string()];
    for (i, codes) in sweep.iter().enumerate() {
        let mut view_rng = ChaCha8Rng::seed_from_u64(run.seed.wrapping_add(i as u64));
        let img = render_view(&run.cfg, &net, &theta, codes, &pose, delta, &mut view_rng)?;
        img.save_png(&dir.join(format!("step_{i:02}.png")))?;
        if meshes {
            let mesh = extract(run, &net, &theta, codes, &run.cfg.mesh, IsoLevel::Occupancy)?;
            let name = format!("step_{i:02}.obj");
            export_mesh(&mesh, &dir.join(&name))?;
            report.push(mesh_row(&name, &mesh));
        }
    }
    if meshes {
        fs::write(dir.join("meshes.csv"), report.join("\n") + "\n")?;
    }
    println!("wrote {steps} steps to {}", dir.display());
    Ok(())
}

fn extract_meshes(
    run: &Run,
    checkpoint: Option<&Path>,
    resolution: Option<usize>,
    level: Option<f64>,
    latents: usize,
    format: Format,
) -> Result<()> {
    let (net, theta, _) = run.generator(checkpoint)?;
    let mut mesh_cfg = run.cfg.mesh.clone();
    if let Some(r) = resolution {
        mesh_cfg.resolution = r;
    }
    let level = match level {
        Some(s) if s > 0.0 => IsoLevel::Density(s),
        Some(s) => bail!("--level must be a positive density, got {s}"),
        None => IsoLevel::Occupancy,
    };
    let mut rng = run.latent_rng();
    let dir = run.dir("meshes")?;
    let mut report = vec![MESH_HEADER.to_string()];
    for i in 0..latents {
        let codes = run.codes(&net, &mut rng)?;
        let mesh = extract(run, &net, &theta, &codes, &mesh_cfg, level)?;
        let name = format!("mesh_{i:02}.{}", format.ext());
        export_mesh(&mesh, &dir.join(&name))?;
        let d = mesh_diagnostics(&mesh);
        println!(
            "{name}: {} triangles, watertight {}, euler {}",
            d.triangles, d.watertight, d.euler_characteristic
        );
        report.push(mesh_row(&name, &mesh));
    }
    fs::write(dir.join("report.csv"), report.join("\n") + "\n")?;
    Ok(())
}

fn eval_fd(run: &Run, checkpoint: Option<&Path>, n: usize) -> Result<()> {
    if n < 2 {
        bail!("--n-samples must be at least 2");
    }
    let (net, theta, path) = run.generator(checkpoint)?;
    let data = Dataset::open(&run.dataset)?;
    let mut rng = run.latent_rng();
    let real = (0..n)
        .map(|_| sample_real_patch(&data, &mut rng, &run.cfg.patch))
        .collect::<gen3d::Result<Vec<_>>>()?;
    let fake = generated_patches(&run.cfg, &net, &theta, final_delta(&run.cfg), n, &mut rng)?;
    let report = patch_fd(&real, &fake, &PoolEmbedder::default())?;
    let out = run.out.join("eval_fd.csv");
    fs::create_dir_all(&run.out)?;
    fs::write(&out, report.csv())?;
    println!("FD (proxy features): {:.6}  [{} real, {} generated, {}]", report.value, n, n, path.display());
    Ok(())
}

fn grad_check(run: &Run, samples: usize, tolerance: f64) -> Result<bool> {
    let settings = SuiteSettings {
        samples,
        tolerance,
        seed: run.seed,
        ..Default::default()
    };
    let checks = gradient_suite(&run.cfg, &settings)?;
    let mut ok = true;
    for c in &checks {
        ok &= c.passed;
        println!(
            "{} {:<26} max rel error {:.3e}  scaled {:.3e}  ({} coords)",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.report.max_relative_error,
            c.scaled_error,
            c.report.coordinates.len()
        );
    }
    Ok(ok)
}

fn dispatch(cli: Cli) -> Result<bool> {
    let mut run = Run::new(&cli.common)?;
    match cli.command {
        Command::Train { iters } => return train(&mut run, iters).map(|_| true),
        Command::GradCheck { .. } => {}
        _ => {
            run.cfg.echo(&run.out)?;
        }
    }
    match cli.command {
        Command::GenData => gen_data(&run)?,
        Command::Train { .. } => unreachable!(),
        Command::RenderTurntable {
            checkpoint,
            views,
            elevation,
        } => turntable(&run, checkpoint.as_deref(), views, elevation)?,
        Command::Interpolate {
            checkpoint,
            steps,
            freeze,
            no_meshes,
        } => interpolate(&run, checkpoint.as_deref(), steps, freeze.into(), !no_meshes)?,
        Command::ExtractMesh {
            checkpoint,
            resolution,
            level,
            latents,
            format,
        } => extract_meshes(&run, checkpoint.as_deref(), resolution, level, latents, format)?,
        Command::EvalFd { checkpoint, n_samples } => eval_fd(&run, checkpoint.as_deref(), n_samples)?,
        Command::GradCheck { samples, tolerance } => return grad_check(&run, samples, tolerance),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
