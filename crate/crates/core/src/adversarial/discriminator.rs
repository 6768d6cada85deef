use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::nn::{self, Activation, Conv2d};
use crate::diffcore::{GradientRecord, ParameterLayout, ParameterStore};
use crate::error::{contract, Error, Result};
use crate::real::Real;
use crate::rendering::Patch;

/// A differentiable scalar score on K×K patches.
pub trait Critic: Sync {
    fn layout(&self) -> &Arc<ParameterLayout>;

    fn patch_size(&self) -> usize;

    fn logit<T: Real>(&self, p: &ParameterStore<T>, patch: &Patch<T>) -> Result<T>;

    /// Evaluates `D(x)`, then accumulates `w·∂D/∂φ` into `grads` with
    /// `w = d_logit(D(x))`. Returns `D(x)` and `w·∂D/∂x`.
    fn backward<T: Real, F: FnOnce(T) -> T>(
        &self,
        p: &ParameterStore<T>,
        patch: &Patch<T>,
        d_logit: F,
        grads: &mut GradientRecord<T>,
    ) -> Result<(T, Patch<T>)>;

    /// `‖∂D/∂x‖²`; accumulates `weight·∂‖∂D/∂x‖²/∂φ` into `grads`.
    fn input_grad_norm_sq<T: Real>(
        &self,
        p: &ParameterStore<T>,
        patch: &Patch<T>,
        weight: T,
        grads: &mut GradientRecord<T>,
    ) -> Result<T>;

    fn check_patch<T: Real>(&self, patch: &Patch<T>) -> Result<()> {
        if patch.size != self.patch_size() || patch.pixels.len() != 3 * patch.size * patch.size {
            return Err(Error::Shape(format!(
                "discriminator expects {0}x{0}x3 patches, got size {1} with {2} values",
                self.patch_size(),
                patch.size,
                patch.pixels.len()
            )));
        }
        Ok(())
    }
}

/// Logit and parameter/input gradients of `D` for one patch.
pub fn discriminate<C: Critic, T: Real>(
    critic: &C,
    p: &ParameterStore<T>,
    patch: &Patch<T>,
) -> Result<(T, GradientRecord<T>, Patch<T>)> {
    let mut g = GradientRecord::zeros_like(p);
    let (logit, dx) = critic.backward(p, patch, |_| T::one(), &mut g)?;
    g.loss_value = logit.as_f64();
    Ok((logit, g, dx))
}

/// `R1 = mean_b ‖∂D/∂x_b‖²` over real patches; accumulates
/// `scale·∂R1/∂φ` into `grads`.
pub fn r1_penalty<C: Critic, T: Real>(
    critic: &C,
    p: &ParameterStore<T>,
    real: &[Patch<T>],
    scale: T,
    grads: &mut GradientRecord<T>,
) -> Result<T> {
    contract!(!real.is_empty(), "R1 penalty needs a non-empty batch");
    let w = scale / T::lit(real.len() as f64);
    let mut total = T::zero();
    for patch in real {
        total += critic.input_grad_norm_sq(p, patch, w, grads)?;
    }
    Ok(total / T::lit(real.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    /// Output channels of each stride-2 stage; there must be `log2(K)` of
    /// them so the last stage is 1×1.
    pub channels: Vec<usize>,
    pub leaky_slope: f64,
    /// Sharpness of the smoothed leaky activation.
    pub activation_beta: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            channels: vec![64, 128, 256, 512, 512],
            leaky_slope: 0.2,
            activation_beta: 10.0,
        }
    }
}

/// Strided convolutional critic: `log2(K)` 4×4 stride-2 stages then a 1×1
/// linear map to a scalar.
#[derive(Debug, Clone)]
pub struct ConvDiscriminator {
    config: DiscriminatorConfig,
    size: usize,
    stages: Vec<Conv2d>,
    layout: Arc<ParameterLayout>,
}

impl ConvDiscriminator {
    pub fn new(config: DiscriminatorConfig, patch_size: usize) -> Result<Self> {
        contract!(
            patch_size >= 2 && patch_size.is_power_of_two(),
            "discriminator patch size must be a power of two >= 2, got {patch_size}"
        );
        let stages_needed = patch_size.trailing_zeros() as usize;
        contract!(
            config.channels.len() == stages_needed,
            "patch size {patch_size} needs {stages_needed} stages, got {} channel entries",
            config.channels.len()
        );
        contract!(config.channels.iter().all(|&c| c >= 1), "channel widths must be positive");
        contract!(
            (0.0..1.0).contains(&config.leaky_slope) && config.activation_beta > 0.0,
            "leaky slope must lie in [0, 1) and activation beta be positive"
        );
        let act = Activation::SmoothLeaky {
            slope: config.leaky_slope,
            beta: config.activation_beta,
        };
        let mut layout = ParameterLayout::new();
        let mut stages = Vec::new();
        let (mut cin, mut size) = (3, patch_size);
        for (i, &cout) in config.channels.iter().enumerate() {
            stages.push(Conv2d::register(&mut layout, &format!("conv.{i}"), cin, cout, 4, 2, 1, size, act)?);
            cin = cout;
            size /= 2;
        }
        stages.push(Conv2d::register(&mut layout, "out", cin, 1, 1, 1, 0, 1, Activation::Identity)?);
        Ok(Self {
            config,
            size: patch_size,
            stages,
            layout: Arc::new(layout),
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    fn check_params<T: Real>(&self, p: &ParameterStore<T>) -> Result<()> {
        contract!(
            p.same_layout(&self.layout),
            "parameter store does not match the discriminator layout"
        );
        Ok(())
    }

    fn run<T: Real>(&self, p: &ParameterStore<T>, patch: &Patch<T>) -> Result<nn::Tape<T>> {
        self.check_params(p)?;
        self.check_patch(patch)?;
        let tape = nn::forward(&self.stages, p, patch.to_channels());
        let v = tape.output[[0, 0]];
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("discriminator logit {v}")));
        }
        Ok(tape)
    }

    /// Fan-in scaled uniform weights, zero biases, zero output layer.
    pub fn init<T: Real>(&self, rng_seed: u64) -> ParameterStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut p = ParameterStore::<f64>::zeros(self.layout.clone());
        let gain = (2.0 / (1.0 + self.config.leaky_slope.powi(2))).sqrt();
        for s in &self.stages[..self.stages.len() - 1] {
            s.init_uniform(&mut p, gain, &mut rng);
        }
        p.cast()
    }
}

/// Builds the critic's standard initialization.
pub fn init_discriminator<T: Real>(critic: &ConvDiscriminator, rng_seed: u64) -> ParameterStore<T> {
    critic.init(rng_seed)
}

impl Critic for ConvDiscriminator {
    fn layout(&self) -> &Arc<ParameterLayout> {
        &self.layout
    }

    fn patch_size(&self) -> usize {
        self.size
    }

    fn logit<T: Real>(&self, p: &ParameterStore<T>, patch: &Patch<T>) -> Result<T> {
        Ok(self.run(p, patch)?.output[[0, 0]])
    }

    fn backward<T: Real, F: FnOnce(T) -> T>(
        &self,
        p: &ParameterStore<T>,
        patch: &Patch<T>,
        d_logit: F,
        grads: &mut GradientRecord<T>,
    ) -> Result<(T, Patch<T>)> {
        let tape = self.run(p, patch)?;
        let logit = tape.output[[0, 0]];
        let d = Array2::from_elem((1, 1), d_logit(logit));
        let dx = nn::backward(&self.stages, p, &tape, d, None, grads);
        Ok((logit, Patch::from_channels(self.size, &dx)))
    }

    fn input_grad_norm_sq<T: Real>(
        &self,
        p: &ParameterStore<T>,
        patch: &Patch<T>,
        weight: T,
        grads: &mut GradientRecord<T>,
    ) -> Result<T> {
        let tape = self.run(p, patch)?;
        let ig = nn::input_gradient(&self.stages, p, &tape, Array2::from_elem((1, 1), T::one()));
        let g0 = ig.at_input();
        let value = g0.iter().map(|&v| v * v).fold(T::zero(), |a, b| a + b);
        let g0_bar = g0.mapv(|v| T::lit(2.0) * weight * v);
        nn::input_gradient_backward(&self.stages, p, &tape, &ig, g0_bar, grads);
        Ok(value)
    }
}

/// `D(x) = ⟨w, x⟩ + b`, for tests and as a minimal critic.
#[derive(Debug, Clone)]
pub struct LinearCritic {
    size: usize,
    layout: Arc<ParameterLayout>,
}

impl LinearCritic {
    pub fn new(patch_size: usize) -> Result<Self> {
        let mut layout = ParameterLayout::new();
        layout.push("linear.weight", patch_size * patch_size * 3)?;
        layout.push("linear.bias", 1)?;
        Ok(Self {
            size: patch_size,
            layout: Arc::new(layout),
        })
    }

    pub fn params<T: Real>(&self, weight: &[T], bias: T) -> Result<ParameterStore<T>> {
        let mut v = weight.to_vec();
        v.push(bias);
        ParameterStore::from_values(self.layout.clone(), v)
    }
}

impl Critic for LinearCritic {
    fn layout(&self) -> &Arc<ParameterLayout> {
        &self.layout
    }

    fn patch_size(&self) -> usize {
        self.size
    }

    fn logit<T: Real>(&self, p: &ParameterStore<T>, patch: &Patch<T>) -> Result<T> {
        self.check_patch(patch)?;
        let v = p.values();
        let n = patch.pixels.len();
        Ok(patch.pixels.iter().zip(&v[..n]).fold(v[n], |a, (&x, &w)| a + x * w))
    }

    fn backward<T: Real, F: FnOnce(T) -> T>(
        &self,
        p: &ParameterStore<T>,
        patch: &Patch<T>,
        d_logit: F,
        grads: &mut GradientRecord<T>,
    ) -> Result<(T, Patch<T>)> {
        let logit = self.logit(p, patch)?;
        let d = d_logit(logit);
        let n = patch.pixels.len();
        let g = grads.values_mut();
        for (gi, &x) in g[..n].iter_mut().zip(&patch.pixels) {
            *gi += d * x;
        }
        g[n] += d;
        let dx = p.values()[..n].iter().map(|&w| d * w).collect();
        Ok((logit, Patch::new(self.size, dx)?))
    }

    fn input_grad_norm_sq<T: Real>(
        &self,
        p: &ParameterStore<T>,
        patch: &Patch<T>,
        weight: T,
        grads: &mut GradientRecord<T>,
    ) -> Result<T> {
        self.check_patch(patch)?;
        let n = patch.pixels.len();
        let w = &p.values()[..n];
        for (g, &wi) in grads.values_mut()[..n].iter_mut().zip(w) {
            *g += T::lit(2.0) * weight * wi;
        }
        Ok(w.iter().map(|&v| v * v).fold(T::zero(), |a, b| a + b))
    }
}
