//! The conditional coordinate network.
//!
//! ```text
//! [γ(x), z_s] ─ trunk (softplus) ─ h ─ readout ─ s ──sigmoid──▶ occupancy
//!                                  │
//!             [h, γ(d), z_a] ─ head (relu, linear) ──sigmoid──▶ color
//! ```
//!
//! Occupancy only sees `(x, z_s)`; the view direction and appearance code
//! enter through the head alone.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::encoding::PositionalEncoding;
use super::latent::LatentCodes;
use super::{FieldInput, FieldSample};
use crate::diffcore::nn::{self, Activation, Dense, Tape};
use crate::diffcore::{GradientRecord, ParameterLayout, ParameterStore};
use crate::error::{contract, Error, Result};
use crate::real::{sigmoid, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub shape_dim: usize,
    pub appearance_dim: usize,
    /// Hidden width of the occupancy trunk.
    pub width: usize,
    /// Number of hidden trunk layers.
    pub depth: usize,
    pub head_width: usize,
    pub position_frequencies: usize,
    pub direction_frequencies: usize,
    pub init_sphere_radius: f64,
    /// Slope of the initial pre-sigmoid output `sharpness·(r − ‖x‖)`.
    pub init_sharpness: f64,
    pub softplus_beta: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            shape_dim: 64,
            appearance_dim: 64,
            width: 128,
            depth: 4,
            head_width: 128,
            position_frequencies: 8,
            direction_frequencies: 4,
            init_sphere_radius: 0.5,
            init_sharpness: 10.0,
            softplus_beta: 100.0,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(
            self.shape_dim >= 1 && self.appearance_dim >= 1,
            "field latent dims must be >= 1"
        );
        contract!(
            self.width >= 1 && self.depth >= 1 && self.head_width >= 1,
            "field widths and depth must be >= 1"
        );
        contract!(
            self.init_sphere_radius > 0.0,
            "init_sphere_radius must be positive"
        );
        contract!(self.init_sharpness > 0.0, "init_sharpness must be positive");
        contract!(self.softplus_beta > 0.0, "softplus_beta must be positive");
        Ok(())
    }
}

/// Architecture plus the segment map into a [`ParameterStore`].
#[derive(Debug, Clone)]
pub struct FieldNetwork {
    config: FieldConfig,
    layout: Arc<ParameterLayout>,
    position: PositionalEncoding,
    direction: PositionalEncoding,
    trunk: Vec<Dense>,
    readout: Dense,
    head: Vec<Dense>,
}

/// Saved state of a batched forward pass.
#[derive(Debug, Clone)]
pub struct FieldForward<T> {
    points: Array2<T>,
    directions: Array2<T>,
    trunk: Tape<T>,
    head: Tape<T>,
    pub logits: Array1<T>,
    pub colors: Array2<T>,
}

impl<T: Real> FieldForward<T> {
    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn occupancy(&self, i: usize) -> T {
        sigmoid(self.logits[i])
    }
}

/// Gradients of a batched loss with respect to the network inputs.
#[derive(Debug, Clone)]
pub struct FieldInputGrads<T> {
    pub points: Array2<T>,
    pub directions: Array2<T>,
    pub shape: Vec<T>,
    pub appearance: Vec<T>,
}

/// `∇_x s` for a batch of points, with the state needed to differentiate a
/// loss on it with respect to the parameters.
#[derive(Debug, Clone)]
pub struct LogitGradient<T> {
    points: Array2<T>,
    tape: Tape<T>,
    input_grad: nn::InputGradient<T>,
    pub logits: Array1<T>,
    /// Row `i` is `∂s/∂x` at point `i`.
    pub gradients: Array2<T>,
}

fn rows3<T: Real>(m: &Array2<T>, i: usize) -> [T; 3] {
    [m[[i, 0]], m[[i, 1]], m[[i, 2]]]
}

fn check_finite<T: Real>(what: &str, values: impl IntoIterator<Item = T>) -> Result<()> {
    for (i, v) in values.into_iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("non-finite {what} at row {i}")));
        }
    }
    Ok(())
}

impl FieldNetwork {
    pub fn new(config: FieldConfig) -> Result<Self> {
        config.validate()?;
        let position = PositionalEncoding::new(config.position_frequencies);
        let direction = PositionalEncoding::new(config.direction_frequencies);
        let mut layout = ParameterLayout::new();
        let soft = Activation::Softplus {
            beta: config.softplus_beta,
        };
        let mut trunk = Vec::with_capacity(config.depth);
        let mut fan_in = position.dim() + config.shape_dim;
        for l in 0..config.depth {
            trunk.push(Dense::register(
                &mut layout,
                &format!("trunk.{l}"),
                fan_in,
                config.width,
                soft,
            )?);
            fan_in = config.width;
        }
        let readout = Dense::register(&mut layout, "readout", config.width, 1, Activation::Identity)?;
        let head_in = config.width + direction.dim() + config.appearance_dim;
        let head = vec![
            Dense::register(&mut layout, "head.0", head_in, config.head_width, Activation::Relu)?,
            Dense::register(&mut layout, "head.1", config.head_width, 3, Activation::Identity)?,
        ];
        Ok(Self {
            config,
            layout: Arc::new(layout),
            position,
            direction,
            trunk,
            readout,
            head,
        })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn layout(&self) -> &Arc<ParameterLayout> {
        &self.layout
    }

    fn check_params<T: Real>(&self, p: &ParameterStore<T>) -> Result<()> {
        if !p.same_layout(&self.layout) {
            return Err(Error::Shape(
                "parameter store does not match the field architecture".into(),
            ));
        }
        Ok(())
    }

    fn check_codes<T: Real>(&self, codes: &LatentCodes<T>) -> Result<()> {
        if codes.shape.len() != self.config.shape_dim
            || codes.appearance.len() != self.config.appearance_dim
        {
            return Err(Error::Contract(format!(
                "latent dims ({}, {}) do not match config ({}, {})",
                codes.shape.len(),
                codes.appearance.len(),
                self.config.shape_dim,
                self.config.appearance_dim
            )));
        }
        Ok(())
    }

    fn trunk_input<T: Real>(&self, points: &Array2<T>, shape: &[T]) -> Array2<T> {
        let enc = self.position.dim();
        let m = points.nrows();
        let mut x0 = Array2::<T>::zeros((m, enc + shape.len()));
        for (i, mut row) in x0.axis_iter_mut(Axis(0)).enumerate() {
            let r = row.as_slice_mut().expect("row-major");
            self.position.encode_into(rows3(points, i), &mut r[..enc]);
            r[enc..].copy_from_slice(shape);
        }
        x0
    }

    fn readout_logits<T: Real>(&self, p: &ParameterStore<T>, h: &Array2<T>) -> Array1<T> {
        let w = ArrayView2::from_shape((self.config.width, 1), p.segment(self.readout.weight))
            .expect("readout shape");
        let b = p.segment(self.readout.bias)[0];
        h.dot(&w).column(0).mapv(|v| v + b)
    }

    fn trunk_forward<T: Real>(
        &self,
        p: &ParameterStore<T>,
        points: &Array2<T>,
        shape: &[T],
    ) -> (Tape<T>, Array1<T>) {
        let tape = nn::forward(&self.trunk, p, self.trunk_input(points, shape));
        let logits = self.readout_logits(p, &tape.output);
        (tape, logits)
    }

    /// Pre-sigmoid occupancy for a batch of points (rows of `points`).
    pub fn occupancy_logits<T: Real>(
        &self,
        p: &ParameterStore<T>,
        points: &Array2<T>,
        shape: &[T],
    ) -> Result<Array1<T>> {
        self.check_params(p)?;
        contract!(
            shape.len() == self.config.shape_dim,
            "shape code has dim {}, expected {}",
            shape.len(),
            self.config.shape_dim
        );
        let (_, logits) = self.trunk_forward(p, points, shape);
        check_finite("occupancy logit", logits.iter().copied())?;
        Ok(logits)
    }

    /// Full forward pass. `directions` holds one unit direction per row.
    pub fn forward<T: Real>(
        &self,
        p: &ParameterStore<T>,
        points: &Array2<T>,
        directions: &Array2<T>,
        codes: &LatentCodes<T>,
    ) -> Result<FieldForward<T>> {
        self.check_params(p)?;
        self.check_codes(codes)?;
        let m = points.nrows();
        if directions.nrows() != m || points.ncols() != 3 || directions.ncols() != 3 {
            return Err(Error::Shape(format!(
                "points {:?} / directions {:?}",
                points.dim(),
                directions.dim()
            )));
        }
        let (trunk, logits) = self.trunk_forward(p, points, &codes.shape);

        let w = self.config.width;
        let de = self.direction.dim();
        let mut head_in = Array2::<T>::zeros((m, w + de + self.config.appearance_dim));
        head_in.slice_mut(s![.., ..w]).assign(&trunk.output);
        for (i, mut row) in head_in.axis_iter_mut(Axis(0)).enumerate() {
            let r = row.as_slice_mut().expect("row-major");
            self.direction.encode_into(rows3(directions, i), &mut r[w..w + de]);
            r[w + de..].copy_from_slice(&codes.appearance);
        }
        let head = nn::forward(&self.head, p, head_in);
        let colors = head.output.mapv(sigmoid);

        check_finite("occupancy logit", logits.iter().copied())?;
        check_finite("color", colors.iter().copied())?;
        Ok(FieldForward {
            points: points.clone(),
            directions: directions.clone(),
            trunk,
            head,
            logits,
            colors,
        })
    }

    /// Accumulates parameter gradients of a loss with adjoints `d_logits`
    /// (on the pre-sigmoid occupancy) and `d_colors` (on the final colors).
    pub fn backward<T: Real>(
        &self,
        p: &ParameterStore<T>,
        fwd: &FieldForward<T>,
        d_logits: &Array1<T>,
        d_colors: &Array2<T>,
        grads: &mut GradientRecord<T>,
    ) -> FieldInputGrads<T> {
        let w = self.config.width;
        let de = self.direction.dim();
        let d_pre = ndarray::Zip::from(d_colors)
            .and(&fwd.colors)
            .map_collect(|&d, &c| d * c * (T::one() - c));
        let d_head_in = nn::backward(&self.head, p, &fwd.head, d_pre, None, grads);

        let w_out = p.segment(self.readout.weight);
        let mut d_h = d_head_in.slice(s![.., ..w]).to_owned();
        for (i, mut row) in d_h.axis_iter_mut(Axis(0)).enumerate() {
            for (v, &wj) in row.iter_mut().zip(w_out) {
                *v = *v + d_logits[i] * wj;
            }
        }
        {
            let dw = fwd.trunk.output.t().dot(d_logits);
            for (g, v) in grads.segment_mut(self.readout.weight).iter_mut().zip(dw.iter()) {
                *g = *g + *v;
            }
            let db = grads.segment_mut(self.readout.bias);
            db[0] = db[0] + d_logits.sum();
        }
        let d_x0 = nn::backward(&self.trunk, p, &fwd.trunk, d_h, None, grads);

        let enc = self.position.dim();
        let m = fwd.len();
        let mut d_points = Array2::<T>::zeros((m, 3));
        let mut d_dirs = Array2::<T>::zeros((m, 3));
        for i in 0..m {
            let row = d_x0.row(i);
            let gx = self
                .position
                .pullback(rows3(&fwd.points, i), &row.as_slice().expect("row-major")[..enc]);
            let hrow = d_head_in.row(i);
            let gd = self.direction.pullback(
                rows3(&fwd.directions, i),
                &hrow.as_slice().expect("row-major")[w..w + de],
            );
            for j in 0..3 {
                d_points[[i, j]] = gx[j];
                d_dirs[[i, j]] = gd[j];
            }
        }
        let shape = d_x0.slice(s![.., enc..]).sum_axis(Axis(0)).to_vec();
        let appearance = d_head_in.slice(s![.., w + de..]).sum_axis(Axis(0)).to_vec();
        FieldInputGrads {
            points: d_points,
            directions: d_dirs,
            shape,
            appearance,
        }
    }

    /// Evaluates `∂s/∂x` (the unnormalized inward normal direction).
    pub fn logit_gradient<T: Real>(
        &self,
        p: &ParameterStore<T>,
        points: &Array2<T>,
        shape: &[T],
    ) -> Result<LogitGradient<T>> {
        self.check_params(p)?;
        let (tape, logits) = self.trunk_forward(p, points, shape);
        let m = points.nrows();
        let w_out = p.segment(self.readout.weight);
        let g_top = Array2::from_shape_fn((m, self.config.width), |(_, j)| w_out[j]);
        let input_grad = nn::input_gradient(&self.trunk, p, &tape, g_top);
        let enc = self.position.dim();
        let mut gradients = Array2::<T>::zeros((m, 3));
        for i in 0..m {
            let row = input_grad.at_input().row(i);
            let g = self
                .position
                .pullback(rows3(points, i), &row.as_slice().expect("row-major")[..enc]);
            for j in 0..3 {
                gradients[[i, j]] = g[j];
            }
        }
        check_finite("logit gradient", gradients.iter().copied())?;
        Ok(LogitGradient {
            points: points.clone(),
            tape,
            input_grad,
            logits,
            gradients,
        })
    }

    /// Accumulates `∂Q/∂θ` for a loss `Q` on the rows of
    /// [`LogitGradient::gradients`], given `d_gradients = ∂Q/∂(∂s/∂x)`.
    /// Point positions are treated as constants.
    pub fn logit_gradient_backward<T: Real>(
        &self,
        p: &ParameterStore<T>,
        lg: &LogitGradient<T>,
        d_gradients: &Array2<T>,
        grads: &mut GradientRecord<T>,
    ) {
        let enc = self.position.dim();
        let m = lg.points.nrows();
        let mut g0_bar = Array2::<T>::zeros(lg.input_grad.at_input().raw_dim());
        for i in 0..m {
            let mut row = g0_bar.row_mut(i);
            let r = row.as_slice_mut().expect("row-major");
            self.position
                .pushforward_into(rows3(&lg.points, i), rows3(d_gradients, i), &mut r[..enc]);
        }
        let (g_top_bar, _) =
            nn::input_gradient_backward(&self.trunk, p, &lg.tape, &lg.input_grad, g0_bar, grads);
        let dw = g_top_bar.sum_axis(Axis(0));
        for (g, v) in grads.segment_mut(self.readout.weight).iter_mut().zip(dw.iter()) {
            *g = *g + *v;
        }
    }

    /// Single-point evaluation.
    pub fn evaluate<T: Real>(
        &self,
        p: &ParameterStore<T>,
        input: &FieldInput<T>,
        codes: &LatentCodes<T>,
    ) -> Result<FieldSample<T>> {
        let pts = Array2::from_shape_vec((1, 3), input.x.to_vec()).expect("1x3");
        let dirs = Array2::from_shape_vec((1, 3), input.d.to_vec()).expect("1x3");
        let f = self.forward(p, &pts, &dirs, codes)?;
        Ok(FieldSample::from_logit(
            f.logits[0],
            [f.colors[[0, 0]], f.colors[[0, 1]], f.colors[[0, 2]]],
        ))
    }

    /// Geometric initialization: the 0.5-level set of occupancy is a sphere of
    /// radius `init_sphere_radius` for every shape code.
    ///
    /// The first trunk layer responds to `x` through unit directions spread
    /// evenly over the sphere (a randomly rotated Fibonacci lattice), deeper
    /// trunk layers start near identity, and the readout averages the units so
    /// that `s(x) ≈ sharpness·(r − ‖x‖)`; `E_u[max(0, u·x)] = ‖x‖/4` for `u`
    /// uniform on the sphere. Encoding and shape-code columns start at zero. The
    /// readout bias is calibrated so the mean logit on the target sphere is 0.
    pub fn geometric_sphere_init<T: Real>(&self, rng_seed: u64) -> ParameterStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut p = ParameterStore::<f64>::zeros(self.layout.clone());
        let width = self.config.width;
        let rotation = random_rotation(&mut rng);
        let dirs = fibonacci_sphere(width);

        let first = &self.trunk[0];
        {
            let wseg = p.segment_mut(first.weight);
            for (i, u) in dirs.iter().enumerate() {
                let ru = mat_vec(&rotation, u);
                wseg[i * first.inputs..i * first.inputs + 3].copy_from_slice(&ru);
            }
        }
        let noise = Uniform::new_inclusive(-1e-3, 1e-3).expect("bound");
        for layer in &self.trunk[1..] {
            let wseg = p.segment_mut(layer.weight);
            for i in 0..width {
                for j in 0..width {
                    let base = if i == j { 1.0 } else { 0.0 };
                    wseg[i * width + j] = base + noise.sample(&mut rng);
                }
            }
        }
        let scale = -self.config.init_sharpness * 4.0 / width as f64;
        p.segment_mut(self.readout.weight).fill(scale);

        self.head[0].init_uniform(&mut p, 2f64.sqrt(), &mut rng);
        self.head[1].init_uniform(&mut p, 1.0, &mut rng);

        // calibrate the readout bias on the target sphere
        let probe = fibonacci_sphere(512);
        let r = self.config.init_sphere_radius;
        let pts = Array2::from_shape_fn((probe.len(), 3), |(i, j)| probe[i][j] * r);
        let zs = vec![0.0; self.config.shape_dim];
        let (tape, logits) = self.trunk_forward(&p, &pts, &zs);
        drop(tape);
        let mean = logits.mean().unwrap_or(0.0);
        p.segment_mut(self.readout.bias)[0] = -mean;

        p.cast()
    }

    /// Standard random initialization (no geometric prior); used for
    /// gradient verification at generic parameter values.
    pub fn random_init<T: Real>(&self, rng_seed: u64, scale: f64) -> ParameterStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let values = (0..self.layout.total_len())
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        ParameterStore::from_values(self.layout.clone(), values)
            .expect("finite")
            .cast()
    }
}

fn fibonacci_sphere(n: usize) -> Vec<[f64; 3]> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

fn random_rotation<R: Rng>(rng: &mut R) -> [[f64; 3]; 3] {
    let mut q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    q.iter_mut().for_each(|v| *v /= n);
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn mat_vec(m: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}
