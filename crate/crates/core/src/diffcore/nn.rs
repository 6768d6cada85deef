//! Layer stacks with hand-written reverse-mode gradients.
//!
//! A stack is a chain of stages `a_l = A_l(h_{l-1}) + b_l`, `h_l = φ_l(a_l)`,
//! where each `A_l` is linear in both its weights and its input. Activations
//! are stored as 2-D arrays: dense stages use `rows = batch`, convolution
//! stages use `rows = channels, cols = pixels`.
//!
//! Besides the usual backward pass, the stack supports differentiating a loss
//! defined on the *input gradient* `g_0 = ∂(⟨g_top, h_L⟩)/∂h_0` with respect to
//! the weights ("double backward"). This is what the R1 penalty and the
//! surface-normal smoothness loss need.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::params::{GradientRecord, ParameterLayout, ParameterStore, SegmentId};
use crate::error::Result;
use crate::real::{sigmoid, softplus, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    /// `softplus(β a) / β`
    Softplus { beta: f64 },
    /// `slope·a + (1 − slope)·softplus(β a)/β`; tends to a leaky ReLU as β → ∞.
    SmoothLeaky { slope: f64, beta: f64 },
}

impl Activation {
    #[inline]
    pub fn value<T: Real>(self, a: T) -> T {
        match self {
            Activation::Identity => a,
            Activation::Relu => a.max(T::zero()),
            Activation::Softplus { beta } => {
                let b = T::lit(beta);
                softplus(b * a) / b
            }
            Activation::SmoothLeaky { slope, beta } => {
                let b = T::lit(beta);
                let k = T::lit(slope);
                k * a + (T::one() - k) * softplus(b * a) / b
            }
        }
    }

    #[inline]
    pub fn derivative<T: Real>(self, a: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if a > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Softplus { beta } => sigmoid(T::lit(beta) * a),
            Activation::SmoothLeaky { slope, beta } => {
                let k = T::lit(slope);
                k + (T::one() - k) * sigmoid(T::lit(beta) * a)
            }
        }
    }

    #[inline]
    pub fn second_derivative<T: Real>(self, a: T) -> T {
        match self {
            Activation::Identity | Activation::Relu => T::zero(),
            Activation::Softplus { beta } => {
                let b = T::lit(beta);
                let s = sigmoid(b * a);
                b * s * (T::one() - s)
            }
            Activation::SmoothLeaky { slope, beta } => {
                let b = T::lit(beta);
                let s = sigmoid(b * a);
                (T::one() - T::lit(slope)) * b * s * (T::one() - s)
            }
        }
    }

    fn has_curvature(self) -> bool {
        !matches!(self, Activation::Identity | Activation::Relu)
    }
}

/// One linear-plus-bias map of a stack.
pub trait Stage<T: Real>: Sync {
    fn activation(&self) -> Activation;
    /// `A(x)` without bias.
    fn linear(&self, p: &ParameterStore<T>, x: ArrayView2<T>) -> Array2<T>;
    fn add_bias(&self, p: &ParameterStore<T>, a: &mut Array2<T>);
    /// `Aᵀ(d)`.
    fn linear_transpose(&self, p: &ParameterStore<T>, d: ArrayView2<T>) -> Array2<T>;
    /// `∂⟨d, A(x)⟩/∂W` accumulated into `g`.
    fn accumulate_weight_grad(&self, g: &mut GradientRecord<T>, d: ArrayView2<T>, x: ArrayView2<T>);
    fn accumulate_bias_grad(&self, g: &mut GradientRecord<T>, d: ArrayView2<T>);
}

/// Fully connected stage over a batch (`rows = samples`).
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: SegmentId,
    pub bias: SegmentId,
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn register(
        layout: &mut ParameterLayout,
        name: &str,
        inputs: usize,
        outputs: usize,
        activation: Activation,
    ) -> Result<Self> {
        let weight = layout.push(format!("{name}.weight"), inputs * outputs)?;
        let bias = layout.push(format!("{name}.bias"), outputs)?;
        Ok(Self {
            weight,
            bias,
            inputs,
            outputs,
            activation,
        })
    }

    pub fn weight_view<'a, T: Real>(&self, p: &'a ParameterStore<T>) -> ArrayView2<'a, T> {
        ArrayView2::from_shape((self.outputs, self.inputs), p.segment(self.weight))
            .expect("dense weight shape")
    }

    /// Uniform fan-in init with variance `gain²/fan_in`, zero bias.
    pub fn init_uniform<R: Rng>(&self, p: &mut ParameterStore<f64>, gain: f64, rng: &mut R) {
        let bound = gain * (3.0 / self.inputs as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
        for w in p.segment_mut(self.weight) {
            *w = dist.sample(rng);
        }
        p.segment_mut(self.bias).fill(0.0);
    }
}

impl<T: Real> Stage<T> for Dense {
    fn activation(&self) -> Activation {
        self.activation
    }

    fn linear(&self, p: &ParameterStore<T>, x: ArrayView2<T>) -> Array2<T> {
        x.dot(&self.weight_view(p).t())
    }

    fn add_bias(&self, p: &ParameterStore<T>, a: &mut Array2<T>) {
        let b = ArrayView2::from_shape((1, self.outputs), p.segment(self.bias)).unwrap();
        *a += &b;
    }

    fn linear_transpose(&self, p: &ParameterStore<T>, d: ArrayView2<T>) -> Array2<T> {
        d.dot(&self.weight_view(p))
    }

    fn accumulate_weight_grad(&self, g: &mut GradientRecord<T>, d: ArrayView2<T>, x: ArrayView2<T>) {
        let dw = d.t().dot(&x);
        let seg = g.segment_mut(self.weight);
        for (s, v) in seg.iter_mut().zip(dw.iter()) {
            *s = *s + *v;
        }
    }

    fn accumulate_bias_grad(&self, g: &mut GradientRecord<T>, d: ArrayView2<T>) {
        let db = d.sum_axis(Axis(0));
        for (s, v) in g.segment_mut(self.bias).iter_mut().zip(db.iter()) {
            *s = *s + *v;
        }
    }
}

/// Square-kernel strided convolution over one feature map
/// (`rows = channels`, `cols = height·width`, row-major pixels).
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: SegmentId,
    pub bias: SegmentId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_size: usize,
    pub activation: Activation,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        layout: &mut ParameterLayout,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        in_size: usize,
        activation: Activation,
    ) -> Result<Self> {
        let weight = layout.push(
            format!("{name}.weight"),
            out_channels * in_channels * kernel * kernel,
        )?;
        let bias = layout.push(format!("{name}.bias"), out_channels)?;
        Ok(Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            in_size,
            activation,
        })
    }

    pub fn out_size(&self) -> usize {
        (self.in_size + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn weight_view<'a, T: Real>(&self, p: &'a ParameterStore<T>) -> ArrayView2<'a, T> {
        ArrayView2::from_shape((self.out_channels, self.patch_len()), p.segment(self.weight))
            .expect("conv weight shape")
    }

    /// Iterates `(column row, output pixel, input pixel)` triples of valid taps.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (n, k, st, pad) = (self.in_size, self.kernel, self.stride, self.pad as isize);
        let m = self.out_size();
        for c in 0..self.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    for oy in 0..m {
                        let iy = (oy * st + ky) as isize - pad;
                        if iy < 0 || iy >= n as isize {
                            continue;
                        }
                        for ox in 0..m {
                            let ix = (ox * st + kx) as isize - pad;
                            if ix < 0 || ix >= n as isize {
                                continue;
                            }
                            f(row, oy * m + ox, c * n * n + iy as usize * n + ix as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Real>(&self, x: ArrayView2<T>) -> Array2<T> {
        let m = self.out_size();
        let flat = x.as_standard_layout();
        let xs = flat.as_slice().expect("contiguous");
        let mut col = Array2::<T>::zeros((self.patch_len(), m * m));
        {
            let cs = col.as_slice_mut().unwrap();
            let width = m * m;
            self.for_each_tap(|row, out, inp| cs[row * width + out] = xs[inp]);
        }
        col
    }

    fn col2im<T: Real>(&self, col: &Array2<T>) -> Array2<T> {
        let n = self.in_size;
        let width = self.out_size() * self.out_size();
        let mut x = Array2::<T>::zeros((self.in_channels, n * n));
        {
            let xs = x.as_slice_mut().unwrap();
            let cs = col.as_slice().unwrap();
            self.for_each_tap(|row, out, inp| xs[inp] = xs[inp] + cs[row * width + out]);
        }
        x
    }

    /// Kaiming-style uniform init scaled for a leaky slope, zero bias.
    pub fn init_uniform<R: Rng>(&self, p: &mut ParameterStore<f64>, gain: f64, rng: &mut R) {
        let bound = gain * (3.0 / self.patch_len() as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
        for w in p.segment_mut(self.weight) {
            *w = dist.sample(rng);
        }
        p.segment_mut(self.bias).fill(0.0);
    }
}

impl<T: Real> Stage<T> for Conv2d {
    fn activation(&self) -> Activation {
        self.activation
    }

    fn linear(&self, p: &ParameterStore<T>, x: ArrayView2<T>) -> Array2<T> {
        self.weight_view(p).dot(&self.im2col(x))
    }

    fn add_bias(&self, p: &ParameterStore<T>, a: &mut Array2<T>) {
        let b = ArrayView2::from_shape((self.out_channels, 1), p.segment(self.bias)).unwrap();
        *a += &b;
    }

    fn linear_transpose(&self, p: &ParameterStore<T>, d: ArrayView2<T>) -> Array2<T> {
        let col = self.weight_view(p).t().dot(&d);
        self.col2im(&col.as_standard_layout().to_owned())
    }

    fn accumulate_weight_grad(&self, g: &mut GradientRecord<T>, d: ArrayView2<T>, x: ArrayView2<T>) {
        let dw = d.dot(&self.im2col(x).t());
        for (s, v) in g.segment_mut(self.weight).iter_mut().zip(dw.iter()) {
            *s = *s + *v;
        }
    }

    fn accumulate_bias_grad(&self, g: &mut GradientRecord<T>, d: ArrayView2<T>) {
        let db = d.sum_axis(Axis(1));
        for (s, v) in g.segment_mut(self.bias).iter_mut().zip(db.iter()) {
            *s = *s + *v;
        }
    }
}

/// Saved forward state of a stack.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    /// `h_{l-1}` for each stage (so `inputs[0]` is the stack input).
    pub inputs: Vec<Array2<T>>,
    /// Pre-activations `a_l`.
    pub pre: Vec<Array2<T>>,
    /// `h_L`.
    pub output: Array2<T>,
}

fn map2<T: Real>(a: &Array2<T>, f: impl Fn(T) -> T + Sync + Send) -> Array2<T> {
    a.mapv(f)
}

pub fn forward<T: Real, S: Stage<T>>(stages: &[S], p: &ParameterStore<T>, x: Array2<T>) -> Tape<T> {
    let mut inputs = Vec::with_capacity(stages.len());
    let mut pre = Vec::with_capacity(stages.len());
    let mut h = x;
    for stage in stages {
        let mut a = stage.linear(p, h.view());
        stage.add_bias(p, &mut a);
        let act = stage.activation();
        let next = map2(&a, |v| act.value(v));
        inputs.push(h);
        pre.push(a);
        h = next;
    }
    Tape {
        inputs,
        pre,
        output: h,
    }
}

/// Reverse pass. `d_out` is `∂L/∂h_L`; `inject[l]`, when present, is an extra
/// adjoint added directly to `∂L/∂a_l`. Returns `∂L/∂h_0`.
pub fn backward<T: Real, S: Stage<T>>(
    stages: &[S],
    p: &ParameterStore<T>,
    tape: &Tape<T>,
    d_out: Array2<T>,
    inject: Option<&[Array2<T>]>,
    grads: &mut GradientRecord<T>,
) -> Array2<T> {
    let mut dh = d_out;
    for (l, stage) in stages.iter().enumerate().rev() {
        let act = stage.activation();
        let mut da = dh;
        Zip::from(&mut da)
            .and(&tape.pre[l])
            .for_each(|d, &a| *d = *d * act.derivative(a));
        if let Some(inj) = inject {
            da += &inj[l];
        }
        stage.accumulate_weight_grad(grads, da.view(), tape.inputs[l].view());
        stage.accumulate_bias_grad(grads, da.view());
        dh = stage.linear_transpose(p, da.view());
    }
    dh
}

/// Input-gradient state: `g[l] = ∂⟨g_top, h_L⟩/∂h_l` for `l = 0..=L` and the
/// intermediate `δ_l = φ'(a_l) ⊙ g_l`.
#[derive(Debug, Clone)]
pub struct InputGradient<T> {
    pub g: Vec<Array2<T>>,
    pub delta: Vec<Array2<T>>,
}

impl<T> InputGradient<T> {
    pub fn at_input(&self) -> &Array2<T> {
        &self.g[0]
    }
}

pub fn input_gradient<T: Real, S: Stage<T>>(
    stages: &[S],
    p: &ParameterStore<T>,
    tape: &Tape<T>,
    g_top: Array2<T>,
) -> InputGradient<T> {
    let depth = stages.len();
    let mut g = vec![Array2::zeros((0, 0)); depth + 1];
    let mut delta = vec![Array2::zeros((0, 0)); depth];
    g[depth] = g_top;
    for (l, stage) in stages.iter().enumerate().rev() {
        let act = stage.activation();
        let mut d = g[l + 1].clone();
        Zip::from(&mut d)
            .and(&tape.pre[l])
            .for_each(|v, &a| *v = *v * act.derivative(a));
        g[l] = stage.linear_transpose(p, d.view());
        delta[l] = d;
    }
    InputGradient { g, delta }
}

/// Given `ḡ_0 = ∂Q/∂g_0` for some objective `Q(g_0)`, accumulates `∂Q/∂W`,
/// `∂Q/∂b` into `grads` and returns `(∂Q/∂g_top, ∂Q/∂h_0)`.
pub fn input_gradient_backward<T: Real, S: Stage<T>>(
    stages: &[S],
    p: &ParameterStore<T>,
    tape: &Tape<T>,
    ig: &InputGradient<T>,
    g0_bar: Array2<T>,
    grads: &mut GradientRecord<T>,
) -> (Array2<T>, Array2<T>) {
    let mut inject = Vec::with_capacity(stages.len());
    let mut any_curvature = false;
    let mut g_bar = g0_bar;
    for (l, stage) in stages.iter().enumerate() {
        // g_{l} = Aᵀ δ_l  ⇒  W̄ += ∂⟨ḡ_l, Aᵀ δ_l⟩/∂W,  δ̄_l = A(ḡ_l)
        stage.accumulate_weight_grad(grads, ig.delta[l].view(), g_bar.view());
        let delta_bar = stage.linear(p, g_bar.view());
        let act = stage.activation();
        let mut next = delta_bar.clone();
        Zip::from(&mut next)
            .and(&tape.pre[l])
            .for_each(|v, &a| *v = *v * act.derivative(a));
        let mut inj = Array2::zeros(delta_bar.raw_dim());
        if act.has_curvature() {
            any_curvature = true;
            Zip::from(&mut inj)
                .and(&tape.pre[l])
                .and(&ig.g[l + 1])
                .and(&delta_bar)
                .for_each(|o, &a, &g, &db| *o = act.second_derivative(a) * g * db);
        }
        inject.push(inj);
        g_bar = next;
    }
    let d_input = if any_curvature {
        let zero = Array2::zeros(tape.output.raw_dim());
        backward(stages, p, tape, zero, Some(&inject), grads)
    } else {
        Array2::zeros(tape.inputs[0].raw_dim())
    };
    (g_bar, d_input)
}

/// Splits the columns `[start, start+len)` out of a batch matrix.
pub fn columns<T: Real>(m: &Array2<T>, start: usize, len: usize) -> Array2<T> {
    m.slice(s![.., start..start + len]).to_owned()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::diffcore::gradcheck::{finite_difference_check, FnObjective};

    #[test]
    fn activation_derivatives_match_differences() {
        let acts = [
            Activation::Softplus { beta: 3.0 },
            Activation::SmoothLeaky {
                slope: 0.2,
                beta: 5.0,
            },
            Activation::Identity,
        ];
        for act in acts {
            for &a in &[-1.3f64, -0.2, 0.0, 0.4, 2.0] {
                let h = 1e-5;
                let d1 = (act.value(a + h) - act.value(a - h)) / (2.0 * h);
                let d2 = (act.derivative(a + h) - act.derivative(a - h)) / (2.0 * h);
                assert!((d1 - act.derivative(a)).abs() < 1e-8, "{act:?} {a}");
                assert!((d2 - act.second_derivative(a)).abs() < 1e-6, "{act:?} {a}");
            }
        }
    }

    #[test]
    fn smooth_leaky_tends_to_leaky_relu() {
        let act = Activation::SmoothLeaky {
            slope: 0.2,
            beta: 1e4,
        };
        assert!((act.value(1.0f64) - 1.0).abs() < 1e-6);
        assert!((act.value(-1.0f64) + 0.2).abs() < 1e-6);
    }

    struct Net {
        stages: Vec<Conv2d>,
        layout: Arc<ParameterLayout>,
    }

    fn conv_net() -> Net {
        let mut layout = ParameterLayout::new();
        let act = Activation::SmoothLeaky {
            slope: 0.2,
            beta: 4.0,
        };
        let c1 = Conv2d::register(&mut layout, "c1", 2, 3, 4, 2, 1, 8, act).unwrap();
        let c2 = Conv2d::register(&mut layout, "c2", 3, 2, 4, 2, 1, 4, act).unwrap();
        Net {
            stages: vec![c1, c2],
            layout: Arc::new(layout),
        }
    }

    fn random_params(layout: &Arc<ParameterLayout>, seed: u64) -> ParameterStore<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..layout.total_len())
            .map(|_| rng.random_range(-0.6..0.6))
            .collect();
        ParameterStore::from_values(layout.clone(), v).unwrap()
    }

    fn input() -> Array2<f64> {
        Array2::from_shape_fn((2, 64), |(c, i)| ((c * 64 + i) as f64 * 0.31).sin())
    }

    #[test]
    fn conv_transpose_is_adjoint() {
        let net = conv_net();
        let p = random_params(&net.layout, 1);
        let x = input();
        let y = Array2::from_shape_fn((3, 16), |(c, i)| ((c * 16 + i) as f64 * 0.7).cos());
        let ax = Stage::<f64>::linear(&net.stages[0], &p, x.view());
        let aty = Stage::<f64>::linear_transpose(&net.stages[0], &p, y.view());
        let lhs: f64 = (&ax * &y).sum();
        let rhs: f64 = (&x * &aty).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let net = conv_net();
        let p = random_params(&net.layout, 2);
        let weights = Array2::from_shape_fn((2, 4), |(c, i)| 0.3 + (c * 4 + i) as f64 * 0.1);
        let obj = FnObjective {
            value: |q: &ParameterStore<f64>| {
                let t = forward(&net.stages, q, input());
                Ok((&t.output * &weights).sum())
            },
            gradient: |q: &ParameterStore<f64>| {
                let t = forward(&net.stages, q, input());
                let mut g = GradientRecord::zeros_like(q);
                backward(&net.stages, q, &t, weights.clone(), None, &mut g);
                Ok(g)
            },
        };
        let r = finite_difference_check(&obj, &p, 1e-5, 200, 3).unwrap();
        assert!(r.max_relative_error < 1e-7, "{:?}", r.worst());
    }

    #[test]
    fn double_backward_matches_finite_differences() {
        // Q = ‖∂⟨w, h_L⟩/∂h_0‖², an R1-style objective.
        let net = conv_net();
        let p = random_params(&net.layout, 4);
        let top = Array2::from_shape_fn((2, 4), |(c, i)| 0.5 - (c * 4 + i) as f64 * 0.15);
        let value = |q: &ParameterStore<f64>| {
            let t = forward(&net.stages, q, input());
            let ig = input_gradient(&net.stages, q, &t, top.clone());
            Ok(ig.at_input().mapv(|v| v * v).sum())
        };
        let obj = FnObjective {
            value,
            gradient: |q: &ParameterStore<f64>| {
                let t = forward(&net.stages, q, input());
                let ig = input_gradient(&net.stages, q, &t, top.clone());
                let g0_bar = ig.at_input() * 2.0;
                let mut g = GradientRecord::zeros_like(q);
                input_gradient_backward(&net.stages, q, &t, &ig, g0_bar, &mut g);
                Ok(g)
            },
        };
        let r = finite_difference_check(&obj, &p, 1e-5, 200, 5).unwrap();
        assert!(r.max_relative_error < 1e-6, "{:?}", r.worst());
    }

    #[test]
    fn dense_double_backward_returns_input_adjoint() {
        // Q = ⟨c, g_0⟩ with g_0 the input gradient; check ∂Q/∂h_0 by differences.
        let mut layout = ParameterLayout::new();
        let act = Activation::Softplus { beta: 2.0 };
        let stages = vec![
            Dense::register(&mut layout, "l0", 3, 4, act).unwrap(),
            Dense::register(&mut layout, "l1", 4, 4, act).unwrap(),
        ];
        let layout = Arc::new(layout);
        let p = random_params(&layout, 9);
        let x = Array2::from_shape_vec((1, 3), vec![0.3, -0.7, 0.2]).unwrap();
        let top = Array2::from_shape_vec((1, 4), vec![0.5, -1.0, 0.25, 0.8]).unwrap();
        let c = Array2::from_shape_vec((1, 3), vec![1.0, 0.5, -2.0]).unwrap();
        let q = |x: &Array2<f64>| {
            let t = forward(&stages, &p, x.clone());
            (input_gradient(&stages, &p, &t, top.clone()).at_input() * &c).sum()
        };
        let t = forward(&stages, &p, x.clone());
        let ig = input_gradient(&stages, &p, &t, top.clone());
        let mut g = GradientRecord::zeros_like(&p);
        let (_, dx) = input_gradient_backward(&stages, &p, &t, &ig, c.clone(), &mut g);
        for j in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[[0, j]] += 1e-5;
            xm[[0, j]] -= 1e-5;
            let numeric = (q(&xp) - q(&xm)) / 2e-5;
            assert!((numeric - dx[[0, j]]).abs() < 1e-7, "{j}: {numeric} vs {}", dx[[0, j]]);
        }
    }
}
