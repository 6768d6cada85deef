use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diffcore::{finite_difference_check, FnObjective, GradientRecord};

fn small_config() -> FieldConfig {
    FieldConfig {
        shape_dim: 3,
        appearance_dim: 2,
        width: 8,
        depth: 2,
        head_width: 6,
        position_frequencies: 2,
        direction_frequencies: 1,
        init_sphere_radius: 0.5,
        init_sharpness: 10.0,
        softplus_beta: 4.0,
    }
}

fn codes(seed: u64, cfg: &FieldConfig) -> LatentCodes<f64> {
    sample_latents(&mut ChaCha8Rng::seed_from_u64(seed), cfg.shape_dim, cfg.appearance_dim).unwrap()
}

fn batch() -> (Array2<f64>, Array2<f64>) {
    let pts = Array2::from_shape_fn((5, 3), |(i, j)| ((i * 3 + j) as f64 * 0.41).sin() * 0.7);
    let dirs = Array2::from_shape_fn((5, 3), |(i, j)| ((i * 7 + j * 3) as f64 * 0.9).cos());
    let dirs = Array2::from_shape_fn((5, 3), |(i, j)| {
        let n = dirs.row(i).mapv(|v| v * v).sum().sqrt();
        dirs[[i, j]] / n
    });
    (pts, dirs)
}

#[test]
fn sigma_to_alpha_cases() {
    assert_eq!(sigma_to_alpha(0.0, 0.3).unwrap(), 0.0);
    assert!((sigma_to_alpha(1e9, 0.3).unwrap() - 1.0).abs() < 1e-15);
    assert!((sigma_to_alpha(1.0, std::f64::consts::LN_2).unwrap() - 0.5).abs() < 1e-15);
    assert!(sigma_to_alpha(-1.0, 0.3).is_err());
    assert!(sigma_to_alpha(1.0, 0.0).is_err());
    // monotone in both arguments
    assert!(sigma_to_alpha(2.0, 0.1).unwrap() > sigma_to_alpha(1.0, 0.1).unwrap());
    assert!(sigma_to_alpha(1.0, 0.2).unwrap() > sigma_to_alpha(1.0, 0.1).unwrap());
}

#[test]
fn field_input_requires_unit_direction() {
    assert!(FieldInput::new([0.0f32; 3], [0.0, 0.0, 1.0]).is_ok());
    assert!(FieldInput::new([0.0f32; 3], [0.0, 0.0, 1.1]).is_err());
}

#[test]
fn occupancy_ignores_appearance_and_direction() {
    let cfg = small_config();
    let net = FieldNetwork::new(cfg.clone()).unwrap();
    let p: ParameterStore<f32> = net.random_init(3, 0.5);
    let mut a = codes(1, &cfg).cast::<f32>();
    let x = [0.1, -0.2, 0.3];
    let s1 = net
        .evaluate(&p, &FieldInput::new(x, [1.0, 0.0, 0.0]).unwrap(), &a)
        .unwrap();
    a.appearance = vec![5.0, -3.0];
    let s2 = net
        .evaluate(&p, &FieldInput::new(x, [1.0, 0.0, 0.0]).unwrap(), &a)
        .unwrap();
    let s3 = net
        .evaluate(&p, &FieldInput::new(x, [0.0, 0.6, 0.8]).unwrap(), &a)
        .unwrap();
    assert_eq!(s1.occupancy.to_bits(), s2.occupancy.to_bits());
    assert_eq!(s2.occupancy.to_bits(), s3.occupancy.to_bits());
    assert_ne!(s1.color, s2.color);
    assert_ne!(s2.color, s3.color);
    assert!(s1.occupancy > 0.0 && s1.occupancy < 1.0);
}

/// Independent bisection on the initialized field along `o + t·d`.
fn bisect_root(net: &FieldNetwork, p: &ParameterStore<f32>, zs: &[f32], d: [f64; 3]) -> f64 {
    let occ = |t: f64| {
        let x = Array2::from_shape_vec((1, 3), d.iter().map(|v| (v * t) as f32).collect()).unwrap();
        net.occupancy_logits(p, &x, zs).unwrap()[0]
    };
    let (mut lo, mut hi) = (0.0, 2.0);
    assert!(occ(lo) > 0.0 && occ(hi) < 0.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if occ(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn sphere_init_roots_within_ten_percent() {
    let cfg = FieldConfig::default();
    let net = FieldNetwork::new(cfg.clone()).unwrap();
    let p: ParameterStore<f32> = net.geometric_sphere_init(7);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let z: LatentCodes<f32> = sample_latents(&mut rng, cfg.shape_dim, cfg.appearance_dim).unwrap();
        for _ in 0..100 {
            let g: [f64; 3] = std::array::from_fn(|_| rand::Rng::sample(&mut rng, rand_distr::StandardNormal));
            let n = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            let d = [g[0] / n, g[1] / n, g[2] / n];
            let t = bisect_root(&net, &p, &z.shape, d);
            worst = worst.max((t - 0.5).abs() / 0.5);
        }
    }
    assert!(worst < 0.1, "worst relative radius error {worst}");
}

#[test]
fn sphere_init_probe_points() {
    let cfg = FieldConfig {
        init_sphere_radius: 0.5,
        ..FieldConfig::default()
    };
    let net = FieldNetwork::new(cfg.clone()).unwrap();
    let p: ParameterStore<f32> = net.geometric_sphere_init(1);
    let z: LatentCodes<f32> =
        sample_latents(&mut ChaCha8Rng::seed_from_u64(4), cfg.shape_dim, cfg.appearance_dim).unwrap();
    let d = [0.0f32, 0.0, 1.0];
    let inside = net.evaluate(&p, &FieldInput::new([0.0; 3], d).unwrap(), &z).unwrap();
    let outside = net
        .evaluate(&p, &FieldInput::new([1.5 * 0.6, 1.5 * 0.8, 0.0], d).unwrap(), &z)
        .unwrap();
    assert!(inside.occupancy > 0.5, "{}", inside.occupancy);
    assert!(outside.occupancy < 0.5, "{}", outside.occupancy);
}

#[test]
fn distinct_seeds_give_distinct_stores() {
    let net = FieldNetwork::new(small_config()).unwrap();
    let a: ParameterStore<f32> = net.geometric_sphere_init(1);
    let b: ParameterStore<f32> = net.geometric_sphere_init(2);
    assert_ne!(a, b);
    assert_eq!(a, net.geometric_sphere_init::<f32>(1));
}

/// Scalar test loss `Σ a_i s_i + Σ b_ij c_ij` over a fixed batch.
fn weighted_output(net: &FieldNetwork, p: &ParameterStore<f64>, z: &LatentCodes<f64>, pts: &Array2<f64>, dirs: &Array2<f64>) -> (f64, Array1<f64>, Array2<f64>) {
    let f = net.forward(p, pts, dirs, z).unwrap();
    let a = Array1::from_shape_fn(f.len(), |i| 0.3 - 0.2 * i as f64);
    let b = Array2::from_shape_fn((f.len(), 3), |(i, j)| ((i + 2 * j) as f64).sin());
    let v = (&f.logits * &a).sum() + (&f.colors * &b).sum();
    (v, a, b)
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let cfg = small_config();
    let net = FieldNetwork::new(cfg.clone()).unwrap();
    let p: ParameterStore<f64> = net.random_init(5, 0.4);
    let z = codes(2, &cfg);
    let (pts, dirs) = batch();
    let obj = FnObjective {
        value: |q: &ParameterStore<f64>| Ok(weighted_output(&net, q, &z, &pts, &dirs).0),
        gradient: |q: &ParameterStore<f64>| {
            let f = net.forward(q, &pts, &dirs, &z)?;
            let (v, a, b) = weighted_output(&net, q, &z, &pts, &dirs);
            let mut g = GradientRecord::zeros_like(q);
            g.loss_value = v;
            net.backward(q, &f, &a, &b, &mut g);
            Ok(g)
        },
    };
    let r = finite_difference_check(&obj, &p, 1e-5, 400, 1).unwrap();
    assert!(r.max_relative_error < 1e-6, "{:?}", r.worst());
}

#[test]
fn input_gradients_match_finite_differences() {
    let cfg = small_config();
    let net = FieldNetwork::new(cfg.clone()).unwrap();
    let p: ParameterStore<f64> = net.random_init(8, 0.4);
    let z = codes(3, &cfg);
    let (pts, dirs) = batch();
    let f = net.forward(&p, &pts, &dirs, &z).unwrap();
    let (_, a, b) = weighted_output(&net, &p, &z, &pts, &dirs);
    let mut g = GradientRecord::zeros_like(&p);
    let ig = net.backward(&p, &f, &a, &b, &mut g);
    let h = 1e-6;
    let check = |analytic: f64, plus: f64, minus: f64, what: &str| {
        let numeric = (plus - minus) / (2.0 * h);
        let err = (analytic - numeric).abs() / numeric.abs().max(1.0);
        assert!(err < 1e-6, "{what}: {analytic} vs {numeric}");
    };
    for i in 0..pts.nrows() {
        for j in 0..3 {
            let mut pp = pts.clone();
            let mut pm = pts.clone();
            pp[[i, j]] += h;
            pm[[i, j]] -= h;
            check(
                ig.points[[i, j]],
                weighted_output(&net, &p, &z, &pp, &dirs).0,
                weighted_output(&net, &p, &z, &pm, &dirs).0,
                "x",
            );
        }
    }
    for k in 0..cfg.shape_dim {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp.shape[k] += h;
        zm.shape[k] -= h;
        check(
            ig.shape[k],
            weighted_output(&net, &p, &zp, &pts, &dirs).0,
            weighted_output(&net, &p, &zm, &pts, &dirs).0,
            "z_s",
        );
    }
    for k in 0..cfg.appearance_dim {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp.appearance[k] += h;
        zm.appearance[k] -= h;
        check(
            ig.appearance[k],
            weighted_output(&net, &p, &zp, &pts, &dirs).0,
            weighted_output(&net, &p, &zm, &pts, &dirs).0,
            "z_a",
        );
    }
}

#[test]
fn logit_gradient_matches_differences_and_its_backward() {
    let cfg = small_config();
    let net = FieldNetwork::new(cfg.clone()).unwrap();
    let p: ParameterStore<f64> = net.random_init(9, 0.5);
    let z = codes(4, &cfg);
    let (pts, _) = batch();
    let lg = net.logit_gradient(&p, &pts, &z.shape).unwrap();
    for i in 0..pts.nrows() {
        for j in 0..3 {
            let mut pp = pts.clone();
            let mut pm = pts.clone();
            pp[[i, j]] += 1e-6;
            pm[[i, j]] -= 1e-6;
            let num = (net.occupancy_logits(&p, &pp, &z.shape).unwrap()[i]
                - net.occupancy_logits(&p, &pm, &z.shape).unwrap()[i])
                / 2e-6;
            assert!((num - lg.gradients[[i, j]]).abs() < 1e-6 * num.abs().max(1.0));
        }
    }
    // Q = Σ c ⊙ ∇s, differentiated w.r.t. θ.
    let c = Array2::from_shape_fn((pts.nrows(), 3), |(i, j)| ((3 * i + j) as f64 * 1.3).cos());
    let obj = FnObjective {
        value: |q: &ParameterStore<f64>| {
            Ok((&net.logit_gradient(q, &pts, &z.shape)?.gradients * &c).sum())
        },
        gradient: |q: &ParameterStore<f64>| {
            let lg = net.logit_gradient(q, &pts, &z.shape)?;
            let mut g = GradientRecord::zeros_like(q);
            net.logit_gradient_backward(q, &lg, &c, &mut g);
            Ok(g)
        },
    };
    let r = finite_difference_check(&obj, &p, 1e-5, 300, 2).unwrap();
    assert!(r.max_relative_error < 1e-6, "{:?}", r.worst());
}

#[test]
fn mismatched_codes_are_rejected() {
    let cfg = small_config();
    let net = FieldNetwork::new(cfg).unwrap();
    let p: ParameterStore<f32> = net.random_init(0, 0.1);
    let bad = LatentCodes::new(vec![0.0f32; 7], vec![0.0; 2]).unwrap();
    assert!(net
        .evaluate(&p, &FieldInput::new([0.0; 3], [0.0, 0.0, 1.0]).unwrap(), &bad)
        .is_err());
}

#[test]
fn non_finite_activation_is_reported() {
    let net = FieldNetwork::new(small_config()).unwrap();
    let p: ParameterStore<f32> = net.random_init(1, 1e3);
    let zs = vec![1e38f32, 0.0, 0.0];
    let x = Array2::from_shape_vec((1, 3), vec![0.0f32, 0.0, 0.0]).unwrap();
    let r = net.occupancy_logits(&p, &x, &zs);
    assert!(matches!(r, Err(crate::Error::Evaluation(_))), "{r:?}");
}
