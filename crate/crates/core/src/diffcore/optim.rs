use serde::{Deserialize, Serialize};

use super::params::{GradientRecord, ParameterStore};
use crate::error::{Error, Result};
use crate::real::Real;

/// Whether a step minimizes (generator) or maximizes (discriminator) its loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Descent,
    Ascent,
}

impl Direction {
    fn sign<T: Real>(self) -> T {
        match self {
            Direction::Descent => -T::one(),
            Direction::Ascent => T::one(),
        }
    }
}

fn check_shapes<T: Real>(params: &ParameterStore<T>, grads: &GradientRecord<T>) -> Result<()> {
    if **params.layout() != **grads.layout() {
        return Err(Error::Shape(format!(
            "gradient layout ({} values) does not match parameter layout ({} values)",
            grads.values().len(),
            params.len()
        )));
    }
    Ok(())
}

/// Plain gradient step: `p ∓ lr·g`.
pub fn sgd_update<T: Real>(
    params: &ParameterStore<T>,
    grads: &GradientRecord<T>,
    lr: T,
    direction: Direction,
) -> Result<ParameterStore<T>> {
    check_shapes(params, grads)?;
    if !lr.is_finite() {
        return Err(Error::Contract(format!("learning rate {lr} is not finite")));
    }
    let step = direction.sign::<T>() * lr;
    let values = params
        .values()
        .iter()
        .zip(grads.values())
        .map(|(&p, &g)| p + step * g)
        .collect();
    ParameterStore::from_values(params.layout().clone(), values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd {
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.0
}
fn default_beta2() -> f64 {
    0.99
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Sgd { momentum: 0.0 }
    }
}

/// Stateful optimizer over one parameter store.
#[derive(Debug, Clone)]
pub struct Optimizer<T = f32> {
    kind: OptimizerKind,
    lr: T,
    direction: Direction,
    first: Vec<T>,
    second: Vec<T>,
    steps: u64,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64, direction: Direction, len: usize) -> Self {
        let second = match kind {
            OptimizerKind::Adam { .. } => vec![T::zero(); len],
            OptimizerKind::Sgd { .. } => Vec::new(),
        };
        Self {
            kind,
            lr: T::lit(lr),
            direction,
            first: vec![T::zero(); len],
            second,
            steps: 0,
        }
    }

    pub fn step(
        &mut self,
        params: &ParameterStore<T>,
        grads: &GradientRecord<T>,
    ) -> Result<ParameterStore<T>> {
        check_shapes(params, grads)?;
        if self.first.len() != params.len() {
            return Err(Error::Shape("optimizer state sized for another store".into()));
        }
        self.steps += 1;
        let sign = self.direction.sign::<T>();
        let mut values = params.values().to_vec();
        match self.kind {
            OptimizerKind::Sgd { momentum } => {
                if momentum == 0.0 {
                    return sgd_update(params, grads, self.lr, self.direction);
                }
                let mu = T::lit(momentum);
                for ((p, v), &g) in values.iter_mut().zip(&mut self.first).zip(grads.values()) {
                    *v = mu * *v + g;
                    *p = *p + sign * self.lr * *v;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let (b1, b2, eps) = (T::lit(beta1), T::lit(beta2), T::lit(eps));
                let c1 = T::one() - T::lit(beta1.powf(self.steps as f64));
                let c2 = T::one() - T::lit(beta2.powf(self.steps as f64));
                for (((p, m), s), &g) in values
                    .iter_mut()
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                    .zip(grads.values())
                {
                    *m = b1 * *m + (T::one() - b1) * g;
                    *s = b2 * *s + (T::one() - b2) * g * g;
                    let mhat = *m / c1;
                    let shat = *s / c2;
                    *p = *p + sign * self.lr * mhat / (shat.sqrt() + eps);
                }
            }
        }
        ParameterStore::from_values(params.layout().clone(), values)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::diffcore::params::ParameterLayout;

    fn store(v: Vec<f64>) -> ParameterStore<f64> {
        let mut l = ParameterLayout::new();
        l.push("p", v.len()).unwrap();
        ParameterStore::from_values(Arc::new(l), v).unwrap()
    }

    fn bowl_grad(p: &ParameterStore<f64>) -> GradientRecord<f64> {
        let mut g = GradientRecord::zeros_like(p);
        for (gi, pi) in g.values_mut().iter_mut().zip(p.values()) {
            *gi = 2.0 * pi;
        }
        g.loss_value = p.values().iter().map(|x| x * x).sum();
        g
    }

    #[test]
    fn zero_lr_is_identity() {
        let p = store(vec![1.0, -2.0]);
        let g = bowl_grad(&p);
        assert_eq!(sgd_update(&p, &g, 0.0, Direction::Descent).unwrap(), p);
    }

    #[test]
    fn single_descent_step_arithmetic() {
        let p = store(vec![1.0]);
        let mut g = GradientRecord::zeros_like(&p);
        g.values_mut()[0] = 2.0;
        let next = sgd_update(&p, &g, 0.5, Direction::Descent).unwrap();
        assert_eq!(next.values(), &[0.0]);
        let up = sgd_update(&p, &g, 0.5, Direction::Ascent).unwrap();
        assert_eq!(up.values(), &[2.0]);
    }

    #[test]
    fn quadratic_bowl_decays_geometrically() {
        // Each step multiplies p by (1 - 2·lr) = 0.8, so after 100 steps ‖p‖ = 0.8^100·√n.
        let n = 5;
        let mut p = store(vec![1.0; n]);
        for _ in 0..100 {
            let g = bowl_grad(&p);
            p = sgd_update(&p, &g, 0.1, Direction::Descent).unwrap();
        }
        let norm = p.values().iter().map(|x| x * x).sum::<f64>().sqrt();
        let expected = 0.8f64.powi(100) * (n as f64).sqrt();
        assert!(norm < 1e-4);
        assert!((norm - expected).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let p = store(vec![1.0, 2.0]);
        let q = store(vec![1.0]);
        let g = GradientRecord::zeros_like(&q);
        assert!(matches!(
            sgd_update(&p, &g, 0.1, Direction::Descent),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn momentum_and_adam_descend_the_bowl() {
        for kind in [
            OptimizerKind::Sgd { momentum: 0.5 },
            OptimizerKind::Adam {
                beta1: 0.0,
                beta2: 0.99,
                eps: 1e-8,
            },
        ] {
            let mut p = store(vec![1.0, -0.5, 0.25]);
            let mut opt = Optimizer::new(kind, 0.05, Direction::Descent, p.len());
            let start = bowl_grad(&p).loss_value;
            for _ in 0..50 {
                let g = bowl_grad(&p);
                p = opt.step(&p, &g).unwrap();
            }
            assert!(bowl_grad(&p).loss_value < 0.1 * start, "{kind:?}");
        }
    }
}
