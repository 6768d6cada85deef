use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::field::LatentCodes;
use crate::real::Real;

/// Which code stays at its start value during a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Freeze {
    #[default]
    None,
    Shape,
    Appearance,
}

fn lerp<T: Real>(a: &[T], b: &[T], t: f64) -> Vec<T> {
    let t = T::lit(t);
    a.iter().zip(b).map(|(&x, &y)| (T::one() - t) * x + t * y).collect()
}

/// `z(t_i) = (1 − t_i)·a + t_i·b` with `t_i = i/(steps − 1)`, applied to
/// the shape and appearance codes separately; a frozen code keeps `a`'s value.
pub fn interpolate_codes<T: Real>(
    a: &LatentCodes<T>,
    b: &LatentCodes<T>,
    steps: usize,
    freeze: Freeze,
) -> Result<Vec<LatentCodes<T>>> {
    contract!(steps >= 2, "interpolation needs at least 2 steps, got {steps}");
    contract!(
        a.shape.len() == b.shape.len() && a.appearance.len() == b.appearance.len(),
        "latent dimensions differ"
    );
    (0..steps)
        .map(|i| {
            let t = if i + 1 == steps { 1.0 } else { i as f64 / (steps - 1) as f64 };
            let shape = match freeze {
                Freeze::Shape => a.shape.clone(),
                _ => lerp(&a.shape, &b.shape, t),
            };
            let appearance = match freeze {
                Freeze::Appearance => a.appearance.clone(),
                _ => lerp(&a.appearance, &b.appearance, t),
            };
            LatentCodes::new(shape, appearance)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn codes(s: &[f64], a: &[f64]) -> LatentCodes<f64> {
        LatentCodes::new(s.to_vec(), a.to_vec()).unwrap()
    }

    #[test]
    fn endpoints_and_midpoint() {
        let a = codes(&[1.0, -2.0], &[0.5]);
        let b = codes(&[3.0, 0.0], &[-0.5]);
        let two = interpolate_codes(&a, &b, 2, Freeze::None).unwrap();
        assert_eq!(two, vec![a.clone(), b.clone()]);
        let three = interpolate_codes(&a, &b, 3, Freeze::None).unwrap();
        assert_eq!(three[1], codes(&[2.0, -1.0], &[0.0]));
        assert!(interpolate_codes(&a, &a, 4, Freeze::None).unwrap().iter().all(|c| *c == a));
    }

    #[test]
    fn frozen_codes_hold_still() {
        let a = codes(&[1.0], &[0.0, 1.0]);
        let b = codes(&[-1.0], &[2.0, 3.0]);
        for c in interpolate_codes(&a, &b, 5, Freeze::Shape).unwrap() {
            assert_eq!(c.shape, a.shape);
        }
        let sweep = interpolate_codes(&a, &b, 5, Freeze::Appearance).unwrap();
        assert!(sweep.iter().all(|c| c.appearance == a.appearance));
        assert_eq!(sweep[4].shape, b.shape);
    }

    #[test]
    fn contracts() {
        let a = codes(&[1.0], &[0.0]);
        assert!(interpolate_codes(&a, &a, 1, Freeze::None).is_err());
        assert!(interpolate_codes(&a, &codes(&[1.0, 2.0], &[0.0]), 3, Freeze::None).is_err());
    }

    proptest! {
        #[test]
        fn sweeps_are_affine(
            s in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 3),
            ap in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 2),
            steps in 3usize..12,
        ) {
            let a = codes(&s.iter().map(|p| p.0).collect::<Vec<_>>(), &ap.iter().map(|p| p.0).collect::<Vec<_>>());
            let b = codes(&s.iter().map(|p| p.1).collect::<Vec<_>>(), &ap.iter().map(|p| p.1).collect::<Vec<_>>());
            let sweep = interpolate_codes(&a, &b, steps, Freeze::None).unwrap();
            for w in sweep.windows(3) {
                let flat = |c: &LatentCodes<f64>| c.shape.iter().chain(&c.appearance).copied().collect::<Vec<_>>();
                let (x, y, z) = (flat(&w[0]), flat(&w[1]), flat(&w[2]));
                for i in 0..x.len() {
                    prop_assert!((x[i] - 2.0 * y[i] + z[i]).abs() < 1e-12);
                }
            }
        }
    }
}
