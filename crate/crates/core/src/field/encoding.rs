use std::f64::consts::PI;

use crate::real::Real;

/// NeRF-style frequency encoding `[x, sin(2^k π x), cos(2^k π x)]_{k<L}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PositionalEncoding {
    pub frequencies: usize,
}

impl PositionalEncoding {
    pub fn new(frequencies: usize) -> Self {
        Self { frequencies }
    }

    pub fn dim(&self) -> usize {
        3 + 6 * self.frequencies
    }

    fn omega<T: Real>(k: usize) -> T {
        T::lit((1u64 << k) as f64 * PI)
    }

    /// Writes the encoding of `x` into `out` (length [`Self::dim`]).
    pub fn encode_into<T: Real>(&self, x: [T; 3], out: &mut [T]) {
        out[..3].copy_from_slice(&x);
        for k in 0..self.frequencies {
            let w = Self::omega::<T>(k);
            let base = 3 + 6 * k;
            for j in 0..3 {
                let (s, c) = (w * x[j]).sin_cos();
                out[base + j] = s;
                out[base + 3 + j] = c;
            }
        }
    }

    /// `Jᵀ v`: pulls an adjoint on the encoding back to the 3 coordinates.
    pub fn pullback<T: Real>(&self, x: [T; 3], v: &[T]) -> [T; 3] {
        let mut out = [v[0], v[1], v[2]];
        for k in 0..self.frequencies {
            let w = Self::omega::<T>(k);
            let base = 3 + 6 * k;
            for j in 0..3 {
                let (s, c) = (w * x[j]).sin_cos();
                out[j] = out[j] + w * (c * v[base + j] - s * v[base + 3 + j]);
            }
        }
        out
    }

    /// `J u`: pushes a coordinate-space vector forward to encoding space.
    pub fn pushforward_into<T: Real>(&self, x: [T; 3], u: [T; 3], out: &mut [T]) {
        out[..3].copy_from_slice(&u);
        for k in 0..self.frequencies {
            let w = Self::omega::<T>(k);
            let base = 3 + 6 * k;
            for j in 0..3 {
                let (s, c) = (w * x[j]).sin_cos();
                out[base + j] = w * c * u[j];
                out[base + 3 + j] = -w * s * u[j];
            }
        }
    }
}
