//! Batched rendering of many rays through a [`FieldNetwork`], with a reverse
//! pass into the network parameters.

use ndarray::{Array1, Array2};

use super::camera::Ray;
use super::volume::{composite, composite_backward, deltas, AlphaMode};
use crate::diffcore::{GradientRecord, ParameterStore};
use crate::error::{contract, Result};
use crate::field::network::FieldForward;
use crate::field::{FieldNetwork, LatentCodes};
use crate::real::Real;

/// Forward state kept for [`render_rays_backward`].
#[derive(Debug, Clone)]
pub struct RenderTape<T> {
    fwd: FieldForward<T>,
    samples: usize,
    background: [T; 3],
    alphas: Vec<T>,
    dalpha_dlogit: Vec<T>,
    trans: Vec<Vec<T>>,
}

impl<T: Real> RenderTape<T> {
    pub fn rays(&self) -> usize {
        self.trans.len()
    }

    /// Per-sample alphas, ray-major.
    pub fn alphas(&self) -> &[T] {
        &self.alphas
    }
}

fn colors_of<T: Real>(c: &Array2<T>, start: usize, n: usize) -> Vec<[T; 3]> {
    (start..start + n)
        .map(|i| [c[[i, 0]], c[[i, 1]], c[[i, 2]]])
        .collect()
}

/// Renders `rays[r]` at the sample positions in row `r` of `ts`. Returns one
/// RGB row per ray.
pub fn render_rays<T: Real>(
    net: &FieldNetwork,
    p: &ParameterStore<T>,
    codes: &LatentCodes<T>,
    rays: &[Ray],
    ts: &Array2<f64>,
    background: [f64; 3],
    mode: AlphaMode,
) -> Result<(Array2<T>, RenderTape<T>)> {
    let (m, n) = ts.dim();
    contract!(m == rays.len(), "{} rays but {m} sample rows", rays.len());
    contract!(n >= 1, "no samples per ray");
    let mut points = Array2::<T>::zeros((m * n, 3));
    let mut dirs = Array2::<T>::zeros((m * n, 3));
    let mut all_deltas = Vec::with_capacity(m * n);
    for (r, ray) in rays.iter().enumerate() {
        let row = ts.row(r);
        let row = row.as_slice().expect("row-major ts");
        contract!(
            row.windows(2).all(|w| w[0] < w[1]),
            "samples on ray {r} are not increasing"
        );
        for (i, &t) in row.iter().enumerate() {
            let x = ray.at(t);
            for j in 0..3 {
                points[[r * n + i, j]] = T::lit(x[j]);
                dirs[[r * n + i, j]] = T::lit(ray.direction[j]);
            }
        }
        all_deltas.extend(deltas(row, ray.t_far));
    }
    let fwd = net.forward(p, &points, &dirs, codes)?;
    let (alphas, dalpha_dlogit): (Vec<T>, Vec<T>) = fwd
        .logits
        .iter()
        .zip(&all_deltas)
        .map(|(&s, &d)| mode.alpha(s, T::lit(d)))
        .unzip();
    let bg = background.map(T::lit);
    let mut out = Array2::<T>::zeros((m, 3));
    let mut trans = Vec::with_capacity(m);
    for r in 0..m {
        let cols = colors_of(&fwd.colors, r * n, n);
        let (c, t) = composite(&alphas[r * n..(r + 1) * n], &cols, bg);
        for j in 0..3 {
            out[[r, j]] = c[j];
        }
        trans.push(t);
    }
    Ok((
        out,
        RenderTape {
            fwd,
            samples: n,
            background: bg,
            alphas,
            dalpha_dlogit,
            trans,
        },
    ))
}

/// Accumulates `∂L/∂θ` given `d_colors = ∂L/∂(ray colors)`.
pub fn render_rays_backward<T: Real>(
    net: &FieldNetwork,
    p: &ParameterStore<T>,
    tape: &RenderTape<T>,
    d_colors: &Array2<T>,
    grads: &mut GradientRecord<T>,
) {
    let n = tape.samples;
    let m = tape.rays();
    let mut d_logits = Array1::<T>::zeros(m * n);
    let mut d_sample_colors = Array2::<T>::zeros((m * n, 3));
    for r in 0..m {
        let cols = colors_of(&tape.fwd.colors, r * n, n);
        let dc = [d_colors[[r, 0]], d_colors[[r, 1]], d_colors[[r, 2]]];
        let (da, dcol) = composite_backward(
            &tape.alphas[r * n..(r + 1) * n],
            &cols,
            &tape.trans[r],
            tape.background,
            dc,
        );
        for i in 0..n {
            d_logits[r * n + i] = da[i] * tape.dalpha_dlogit[r * n + i];
            for j in 0..3 {
                d_sample_colors[[r * n + i, j]] = dcol[i][j];
            }
        }
    }
    net.backward(p, &tape.fwd, &d_logits, &d_sample_colors, grads);
}
