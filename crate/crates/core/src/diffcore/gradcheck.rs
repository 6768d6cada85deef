//! Central-difference verification of analytic gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{GradientRecord, ParameterStore};
use crate::error::{contract, Error, Result};

/// A deterministic scalar loss with an analytic gradient, evaluated in `f64`.
pub trait Objective {
    fn value(&self, params: &ParameterStore<f64>) -> Result<f64>;
    fn gradient(&self, params: &ParameterStore<f64>) -> Result<GradientRecord<f64>>;
}

/// Adapts a pair of closures into an [`Objective`].
pub struct FnObjective<V, G> {
    pub value: V,
    pub gradient: G,
}

impl<V, G> Objective for FnObjective<V, G>
where
    V: Fn(&ParameterStore<f64>) -> Result<f64>,
    G: Fn(&ParameterStore<f64>) -> Result<GradientRecord<f64>>,
{
    fn value(&self, params: &ParameterStore<f64>) -> Result<f64> {
        (self.value)(params)
    }
    fn gradient(&self, params: &ParameterStore<f64>) -> Result<GradientRecord<f64>> {
        (self.gradient)(params)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateCheck {
    pub segment: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over probed coordinates of |analytic − numeric| / max(1, |numeric|)
    pub max_relative_error: f64,
    pub coordinates: Vec<CoordinateCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&CoordinateCheck> {
        self.coordinates
            .iter()
            .max_by(|a, b| a.error.total_cmp(&b.error))
    }
}

/// Compares the analytic gradient against central differences on `samples`
/// distinct, uniformly chosen coordinates (all coordinates if the store is
/// smaller than `samples`).
pub fn finite_difference_check(
    loss: &dyn Objective,
    params: &ParameterStore<f64>,
    step: f64,
    samples: usize,
    rng_seed: u64,
) -> Result<GradCheckReport> {
    contract!(step > 0.0 && step.is_finite(), "step must be positive, got {step}");
    contract!(!params.is_empty(), "empty parameter store");
    let analytic = loss.gradient(params)?;
    if **analytic.layout() != **params.layout() {
        return Err(Error::Shape("analytic gradient layout differs from params".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let n = params.len();
    let mut coords = rand::seq::index::sample(&mut rng, n, samples.min(n)).into_vec();
    coords.sort_unstable();

    let layout = params.layout().clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        coordinates: Vec::with_capacity(coords.len()),
    };
    for flat in coords {
        let (segment, index) = layout.locate(flat).expect("coordinate in range");
        let probe = |delta: f64| -> Result<f64> {
            let v = loss.value(&params.perturbed(flat, delta))?;
            if !v.is_finite() {
                return Err(Error::Evaluation(format!(
                    "non-finite loss {v} probing {segment}[{index}] by {delta:+e}"
                )));
            }
            Ok(v)
        };
        let numeric = (probe(step)? - probe(-step)?) / (2.0 * step);
        let a = analytic.values()[flat];
        let error = (a - numeric).abs() / numeric.abs().max(1.0);
        report.max_relative_error = report.max_relative_error.max(error);
        report.coordinates.push(CoordinateCheck {
            segment: segment.to_string(),
            index,
            analytic: a,
            numeric,
            error,
        });
    }
    Ok(report)
}
