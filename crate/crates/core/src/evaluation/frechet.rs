use nalgebra::{DMatrix, DVector};

use crate::error::{contract, Error, Result};

/// Negative eigenvalues down to `−EIG_TOL·max(1, λ_max)` are clamped to 0.
const EIG_TOL: f64 = 1e-8;

/// Mean and covariance of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub count: usize,
}

impl FeatureStats {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>, count: usize) -> Result<Self> {
        let d = mean.len();
        contract!(d >= 1, "feature dimension must be at least 1");
        contract!(count >= 2, "feature statistics need at least 2 samples, got {count}");
        contract!(
            covariance.shape() == (d, d),
            "covariance is {:?}, expected {d}x{d}",
            covariance.shape()
        );
        let asym = (&covariance - covariance.transpose()).amax();
        contract!(asym <= 1e-8, "covariance is not symmetric (max deviation {asym})");
        Ok(Self {
            mean,
            covariance,
            count,
        })
    }

    /// Sample mean and unbiased covariance of equal-length feature vectors.
    pub fn from_features(features: &[Vec<f64>]) -> Result<Self> {
        contract!(features.len() >= 2, "need at least 2 feature vectors, got {}", features.len());
        let d = features[0].len();
        contract!(features.iter().all(|f| f.len() == d), "feature vectors differ in length");
        let n = features.len();
        let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
        let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
        let mut centered = x;
        for (j, mut col) in centered.column_iter_mut().enumerate() {
            col.add_scalar_mut(-mean[j]);
        }
        let mut cov = centered.transpose() * &centered / (n - 1) as f64;
        cov = (&cov + cov.transpose()) * 0.5;
        Self::new(mean, cov, n)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Symmetric square root, clamping tiny negative eigenvalues.
fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -EIG_TOL * scale {
            return Err(Error::Evaluation(format!("{what} is indefinite (eigenvalue {v})")));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

/// `‖μ_a − μ_b‖² + Tr(C_a + C_b − 2(C_a C_b)^{1/2})`.
///
/// The trace of `(C_a C_b)^{1/2}` is taken as the trace of the symmetric
/// `(√C_a C_b √C_a)^{1/2}`, which has the same eigenvalues.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    contract!(
        a.dim() == b.dim(),
        "feature dimensions differ ({} vs {})",
        a.dim(),
        b.dim()
    );
    let sa = psd_sqrt(&a.covariance, "first covariance")?;
    psd_sqrt(&b.covariance, "second covariance")?;
    let inner = &sa * &b.covariance * &sa;
    let cross = psd_sqrt(&inner, "covariance product")?.trace();
    let dm = (&a.mean - &b.mean).norm_squared();
    let fd = dm + a.covariance.trace() + b.covariance.trace() - 2.0 * cross;
    Ok(fd.max(0.0))
}
