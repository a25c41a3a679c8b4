use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Mean and unbiased covariance of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub n: usize,
}

impl GaussianStats {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, n: usize) -> Result<Self> {
        let d = mu.len();
        if sigma.shape() != (d, d) {
            return Err(Error::invalid(format!(
                "covariance is {:?}, expected {d}x{d}",
                sigma.shape()
            )));
        }
        if n < 2 {
            return Err(Error::invalid("statistics need at least two samples"));
        }
        let asym = (&sigma - sigma.transpose()).amax();
        if asym > 1e-8 {
            return Err(Error::invalid(format!("covariance is not symmetric (max diff {asym:e})")));
        }
        Ok(Self { mu, sigma, n })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn is_finite(&self) -> bool {
        self.mu.iter().chain(self.sigma.iter()).all(|v| v.is_finite())
    }
}

/// Sample mean and unbiased covariance, accumulated in a fixed order.
pub fn stats_from_features(features: &[Vec<f64>]) -> Result<GaussianStats> {
    if features.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 feature vectors, got {}",
            features.len()
        )));
    }
    let d = features[0].len();
    if let Some(f) = features.iter().find(|f| f.len() != d) {
        return Err(Error::invalid(format!("feature length {} differs from {d}", f.len())));
    }
    let n = features.len();
    let mut mu = DVector::zeros(d);
    for f in features {
        mu += DVector::from_column_slice(f);
    }
    mu /= n as f64;
    let mut sigma = DMatrix::zeros(d, d);
    for f in features {
        let c = DVector::from_column_slice(f) - &mu;
        sigma.ger(1.0, &c, &c, 1.0);
    }
    sigma /= (n - 1) as f64;
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    GaussianStats::new(mu, sigma, n)
}

/// `V max(L, 0)^(1/2) V^T` for a symmetric matrix.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Results this far below zero indicate a numerical problem rather than rounding.
pub const NEGATIVE_TOLERANCE: f64 = 1e-6;

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`.
///
/// The trace of the square root is taken as the sum of square roots of the
/// eigenvalues of the symmetric `S_a^(1/2) S_b S_a^(1/2)`, with negative
/// eigenvalues clamped to zero. Results in `[-1e-6, 0)` are clamped to zero.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!("feature dims differ: {} vs {}", a.dim(), b.dim())));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::numeric(None, "statistics contain non-finite values"));
    }
    let diff = &a.mu - &b.mu;
    let sa = psd_sqrt(&a.sigma);
    let m = &sa * &b.sigma * &sa;
    let m = (&m + m.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(m).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let d = diff.norm_squared() + a.sigma.trace() + b.sigma.trace() - 2.0 * tr_sqrt;
    if !d.is_finite() {
        return Err(Error::numeric(None, "Frechet distance is not finite"));
    }
    if d < -NEGATIVE_TOLERANCE {
        return Err(Error::numeric(None, format!("Frechet distance {d:e} is negative")));
    }
    Ok(d.max(0.0))
}
