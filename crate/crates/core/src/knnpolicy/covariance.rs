use nalgebra::{Cholesky, DMatrix};

use super::KnnError;
use crate::trajdata::StateVector;

/// Ridge escalations (×10 each) tried before giving up.
const MAX_RIDGE_ESCALATIONS: usize = 2;

#[derive(Debug, Clone)]
pub struct PairwiseCovariance {
    pub sigma: DMatrix<f64>,
    /// Feature pairs `(k, l)`, `k <= l`, with fewer than two joint
    /// observations. Their entries are zero.
    pub sparse_pairs: Vec<(usize, usize)>,
}

/// Covariance with pairwise deletion: entry `(k, l)` uses only the rows where
/// both features are observed, with both means taken over that same row set
/// and normalized by its size.
pub fn pairwise_covariance<'a>(rows: impl IntoIterator<Item = &'a StateVector>, k: usize) -> PairwiseCovariance {
    let rows: Vec<&[f64]> = rows.into_iter().map(StateVector::raw).collect();
    let mut sigma = DMatrix::zeros(k, k);
    let mut sparse_pairs = Vec::new();
    for a in 0..k {
        for b in a..k {
            let joint = || rows.iter().filter(|r| !r[a].is_nan() && !r[b].is_nan());
            let (n, sa, sb) = joint().fold((0usize, 0.0, 0.0), |(n, sa, sb), r| (n + 1, sa + r[a], sb + r[b]));
            if n < 2 {
                sparse_pairs.push((a, b));
                continue;
            }
            let (ma, mb) = (sa / n as f64, sb / n as f64);
            let c = joint().map(|r| (r[a] - ma) * (r[b] - mb)).sum::<f64>() / n as f64;
            sigma[(a, b)] = c;
            sigma[(b, a)] = c;
        }
    }
    if !sparse_pairs.is_empty() {
        log::warn!("{} feature pairs with fewer than 2 joint observations; covariance set to 0", sparse_pairs.len());
    }
    PairwiseCovariance { sigma, sparse_pairs }
}

#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    pub sigma: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    /// Ridge actually applied, after any escalation.
    pub lambda: f64,
    pub asof_period: i64,
    /// Cholesky factor `L` of `omega = L Lᵀ`.
    pub(crate) omega_factor: DMatrix<f64>,
}

impl CovarianceEstimate {
    pub fn new(sigma: DMatrix<f64>, lambda: f64, asof_period: i64) -> Result<Self, KnnError> {
        let (omega, lambda) = regularized_precision(&sigma, lambda)?;
        let omega_factor = Cholesky::new(omega.clone())
            .ok_or(KnnError::SingularCovariance { k: sigma.nrows(), lambda })?
            .l();
        Ok(Self {
            sigma,
            omega,
            lambda,
            asof_period,
            omega_factor,
        })
    }
}

/// `Ω = (Σ + λI)⁻¹`. Pairwise-deletion matrices need not be PSD, so positive
/// definiteness is checked by factorization and λ is raised ×10 up to twice.
/// Returns `Ω` and the ridge used.
pub fn regularized_precision(sigma: &DMatrix<f64>, lambda: f64) -> Result<(DMatrix<f64>, f64), KnnError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(KnnError::Config(format!("ridge lambda must be positive, got {lambda}")));
    }
    let k = sigma.nrows();
    let mut ridge = lambda;
    for _ in 0..=MAX_RIDGE_ESCALATIONS {
        let shifted = sigma + DMatrix::identity(k, k) * ridge;
        if let Some(chol) = Cholesky::new(shifted) {
            let inv = chol.inverse();
            let omega = (&inv + inv.transpose()) * 0.5;
            if omega.iter().all(|v| v.is_finite()) && Cholesky::new(omega.clone()).is_some() {
                if ridge != lambda {
                    log::warn!("ridge escalated from {lambda:e} to {ridge:e}");
                }
                return Ok((omega, ridge));
            }
        }
        ridge *= 10.0;
    }
    Err(KnnError::SingularCovariance { k, lambda: ridge / 10.0 })
}
