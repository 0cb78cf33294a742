//! Factorization helpers shared by the sampler, the GP likelihood and the
//! filter.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

const MAX_ESCALATIONS: usize = 8;

/// Cholesky factorization, adding escalating diagonal jitter on failure.
///
/// Returns the factorization and the extra jitter that was needed (0 when
/// the matrix factored as given).
pub fn cholesky_escalating(k: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(k.clone()) {
        return Ok((c, 0.0));
    }
    let n = k.nrows().max(1);
    let scale = (k.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n as f64).max(f64::MIN_POSITIVE);
    let mut extra = 1e-10 * scale;
    for _ in 0..MAX_ESCALATIONS {
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += extra;
        }
        if let Some(c) = Cholesky::new(kj) {
            return Ok((c, extra));
        }
        extra *= 10.0;
    }
    Err(Error::Numerical(format!(
        "covariance of size {} not positive definite after jitter escalation",
        k.nrows()
    )))
}

/// A factor `A` with `A Aᵀ = K` for positive-semidefinite `K`.
///
/// Tries Cholesky first and falls back to a clamped eigendecomposition, so
/// singular covariances (e.g. zero variance) still yield exact draws.
pub fn psd_factor(k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(c) = Cholesky::new(k.clone()) {
        return Ok(c.l());
    }
    let eig = k.clone().symmetric_eigen();
    let scale = k.abs().max().max(f64::MIN_POSITIVE);
    let min = eig.eigenvalues.min();
    if min < -1e-8 * scale {
        // genuinely indefinite: last resort is jitter escalation
        return cholesky_escalating(k).map(|(c, _)| c.l());
    }
    let mut v = eig.eigenvectors;
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        v.column_mut(j).scale_mut(s);
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_matrix_factor_is_zero() {
        let a = psd_factor(&DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(a.abs().max(), 0.0);
    }

    #[test]
    fn rank_deficient_factor_reconstructs() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let a = psd_factor(&k).unwrap();
        assert!((&a * a.transpose() - k).abs().max() < 1e-12);
    }

    #[test]
    fn escalation_rescues_singular_matrix() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (_, extra) = cholesky_escalating(&k).unwrap();
        assert!(extra > 0.0);
    }

    #[test]
    fn indefinite_fails() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(cholesky_escalating(&k), Err(Error::Numerical(_))));
    }
}
