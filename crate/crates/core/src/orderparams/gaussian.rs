//! Zero-mean Gaussian sampling from a possibly rank-deficient covariance.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use crate::error::{Result, SimError};
use crate::rng::SimRng;

/// Eigenvalues below this are treated as exact zeros when factorizing.
pub const EIGEN_FLOOR: f64 = 1e-10;

/// Eigenvalues below this reject the covariance outright.
pub const PSD_TOLERANCE: f64 = 1e-6;

/// A square factor `L` with `L L^T = C` (up to clamped eigenvalues).
#[derive(Clone, Debug)]
pub struct GaussianFactor {
    dim: usize,
    /// Row-major.
    l: Vec<f64>,
    min_eigenvalue: Option<f64>,
}

impl GaussianFactor {
    /// Eigendecomposition `C = V diag(lambda) V^T`, factor `V diag(sqrt(max(lambda, 0)))`.
    pub fn eigen(cov: &DMatrix<f64>) -> Result<Self> {
        let (vecs, vals) = eigen_parts(cov)?;
        let dim = cov.nrows();
        let mut l = vec![0.0; dim * dim];
        for c in 0..dim {
            let lambda = if vals[c] < EIGEN_FLOOR { 0.0 } else { vals[c] };
            let s = lambda.sqrt();
            for r in 0..dim {
                l[r * dim + c] = vecs[(r, c)] * s;
            }
        }
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok(Self {
            dim,
            l,
            min_eigenvalue: Some(min),
        })
    }

    /// Cholesky when the covariance is positive definite, eigendecomposition otherwise.
    pub fn fast(cov: &DMatrix<f64>) -> Result<Self> {
        check_square(cov)?;
        if let Some(ch) = Cholesky::new(cov.clone()) {
            let lower = ch.l();
            let dim = cov.nrows();
            let mut l = vec![0.0; dim * dim];
            let mut ok = true;
            for r in 0..dim {
                if lower[(r, r)] < EIGEN_FLOOR.sqrt() {
                    ok = false;
                }
                for c in 0..=r {
                    l[r * dim + c] = lower[(r, c)];
                }
            }
            if ok && l.iter().all(|x| x.is_finite()) {
                return Ok(Self {
                    dim,
                    l,
                    min_eigenvalue: None,
                });
            }
        }
        Self::eigen(cov)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Smallest eigenvalue, when the eigendecomposition route was taken.
    pub fn min_eigenvalue(&self) -> Option<f64> {
        self.min_eigenvalue
    }

    /// Draws one sample into `out` using `z` as scratch for the standard normals.
    #[inline]
    pub fn sample_into(&self, rng: &mut SimRng, z: &mut [f64], out: &mut [f64]) {
        let n = self.dim;
        for zi in z[..n].iter_mut() {
            *zi = rng.normal();
        }
        for (r, o) in out[..n].iter_mut().enumerate() {
            let row = &self.l[r * n..(r + 1) * n];
            *o = row.iter().zip(&z[..n]).map(|(a, b)| a * b).sum();
        }
    }
}

fn check_square(cov: &DMatrix<f64>) -> Result<()> {
    SimError::check_len("covariance", cov.nrows(), cov.ncols())?;
    if cov.iter().any(|x| !x.is_finite()) {
        return Err(SimError::NonFinite("covariance"));
    }
    Ok(())
}

/// Eigenvectors (columns) and eigenvalues; rejects eigenvalues below `-PSD_TOLERANCE`.
pub(crate) fn eigen_parts(cov: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    check_square(cov)?;
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOLERANCE {
        return Err(SimError::NotPsd { min_eigenvalue: min });
    }
    Ok((eig.eigenvectors, vals))
}

/// Nearest PSD matrix in Frobenius norm (negative eigenvalues set to zero).
pub(crate) fn project_psd(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (vecs, vals) = eigen_parts(cov)?;
    let clamped = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        vals.len(),
        vals.iter().map(|v| v.max(0.0)),
    ));
    Ok(&vecs * clamped * vecs.transpose())
}
