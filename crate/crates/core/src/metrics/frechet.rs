//! Gaussian feature statistics and the Fréchet distance between them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{arg_err, shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const EIGEN_CLIP: f64 = 1e-7;
/// Slack allowed below zero before a distance counts as a numerical failure.
pub const NEGATIVE_SLACK: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased covariance of the rows of `features: (N, d)`.
pub fn gaussian_stats<T: Scalar>(features: &Tensor<T>) -> Result<GaussianStats> {
    let [n, d] = match *features.shape() {
        [n, d] => [n, d],
        _ => return shape_err(format!("features must be (N, d), got {:?}", features.shape())),
    };
    if n < 2 {
        return arg_err(format!("Gaussian statistics need at least 2 samples, got {n}"));
    }
    let x = DMatrix::from_row_iterator(n, d, features.data().iter().map(|v| v.widen()));
    let mean = DVector::from_iterator(d, x.column_iter().map(|c| c.sum() / n as f64));
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianStats { mean, cov, count: n })
}

/// Eigenvalues of a symmetric PSD matrix with roundoff negatives clipped.
fn clipped_eigen(m: &DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let mut e = SymmetricEigen::new(m.clone());
    let top = e.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let floor = -EIGEN_CLIP * top.max(1.0);
    for v in e.eigenvalues.iter_mut() {
        if !v.is_finite() || *v < floor {
            return Err(Error::Numerical(format!("{what} has eigenvalue {v}, not positive semidefinite")));
        }
        if *v < EIGEN_CLIP * top {
            *v = 0.0;
        }
    }
    Ok(e)
}

fn sqrt_psd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let e = clipped_eigen(m, what)?;
    let roots = DMatrix::from_diagonal(&e.eigenvalues.map(f64::sqrt));
    Ok(&e.eigenvectors * roots * e.eigenvectors.transpose())
}

/// `‖μ1 − μ2‖² + Tr(Σ1 + Σ2 − 2 (Σ1^½ Σ2 Σ1^½)^½)`.
pub fn frechet_distance(s1: &GaussianStats, s2: &GaussianStats) -> Result<f64> {
    if s1.dim() != s2.dim() {
        return shape_err(format!("feature dimensions differ: {} vs {}", s1.dim(), s2.dim()));
    }
    let dmu = (&s1.mean - &s2.mean).norm_squared();
    let root1 = sqrt_psd(&s1.cov, "first covariance")?;
    clipped_eigen(&s2.cov, "second covariance")?;
    let inner = &root1 * &s2.cov * &root1;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = clipped_eigen(&inner, "covariance product")?
        .eigenvalues
        .iter()
        .map(|v| v.sqrt())
        .sum();
    let d = dmu + s1.cov.trace() + s2.cov.trace() - 2.0 * cross;
    if !d.is_finite() || d < -NEGATIVE_SLACK {
        return Err(Error::Numerical(format!("Fréchet distance evaluated to {d}")));
    }
    Ok(d.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_stats() {
        let f = Tensor::<f64>::new(&[2, 2], vec![0.0, 0.0, 2.0, 0.0]).unwrap();
        let s = gaussian_stats(&f).unwrap();
        assert_eq!(s.mean.as_slice(), &[1.0, 0.0]);
        assert_eq!(s.cov, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]));
        assert!(gaussian_stats(&f.narrow(0, 0, 1).unwrap()).is_err());
    }

    #[test]
    fn one_dimensional_closed_forms() {
        let stats = |mu: f64, var: f64| GaussianStats {
            mean: DVector::from_element(1, mu),
            cov: DMatrix::from_element(1, 1, var),
            count: 2,
        };
        assert!((frechet_distance(&stats(0.0, 1.0), &stats(1.0, 1.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!((frechet_distance(&stats(0.0, 1.0), &stats(0.0, 4.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!(frechet_distance(&stats(0.0, 1.0), &stats(0.0, -1.0)).is_err());
    }
}
