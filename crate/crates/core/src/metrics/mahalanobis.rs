use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{Bound, Metric, MetricDetails, SetMetricResult};
use crate::error::{Error, Result};
use crate::featstore::FeatureMatrix;

/// Gaussian fit with scaled-identity shrinkage.
#[derive(Debug, Clone)]
pub struct ShrinkageCovariance {
    pub mean: DVector<f64>,
    pub cov_regularized: DMatrix<f64>,
    pub lambda_used: f64,
    chol: Cholesky<f64, Dyn>,
}

/// `λ = max(1e-6, 1e-3 · trace(Σ) / p)`.
pub fn shrinkage_lambda(trace: f64, p: usize) -> f64 {
    (1e-3 * trace / p as f64).max(1e-6)
}

impl ShrinkageCovariance {
    /// Fits from the rows of `data` (n×p, n ≥ 2).
    pub fn fit(data: &DMatrix<f64>) -> Result<Self> {
        let (n, p) = data.shape();
        if n < 2 {
            return Err(Error::Validation(format!(
                "covariance needs n >= 2 samples, got {n}"
            )));
        }
        let mean = data.row_mean().transpose();
        let mut centered = data.clone();
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let mut cov = centered.tr_mul(&centered) / (n - 1) as f64;
        let lambda = shrinkage_lambda(cov.trace(), p);
        for i in 0..p {
            cov[(i, i)] += lambda;
        }
        // exact symmetry
        for i in 0..p {
            for j in 0..i {
                let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        let chol = Cholesky::new(cov.clone()).ok_or_else(|| {
            Error::Numerical("regularized covariance is not positive definite".into())
        })?;
        Ok(Self {
            mean,
            cov_regularized: cov,
            lambda_used: lambda,
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Mahalanobis distances of each row of `data` (not squared).
    pub fn distances(&self, data: &DMatrix<f64>) -> Vec<f64> {
        let l = self.chol.l_dirty();
        let mut diff = data.transpose();
        for mut col in diff.column_iter_mut() {
            col -= &self.mean;
        }
        // ‖L⁻¹(x − μ)‖ for all columns at once
        let ok = l.solve_lower_triangular_mut(&mut diff);
        debug_assert!(ok);
        diff.column_iter().map(|c| c.norm()).collect()
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        self.distances(&DMatrix::from_row_slice(1, x.len(), x))[0]
    }
}

/// Sample mean and shrinkage covariance of a feature set.
pub fn fit_shrinkage_gaussian(set: &FeatureMatrix) -> Result<ShrinkageCovariance> {
    ShrinkageCovariance::fit(&set.to_dmatrix())
}

/// Largest value the within-set Mahalanobis measure can take for `n` samples
/// of dimension `p`: `(n−1)p/n` when `n > p+1`, otherwise `(n−1)²/n`.
pub fn mahalanobis_upper_bound(n: usize, p: usize) -> f64 {
    let nf = n as f64;
    if n > p + 1 {
        (nf - 1.0) * p as f64 / nf
    } else {
        (nf - 1.0) * (nf - 1.0) / nf
    }
}

/// Distances of the rows of `set` to the Gaussian fitted on `set` itself.
pub fn within_set_distances(set: &FeatureMatrix) -> Result<Vec<f64>> {
    let data = set.to_dmatrix();
    Ok(ShrinkageCovariance::fit(&data)?.distances(&data))
}

/// Mean distance of the defect rows to the Gaussian fitted on the normal
/// set. The within-set maximum of the normal set is recorded for the bound
/// check.
pub fn mahalanobis_set(defect: &FeatureMatrix, normal: &FeatureMatrix) -> Result<SetMetricResult> {
    if defect.p() != normal.p() {
        return Err(Error::Dimension(format!(
            "feature dimension {} vs {}",
            defect.p(),
            normal.p()
        )));
    }
    let normal_data = normal.to_dmatrix();
    let fit = ShrinkageCovariance::fit(&normal_data)?;
    let per_row = fit.distances(&defect.to_dmatrix());
    if per_row.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numerical("non-finite Mahalanobis distance".into()));
    }
    let within_max = fit.distances(&normal_data).into_iter().fold(0.0, f64::max);
    let value = per_row.iter().sum::<f64>() / per_row.len() as f64;
    let bound = mahalanobis_upper_bound(normal.n(), normal.p());
    Ok(SetMetricResult {
        metric: Metric::Mh,
        value,
        per_pair_values: Some(per_row),
        bound_low: Bound::Finite(0.0),
        bound_high: Bound::Finite(bound),
        pct_of_bound: Some(value / bound * 100.0),
        n: normal.n(),
        p: normal.p(),
        details: MetricDetails {
            lambda_used: Some(fit.lambda_used),
            within_set_max: Some(within_max),
            ..Default::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f32]) -> FeatureMatrix {
        FeatureMatrix::from_rows(&v.iter().map(|&x| vec![x]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn one_dimensional_fit() {
        let fit = fit_shrinkage_gaussian(&col(&[-1.0, 1.0])).unwrap();
        assert_eq!(fit.mean[0], 0.0);
        // trace 2, p 1 → λ = 2e-3
        assert!((fit.lambda_used - 2e-3).abs() < 1e-15);
        assert!((fit.cov_regularized[(0, 0)] - 2.002).abs() < 1e-12);
    }

    #[test]
    fn constant_samples_still_invertible() {
        let m = FeatureMatrix::from_rows(&vec![vec![3.0, -1.0, 2.0]; 4]).unwrap();
        let fit = fit_shrinkage_gaussian(&m).unwrap();
        assert_eq!(fit.lambda_used, 1e-6);
        assert_eq!(fit.cov_regularized, DMatrix::identity(3, 3) * 1e-6);
        assert_eq!(fit.distance(&[3.0, -1.0, 2.0]), 0.0);
    }

    #[test]
    fn needs_two_samples() {
        assert!(fit_shrinkage_gaussian(&col(&[1.0])).is_err());
    }

    #[test]
    fn bound_branches() {
        assert!((mahalanobis_upper_bound(100, 3) - 2.97).abs() < 1e-12);
        assert!((mahalanobis_upper_bound(497, 1000) - 496.0 * 496.0 / 497.0).abs() < 1e-12);
        // n = p + 1 uses the squared branch
        assert!((mahalanobis_upper_bound(4, 3) - 9.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn defect_at_mean_is_zero() {
        let normal = col(&[-1.0, 1.0, 0.5, -0.5]);
        let r = mahalanobis_set(&col(&[0.0, 0.0]), &normal).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn one_dimensional_hand_value() {
        // Σ = 2 + λ with λ = 2e-3; d = 2/sqrt(2.002)
        let r = mahalanobis_set(&col(&[2.0]), &col(&[-1.0, 1.0])).unwrap();
        assert!((r.value - 2.0 / 2.002f64.sqrt()).abs() < 1e-12);
        assert!((r.value - 2.0 / 2f64.sqrt()).abs() < 1e-3);
        assert_eq!(r.details.lambda_used, Some(2e-3));
    }
}
