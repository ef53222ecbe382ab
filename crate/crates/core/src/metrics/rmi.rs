//! Region mutual information between two equally sized patches.
//!
//! Each valid pixel position contributes one `region²`-dimensional vector
//! of grayscale neighbourhood intensities from either patch. With `X` the
//! normal-patch vectors and `Y` the defect-patch vectors, the posterior
//! covariance of `Y` given `X` is
//!
//! ```text
//! M = Σ_Y − Σ_YX (Σ_X + εI)⁻¹ Σ_XY
//! ```
//!
//! and the measure is `−½ Σ ln λ_i(M + εI)`. Strong dependence shrinks `M`
//! and drives the value up; it is unbounded below.

use nalgebra::{DMatrix, SymmetricEigen};

use super::{Bound, Metric, MetricDetails, SetMetricResult};
use crate::corpus::PixelPatch;
use crate::error::{Error, Result};

pub const RMI_EPSILON: f64 = 1e-6;
pub const DEFAULT_REGION: usize = 3;

/// Neighbourhood vectors of a row-major `height`×`width` intensity image,
/// one row per valid top-left position (stride 1).
pub fn region_vectors(values: &[f64], height: usize, width: usize, region: usize) -> DMatrix<f64> {
    let rows = (height - region + 1) * (width - region + 1);
    let d = region * region;
    let mut out = DMatrix::zeros(rows, d);
    let mut k = 0;
    for r in 0..=height - region {
        for c in 0..=width - region {
            for dr in 0..region {
                for dc in 0..region {
                    out[(k, dr * region + dc)] = values[(r + dr) * width + c + dc];
                }
            }
            k += 1;
        }
    }
    out
}

/// Column-centres `m` in place and returns it.
pub(crate) fn centered(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let mean = m.row_mean();
    for mut row in m.row_iter_mut() {
        row -= &mean;
    }
    m
}

/// Posterior covariance `Σ_Y − Σ_YX (Σ_X + εI)⁻¹ Σ_XY` from sample vectors.
pub fn posterior_covariance(y: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = y.nrows() as f64;
    let yc = centered(y.clone());
    let xc = centered(x.clone());
    let d = x.ncols();
    let syy = yc.tr_mul(&yc) / n;
    let sxx = xc.tr_mul(&xc) / n + DMatrix::identity(d, d) * RMI_EPSILON;
    let sxy = xc.tr_mul(&yc) / n;
    let chol = sxx
        .cholesky()
        .ok_or_else(|| Error::Numerical("regularized Σ_X is not positive definite".into()))?;
    let m = syy - sxy.transpose() * chol.solve(&sxy);
    Ok((&m + m.transpose()) * 0.5)
}

/// `Σ ln λ_i(m + εI)`. Eigenvalues driven non-positive by rounding are
/// floored at the smallest positive normal.
pub fn regularized_log_det(m: &DMatrix<f64>) -> f64 {
    let d = m.nrows();
    let eig = SymmetricEigen::new(m + DMatrix::identity(d, d) * RMI_EPSILON);
    eig.eigenvalues
        .iter()
        .map(|&l| l.max(f64::MIN_POSITIVE).ln())
        .sum()
}

/// Region mutual information of `defect` given `normal` (natural log).
pub fn rmi(defect: &PixelPatch, normal: &PixelPatch, region: usize) -> Result<f64> {
    if defect.dims() != normal.dims() {
        return Err(Error::Dimension(format!(
            "patch size {:?} vs {:?}",
            defect.dims(),
            normal.dims()
        )));
    }
    if region < 3 || region.is_multiple_of(2) {
        return Err(Error::Validation(format!(
            "region must be odd and >= 3, got {region}"
        )));
    }
    let (h, w) = (defect.height as usize, defect.width as usize);
    if region > h.min(w) {
        return Err(Error::Validation(format!(
            "region {region} larger than patch side {}",
            h.min(w)
        )));
    }
    let y = region_vectors(&defect.luma(), h, w, region);
    let x = region_vectors(&normal.luma(), h, w, region);
    let m = posterior_covariance(&y, &x)?;
    Ok(-0.5 * regularized_log_det(&m))
}

/// Mean RMI over crop pairs.
pub fn rmi_set(pairs: &[(&PixelPatch, &PixelPatch)], region: usize) -> Result<SetMetricResult> {
    if pairs.is_empty() {
        return Err(Error::Validation("rmi_set needs at least one pair".into()));
    }
    let per_pair = pairs
        .iter()
        .map(|(d, n)| rmi(d, n, region))
        .collect::<Result<Vec<_>>>()?;
    let value = per_pair.iter().sum::<f64>() / per_pair.len() as f64;
    Ok(SetMetricResult {
        metric: Metric::Rmi,
        value,
        per_pair_values: Some(per_pair),
        bound_low: Bound::NegInfinity,
        bound_high: Bound::PosInfinity,
        pct_of_bound: None,
        n: pairs.len(),
        p: region * region,
        details: MetricDetails {
            region: Some(region),
            ..Default::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn region_vector_layout() {
        let v: Vec<f64> = (0..12).map(f64::from).collect();
        let m = region_vectors(&v, 3, 4, 3);
        assert_eq!(m.shape(), (2, 9));
        assert_eq!(
            m.row(0).iter().copied().collect::<Vec<_>>(),
            vec![0., 1., 2., 4., 5., 6., 8., 9., 10.]
        );
        assert_eq!(m[(1, 0)], 1.0);
    }

    #[test]
    fn constant_patches_are_finite() {
        let a = PixelPatch::filled(16, 16, 1, 128);
        let b = PixelPatch::filled(16, 16, 1, 7);
        let v = rmi(&a, &b, 3).unwrap();
        assert!(v.is_finite());
        // M = 0, so the value is −½·9·ln(ε)
        assert!((v + 4.5 * RMI_EPSILON.ln()).abs() < 1e-6, "{v}");
    }

    #[test]
    fn argument_checks() {
        let a = PixelPatch::filled(8, 8, 1, 0);
        assert!(rmi(&a, &a, 4).is_err());
        assert!(rmi(&a, &a, 9).is_err());
        assert!(rmi(&a, &PixelPatch::filled(8, 9, 1, 0), 3).is_err());
    }
}
