use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use repgap_core::metrics::{
    mahalanobis_set, mahalanobis_upper_bound, shrinkage_lambda, verify_bounds, within_set_distances,
};
use repgap_core::FeatureMatrix;

fn gaussian(rng: &mut ChaCha8Rng, n: usize, p: usize, scale: f32) -> FeatureMatrix {
    let rows: Vec<Vec<f32>> = (0..n)
        .map(|_| {
            (0..p)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut *rng);
                    scale * z as f32
                })
                .collect::<Vec<f32>>()
        })
        .collect();
    FeatureMatrix::from_rows(&rows).unwrap()
}

/// Distance via an explicit LU solve against the shrunk sample covariance.
fn lu_oracle(defect: &FeatureMatrix, normal: &FeatureMatrix) -> Vec<f64> {
    let x = normal.to_dmatrix();
    let (n, p) = x.shape();
    let mean: DVector<f64> = x.row_mean().transpose();
    let mut cov = DMatrix::zeros(p, p);
    for r in 0..n {
        let d = x.row(r).transpose() - &mean;
        cov += &d * d.transpose();
    }
    cov /= (n - 1) as f64;
    let lambda = shrinkage_lambda(cov.trace(), p);
    cov += DMatrix::identity(p, p) * lambda;
    let lu = cov.lu();
    defect
        .to_dmatrix()
        .row_iter()
        .map(|row| {
            let d = row.transpose() - &mean;
            let s = lu.solve(&d).unwrap();
            d.dot(&s).sqrt()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn matches_lu_oracle(seed in any::<u64>(), n in 2usize..20, p in 1usize..10, m in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = gaussian(&mut rng, n, p, 1.0);
        let defect = gaussian(&mut rng, m, p, 2.0);
        let r = mahalanobis_set(&defect, &normal).unwrap();
        let oracle = lu_oracle(&defect, &normal);
        for (a, b) in r.per_pair_values.as_ref().unwrap().iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn normal_row_order_does_not_matter(seed in any::<u64>(), n in 2usize..15, p in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = gaussian(&mut rng, n, p, 1.0);
        let defect = gaussian(&mut rng, 3, p, 1.0);
        let rev: Vec<usize> = (0..n).rev().collect();
        let a = mahalanobis_set(&defect, &normal).unwrap().value;
        let b = mahalanobis_set(&defect, &normal.select_rows(&rev)).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
    }

    #[test]
    fn within_set_maximum_respects_bound(seed in any::<u64>(), p in 2usize..12, frac in 0.0f64..1.0) {
        // both branches, with 3 <= n <= p²
        let n = 3 + (frac * (p * p - 3) as f64) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = gaussian(&mut rng, n, p, 1.0);
        let max = within_set_distances(&set).unwrap().into_iter().fold(0.0, f64::max);
        prop_assert!(max <= mahalanobis_upper_bound(n, p) + 1e-9);
        let diag = verify_bounds(&mahalanobis_set(&set, &set).unwrap());
        prop_assert!(diag.passed, "{:?}", diag.checks);
    }

    #[test]
    fn bound_is_monotone_in_n(p in 1usize..200, n in 2usize..400) {
        prop_assert!(mahalanobis_upper_bound(n + 1, p) >= mahalanobis_upper_bound(n, p));
    }
}
