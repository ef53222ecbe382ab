use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use repgap_core::metrics::{rmi, RMI_EPSILON};
use repgap_core::PixelPatch;

const SIDE: u32 = 64;
const REGION: usize = 3;

/// Grayscale pair where the defect patch is the normal patch plus white
/// noise of standard deviation `sigma` (pixel units).
fn noisy_pair(seed: u64, sigma: f64) -> (PixelPatch, PixelPatch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = Normal::new(128.0, 20.0).unwrap();
    let noise = Normal::new(0.0, sigma).unwrap();
    let x: Vec<f64> = (0..SIDE * SIDE).map(|_| base.sample(&mut rng)).collect();
    let q = |v: f64| v.round().clamp(0.0, 255.0) as u8;
    let normal = x.iter().map(|&v| q(v)).collect::<Vec<u8>>();
    let defect = normal
        .iter()
        .map(|&v| q(v as f64 + noise.sample(&mut rng)))
        .collect();
    (
        PixelPatch::new(SIDE, SIDE, 1, defect),
        PixelPatch::new(SIDE, SIDE, 1, normal),
    )
}

/// For `Y = X + N` with white `N`, the Schur complement
/// `Σ_Y − Σ_YX Σ_X⁻¹ Σ_XY` is `σ²I`; rounding adds a uniform `1/12`.
fn gaussian_oracle(sigma: f64) -> f64 {
    let var = (sigma * sigma + 1.0 / 12.0) / (255.0 * 255.0);
    -0.5 * (REGION * REGION) as f64 * (var + RMI_EPSILON).ln()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matches_gaussian_schur_complement(seed in any::<u64>(), sigma in 3.0f64..15.0) {
        let (d, n) = noisy_pair(seed, sigma);
        let got = rmi(&d, &n, REGION).unwrap();
        let want = gaussian_oracle(sigma);
        prop_assert!((got - want).abs() <= 0.10 * want.abs(), "{got} vs {want}");
    }

    #[test]
    fn falls_as_noise_grows(seed in any::<u64>(), sigma in 2.0f64..10.0) {
        let (d1, n1) = noisy_pair(seed, sigma);
        let (d2, n2) = noisy_pair(seed, sigma * 2.0);
        prop_assert!(rmi(&d1, &n1, REGION).unwrap() > rmi(&d2, &n2, REGION).unwrap());
    }
}

#[test]
fn rejects_even_or_small_regions() {
    let (d, n) = noisy_pair(1, 5.0);
    assert!(rmi(&d, &n, 2).is_err());
    assert!(rmi(&d, &n, 4).is_err());
    assert!(rmi(&d, &n, 65).is_err());
}
