use serde::{Deserialize, Serialize};

use super::{Bound, Metric, MetricDetails, SetMetricResult};
use crate::error::{Error, Result};
use crate::featstore::PairedFeatures;

/// Tolerance on the total mass of a [`ProbabilityVector`].
pub const MASS_TOLERANCE: f64 = 1e-9;
/// Offset added to every shifted feature before normalization.
pub const FEATURE_EPSILON: f64 = 1e-8;

/// A finite discrete distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Validation("empty probability vector".into()));
        }
        if let Some(v) = probs.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Validation(format!("invalid probability {v}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Validation(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self(probs))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for ProbabilityVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ProbabilityVector> for Vec<f64> {
    fn from(p: ProbabilityVector) -> Self {
        p.0
    }
}

fn check_dims(p: &ProbabilityVector, q: &ProbabilityVector) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::Dimension(format!(
            "distribution length {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(())
}

/// KL divergence `Σ p·ln(p/q)` in nats. Returns `f64::INFINITY` when `q`
/// vanishes somewhere `p` does not.
pub fn kl_divergence(p: &ProbabilityVector, q: &ProbabilityVector) -> Result<f64> {
    check_dims(p, q)?;
    let mut total = 0.0;
    for (&pi, &qi) in p.0.iter().zip(&q.0) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += pi * (pi / qi).ln();
    }
    Ok(total)
}

/// Jensen-Shannon divergence against the mixture `(p + q)/2`, in bits, so
/// the result lies in `[0, 1]`.
pub fn js_divergence(p: &ProbabilityVector, q: &ProbabilityVector) -> Result<f64> {
    check_dims(p, q)?;
    // each half-KL against the mixture, written as a·log2(2a / (a + b))
    let half = |a: f64, b: f64| {
        if a > 0.0 {
            a * (2.0 * a / (a + b)).log2()
        } else {
            0.0
        }
    };
    Ok(p.0
        .iter()
        .zip(&q.0)
        .map(|(&a, &b)| 0.5 * (half(a, b) + half(b, a)))
        .sum())
}

/// Maps a feature vector to a distribution: shift by the minimum, add
/// [`FEATURE_EPSILON`], divide by the total.
pub fn feature_to_distribution(v: &[f64]) -> Result<ProbabilityVector> {
    if v.is_empty() {
        return Err(Error::Validation("empty feature vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation("non-finite feature value".into()));
    }
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = v.iter().map(|x| x - min + FEATURE_EPSILON).collect();
    let total: f64 = shifted.iter().sum();
    ProbabilityVector::new(shifted.into_iter().map(|x| x / total).collect())
}

fn row_distribution(row: &[f32]) -> Result<ProbabilityVector> {
    let v: Vec<f64> = row.iter().map(|&x| x as f64).collect();
    feature_to_distribution(&v)
}

/// Mean over pairs of the JS divergence between the two feature vectors of
/// each pair.
pub fn js_set(pairs: &PairedFeatures) -> Result<SetMetricResult> {
    if pairs.is_empty() {
        return Err(Error::Validation("js_set needs at least one pair".into()));
    }
    let per_pair = (0..pairs.len())
        .map(|k| {
            let (d, n) = pairs.pair(k);
            js_divergence(&row_distribution(d)?, &row_distribution(n)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    let value = per_pair.iter().sum::<f64>() / per_pair.len() as f64;
    Ok(SetMetricResult {
        metric: Metric::Js,
        value,
        per_pair_values: Some(per_pair),
        bound_low: Bound::Finite(0.0),
        bound_high: Bound::Finite(1.0),
        pct_of_bound: Some(value * 100.0),
        n: pairs.len(),
        p: pairs.p(),
        details: MetricDetails {
            log_base: Some("2".into()),
            ..Default::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ProbabilityVector {
        ProbabilityVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn kl_examples() {
        assert_eq!(
            kl_divergence(&pv(&[0.5, 0.5]), &pv(&[0.5, 0.5])).unwrap(),
            0.0
        );
        let v = kl_divergence(&pv(&[1.0, 0.0]), &pv(&[0.5, 0.5])).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(
            kl_divergence(&pv(&[1.0, 0.0]), &pv(&[0.0, 1.0])).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn js_examples() {
        assert_eq!(
            js_divergence(&pv(&[0.2, 0.8]), &pv(&[0.2, 0.8])).unwrap(),
            0.0
        );
        assert_eq!(
            js_divergence(&pv(&[1.0, 0.0]), &pv(&[0.0, 1.0])).unwrap(),
            1.0
        );
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            kl_divergence(&pv(&[1.0]), &pv(&[0.5, 0.5])),
            Err(Error::Dimension(_))
        ));
        assert!(js_divergence(&pv(&[1.0]), &pv(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn probability_vector_invariants() {
        assert!(ProbabilityVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbabilityVector::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbabilityVector::new(vec![0.5, 0.5 + 5e-10]).is_ok());
    }

    #[test]
    fn feature_distribution_examples() {
        let u = feature_to_distribution(&[1.0, 1.0, 1.0]).unwrap();
        for p in u.as_slice() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let e = FEATURE_EPSILON;
        let d = feature_to_distribution(&[0.0, 2.0]).unwrap();
        assert!((d.as_slice()[0] - e / (2.0 + 2.0 * e)).abs() < 1e-20);
        assert!((d.as_slice()[1] - (2.0 + e) / (2.0 + 2.0 * e)).abs() < 1e-15);
        assert!((d.as_slice()[0] - 5e-9).abs() < 1e-15);
    }
}
