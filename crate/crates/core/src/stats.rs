//! Two-sample homoscedastic one-tailed t-test between the anomaly↔foreground
//! and anomaly↔background measurement groups.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Continued-fraction iteration cap for the incomplete beta function.
pub const BETA_MAX_ITER: usize = 200;
/// Continued-fraction termination threshold.
pub const BETA_EPS: f64 = 1e-12;
/// Range of p-values flagged as inconclusive on small samples.
pub const INCONCLUSIVE_RANGE: (f64, f64) = (0.15, 0.20);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupLabel {
    #[serde(rename = "D_A_FG")]
    AnomalyForeground,
    #[serde(rename = "D_A_BG")]
    AnomalyBackground,
}

/// Per-pair measurements of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementGroup {
    pub label: GroupLabel,
    pub values: Vec<f64>,
}

impl MeasurementGroup {
    pub fn new(label: GroupLabel, values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Validation(format!(
                "measurement group needs n >= 2, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(
                "measurement group has non-finite value".into(),
            ));
        }
        Ok(Self { label, values })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.n() as f64
    }

    /// Sample variance (divisor `n − 1`).
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (self.n() - 1) as f64
    }
}

/// Pooled standard deviation of two groups.
pub fn pooled_std(a: &MeasurementGroup, b: &MeasurementGroup) -> Result<f64> {
    let (n1, n2) = (a.n(), b.n());
    if n1 + n2 <= 2 {
        return Err(Error::Validation(
            "pooled variance needs n1 + n2 > 2".into(),
        ));
    }
    let pooled =
        ((n1 - 1) as f64 * a.variance() + (n2 - 1) as f64 * b.variance()) / (n1 + n2 - 2) as f64;
    Ok(pooled.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TStatistic {
    pub t: f64,
    pub df: usize,
    pub pooled_std: f64,
}

/// `t = (μ_a − μ_b) / (s_p √(1/n₁ + 1/n₂))` with `df = n₁ + n₂ − 2`.
pub fn t_statistic(a: &MeasurementGroup, b: &MeasurementGroup) -> Result<TStatistic> {
    let sp = pooled_std(a, b)?;
    let df = a.n() + b.n() - 2;
    let diff = a.mean() - b.mean();
    let t = if sp == 0.0 {
        if diff != 0.0 {
            return Err(Error::Numerical(
                "degenerate variance: both groups constant with different means".into(),
            ));
        }
        0.0
    } else {
        diff / (sp * (1.0 / a.n() as f64 + 1.0 / b.n() as f64).sqrt())
    };
    Ok(TStatistic {
        t,
        df,
        pooled_std: sp,
    })
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let series = COEF[1..]
        .iter()
        .enumerate()
        .fold(COEF[0], |acc, (i, c)| acc + c / (x + i as f64 + 1.0));
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + series.ln()
}

/// Modified Lentz evaluation of the incomplete beta continued fraction.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=BETA_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < BETA_EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Upper-tail probability `P(T > t)` of Student's t with `df` degrees of
/// freedom.
pub fn p_value(t: f64, df: usize) -> f64 {
    assert!(df >= 1, "df must be >= 1");
    if t.is_nan() {
        return f64::NAN;
    }
    let nu = df as f64;
    let half_tail = 0.5 * regularized_incomplete_beta(nu / 2.0, 0.5, nu / (nu + t * t));
    if t >= 0.0 {
        half_tail
    } else {
        1.0 - half_tail
    }
}

/// Direction of the alternative hypothesis on `μ_FG − μ_BG`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    /// H₁: foreground distances are smaller than background distances.
    #[default]
    Lower,
    Upper,
}

impl FromStr for Tail {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lower" => Ok(Tail::Lower),
            "upper" => Ok(Tail::Upper),
            other => Err(Error::Validation(format!(
                "tail must be lower|upper, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for Tail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tail::Lower => "lower",
            Tail::Upper => "upper",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    RejectH0,
    FailToReject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: usize,
    pub p_one_tailed: f64,
    pub pooled_std: f64,
    pub decision: Decision,
    pub alpha: f64,
    pub tail: Tail,
    pub mean_a: f64,
    pub mean_b: f64,
    pub n_a: usize,
    pub n_b: usize,
    /// Not rejected with p in the 0.15–0.20 band typical of small samples.
    pub inconclusive_small_sample: bool,
}

/// One-tailed two-sample homoscedastic t-test of `a` against `b`.
pub fn hypothesis_test(
    a: &MeasurementGroup,
    b: &MeasurementGroup,
    alpha: f64,
    tail: Tail,
) -> Result<TTestResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Validation(format!(
            "alpha must be in (0, 1), got {alpha}"
        )));
    }
    let stat = t_statistic(a, b)?;
    let p = match tail {
        Tail::Upper => p_value(stat.t, stat.df),
        Tail::Lower => p_value(-stat.t, stat.df),
    };
    let decision = if p < alpha {
        Decision::RejectH0
    } else {
        Decision::FailToReject
    };
    let (lo, hi) = INCONCLUSIVE_RANGE;
    Ok(TTestResult {
        t: stat.t,
        df: stat.df,
        p_one_tailed: p,
        pooled_std: stat.pooled_std,
        decision,
        alpha,
        tail,
        mean_a: a.mean(),
        mean_b: b.mean(),
        n_a: a.n(),
        n_b: b.n(),
        inconclusive_small_sample: decision == Decision::FailToReject && (lo..=hi).contains(&p),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fg(v: &[f64]) -> MeasurementGroup {
        MeasurementGroup::new(GroupLabel::AnomalyForeground, v.to_vec()).unwrap()
    }

    fn bg(v: &[f64]) -> MeasurementGroup {
        MeasurementGroup::new(GroupLabel::AnomalyBackground, v.to_vec()).unwrap()
    }

    #[test]
    fn pooled_std_hand_value() {
        let a = fg(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(a.variance(), 2.5);
        let sp = pooled_std(&a, &bg(&[2.0, 3.0, 4.0, 5.0, 6.0])).unwrap();
        assert!((sp - 2.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(
            pooled_std(&fg(&[3.0, 3.0]), &bg(&[1.0, 1.0, 1.0])).unwrap(),
            0.0
        );
    }

    #[test]
    fn t_hand_value() {
        let s = t_statistic(
            &fg(&[1.0, 2.0, 3.0, 4.0, 5.0]),
            &bg(&[2.0, 3.0, 4.0, 5.0, 6.0]),
        )
        .unwrap();
        assert!((s.t + 1.0).abs() < 1e-12);
        assert_eq!(s.df, 8);
    }

    #[test]
    fn degenerate_variance() {
        let err = t_statistic(&fg(&[1.0, 1.0]), &bg(&[2.0, 2.0])).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
        assert_eq!(
            t_statistic(&fg(&[1.0, 1.0]), &bg(&[1.0, 1.0])).unwrap().t,
            0.0
        );
    }

    #[test]
    fn t_table_anchors() {
        assert_eq!(p_value(0.0, 7), 0.5);
        assert!((p_value(1.812, 10) - 0.05).abs() < 1e-3);
        assert!((p_value(2.228, 10) - 0.025).abs() < 1e-3);
        // df = 1 is Cauchy: P(T > 1) = 1/4
        assert!((p_value(1.0, 1) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn ln_gamma_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn small_group_rejected() {
        assert!(MeasurementGroup::new(GroupLabel::AnomalyForeground, vec![1.0]).is_err());
        assert!(MeasurementGroup::new(GroupLabel::AnomalyForeground, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn inconclusive_band_flagged() {
        // choose a shift that lands p in [0.15, 0.20] for n = 10 each
        let a: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 1.3).collect();
        let r = hypothesis_test(&fg(&a), &bg(&b), 0.05, Tail::Lower).unwrap();
        assert!(
            (0.15..=0.20).contains(&r.p_one_tailed),
            "p = {}",
            r.p_one_tailed
        );
        assert_eq!(r.decision, Decision::FailToReject);
        assert!(r.inconclusive_small_sample);
    }
}
