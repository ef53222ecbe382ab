//! Divergences, distances and their bound checks.
//!
//! Set-level measures are aggregates of per-pair (or per-sample) values and
//! carry the theoretical range they must respect:
//!
//! | metric | value                                       | range            |
//! |--------|---------------------------------------------|------------------|
//! | JS     | mean per-pair JS divergence, bits           | `[0, 1]`         |
//! | MH     | mean defect distance to the normal Gaussian | `[0, bound(n,p)]`|
//! | WS     | exact 2-Wasserstein on unit-norm rows       | `[0, +∞)`        |
//! | RMI    | mean region mutual information, nats        | `(−∞, +∞]`       |
//!
//! The Mahalanobis bound is asserted only for within-set distances; the
//! cross-set value is reported as a percentage of it.

pub mod assignment;
mod divergence;
mod mahalanobis;
mod rmi;
pub mod sinkhorn;
mod wasserstein;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use divergence::{
    feature_to_distribution, js_divergence, js_set, kl_divergence, ProbabilityVector,
    FEATURE_EPSILON, MASS_TOLERANCE,
};
pub use mahalanobis::{
    fit_shrinkage_gaussian, mahalanobis_set, mahalanobis_upper_bound, shrinkage_lambda,
    within_set_distances, ShrinkageCovariance,
};
pub use rmi::{
    posterior_covariance, region_vectors, regularized_log_det, rmi, rmi_set, DEFAULT_REGION,
    RMI_EPSILON,
};
pub use wasserstein::{
    l2_normalized_rows, wasserstein2_exact, wasserstein2_set, wasserstein2_set_with,
    WassersteinOptions, EXACT_LIMIT,
};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "JS", alias = "js")]
    Js,
    #[serde(rename = "MH", alias = "mh")]
    Mh,
    #[serde(rename = "WS", alias = "ws")]
    Ws,
    #[serde(rename = "RMI", alias = "rmi")]
    Rmi,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Js, Metric::Mh, Metric::Ws, Metric::Rmi];

    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Js => "JS",
            Metric::Mh => "MH",
            Metric::Ws => "WS",
            Metric::Rmi => "RMI",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim().to_ascii_lowercase().as_str() {
            "js" => Ok(Metric::Js),
            "mh" => Ok(Metric::Mh),
            "ws" => Ok(Metric::Ws),
            "rmi" => Ok(Metric::Rmi),
            other => Err(Error::Validation(format!("unknown metric {other:?}"))),
        }
    }
}

/// A range endpoint; infinities serialize as the strings `"-inf"`/`"+inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    Finite(f64),
    NegInfinity,
    PosInfinity,
}

impl Serialize for Bound {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Bound::Finite(v) => s.serialize_f64(*v),
            Bound::NegInfinity => s.serialize_str("-inf"),
            Bound::PosInfinity => s.serialize_str("+inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Bound {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Bound::Finite(v)),
            Raw::Str(s) if s == "-inf" => Ok(Bound::NegInfinity),
            Raw::Str(s) if s == "+inf" || s == "inf" => Ok(Bound::PosInfinity),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("invalid bound {s:?}"))),
        }
    }
}

impl Bound {
    pub fn value(&self) -> f64 {
        match self {
            Bound::Finite(v) => *v,
            Bound::NegInfinity => f64::NEG_INFINITY,
            Bound::PosInfinity => f64::INFINITY,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Bound::Finite(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    Exact,
    Entropic,
}

/// Estimator settings echoed next to a result.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricDetails {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_used: Option<f64>,
    /// Largest Mahalanobis distance of a normal sample to its own fit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub within_set_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverMode>,
    #[serde(default)]
    pub approx: bool,
    #[serde(default)]
    pub rows_l2_normalized: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_base: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<usize>,
}

/// A set-level measurement with its theoretical range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetMetricResult {
    pub metric: Metric,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_pair_values: Option<Vec<f64>>,
    pub bound_low: Bound,
    pub bound_high: Bound,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pct_of_bound: Option<f64>,
    /// Sample count the bound refers to (normal set size for MH).
    pub n: usize,
    pub p: usize,
    #[serde(default)]
    pub details: MetricDetails,
}

/// Outcome of one bound check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundDiagnostic {
    pub metric: Metric,
    pub passed: bool,
    pub checks: Vec<BoundCheck>,
}

/// Slack for rounding in the bound comparisons.
pub const BOUND_SLACK: f64 = 1e-9;

fn range_check(name: &str, v: f64, lo: f64, hi: f64) -> BoundCheck {
    let passed = !v.is_nan() && v >= lo - BOUND_SLACK && v <= hi + BOUND_SLACK;
    BoundCheck {
        name: name.to_string(),
        passed,
        detail: format!("{v} in [{lo}, {hi}]"),
    }
}

/// Checks a result against every bound that applies to its metric.
pub fn verify_bounds(result: &SetMetricResult) -> BoundDiagnostic {
    let v = result.value;
    let mut checks = Vec::new();
    match result.metric {
        Metric::Js => {
            checks.push(range_check("JS range theorem: 0 <= JS <= 1", v, 0.0, 1.0));
            if let Some(per) = &result.per_pair_values {
                let bad = per
                    .iter()
                    .filter(|x| !(-BOUND_SLACK..=1.0 + BOUND_SLACK).contains(*x))
                    .count();
                checks.push(BoundCheck {
                    name: "JS range theorem (per pair)".into(),
                    passed: bad == 0,
                    detail: format!("{bad} of {} pairs outside [0, 1]", per.len()),
                });
            }
        }
        Metric::Mh => {
            checks.push(range_check("MH non-negativity", v, 0.0, f64::INFINITY));
            let bound = mahalanobis_upper_bound(result.n, result.p);
            match result.details.within_set_max {
                Some(max) => checks.push(range_check(
                    "MH range theorem (within-set maximum)",
                    max,
                    0.0,
                    bound,
                )),
                None => checks.push(BoundCheck {
                    name: "MH range theorem (within-set maximum)".into(),
                    passed: true,
                    detail: "skipped: no within-set distances recorded".into(),
                }),
            }
            if let Some(pct) = result.pct_of_bound {
                checks.push(BoundCheck {
                    name: "MH cross-set percent of bound (reported only)".into(),
                    passed: true,
                    detail: format!("{pct:.3}% of {bound:.3}"),
                });
            }
        }
        Metric::Ws => {
            checks.push(range_check(
                "WS non-negativity, unbounded above",
                v,
                0.0,
                f64::INFINITY,
            ));
        }
        Metric::Rmi => {
            checks.push(BoundCheck {
                name: "RMI unbounded below, +inf above".into(),
                passed: !v.is_nan(),
                detail: format!("{v}"),
            });
        }
    }
    BoundDiagnostic {
        metric: result.metric,
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}
