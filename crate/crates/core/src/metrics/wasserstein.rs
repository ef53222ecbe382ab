use super::assignment::solve_assignment;
use super::sinkhorn::{sinkhorn_uniform, SinkhornOptions};
use super::{Bound, Metric, MetricDetails, SetMetricResult, SolverMode};
use crate::error::{Error, Result};
use crate::featstore::FeatureMatrix;

/// Largest set size solved by exact assignment.
pub const EXACT_LIMIT: usize = 2048;

#[derive(Debug, Clone, Copy)]
pub struct WassersteinOptions {
    pub exact_limit: usize,
    pub sinkhorn: SinkhornOptions,
}

impl Default for WassersteinOptions {
    fn default() -> Self {
        Self {
            exact_limit: EXACT_LIMIT,
            sinkhorn: SinkhornOptions::default(),
        }
    }
}

/// Rows scaled to unit Euclidean norm; zero rows stay zero.
pub fn l2_normalized_rows(m: &FeatureMatrix) -> Vec<Vec<f64>> {
    m.rows()
        .map(|r| {
            let v: Vec<f64> = r.iter().map(|&x| x as f64).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.into_iter().map(|x| x / norm).collect()
            } else {
                v
            }
        })
        .collect()
}

pub(crate) fn squared_distance_matrix(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            out.push(x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum());
        }
    }
    out
}

/// Exact 2-Wasserstein distance between two equal-size uniform point
/// clouds (no normalization applied). Returns the distance and the matched
/// distance of each `a` point.
pub fn wasserstein2_exact(a: &[Vec<f64>], b: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let n = a.len();
    assert_eq!(n, b.len());
    let cost = squared_distance_matrix(a, b);
    let (assignment, total) = solve_assignment(&cost, n);
    let matched = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j].sqrt())
        .collect();
    ((total.max(0.0) / n as f64).sqrt(), matched)
}

/// 2-Wasserstein distance between the L2-normalized defect and normal rows.
pub fn wasserstein2_set(defect: &FeatureMatrix, normal: &FeatureMatrix) -> Result<SetMetricResult> {
    wasserstein2_set_with(defect, normal, &WassersteinOptions::default())
}

pub fn wasserstein2_set_with(
    defect: &FeatureMatrix,
    normal: &FeatureMatrix,
    opts: &WassersteinOptions,
) -> Result<SetMetricResult> {
    if defect.p() != normal.p() {
        return Err(Error::Dimension(format!(
            "feature dimension {} vs {}",
            defect.p(),
            normal.p()
        )));
    }
    if defect.n() != normal.n() {
        return Err(Error::Dimension(format!(
            "set size {} vs {}",
            defect.n(),
            normal.n()
        )));
    }
    let n = defect.n();
    let a = l2_normalized_rows(defect);
    let b = l2_normalized_rows(normal);
    let (value, per_pair, solver, approx) = if n <= opts.exact_limit {
        let (value, matched) = wasserstein2_exact(&a, &b);
        (value, matched, SolverMode::Exact, false)
    } else {
        let cost = squared_distance_matrix(&a, &b);
        let plan = sinkhorn_uniform(&cost, n, &opts.sinkhorn);
        if !plan.converged {
            log::warn!(
                "entropic transport stopped at marginal violation {:.3e}",
                plan.marginal_violation
            );
        }
        let rows = plan.row_costs.iter().map(|c| c.max(0.0).sqrt()).collect();
        (plan.cost.max(0.0).sqrt(), rows, SolverMode::Entropic, true)
    };
    Ok(SetMetricResult {
        metric: Metric::Ws,
        value,
        per_pair_values: Some(per_pair),
        bound_low: Bound::Finite(0.0),
        bound_high: Bound::PosInfinity,
        pct_of_bound: None,
        n,
        p: defect.p(),
        details: MetricDetails {
            solver: Some(solver),
            approx,
            rows_l2_normalized: true,
            ..Default::default()
        },
    })
}
