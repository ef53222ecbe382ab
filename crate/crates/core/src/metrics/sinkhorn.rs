//! Log-domain entropic optimal transport between two uniform measures,
//! with ε-scaling. Used in place of exact assignment for large sets.

use rayon::prelude::*;

#[derive(Debug, Clone, Copy)]
pub struct SinkhornOptions {
    /// Final regularization, relative to the largest cost entry.
    pub epsilon_rel: f64,
    /// Stop when the L1 violation of the row marginal drops below this.
    pub tolerance: f64,
    /// Iteration cap for the final ε stage.
    pub max_iter: usize,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            epsilon_rel: 1e-3,
            tolerance: 1e-6,
            max_iter: 20_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornPlan {
    /// `Σ_ij P_ij C_ij`.
    pub cost: f64,
    /// `n · Σ_j P_ij C_ij` for each row, i.e. the expected cost of row `i`.
    pub row_costs: Vec<f64>,
    pub marginal_violation: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropic transport between uniform weights on the `n` rows and `n`
/// columns of the row-major cost matrix.
pub fn sinkhorn_uniform(cost: &[f64], n: usize, opts: &SinkhornOptions) -> SinkhornPlan {
    assert_eq!(cost.len(), n * n);
    let cost_t: Vec<f64> = (0..n * n).map(|k| cost[(k % n) * n + k / n]).collect();
    let c_max = cost.iter().copied().fold(0.0, f64::max).max(1e-12);
    let eps_final = opts.epsilon_rel * c_max;
    let log_w = -(n as f64).ln();

    let mut f = vec![0.0f64; n];
    let mut g = vec![0.0f64; n];
    let mut eps = c_max;
    let mut iterations = 0;
    let mut violation = f64::INFINITY;

    let row_mass = |f: &[f64], g: &[f64], eps: f64| -> f64 {
        f.par_iter()
            .zip(cost.par_chunks_exact(n))
            .map(|(&fi, row)| {
                let m: f64 = row
                    .iter()
                    .zip(g)
                    .map(|(&c, &gj)| ((fi + gj - c) / eps).exp())
                    .sum();
                (m - 1.0 / n as f64).abs()
            })
            .sum()
    };

    loop {
        let last_stage = eps <= eps_final;
        let cap = if last_stage { opts.max_iter } else { 200 };
        let stage_tol = if last_stage {
            opts.tolerance
        } else {
            opts.tolerance * 100.0
        };
        for _ in 0..cap {
            f.par_iter_mut()
                .zip(cost.par_chunks_exact(n))
                .for_each(|(fi, row)| {
                    *fi = eps
                        * (log_w - log_sum_exp(row.iter().zip(&g).map(|(&c, &gj)| (gj - c) / eps)));
                });
            g.par_iter_mut()
                .zip(cost_t.par_chunks_exact(n))
                .for_each(|(gj, col)| {
                    *gj = eps
                        * (log_w - log_sum_exp(col.iter().zip(&f).map(|(&c, &fi)| (fi - c) / eps)));
                });
            iterations += 1;
            violation = row_mass(&f, &g, eps);
            if violation <= stage_tol {
                break;
            }
        }
        if last_stage {
            break;
        }
        eps = (eps * 0.5).max(eps_final);
    }

    let row_costs: Vec<f64> = f
        .par_iter()
        .zip(cost.par_chunks_exact(n))
        .map(|(&fi, row)| {
            n as f64
                * row
                    .iter()
                    .zip(&g)
                    .map(|(&c, &gj)| ((fi + gj - c) / eps).exp() * c)
                    .sum::<f64>()
        })
        .collect();
    SinkhornPlan {
        cost: row_costs.iter().sum::<f64>() / n as f64,
        row_costs,
        marginal_violation: violation,
        converged: violation <= opts.tolerance,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::assignment::solve_assignment;

    #[test]
    fn close_to_exact_on_small_problem() {
        let n = 12;
        let pts: Vec<(f64, f64)> = (0..2 * n)
            .map(|k| (((k * 37) % 17) as f64 / 17.0, ((k * 53) % 23) as f64 / 23.0))
            .collect();
        let cost: Vec<f64> = (0..n * n)
            .map(|k| {
                let (a, b) = (pts[k / n], pts[n + k % n]);
                (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
            })
            .collect();
        let (_, exact) = solve_assignment(&cost, n);
        let plan = sinkhorn_uniform(&cost, n, &SinkhornOptions::default());
        assert!(plan.converged, "violation {}", plan.marginal_violation);
        let exact_mean = exact / n as f64;
        assert!(plan.cost >= exact_mean - 1e-9);
        assert!(
            (plan.cost - exact_mean).abs() < 0.02 * exact_mean.max(1e-3),
            "{} vs {exact_mean}",
            plan.cost
        );
    }
}
