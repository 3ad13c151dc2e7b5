//! Budget-manifold geometry.
//!
//! The level set `M = { alpha : C(alpha) = B }` of the expected cost
//! `C(alpha) = sum_i w_i <softmax(alpha_i), c>` is a smooth hypersurface of
//! logit space whenever the option costs are not all equal. Its geometry is
//! unusually cheap under the Euclidean ambient metric:
//!
//! * the normal is available entrywise in closed form,
//!   `n_{ik} = w_i p_{ik} (c_k - E_{p_i}[c])`;
//! * shifting all logits along the cost vector moves `C` strictly
//!   monotonically (the derivative is `sum_i w_i Var_{p_i}[c] > 0`), so a
//!   binary search on that scalar shift retracts any iterate back onto `M`;
//! * vector transport of optimizer momentum is a single re-projection.
//!
//! The module also provides the slack-augmented variant for inequality
//! budgets (`C(alpha) + s^2 = B`) and the multi-constraint generalization
//! (projection against `q` stacked normals, Newton retraction with the
//! closed-form covariance Jacobian).

use ndarray::Array2;

use crate::error::{RcoError, Result};
use crate::matrix::{inner, softmax_rows, LogitMatrix, ProbMatrix};
use crate::problem::{BudgetProblem, ConstraintSet};

/// Squared-norm threshold below which the normal is treated as zero.
/// Guards against fully saturated softmax rows underflowing to 0 in f64.
pub const ZERO_NORMAL_THRESHOLD: f64 = 1e-300;

/// Bracket half-width doubling cap for the retraction search.
pub const BRACKET_CAP: f64 = 1600.0;

/// Bisection iteration cap; never reached in practice for tolerances >= 1e-14.
pub const MAX_BISECTIONS: u32 = 100;

/// The gradient of expected cost: normal vector to the budget manifold.
#[derive(Debug, Clone)]
pub struct Normal {
    pub entries: Array2<f64>,
    pub norm_sq: f64,
}

/// Outcome of one retraction: the logit shift applied along the cost vector,
/// the number of bisections, and the final cost-space residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetractionReport {
    pub shift: f64,
    pub iterations: u32,
    pub residual: f64,
}

/// Slack value for inequality mode; invariant `C(alpha) + s^2 = B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlackState {
    pub s: f64,
}

/// Expected cost `sum_i w_i <p_i, c>` at given probabilities.
pub fn expected_cost_probs(probs: &ProbMatrix, weights: &[f64], costs: &[f64]) -> f64 {
    probs
        .entries()
        .rows()
        .into_iter()
        .zip(weights)
        .map(|(row, &w)| w * row.iter().zip(costs).map(|(p, c)| p * c).sum::<f64>())
        .sum()
}

/// Expected cost `C(alpha)`.
pub fn expected_cost(alpha: &LogitMatrix, problem: &BudgetProblem) -> f64 {
    let probs = softmax_rows(alpha);
    expected_cost_probs(&probs, &problem.group_weights, &problem.option_costs)
}

/// Normal from precomputed probabilities, under arbitrary costs.
pub fn normal_from_probs(probs: &ProbMatrix, weights: &[f64], costs: &[f64]) -> Normal {
    let (n, k) = (probs.num_groups(), probs.num_options());
    let mut entries = Array2::zeros((n, k));
    let mut norm_sq = 0.0;
    for i in 0..n {
        let row = probs.entries().row(i);
        let mean: f64 = row.iter().zip(costs).map(|(p, c)| p * c).sum();
        for j in 0..k {
            let e = weights[i] * row[j] * (costs[j] - mean);
            entries[[i, j]] = e;
            norm_sq += e * e;
        }
    }
    Normal { entries, norm_sq }
}

/// Gradient of expected cost at `alpha`: `n_{ik} = w_i p_{ik}(c_k - E_{p_i}[c])`.
/// Each row sums to zero, since the deviations are probability-weighted.
pub fn constraint_normal(alpha: &LogitMatrix, problem: &BudgetProblem) -> Normal {
    let probs = softmax_rows(alpha);
    normal_from_probs(&probs, &problem.group_weights, &problem.option_costs)
}

/// Removes the component of `g` along the normal:
/// `g - (<g, n> / |n|^2) n`. The result is orthogonal to `n`, so it is a
/// budget-preserving direction; on the manifold it equals the Riemannian
/// gradient of the objective.
pub fn tangent_project(g: &Array2<f64>, normal: &Normal) -> Result<Array2<f64>> {
    if normal.norm_sq < ZERO_NORMAL_THRESHOLD {
        return Err(RcoError::ZeroNormal(normal.norm_sq));
    }
    let coef = inner(g, &normal.entries) / normal.norm_sq;
    Ok(g - &(coef * &normal.entries))
}

/// Vector transport by projection: identical formula to [`tangent_project`],
/// applied to momentum against the normal at the new iterate.
pub fn transport(momentum: &Array2<f64>, normal_new: &Normal) -> Result<Array2<f64>> {
    tangent_project(momentum, normal_new)
}

/// Expected cost along the retraction ray, `t -> C(alpha + t * c~)` where
/// `c~` broadcasts the cost vector across groups.
fn cost_along_ray(alpha: &LogitMatrix, problem: &BudgetProblem, t: f64) -> f64 {
    let mut total = 0.0;
    let costs = &problem.option_costs;
    for (row, &w) in alpha.0.rows().into_iter().zip(&problem.group_weights) {
        // softmax of (alpha_i + t*c) folded with <., c>, computed stably
        let mut max = f64::NEG_INFINITY;
        for (a, c) in row.iter().zip(costs) {
            max = max.max(a + t * c);
        }
        let mut sum = 0.0;
        let mut dot = 0.0;
        for (a, c) in row.iter().zip(costs) {
            let e = (a + t * c - max).exp();
            sum += e;
            dot += e * c;
        }
        total += w * dot / sum;
    }
    total
}

/// Applies the shift `alpha_{ik} + t * c_k`.
fn apply_shift(alpha: &LogitMatrix, costs: &[f64], t: f64) -> LogitMatrix {
    let mut out = alpha.0.clone();
    for mut row in out.rows_mut() {
        for (x, c) in row.iter_mut().zip(costs) {
            *x += t * c;
        }
    }
    LogitMatrix(out)
}

/// Stopping rule for the retraction bisection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Stop when `|C - B| <= tol` (the default; tolerance in cost space).
    CostResidual(f64),
    /// Stop when the `t`-interval width drops below `eps`; takes exactly
    /// `ceil(log2(width / eps))` bisections.
    TSpace(f64),
}

/// Binary-search retraction onto the budget manifold.
///
/// Searches the monotone scalar map `t -> C(alpha + t c~)` for the shift that
/// restores `C = B`, starting from the bracket `[-bracket, +bracket]` and
/// doubling it (up to [`BRACKET_CAP`]) if the budget is not enclosed.
pub fn retract_binary(
    alpha: &LogitMatrix,
    problem: &BudgetProblem,
    tol: f64,
    bracket: f64,
) -> Result<(LogitMatrix, RetractionReport)> {
    retract_binary_with(alpha, problem, StopRule::CostResidual(tol), bracket)
}

/// Retraction with an explicit stopping rule; see [`retract_binary`].
pub fn retract_binary_with(
    alpha: &LogitMatrix,
    problem: &BudgetProblem,
    stop: StopRule,
    bracket: f64,
) -> Result<(LogitMatrix, RetractionReport)> {
    let budget = problem.budget;

    if let StopRule::CostResidual(tol) = stop {
        let residual = (expected_cost(alpha, problem) - budget).abs();
        if residual <= tol {
            // centering: already on the manifold
            return Ok((
                alpha.clone(),
                RetractionReport {
                    shift: 0.0,
                    iterations: 0,
                    residual,
                },
            ));
        }
    }

    let mut half = bracket;
    let (mut lo, mut hi);
    loop {
        lo = -half;
        hi = half;
        let cost_lo = cost_along_ray(alpha, problem, lo);
        let cost_hi = cost_along_ray(alpha, problem, hi);
        if cost_lo <= budget && budget <= cost_hi {
            break;
        }
        if half >= BRACKET_CAP {
            return Err(RcoError::BracketExhausted {
                half_width: half,
                cost_lo,
                cost_hi,
                budget,
            });
        }
        half = (half * 2.0).min(BRACKET_CAP);
    }

    let mut iterations = 0;
    let mut mid = 0.5 * (lo + hi);
    loop {
        let cost_mid = cost_along_ray(alpha, problem, mid);
        let residual = (cost_mid - budget).abs();
        iterations += 1;
        match stop {
            StopRule::CostResidual(tol) => {
                if residual <= tol {
                    // accept only if the residual holds on the applied
                    // logits, which use the same evaluation path callers
                    // later recompute the violation with
                    let shifted = apply_shift(alpha, &problem.option_costs, mid);
                    let applied = (expected_cost(&shifted, problem) - budget).abs();
                    if applied <= tol {
                        return Ok((
                            shifted,
                            RetractionReport {
                                shift: mid,
                                iterations,
                                residual: applied,
                            },
                        ));
                    }
                }
            }
            StopRule::TSpace(eps) => {
                if (hi - lo) * 0.5 <= eps {
                    let shifted = apply_shift(alpha, &problem.option_costs, mid);
                    return Ok((
                        shifted,
                        RetractionReport {
                            shift: mid,
                            iterations,
                            residual,
                        },
                    ));
                }
            }
        }
        if cost_mid < budget {
            lo = mid;
        } else {
            hi = mid;
        }
        let next = 0.5 * (lo + hi);
        if iterations >= MAX_BISECTIONS || next == mid {
            return Err(RcoError::RetractionStalled {
                iterations,
                residual,
            });
        }
        mid = next;
    }
}

/// Derivative of expected cost along the retraction ray at shift `t`:
/// `sum_i w_i Var_{p_i(t)}[c]`, strictly positive for non-equal costs.
pub fn retraction_derivative(alpha: &LogitMatrix, problem: &BudgetProblem, t: f64) -> f64 {
    let shifted = apply_shift(alpha, &problem.option_costs, t);
    let probs = softmax_rows(&shifted);
    let costs = &problem.option_costs;
    probs
        .entries()
        .rows()
        .into_iter()
        .zip(&problem.group_weights)
        .map(|(row, &w)| {
            let mean: f64 = row.iter().zip(costs).map(|(p, c)| p * c).sum();
            let second: f64 = row.iter().zip(costs).map(|(p, c)| p * c * c).sum();
            w * (second - mean * mean)
        })
        .sum()
}

/// Tangent projection on the slack-augmented manifold `C(alpha) + s^2 = B`.
///
/// The augmented normal is `(grad C, 2s)`; the objective has no `s`
/// component, so the input is `(g, 0)`. Returns the projected alpha-component
/// and the (generally nonzero) s-component.
pub fn slack_project(g: &Array2<f64>, normal: &Normal, s: f64) -> (Array2<f64>, f64) {
    let (alpha_part, s_part) = slack_project_aug(g, 0.0, normal, s);
    (alpha_part, s_part)
}

/// Augmented-space projection of a vector with an explicit s-component;
/// used for momentum transport in slack mode.
pub fn slack_project_aug(
    g_alpha: &Array2<f64>,
    g_s: f64,
    normal: &Normal,
    s: f64,
) -> (Array2<f64>, f64) {
    let denom = normal.norm_sq + 4.0 * s * s;
    // denom > 0: the alpha-normal never vanishes for valid problems
    let coef = (inner(g_alpha, &normal.entries) + g_s * 2.0 * s) / denom;
    let alpha_part = g_alpha - &(coef * &normal.entries);
    let s_part = g_s - coef * 2.0 * s;
    (alpha_part, s_part)
}

/// Retraction onto the slack-augmented manifold: if over budget, retract the
/// logits to `C = B` and zero the slack; otherwise leave the logits and set
/// `s = sqrt(B - C)` so that `C + s^2 = B` holds exactly.
pub fn slack_retract(
    alpha: &LogitMatrix,
    problem: &BudgetProblem,
    tol: f64,
    bracket: f64,
) -> Result<(LogitMatrix, SlackState, RetractionReport)> {
    let cost = expected_cost(alpha, problem);
    if cost > problem.budget {
        let (retracted, report) = retract_binary(alpha, problem, tol, bracket)?;
        Ok((retracted, SlackState { s: 0.0 }, report))
    } else {
        Ok((
            alpha.clone(),
            SlackState {
                s: (problem.budget - cost).sqrt(),
            },
            RetractionReport {
                shift: 0.0,
                iterations: 0,
                residual: 0.0,
            },
        ))
    }
}

/// Maximum Gram condition number before normals are declared dependent.
pub const GRAM_CONDITION_LIMIT: f64 = 1e12;

/// Symmetric eigendecomposition of the q x q Gram matrix; returns the
/// decomposition and the condition number.
fn gram_eigen(normals: &[Normal]) -> (nalgebra::SymmetricEigen<f64, nalgebra::Dyn>, f64) {
    let q = normals.len();
    let mut gram = nalgebra::DMatrix::<f64>::zeros(q, q);
    for j in 0..q {
        for l in j..q {
            let v = inner(&normals[j].entries, &normals[l].entries);
            gram[(j, l)] = v;
            gram[(l, j)] = v;
        }
    }
    let eigen = nalgebra::SymmetricEigen::new(gram);
    let max = eigen.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eigen.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if min <= 0.0 { f64::INFINITY } else { max / min };
    (eigen, condition)
}

/// Projects `g` onto the intersection of the `q` tangent hyperplanes:
/// `g - N (N^T N)^{-1} N^T g` with the normals stacked column-wise.
/// The q x q Gram system is solved through a symmetric eigendecomposition
/// with a condition-number guard.
pub fn multi_project(g: &Array2<f64>, normals: &[Normal]) -> Result<Array2<f64>> {
    let q = normals.len();
    if q == 1 {
        return tangent_project(g, &normals[0]);
    }
    let (eigen, condition) = gram_eigen(normals);
    if condition > GRAM_CONDITION_LIMIT {
        return Err(RcoError::DependentNormals {
            condition,
            limit: GRAM_CONDITION_LIMIT,
        });
    }
    let rhs = nalgebra::DVector::from_iterator(q, normals.iter().map(|n| inner(g, &n.entries)));
    // coefficients = V diag(1/lambda) V^T rhs
    let vt_rhs = eigen.eigenvectors.transpose() * rhs;
    let scaled = nalgebra::DVector::from_iterator(
        q,
        vt_rhs.iter().zip(eigen.eigenvalues.iter()).map(|(x, l)| x / l),
    );
    let coefs = &eigen.eigenvectors * scaled;
    let mut out = g.clone();
    for (n, &c) in normals.iter().zip(coefs.iter()) {
        out.scaled_add(-c, &n.entries);
    }
    Ok(out)
}

/// Per-constraint expected costs at given probabilities.
fn constraint_costs(probs: &ProbMatrix, weights: &[f64], constraints: &ConstraintSet) -> Vec<f64> {
    constraints
        .constraints
        .iter()
        .map(|c| expected_cost_probs(probs, weights, &c.option_costs))
        .collect()
}

/// Newton retraction for `q` simultaneous equality constraints.
///
/// Finds the shift vector `t` with `C_j(alpha + sum_l t_l c~^{(l)}) = b_j`
/// for all `j`. The Jacobian is available in closed form,
/// `J_{jl} = sum_i w_i Cov_{p_i}[c^{(j)}, c^{(l)}]`; for `q = 1` it reduces
/// to the scalar retraction derivative. A full step that increases the
/// residual norm is halved up to 8 times before declaring divergence.
pub fn multi_retract_newton(
    alpha: &LogitMatrix,
    constraints: &ConstraintSet,
    weights: &[f64],
    tol: f64,
    max_iters: u32,
) -> Result<(LogitMatrix, u32)> {
    let q = constraints.num_constraints();
    let (n, k) = (alpha.num_groups(), alpha.num_options());

    let apply = |t: &[f64]| -> LogitMatrix {
        let mut out = alpha.0.clone();
        for i in 0..n {
            for j in 0..k {
                let mut shift = 0.0;
                for (l, entry) in constraints.constraints.iter().enumerate() {
                    shift += t[l] * entry.option_costs[j];
                }
                out[[i, j]] += shift;
            }
        }
        LogitMatrix(out)
    };

    let residuals = |probs: &ProbMatrix| -> Vec<f64> {
        constraint_costs(probs, weights, constraints)
            .iter()
            .zip(constraints.constraints.iter())
            .map(|(c, entry)| c - entry.budget)
            .collect()
    };
    let max_abs = |r: &[f64]| r.iter().fold(0.0f64, |a, &x| a.max(x.abs()));

    let mut t = vec![0.0; q];
    let mut current = alpha.clone();
    let mut probs = softmax_rows(&current);
    let mut res = residuals(&probs);
    let mut res_norm = max_abs(&res);
    let mut iterations = 0;

    while res_norm > tol {
        if iterations >= max_iters {
            return Err(RcoError::NewtonDiverged {
                iterations,
                residual: res_norm,
            });
        }

        // closed-form Jacobian from the current softmax distributions
        let mut jac = nalgebra::DMatrix::<f64>::zeros(q, q);
        for i in 0..n {
            let row = probs.entries().row(i);
            let w = weights[i];
            let means: Vec<f64> = constraints
                .constraints
                .iter()
                .map(|entry| row.iter().zip(&entry.option_costs).map(|(p, c)| p * c).sum())
                .collect();
            for j in 0..q {
                let cj = &constraints.constraints[j].option_costs;
                for l in j..q {
                    let cl = &constraints.constraints[l].option_costs;
                    let mut second = 0.0;
                    for idx in 0..k {
                        second += row[idx] * cj[idx] * cl[idx];
                    }
                    let cov = w * (second - means[j] * means[l]);
                    jac[(j, l)] += cov;
                    if l != j {
                        jac[(l, j)] += cov;
                    }
                }
            }
        }

        let rhs = nalgebra::DVector::from_column_slice(&res);
        let delta = jac.lu().solve(&rhs).ok_or(RcoError::NewtonDiverged {
            iterations,
            residual: res_norm,
        })?;

        // damped step: halve until the residual norm decreases
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=8 {
            let trial: Vec<f64> = t
                .iter()
                .zip(delta.iter())
                .map(|(&ti, &d)| ti - scale * d)
                .collect();
            let trial_logits = apply(&trial);
            let trial_probs = softmax_rows(&trial_logits);
            let trial_res = residuals(&trial_probs);
            let trial_norm = max_abs(&trial_res);
            if trial_norm < res_norm {
                t = trial;
                current = trial_logits;
                probs = trial_probs;
                res = trial_res;
                res_norm = trial_norm;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        iterations += 1;
        if !accepted {
            return Err(RcoError::NewtonDiverged {
                iterations,
                residual: res_norm,
            });
        }
    }

    Ok((current, iterations))
}

/// Per-constraint normals at `alpha`.
pub fn multi_normals(
    alpha: &LogitMatrix,
    constraints: &ConstraintSet,
    weights: &[f64],
) -> Vec<Normal> {
    let probs = softmax_rows(alpha);
    constraints
        .constraints
        .iter()
        .map(|entry| normal_from_probs(&probs, weights, &entry.option_costs))
        .collect()
}

/// Per-constraint expected costs at `alpha`.
pub fn multi_costs(
    alpha: &LogitMatrix,
    constraints: &ConstraintSet,
    weights: &[f64],
) -> Vec<f64> {
    let probs = softmax_rows(alpha);
    constraint_costs(&probs, weights, constraints)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::BudgetConstraint;
    use ndarray::array;

    fn two_option_problem() -> BudgetProblem {
        BudgetProblem {
            num_groups: 1,
            num_options: 2,
            option_costs: vec![0.5, 1.0],
            group_weights: vec![1.0],
            budget: 0.75,
            values: None,
        }
    }

    // costs [0, 1] are outside validation (cost 0 not positive) but exercise
    // the analytic examples; geometry functions do not require validation.
    fn unit_interval_problem() -> BudgetProblem {
        BudgetProblem {
            num_groups: 1,
            num_options: 2,
            option_costs: vec![0.0, 1.0],
            group_weights: vec![1.0],
            budget: 0.5,
            values: None,
        }
    }

    #[test]
    fn uniform_expected_cost() {
        let p = unit_interval_problem();
        let alpha = LogitMatrix::zeros(1, 2);
        assert!((expected_cost(&alpha, &p) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn saturated_expected_cost() {
        let p = BudgetProblem {
            num_groups: 2,
            num_options: 2,
            option_costs: vec![1.0, 3.0],
            group_weights: vec![2.0, 1.0],
            budget: 5.0,
            values: None,
        };
        let alpha = LogitMatrix(array![[40.0, -40.0], [-40.0, 40.0]]);
        // group 0 saturates on cost 1 (weight 2), group 1 on cost 3
        assert!((expected_cost(&alpha, &p) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_normal_two_options() {
        let p = unit_interval_problem();
        let alpha = LogitMatrix::zeros(1, 2);
        let n = constraint_normal(&alpha, &p);
        assert!((n.entries[[0, 0]] - (-0.25)).abs() < 1e-15);
        assert!((n.entries[[0, 1]] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn equal_costs_give_zero_normal() {
        // bypasses validation deliberately: degenerate geometry check
        let p = BudgetProblem {
            num_groups: 2,
            num_options: 3,
            option_costs: vec![2.0, 2.0, 2.0],
            group_weights: vec![1.0, 1.0],
            budget: 4.0,
            values: None,
        };
        let alpha = LogitMatrix(array![[0.1, -0.2, 0.3], [1.0, 2.0, 3.0]]);
        let n = constraint_normal(&alpha, &p);
        assert!(n.entries.iter().all(|x| x.abs() < 1e-12));
        assert!(n.norm_sq < 1e-24);
    }

    #[test]
    fn fully_saturated_rows_trip_zero_normal() {
        // logit gaps beyond ~745 underflow the softmax to an exact one-hot,
        // making the normal exactly zero
        let p = two_option_problem();
        let alpha = LogitMatrix(array![[800.0, -800.0]]);
        let n = constraint_normal(&alpha, &p);
        assert!(n.norm_sq < ZERO_NORMAL_THRESHOLD);
        assert!(matches!(
            tangent_project(&alpha.0, &n),
            Err(RcoError::ZeroNormal(_))
        ));
    }

    #[test]
    fn normal_rows_sum_to_zero() {
        let p = BudgetProblem {
            num_groups: 3,
            num_options: 4,
            option_costs: vec![1.0, 2.0, 3.0, 4.0],
            group_weights: vec![0.5, 1.5, 2.0],
            budget: 11.0,
            values: None,
        };
        let alpha = LogitMatrix(array![
            [0.3, -1.2, 0.7, 2.0],
            [1.0, 1.0, -3.0, 0.2],
            [-0.5, 0.5, 0.1, -0.1]
        ]);
        let n = constraint_normal(&alpha, &p);
        for row in n.entries.rows() {
            assert!(row.sum().abs() < 1e-12);
        }
    }

    #[test]
    fn project_normal_to_zero() {
        let p = two_option_problem();
        let alpha = LogitMatrix(array![[0.4, -0.3]]);
        let n = constraint_normal(&alpha, &p);
        let out = tangent_project(&n.entries.clone(), &n).unwrap();
        for x in out.iter() {
            assert!(x.abs() < 1e-15);
        }
    }

    #[test]
    fn project_tangent_unchanged() {
        let p = two_option_problem();
        let alpha = LogitMatrix(array![[0.4, -0.3]]);
        let n = constraint_normal(&alpha, &p);
        // any vector orthogonal to n: rotate n by 90 degrees in flat 2d
        let g = array![[-n.entries[[0, 1]], n.entries[[0, 0]]]];
        let out = tangent_project(&g, &n).unwrap();
        for (a, b) in out.iter().zip(g.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn retraction_centering() {
        let p = unit_interval_problem();
        let alpha = LogitMatrix::zeros(1, 2); // C = 0.5 = B exactly
        let (out, report) = retract_binary(&alpha, &p, 1e-8, 50.0).unwrap();
        assert_eq!(report.iterations, 0);
        assert_eq!(report.shift, 0.0);
        assert_eq!(out.0, alpha.0);
    }

    #[test]
    fn retraction_inverts_logistic() {
        // alpha = [0, delta], B = 0.5: the shift must solve
        // sigmoid(delta + t) = 1/2, i.e. t = -delta (costs are [0, 1]).
        let p = unit_interval_problem();
        let delta = 0.8;
        let alpha = LogitMatrix(array![[0.0, delta]]);
        let (out, report) = retract_binary(&alpha, &p, 1e-12, 50.0).unwrap();
        assert!((report.shift - (-delta)).abs() < 1e-9, "shift {}", report.shift);
        let c = expected_cost(&out, &p);
        assert!((c - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn retraction_bracket_exhausts_outside_window() {
        // budget beyond the max reachable cost: validation would reject this;
        // retraction reports the structural failure instead of looping.
        let p = BudgetProblem {
            num_groups: 1,
            num_options: 2,
            option_costs: vec![1.0, 2.0],
            group_weights: vec![1.0],
            budget: 2.5,
            values: None,
        };
        let alpha = LogitMatrix::zeros(1, 2);
        assert!(matches!(
            retract_binary(&alpha, &p, 1e-8, 50.0),
            Err(RcoError::BracketExhausted { .. })
        ));
    }

    #[test]
    fn tspace_rule_uses_theoretical_iteration_count() {
        let p = two_option_problem();
        let alpha = LogitMatrix(array![[1.3, -0.7]]);
        let (_, report) =
            retract_binary_with(&alpha, &p, StopRule::TSpace(1e-8), 50.0).unwrap();
        // ceil(log2(100 / 1e-8)) = 34
        assert_eq!(report.iterations, 34);
    }

    #[test]
    fn derivative_is_bernoulli_variance_at_uniform() {
        let p = unit_interval_problem();
        let alpha = LogitMatrix::zeros(1, 2);
        assert!((retraction_derivative(&alpha, &p, 0.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn derivative_collapses_when_saturated() {
        let p = unit_interval_problem();
        let alpha = LogitMatrix(array![[30.0, -30.0]]);
        assert!(retraction_derivative(&alpha, &p, 0.0) < 1e-10);
    }

    #[test]
    fn transport_is_idempotent() {
        let p = two_option_problem();
        let alpha = LogitMatrix(array![[0.2, 0.9]]);
        let n = constraint_normal(&alpha, &p);
        let m = array![[1.7, -0.4]];
        let once = transport(&m, &n).unwrap();
        let twice = transport(&once, &n).unwrap();
        for (a, b) in once.iter().zip(twice.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn slack_project_reduces_to_tangent_at_zero_slack() {
        let p = two_option_problem();
        let alpha = LogitMatrix(array![[0.2, 0.9]]);
        let n = constraint_normal(&alpha, &p);
        let g = array![[0.3, -1.1]];
        let (alpha_part, s_part) = slack_project(&g, &n, 0.0);
        let plain = tangent_project(&g, &n).unwrap();
        assert_eq!(s_part, 0.0);
        for (a, b) in alpha_part.iter().zip(plain.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn slack_retract_branches() {
        let p = two_option_problem();
        // under budget: logits unchanged, s absorbs the margin
        let under = LogitMatrix(array![[5.0, -5.0]]); // C near 0.5 < 0.75
        let (out, slack, _) = slack_retract(&under, &p, 1e-10, 50.0).unwrap();
        assert_eq!(out.0, under.0);
        let c = expected_cost(&out, &p);
        assert!((c + slack.s * slack.s - p.budget).abs() < 1e-12);
        assert!(slack.s > 0.0);

        // over budget: retract to the surface, s = 0
        let over = LogitMatrix(array![[-5.0, 5.0]]); // C near 1.0 > 0.75
        let (out, slack, _) = slack_retract(&over, &p, 1e-10, 50.0).unwrap();
        assert_eq!(slack.s, 0.0);
        assert!((expected_cost(&out, &p) - p.budget).abs() <= 1e-10);
    }

    #[test]
    fn multi_project_single_constraint_matches_tangent() {
        let p = two_option_problem();
        let alpha = LogitMatrix(array![[0.2, 0.9]]);
        let n = constraint_normal(&alpha, &p);
        let g = array![[0.3, -1.1]];
        let a = multi_project(&g, std::slice::from_ref(&n)).unwrap();
        let b = tangent_project(&g, &n).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn newton_zero_iterations_when_feasible() {
        let constraints = ConstraintSet {
            constraints: vec![BudgetConstraint {
                option_costs: vec![0.0, 1.0],
                budget: 0.5,
            }],
            slack_enabled: false,
        };
        let alpha = LogitMatrix::zeros(1, 2);
        let (out, iters) =
            multi_retract_newton(&alpha, &constraints, &[1.0], 1e-12, 20).unwrap();
        assert_eq!(iters, 0);
        assert_eq!(out.0, alpha.0);
    }

    #[test]
    fn newton_single_constraint_converges() {
        let constraints = ConstraintSet {
            constraints: vec![BudgetConstraint {
                option_costs: vec![0.5, 1.0],
                budget: 0.8,
            }],
            slack_enabled: false,
        };
        let alpha = LogitMatrix(ndarray::array![[1.2, -0.4]]);
        let (out, iters) =
            multi_retract_newton(&alpha, &constraints, &[1.0], 1e-12, 20).unwrap();
        assert!(iters <= 10, "iterations {iters}");
        let probs = softmax_rows(&out);
        let c = expected_cost_probs(&probs, &[1.0], &[0.5, 1.0]);
        assert!((c - 0.8).abs() <= 1e-12);
    }
}
