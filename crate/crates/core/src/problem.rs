//! Problem definitions and validation.
//!
//! A [`BudgetProblem`] assigns one of `K` options to each of `N` groups.
//! Option `k` has cost `c_k` (shared across groups), group `i` has weight
//! `w_i`, and an assignment's total cost is `sum_i w_i * c_{z_i}`. The budget
//! `B` must lie strictly inside the reachable cost range, otherwise the
//! expected-cost level set is empty or degenerate.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{RcoError, Result};

/// A budget-constrained assignment problem.
#[derive(Debug, Clone)]
pub struct BudgetProblem {
    pub num_groups: usize,
    pub num_options: usize,
    /// Cost per option, shared across groups; strictly positive, not all equal.
    pub option_costs: Vec<f64>,
    /// Strictly positive per-group weights.
    pub group_weights: Vec<f64>,
    pub budget: f64,
    /// Optional per-(group, option) values; the benchmark objective maximizes
    /// total value. `None` for problems driven by an external objective.
    pub values: Option<Array2<f64>>,
}

impl BudgetProblem {
    pub fn total_weight(&self) -> f64 {
        self.group_weights.iter().sum()
    }

    /// `(min_k c_k, max_k c_k)`.
    pub fn cost_range(&self) -> (f64, f64) {
        let min = self.option_costs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = self
            .option_costs
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        (min, max)
    }

    pub fn validate(&self) -> Result<()> {
        validate_problem(self)
    }
}

/// Checks every [`BudgetProblem`] invariant; returns normally iff all hold.
pub fn validate_problem(problem: &BudgetProblem) -> Result<()> {
    if problem.num_groups == 0 || problem.num_options < 2 {
        return Err(RcoError::InvalidConfig(format!(
            "need N >= 1 groups and K >= 2 options, got N={}, K={}",
            problem.num_groups, problem.num_options
        )));
    }
    if problem.option_costs.len() != problem.num_options
        || problem.group_weights.len() != problem.num_groups
    {
        return Err(RcoError::InvalidConfig(
            "cost/weight vector lengths do not match N, K".into(),
        ));
    }
    for (index, &c) in problem.option_costs.iter().enumerate() {
        if !c.is_finite() {
            return Err(RcoError::NonFinite { field: "option_costs" });
        }
        if c <= 0.0 {
            return Err(RcoError::NonPositiveWeight { index, value: c });
        }
    }
    for (index, &w) in problem.group_weights.iter().enumerate() {
        if !w.is_finite() {
            return Err(RcoError::NonFinite { field: "group_weights" });
        }
        if w <= 0.0 {
            return Err(RcoError::NonPositiveWeight { index, value: w });
        }
    }
    if !problem.budget.is_finite() {
        return Err(RcoError::NonFinite { field: "budget" });
    }
    if let Some(values) = &problem.values {
        if values.dim() != (problem.num_groups, problem.num_options) {
            return Err(RcoError::InvalidConfig("values matrix shape mismatch".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RcoError::NonFinite { field: "values" });
        }
    }

    let (min_cost, max_cost) = problem.cost_range();
    if min_cost == max_cost {
        return Err(RcoError::DegenerateCosts(min_cost));
    }
    let per_weight = problem.budget / problem.total_weight();
    if !(per_weight > min_cost && per_weight < max_cost) {
        return Err(RcoError::InfeasibleBudget {
            budget: problem.budget,
            per_weight,
            min_cost,
            max_cost,
        });
    }
    Ok(())
}

/// One budget constraint: its own option costs, same group weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetConstraint {
    pub option_costs: Vec<f64>,
    pub budget: f64,
}

/// A set of `q >= 1` simultaneous budget constraints. Slack (inequality) mode
/// is only defined for a single constraint.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    pub constraints: Vec<BudgetConstraint>,
    pub slack_enabled: bool,
}

impl ConstraintSet {
    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    /// Validates each constraint's feasibility window against the weights.
    pub fn validate(&self, group_weights: &[f64]) -> Result<()> {
        if self.constraints.is_empty() {
            return Err(RcoError::InvalidConstraintSet("no constraints".into()));
        }
        if self.slack_enabled && self.constraints.len() > 1 {
            return Err(RcoError::InvalidConstraintSet(
                "slack mode requires exactly one constraint".into(),
            ));
        }
        for entry in &self.constraints {
            let single = BudgetProblem {
                num_groups: group_weights.len(),
                num_options: entry.option_costs.len(),
                option_costs: entry.option_costs.clone(),
                group_weights: group_weights.to_vec(),
                budget: entry.budget,
                values: None,
            };
            single.validate()?;
        }
        Ok(())
    }
}

/// One discrete option index per group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub choices: Vec<usize>,
}

impl Assignment {
    pub fn new(choices: Vec<usize>) -> Self {
        Self { choices }
    }
}

/// Total discrete cost `sum_i w_i * c_{z_i}`.
pub fn discrete_cost(assignment: &Assignment, problem: &BudgetProblem) -> f64 {
    assignment
        .choices
        .iter()
        .zip(&problem.group_weights)
        .map(|(&k, &w)| w * problem.option_costs[k])
        .sum()
}

/// Total discrete cost under an arbitrary cost vector (multi-constraint case).
pub fn discrete_cost_under(assignment: &Assignment, weights: &[f64], costs: &[f64]) -> f64 {
    assignment
        .choices
        .iter()
        .zip(weights)
        .map(|(&k, &w)| w * costs[k])
        .sum()
}

/// Total value `sum_i v[i][z_i]` of an assignment under a value matrix.
pub fn assignment_value(assignment: &Assignment, values: &Array2<f64>) -> f64 {
    assignment
        .choices
        .iter()
        .enumerate()
        .map(|(i, &k)| values[[i, k]])
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple(costs: Vec<f64>, weights: Vec<f64>, budget: f64) -> BudgetProblem {
        BudgetProblem {
            num_groups: weights.len(),
            num_options: costs.len(),
            option_costs: costs,
            group_weights: weights,
            budget,
            values: None,
        }
    }

    #[test]
    fn midpoint_budget_is_feasible() {
        let p = simple(vec![1.0, 2.0], vec![1.0], 1.5);
        assert!(validate_problem(&p).is_ok());
    }

    #[test]
    fn equal_costs_rejected() {
        let p = simple(vec![2.0, 2.0], vec![1.0], 2.0);
        assert!(matches!(
            validate_problem(&p),
            Err(RcoError::DegenerateCosts(_))
        ));
    }

    #[test]
    fn budget_above_max_rejected() {
        let p = simple(vec![1.0, 2.0], vec![1.0, 1.0], 4.5);
        assert!(matches!(
            validate_problem(&p),
            Err(RcoError::InfeasibleBudget { .. })
        ));
    }

    #[test]
    fn budget_at_window_edge_rejected() {
        // per-weight exactly max cost: level set is a single saturated limit
        let p = simple(vec![1.0, 2.0], vec![1.0, 1.0], 4.0);
        assert!(validate_problem(&p).is_err());
    }

    #[test]
    fn nonpositive_weight_rejected() {
        let p = simple(vec![1.0, 2.0], vec![1.0, 0.0], 2.5);
        assert!(matches!(
            validate_problem(&p),
            Err(RcoError::NonPositiveWeight { .. })
        ));
    }

    #[test]
    fn discrete_cost_two_terms() {
        let p = simple(vec![1.0, 3.0], vec![2.0, 1.0], 4.0);
        let z = Assignment::new(vec![0, 1]);
        assert_eq!(discrete_cost(&z, &p), 2.0 * 1.0 + 1.0 * 3.0);
    }

    #[test]
    fn slack_requires_single_constraint() {
        let cs = ConstraintSet {
            constraints: vec![
                BudgetConstraint {
                    option_costs: vec![1.0, 2.0],
                    budget: 1.5,
                },
                BudgetConstraint {
                    option_costs: vec![2.0, 1.0],
                    budget: 1.5,
                },
            ],
            slack_enabled: true,
        };
        assert!(cs.validate(&[1.0]).is_err());
    }
}
