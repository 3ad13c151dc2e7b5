//! Penalty-method baselines on the identical gradient and optimizer substrate.
//!
//! Both baselines consume the same objective gradients and the same Adam
//! update as the manifold loop, and differ only in how the budget enters:
//! a quadratic penalty `lambda (C - B)^2` (vanilla Lagrangian) or an
//! augmented Lagrangian `mu (C - B) + (rho / 2)(C - B)^2` with scheduled
//! multiplier updates. Neither projects, retracts, nor transports, so the
//! constraint is only ever satisfied approximately.

use ndarray::Array2;

use crate::error::Result;
use crate::knapsack::{greedy_repair, multi_greedy_repair};
use crate::manifold::{expected_cost_probs, normal_from_probs};
use crate::matrix::{frobenius_norm, softmax_rows, LogitMatrix};
use crate::optim::{adam_step, AdamState, RcoConfig, RunTrace, StepRecord};
use crate::problem::{
    assignment_value, Assignment, BudgetConstraint, BudgetProblem, ConstraintSet,
};
use crate::stochastic::{relaxed_gradient, Objective};

/// Which penalty formulation a baseline run uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyMethod {
    /// Fixed quadratic penalty coefficient.
    Lagrangian { lambda: f64 },
    /// Augmented Lagrangian with multiplier updates every
    /// [`AugmentedSchedule::steps_per_update`] steps.
    Augmented,
}

/// Augmented-Lagrangian schedule constants. The multiplier for each
/// constraint is updated every `steps_per_update` steps; the penalty weight
/// grows by `growth` whenever the violation fails to shrink by
/// `shrink_factor` between updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedSchedule {
    pub rho0: f64,
    pub growth: f64,
    pub shrink_factor: f64,
    pub steps_per_update: u64,
}

impl Default for AugmentedSchedule {
    fn default() -> Self {
        Self {
            rho0: 1.0,
            growth: 2.0,
            shrink_factor: 0.5,
            steps_per_update: 50,
        }
    }
}

/// Multiplier / penalty state for a baseline run (one entry per constraint).
#[derive(Debug, Clone)]
pub struct PenaltyState {
    pub mu: Vec<f64>,
    pub rho: f64,
    schedule: AugmentedSchedule,
    last_epoch_violation: Option<f64>,
}

impl PenaltyState {
    pub fn new(num_constraints: usize, schedule: AugmentedSchedule) -> Self {
        Self {
            mu: vec![0.0; num_constraints],
            rho: schedule.rho0,
            schedule,
            last_epoch_violation: None,
        }
    }

    /// Multiplier update `mu_j += rho * (C_j - b_j)`; grows `rho` when the
    /// worst violation did not shrink enough since the previous update.
    pub fn update(&mut self, violations: &[f64]) {
        for (mu, &v) in self.mu.iter_mut().zip(violations) {
            *mu += self.rho * v;
        }
        let worst = violations.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        if let Some(prev) = self.last_epoch_violation {
            if worst > self.schedule.shrink_factor * prev {
                self.rho *= self.schedule.growth;
            }
        }
        self.last_epoch_violation = Some(worst);
    }
}

/// Quadratic-penalty gradient: `objective_grad + 2 lambda (C - B) grad C`.
pub fn lagrangian_gradient(
    alpha: &LogitMatrix,
    problem: &BudgetProblem,
    objective_grad: &Array2<f64>,
    lambda: f64,
) -> Array2<f64> {
    let probs = softmax_rows(alpha);
    let cost = expected_cost_probs(&probs, &problem.group_weights, &problem.option_costs);
    let normal = normal_from_probs(&probs, &problem.group_weights, &problem.option_costs);
    objective_grad + &(2.0 * lambda * (cost - problem.budget) * &normal.entries)
}

/// Augmented-Lagrangian gradient `objective_grad + [mu + rho (C - B)] grad C`,
/// summed over constraints. Does not update the multipliers.
pub fn augmented_gradient(
    alpha: &LogitMatrix,
    weights: &[f64],
    constraints: &[BudgetConstraint],
    objective_grad: &Array2<f64>,
    state: &PenaltyState,
) -> Array2<f64> {
    let probs = softmax_rows(alpha);
    let mut out = objective_grad.clone();
    for (entry, &mu) in constraints.iter().zip(&state.mu) {
        let cost = expected_cost_probs(&probs, weights, &entry.option_costs);
        let normal = normal_from_probs(&probs, weights, &entry.option_costs);
        out.scaled_add(mu + state.rho * (cost - entry.budget), &normal.entries);
    }
    out
}

fn as_single_constraint(problem: &BudgetProblem) -> Vec<BudgetConstraint> {
    vec![BudgetConstraint {
        option_costs: problem.option_costs.clone(),
        budget: problem.budget,
    }]
}

/// Runs a penalty baseline with the shared Adam loop and trace schema.
/// No projection, no retraction, no transport; the retraction-iterations
/// column is identically zero. Pass `constraints` for the multi-budget
/// variant; otherwise the problem's own budget is the single constraint.
pub fn run_baseline(
    problem: &BudgetProblem,
    constraints: Option<&ConstraintSet>,
    objective: &dyn Objective,
    method: PenaltyMethod,
    config: &RcoConfig,
    alpha0: LogitMatrix,
) -> Result<(Assignment, RunTrace)> {
    problem.validate()?;
    let entries: Vec<BudgetConstraint> = match constraints {
        Some(set) => {
            set.validate(&problem.group_weights)?;
            set.constraints.clone()
        }
        None => as_single_constraint(problem),
    };
    let weights = &problem.group_weights;
    let schedule = config.schedule();

    let mut alpha = alpha0;
    let mut adam = AdamState::new(problem.num_groups, problem.num_options, config.adam);
    let mut penalty = PenaltyState::new(entries.len(), AugmentedSchedule::default());
    let mut records = Vec::with_capacity(config.steps as usize);

    for step in 1..=config.steps {
        let (obj_grad, loss, probs) = relaxed_gradient(&alpha, objective);
        let costs: Vec<f64> = entries
            .iter()
            .map(|e| expected_cost_probs(&probs, weights, &e.option_costs))
            .collect();
        let signed: Vec<f64> = costs
            .iter()
            .zip(&entries)
            .map(|(c, e)| c - e.budget)
            .collect();

        let grad = match method {
            PenaltyMethod::Lagrangian { lambda } => {
                let mut out = obj_grad;
                for (entry, &dev) in entries.iter().zip(&signed) {
                    let normal = normal_from_probs(&probs, weights, &entry.option_costs);
                    out.scaled_add(2.0 * lambda * dev, &normal.entries);
                }
                out
            }
            PenaltyMethod::Augmented => {
                let mut out = obj_grad;
                for ((entry, &dev), &mu) in entries.iter().zip(&signed).zip(&penalty.mu) {
                    let normal = normal_from_probs(&probs, weights, &entry.option_costs);
                    out.scaled_add(mu + penalty.rho * dev, &normal.entries);
                }
                out
            }
        };
        let grad_norm = frobenius_norm(&grad);
        adam_step(&mut alpha, &grad, &mut adam);

        if method == PenaltyMethod::Augmented && step % penalty.schedule.steps_per_update == 0 {
            let probs_now = softmax_rows(&alpha);
            let now: Vec<f64> = entries
                .iter()
                .map(|e| expected_cost_probs(&probs_now, weights, &e.option_costs) - e.budget)
                .collect();
            penalty.update(&now);
        }

        // record at the post-step iterate, mirroring the manifold loop
        let probs_new = softmax_rows(&alpha);
        let per_constraint: Vec<f64> = entries
            .iter()
            .map(|e| {
                (expected_cost_probs(&probs_new, weights, &e.option_costs) - e.budget).abs()
            })
            .collect();
        let violation = per_constraint.iter().cloned().fold(0.0, f64::max);
        let repaired_value = match (&problem.values, constraints) {
            (Some(values), None) => {
                Some(assignment_value(&greedy_repair(&probs_new, problem)?, values))
            }
            _ => None,
        };
        records.push(StepRecord {
            step,
            loss,
            expected_cost: costs[0],
            violation,
            retraction_iters: 0,
            grad_norm,
            temperature: schedule.at(step),
            slack: None,
            repaired_value,
            per_constraint_violation: if entries.len() > 1 {
                Some(per_constraint)
            } else {
                None
            },
        });
    }

    let probs = softmax_rows(&alpha);
    let assignment = match constraints {
        Some(set) => multi_greedy_repair(&probs, weights, set)?,
        None => greedy_repair(&probs, problem)?,
    };
    Ok((
        assignment,
        RunTrace {
            seed: config.seed,
            records,
        },
    ))
}

/// The documented tuning grid for the vanilla-Lagrangian penalty weight.
pub const LAMBDA_GRID: [f64; 5] = [0.1, 1.0, 10.0, 100.0, 1000.0];

/// Violation ceiling for a grid point to count as feasible during tuning.
pub const LAMBDA_TUNE_MAX_VIOLATION: f64 = 0.5;

/// Outcome of one tuning grid point.
#[derive(Debug, Clone, Copy)]
pub struct LambdaTrial {
    pub lambda: f64,
    pub final_gap_pct: f64,
    pub mean_violation: f64,
}

/// Grid-tunes the penalty weight on one (held-out) instance: runs each
/// lambda in [`LAMBDA_GRID`], and picks the lowest final gap among trials
/// with mean violation below [`LAMBDA_TUNE_MAX_VIOLATION`] (falling back to
/// the smallest violation if none qualify).
pub fn tune_lambda(
    problem: &BudgetProblem,
    objective: &dyn Objective,
    config: &RcoConfig,
    oracle_value: f64,
) -> Result<(f64, Vec<LambdaTrial>)> {
    let values = problem
        .values
        .as_ref()
        .expect("lambda tuning needs a value matrix");
    let mut trials = Vec::new();
    for &lambda in &LAMBDA_GRID {
        let (assignment, trace) = run_baseline(
            problem,
            None,
            objective,
            PenaltyMethod::Lagrangian { lambda },
            config,
            LogitMatrix::zeros(problem.num_groups, problem.num_options),
        )?;
        let value = assignment_value(&assignment, values);
        let final_gap_pct = 100.0 * (oracle_value - value) / oracle_value;
        let mean_violation = trace.records.iter().map(|r| r.violation).sum::<f64>()
            / trace.records.len().max(1) as f64;
        trials.push(LambdaTrial {
            lambda,
            final_gap_pct,
            mean_violation,
        });
    }
    let best = trials
        .iter()
        .filter(|t| t.mean_violation <= LAMBDA_TUNE_MAX_VIOLATION)
        .min_by(|a, b| a.final_gap_pct.total_cmp(&b.final_gap_pct))
        .or_else(|| {
            trials
                .iter()
                .min_by(|a, b| a.mean_violation.total_cmp(&b.mean_violation))
        })
        .expect("grid is non-empty");
    Ok((best.lambda, trials))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{constraint_normal, retract_binary};
    use crate::stochastic::ValueObjective;
    use ndarray::array;

    fn problem() -> BudgetProblem {
        BudgetProblem {
            num_groups: 2,
            num_options: 2,
            option_costs: vec![1.0, 2.0],
            group_weights: vec![1.0, 1.0],
            budget: 3.0,
            values: Some(array![[1.0, 5.0], [2.0, 4.0]]),
        }
    }

    #[test]
    fn zero_lambda_returns_objective_gradient() {
        let p = problem();
        let alpha = LogitMatrix(array![[0.3, -0.2], [0.1, 0.4]]);
        let g = array![[1.0, 2.0], [3.0, 4.0]];
        let out = lagrangian_gradient(&alpha, &p, &g, 0.0);
        assert_eq!(out, g);
    }

    #[test]
    fn penalty_vanishes_on_the_manifold() {
        let p = problem();
        let (alpha, _) = retract_binary(&LogitMatrix::zeros(2, 2), &p, 1e-13, 50.0).unwrap();
        let g = array![[1.0, 2.0], [3.0, 4.0]];
        let out = lagrangian_gradient(&alpha, &p, &g, 10.0);
        for (a, b) in out.iter().zip(g.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn augmented_matches_lagrangian_before_first_update() {
        // with mu = 0 the augmented gradient is the quadratic penalty with
        // lambda = rho / 2
        let p = problem();
        let alpha = LogitMatrix(array![[0.3, -0.2], [0.1, 0.4]]);
        let g = array![[1.0, 2.0], [3.0, 4.0]];
        let state = PenaltyState::new(1, AugmentedSchedule::default());
        let aug = augmented_gradient(&alpha, &p.group_weights, &as_single_constraint(&p), &g, &state);
        let lag = lagrangian_gradient(&alpha, &p, &g, state.rho / 2.0);
        for (a, b) in aug.iter().zip(lag.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn augmented_on_manifold_with_zero_mu_is_plain_gradient() {
        let p = problem();
        let (alpha, _) = retract_binary(&LogitMatrix::zeros(2, 2), &p, 1e-13, 50.0).unwrap();
        let g = array![[1.0, 2.0], [3.0, 4.0]];
        let state = PenaltyState::new(1, AugmentedSchedule::default());
        let out = augmented_gradient(&alpha, &p.group_weights, &as_single_constraint(&p), &g, &state);
        for (a, b) in out.iter().zip(g.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn baseline_never_retracts() {
        let p = problem();
        let objective = ValueObjective::new(p.values.clone().unwrap());
        let config = RcoConfig {
            steps: 25,
            ..RcoConfig::default()
        };
        let (_, trace) = run_baseline(
            &p,
            None,
            &objective,
            PenaltyMethod::Lagrangian { lambda: 10.0 },
            &config,
            LogitMatrix::zeros(2, 2),
        )
        .unwrap();
        assert!(trace.records.iter().all(|r| r.retraction_iters == 0));
    }

    #[test]
    fn huge_lambda_is_dominated_by_the_constraint_gradient() {
        let p = problem();
        let objective = ValueObjective::new(p.values.clone().unwrap());
        // an off-manifold point: the penalty term with lambda = 1e6 should
        // dwarf the objective gradient
        let alpha = LogitMatrix(array![[0.4, 0.8], [-0.3, 0.6]]);
        let (obj_grad, _, _) = relaxed_gradient(&alpha, &objective);
        let total = lagrangian_gradient(&alpha, &p, &obj_grad, 1e6);
        let constraint_part = &total - &obj_grad;
        let n = constraint_normal(&alpha, &p);
        assert!(n.norm_sq > 0.0);
        assert!(frobenius_norm(&constraint_part) >= 10.0 * frobenius_norm(&obj_grad));
    }

    #[test]
    fn multiplier_updates_are_bounded_on_easy_instance() {
        let p = problem();
        let objective = ValueObjective::new(p.values.clone().unwrap());
        let config = RcoConfig {
            steps: 500,
            ..RcoConfig::default()
        };
        let (_, trace) = run_baseline(
            &p,
            None,
            &objective,
            PenaltyMethod::Augmented,
            &config,
            LogitMatrix::zeros(2, 2),
        )
        .unwrap();
        assert!(trace.records.iter().all(|r| r.loss.is_finite()));
        assert!(trace
            .records
            .iter()
            .all(|r| r.violation.is_finite() && r.violation < 10.0));
    }
}
