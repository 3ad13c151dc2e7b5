//! The constrained optimization loop.
//!
//! One step wraps four geometric operations around a standard Adam update:
//! estimate the loss gradient (stochastic straight-through or analytic
//! relaxed), project it onto the tangent plane of the budget manifold, take
//! the Adam step, retract the iterate back onto the manifold, and re-project
//! (transport) the first moment onto the new tangent plane. The projection
//! happens *before* Adam so the momentum accumulates budget-preserving
//! directions; the second moment is per-coordinate magnitude and is never
//! transported.
//!
//! Slack mode optimizes on the augmented manifold `C(alpha) + s^2 = B`
//! (inequality budgets); multi mode enforces several equality budgets with
//! stacked-normal projection and Newton retraction.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{RcoError, Result};
use crate::knapsack::{
    auto_quantize, extract_final, greedy_repair, multi_greedy_repair, IntegerCostGrid,
};
use crate::manifold::{
    expected_cost_probs, multi_costs, multi_normals, multi_project, multi_retract_newton,
    normal_from_probs, retract_binary, slack_project, slack_project_aug, slack_retract, transport,
    Normal, SlackState,
};
use crate::matrix::{frobenius_norm, softmax_rows, LogitMatrix, ProbMatrix};
use crate::problem::{assignment_value, Assignment, BudgetProblem, ConstraintSet};
use crate::rng::RngStream;
use crate::stochastic::{
    relaxed_gradient, ste_gradient, ste_gradient_parallel, Objective, TemperatureSchedule,
};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lr: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            lr: 0.01,
        }
    }
}

/// Adam moments plus step counter. `slack_m` / `slack_v` are the scalar
/// moment slots for the slack coordinate; unused in equality mode.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Array2<f64>,
    pub v: Array2<f64>,
    pub step: u64,
    pub params: AdamParams,
    pub slack_m: f64,
    pub slack_v: f64,
}

impl AdamState {
    pub fn new(num_groups: usize, num_options: usize, params: AdamParams) -> Self {
        Self {
            m: Array2::zeros((num_groups, num_options)),
            v: Array2::zeros((num_groups, num_options)),
            step: 0,
            params,
            slack_m: 0.0,
            slack_v: 0.0,
        }
    }

    fn bias_corrections(&self) -> (f64, f64) {
        let t = self.step as i32;
        (
            1.0 - self.params.beta1.powi(t),
            1.0 - self.params.beta2.powi(t),
        )
    }

    fn update_matrix(&mut self, alpha: &mut LogitMatrix, grad: &Array2<f64>) {
        let p = self.params;
        let (bc1, bc2) = self.bias_corrections();
        ndarray::Zip::from(&mut alpha.0)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(grad)
            .for_each(|a, m, v, &g| {
                *m = p.beta1 * *m + (1.0 - p.beta1) * g;
                *v = p.beta2 * *v + (1.0 - p.beta2) * g * g;
                *a -= p.lr * (*m / bc1) / ((*v / bc2).sqrt() + p.epsilon);
            });
    }
}

/// Standard Adam step with bias correction; mutates `alpha` and the state.
pub fn adam_step(alpha: &mut LogitMatrix, grad: &Array2<f64>, state: &mut AdamState) {
    state.step += 1;
    state.update_matrix(alpha, grad);
}

/// Joint Adam step over `(alpha, s)` for slack mode; one shared step counter.
pub fn adam_step_slack(
    alpha: &mut LogitMatrix,
    s: &mut f64,
    grad_alpha: &Array2<f64>,
    grad_s: f64,
    state: &mut AdamState,
) {
    state.step += 1;
    state.update_matrix(alpha, grad_alpha);
    let p = state.params;
    let (bc1, bc2) = state.bias_corrections();
    state.slack_m = p.beta1 * state.slack_m + (1.0 - p.beta1) * grad_s;
    state.slack_v = p.beta2 * state.slack_v + (1.0 - p.beta2) * grad_s * grad_s;
    *s -= p.lr * (state.slack_m / bc1) / ((state.slack_v / bc2).sqrt() + p.epsilon);
}

/// How the loss gradient is estimated each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientMode {
    /// Analytic gradient of the softmax-relaxed objective.
    Relaxed,
    /// Gumbel straight-through estimate averaged over samples.
    Ste,
}

/// How the final discrete assignment is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Extraction {
    /// Per-group argmax repaired to feasibility (benchmark comparison metric).
    GreedyRepair,
    /// Budget-constrained DP on the log-probabilities.
    DpLogProb,
}

/// Full run configuration. `steps = 0` is allowed and returns the extraction
/// of the initialized logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcoConfig {
    pub steps: u64,
    pub gumbel_samples: u32,
    pub tau_start: f64,
    pub tau_min: f64,
    pub adam: AdamParams,
    pub retraction_tol: f64,
    pub bracket: f64,
    pub grad: GradientMode,
    pub extraction: Extraction,
    pub seed: u64,
    /// Opt-in unordered parallel accumulation of Gumbel samples.
    pub parallel_samples: bool,
    /// Quantization scale for non-integral costs (integral instances use 1).
    pub quant_scale: f64,
    pub newton_max_iters: u32,
}

impl Default for RcoConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            gumbel_samples: 4,
            tau_start: 1.0,
            tau_min: 0.01,
            adam: AdamParams::default(),
            retraction_tol: 1e-8,
            bracket: 50.0,
            grad: GradientMode::Relaxed,
            extraction: Extraction::GreedyRepair,
            seed: 0,
            parallel_samples: false,
            quant_scale: 1000.0,
            newton_max_iters: 20,
        }
    }
}

impl RcoConfig {
    pub fn schedule(&self) -> TemperatureSchedule {
        TemperatureSchedule::new(self.tau_start, self.tau_min, self.steps.max(1))
    }
}

/// One line of the run trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub expected_cost: f64,
    /// Absolute residual of the enforced constraint at record time (for
    /// slack mode this is `|C + s^2 - B|`; for multi mode the maximum over
    /// constraints).
    pub violation: f64,
    pub retraction_iters: u32,
    pub grad_norm: f64,
    pub temperature: f64,
    pub slack: Option<f64>,
    /// Value of the greedy-repaired discrete assignment, when the problem
    /// carries a value matrix.
    pub repaired_value: Option<f64>,
    pub per_constraint_violation: Option<Vec<f64>>,
}

/// Per-step records for one optimizer run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub seed: u64,
    pub records: Vec<StepRecord>,
}

/// One application of the binary-search retraction; projects arbitrary
/// initial logits (heuristic scores, uniform zeros) onto the manifold.
pub fn initialize_on_manifold(
    alpha0: &LogitMatrix,
    problem: &BudgetProblem,
    tol: f64,
    bracket: f64,
) -> Result<LogitMatrix> {
    let (alpha, _) = retract_binary(alpha0, problem, tol, bracket)?;
    Ok(alpha)
}

fn repaired_value_of(probs: &ProbMatrix, problem: &BudgetProblem) -> Result<Option<f64>> {
    match &problem.values {
        Some(values) => {
            let repaired = greedy_repair(probs, problem)?;
            Ok(Some(assignment_value(&repaired, values)))
        }
        None => Ok(None),
    }
}

/// Driver for the single-constraint loop (equality or slack). Owns the
/// iterate, the Adam state, and the random stream; `step` advances one
/// iteration and returns its trace record.
pub struct RcoRun<'a> {
    problem: &'a BudgetProblem,
    config: RcoConfig,
    schedule: TemperatureSchedule,
    pub alpha: LogitMatrix,
    pub adam: AdamState,
    pub slack: Option<SlackState>,
    rng: RngStream,
    grid: Option<IntegerCostGrid>,
    step: u64,
}

impl<'a> RcoRun<'a> {
    pub fn new(
        problem: &'a BudgetProblem,
        config: RcoConfig,
        alpha0: LogitMatrix,
        slack_mode: bool,
    ) -> Result<Self> {
        problem.validate()?;
        let (alpha, slack) = if slack_mode {
            let (alpha, slack, _) =
                slack_retract(&alpha0, problem, config.retraction_tol, config.bracket)?;
            (alpha, Some(slack))
        } else {
            (
                initialize_on_manifold(&alpha0, problem, config.retraction_tol, config.bracket)?,
                None,
            )
        };
        let grid = if config.grad == GradientMode::Ste
            || config.extraction == Extraction::DpLogProb
        {
            Some(auto_quantize(problem, config.quant_scale)?)
        } else {
            None
        };
        let adam = AdamState::new(problem.num_groups, problem.num_options, config.adam);
        let rng = RngStream::new(config.seed);
        Ok(Self {
            schedule: config.schedule(),
            problem,
            config,
            alpha,
            adam,
            slack,
            rng,
            grid,
            step: 0,
        })
    }

    /// Normal at the current iterate (exposed for geometry tests).
    pub fn current_normal(&self) -> Normal {
        let probs = softmax_rows(&self.alpha);
        normal_from_probs(
            &probs,
            &self.problem.group_weights,
            &self.problem.option_costs,
        )
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    fn estimate_gradient(&mut self, objective: &dyn Objective) -> Result<(Array2<f64>, f64)> {
        match self.config.grad {
            GradientMode::Relaxed => {
                let (grad, loss, _) = relaxed_gradient(&self.alpha, objective);
                Ok((grad, loss))
            }
            GradientMode::Ste => {
                let grid = self.grid.as_ref().expect("grid built for STE mode");
                let base = self.rng.substream(self.step);
                let tau = self.schedule.at(self.step + 1);
                let (g, loss) = if self.config.parallel_samples {
                    ste_gradient_parallel(
                        &self.alpha,
                        objective,
                        grid,
                        tau,
                        self.config.gumbel_samples,
                        &base,
                    )?
                } else {
                    ste_gradient(
                        &self.alpha,
                        objective,
                        grid,
                        tau,
                        self.config.gumbel_samples,
                        &base,
                    )?
                };
                Ok((g.entries, loss))
            }
        }
    }

    /// One full iteration: gradient, projection, Adam, retraction, transport.
    pub fn step(&mut self, objective: &dyn Objective) -> Result<StepRecord> {
        let (grad, loss) = self.estimate_gradient(objective)?;
        self.step_with_gradient(&grad, loss)
    }

    /// Advances the iterate with an externally supplied gradient (test hook;
    /// also the tail of [`RcoRun::step`]).
    pub fn step_with_gradient(&mut self, grad: &Array2<f64>, loss: f64) -> Result<StepRecord> {
        let problem = self.problem;
        let probs = softmax_rows(&self.alpha);
        let normal = normal_from_probs(&probs, &problem.group_weights, &problem.option_costs);

        let record = match self.slack {
            None => {
                let g_tan = crate::manifold::tangent_project(grad, &normal)?;
                let grad_norm = frobenius_norm(&g_tan);
                adam_step(&mut self.alpha, &g_tan, &mut self.adam);
                let (alpha, report) = retract_binary(
                    &self.alpha,
                    problem,
                    self.config.retraction_tol,
                    self.config.bracket,
                )?;
                self.alpha = alpha;
                let probs_new = softmax_rows(&self.alpha);
                let normal_new = normal_from_probs(
                    &probs_new,
                    &problem.group_weights,
                    &problem.option_costs,
                );
                self.adam.m = transport(&self.adam.m, &normal_new)?;
                let cost = expected_cost_probs(
                    &probs_new,
                    &problem.group_weights,
                    &problem.option_costs,
                );
                StepRecord {
                    step: self.step + 1,
                    loss,
                    expected_cost: cost,
                    violation: (cost - problem.budget).abs(),
                    retraction_iters: report.iterations,
                    grad_norm,
                    temperature: self.schedule.at(self.step + 1),
                    slack: None,
                    repaired_value: repaired_value_of(&probs_new, problem)?,
                    per_constraint_violation: None,
                }
            }
            Some(slack) => {
                let mut s = slack.s;
                let (g_alpha, g_s) = slack_project(grad, &normal, s);
                let grad_norm = (frobenius_norm(&g_alpha).powi(2) + g_s * g_s).sqrt();
                adam_step_slack(&mut self.alpha, &mut s, &g_alpha, g_s, &mut self.adam);
                let (alpha, slack_new, report) = slack_retract(
                    &self.alpha,
                    problem,
                    self.config.retraction_tol,
                    self.config.bracket,
                )?;
                self.alpha = alpha;
                self.slack = Some(slack_new);
                let probs_new = softmax_rows(&self.alpha);
                let normal_new = normal_from_probs(
                    &probs_new,
                    &problem.group_weights,
                    &problem.option_costs,
                );
                let (m_alpha, m_s) = slack_project_aug(
                    &self.adam.m,
                    self.adam.slack_m,
                    &normal_new,
                    slack_new.s,
                );
                self.adam.m = m_alpha;
                self.adam.slack_m = m_s;
                let cost = expected_cost_probs(
                    &probs_new,
                    &problem.group_weights,
                    &problem.option_costs,
                );
                let augmented = cost + slack_new.s * slack_new.s;
                StepRecord {
                    step: self.step + 1,
                    loss,
                    expected_cost: cost,
                    violation: (augmented - problem.budget).abs(),
                    retraction_iters: report.iterations,
                    grad_norm,
                    temperature: self.schedule.at(self.step + 1),
                    slack: Some(slack_new.s),
                    repaired_value: repaired_value_of(&probs_new, problem)?,
                    per_constraint_violation: None,
                }
            }
        };
        self.step += 1;
        Ok(record)
    }

    /// Final discrete assignment per the configured extraction rule.
    pub fn extract(&self) -> Result<Assignment> {
        let probs = softmax_rows(&self.alpha);
        match self.config.extraction {
            Extraction::GreedyRepair => greedy_repair(&probs, self.problem),
            Extraction::DpLogProb => {
                let grid = match &self.grid {
                    Some(g) => g.clone(),
                    None => auto_quantize(self.problem, self.config.quant_scale)?,
                };
                Ok(extract_final(&probs, self.problem, &grid)?.assignment)
            }
        }
    }

    fn drive(mut self, objective: &dyn Objective) -> Result<(Assignment, RunTrace)> {
        let steps = self.config.steps;
        let mut records = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            records.push(self.step(objective)?);
        }
        let assignment = self.extract()?;
        Ok((
            assignment,
            RunTrace {
                seed: self.config.seed,
                records,
            },
        ))
    }
}

/// The complete equality-constrained loop: initialization by retraction,
/// `T` steps, final discrete extraction.
pub fn run_rco(
    problem: &BudgetProblem,
    objective: &dyn Objective,
    config: &RcoConfig,
    alpha0: LogitMatrix,
) -> Result<(Assignment, RunTrace)> {
    RcoRun::new(problem, config.clone(), alpha0, false)?.drive(objective)
}

/// Inequality-budget variant on the slack-augmented manifold.
pub fn run_rco_slack(
    problem: &BudgetProblem,
    objective: &dyn Objective,
    config: &RcoConfig,
    alpha0: LogitMatrix,
) -> Result<(Assignment, RunTrace)> {
    RcoRun::new(problem, config.clone(), alpha0, true)?.drive(objective)
}

/// Driver for `q` simultaneous equality constraints.
pub struct MultiRcoRun<'a> {
    problem: &'a BudgetProblem,
    constraints: &'a ConstraintSet,
    config: RcoConfig,
    schedule: TemperatureSchedule,
    pub alpha: LogitMatrix,
    pub adam: AdamState,
    step: u64,
}

impl<'a> MultiRcoRun<'a> {
    pub fn new(
        problem: &'a BudgetProblem,
        constraints: &'a ConstraintSet,
        config: RcoConfig,
        alpha0: LogitMatrix,
    ) -> Result<Self> {
        constraints.validate(&problem.group_weights)?;
        if config.grad == GradientMode::Ste {
            return Err(RcoError::InvalidConfig(
                "stochastic gradients are not supported with multiple constraints".into(),
            ));
        }
        let (alpha, _) = multi_retract_newton(
            &alpha0,
            constraints,
            &problem.group_weights,
            config.retraction_tol,
            config.newton_max_iters,
        )?;
        let adam = AdamState::new(problem.num_groups, problem.num_options, config.adam);
        Ok(Self {
            schedule: config.schedule(),
            problem,
            constraints,
            config,
            alpha,
            adam,
            step: 0,
        })
    }

    pub fn current_normals(&self) -> Vec<Normal> {
        multi_normals(&self.alpha, self.constraints, &self.problem.group_weights)
    }

    pub fn step(&mut self, objective: &dyn Objective) -> Result<StepRecord> {
        let weights = &self.problem.group_weights;
        let (grad, loss, probs) = relaxed_gradient(&self.alpha, objective);
        let normals: Vec<Normal> = self
            .constraints
            .constraints
            .iter()
            .map(|entry| normal_from_probs(&probs, weights, &entry.option_costs))
            .collect();
        let g_tan = multi_project(&grad, &normals)?;
        let grad_norm = frobenius_norm(&g_tan);
        adam_step(&mut self.alpha, &g_tan, &mut self.adam);
        let (alpha, iters) = multi_retract_newton(
            &self.alpha,
            self.constraints,
            weights,
            self.config.retraction_tol,
            self.config.newton_max_iters,
        )?;
        self.alpha = alpha;
        let normals_new = multi_normals(&self.alpha, self.constraints, weights);
        self.adam.m = multi_project(&self.adam.m, &normals_new)?;

        let costs = multi_costs(&self.alpha, self.constraints, weights);
        let per_constraint: Vec<f64> = costs
            .iter()
            .zip(&self.constraints.constraints)
            .map(|(c, entry)| (c - entry.budget).abs())
            .collect();
        let violation = per_constraint.iter().cloned().fold(0.0, f64::max);
        self.step += 1;
        Ok(StepRecord {
            step: self.step,
            loss,
            expected_cost: costs[0],
            violation,
            retraction_iters: iters,
            grad_norm,
            temperature: self.schedule.at(self.step),
            slack: None,
            repaired_value: None,
            per_constraint_violation: Some(per_constraint),
        })
    }

    /// Discrete assignment feasible for every constraint.
    pub fn extract(&self) -> Result<Assignment> {
        let probs = softmax_rows(&self.alpha);
        multi_greedy_repair(&probs, &self.problem.group_weights, self.constraints)
    }
}

/// The multi-constraint loop: Newton initialization, `T` steps, extraction
/// repaired against all constraints.
pub fn run_rco_multi(
    problem: &BudgetProblem,
    constraints: &ConstraintSet,
    objective: &dyn Objective,
    config: &RcoConfig,
    alpha0: LogitMatrix,
) -> Result<(Assignment, RunTrace)> {
    let mut run = MultiRcoRun::new(problem, constraints, config.clone(), alpha0)?;
    let mut records = Vec::with_capacity(config.steps as usize);
    for _ in 0..config.steps {
        records.push(run.step(objective)?);
    }
    let assignment = run.extract()?;
    Ok((
        assignment,
        RunTrace {
            seed: config.seed,
            records,
        },
    ))
}
