//! Gumbel perturbation, temperature annealing, and straight-through
//! gradient assembly.
//!
//! Each stochastic forward pass perturbs the logits with Gumbel(0,1) noise,
//! scales by temperature, solves the budget-constrained assignment on the
//! perturbed logits, and evaluates the objective at that hard assignment
//! while letting gradients flow through the softmax of the same perturbed
//! logits. Averaging over several independent samples per step reduces
//! gradient variance.
//!
//! The crate performs no automatic differentiation: an [`Objective`] returns
//! the loss together with its gradient with respect to the probability
//! matrix, and this module chains that gradient through the softmax Jacobian
//! (and the `1/tau` scaling) analytically.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::Result;
use crate::knapsack::{dp_solve, IntegerCostGrid};
use crate::matrix::{softmax_rows, LogitMatrix, ProbMatrix};
use crate::problem::Assignment;
use crate::rng::RngStream;

/// Exponential temperature annealing from `tau_start` down to `tau_min`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureSchedule {
    pub tau_start: f64,
    pub tau_min: f64,
    pub total_steps: u64,
}

impl TemperatureSchedule {
    pub fn new(tau_start: f64, tau_min: f64, total_steps: u64) -> Self {
        assert!(
            tau_min > 0.0 && tau_min <= tau_start,
            "need 0 < tau_min <= tau_start"
        );
        Self {
            tau_start,
            tau_min,
            total_steps: total_steps.max(1),
        }
    }

    /// `max(tau_min, tau_start * (tau_min / tau_start)^(t / T))`;
    /// non-increasing in `t`, equal to `tau_start` at 0 and `tau_min` at `T`.
    pub fn at(&self, step: u64) -> f64 {
        let frac = step as f64 / self.total_steps as f64;
        let tau = self.tau_start * (self.tau_min / self.tau_start).powf(frac);
        tau.max(self.tau_min)
    }
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        Self::new(1.0, 0.01, 1)
    }
}

/// Loss value and its gradient with respect to the probability matrix.
#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub loss: f64,
    pub grad_probs: Array2<f64>,
}

/// The library's extension point: a differentiable objective over assignment
/// probabilities. Implementations must be deterministic given their inputs
/// and return finite gradients.
pub trait Objective: Sync {
    /// Forward loss at a hard assignment, with the backward pass taken
    /// through the soft probabilities at the same (perturbed) logits.
    fn eval_hard(&self, assignment: &Assignment, soft: &ProbMatrix) -> ObjectiveEval;

    /// Loss and gradient of the smooth relaxation evaluated directly at `p`.
    fn eval_relaxed(&self, probs: &ProbMatrix) -> ObjectiveEval;
}

/// Benchmark objective: maximize total expected value, i.e. minimize
/// `-sum_{ik} p_{ik} v_{ik}`. The gradient with respect to `p` is `-v` in
/// both modes; the hard forward value is the value of the assignment itself.
#[derive(Debug, Clone)]
pub struct ValueObjective {
    values: Array2<f64>,
}

impl ValueObjective {
    pub fn new(values: Array2<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

impl Objective for ValueObjective {
    fn eval_hard(&self, assignment: &Assignment, _soft: &ProbMatrix) -> ObjectiveEval {
        let loss = -assignment
            .choices
            .iter()
            .enumerate()
            .map(|(i, &k)| self.values[[i, k]])
            .sum::<f64>();
        ObjectiveEval {
            loss,
            grad_probs: -&self.values,
        }
    }

    fn eval_relaxed(&self, probs: &ProbMatrix) -> ObjectiveEval {
        let loss = -probs
            .entries()
            .iter()
            .zip(self.values.iter())
            .map(|(p, v)| p * v)
            .sum::<f64>();
        ObjectiveEval {
            loss,
            grad_probs: -&self.values,
        }
    }
}

/// Uniform draws are clamped away from 0 and 1 so the double log stays finite.
pub const GUMBEL_UNIFORM_CLAMP: f64 = 1e-12;

/// `G = -log(-log(u))` with `u` clamped to `[1e-12, 1 - 1e-12]`.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(GUMBEL_UNIFORM_CLAMP, 1.0 - GUMBEL_UNIFORM_CLAMP);
    -(-u.ln()).ln()
}

/// An `N x K` matrix of independent Gumbel(0,1) draws, in row-major order.
pub fn sample_gumbel(num_groups: usize, num_options: usize, rng: &mut RngStream) -> Array2<f64> {
    Array2::from_shape_fn((num_groups, num_options), |_| {
        gumbel_from_uniform(rng.uniform())
    })
}

/// Perturbed logits `(alpha + noise) / tau`.
pub fn perturb(alpha: &LogitMatrix, noise: &Array2<f64>, tau: f64) -> LogitMatrix {
    assert!(tau > 0.0, "temperature must be positive");
    LogitMatrix((&alpha.0 + noise) / tau)
}

/// Chains a gradient w.r.t. probabilities through the row-wise softmax
/// Jacobian at `probs`:
/// `out_{ik} = p_{ik} (g_{ik} - sum_j g_{ij} p_{ij})`.
/// Row-constant gradient components are annihilated.
pub fn chain_softmax(grad_probs: &Array2<f64>, probs: &ProbMatrix) -> Array2<f64> {
    let (n, k) = grad_probs.dim();
    let mut out = Array2::zeros((n, k));
    for i in 0..n {
        let g = grad_probs.row(i);
        let p = probs.entries().row(i);
        let dot: f64 = g.iter().zip(p.iter()).map(|(a, b)| a * b).sum();
        for j in 0..k {
            out[[i, j]] = p[j] * (g[j] - dot);
        }
    }
    out
}

/// Straight-through gradient with respect to the unperturbed logits,
/// averaged over `samples` Gumbel draws.
#[derive(Debug, Clone)]
pub struct SteGradient {
    pub entries: Array2<f64>,
    pub samples: u32,
}

/// One stochastic sample: perturb, solve the constrained assignment on the
/// perturbed logits, evaluate the objective at the hard assignment, and
/// chain the probability gradient through the softmax Jacobian and the
/// `1/tau` scaling. Returns the per-sample logit gradient and loss.
pub fn ste_gradient_sample(
    alpha: &LogitMatrix,
    objective: &dyn Objective,
    grid: &IntegerCostGrid,
    tau: f64,
    rng: &mut RngStream,
) -> Result<(Array2<f64>, f64)> {
    let noise = sample_gumbel(alpha.num_groups(), alpha.num_options(), rng);
    let perturbed = perturb(alpha, &noise, tau);
    let solution = dp_solve(&perturbed.0, grid)?;
    let soft = softmax_rows(&perturbed);
    let eval = objective.eval_hard(&solution.assignment, &soft);
    let grad = chain_softmax(&eval.grad_probs, &soft) / tau;
    Ok((grad, eval.loss))
}

/// Straight-through gradient averaged over `samples` independent Gumbel
/// draws. Sample `j` uses the child stream `rng.substream(j)`, and samples
/// accumulate in index order for bit-reproducibility. Returns the averaged
/// gradient and the mean loss.
pub fn ste_gradient(
    alpha: &LogitMatrix,
    objective: &dyn Objective,
    grid: &IntegerCostGrid,
    tau: f64,
    samples: u32,
    rng: &RngStream,
) -> Result<(SteGradient, f64)> {
    assert!(samples >= 1, "need at least one Gumbel sample");
    let mut acc = Array2::zeros((alpha.num_groups(), alpha.num_options()));
    let mut loss_acc = 0.0;
    for j in 0..samples {
        let mut child = rng.substream(j as u64);
        let (grad, loss) = ste_gradient_sample(alpha, objective, grid, tau, &mut child)?;
        acc += &grad;
        loss_acc += loss;
    }
    let scale = 1.0 / samples as f64;
    Ok((
        SteGradient {
            entries: acc * scale,
            samples,
        },
        loss_acc * scale,
    ))
}

/// Parallel variant: samples run concurrently on the rayon pool and
/// accumulate unordered, so results are reproducible only in distribution.
pub fn ste_gradient_parallel(
    alpha: &LogitMatrix,
    objective: &dyn Objective,
    grid: &IntegerCostGrid,
    tau: f64,
    samples: u32,
    rng: &RngStream,
) -> Result<(SteGradient, f64)> {
    assert!(samples >= 1, "need at least one Gumbel sample");
    let results: Result<Vec<_>> = (0..samples)
        .into_par_iter()
        .map(|j| {
            let mut child = rng.substream(j as u64);
            ste_gradient_sample(alpha, objective, grid, tau, &mut child)
        })
        .collect();
    let results = results?;
    let mut acc = Array2::zeros((alpha.num_groups(), alpha.num_options()));
    let mut loss_acc = 0.0;
    for (grad, loss) in results {
        acc += &grad;
        loss_acc += loss;
    }
    let scale = 1.0 / samples as f64;
    Ok((
        SteGradient {
            entries: acc * scale,
            samples,
        },
        loss_acc * scale,
    ))
}

/// Analytic gradient of the relaxed objective at `alpha`: the probability
/// gradient chained through the softmax Jacobian (no temperature).
pub fn relaxed_gradient(
    alpha: &LogitMatrix,
    objective: &dyn Objective,
) -> (Array2<f64>, f64, ProbMatrix) {
    let probs = softmax_rows(alpha);
    let eval = objective.eval_relaxed(&probs);
    let grad = chain_softmax(&eval.grad_probs, &probs);
    (grad, eval.loss, probs)
}
