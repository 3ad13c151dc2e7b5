//! Budget-constrained discrete assignment by Riemannian constrained
//! optimization.
//!
//! Assign one of `K` options to each of `N` groups under a total cost
//! budget. Under softmax relaxation the budget constraint is a smooth
//! hypersurface of logit space with closed-form normals, a monotone
//! binary-search retraction, and single-inner-product momentum transport
//! ([`manifold`]). The optimizer ([`optim`]) wraps those three operations
//! around Adam, with gradients supplied either analytically (relaxed mode)
//! or by Gumbel straight-through estimation over exact budget-constrained
//! DP solves ([`stochastic`], [`knapsack`]). Penalty-method baselines
//! ([`baselines`]) and seeded benchmark generators ([`scenarios`]) complete
//! the experiment harness; the `rco` binary drives it from the command line.

pub mod baselines;
pub mod error;
pub mod knapsack;
pub mod manifold;
pub mod matrix;
pub mod optim;
pub mod problem;
pub mod rng;
pub mod scenarios;
pub mod stochastic;

pub use error::{RcoError, Result};
pub use matrix::{softmax_rows, LogitMatrix, ProbMatrix};
pub use problem::{
    assignment_value, discrete_cost, validate_problem, Assignment, BudgetConstraint,
    BudgetProblem, ConstraintSet,
};
pub use rng::RngStream;
