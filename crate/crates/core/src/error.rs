//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by problem validation, manifold geometry, the DP solver,
/// the optimizer loops, and the scenario generators.
#[derive(Debug, Clone, Error)]
pub enum RcoError {
    /// The budget lies outside the feasible window `(min_k c_k, max_k c_k)`
    /// scaled by the total group weight.
    #[error("infeasible budget {budget}: per-weight target {per_weight} outside ({min_cost}, {max_cost})")]
    InfeasibleBudget {
        budget: f64,
        per_weight: f64,
        min_cost: f64,
        max_cost: f64,
    },

    /// All option costs are equal, so expected cost is constant and the
    /// budget level set is not a manifold.
    #[error("degenerate costs: all option costs equal ({0})")]
    DegenerateCosts(f64),

    /// A group weight or option cost is not strictly positive.
    #[error("non-positive weight or cost at index {index}: {value}")]
    NonPositiveWeight { index: usize, value: f64 },

    /// A problem field contains a NaN or infinity.
    #[error("non-finite entry in {field}")]
    NonFinite { field: &'static str },

    /// Invalid constraint set (empty, or slack requested with q > 1).
    #[error("invalid constraint set: {0}")]
    InvalidConstraintSet(String),

    /// The normal vector has vanished (numerically) and projection is undefined.
    #[error("zero constraint normal: squared norm {0} below threshold")]
    ZeroNormal(f64),

    /// Retraction bracket doubling hit its cap without enclosing the budget.
    #[error("retraction bracket exhausted at half-width {half_width}: cost range [{cost_lo}, {cost_hi}] does not enclose budget {budget}")]
    BracketExhausted {
        half_width: f64,
        cost_lo: f64,
        cost_hi: f64,
        budget: f64,
    },

    /// Bisection stopped making progress before reaching the residual tolerance.
    #[error("retraction stalled after {iterations} bisections, residual {residual}")]
    RetractionStalled { iterations: u32, residual: f64 },

    /// Constraint normals are numerically dependent (ill-conditioned Gram matrix).
    #[error("dependent constraint normals: Gram condition {condition:.3e} exceeds {limit:.1e}")]
    DependentNormals { condition: f64, limit: f64 },

    /// Newton retraction failed to reduce the residual.
    #[error("newton retraction diverged after {iterations} iterations, residual {residual:.3e}")]
    NewtonDiverged { iterations: u32, residual: f64 },

    /// Quantized budget exceeds the DP table cap.
    #[error("integer budget {budget_units} exceeds grid cap {cap}")]
    GridTooLarge { budget_units: u64, cap: u64 },

    /// No assignment fits the budget.
    #[error("infeasible: minimum-cost assignment exceeds the budget")]
    Infeasible,

    /// Brute-force enumeration would exceed its size limit.
    #[error("instance too large for enumeration: {combinations:.3e} assignments")]
    TooLarge { combinations: f64 },

    /// A scenario generator could not satisfy its family contract.
    #[error("scenario generation failed for {family}: {reason}")]
    GenerationFailed { family: String, reason: String },

    /// A configuration value is out of range for the requested run.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, RcoError>;
