//! Deterministic benchmark scenario generators.
//!
//! Thirteen scenario families cover the regimes that separate constraint
//! handling methods: scale (up to 1000 groups x 32 options), cost-value
//! correlation, tight budgets, adversarially tied values, boundary-packed
//! optima, under-budget optima, and heterogeneous group weights. Every
//! family is seeded and contract-checked at generation time (tightness
//! ratio, correlation coefficient, DP-verified under-budget optimum), so a
//! generated instance is self-testing. Value matrices live in `[0, 100]`
//! across families to keep gap percentages comparable.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{RcoError, Result};
use crate::knapsack::{auto_quantize, dp_solve};
use crate::manifold::{multi_normals, GRAM_CONDITION_LIMIT};
use crate::matrix::LogitMatrix;
use crate::problem::{BudgetConstraint, BudgetProblem, ConstraintSet};
use crate::rng::RngStream;

/// The thirteen scenario families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    SmallEasy,
    Medium,
    Large,
    Huge,
    FloatCosts,
    Correlated,
    CorrelatedTight,
    Adversarial,
    Boundary,
    CheapOptimal,
    MixedSlack,
    TightBudget,
    Nonuniform,
}

impl Family {
    pub fn all() -> [Family; 13] {
        use Family::*;
        [
            SmallEasy,
            Medium,
            Large,
            Huge,
            FloatCosts,
            Correlated,
            CorrelatedTight,
            Adversarial,
            Boundary,
            CheapOptimal,
            MixedSlack,
            TightBudget,
            Nonuniform,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::SmallEasy => "small-easy",
            Family::Medium => "medium",
            Family::Large => "large",
            Family::Huge => "huge",
            Family::FloatCosts => "float-costs",
            Family::Correlated => "correlated",
            Family::CorrelatedTight => "correlated-tight",
            Family::Adversarial => "adversarial",
            Family::Boundary => "boundary",
            Family::CheapOptimal => "cheap-optimal",
            Family::MixedSlack => "mixed-slack",
            Family::TightBudget => "tight-budget",
            Family::Nonuniform => "nonuniform",
        }
    }

    /// `(N, K)` for the family.
    pub fn dimensions(&self) -> (usize, usize) {
        match self {
            Family::SmallEasy => (20, 4),
            Family::Medium => (50, 8),
            Family::Large => (200, 16),
            Family::Huge => (1000, 32),
            Family::FloatCosts => (200, 16),
            _ => (50, 8),
        }
    }

    /// Budget position inside the per-weight cost window.
    pub fn tightness(&self) -> f64 {
        match self {
            Family::CorrelatedTight | Family::TightBudget | Family::Huge => 0.15,
            _ => 0.5,
        }
    }

    /// Spacing of the integer cost ladder. Wide ladders at large `N` steepen
    /// the retraction derivative `sum_i w_i Var[c]` and with it the
    /// binary-search iteration count, so the big families keep the total
    /// cost span near 4.
    fn ladder_unit(&self) -> f64 {
        match self {
            Family::Huge => 0.125,
            Family::Large | Family::FloatCosts => 0.25,
            _ => 1.0,
        }
    }

    fn index(&self) -> u64 {
        Family::all().iter().position(|f| f == self).unwrap() as u64
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Family::all()
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Family::all().iter().map(|f| f.name()).collect();
                format!("unknown family '{s}'; known: {}", names.join(", "))
            })
    }
}

/// A seeded request for one benchmark instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub family: Family,
    pub seed: u64,
}

/// Contract checks recorded at generation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractReport {
    pub family: String,
    pub attempts: u32,
    pub tightness: f64,
    /// Pearson correlation between values and option costs (correlation
    /// families and boundary).
    pub value_cost_correlation: Option<f64>,
    /// DP-optimal cost as a fraction of the budget (under-budget families).
    pub dp_cost_fraction: Option<f64>,
    /// max weight / min weight (nonuniform family).
    pub weight_span: Option<f64>,
}

/// A generated instance together with its contract report.
#[derive(Debug, Clone)]
pub struct GeneratedScenario {
    pub spec: ScenarioSpec,
    pub problem: BudgetProblem,
    pub contract: ContractReport,
}

fn budget_for(costs: &[f64], weights: &[f64], tightness: f64) -> f64 {
    let min = costs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = costs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total_weight: f64 = weights.iter().sum();
    total_weight * (min + tightness * (max - min))
}

fn uniform_values(n: usize, k: usize, rng: &mut RngStream) -> Array2<f64> {
    Array2::from_shape_fn((n, k), |_| rng.uniform_in(0.0, 100.0))
}

/// Pearson correlation between value entries and their option costs.
fn value_cost_correlation(values: &Array2<f64>, costs: &[f64]) -> f64 {
    let n = values.nrows() as f64;
    let count = n * costs.len() as f64;
    let mean_c: f64 = costs.iter().sum::<f64>() / costs.len() as f64;
    let mean_v: f64 = values.iter().sum::<f64>() / count;
    let mut cov = 0.0;
    let mut var_c = 0.0;
    let mut var_v = 0.0;
    for row in values.rows() {
        for (v, c) in row.iter().zip(costs) {
            cov += (c - mean_c) * (v - mean_v);
            var_c += (c - mean_c) * (c - mean_c);
            var_v += (v - mean_v) * (v - mean_v);
        }
    }
    cov / (var_c.sqrt() * var_v.sqrt())
}

/// Correlation floor for the correlated and boundary families.
pub const CORRELATION_FLOOR: f64 = 0.9;
/// DP-optimal cost must stay below this fraction of the budget.
pub const CHEAP_OPTIMAL_COST_FRACTION: f64 = 0.8;
pub const MIXED_SLACK_COST_FRACTION: f64 = 0.95;
/// Required max/min weight ratio for the nonuniform family.
pub const WEIGHT_SPAN_FLOOR: f64 = 50.0;

const MAX_ATTEMPTS: u32 = 100;

fn fail(family: Family, reason: impl Into<String>) -> RcoError {
    RcoError::GenerationFailed {
        family: family.name().to_string(),
        reason: reason.into(),
    }
}

/// Generates one instance of the requested family. Resamples up to 100
/// times until the family contract verifies, then returns the problem with
/// its contract report. Identical specs produce identical instances.
pub fn generate(spec: &ScenarioSpec) -> Result<GeneratedScenario> {
    let family = spec.family;
    let (n, k) = family.dimensions();
    let base = RngStream::new(spec.seed).substream(family.index());

    let mut last_reason = String::from("exhausted attempts");
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = base.substream(attempt as u64);
        match try_generate(family, n, k, &mut rng) {
            Ok((problem, mut contract)) => {
                problem.validate()?;
                contract.attempts = attempt + 1;
                return Ok(GeneratedScenario {
                    spec: *spec,
                    problem,
                    contract,
                });
            }
            Err(reason) => last_reason = reason,
        }
    }
    Err(fail(family, last_reason))
}

type Attempt = std::result::Result<(BudgetProblem, ContractReport), String>;

/// Value slope per unit cost and noise width for the huge family.
pub const HUGE_VALUE_SLOPE: f64 = 10.0;
pub const HUGE_VALUE_NOISE: f64 = 40.0;

fn try_generate(family: Family, n: usize, k: usize, rng: &mut RngStream) -> Attempt {
    let tightness = family.tightness();
    let unit = family.ladder_unit();
    let ladder: Vec<f64> = (1..=k).map(|c| c as f64 * unit).collect();
    let mut report = ContractReport {
        family: family.name().to_string(),
        attempts: 0,
        tightness,
        value_cost_correlation: None,
        dp_cost_fraction: None,
        weight_span: None,
    };

    let (costs, weights, values) = match family {
        Family::SmallEasy | Family::Medium | Family::Large | Family::TightBudget => {
            let values = uniform_values(n, k, rng);
            (ladder, vec![1.0; n], values)
        }
        Family::Huge => {
            // cost-anchored values under a tight budget: the value argmax is
            // maximally infeasible, so the instance separates exact from
            // approximate constraint handling at scale
            let raw = Array2::from_shape_fn((n, k), |(_, j)| {
                HUGE_VALUE_SLOPE * ladder[j] + rng.uniform_in(0.0, HUGE_VALUE_NOISE)
            });
            let lo = HUGE_VALUE_SLOPE * ladder[0];
            let hi = HUGE_VALUE_SLOPE * ladder[k - 1] + HUGE_VALUE_NOISE;
            let values = raw.mapv(|v| (v - lo) / (hi - lo) * 100.0);
            let corr = value_cost_correlation(&values, &ladder);
            report.value_cost_correlation = Some(corr);
            (ladder, vec![1.0; n], values)
        }
        Family::FloatCosts => {
            let costs: Vec<f64> = (0..k).map(|_| rng.uniform_in(0.25, 4.25)).collect();
            let values = uniform_values(n, k, rng);
            (costs, vec![1.0; n], values)
        }
        Family::Correlated | Family::CorrelatedTight => {
            // value tracks cost plus bounded noise, mapped into [0, 100]
            let lo = ladder[0] - 1.0;
            let hi = ladder[k - 1] + 1.0;
            let values = Array2::from_shape_fn((n, k), |(_, j)| {
                let raw = ladder[j] + rng.uniform_in(-1.0, 1.0);
                (raw - lo) / (hi - lo) * 100.0
            });
            let corr = value_cost_correlation(&values, &ladder);
            report.value_cost_correlation = Some(corr);
            if corr < CORRELATION_FLOOR {
                return Err(format!("correlation {corr:.3} below {CORRELATION_FLOOR}"));
            }
            (ladder, vec![1.0; n], values)
        }
        Family::Adversarial => {
            // costs clustered around budget / N, values nearly tied
            let costs: Vec<f64> = (0..k)
                .map(|j| 0.9 + 0.2 * j as f64 / (k - 1) as f64 + rng.uniform_in(-0.005, 0.005))
                .collect();
            let values = Array2::from_shape_fn((n, k), |_| 50.0 + rng.uniform_in(-1.0, 1.0));
            (costs, vec![1.0; n], values)
        }
        Family::Boundary => {
            // near-linear value in cost: every budget-exhausting assignment
            // is near-optimal
            let values =
                Array2::from_shape_fn((n, k), |(_, j)| 10.0 * ladder[j] + rng.uniform_in(0.0, 2.0));
            let corr = value_cost_correlation(&values, &ladder);
            report.value_cost_correlation = Some(corr);
            if corr < CORRELATION_FLOOR {
                return Err(format!("correlation {corr:.3} below {CORRELATION_FLOOR}"));
            }
            (ladder, vec![1.0; n], values)
        }
        Family::CheapOptimal => {
            // value decreases in cost: the unconstrained optimum is cheap
            let top = ladder[k - 1];
            let values = Array2::from_shape_fn((n, k), |(_, j)| {
                10.0 * (top - ladder[j]) + rng.uniform_in(0.0, 15.0)
            });
            (ladder, vec![1.0; n], values)
        }
        Family::MixedSlack => {
            // half the groups favor cheap options, half are indifferent
            let top = ladder[k - 1];
            let values = Array2::from_shape_fn((n, k), |(i, j)| {
                if i % 2 == 0 {
                    10.0 * (top - ladder[j]) + rng.uniform_in(0.0, 15.0)
                } else {
                    rng.uniform_in(0.0, 100.0)
                }
            });
            (ladder, vec![1.0; n], values)
        }
        Family::Nonuniform => {
            // weights span two orders of magnitude
            let weights: Vec<f64> = (0..n)
                .map(|_| 10f64.powf(rng.uniform_in(-1.0, 1.0)))
                .collect();
            let span = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                / weights.iter().cloned().fold(f64::INFINITY, f64::min);
            report.weight_span = Some(span);
            if span < WEIGHT_SPAN_FLOOR {
                return Err(format!("weight span {span:.1} below {WEIGHT_SPAN_FLOOR}"));
            }
            let values = uniform_values(n, k, rng);
            (ladder, weights, values)
        }
    };

    let budget = budget_for(&costs, &weights, tightness);
    let problem = BudgetProblem {
        num_groups: n,
        num_options: k,
        option_costs: costs,
        group_weights: weights,
        budget,
        values: Some(values),
    };

    // under-budget families certify their contract against the DP optimum
    if matches!(family, Family::CheapOptimal | Family::MixedSlack) {
        let limit = match family {
            Family::CheapOptimal => CHEAP_OPTIMAL_COST_FRACTION,
            _ => MIXED_SLACK_COST_FRACTION,
        };
        let grid = auto_quantize(&problem, 1000.0).map_err(|e| e.to_string())?;
        let sol = dp_solve(problem.values.as_ref().unwrap(), &grid).map_err(|e| e.to_string())?;
        let fraction = sol.cost_units as f64 / grid.budget_units as f64;
        report.dp_cost_fraction = Some(fraction);
        if fraction > limit {
            return Err(format!(
                "DP-optimal cost fraction {fraction:.3} above {limit}"
            ));
        }
    }

    Ok((problem, report))
}

/// The q = 16 simultaneous-constraint instance.
#[derive(Debug, Clone)]
pub struct MultiScenario {
    pub problem: BudgetProblem,
    pub constraints: ConstraintSet,
    /// Condition number of the normals' Gram matrix at uniform logits.
    pub gram_condition: f64,
}

pub const MULTI_GROUPS: usize = 500;
pub const MULTI_OPTIONS: usize = 32;
pub const MULTI_CONSTRAINTS: usize = 16;
/// Gram conditioning required of a generated multi-constraint instance.
pub const MULTI_CONDITION_FLOOR: f64 = 1e6;

/// Generates the multi-constraint benchmark: 16 independent random positive
/// cost vectors over 500 groups x 32 options, each budget at the midpoint of
/// its feasibility window, with the normals verified independent (Gram
/// condition below 1e6) at the uniform point.
pub fn generate_multi(seed: u64) -> Result<MultiScenario> {
    let (n, k, q) = (MULTI_GROUPS, MULTI_OPTIONS, MULTI_CONSTRAINTS);
    let base = RngStream::new(seed).substream(1000);

    let mut last_reason = String::from("exhausted attempts");
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = base.substream(attempt as u64);
        let weights = vec![1.0; n];
        let entries: Vec<BudgetConstraint> = (0..q)
            .map(|_| {
                let costs: Vec<f64> = (0..k).map(|_| rng.uniform_in(0.5, 2.5)).collect();
                let budget = budget_for(&costs, &weights, 0.5);
                BudgetConstraint {
                    option_costs: costs,
                    budget,
                }
            })
            .collect();
        let constraints = ConstraintSet {
            constraints: entries,
            slack_enabled: false,
        };
        if let Err(e) = constraints.validate(&weights) {
            last_reason = e.to_string();
            continue;
        }

        let values = uniform_values(n, k, &mut rng);
        let problem = BudgetProblem {
            num_groups: n,
            num_options: k,
            option_costs: constraints.constraints[0].option_costs.clone(),
            group_weights: weights,
            budget: constraints.constraints[0].budget,
            values: Some(values),
        };

        let normals = multi_normals(&LogitMatrix::zeros(n, k), &constraints, &problem.group_weights);
        let mut gram = nalgebra::DMatrix::<f64>::zeros(q, q);
        for j in 0..q {
            for l in 0..q {
                gram[(j, l)] = crate::matrix::inner(&normals[j].entries, &normals[l].entries);
            }
        }
        let eigen = gram.symmetric_eigenvalues();
        let max = eigen.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = eigen.iter().cloned().fold(f64::INFINITY, f64::min);
        let gram_condition = if min <= 0.0 { f64::INFINITY } else { max / min };
        if gram_condition >= MULTI_CONDITION_FLOOR.min(GRAM_CONDITION_LIMIT) {
            last_reason = format!("Gram condition {gram_condition:.3e} too large");
            continue;
        }

        return Ok(MultiScenario {
            problem,
            constraints,
            gram_condition,
        });
    }
    Err(RcoError::GenerationFailed {
        family: "multi".into(),
        reason: last_reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::validate_problem;

    #[test]
    fn all_families_generate_and_validate() {
        for family in Family::all() {
            let spec = ScenarioSpec { family, seed: 1 };
            let g = generate(&spec).unwrap();
            validate_problem(&g.problem).unwrap();
            let (n, k) = family.dimensions();
            assert_eq!(g.problem.num_groups, n);
            assert_eq!(g.problem.num_options, k);
            let values = g.problem.values.as_ref().unwrap();
            assert!(values.iter().all(|&v| (0.0..=100.0).contains(&v)));
        }
    }

    #[test]
    fn huge_dimensions() {
        let g = generate(&ScenarioSpec {
            family: Family::Huge,
            seed: 3,
        })
        .unwrap();
        assert_eq!(g.problem.num_groups, 1000);
        assert_eq!(g.problem.num_options, 32);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = ScenarioSpec {
            family: Family::Correlated,
            seed: 9,
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.problem.values, b.problem.values);
        assert_eq!(a.problem.option_costs, b.problem.option_costs);
        assert_eq!(a.problem.budget, b.problem.budget);
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate(&ScenarioSpec {
            family: Family::Medium,
            seed: 1,
        })
        .unwrap();
        let b = generate(&ScenarioSpec {
            family: Family::Medium,
            seed: 2,
        })
        .unwrap();
        assert_ne!(a.problem.values, b.problem.values);
    }

    #[test]
    fn correlated_contract_holds() {
        for seed in [1, 2, 3] {
            for family in [Family::Correlated, Family::CorrelatedTight] {
                let g = generate(&ScenarioSpec { family, seed }).unwrap();
                assert!(g.contract.value_cost_correlation.unwrap() >= CORRELATION_FLOOR);
            }
        }
    }

    #[test]
    fn cheap_optimal_is_under_budget() {
        for seed in [1, 2, 3] {
            let g = generate(&ScenarioSpec {
                family: Family::CheapOptimal,
                seed,
            })
            .unwrap();
            assert!(g.contract.dp_cost_fraction.unwrap() <= CHEAP_OPTIMAL_COST_FRACTION);
        }
    }

    #[test]
    fn nonuniform_weight_span() {
        let g = generate(&ScenarioSpec {
            family: Family::Nonuniform,
            seed: 4,
        })
        .unwrap();
        assert!(g.contract.weight_span.unwrap() >= WEIGHT_SPAN_FLOOR);
    }

    #[test]
    fn family_names_round_trip() {
        for family in Family::all() {
            let parsed: Family = family.name().parse().unwrap();
            assert_eq!(parsed, family);
        }
        assert!("bogus".parse::<Family>().is_err());
    }

    #[test]
    fn multi_scenario_dimensions_and_conditioning() {
        let m = generate_multi(1).unwrap();
        assert_eq!(m.problem.num_groups, 500);
        assert_eq!(m.problem.num_options, 32);
        assert_eq!(m.constraints.num_constraints(), 16);
        assert!(m.gram_condition < MULTI_CONDITION_FLOOR);
        m.constraints.validate(&m.problem.group_weights).unwrap();
    }
}
