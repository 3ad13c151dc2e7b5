//! Exact multiple-choice knapsack solving and discrete extraction.
//!
//! The DP maximizes a per-(group, option) score subject to an integer cost
//! budget, picking exactly one option per group. It serves two roles: the
//! constrained forward solve inside the stochastic estimator, and the
//! ground-truth oracle for benchmark gap computation. Brute-force enumeration
//! cross-checks the DP on small instances, and greedy repair converts a
//! probability matrix into a feasible discrete assignment.

use ndarray::Array2;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{RcoError, Result};
use crate::matrix::ProbMatrix;
use crate::problem::{discrete_cost, discrete_cost_under, Assignment, BudgetProblem, ConstraintSet};

/// Default cap on the integer budget (DP table width).
pub const DEFAULT_GRID_CAP: u64 = 2_000_000;

/// Floor for log-probability scores in [`extract_final`]; avoids -inf from
/// saturated softmax underflow.
pub const LOG_PROB_FLOOR: f64 = 1e-300;

/// Integer cost units for the DP: `u[i][k] = round(scale * w_i * c_k)` with
/// budget `floor(scale * B)`.
#[derive(Debug, Clone)]
pub struct IntegerCostGrid {
    pub units: Array2<u64>,
    pub budget_units: u64,
    pub scale: f64,
    /// Largest relative rounding error across entries.
    pub max_relative_error: f64,
}

/// Real -> integer cost conversion. Costs that are already integral under
/// `scale = 1` quantize exactly (zero reported error).
pub fn quantize_costs(problem: &BudgetProblem, scale: f64) -> Result<IntegerCostGrid> {
    quantize_costs_capped(problem, scale, DEFAULT_GRID_CAP)
}

pub fn quantize_costs_capped(
    problem: &BudgetProblem,
    scale: f64,
    cap: u64,
) -> Result<IntegerCostGrid> {
    assert!(scale > 0.0, "quantization scale must be positive");
    let budget_units = (scale * problem.budget).floor() as u64;
    if budget_units > cap {
        return Err(RcoError::GridTooLarge { budget_units, cap });
    }
    let (n, k) = (problem.num_groups, problem.num_options);
    let mut units = Array2::zeros((n, k));
    let mut max_relative_error = 0.0f64;
    for i in 0..n {
        for j in 0..k {
            let exact = scale * problem.group_weights[i] * problem.option_costs[j];
            let rounded = exact.round();
            if exact > 0.0 {
                max_relative_error = max_relative_error.max((rounded - exact).abs() / exact);
            }
            units[[i, j]] = rounded as u64;
        }
    }
    Ok(IntegerCostGrid {
        units,
        budget_units,
        scale,
        max_relative_error,
    })
}

/// Scales probed (in order) for an exact quantization before falling back
/// to the configured default.
const EXACT_SCALE_CANDIDATES: [f64; 12] =
    [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 5.0, 10.0, 20.0, 25.0, 50.0, 100.0];

/// Quantizes at the smallest probed scale under which the weighted costs
/// are exactly integral (zero rounding error), falling back to
/// `preferred_scale` for genuinely non-rational costs.
pub fn auto_quantize(problem: &BudgetProblem, preferred_scale: f64) -> Result<IntegerCostGrid> {
    for scale in EXACT_SCALE_CANDIDATES {
        let grid = quantize_costs(problem, scale)?;
        if grid.max_relative_error == 0.0 {
            return Ok(grid);
        }
    }
    quantize_costs(problem, preferred_scale)
}

/// Score-maximizing assignment under the integer budget.
#[derive(Debug, Clone)]
pub struct DpSolution {
    pub assignment: Assignment,
    pub score: f64,
    pub cost_units: u64,
}

/// Exact solution of the multiple-choice knapsack by dynamic programming:
/// maximize `sum_i score[i][z_i]` subject to `sum_i u[i][z_i] <= B'`,
/// exactly one option per group. `O(N K B')` time, two rolling score rows
/// plus an `N x (B' + 1)` choice table for backtracking. Score ties within a
/// group resolve to the lowest option index.
pub fn dp_solve(scores: &Array2<f64>, grid: &IntegerCostGrid) -> Result<DpSolution> {
    let (n, k) = grid.units.dim();
    assert_eq!(scores.dim(), (n, k), "score matrix shape mismatch");
    let width = grid.budget_units as usize + 1;

    let mut prev = vec![0.0f64; width];
    let mut cur = vec![f64::NEG_INFINITY; width];
    // u8 choices: K <= 256 options
    assert!(k <= u8::MAX as usize + 1, "too many options for choice table");
    let mut choices = vec![0u8; n * width];

    for i in 0..n {
        cur.fill(f64::NEG_INFINITY);
        let row_choices = &mut choices[i * width..(i + 1) * width];
        for j in 0..k {
            let u = grid.units[[i, j]] as usize;
            if u >= width {
                continue;
            }
            let s = scores[[i, j]];
            for b in u..width {
                let cand = prev[b - u] + s;
                if cand > cur[b] {
                    cur[b] = cand;
                    row_choices[b] = j as u8;
                }
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }

    let best = prev[width - 1];
    if !best.is_finite() {
        return Err(RcoError::Infeasible);
    }

    // backtrack from the full budget
    let mut b = width - 1;
    let mut picks = vec![0usize; n];
    for i in (0..n).rev() {
        let j = choices[i * width + b] as usize;
        picks[i] = j;
        b -= grid.units[[i, j]] as usize;
    }
    let cost_units: u64 = picks
        .iter()
        .enumerate()
        .map(|(i, &j)| grid.units[[i, j]])
        .sum();
    let score: f64 = picks.iter().enumerate().map(|(i, &j)| scores[[i, j]]).sum();
    debug_assert!(cost_units <= grid.budget_units);
    Ok(DpSolution {
        assignment: Assignment::new(picks),
        score,
        cost_units,
    })
}

/// Exhaustive-enumeration solution under the real-valued costs (no
/// quantization). Testing oracle; limited to `K^N <= 1e7`.
#[derive(Debug, Clone)]
pub struct BruteForceSolution {
    pub assignment: Assignment,
    pub score: f64,
    pub cost: f64,
}

pub fn brute_force_solve(
    scores: &Array2<f64>,
    problem: &BudgetProblem,
) -> Result<BruteForceSolution> {
    let (n, k) = (problem.num_groups, problem.num_options);
    let combinations = (k as f64).powi(n as i32);
    if combinations > 1e7 {
        return Err(RcoError::TooLarge { combinations });
    }
    let mut best: Option<(f64, f64, Vec<usize>)> = None;
    let mut current = vec![0usize; n];
    // lexicographic enumeration with strict improvement keeps the
    // lexicographically-smallest maximizer
    loop {
        let z = Assignment::new(current.clone());
        let cost = discrete_cost(&z, problem);
        if cost <= problem.budget {
            let score: f64 = current
                .iter()
                .enumerate()
                .map(|(i, &j)| scores[[i, j]])
                .sum();
            if best.as_ref().map_or(true, |(s, _, _)| score > *s) {
                best = Some((score, cost, current.clone()));
            }
        }
        // advance odometer
        let mut pos = n;
        while pos > 0 {
            pos -= 1;
            current[pos] += 1;
            if current[pos] < k {
                break;
            }
            current[pos] = 0;
            if pos == 0 {
                let (score, cost, picks) = best.ok_or(RcoError::Infeasible)?;
                return Ok(BruteForceSolution {
                    assignment: Assignment::new(picks),
                    score,
                    cost,
                });
            }
        }
    }
}

/// Candidate switch for greedy repair, ordered by score loss per unit of
/// cost saved (smaller ratio first).
#[derive(Debug, Clone, Copy)]
struct Switch {
    ratio: f64,
    group: usize,
    option: usize,
    stamp: u64,
}

impl PartialEq for Switch {
    fn eq(&self, other: &Self) -> bool {
        self.cmp_key() == other.cmp_key()
    }
}
impl Eq for Switch {}
impl Switch {
    fn cmp_key(&self) -> (f64, usize, usize) {
        (self.ratio, self.group, self.option)
    }
}
impl PartialOrd for Switch {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Switch {
    // BinaryHeap is a max-heap; invert so the smallest ratio pops first,
    // with (group, option) as the deterministic tie-break
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .ratio
            .partial_cmp(&self.ratio)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.group.cmp(&self.group))
            .then_with(|| other.option.cmp(&self.option))
    }
}

/// Starting from the per-group argmax of `p`, repeatedly applies the single
/// option switch with the smallest probability loss per unit of cost saved
/// until the discrete cost fits the budget.
pub fn greedy_repair(p: &ProbMatrix, problem: &BudgetProblem) -> Result<Assignment> {
    let (n, _k) = (p.num_groups(), p.num_options());
    let mut picks = p.row_argmax();
    let mut cost = discrete_cost(&Assignment::new(picks.clone()), problem);
    if cost <= problem.budget {
        return Ok(Assignment::new(picks));
    }

    let min_cost: f64 = problem
        .group_weights
        .iter()
        .map(|w| w * problem.cost_range().0)
        .sum();
    if min_cost > problem.budget {
        return Err(RcoError::Infeasible);
    }

    // best cost-saving switch for one group given its current pick
    let best_for_group = |picks: &[usize], i: usize, stamp: u64| -> Option<Switch> {
        let cur = picks[i];
        let cur_cost = problem.group_weights[i] * problem.option_costs[cur];
        let cur_p = p.entries()[[i, cur]];
        let mut best: Option<Switch> = None;
        for (j, &c) in problem.option_costs.iter().enumerate() {
            let saving = cur_cost - problem.group_weights[i] * c;
            if saving <= 0.0 {
                continue;
            }
            let ratio = (cur_p - p.entries()[[i, j]]) / saving;
            let cand = Switch {
                ratio,
                group: i,
                option: j,
                stamp,
            };
            if best.as_ref().map_or(true, |b| cand > *b) {
                best = Some(cand);
            }
        }
        best
    };

    let mut stamps = vec![0u64; n];
    let mut heap = BinaryHeap::with_capacity(n);
    for i in 0..n {
        if let Some(sw) = best_for_group(&picks, i, 0) {
            heap.push(sw);
        }
    }

    while cost > problem.budget {
        let sw = heap.pop().ok_or(RcoError::Infeasible)?;
        if sw.stamp != stamps[sw.group] {
            continue; // stale entry from before the group's last switch
        }
        let i = sw.group;
        cost -= problem.group_weights[i]
            * (problem.option_costs[picks[i]] - problem.option_costs[sw.option]);
        picks[i] = sw.option;
        stamps[i] += 1;
        if let Some(next) = best_for_group(&picks, i, stamps[i]) {
            heap.push(next);
        }
    }
    Ok(Assignment::new(picks))
}

/// Final discrete assignment: DP on the log-probabilities (no noise, no
/// temperature), entries floored at [`LOG_PROB_FLOOR`].
pub fn extract_final(
    p: &ProbMatrix,
    _problem: &BudgetProblem,
    grid: &IntegerCostGrid,
) -> Result<DpSolution> {
    let scores = p.entries().mapv(|x| x.max(LOG_PROB_FLOOR).ln());
    dp_solve(&scores, grid)
}

/// Greedy repair against several budget constraints. Starting from the
/// per-group argmax, repeatedly applies the single option switch with the
/// smallest probability loss per unit reduction of the total over-budget
/// mass `sum_j max(0, cost_j - b_j)`. The potential strictly decreases, so
/// the loop cannot cycle; it fails only if no switch can reduce it.
pub fn multi_greedy_repair(
    p: &ProbMatrix,
    weights: &[f64],
    constraints: &ConstraintSet,
) -> Result<Assignment> {
    let (n, k) = (p.num_groups(), p.num_options());
    let q = constraints.num_constraints();
    let mut picks = Assignment::new(p.row_argmax());
    let mut costs: Vec<f64> = constraints
        .constraints
        .iter()
        .map(|entry| discrete_cost_under(&picks, weights, &entry.option_costs))
        .collect();
    let overage = |costs: &[f64]| -> f64 {
        costs
            .iter()
            .zip(&constraints.constraints)
            .map(|(c, entry)| (c - entry.budget).max(0.0))
            .sum()
    };

    let max_rounds = n * k * q + 1;
    for _ in 0..max_rounds {
        let total = overage(&costs);
        if total <= 0.0 {
            return Ok(picks);
        }
        // best switch: smallest probability loss per unit of overage removed
        let mut best: Option<(f64, f64, usize, usize)> = None;
        let mut trial = vec![0.0; q];
        for i in 0..n {
            let cur = picks.choices[i];
            let cur_p = p.entries()[[i, cur]];
            for j in 0..k {
                if j == cur {
                    continue;
                }
                for (l, entry) in constraints.constraints.iter().enumerate() {
                    trial[l] = costs[l]
                        + weights[i] * (entry.option_costs[j] - entry.option_costs[cur]);
                }
                let reduction = total - overage(&trial);
                if reduction <= 0.0 {
                    continue;
                }
                let ratio = (cur_p - p.entries()[[i, j]]) / reduction;
                if best.map_or(true, |(r, red, _, _)| {
                    ratio < r || (ratio == r && reduction > red)
                }) {
                    best = Some((ratio, reduction, i, j));
                }
            }
        }
        let (_, _, i, j) = best.ok_or(RcoError::Infeasible)?;
        for (l, entry) in constraints.constraints.iter().enumerate() {
            costs[l] +=
                weights[i] * (entry.option_costs[j] - entry.option_costs[picks.choices[i]]);
        }
        picks.choices[i] = j;
    }
    Err(RcoError::Infeasible)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{softmax_rows, LogitMatrix};
    use ndarray::array;

    fn grid_from(units: Array2<u64>, budget_units: u64) -> IntegerCostGrid {
        IntegerCostGrid {
            units,
            budget_units,
            scale: 1.0,
            max_relative_error: 0.0,
        }
    }

    #[test]
    fn quantize_integer_costs_exact() {
        let p = BudgetProblem {
            num_groups: 2,
            num_options: 2,
            option_costs: vec![1.0, 3.0],
            group_weights: vec![1.0, 1.0],
            budget: 4.0,
            values: None,
        };
        let g = quantize_costs(&p, 1.0).unwrap();
        assert_eq!(g.max_relative_error, 0.0);
        assert_eq!(g.budget_units, 4);
        assert_eq!(g.units[[0, 1]], 3);
    }

    #[test]
    fn quantize_rational_scaling() {
        let p = BudgetProblem {
            num_groups: 1,
            num_options: 2,
            option_costs: vec![0.5, 1.5],
            group_weights: vec![2.0],
            budget: 2.0,
            values: None,
        };
        let g = quantize_costs(&p, 2.0).unwrap();
        assert_eq!(g.units[[0, 0]], 2);
        assert_eq!(g.units[[0, 1]], 6);
        assert_eq!(g.max_relative_error, 0.0);
    }

    #[test]
    fn quantize_cap_enforced() {
        let p = BudgetProblem {
            num_groups: 1,
            num_options: 2,
            option_costs: vec![1.0, 2.0],
            group_weights: vec![1.0],
            budget: 1.5,
            values: None,
        };
        assert!(matches!(
            quantize_costs_capped(&p, 1e9, 1000),
            Err(RcoError::GridTooLarge { .. })
        ));
    }

    #[test]
    fn dp_single_group_picks_best_fitting() {
        let scores = array![[5.0, 9.0, 7.0]];
        let grid = grid_from(array![[1, 4, 2]], 3);
        let sol = dp_solve(&scores, &grid).unwrap();
        // option 1 (score 9) costs 4 > 3, so option 2 (score 7, cost 2) wins
        assert_eq!(sol.assignment.choices, vec![2]);
        assert_eq!(sol.score, 7.0);
        assert_eq!(sol.cost_units, 2);
    }

    #[test]
    fn dp_spends_one_unit_on_best_group() {
        // three groups, options cost (0, 1); only one unit affordable
        let scores = array![[0.0, 5.0], [0.0, 3.0], [0.0, 4.0]];
        let grid = grid_from(array![[0, 1], [0, 1], [0, 1]], 1);
        let sol = dp_solve(&scores, &grid).unwrap();
        assert_eq!(sol.assignment.choices, vec![1, 0, 0]);
        assert_eq!(sol.score, 5.0);
        assert_eq!(sol.cost_units, 1);
    }

    #[test]
    fn dp_infeasible_when_min_cost_exceeds_budget() {
        let scores = array![[1.0, 2.0]];
        let grid = grid_from(array![[5, 6]], 4);
        assert!(matches!(dp_solve(&scores, &grid), Err(RcoError::Infeasible)));
    }

    #[test]
    fn dp_tie_breaks_to_lowest_option() {
        let scores = array![[3.0, 3.0]];
        let grid = grid_from(array![[1, 1]], 2);
        let sol = dp_solve(&scores, &grid).unwrap();
        assert_eq!(sol.assignment.choices, vec![0]);
    }

    #[test]
    fn brute_force_single_group_matches_dp() {
        let p = BudgetProblem {
            num_groups: 1,
            num_options: 3,
            option_costs: vec![1.0, 4.0, 2.0],
            group_weights: vec![1.0],
            budget: 3.0,
            values: None,
        };
        let scores = array![[5.0, 9.0, 7.0]];
        let bf = brute_force_solve(&scores, &p).unwrap();
        let grid = quantize_costs(&p, 1.0).unwrap();
        let dp = dp_solve(&scores, &grid).unwrap();
        assert_eq!(bf.score, dp.score);
        assert_eq!(bf.assignment, dp.assignment);
    }

    #[test]
    fn brute_force_infeasible() {
        let p = BudgetProblem {
            num_groups: 2,
            num_options: 2,
            option_costs: vec![3.0, 4.0],
            group_weights: vec![1.0, 1.0],
            budget: 5.0,
            values: None,
        };
        let scores = array![[1.0, 2.0], [1.0, 2.0]];
        assert!(matches!(
            brute_force_solve(&scores, &p),
            Err(RcoError::Infeasible)
        ));
    }

    #[test]
    fn greedy_repair_feasible_argmax_unchanged() {
        let p = BudgetProblem {
            num_groups: 2,
            num_options: 2,
            option_costs: vec![1.0, 2.0],
            group_weights: vec![1.0, 1.0],
            budget: 3.0,
            values: None,
        };
        let probs = softmax_rows(&LogitMatrix(array![[3.0, 0.0], [0.0, 3.0]]));
        // argmax = [0, 1], cost 3 <= 3
        let z = greedy_repair(&probs, &p).unwrap();
        assert_eq!(z.choices, vec![0, 1]);
    }

    #[test]
    fn greedy_repair_comes_in_under_budget() {
        let p = BudgetProblem {
            num_groups: 3,
            num_options: 2,
            option_costs: vec![1.0, 2.0],
            group_weights: vec![1.0, 1.0, 1.0],
            budget: 4.0,
            values: None,
        };
        let probs = softmax_rows(&LogitMatrix(array![
            [0.0, 4.0],
            [0.0, 2.0],
            [0.0, 3.0]
        ]));
        // argmax = [1,1,1], cost 6 > 4: must downgrade twice
        let z = greedy_repair(&probs, &p).unwrap();
        assert!(discrete_cost(&z, &p) <= 4.0);
        // the group with the weakest preference for option 1 downgrades first
        assert_eq!(z.choices[0], 1);
    }

    #[test]
    fn greedy_repair_infeasible() {
        let p = BudgetProblem {
            num_groups: 2,
            num_options: 2,
            option_costs: vec![3.0, 5.0],
            group_weights: vec![1.0, 1.0],
            budget: 5.0,
            values: None,
        };
        let probs = softmax_rows(&LogitMatrix::zeros(2, 2));
        assert!(matches!(greedy_repair(&probs, &p), Err(RcoError::Infeasible)));
    }

    #[test]
    fn extract_final_saturated_feasible_returns_argmax() {
        let p = BudgetProblem {
            num_groups: 2,
            num_options: 2,
            option_costs: vec![1.0, 2.0],
            group_weights: vec![1.0, 1.0],
            budget: 3.0,
            values: None,
        };
        let probs = softmax_rows(&LogitMatrix(array![[40.0, -40.0], [-40.0, 40.0]]));
        let grid = quantize_costs(&p, 1.0).unwrap();
        let sol = extract_final(&probs, &p, &grid).unwrap();
        assert_eq!(sol.assignment.choices, vec![0, 1]);
    }

    #[test]
    fn extract_final_uniform_tie_breaks_low() {
        let p = BudgetProblem {
            num_groups: 2,
            num_options: 2,
            option_costs: vec![1.0, 2.0],
            group_weights: vec![1.0, 1.0],
            budget: 3.0,
            values: None,
        };
        let probs = softmax_rows(&LogitMatrix::zeros(2, 2));
        let grid = quantize_costs(&p, 1.0).unwrap();
        let sol = extract_final(&probs, &p, &grid).unwrap();
        assert_eq!(sol.assignment.choices, vec![0, 0]);
    }
}
