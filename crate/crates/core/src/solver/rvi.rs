//! Iterative dynamic-programming oracles on a truncated state space.
//!
//! Both solvers run on states `{0, …, n−1}` with the active up-transition at
//! the top state folded into a self-loop. The truncation error is invisible
//! near the bottom of the chain, where all the stationary mass sits for the
//! regimes these oracles certify.

use crate::chain::{Action, ChainParams};
use crate::error::SolverError;

/// Absolute slack below which the two action branches count as tied;
/// ties resolve to [`Action::Passive`].
pub const TIE_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RviOptions {
    /// Truncated state count (≥ 3).
    pub n_states: usize,
    /// Stop when the span seminorm of the update difference is ≤ `tol`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RviOptions {
    fn default() -> Self {
        Self { n_states: 200, tol: 1e-10, max_iter: 200_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RviSolution {
    /// Relative values, normalized to `values[0] = 0`.
    pub values: Vec<f64>,
    /// Average-cost estimate (midpoint of the final update-difference span).
    pub rho: f64,
    /// Greedy action per state at the converged values.
    pub policy: Vec<Action>,
    pub iterations: usize,
    /// Final span of the update difference.
    pub span: f64,
}

struct TruncatedRows {
    // (down, stay, up) per state and action; `up` of the top state is zero
    // with its mass folded into `stay`.
    active: Vec<(f64, f64, f64)>,
    passive: Vec<(f64, f64, f64)>,
}

fn truncated_rows(params: &ChainParams, n: usize) -> TruncatedRows {
    let mut active = Vec::with_capacity(n);
    let mut passive = Vec::with_capacity(n);
    for x in 0..n {
        let mut act = (0.0, 0.0, 0.0);
        for (z, q) in params.kernel(x, Action::Active).iter() {
            if z < x {
                act.0 += q;
            } else if z == x {
                act.1 += q;
            } else if z >= n {
                act.1 += q; // reflect at the truncation boundary
            } else {
                act.2 += q;
            }
        }
        active.push(act);
        let mut pas = (0.0, 0.0, 0.0);
        for (z, q) in params.kernel(x, Action::Passive).iter() {
            if z < x {
                pas.0 += q;
            } else {
                pas.1 += q;
            }
        }
        passive.push(pas);
    }
    TruncatedRows { active, passive }
}

fn branch_value(rows: &[(f64, f64, f64)], values: &[f64], x: usize) -> f64 {
    let (down, stay, up) = rows[x];
    let below = if x == 0 { values[0] } else { values[x - 1] };
    let above = if x + 1 < values.len() { values[x + 1] } else { values[x] };
    down * below + stay * values[x] + up * above
}

/// Relative value iteration for the average-cost problem at tax `lambda`.
pub fn rvi_optimal(
    params: &ChainParams,
    lambda: f64,
    opts: &RviOptions,
) -> Result<RviSolution, SolverError> {
    rvi_optimal_from(params, lambda, opts, None)
}

/// [`rvi_optimal`] warm-started from a previous value vector (must have
/// length `opts.n_states`); used by bisection sweeps where `λ` moves little
/// between solves.
pub fn rvi_optimal_from(
    params: &ChainParams,
    lambda: f64,
    opts: &RviOptions,
    init: Option<&[f64]>,
) -> Result<RviSolution, SolverError> {
    assert!(opts.n_states >= 3, "need at least 3 truncated states");
    let n = opts.n_states;
    let rows = truncated_rows(params, n);
    let c = params.holding_cost;

    let mut values = match init {
        Some(v) => {
            assert_eq!(v.len(), n, "warm start length mismatch");
            let base = v[0];
            v.iter().map(|x| x - base).collect()
        }
        None => vec![0.0; n],
    };
    let mut updated = vec![0.0; n];
    let mut span = f64::INFINITY;
    for iter in 1..=opts.max_iter {
        let mut min_diff = f64::INFINITY;
        let mut max_diff = f64::NEG_INFINITY;
        for x in 0..n {
            let active = c * x as f64 + branch_value(&rows.active, &values, x);
            let passive = c * x as f64 + lambda + branch_value(&rows.passive, &values, x);
            let best = active.min(passive);
            let diff = best - values[x];
            min_diff = min_diff.min(diff);
            max_diff = max_diff.max(diff);
            updated[x] = best;
        }
        span = max_diff - min_diff;
        let offset = updated[0];
        for x in 0..n {
            values[x] = updated[x] - offset;
        }
        if span <= opts.tol {
            let rho = (max_diff + min_diff) / 2.0;
            let policy = greedy_policy(params, lambda, &rows, &values);
            return Ok(RviSolution { values, rho, policy, iterations: iter, span });
        }
    }
    Err(SolverError::NoConvergence { iters: opts.max_iter, span })
}

fn greedy_policy(
    params: &ChainParams,
    lambda: f64,
    rows: &TruncatedRows,
    values: &[f64],
) -> Vec<Action> {
    let c = params.holding_cost;
    (0..values.len())
        .map(|x| {
            let active = c * x as f64 + branch_value(&rows.active, values, x);
            let passive = c * x as f64 + lambda + branch_value(&rows.passive, values, x);
            if active < passive - TIE_EPS {
                Action::Active
            } else {
                Action::Passive
            }
        })
        .collect()
}

/// Threshold form of a policy map: `Some(t)` when actions are Active on
/// `0..=t` and Passive above (`−1` for all-Passive; `n−1` when Active
/// everywhere up to the truncation edge), `None` otherwise.
pub fn threshold_structure(policy: &[Action]) -> Option<i64> {
    let first_passive = policy.iter().position(|&a| a == Action::Passive);
    match first_passive {
        None => Some(policy.len() as i64 - 1),
        Some(i) => {
            if policy[i..].iter().all(|&a| a == Action::Passive) {
                Some(i as i64 - 1)
            } else {
                None
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscountedSolution {
    /// `V_β(x) − V_β(0)` on the truncated space.
    pub relative_values: Vec<f64>,
    /// `V_β(0)`; `(1−β)·V_β(0)` estimates the average cost as `β ↑ 1`.
    pub value_at_zero: f64,
    pub iterations: usize,
}

/// Value iteration for the β-discounted problem at tax `lambda`; the
/// discounted Bellman operator is a contraction, so this always converges.
pub fn discounted_vi(
    params: &ChainParams,
    lambda: f64,
    beta: f64,
    n_states: usize,
    tol: f64,
) -> DiscountedSolution {
    assert!(beta > 0.0 && beta < 1.0, "discount must lie in (0, 1)");
    assert!(n_states >= 3);
    let n = n_states;
    let rows = truncated_rows(params, n);
    let c = params.holding_cost;

    let mut values = vec![0.0; n];
    let mut updated = vec![0.0; n];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut worst = 0.0f64;
        for x in 0..n {
            let active = c * x as f64 + beta * branch_value(&rows.active, &values, x);
            let passive = c * x as f64 + lambda + beta * branch_value(&rows.passive, &values, x);
            let best = active.min(passive);
            worst = worst.max((best - values[x]).abs());
            updated[x] = best;
        }
        std::mem::swap(&mut values, &mut updated);
        if worst <= tol {
            break;
        }
    }
    let value_at_zero = values[0];
    let relative_values = values.iter().map(|v| v - value_at_zero).collect();
    DiscountedSolution { relative_values, value_at_zero, iterations }
}
