//! Whittle index computation for one station chain.
//!
//! The index `W(x)` is the tax `λ` at which the controller of the decoupled
//! chain is indifferent between admitting and rejecting at occupancy `x`.
//! With `V_λ` the exact value of the threshold-`x` policy under tax `λ`, the
//! indifference discrepancy is
//!
//! ```text
//! D(x, λ) = Σ_i p_{i|x}(1)·V_λ(i) − Σ_i p_{i|x}(0)·V_λ(i) − λ
//! ```
//!
//! and `W(x)` is its root in `λ`. Three routes compute it:
//!
//! - [`index_iterate`]: the damped fixed-point scheme
//!   `λ_{k+1} = λ_k + α·D(x, λ_k)`, re-solving the policy-evaluation system
//!   each step;
//! - [`index_direct`]: `V_λ` is affine in `λ` for a fixed threshold policy,
//!   so `D(x, ·)` is affine and two evaluations pin its root exactly;
//! - [`index_bisect`]: bisection of the optimal action at `x` (from relative
//!   value iteration) over `λ` — the slow, assumption-free oracle the other
//!   two are checked against.
//!
//! [`build_table`] computes a per-station table over occupancies, exactly on
//! a stride grid with linear interpolation between, and [`indexability_sweep`]
//! certifies that the optimal threshold is non-decreasing in `λ`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{Action, ChainParams};
use crate::error::IndexError;
use crate::solver::{
    evaluate_threshold, optimal_threshold, rvi_optimal_from, RviOptions, ThresholdPolicy,
    DEFAULT_T_MAX,
};

/// Residual bound every exactly-computed index entry must satisfy.
pub const INDEX_RESIDUAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexMethod {
    Iterative,
    Direct,
    Bisection,
}

impl std::fmt::Display for IndexMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IndexMethod::Iterative => write!(f, "iterative"),
            IndexMethod::Direct => write!(f, "direct"),
            IndexMethod::Bisection => write!(f, "bisection"),
        }
    }
}

impl std::str::FromStr for IndexMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "iterative" => Ok(IndexMethod::Iterative),
            "direct" => Ok(IndexMethod::Direct),
            "bisection" => Ok(IndexMethod::Bisection),
            other => Err(format!(
                "unknown index method '{other}' (expected iterative|direct|bisection)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    /// Step size of the fixed-point iteration.
    pub alpha: f64,
    pub max_iters: usize,
    /// Stop when `|λ_{k+1} − λ_k| ≤ conv_tol`.
    pub conv_tol: f64,
    pub lambda_init: f64,
    pub method: IndexMethod,
    /// Keep a table whose entries decrease somewhere instead of failing the
    /// build; diagnostics only.
    pub allow_non_monotone: bool,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            max_iters: 20_000,
            conv_tol: 1e-8,
            lambda_init: 0.0,
            method: IndexMethod::Direct,
            allow_non_monotone: false,
        }
    }
}

/// The indifference discrepancy `D(x, λ)` under the threshold-`x` policy.
pub fn indifference_residual(
    params: &ChainParams,
    state: usize,
    lambda: f64,
) -> Result<f64, IndexError> {
    let policy = ThresholdPolicy::new(state as i64).expect("state >= 0");
    let sol = evaluate_threshold(params, policy, lambda)?;
    let active = params.kernel(state, Action::Active).expect(|z| sol.v[z]);
    let passive = params.kernel(state, Action::Passive).expect(|z| sol.v[z]);
    Ok(active - passive - lambda)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterateOutcome {
    pub lambda_star: f64,
    pub iters: usize,
    /// `|D(x, λ*)|` at the returned value.
    pub residual: f64,
}

/// Fixed-point iteration `λ_{k+1} = λ_k + α·D(x, λ_k)`, solving the
/// policy-evaluation system afresh at each step.
pub fn index_iterate(
    params: &ChainParams,
    state: usize,
    cfg: &IndexConfig,
) -> Result<IterateOutcome, IndexError> {
    assert!(cfg.alpha > 0.0, "step size must be positive");
    assert!(cfg.conv_tol > 0.0, "convergence tolerance must be positive");
    // Any real index is far below this; an oscillating iterate is not.
    let divergence_bound = 1e12 * params.holding_cost.max(1.0) * (state as f64 + 2.0);
    let mut lambda = cfg.lambda_init;
    let mut last_step = f64::INFINITY;
    for iter in 1..=cfg.max_iters {
        if !lambda.is_finite() || lambda.abs() > divergence_bound {
            return Err(IndexError::NoConvergence { iters: iter, last_lambda: lambda, last_step });
        }
        let d = indifference_residual(params, state, lambda)?;
        let next = lambda + cfg.alpha * d;
        last_step = (next - lambda).abs();
        lambda = next;
        if last_step <= cfg.conv_tol {
            let residual = indifference_residual(params, state, lambda)?.abs();
            return Ok(IterateOutcome { lambda_star: lambda, iters: iter, residual });
        }
    }
    Err(IndexError::NoConvergence { iters: cfg.max_iters, last_lambda: lambda, last_step })
}

/// [`index_iterate`] with step-size halving: on non-convergence the step is
/// halved (up to `max_halvings` times) and the iteration restarted.
pub fn index_iterate_adaptive(
    params: &ChainParams,
    state: usize,
    cfg: &IndexConfig,
    max_halvings: usize,
) -> Result<IterateOutcome, IndexError> {
    let mut attempt = *cfg;
    let mut last_err = None;
    for _ in 0..=max_halvings {
        match index_iterate(params, state, &attempt) {
            Ok(out) => return Ok(out),
            Err(err @ IndexError::NoConvergence { .. }) => {
                last_err = Some(err);
                attempt.alpha /= 2.0;
            }
            Err(other) => return Err(other),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

/// Exact index from the affine structure of `D(x, ·)`: two policy
/// evaluations give slope and intercept, the root follows. Falls back to
/// bisection on a degenerate slope.
pub fn index_direct(params: &ChainParams, state: usize) -> Result<f64, IndexError> {
    let d0 = indifference_residual(params, state, 0.0)?;
    let d1 = indifference_residual(params, state, 1.0)?;
    let slope = d1 - d0;
    if slope.abs() < 1e-12 {
        return index_bisect(params, state, -1.0, 1.0, 1e-9);
    }
    let lambda_star = -d0 / slope;
    let residual = indifference_residual(params, state, lambda_star)?.abs();
    if residual > 1e-9 {
        return Err(IndexError::Solver(crate::error::SolverError::NumericFailure(format!(
            "direct index residual {residual:.3e} at state {state}"
        ))));
    }
    Ok(lambda_star)
}

fn bisect_rvi_options(state: usize) -> RviOptions {
    RviOptions { n_states: state + 72, tol: 1e-11, max_iter: 2_000_000 }
}

/// Optimal action at `state` for tax `lambda`, via warm-started RVI.
fn optimal_action_at(
    params: &ChainParams,
    state: usize,
    lambda: f64,
    opts: &RviOptions,
    warm: &mut Option<Vec<f64>>,
) -> Result<Action, IndexError> {
    let sol = rvi_optimal_from(params, lambda, opts, warm.as_deref())?;
    let action = sol.policy[state];
    *warm = Some(sol.values);
    Ok(action)
}

/// Bisection of the optimal action at `state` over the tax: rejects below
/// the index, admits above it. The pre-build oracle for the other methods.
///
/// The bracket `[lo, hi]` is expanded outward (up to 60 doublings each way)
/// until the action is Passive at `lo` and Active at `hi`.
pub fn index_bisect(
    params: &ChainParams,
    state: usize,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<f64, IndexError> {
    assert!(lo < hi, "bracket must be non-empty");
    assert!(tol > 0.0);
    let opts = bisect_rvi_options(state);
    let mut warm = None;
    let (mut lo, mut hi) = (lo, hi);

    let mut doublings = 0;
    while optimal_action_at(params, state, lo, &opts, &mut warm)? == Action::Active {
        let span = hi - lo;
        lo -= span;
        doublings += 1;
        if doublings > 60 {
            return Err(IndexError::BracketFailure { doublings, lo, hi });
        }
    }
    doublings = 0;
    while optimal_action_at(params, state, hi, &opts, &mut warm)? == Action::Passive {
        let span = hi - lo;
        hi += span;
        doublings += 1;
        if doublings > 60 {
            return Err(IndexError::BracketFailure { doublings, lo, hi });
        }
    }

    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        match optimal_action_at(params, state, mid, &opts, &mut warm)? {
            Action::Passive => lo = mid,
            Action::Active => hi = mid,
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Per-station map from occupancy to Whittle index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexTable {
    /// 1-based station label this table belongs to.
    pub mbs_id: usize,
    /// `values[x] = W(x)`.
    pub values: Vec<f64>,
    /// `|D(x, values[x])|` per state (evaluated for interpolated entries too).
    pub residuals: Vec<f64>,
    /// Whether the entry was computed exactly (false: interpolated).
    pub exact: Vec<bool>,
    pub method: IndexMethod,
}

impl IndexTable {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index at `state`, clamping to the last entry beyond the table.
    pub fn value_clamped(&self, state: usize) -> f64 {
        self.values[state.min(self.values.len() - 1)]
    }

    /// First adjacent pair where the table decreases, if any.
    pub fn monotonicity_violation(&self) -> Option<(usize, f64, f64)> {
        self.values
            .windows(2)
            .position(|w| w[1] < w[0] - 1e-9 * w[0].abs().max(1.0))
            .map(|i| (i + 1, self.values[i], self.values[i + 1]))
    }

    /// Largest `|D(x, W(x))|` over exactly-computed states.
    pub fn max_exact_residual(&self) -> f64 {
        self.residuals
            .iter()
            .zip(&self.exact)
            .filter(|(_, &e)| e)
            .map(|(r, _)| *r)
            .fold(0.0, f64::max)
    }
}

/// Builds the index table for one station: exact values on the stride grid
/// (state 0 and the last state always exact), linear interpolation in
/// between. Stride 1 disables interpolation.
pub fn build_table(
    params: &ChainParams,
    mbs_id: usize,
    n_states: usize,
    grid_stride: usize,
    cfg: &IndexConfig,
) -> Result<IndexTable, IndexError> {
    assert!(grid_stride >= 1, "stride must be at least 1");
    assert!(n_states >= 1);

    let mut grid: Vec<usize> = (0..n_states).step_by(grid_stride).collect();
    if *grid.last().expect("non-empty grid") != n_states - 1 {
        grid.push(n_states - 1);
    }

    let exact_values: Vec<(usize, f64)> = grid
        .par_iter()
        .map(|&x| {
            let w = match cfg.method {
                IndexMethod::Direct => index_direct(params, x)?,
                IndexMethod::Iterative => {
                    index_iterate_adaptive(params, x, cfg, 8)?.lambda_star
                }
                IndexMethod::Bisection => {
                    let hi = params.holding_cost * (x as f64 + 2.0);
                    index_bisect(params, x, -1.0, hi.max(1.0), 1e-8)?
                }
            };
            Ok((x, w))
        })
        .collect::<Result<_, IndexError>>()?;

    let mut values = vec![f64::NAN; n_states];
    let mut exact = vec![false; n_states];
    for &(x, w) in &exact_values {
        values[x] = w;
        exact[x] = true;
    }
    for pair in exact_values.windows(2) {
        let (x0, w0) = pair[0];
        let (x1, w1) = pair[1];
        for x in x0 + 1..x1 {
            let frac = (x - x0) as f64 / (x1 - x0) as f64;
            values[x] = w0 + frac * (w1 - w0);
        }
    }

    let residuals: Vec<f64> = values
        .par_iter()
        .enumerate()
        .map(|(x, &w)| Ok(indifference_residual(params, x, w)?.abs()))
        .collect::<Result<_, IndexError>>()?;

    let table = IndexTable { mbs_id, values, residuals, exact, method: cfg.method };
    if !cfg.allow_non_monotone {
        if let Some((state, prev_value, value)) = table.monotonicity_violation() {
            return Err(IndexError::NonMonotoneTable {
                state,
                value,
                prev_state: state - 1,
                prev_value,
            });
        }
    }
    Ok(table)
}

/// `(λ, t(λ))` pairs of a threshold sweep and whether they certify
/// indexability (non-decreasing thresholds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub pairs: Vec<(f64, i64)>,
    pub non_decreasing: bool,
    /// Scan-edge diagnostics encountered (threshold search hit its bound).
    pub edge_warnings: usize,
}

/// Runs [`optimal_threshold`] across a sorted tax grid.
pub fn indexability_sweep(
    params: &ChainParams,
    lambda_grid: &[f64],
) -> Result<SweepReport, IndexError> {
    if lambda_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(IndexError::UnsortedGrid);
    }
    let mut pairs = Vec::with_capacity(lambda_grid.len());
    let mut edge_warnings = 0;
    for &lambda in lambda_grid {
        let scan = optimal_threshold(params, lambda, DEFAULT_T_MAX);
        if scan.edge_warning {
            edge_warnings += 1;
        }
        pairs.push((lambda, scan.threshold));
    }
    let non_decreasing = pairs.windows(2).all(|w| w[0].1 <= w[1].1);
    Ok(SweepReport { pairs, non_decreasing, edge_warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(p: f64, r: f64, c: f64) -> ChainParams {
        ChainParams::new(p, r, c).unwrap()
    }

    fn reference() -> ChainParams {
        params(0.4, 0.5, 1.0)
    }

    #[test]
    fn index_at_zero_matches_closed_form() {
        // Threshold-0 algebra gives W(0) = C·p(1−r)/r exactly.
        for (p, r, c) in [(0.4, 0.5, 1.0), (0.2, 0.7, 3.0), (0.9, 0.42, 25.0)] {
            let w = index_direct(&params(p, r, c), 0).unwrap();
            assert_abs_diff_eq!(w, c * p * (1.0 - r) / r, epsilon = 1e-9);
        }
    }

    #[test]
    fn direct_root_is_a_fixed_point_of_the_iteration() {
        let pr = reference();
        let star = index_direct(&pr, 3).unwrap();
        let cfg = IndexConfig { lambda_init: star, ..Default::default() };
        let out = index_iterate(&pr, 3, &cfg).unwrap();
        assert_eq!(out.iters, 1);
        assert_abs_diff_eq!(out.lambda_star, star, epsilon = 1e-7);
    }

    #[test]
    fn iterative_and_direct_agree_across_states() {
        let pr = reference();
        let cfg = IndexConfig { alpha: 0.5, ..Default::default() };
        for x in 0..=20 {
            let direct = index_direct(&pr, x).unwrap();
            let iter = index_iterate(&pr, x, &cfg).unwrap();
            assert!(
                (direct - iter.lambda_star).abs() <= 1e-6,
                "state {x}: direct {direct} vs iterative {}",
                iter.lambda_star
            );
            assert!(iter.residual <= INDEX_RESIDUAL_TOL);
        }
    }

    #[test]
    fn bisection_agrees_with_direct() {
        let pr = reference();
        for x in [0usize, 1, 3, 7, 12] {
            let direct = index_direct(&pr, x).unwrap();
            let bisect = index_bisect(&pr, x, -1.0, 2.0, 1e-8).unwrap();
            assert!(
                (direct - bisect).abs() <= 1e-6,
                "state {x}: direct {direct} vs bisect {bisect}"
            );
        }
    }

    #[test]
    fn oversized_step_fails_then_halving_recovers() {
        let pr = reference();
        let cfg = IndexConfig { alpha: 50.0, max_iters: 200, ..Default::default() };
        match index_iterate(&pr, 2, &cfg) {
            Err(IndexError::NoConvergence { last_step, .. }) => {
                assert!(last_step > cfg.conv_tol);
            }
            other => panic!("expected oscillation divergence, got {other:?}"),
        }
        let recovered = index_iterate_adaptive(&pr, 2, &cfg, 8).unwrap();
        let direct = index_direct(&pr, 2).unwrap();
        assert!((recovered.lambda_star - direct).abs() <= 1e-6);
    }

    #[test]
    fn double_step_still_converges_here() {
        // α = 2 is documented as potentially oscillatory; on this family the
        // discrepancy slope stays in (−1, 0), so it contracts and agrees.
        let pr = reference();
        let cfg = IndexConfig { alpha: 2.0, ..Default::default() };
        let out = index_iterate(&pr, 4, &cfg).unwrap();
        let direct = index_direct(&pr, 4).unwrap();
        assert!((out.lambda_star - direct).abs() <= 1e-6);
    }

    #[test]
    fn vanishing_arrival_rate_keeps_indices_finite_and_consistent() {
        let pr = params(1e-6, 0.5, 1.0);
        for x in [0usize, 2, 5] {
            let direct = index_direct(&pr, x).unwrap();
            assert!(direct.is_finite());
            let cfg = IndexConfig::default();
            let iter = index_iterate(&pr, x, &cfg).unwrap();
            assert!((direct - iter.lambda_star).abs() <= 1e-6);
        }
        let bisect = index_bisect(&pr, 1, -1.0, 1.0, 1e-8).unwrap();
        let direct = index_direct(&pr, 1).unwrap();
        assert!((bisect - direct).abs() <= 1e-6);
    }

    #[test]
    fn optimal_action_flips_exactly_once_along_the_tax_axis() {
        let pr = reference();
        let state = 3;
        let opts = bisect_rvi_options(state);
        let mut warm = None;
        let mut flips = 0;
        let mut prev = None;
        let mut lambda = -1.0;
        while lambda <= 10.0 {
            let action = optimal_action_at(&pr, state, lambda, &opts, &mut warm).unwrap();
            if let Some(p) = prev {
                if p != action {
                    flips += 1;
                    assert_eq!(p, Action::Passive, "flip must be Passive -> Active");
                }
            }
            prev = Some(action);
            lambda += 0.1;
        }
        assert_eq!(flips, 1);
    }

    #[test]
    fn table_with_stride_one_equals_pointwise_direct() {
        let pr = reference();
        let cfg = IndexConfig::default();
        let table = build_table(&pr, 1, 12, 1, &cfg).unwrap();
        assert!(table.exact.iter().all(|&e| e));
        for (x, &w) in table.values.iter().enumerate() {
            assert_eq!(w, index_direct(&pr, x).unwrap());
        }
        assert!(table.max_exact_residual() <= INDEX_RESIDUAL_TOL);
        assert!(table.monotonicity_violation().is_none());
    }

    #[test]
    fn strided_table_interpolates_within_five_percent_of_range() {
        let pr = reference();
        let cfg = IndexConfig::default();
        let exact = build_table(&pr, 1, 21, 1, &cfg).unwrap();
        let strided = build_table(&pr, 1, 21, 4, &cfg).unwrap();
        let range = exact.values.last().unwrap() - exact.values.first().unwrap();
        let max_dev = exact
            .values
            .iter()
            .zip(&strided.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(
            max_dev <= 0.05 * range,
            "interpolation deviation {max_dev} exceeds 5% of range {range}"
        );
        assert!(strided.monotonicity_violation().is_none());
    }

    #[test]
    fn non_monotone_values_are_detected() {
        let table = IndexTable {
            mbs_id: 1,
            values: vec![0.1, 0.3, 0.2],
            residuals: vec![0.0; 3],
            exact: vec![true; 3],
            method: IndexMethod::Direct,
        };
        let (state, prev, val) = table.monotonicity_violation().unwrap();
        assert_eq!(state, 2);
        assert!(val < prev);
    }

    #[test]
    fn clamped_lookup_saturates_at_the_top_entry() {
        let table = IndexTable {
            mbs_id: 1,
            values: vec![0.1, 0.2, 0.4],
            residuals: vec![0.0; 3],
            exact: vec![true; 3],
            method: IndexMethod::Direct,
        };
        assert_eq!(table.value_clamped(1), 0.2);
        assert_eq!(table.value_clamped(99), 0.4);
    }

    #[test]
    fn sweep_is_non_decreasing_and_rejects_unsorted_grids() {
        let pr = reference();
        let grid: Vec<f64> = (0..=140).map(|k| -10.0 + 0.5 * k as f64).collect();
        let report = indexability_sweep(&pr, &grid).unwrap();
        assert!(report.non_decreasing);
        assert_eq!(report.edge_warnings, 0);

        assert!(matches!(
            indexability_sweep(&pr, &[1.0, 0.0]),
            Err(IndexError::UnsortedGrid)
        ));
    }

    #[test]
    fn sweep_limits_match_the_index_table() {
        let pr = reference();
        let w0 = index_direct(&pr, 0).unwrap();
        let w5 = index_direct(&pr, 5).unwrap();
        let below = indexability_sweep(&pr, &[w0 - 0.05]).unwrap();
        assert_eq!(below.pairs[0].1, -1);
        let above = indexability_sweep(&pr, &[w5 + 0.05]).unwrap();
        assert!(above.pairs[0].1 >= 5);
    }

    #[test]
    fn thresholds_between_consecutive_indices_match_the_state() {
        let pr = reference();
        let cfg = IndexConfig::default();
        let table = build_table(&pr, 1, 12, 1, &cfg).unwrap();
        for x in 0..10 {
            let (w0, w1) = (table.values[x], table.values[x + 1]);
            if w1 - w0 < 1e-9 {
                continue;
            }
            let lambda = 0.5 * (w0 + w1);
            let scan = optimal_threshold(&pr, lambda, DEFAULT_T_MAX);
            assert_eq!(scan.threshold, x as i64, "between W({x}) and W({})", x + 1);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        // Affinity witness for the direct method: D(x, ·) is affine, so its
        // value at the midpoint equals the average of the endpoints.
        #[test]
        fn discrepancy_is_affine_in_the_tax(
            p in 0.05f64..0.9,
            r in 0.1f64..0.9,
            c in 0.1f64..20.0,
            x in 0usize..12,
        ) {
            let pr = params(p, r, c);
            let d0 = indifference_residual(&pr, x, 0.0).unwrap();
            let dh = indifference_residual(&pr, x, 0.5).unwrap();
            let d1 = indifference_residual(&pr, x, 1.0).unwrap();
            let scale = 1.0f64.max(d0.abs()).max(d1.abs());
            prop_assert!((dh - 0.5 * (d0 + d1)).abs() <= 1e-9 * scale);
        }

        #[test]
        fn tables_are_monotone_on_random_stable_instances(
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r: f64 = rng.random_range(0.25..0.9);
            let hi_p = (r / (1.0 + r) - 1e-3).max(0.05);
            let p: f64 = rng.random_range(0.02..hi_p.max(0.021));
            let c: f64 = rng.random_range(0.5..10.0);
            let pr = params(p, r, c);
            let table = build_table(&pr, 1, 10, 1, &IndexConfig::default()).unwrap();
            prop_assert!(table.monotonicity_violation().is_none());
        }
    }
}
