//! The decoupled single-station controlled Markov chain.
//!
//! One station is a discrete-time queue with Bernoulli arrivals (probability
//! `p` per slot, admitted or rejected by the controller) and Bernoulli
//! departures (probability `r` per slot while the queue is non-empty):
//!
//! ```text
//! X' = (X + ζu − γ)⁺,   ζ ~ Bern(p), γ ~ Bern(r), u ∈ {0, 1}
//! ```
//!
//! Holding cost `C·X` accrues per slot. The transition kernels here are the
//! exact one-step laws of that recursion:
//!
//! ```text
//! admit  (u=1), x ≥ 1:  x+1 w.p. p(1−r),  x−1 w.p. (1−p)r,  x otherwise
//! admit  (u=1), x = 0:  1   w.p. p(1−r),  0 otherwise
//! reject (u=0), x ≥ 1:  x−1 w.p. r,       x otherwise
//! reject (u=0), x = 0:  0   w.p. 1
//! ```
//!
//! `lyapunov_drift_check` evaluates the geometric-drift diagnostic for
//! `ψ(x) = e^{σx}`: whenever `σ > 0` satisfies `e^σ < r(1−p)/p`, the one-step
//! drift `E[ψ(X′) − ψ(X) | X = x] / ψ(x)` is bounded away from zero from
//! below at every non-empty state, under any action.

use serde::{Deserialize, Serialize};

use crate::error::ParamError;
use crate::solver::ThresholdPolicy;

/// Tolerance for "kernel row sums to one" checks.
pub const KERNEL_SUM_TOL: f64 = 1e-12;

/// Control applied to a station in a slot: admit the arrival or not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    /// Admit an arrival (u = 1).
    Active,
    /// Reject the arrival (u = 0).
    Passive,
}

/// Parameters of one decoupled station chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    /// Per-slot arrival probability, in (0, 1).
    pub arrival_prob: f64,
    /// Per-slot departure probability while non-empty, in (0, 1).
    pub service_prob: f64,
    /// Holding cost per user per slot, > 0.
    pub holding_cost: f64,
}

impl ChainParams {
    pub fn new(arrival_prob: f64, service_prob: f64, holding_cost: f64) -> Result<Self, ParamError> {
        if !(arrival_prob > 0.0 && arrival_prob < 1.0) || !arrival_prob.is_finite() {
            return Err(ParamError::OutOfRange {
                what: "arrival_prob",
                value: arrival_prob,
                constraint: "0 < p < 1",
            });
        }
        if !(service_prob > 0.0 && service_prob < 1.0) || !service_prob.is_finite() {
            return Err(ParamError::OutOfRange {
                what: "service_prob",
                value: service_prob,
                constraint: "0 < r < 1",
            });
        }
        if !(holding_cost > 0.0) || !holding_cost.is_finite() {
            return Err(ParamError::OutOfRange {
                what: "holding_cost",
                value: holding_cost,
                constraint: "C > 0",
            });
        }
        Ok(Self { arrival_prob, service_prob, holding_cost })
    }

    /// Stability of the controlled queue: `p/(1−p) < r`.
    ///
    /// Violations are reported as warnings by callers, never as errors; the
    /// heavy-load experiments intentionally run unstable instances.
    pub fn is_stable(&self) -> bool {
        let p = self.arrival_prob;
        p / (1.0 - p) < self.service_prob
    }

    /// One-step transition law from `state` under `action`.
    pub fn kernel(&self, state: usize, action: Action) -> Kernel {
        kernel(self.arrival_prob, self.service_prob, state, action)
    }
}

/// One-step transition law for raw probabilities (no `ChainParams`
/// validation, so boundary cases like `p = 0` can be inspected).
pub fn kernel(p: f64, r: f64, state: usize, action: Action) -> Kernel {
    let support = match (action, state) {
        (Action::Passive, 0) => vec![(0, 1.0)],
        (Action::Passive, x) => vec![(x - 1, r), (x, 1.0 - r)],
        (Action::Active, 0) => {
            let up = p * (1.0 - r);
            vec![(0, 1.0 - up), (1, up)]
        }
        (Action::Active, x) => vec![
            (x - 1, (1.0 - p) * r),
            (x, (1.0 - p) * (1.0 - r) + p * r),
            (x + 1, p * (1.0 - r)),
        ],
    };
    Kernel { support }
}

/// Sparse one-step transition distribution (at most three support points,
/// sorted by next state).
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub support: Vec<(usize, f64)>,
}

impl Kernel {
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.support.iter().copied()
    }

    /// Probability of moving to `next`.
    pub fn prob(&self, next: usize) -> f64 {
        self.support
            .iter()
            .find(|(z, _)| *z == next)
            .map(|(_, q)| *q)
            .unwrap_or(0.0)
    }

    /// Expectation of `f(next_state)` under this law.
    pub fn expect(&self, mut f: impl FnMut(usize) -> f64) -> f64 {
        self.support.iter().map(|&(z, q)| q * f(z)).sum()
    }

    /// Total mass; equals one within [`KERNEL_SUM_TOL`] for valid inputs.
    pub fn mass(&self) -> f64 {
        self.support.iter().map(|(_, q)| q).sum()
    }
}

/// Normalized rates `r_i = R_i / (max_j R_j + delta)`.
///
/// All outputs land in (0, 1); `delta` controls the gap below one.
pub fn normalize_rates(raw_rates: &[f64], delta: f64) -> Result<Vec<f64>, ParamError> {
    if raw_rates.is_empty() {
        return Err(ParamError::Empty { what: "raw_rates" });
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(ParamError::OutOfRange { what: "delta", value: delta, constraint: "delta > 0" });
    }
    let mut max = f64::NEG_INFINITY;
    for &rate in raw_rates {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(ParamError::OutOfRange {
                what: "raw_rates",
                value: rate,
                constraint: "all rates > 0",
            });
        }
        max = max.max(rate);
    }
    let denom = max + delta;
    Ok(raw_rates.iter().map(|&rate| rate / denom).collect())
}

/// The full network: one chain per station, ordered by non-increasing
/// service probability.
///
/// Construction sorts (stably) by descending rate; each chain keeps its
/// original 1-based position as its label for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    chains: Vec<ChainParams>,
    labels: Vec<usize>,
}

impl NetworkParams {
    pub fn new(chains: Vec<ChainParams>) -> Result<Self, ParamError> {
        if chains.is_empty() {
            return Err(ParamError::Empty { what: "chains" });
        }
        let mut order: Vec<usize> = (0..chains.len()).collect();
        order.sort_by(|&a, &b| {
            chains[b]
                .service_prob
                .partial_cmp(&chains[a].service_prob)
                .expect("service probabilities are finite")
        });
        let labels: Vec<usize> = order.iter().map(|&i| i + 1).collect();
        let chains: Vec<ChainParams> = order.into_iter().map(|i| chains[i]).collect();
        Ok(Self { chains, labels })
    }

    pub fn len(&self) -> usize {
        self.chains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }

    /// Chains in internal (rate-sorted) order.
    pub fn chains(&self) -> &[ChainParams] {
        &self.chains
    }

    /// Original 1-based position of the chain at internal index `idx`.
    pub fn label(&self, idx: usize) -> usize {
        self.labels[idx]
    }

    pub fn rates(&self) -> Vec<f64> {
        self.chains.iter().map(|c| c.service_prob).collect()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.chains.iter().map(|c| c.holding_cost).collect()
    }

    /// Labels of chains violating `p/(1−p) < r`.
    pub fn unstable_labels(&self) -> Vec<usize> {
        self.chains
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_stable())
            .map(|(i, _)| self.labels[i])
            .collect()
    }
}

/// Outcome of the geometric-drift diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DriftCheck {
    /// Maximum drift ratio over the scanned states is `−delta < 0`.
    Pass { max_drift_ratio: f64, delta: f64 },
    /// Some scanned state has non-negative drift ratio.
    Fail { max_drift_ratio: f64 },
    /// No `σ > 0` with `e^σ < r(1−p)/p` exists (or the supplied `σ` falls
    /// outside that interval); the diagnostic does not apply.
    HypothesisViolated {
        /// The bound `r(1−p)/p` that `e^σ` must stay below.
        exp_sigma_bound: f64,
    },
}

impl DriftCheck {
    pub fn is_pass(&self) -> bool {
        matches!(self, DriftCheck::Pass { .. })
    }
}

/// Upper bound `r(1−p)/p` that `e^σ` must stay below for the drift
/// hypothesis; a valid `σ > 0` exists iff this exceeds one, which is
/// exactly the stability condition `p/(1−p) < r`.
pub fn drift_sigma_bound(params: &ChainParams) -> f64 {
    params.service_prob * (1.0 - params.arrival_prob) / params.arrival_prob
}

/// Evaluates `E[ψ(X′) − ψ(X) | X = x] / ψ(x)` with `ψ(x) = e^{σx}` at every
/// state `x ∈ {1, …, max_state}` under the policy's action at `x`, and
/// reports whether the maximum is negative.
pub fn lyapunov_drift_check(
    params: &ChainParams,
    sigma: f64,
    policy: ThresholdPolicy,
    max_state: usize,
) -> DriftCheck {
    let bound = drift_sigma_bound(params);
    if !(sigma > 0.0) || !(sigma.exp() < bound) {
        return DriftCheck::HypothesisViolated { exp_sigma_bound: bound };
    }
    debug_assert!(max_state >= 1);
    let mut max_ratio = f64::NEG_INFINITY;
    for x in 1..=max_state {
        let law = params.kernel(x, policy.action(x));
        // ψ(z)/ψ(x) = e^{σ(z−x)}; the common factor ψ(x) cancels.
        let ratio = law.expect(|z| (sigma * (z as f64 - x as f64)).exp()) - 1.0;
        max_ratio = max_ratio.max(ratio);
    }
    if max_ratio < 0.0 {
        DriftCheck::Pass { max_drift_ratio: max_ratio, delta: -max_ratio }
    } else {
        DriftCheck::Fail { max_drift_ratio: max_ratio }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalize_rates_direct_evaluation() {
        let r = normalize_rates(&[100.0, 50.0], 25.0).unwrap();
        assert_eq!(r, vec![0.8, 0.4]);
        let r = normalize_rates(&[5.0], 5.0).unwrap();
        assert_eq!(r, vec![0.5]);
    }

    #[test]
    fn normalize_rates_rejects_bad_input() {
        assert!(normalize_rates(&[1.0, -2.0], 1.0).is_err());
        assert!(normalize_rates(&[1.0, 0.0], 1.0).is_err());
        assert!(normalize_rates(&[1.0], 0.0).is_err());
        assert!(normalize_rates(&[], 1.0).is_err());
    }

    #[test]
    fn kernel_matches_hand_computed_rows() {
        let params = ChainParams::new(0.4, 0.5, 1.0).unwrap();
        let k = params.kernel(3, Action::Active);
        assert_abs_diff_eq!(k.prob(4), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(k.prob(2), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(k.prob(3), 0.5, epsilon = 1e-15);

        let k = params.kernel(0, Action::Passive);
        assert_eq!(k.support, vec![(0, 1.0)]);

        let k = params.kernel(0, Action::Active);
        assert_abs_diff_eq!(k.prob(1), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(k.prob(0), 0.8, epsilon = 1e-15);
    }

    #[test]
    fn kernel_action_irrelevant_without_arrivals() {
        // Boundary p = 0 is outside ChainParams validation on purpose.
        for x in [0usize, 1, 2, 17, 400] {
            let a = kernel(0.0, 0.3, x, Action::Active);
            let b = kernel(0.0, 0.3, x, Action::Passive);
            for z in x.saturating_sub(1)..=x + 1 {
                assert_abs_diff_eq!(a.prob(z), b.prob(z), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn stability_condition() {
        assert!(ChainParams::new(0.2, 0.5, 1.0).unwrap().is_stable()); // 0.25 < 0.5
        assert!(!ChainParams::new(0.4, 0.5, 1.0).unwrap().is_stable()); // 2/3 > 0.5
        assert!(!ChainParams::new(0.9, 0.5, 1.0).unwrap().is_stable());
    }

    #[test]
    fn chain_params_validation() {
        assert!(ChainParams::new(0.0, 0.5, 1.0).is_err());
        assert!(ChainParams::new(1.0, 0.5, 1.0).is_err());
        assert!(ChainParams::new(0.5, 1.0, 1.0).is_err());
        assert!(ChainParams::new(0.5, 0.5, 0.0).is_err());
        assert!(ChainParams::new(0.5, 0.5, -1.0).is_err());
    }

    #[test]
    fn network_params_sorts_by_rate_and_keeps_labels() {
        let c = |r: f64| ChainParams::new(0.4, r, 1.0).unwrap();
        let net = NetworkParams::new(vec![c(0.50), c(0.55), c(0.45)]).unwrap();
        assert_eq!(net.rates(), vec![0.55, 0.50, 0.45]);
        assert_eq!(net.label(0), 2);
        assert_eq!(net.label(1), 1);
        assert_eq!(net.label(2), 3);
    }

    #[test]
    fn network_params_stable_sort_preserves_equal_rate_order() {
        let mut a = ChainParams::new(0.4, 0.5, 1.0).unwrap();
        let mut b = a;
        a.holding_cost = 1.0;
        b.holding_cost = 2.0;
        let net = NetworkParams::new(vec![a, b]).unwrap();
        assert_eq!(net.label(0), 1);
        assert_eq!(net.label(1), 2);
    }

    // Draw one transition of X' = (X + ζu − γ)⁺ directly.
    fn draw_next(rng: &mut ChaCha8Rng, p: f64, r: f64, x: usize, action: Action) -> usize {
        let zeta = usize::from(rng.random::<f64>() < p);
        let gamma = isize::from(rng.random::<f64>() < r);
        let u = usize::from(action == Action::Active);
        (x as isize + (zeta * u) as isize - gamma).max(0) as usize
    }

    #[test]
    fn kernel_matches_monte_carlo_frequencies() {
        let (p, r) = (0.4, 0.5);
        let n = 1_000_000u32;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (x, action) in [(0, Action::Active), (3, Action::Active), (3, Action::Passive)] {
            let mut counts = std::collections::HashMap::new();
            for _ in 0..n {
                *counts.entry(draw_next(&mut rng, p, r, x, action)).or_insert(0u32) += 1;
            }
            let law = kernel(p, r, x, action);
            for (z, q) in law.iter() {
                let freq = *counts.get(&z).unwrap_or(&0) as f64 / n as f64;
                let se = (q * (1.0 - q) / n as f64).sqrt();
                assert!(
                    (freq - q).abs() <= 3.0 * se,
                    "state {x} action {action:?} -> {z}: freq {freq} vs prob {q}"
                );
            }
        }
    }

    #[test]
    fn drift_hypothesis_violated_under_heavy_load() {
        let params = ChainParams::new(0.9, 0.5, 1.0).unwrap();
        let policy = ThresholdPolicy::new(10).unwrap();
        for sigma in [0.01, 0.5, 2.0] {
            match lyapunov_drift_check(&params, sigma, policy, 50) {
                DriftCheck::HypothesisViolated { exp_sigma_bound } => {
                    assert_abs_diff_eq!(exp_sigma_bound, 0.5 * 0.1 / 0.9, epsilon = 1e-15);
                }
                other => panic!("expected hypothesis violation, got {other:?}"),
            }
        }
    }

    #[test]
    fn drift_hypothesis_requires_sub_unit_load_ratio() {
        // r(1−p)/p < 1 here, so no positive sigma qualifies even though the
        // requested e^σ sits below the bound (σ would be negative).
        let params = ChainParams::new(0.4, 0.45, 1.0).unwrap();
        let policy = ThresholdPolicy::new(5).unwrap();
        let bound = drift_sigma_bound(&params);
        assert!(bound < 1.0);
        let sigma = (0.9 * bound).ln();
        assert!(sigma < 0.0);
        assert!(matches!(
            lyapunov_drift_check(&params, sigma, policy, 50),
            DriftCheck::HypothesisViolated { .. }
        ));
    }

    #[test]
    fn drift_passes_on_stable_instance() {
        // p/(1−p) = 0.25 < r = 0.5, so the hypothesis interval is non-empty.
        let params = ChainParams::new(0.2, 0.5, 1.0).unwrap();
        let policy = ThresholdPolicy::new(10).unwrap();
        let bound = drift_sigma_bound(&params); // 2.0
        assert_abs_diff_eq!(bound, 2.0, epsilon = 1e-15);
        let sigma = (0.9_f64 * bound).ln(); // e^σ = 1.8
        let report = lyapunov_drift_check(&params, sigma, policy, 50);
        match report {
            DriftCheck::Pass { max_drift_ratio, delta } => {
                // Active drift ratio p(1−r)(e^σ−1) + (1−p)r(e^{−σ}−1)
                // = 0.1·0.8 + 0.4·(1/1.8 − 1) = 0.08 − 0.4·(4/9).
                let expected = 0.08 - 0.4 * (4.0 / 9.0);
                assert_abs_diff_eq!(max_drift_ratio, expected, epsilon = 1e-12);
                assert_abs_diff_eq!(delta, -expected, epsilon = 1e-12);
            }
            other => panic!("expected pass, got {other:?}"),
        }
    }

    #[test]
    fn drift_passes_at_interval_midpoint_sigma() {
        // σ = ½·log bound keeps e^σ strictly inside (1, bound).
        let params = ChainParams::new(0.2, 0.5, 1.0).unwrap();
        let sigma = 0.5 * drift_sigma_bound(&params).ln();
        let report = lyapunov_drift_check(&params, sigma, ThresholdPolicy::new(3).unwrap(), 50);
        match report {
            DriftCheck::Pass { delta, .. } => assert!(delta > 0.0),
            other => panic!("expected pass, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn kernel_rows_are_distributions(
            p in 0.0001f64..0.9999,
            r in 0.0001f64..0.9999,
            x in 0usize..10_000,
        ) {
            for action in [Action::Active, Action::Passive] {
                let law = kernel(p, r, x, action);
                prop_assert!(law.support.len() <= 3);
                prop_assert!((law.mass() - 1.0).abs() <= KERNEL_SUM_TOL);
                for (z, q) in law.iter() {
                    prop_assert!(q >= 0.0);
                    match action {
                        // Passive never increases the state.
                        Action::Passive => prop_assert!(z <= x),
                        // Active increases by at most one.
                        Action::Active => prop_assert!(z <= x + 1),
                    }
                    prop_assert!(z + 1 >= x); // drops by at most one
                }
            }
        }
    }
}
