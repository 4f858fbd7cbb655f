//! Queue-aware user association toolkit: decoupled average-cost chains,
//! Whittle index computation, association policies, and a deterministic
//! slotted-time network simulator.
//!
//! The pieces:
//!
//! - [`chain`]: the single-station controlled Markov chain (parameters,
//!   transition kernels, rate normalization, drift diagnostic).
//! - [`solver`]: exact threshold-policy evaluation, stationary laws,
//!   relative/discounted value iteration oracles, and the structural checks
//!   (submodularity, cumulative-mass monotonicity, threshold scans).
//! - [`index`]: the Whittle index per station via fixed-point iteration,
//!   direct affine solve, and bisection over the optimal action; index
//!   tables with optional interpolation and the indexability sweep.
//! - [`policies`]: the six association rules that pick a station for an
//!   arriving user.
//! - [`sim`]: seeded slotted-time simulation of the whole network with
//!   per-slot traces, replicate comparisons, and common random numbers.

pub mod chain;
pub mod error;
pub mod index;
pub mod policies;
pub mod sim;
pub mod solver;

pub use chain::{
    drift_sigma_bound, kernel, lyapunov_drift_check, normalize_rates, Action, ChainParams,
    DriftCheck, Kernel, NetworkParams,
};
pub use error::{IndexError, ParamError, SimError, SolverError};
pub use index::{
    build_table, index_bisect, index_direct, index_iterate, index_iterate_adaptive,
    indexability_sweep, indifference_residual, IndexConfig, IndexMethod, IndexTable,
    IterateOutcome, SweepReport, INDEX_RESIDUAL_TOL,
};
pub use policies::{select, Decision, IndexOrder, PolicyKind};
pub use sim::{
    run, run_replicates, run_traced, ArrivalMode, Buffer, ComparisonConfig, MetricStats,
    PolicyStats, SimConfig, SimResult, SlotTraceRow,
};
pub use solver::{
    discounted_vi, evaluate_threshold, evaluate_threshold_dense, evaluation_residual,
    optimal_threshold, rvi_optimal, rvi_optimal_from, stationary_average_cost,
    stationary_distribution, submodularity_check, submodularity_of_matrix, threshold_structure,
    DiscountedSolution, MassViolation, RviOptions, RviSolution, StationaryDistribution,
    SubmodularityReport, SubmodularityViolation, ThresholdPolicy, ThresholdScan, ValueSolution,
    DEFAULT_T_MAX, EVAL_RESIDUAL_TOL,
};
