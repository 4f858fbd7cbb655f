//! Seeded slotted-time simulation of the full network.
//!
//! Within a slot `n` the order of events is fixed:
//!
//! 1. record the cost `Σ_i C_i·X_n^i` from beginning-of-slot occupancies;
//! 2. draw the arrival; if one occurs, the policy picks an admitting station
//!    among those with buffer space (or the arrival is blocked when there is
//!    none) and the user is enqueued with timestamp `n`;
//! 3. every station that was occupied *at the beginning of the slot* applies
//!    its departure draw and, on success, dequeues its oldest user.
//!
//! A same-slot arrival therefore never departs in its arrival slot, and the
//! occupancy update is exactly `X' = (X + ζu − γ)⁺` at every non-empty
//! state. Departure draws are generated every slot for every station from
//! per-station streams (see [`rng`]) whether or not they apply, so two
//! policies fed the same seed see identical arrival and departure
//! randomness.
//!
//! Delays are reported inclusively (`departure − arrival + 1` slots; a user
//! occupies at least its arrival slot) with the exclusive convention
//! alongside.

pub mod rng;

use std::collections::VecDeque;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::NetworkParams;
use crate::error::SimError;
use crate::index::IndexTable;
use crate::policies::{select, Decision, PolicyKind};
use rng::{replicate_seed, stream_rng, StreamPurpose};

/// Arrival process of the network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalMode {
    /// One Bernoulli(p) arrival draw per slot.
    Fixed(f64),
    /// The arrival probability itself is redrawn uniformly per slot.
    PerSlotUniform(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Buffer {
    Finite(u32),
    Infinite,
}

impl Buffer {
    pub fn capacity(&self) -> Option<u32> {
        match self {
            Buffer::Finite(c) => Some(*c),
            Buffer::Infinite => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub network: NetworkParams,
    pub policy: PolicyKind,
    /// Number of slots to simulate.
    pub horizon: u64,
    pub arrival: ArrivalMode,
    pub buffer: Buffer,
    pub seed: u64,
    /// `[start, end)` slot range the cost average is taken over.
    pub report_window: (u64, u64),
    /// Keep the per-slot running-average cost series (over the window).
    pub record_series: bool,
}

impl SimConfig {
    pub fn validate(&self, tables: Option<&[IndexTable]>) -> Result<(), SimError> {
        match self.arrival {
            ArrivalMode::Fixed(p) => {
                // p = 0 is permitted for degenerate runs; p = 1 is not.
                if !(0.0..1.0).contains(&p) {
                    return Err(SimError::InvalidConfig(format!(
                        "fixed arrival probability {p} outside [0, 1)"
                    )));
                }
            }
            ArrivalMode::PerSlotUniform(lo, hi) => {
                if !(0.0 <= lo && lo < hi && hi <= 1.0) {
                    return Err(SimError::InvalidConfig(format!(
                        "per-slot uniform range [{lo}, {hi}] must satisfy 0 <= lo < hi <= 1"
                    )));
                }
            }
        }
        if self.horizon == 0 {
            return Err(SimError::InvalidConfig("horizon must be positive".into()));
        }
        let (start, end) = self.report_window;
        if !(start < end && end <= self.horizon) {
            return Err(SimError::InvalidConfig(format!(
                "report window [{start}, {end}) must be non-empty and inside [0, {})",
                self.horizon
            )));
        }
        if let Buffer::Finite(cap) = self.buffer {
            if cap == 0 {
                return Err(SimError::InvalidConfig("finite buffer must hold at least one user".into()));
            }
        }
        if self.policy.needs_tables() {
            let k = self.network.len();
            let tables = tables.ok_or(SimError::MissingTables {
                policy: self.policy.name().into(),
                have: 0,
                need: k,
            })?;
            if tables.len() != k {
                return Err(SimError::MissingTables {
                    policy: self.policy.name().into(),
                    have: tables.len(),
                    need: k,
                });
            }
            // Scored occupancies reach buffer−1 (full stations are never
            // candidates); unbounded buffers clamp to the table top instead.
            if let Buffer::Finite(cap) = self.buffer {
                for (i, table) in tables.iter().enumerate() {
                    if (table.len() as u32) < cap {
                        return Err(SimError::TableTooShort {
                            label: self.network.label(i),
                            len: table.len(),
                            needed: cap as usize - 1,
                        });
                    }
                }
            }
            if tables.iter().any(|t| t.is_empty()) {
                return Err(SimError::InvalidConfig("empty index table".into()));
            }
        }
        Ok(())
    }
}

/// Per-station FIFO queues of arrival timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub queues: Vec<VecDeque<u64>>,
}

impl NetworkState {
    pub fn idle(stations: usize) -> Self {
        Self { queues: vec![VecDeque::new(); stations] }
    }

    pub fn occupancies(&self) -> Vec<u32> {
        self.queues.iter().map(|q| q.len() as u32).collect()
    }
}

/// Randomness consumed by one slot, pre-drawn so the dynamics are a pure
/// function of it.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotDraws {
    /// Arrival probability in force this slot.
    pub arrival_prob: f64,
    pub arrival: bool,
    /// One departure draw per station, applied only where the slot-start
    /// occupancy is positive.
    pub departures: Vec<bool>,
}

/// What happened in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    /// Cost `Σ_i C_i·X_n^i` from beginning-of-slot occupancies.
    pub cost: f64,
    pub arrival: bool,
    /// Internal index of the admitting station.
    pub chosen: Option<usize>,
    pub blocked: bool,
    /// `(station, arrival_slot)` of every departure this slot.
    pub departed: Vec<(usize, u64)>,
}

/// Advances the network by one slot. See the module docs for the in-slot
/// event order.
#[allow(clippy::too_many_arguments)]
pub fn step_with_draws<R: Rng + ?Sized>(
    state: &mut NetworkState,
    slot: u64,
    network: &NetworkParams,
    policy: &PolicyKind,
    tables: &[IndexTable],
    buffer: Buffer,
    draws: &SlotDraws,
    policy_rng: &mut R,
) -> SlotOutcome {
    let occ_before = state.occupancies();
    let cost: f64 = network
        .chains()
        .iter()
        .zip(&occ_before)
        .map(|(c, &x)| c.holding_cost * x as f64)
        .sum();

    let mut chosen = None;
    let mut blocked = false;
    if draws.arrival {
        let candidates: Vec<usize> = (0..network.len())
            .filter(|&i| match buffer {
                Buffer::Finite(cap) => state.queues[i].len() < cap as usize,
                Buffer::Infinite => true,
            })
            .collect();
        let rates = network.rates();
        match select(policy, &occ_before, &rates, tables, &candidates, policy_rng) {
            Decision::Assigned(i) => {
                state.queues[i].push_back(slot);
                chosen = Some(i);
            }
            Decision::Blocked => blocked = true,
        }
    }

    let mut departed = Vec::new();
    for (i, queue) in state.queues.iter_mut().enumerate() {
        if occ_before[i] >= 1 && draws.departures[i] {
            let arrival_slot = queue.pop_front().expect("occupied station has a head user");
            departed.push((i, arrival_slot));
        }
    }

    SlotOutcome { cost, arrival: draws.arrival, chosen, blocked, departed }
}

/// One row of the optional per-slot trace. Occupancies are beginning-of-slot
/// values in internal (rate-sorted) station order.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotTraceRow {
    pub slot: u64,
    pub arrival: bool,
    /// Original 1-based label of the admitting station.
    pub chosen_label: Option<usize>,
    pub blocked: bool,
    pub occupancies: Vec<u32>,
    pub cost: f64,
}

/// Aggregated outcome of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub policy: PolicyKind,
    pub seed: u64,
    pub horizon: u64,
    /// Mean per-slot cost over the report window.
    pub avg_cost: f64,
    /// Running mean of the per-slot cost across the report window
    /// (empty unless `record_series`).
    pub running_avg_series: Vec<f64>,
    /// Mean slots in system per departed user, counting the arrival slot.
    pub avg_delay: f64,
    /// Same with the `departure − arrival` convention.
    pub avg_delay_exclusive: f64,
    /// Blocked arrivals over total arrivals (zero when nothing arrived).
    pub blocking_prob: f64,
    pub zero_arrivals: bool,
    pub arrivals_total: u64,
    pub arrivals_admitted: u64,
    pub blocked: u64,
    pub departures: u64,
    pub final_occupancies: Vec<u32>,
    /// Time-average beginning-of-slot occupancy per station.
    pub mean_occupancy: Vec<f64>,
    pub max_occupancy: Vec<u32>,
    pub per_station_admitted: Vec<u64>,
    pub per_station_departures: Vec<u64>,
    /// Whittle lookups that clamped beyond the table top.
    pub table_clamps: u64,
}

impl SimResult {
    /// Admitted arrivals are either departed or still queued, and every
    /// arrival was admitted or blocked.
    pub fn conservation_holds(&self) -> bool {
        let still_queued: u64 = self.final_occupancies.iter().map(|&x| x as u64).sum();
        self.arrivals_admitted == self.departures + still_queued
            && self.arrivals_total == self.arrivals_admitted + self.blocked
    }
}

pub fn run(cfg: &SimConfig, tables: Option<&[IndexTable]>) -> Result<SimResult, SimError> {
    run_inner(cfg, tables, |_| {})
}

/// [`run`] with a per-slot trace callback.
pub fn run_traced(
    cfg: &SimConfig,
    tables: Option<&[IndexTable]>,
    sink: impl FnMut(&SlotTraceRow),
) -> Result<SimResult, SimError> {
    run_inner(cfg, tables, sink)
}

fn run_inner(
    cfg: &SimConfig,
    tables: Option<&[IndexTable]>,
    mut sink: impl FnMut(&SlotTraceRow),
) -> Result<SimResult, SimError> {
    cfg.validate(tables)?;
    let k = cfg.network.len();
    let tables = tables.unwrap_or(&[]);

    let mut arrival_rng = stream_rng(cfg.seed, StreamPurpose::Arrival, 0);
    let mut policy_rng = stream_rng(cfg.seed, StreamPurpose::Policy, 0);
    let mut departure_rngs: Vec<_> =
        (0..k).map(|i| stream_rng(cfg.seed, StreamPurpose::Departure, i as u32)).collect();
    let rates = cfg.network.rates();

    let mut state = NetworkState::idle(k);
    let (win_start, win_end) = cfg.report_window;
    let mut window_cost_sum = 0.0;
    let mut window_slots = 0u64;
    let mut series = Vec::new();
    if cfg.record_series {
        series.reserve((win_end - win_start) as usize);
    }

    let mut arrivals_total = 0u64;
    let mut blocked_total = 0u64;
    let mut departures_total = 0u64;
    let mut delay_sum = 0u64;
    let mut mean_occupancy = vec![0.0f64; k];
    let mut max_occupancy = vec![0u32; k];
    let mut per_station_admitted = vec![0u64; k];
    let mut per_station_departures = vec![0u64; k];
    let mut table_clamps = 0u64;
    let mut draws =
        SlotDraws { arrival_prob: 0.0, arrival: false, departures: vec![false; k] };

    for slot in 0..cfg.horizon {
        draws.arrival_prob = match cfg.arrival {
            ArrivalMode::Fixed(p) => p,
            ArrivalMode::PerSlotUniform(lo, hi) => lo + (hi - lo) * arrival_rng.random::<f64>(),
        };
        draws.arrival = arrival_rng.random::<f64>() < draws.arrival_prob;
        for (i, dep) in draws.departures.iter_mut().enumerate() {
            *dep = departure_rngs[i].random::<f64>() < rates[i];
        }

        let occ_before = state.occupancies();
        if cfg.policy.needs_tables() && draws.arrival {
            table_clamps += occ_before
                .iter()
                .enumerate()
                .filter(|&(i, &x)| (x as usize) >= tables[i].len())
                .count() as u64;
        }

        let outcome = step_with_draws(
            &mut state,
            slot,
            &cfg.network,
            &cfg.policy,
            tables,
            cfg.buffer,
            &draws,
            &mut policy_rng,
        );

        for (i, &x) in occ_before.iter().enumerate() {
            mean_occupancy[i] += x as f64;
            max_occupancy[i] = max_occupancy[i].max(x);
        }
        if outcome.arrival {
            arrivals_total += 1;
            if outcome.blocked {
                blocked_total += 1;
            } else if let Some(i) = outcome.chosen {
                per_station_admitted[i] += 1;
            }
        }
        for &(i, arrival_slot) in &outcome.departed {
            departures_total += 1;
            per_station_departures[i] += 1;
            delay_sum += slot - arrival_slot + 1;
        }
        if slot >= win_start && slot < win_end {
            window_cost_sum += outcome.cost;
            window_slots += 1;
            if cfg.record_series {
                series.push(window_cost_sum / window_slots as f64);
            }
        }

        sink(&SlotTraceRow {
            slot,
            arrival: outcome.arrival,
            chosen_label: outcome.chosen.map(|i| cfg.network.label(i)),
            blocked: outcome.blocked,
            occupancies: occ_before,
            cost: outcome.cost,
        });
    }

    for m in &mut mean_occupancy {
        *m /= cfg.horizon as f64;
    }
    let arrivals_admitted = arrivals_total - blocked_total;
    let result = SimResult {
        policy: cfg.policy,
        seed: cfg.seed,
        horizon: cfg.horizon,
        avg_cost: window_cost_sum / window_slots as f64,
        running_avg_series: series,
        avg_delay: if departures_total > 0 {
            delay_sum as f64 / departures_total as f64
        } else {
            0.0
        },
        avg_delay_exclusive: if departures_total > 0 {
            (delay_sum - departures_total) as f64 / departures_total as f64
        } else {
            0.0
        },
        blocking_prob: if arrivals_total > 0 {
            blocked_total as f64 / arrivals_total as f64
        } else {
            0.0
        },
        zero_arrivals: arrivals_total == 0,
        arrivals_total,
        arrivals_admitted,
        blocked: blocked_total,
        departures: departures_total,
        final_occupancies: state.occupancies(),
        mean_occupancy,
        max_occupancy,
        per_station_admitted,
        per_station_departures,
        table_clamps,
    };
    debug_assert!(result.conservation_holds());
    Ok(result)
}

/// A multi-policy, multi-seed comparison on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConfig {
    pub network: NetworkParams,
    pub policies: Vec<PolicyKind>,
    pub horizon: u64,
    pub arrival: ArrivalMode,
    pub buffer: Buffer,
    pub base_seed: u64,
    pub n_seeds: usize,
    /// Common random numbers: all policies consume identical arrival and
    /// departure streams per replicate.
    pub crn: bool,
    pub report_window: (u64, u64),
    pub record_series: bool,
}

/// Mean, sample standard deviation, and normal-approximation 95% CI half
/// width over the replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    pub std: f64,
    pub ci_half_width: f64,
}

impl MetricStats {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std, ci_half_width: 1.96 * std / n.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyStats {
    pub policy: PolicyKind,
    pub runs: Vec<SimResult>,
    pub cost: MetricStats,
    pub delay: MetricStats,
    pub blocking: MetricStats,
}

/// Runs every `(policy, replicate)` pair of the comparison; replicate seeds
/// derive deterministically from `base_seed`, shared across policies when
/// `crn` is on. Results are ordered by policy then replicate regardless of
/// scheduling.
pub fn run_replicates(
    cfg: &ComparisonConfig,
    tables: Option<&[IndexTable]>,
) -> Result<Vec<PolicyStats>, SimError> {
    if cfg.n_seeds == 0 {
        return Err(SimError::InvalidConfig("n_seeds must be at least 1".into()));
    }
    if cfg.policies.is_empty() {
        return Err(SimError::InvalidConfig("no policies to compare".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..cfg.policies.len())
        .flat_map(|pi| (0..cfg.n_seeds as u64).map(move |rep| (pi, rep)))
        .collect();
    let results: Vec<SimResult> = jobs
        .par_iter()
        .map(|&(pi, rep)| {
            let salt = if cfg.crn { 0 } else { pi as u64 + 1 };
            let sim_cfg = SimConfig {
                network: cfg.network.clone(),
                policy: cfg.policies[pi],
                horizon: cfg.horizon,
                arrival: cfg.arrival,
                buffer: cfg.buffer,
                seed: replicate_seed(cfg.base_seed, rep, salt),
                report_window: cfg.report_window,
                record_series: cfg.record_series,
            };
            run(&sim_cfg, tables)
        })
        .collect::<Result<_, _>>()?;

    Ok(results
        .chunks(cfg.n_seeds)
        .zip(&cfg.policies)
        .map(|(runs, &policy)| {
            let costs: Vec<f64> = runs.iter().map(|r| r.avg_cost).collect();
            let delays: Vec<f64> = runs.iter().map(|r| r.avg_delay).collect();
            let blocking: Vec<f64> = runs.iter().map(|r| r.blocking_prob).collect();
            PolicyStats {
                policy,
                cost: MetricStats::from_values(&costs),
                delay: MetricStats::from_values(&delays),
                blocking: MetricStats::from_values(&blocking),
                runs: runs.to_vec(),
            }
        })
        .collect())
}
