//! Association policies: pick the station that admits an arriving user.
//!
//! All policies score only the candidate (non-full) stations:
//!
//! - load-based: fewest queued users, ties uniformly at random;
//! - SNR-based: highest rate, ties by smallest station index;
//! - throughput-based: highest `r_i/(X_i+1)`, ties uniformly at random;
//! - mixed: highest `w·r_i + r_i/(X_i+1)`, ties uniformly at random;
//! - random: uniform over candidates;
//! - Whittle: smallest index `W_i(X_i)` from the per-station tables, ties by
//!   smallest station index (a `largest` ordering is available for
//!   sensitivity checks).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::index::IndexTable;

/// Which end of the index ordering admits the arrival.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IndexOrder {
    #[default]
    Smallest,
    Largest,
}

/// Default weight on the rate term of the mixed policy.
pub const MIXED_WEIGHT_DEFAULT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Whittle { order: IndexOrder },
    LoadBased,
    SnrBased,
    ThroughputBased,
    Mixed { weight: f64 },
    Random,
}

impl PolicyKind {
    pub fn whittle() -> Self {
        PolicyKind::Whittle { order: IndexOrder::Smallest }
    }

    pub fn mixed() -> Self {
        PolicyKind::Mixed { weight: MIXED_WEIGHT_DEFAULT }
    }

    /// Configuration name (`whittle|load|snr|throughput|mixed|random`).
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Whittle { .. } => "whittle",
            PolicyKind::LoadBased => "load",
            PolicyKind::SnrBased => "snr",
            PolicyKind::ThroughputBased => "throughput",
            PolicyKind::Mixed { .. } => "mixed",
            PolicyKind::Random => "random",
        }
    }

    pub fn needs_tables(&self) -> bool {
        matches!(self, PolicyKind::Whittle { .. })
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "whittle" => Ok(PolicyKind::whittle()),
            "load" => Ok(PolicyKind::LoadBased),
            "snr" => Ok(PolicyKind::SnrBased),
            "throughput" => Ok(PolicyKind::ThroughputBased),
            "mixed" => Ok(PolicyKind::mixed()),
            "random" => Ok(PolicyKind::Random),
            other => Err(format!(
                "unknown policy '{other}' (expected whittle|load|snr|throughput|mixed|random)"
            )),
        }
    }
}

/// Outcome of routing one arrival.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    /// Internal index of the admitting station.
    Assigned(usize),
    /// Every buffer was full.
    Blocked,
}

/// Applies `kind` to the candidate stations.
///
/// `occupancies` and `rates` cover all stations in internal order;
/// `candidates` lists the non-full stations. Whittle requires `tables` to
/// cover every candidate occupancy (validated by the simulation before any
/// run; lookups clamp to the top entry as a last resort).
pub fn select<R: Rng + ?Sized>(
    kind: &PolicyKind,
    occupancies: &[u32],
    rates: &[f64],
    tables: &[IndexTable],
    candidates: &[usize],
    rng: &mut R,
) -> Decision {
    if candidates.is_empty() {
        return Decision::Blocked;
    }
    let chosen = match kind {
        PolicyKind::Random => candidates[rng.random_range(0..candidates.len())],
        PolicyKind::LoadBased => {
            pick_random_tie(candidates, rng, |i| -(occupancies[i] as f64))
        }
        PolicyKind::SnrBased => pick_first_tie(candidates, |i| rates[i]),
        PolicyKind::ThroughputBased => {
            pick_random_tie(candidates, rng, |i| rates[i] / (occupancies[i] as f64 + 1.0))
        }
        PolicyKind::Mixed { weight } => pick_random_tie(candidates, rng, |i| {
            weight * rates[i] + rates[i] / (occupancies[i] as f64 + 1.0)
        }),
        PolicyKind::Whittle { order } => {
            let sign = match order {
                IndexOrder::Smallest => -1.0,
                IndexOrder::Largest => 1.0,
            };
            pick_first_tie(candidates, |i| sign * tables[i].value_clamped(occupancies[i] as usize))
        }
    };
    debug_assert!(candidates.contains(&chosen));
    Decision::Assigned(chosen)
}

/// Argmax of `score`, ties broken by the earliest candidate.
fn pick_first_tie(candidates: &[usize], mut score: impl FnMut(usize) -> f64) -> usize {
    let mut best = candidates[0];
    let mut best_score = score(best);
    for &i in &candidates[1..] {
        let s = score(i);
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

/// Argmax of `score`, ties broken uniformly at random among the tied set.
fn pick_random_tie<R: Rng + ?Sized>(
    candidates: &[usize],
    rng: &mut R,
    mut score: impl FnMut(usize) -> f64,
) -> usize {
    let mut tied: Vec<usize> = vec![candidates[0]];
    let mut best_score = score(candidates[0]);
    for &i in &candidates[1..] {
        let s = score(i);
        if s > best_score {
            best_score = s;
            tied.clear();
            tied.push(i);
        } else if s == best_score {
            tied.push(i);
        }
    }
    if tied.len() == 1 {
        tied[0]
    } else {
        tied[rng.random_range(0..tied.len())]
    }
}
