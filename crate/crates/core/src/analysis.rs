//! Post-hoc trace analytics: pending/latency series, bound conformance,
//! milestone-window checks, and a conservative instability trend detector.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::engine::Trace;
use crate::model::{Round, TxId};
use crate::sched_centralized::CentralizedBounds;
use crate::sched_distributed::DistributedBounds;
use crate::{Error, Result};

/// The pending/latency guarantees a run claims, if any.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BoundSpec {
    pub pending: u128,
    pub latency: u128,
}

impl From<&CentralizedBounds> for BoundSpec {
    fn from(b: &CentralizedBounds) -> Self {
        BoundSpec {
            pending: b.pending_bound as u128,
            latency: b.latency_bound as u128,
        }
    }
}

impl From<&DistributedBounds> for BoundSpec {
    fn from(b: &DistributedBounds) -> Self {
        BoundSpec {
            pending: b.pending_bound,
            latency: b.latency_bound,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Quantity {
    Pending,
    Latency,
    Conservation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BoundViolation {
    pub round: Round,
    pub quantity: Quantity,
    pub observed: u128,
    pub bound: u128,
}

/// Transactions generated in one milestone interval that failed to commit by
/// the end of the next.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MilestoneFailure {
    pub interval: u64,
    pub tx_ids: Vec<TxId>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilityReport {
    pub generated: u64,
    pub committed: u64,
    pub max_pending: u64,
    pub max_latency: Option<u64>,
    pub mean_latency: Option<f64>,
    pub bound_violations: Vec<BoundViolation>,
    pub milestone_failures: Vec<MilestoneFailure>,
    /// False when the trace was too short for the milestone check (fewer
    /// than two intervals) or no interval length was given.
    pub milestone_checked: bool,
    /// Least-squares slope of the pending series over the trailing half of
    /// the trace, kept exact.
    #[serde(skip)]
    pub growth_slope: Option<(i128, i128)>,
    pub growth_slope_exact: Option<String>,
    pub growth_slope_f64: Option<f64>,
    /// Positive slope with pending at the horizon at least twice the
    /// midpoint value.
    pub unstable: bool,
}

impl StabilityReport {
    pub fn passed(&self) -> bool {
        self.bound_violations.is_empty() && self.milestone_failures.is_empty()
    }

    /// Human-readable summary table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("generated            {}\n", self.generated));
        out.push_str(&format!("committed            {}\n", self.committed));
        out.push_str(&format!("max pending          {}\n", self.max_pending));
        match self.max_latency {
            Some(l) => out.push_str(&format!("max latency          {l}\n")),
            None => out.push_str("max latency          -\n"),
        }
        match self.mean_latency {
            Some(l) => out.push_str(&format!("mean latency         {l:.3}\n")),
            None => out.push_str("mean latency         -\n"),
        }
        match (&self.growth_slope_exact, self.growth_slope_f64) {
            (Some(exact), Some(f)) => {
                out.push_str(&format!("growth slope         {exact} ({f:.6})\n"))
            }
            _ => out.push_str("growth slope         -\n"),
        }
        out.push_str(&format!("unstable trend       {}\n", self.unstable));
        out.push_str(&format!(
            "milestone check      {}\n",
            if !self.milestone_checked {
                "skipped (no interval claimed, or trace shorter than two intervals)".to_string()
            } else if self.milestone_failures.is_empty() {
                "ok".to_string()
            } else {
                format!("{} failing interval(s)", self.milestone_failures.len())
            }
        ));
        out.push_str(&format!(
            "bound violations     {}\n",
            self.bound_violations.len()
        ));
        for v in &self.bound_violations {
            out.push_str(&format!(
                "  round {:>8}  {:?} {} > {}\n",
                v.round, v.quantity, v.observed, v.bound
            ));
        }
        for f in &self.milestone_failures {
            out.push_str(&format!(
                "  interval {:>5}  {} transaction(s) late\n",
                f.interval,
                f.tx_ids.len()
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

fn gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Least-squares slope of `(x, y)` with integer inputs, as a reduced exact
/// fraction. `None` when fewer than two points.
fn exact_slope(points: &[(u64, u64)]) -> Option<(i128, i128)> {
    let n = points.len() as i128;
    if n < 2 {
        return None;
    }
    let sx: i128 = points.iter().map(|&(x, _)| x as i128).sum();
    let sy: i128 = points.iter().map(|&(_, y)| y as i128).sum();
    let sxy: i128 = points.iter().map(|&(x, y)| x as i128 * y as i128).sum();
    let sxx: i128 = points.iter().map(|&(x, _)| (x as i128) * (x as i128)).sum();
    let num = n * sxy - sx * sy;
    let den = n * sxx - sx * sx;
    if den == 0 {
        return None;
    }
    let g = gcd(num, den).max(1);
    let sign = if den < 0 { -1 } else { 1 };
    Some((sign * num / g, sign * den / g))
}

/// Computes the full report for a finished trace.
///
/// `bounds` carries the pending/latency guarantees to check, if the run
/// claims any; `interval_len` enables the milestone check (every transaction
/// generated in interval j must commit by the end of interval j+1, intervals
/// anchored at round 1).
pub fn analyze(
    trace: &Trace,
    bounds: Option<&BoundSpec>,
    interval_len: Option<u64>,
) -> StabilityReport {
    let horizon = trace.rounds.len() as u64;
    let mut generated = 0u64;
    let mut committed = 0u64;
    let mut max_pending = 0u64;
    let mut violations = Vec::new();
    let mut gen_round: BTreeMap<TxId, Round> = BTreeMap::new();
    let mut commit_round: BTreeMap<TxId, Round> = BTreeMap::new();

    for r in &trace.rounds {
        generated += r.generated.len() as u64;
        committed += r.outcome.committed.len() as u64;
        for t in &r.generated {
            gen_round.insert(t.id, t.gen_round);
        }
        for &id in &r.outcome.committed {
            commit_round.insert(id, r.outcome.round);
        }
        // Conservation re-derived independently of the engine's counter.
        if r.pending_after != generated - committed {
            violations.push(BoundViolation {
                round: r.outcome.round,
                quantity: Quantity::Conservation,
                observed: r.pending_after as u128,
                bound: (generated - committed) as u128,
            });
        }
        max_pending = max_pending.max(r.pending_after);
        if let Some(b) = bounds {
            if r.pending_after as u128 > b.pending {
                violations.push(BoundViolation {
                    round: r.outcome.round,
                    quantity: Quantity::Pending,
                    observed: r.pending_after as u128,
                    bound: b.pending,
                });
            }
        }
    }

    let mut latencies: Vec<u64> = Vec::with_capacity(commit_round.len());
    for (id, commit) in &commit_round {
        let gen = gen_round[id];
        let latency = commit - gen;
        latencies.push(latency);
        if let Some(b) = bounds {
            if latency as u128 > b.latency {
                violations.push(BoundViolation {
                    round: *commit,
                    quantity: Quantity::Latency,
                    observed: latency as u128,
                    bound: b.latency,
                });
            }
        }
    }
    let max_latency = latencies.iter().copied().max();
    let mean_latency = (!latencies.is_empty())
        .then(|| latencies.iter().sum::<u64>() as f64 / latencies.len() as f64);

    // Milestone invariant over fixed windows anchored at round 1.
    let mut milestone_failures = Vec::new();
    let mut milestone_checked = false;
    if let Some(ilen) = interval_len {
        assert!(ilen >= 1, "interval length must be positive");
        if horizon >= 2 * ilen {
            milestone_checked = true;
            let mut late: BTreeMap<u64, Vec<TxId>> = BTreeMap::new();
            for (id, &gen) in &gen_round {
                let interval = (gen - 1) / ilen + 1;
                let deadline = (interval + 1) * ilen;
                if deadline > horizon {
                    continue; // the next interval is not fully recorded
                }
                let ok = commit_round.get(id).is_some_and(|&c| c <= deadline);
                if !ok {
                    late.entry(interval).or_default().push(*id);
                }
            }
            milestone_failures = late
                .into_iter()
                .map(|(interval, tx_ids)| MilestoneFailure { interval, tx_ids })
                .collect();
        }
    }

    // Instability trend over the trailing half of the trace.
    let half_start = (horizon / 2) as usize;
    let tail: Vec<(u64, u64)> = trace.rounds[half_start.min(trace.rounds.len())..]
        .iter()
        .map(|r| (r.outcome.round, r.pending_after))
        .collect();
    let growth_slope = exact_slope(&tail);
    let unstable = match growth_slope {
        Some((num, _)) if num > 0 && horizon >= 2 => {
            let mid = trace.rounds[(horizon / 2 - 1) as usize].pending_after;
            trace.final_pending() >= 2 * mid
        }
        _ => false,
    };

    StabilityReport {
        generated,
        committed,
        max_pending,
        max_latency,
        mean_latency,
        bound_violations: violations,
        milestone_failures,
        milestone_checked,
        growth_slope,
        growth_slope_exact: growth_slope.map(|(n, d)| format!("{n}/{d}")),
        growth_slope_f64: growth_slope.map(|(n, d)| n as f64 / d as f64),
        unstable,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceComparison {
    Equal,
    DivergentAt(Round),
}

/// Byte-level comparison of two traces' serialized rounds; configs must
/// match.
pub fn compare_traces(a: &Trace, b: &Trace) -> Result<TraceComparison> {
    if a.config != b.config {
        return Err(Error::InvalidInput(
            "traces come from different configs".into(),
        ));
    }
    for (ra, rb) in a.rounds.iter().zip(&b.rounds) {
        let sa = serde_json::to_string(ra).expect("round serialization cannot fail");
        let sb = serde_json::to_string(rb).expect("round serialization cannot fail");
        if sa != sb {
            return Ok(TraceComparison::DivergentAt(ra.outcome.round));
        }
    }
    if a.rounds.len() != b.rounds.len() {
        return Ok(TraceComparison::DivergentAt(
            a.rounds.len().min(b.rounds.len()) as Round + 1,
        ));
    }
    Ok(TraceComparison::Equal)
}
