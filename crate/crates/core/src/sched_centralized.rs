//! The centralized scheduler: keep every pending transaction in one list
//! ordered oldest-first, and each round greedily select a maximal
//! conflict-free head-to-tail subset to invoke. By construction no invoked
//! transaction ever aborts.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::engine::{RoundFeedback, Scheduler};
use crate::model::{Round, Transaction, TxId};
use crate::util::ceil_sqrt;
use crate::Result;

/// Pending transactions ordered by (generation round, id), head = oldest.
#[derive(Clone, Debug, Default)]
pub struct PendingList {
    items: Vec<Transaction>,
}

impl PendingList {
    pub fn new() -> Self {
        PendingList::default()
    }

    /// Appends newly visible transactions at the tail. Callers feed rounds in
    /// order, so the (gen_round, id) ordering is preserved.
    pub fn append(&mut self, txs: &[Transaction]) {
        self.items.extend_from_slice(txs);
        debug_assert!(self
            .items
            .windows(2)
            .all(|w| (w[0].gen_round, w[0].id) < (w[1].gen_round, w[1].id)));
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transaction> {
        self.items.iter()
    }
}

/// Scans the list head to tail; a transaction joins the execute set iff it is
/// conflict-free with everything already selected. Selected transactions are
/// removed from the list. The result is conflict-free and maximal with
/// respect to inclusion among the pending transactions.
pub fn select_execute_set(pending: &mut PendingList) -> Vec<Transaction> {
    let mut execute: Vec<Transaction> = Vec::new();
    let mut remaining = Vec::with_capacity(pending.items.len());
    for tx in pending.items.drain(..) {
        if execute.iter().all(|e| !e.ttype.collides(&tx.ttype)) {
            execute.push(tx);
        } else {
            remaining.push(tx);
        }
    }
    pending.items = remaining;
    execute
}

/// The greedy FIFO scheduler over the whole pending population.
#[derive(Clone, Debug, Default)]
pub struct CentralizedScheduler {
    pending: PendingList,
}

impl CentralizedScheduler {
    pub fn new() -> Self {
        CentralizedScheduler::default()
    }

    pub fn pending(&self) -> &PendingList {
        &self.pending
    }
}

impl Scheduler for CentralizedScheduler {
    fn plan_round(
        &mut self,
        _round: Round,
        newly_visible: &[Transaction],
        feedback: &RoundFeedback,
    ) -> Result<Vec<TxId>> {
        // Selected transactions never abort, so they were already dropped
        // from the list when selected; the feedback carries no news.
        debug_assert!(feedback
            .outcomes
            .iter()
            .all(|(_, fate)| *fate == crate::engine::Fate::Committed));
        self.pending.append(newly_visible);
        // The scan re-runs from scratch over the full list each round.
        Ok(select_execute_set(&mut self.pending)
            .iter()
            .map(|t| t.id)
            .collect())
    }
}

/// Closed-form guarantees of the centralized scheduler.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CentralizedBounds {
    /// Largest admissible generation rate the stability proof covers
    /// (inclusive): max{1/(4k), 1/(4⌈√m⌉)}.
    pub rho_max: (i64, i64),
    /// Pending transactions never exceed 4·b·m.
    pub pending_bound: u64,
    /// Latency never exceeds 8·b·min{k, ⌈√m⌉}.
    pub latency_bound: u64,
    /// Analysis window length 4·b·min{k, ⌈√m⌉}: everything generated in one
    /// window commits by the end of the next.
    pub milestone_len: u64,
}

impl CentralizedBounds {
    pub fn rho_max_ratio(&self) -> Ratio<i64> {
        Ratio::new(self.rho_max.0, self.rho_max.1)
    }
}

/// Evaluates the closed forms for the given system parameters.
pub fn centralized_bounds(m: u32, k: u32, b: u32) -> CentralizedBounds {
    let (m, k, b) = (m as u64, k as u64, b as u64);
    let root = ceil_sqrt(m);
    let denom = 4 * k.min(root);
    let rho_max = Ratio::new(1i64, denom as i64);
    CentralizedBounds {
        rho_max: (*rho_max.numer(), *rho_max.denom()),
        pending_bound: 4 * b * m,
        latency_bound: 8 * b * k.min(root),
        milestone_len: 4 * b * k.min(root),
    }
}
