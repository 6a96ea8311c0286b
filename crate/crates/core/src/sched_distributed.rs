//! The distributed scheduler for the queue-based model.
//!
//! Execution is partitioned into epochs of three equal phases of
//! `L = (n-1)²·n²·m²` rounds each. At an epoch start every processor holding
//! a large block (≥ L pending transactions of one type) elects one such type
//! as *active*. Phase 1 spreads the active types over the abort-feedback bit
//! channel: in a segment dedicated to (sender s, receiver r, object o), the
//! receiver invokes a transaction of its active type each round, and the
//! sender invokes one exactly when it wants to convey a 1 — a collision at o
//! aborts both and reads as 1, a lone commit reads as 0. Phase 2 executes a
//! greedily-selected conflict-free set of active blocks. Phase 3 gives each
//! processor an exclusive slot of L/n rounds to drain, oldest first, its
//! transactions that never entered a large block.
//!
//! With one processor there are no pairs to talk to: Phase 1 is skipped, the
//! processor self-selects its active block, and Phases 2–3 run normally (the
//! size threshold degenerates to `L = m²` since the pair factor is gone).

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::combinatorics::build_block_conflict_graph;
use crate::engine::{Fate, RoundFeedback, Scheduler};
use crate::model::{ObjectId, ProcessorId, Round, Transaction, TxId, TxType};
use crate::util::{binomial, ceil_sqrt};
use crate::{Error, Result};

/// Binary entropy −x·lg x − (1−x)·lg(1−x), with H(0) = H(1) = 0.
pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidInput(format!(
            "entropy argument {x} outside [0, 1]"
        )));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (1.0 - x).log2())
}

/// Closed-form guarantees and constants of the distributed scheduler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributedBounds {
    /// P: number of possible types of weight ≤ k, Σ C(m, i).
    pub type_count: u128,
    /// L: large-block threshold and phase length, (n−1)²·n²·m².
    pub block_size: u128,
    /// C = b·n·P: cap on large-block congestion an interval can create.
    pub interval_block_budget: u128,
    /// 3L rounds.
    pub epoch_len: u128,
    /// Milestone interval, 6·b·n·L·P·min{k, ⌈√m⌉} rounds.
    pub interval_len: u128,
    /// n·L·P.
    pub bulk: u128,
    /// Whether the bulk is sufficiently large for the given rate:
    /// bulk ≥ 1/(1 − 6ρ·min{k, ⌈√m⌉}).
    pub bulk_ok: bool,
    /// Supremum of admissible rates (exclusive): 1/(6·min{k, ⌈√m⌉}).
    pub rho_max: (i64, i64),
    /// Pending never exceeds 2·b·n⁵·m³·P.
    pub pending_bound: u128,
    /// Latency never exceeds 12·b·n⁵·m²·P·min{k, ⌈√m⌉}.
    pub latency_bound: u128,
    /// 2^{H(k/m)·m}, defined for k ≤ m/2.
    pub entropy_estimate: Option<f64>,
    /// P ≤ entropy_estimate, when the estimate applies.
    pub entropy_estimate_ok: Option<bool>,
}

impl DistributedBounds {
    pub fn rho_max_ratio(&self) -> Ratio<i64> {
        Ratio::new(self.rho_max.0, self.rho_max.1)
    }
}

/// Evaluates every closed form for the given parameters.
pub fn distributed_bounds(
    n: u32,
    m: u32,
    k: u32,
    b: u32,
    rho: Ratio<i64>,
) -> Result<DistributedBounds> {
    if k < 1 || k > m {
        return Err(Error::InvalidInput(format!(
            "need 1 <= k <= m, got k={k} m={m}"
        )));
    }
    if n < 1 {
        return Err(Error::InvalidInput("need n >= 1".into()));
    }
    if b < 1 {
        return Err(Error::InvalidInput("need b >= 1".into()));
    }
    let (nu, mu, ku, bu) = (n as u128, m as u128, k as u128, b as u128);
    let type_count: u128 = (1..=k as u64).map(|i| binomial(m as u64, i)).sum();
    let block_size = (nu - 1) * (nu - 1) * nu * nu * mu * mu;
    let minv = (ku).min(ceil_sqrt(m as u64) as u128);
    let interval_block_budget = bu * nu * type_count;
    let interval_len = 6 * bu * nu * block_size * type_count * minv;
    let bulk = nu * block_size * type_count;
    let n5 = nu.pow(5);

    let p = *rho.numer() as i128;
    let q = *rho.denom() as i128;
    // bulk ≥ 1/(1 − 6ρ·minv) with exact arithmetic; requires the denominator
    // positive, i.e. ρ < rho_max.
    let margin = q - 6 * p * minv as i128;
    let bulk_ok = margin > 0
        && (bulk as i128)
            .checked_mul(margin)
            .map(|lhs| lhs >= q)
            .unwrap_or(true);

    let entropy_estimate = if 2 * k <= m {
        Some((binary_entropy(k as f64 / m as f64)? * m as f64).exp2())
    } else {
        None
    };
    let entropy_estimate_ok = entropy_estimate.map(|e| type_count as f64 <= e);

    Ok(DistributedBounds {
        type_count,
        block_size,
        interval_block_budget,
        epoch_len: 3 * block_size,
        interval_len,
        bulk,
        bulk_ok,
        rho_max: (1, 6 * minv as i64),
        pending_bound: 2 * bu * n5 * mu.pow(3) * type_count,
        latency_bound: 12 * bu * n5 * mu.pow(2) * type_count * minv,
        entropy_estimate,
        entropy_estimate_ok,
    })
}

/// Encodes a possibly-absent type as m bits; bit i is set iff object i
/// belongs. Absence encodes as all zeros.
pub fn encode_type(t: Option<&TxType>, m: u32) -> Vec<bool> {
    match t {
        None => vec![false; m as usize],
        Some(t) => {
            assert_eq!(t.width(), m, "type width must match the system size");
            (0..m).map(|o| t.contains(ObjectId(o))).collect()
        }
    }
}

/// Inverse of [`encode_type`]; all-zeros reads as "no type transmitted".
pub fn decode_type(bits: &[bool]) -> Option<TxType> {
    let m = bits.len() as u32;
    let objects: Vec<ObjectId> = bits
        .iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(ObjectId(i as u32)))
        .collect();
    if objects.is_empty() {
        None
    } else {
        Some(TxType::from_objects(m, objects).expect("decoded objects are in range"))
    }
}

/// Deterministic tiling of Phase 1: for each of n−1 repetitions, each ordered
/// processor pair (s, r) and each object o owns a contiguous segment of n·m
/// rounds, subdivided into n slots of m rounds; slot p carries the sender's
/// knowledge of processor p's active type, one bit per round. Ordering is
/// row-major by (repetition, sender, receiver, object).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpochSchedule {
    n: u32,
    m: u32,
}

/// The role a Phase-1 round plays inside its segment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Phase1Role {
    pub repetition: u32,
    pub sender: ProcessorId,
    pub receiver: ProcessorId,
    pub object: ObjectId,
    /// Which processor's table entry this round's bit belongs to.
    pub slot: ProcessorId,
    /// Bit position within the m-bit type encoding.
    pub bit: u32,
    pub segment_index: u64,
    /// Round offset within the segment, in [0, n·m).
    pub segment_offset: u64,
}

impl EpochSchedule {
    /// The distributed model needs at least two processors to communicate.
    pub fn new(n: u32, m: u32) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput(
                "an epoch schedule needs n >= 2 (n = 1 degenerates to Phases 2-3 only)".into(),
            ));
        }
        if m < 1 {
            return Err(Error::InvalidInput("need m >= 1".into()));
        }
        Ok(EpochSchedule { n, m })
    }

    /// Segment length n·m.
    pub fn segment_len(&self) -> u64 {
        self.n as u64 * self.m as u64
    }

    /// Number of segments, (n−1)·n·(n−1)·m.
    pub fn segment_count(&self) -> u64 {
        let n = self.n as u64;
        (n - 1) * n * (n - 1) * self.m as u64
    }

    /// Phase length L = (n−1)²·n²·m².
    pub fn phase_len(&self) -> u64 {
        self.segment_count() * self.segment_len()
    }

    /// Decomposes a Phase-1 offset in [0, L) into its unique role.
    pub fn role_at(&self, offset: u64) -> Phase1Role {
        assert!(offset < self.phase_len());
        let n = self.n as u64;
        let m = self.m as u64;
        let seg_len = self.segment_len();
        let segment_index = offset / seg_len;
        let segment_offset = offset % seg_len;

        let segs_per_rep = n * (n - 1) * m;
        let repetition = (segment_index / segs_per_rep) as u32;
        let within_rep = segment_index % segs_per_rep;
        let pair_index = within_rep / m;
        let object = (within_rep % m) as u32;
        let sender = (pair_index / (n - 1)) as u32;
        let recv_rank = (pair_index % (n - 1)) as u32;
        let receiver = if recv_rank < sender {
            recv_rank
        } else {
            recv_rank + 1
        };

        Phase1Role {
            repetition,
            sender: ProcessorId(sender),
            receiver: ProcessorId(receiver),
            object: ObjectId(object),
            slot: ProcessorId((segment_offset / m) as u32),
            bit: (segment_offset % m) as u32,
            segment_index,
            segment_offset,
        }
    }
}

/// One pending transaction as a processor's queue sees it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PendingTx {
    pub id: TxId,
    pub gen_round: Round,
}

/// Per-type FIFO. Block members always form a prefix: whenever the unflagged
/// suffix reaches L entries, those L oldest unflagged transactions are
/// flagged as one more large block.
#[derive(Clone, Debug, Default)]
struct TypeQueue {
    items: VecDeque<PendingTx>,
    flagged_prefix: usize,
}

impl TypeQueue {
    fn unflagged(&self) -> usize {
        self.items.len() - self.flagged_prefix
    }

    fn first_unflagged(&self) -> Option<PendingTx> {
        self.items.get(self.flagged_prefix).copied()
    }
}

/// In-flight reception of one Phase-1 segment: bits arrive in order via the
/// receiver's own commit/abort feedback.
#[derive(Clone, Debug)]
struct RxBuffer {
    sender: ProcessorId,
    object: ObjectId,
    bits: Vec<bool>,
}

/// One processor's view: per-type queues with large-block bookkeeping, the
/// epoch's active type, and the actives table learned over the channel.
#[derive(Clone, Debug)]
pub struct ProcessorState {
    id: ProcessorId,
    queues: BTreeMap<TxType, TypeQueue>,
    total_pending: u64,
    active_type: Option<TxType>,
    known_actives: BTreeMap<ProcessorId, TxType>,
    selected: bool,
    rx: Option<RxBuffer>,
}

impl ProcessorState {
    pub fn new(id: ProcessorId) -> Self {
        ProcessorState {
            id,
            queues: BTreeMap::new(),
            total_pending: 0,
            active_type: None,
            known_actives: BTreeMap::new(),
            selected: false,
            rx: None,
        }
    }

    pub fn id(&self) -> ProcessorId {
        self.id
    }

    pub fn total_pending(&self) -> u64 {
        self.total_pending
    }

    pub fn active_type(&self) -> Option<&TxType> {
        self.active_type.as_ref()
    }

    pub fn known_actives(&self) -> &BTreeMap<ProcessorId, TxType> {
        &self.known_actives
    }

    pub fn is_selected(&self) -> bool {
        self.selected
    }

    /// Pending transactions of one type.
    pub fn pending_of(&self, t: &TxType) -> u64 {
        self.queues.get(t).map_or(0, |q| q.items.len() as u64)
    }

    /// ⌊count/L⌋ for the type's current pending count.
    pub fn large_block_count(&self, t: &TxType, block_size: u64) -> u64 {
        self.pending_of(t) / block_size
    }

    /// Adds a transaction to its type queue, flagging a fresh large block
    /// whenever the unflagged suffix reaches `block_size`.
    pub fn enqueue(&mut self, tx: &Transaction, block_size: u64) {
        let queue = self.queues.entry(tx.ttype.clone()).or_default();
        queue.items.push_back(PendingTx {
            id: tx.id,
            gen_round: tx.gen_round,
        });
        self.total_pending += 1;
        if queue.unflagged() as u64 == block_size {
            queue.flagged_prefix += block_size as usize;
        }
    }

    /// Among types holding at least `block_size` pending transactions,
    /// returns the one whose newest pending transaction is oldest, ties by
    /// type bitstring; `None` when no block is large.
    pub fn select_active_block(&self, block_size: u64) -> Option<TxType> {
        self.queues
            .iter()
            .filter(|(_, q)| q.items.len() as u64 >= block_size)
            .min_by_key(|(t, q)| {
                let newest = q.items.back().expect("large queue is nonempty");
                (newest.gen_round, (*t).clone())
            })
            .map(|(t, _)| t.clone())
    }

    fn front_of_active(&self) -> Option<PendingTx> {
        let active = self.active_type.as_ref()?;
        self.queues.get(active)?.items.front().copied()
    }

    /// Oldest pending transaction never flagged into a large block, FIFO by
    /// (generation round, id) across all types.
    pub fn oldest_unflagged(&self) -> Option<(PendingTx, TxType)> {
        self.queues
            .iter()
            .filter_map(|(t, q)| q.first_unflagged().map(|p| (p, t.clone())))
            .min_by_key(|(p, _)| (p.gen_round, p.id))
    }

    /// Oldest pending transaction regardless of flags (behind the documented
    /// solo-slot toggle).
    pub fn oldest_any(&self) -> Option<(PendingTx, TxType)> {
        self.queues
            .iter()
            .filter_map(|(t, q)| q.items.front().map(|p| (*p, t.clone())))
            .min_by_key(|(p, _)| (p.gen_round, p.id))
    }

    /// Epoch-start reset: elect the active block, forget everything learned
    /// about other processors, and keep only the own entry in the table.
    pub fn begin_epoch(&mut self, block_size: u64) {
        self.active_type = self.select_active_block(block_size);
        self.known_actives.clear();
        self.selected = false;
        self.rx = None;
        if let Some(t) = &self.active_type {
            self.known_actives.insert(self.id, t.clone());
        }
    }

    /// Removes a transaction the engine reported committed from its queue.
    pub fn apply_commit(&mut self, id: TxId, ttype: &TxType, round: Round) -> Result<()> {
        let queue = self
            .queues
            .get_mut(ttype)
            .ok_or_else(|| Error::ModelViolation {
                round,
                message: format!("committed {id:?} not found in any queue of {:?}", self.id),
            })?;
        let idx =
            queue
                .items
                .iter()
                .position(|p| p.id == id)
                .ok_or_else(|| Error::ModelViolation {
                    round,
                    message: format!(
                        "committed {id:?} missing from its type queue at {:?}",
                        self.id
                    ),
                })?;
        queue.items.remove(idx);
        if idx < queue.flagged_prefix {
            queue.flagged_prefix -= 1;
        }
        if queue.items.is_empty() {
            self.queues.remove(ttype);
        }
        self.total_pending -= 1;
        Ok(())
    }
}

/// Which side of the bit channel a processor plays this round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelRole {
    Sender,
    Receiver,
}

/// The invocation a channel participant makes: the receiver invokes a queued
/// transaction of its active type containing the object whenever it has one;
/// the sender invokes such a transaction exactly when conveying a 1. `None`
/// means the processor stays silent (inactive, object outside its active
/// type, queue empty, or a 0 to send).
pub fn channel_round_action(
    role: ChannelRole,
    bit: bool,
    object: ObjectId,
    state: &ProcessorState,
) -> Option<TxId> {
    let active = state.active_type.as_ref()?;
    if !active.contains(object) {
        return None;
    }
    let front = state.queues.get(active)?.items.front()?;
    match role {
        ChannelRole::Receiver => Some(front.id),
        ChannelRole::Sender => bit.then_some(front.id),
    }
}

/// Greedy common selection of active types: scan in processor-id order, add
/// an entry iff its type is conflict-free with everything already added.
/// All processors of one block-conflict-graph component compute the same
/// selection, and selections of disjoint components never conflict.
pub fn greedy_select_active_types(known: &[(ProcessorId, TxType)]) -> BTreeSet<ProcessorId> {
    debug_assert!(
        known.windows(2).all(|w| w[0].0 < w[1].0),
        "entries ordered by processor id"
    );
    let mut chosen_types: Vec<&TxType> = Vec::new();
    let mut chosen = BTreeSet::new();
    for (pid, t) in known {
        if chosen_types.iter().all(|c| !c.collides(t)) {
            chosen_types.push(t);
            chosen.insert(*pid);
        }
    }
    chosen
}

/// The actives table each active processor should hold after Phase 1: the
/// active types of its whole connected component in the conflict graph over
/// the active blocks. Computed omnisciently for verification.
pub fn expected_knowledge(
    actives: &BTreeMap<ProcessorId, TxType>,
) -> BTreeMap<ProcessorId, BTreeMap<ProcessorId, TxType>> {
    let blocks: Vec<(ProcessorId, TxType)> = actives.iter().map(|(p, t)| (*p, t.clone())).collect();
    let graph = build_block_conflict_graph(&blocks);
    let mut out = BTreeMap::new();
    for component in graph.components() {
        let table: BTreeMap<ProcessorId, TxType> = component
            .iter()
            .map(|&v| graph.labels()[v].clone())
            .collect();
        for &v in &component {
            out.insert(graph.labels()[v].0, table.clone());
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Phase {
    One,
    Two,
    Three,
}

/// Where a round falls in the epoch structure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhasePosition {
    pub epoch: u64,
    pub offset: u64,
    pub phase: Phase,
}

/// What one Phase-1 segment decoded to at its receiver.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentDecode {
    pub receiver: ProcessorId,
    pub sender: ProcessorId,
    pub object: ObjectId,
    pub decoded_at: Round,
    pub slots: Vec<(ProcessorId, Option<TxType>)>,
}

/// Per-epoch record kept for offline verification of the knowledge and
/// selection guarantees.
#[derive(Clone, Debug, Default)]
pub struct EpochAnnotation {
    pub epoch: u64,
    pub start_round: Round,
    pub actives: BTreeMap<ProcessorId, TxType>,
    /// Snapshot at the start of Phase 2, active processors only.
    pub tables_after_phase1: BTreeMap<ProcessorId, BTreeMap<ProcessorId, TxType>>,
    pub selected: BTreeSet<ProcessorId>,
    pub decodes: Vec<SegmentDecode>,
}

#[derive(Clone, Debug)]
enum Purpose {
    ChannelSend,
    ChannelReceive { bit_index: u64 },
    Phase2,
    Phase3,
}

#[derive(Clone, Debug)]
struct Issued {
    proc: usize,
    tx: TxId,
    ttype: TxType,
    purpose: Purpose,
}

/// The full scheduler: one state machine per processor, multiplexed into the
/// engine's single-threaded round loop.
pub struct DistributedScheduler {
    n: u32,
    m: u32,
    block_size: u64,
    phase1_len: u64,
    epoch_len: u64,
    schedule: Option<EpochSchedule>,
    procs: Vec<ProcessorState>,
    last_issued: Vec<Issued>,
    annotations: Vec<EpochAnnotation>,
    serve_flagged_in_solo_slots: bool,
}

impl DistributedScheduler {
    pub fn new(n: u32, m: u32) -> Result<Self> {
        Self::with_options(n, m, false)
    }

    /// `serve_flagged_in_solo_slots` lets Phase 3 fall back to block-member
    /// transactions once no unflagged ones remain, instead of idling.
    pub fn with_options(n: u32, m: u32, serve_flagged_in_solo_slots: bool) -> Result<Self> {
        if n < 1 || m < 1 {
            return Err(Error::InvalidInput("need n >= 1 and m >= 1".into()));
        }
        let schedule = (n >= 2).then(|| EpochSchedule::new(n, m)).transpose()?;
        let block_size = match &schedule {
            Some(s) => s.phase_len(),
            None => (m as u64) * (m as u64),
        };
        let phase1_len = if schedule.is_some() { block_size } else { 0 };
        Ok(DistributedScheduler {
            n,
            m,
            block_size,
            phase1_len,
            epoch_len: phase1_len + 2 * block_size,
            schedule,
            procs: (0..n)
                .map(|p| ProcessorState::new(ProcessorId(p)))
                .collect(),
            last_issued: Vec::new(),
            annotations: Vec::new(),
            serve_flagged_in_solo_slots,
        })
    }

    pub fn block_size(&self) -> u64 {
        self.block_size
    }

    pub fn epoch_len(&self) -> u64 {
        self.epoch_len
    }

    pub fn processor(&self, p: ProcessorId) -> &ProcessorState {
        &self.procs[p.0 as usize]
    }

    pub fn annotations(&self) -> &[EpochAnnotation] {
        &self.annotations
    }

    /// Epoch index, offset, and phase of a (1-based) engine round.
    pub fn position(&self, round: Round) -> PhasePosition {
        let epoch = (round - 1) / self.epoch_len;
        let offset = (round - 1) % self.epoch_len;
        let phase = if offset < self.phase1_len {
            Phase::One
        } else if offset < self.phase1_len + self.block_size {
            Phase::Two
        } else {
            Phase::Three
        };
        PhasePosition {
            epoch,
            offset,
            phase,
        }
    }

    fn apply_feedback(&mut self, feedback: &RoundFeedback, round: Round) -> Result<()> {
        for (txid, fate) in &feedback.outcomes {
            let issued = self
                .last_issued
                .iter()
                .find(|i| i.tx == *txid)
                .ok_or_else(|| Error::ModelViolation {
                    round,
                    message: format!("feedback for {txid:?} does not match any invocation"),
                })?
                .clone();
            if *fate == Fate::Committed {
                self.procs[issued.proc].apply_commit(issued.tx, &issued.ttype, round)?;
            }
            if let Purpose::ChannelReceive { bit_index } = issued.purpose {
                let proc = &mut self.procs[issued.proc];
                if let Some(rx) = proc.rx.as_mut() {
                    debug_assert_eq!(rx.bits.len() as u64, bit_index);
                    rx.bits.push(*fate == Fate::Aborted);
                }
            }
        }
        // A reception completes when the feedback for its last round is in.
        let expected = self.n as usize * self.m as usize;
        for p in 0..self.procs.len() {
            if self.procs[p]
                .rx
                .as_ref()
                .is_some_and(|rx| rx.bits.len() == expected)
            {
                let rx = self.procs[p].rx.take().expect("checked above");
                let mut slots = Vec::with_capacity(self.n as usize);
                for slot in 0..self.n {
                    let m = self.m as usize;
                    let bits = &rx.bits[slot as usize * m..(slot as usize + 1) * m];
                    let decoded = decode_type(bits);
                    if let Some(t) = &decoded {
                        self.procs[p]
                            .known_actives
                            .insert(ProcessorId(slot), t.clone());
                    }
                    slots.push((ProcessorId(slot), decoded));
                }
                if let Some(ann) = self.annotations.last_mut() {
                    ann.decodes.push(SegmentDecode {
                        receiver: self.procs[p].id,
                        sender: rx.sender,
                        object: rx.object,
                        decoded_at: round,
                        slots,
                    });
                }
            }
        }
        Ok(())
    }

    fn start_epoch(&mut self, round: Round) {
        let mut annotation = EpochAnnotation {
            epoch: (round - 1) / self.epoch_len,
            start_round: round,
            ..EpochAnnotation::default()
        };
        for proc in &mut self.procs {
            proc.begin_epoch(self.block_size);
            if let Some(t) = &proc.active_type {
                annotation.actives.insert(proc.id, t.clone());
            }
        }
        self.annotations.push(annotation);
    }

    fn start_phase2(&mut self) {
        let annotation = self.annotations.last_mut().expect("epoch started");
        for proc in &mut self.procs {
            if proc.active_type.is_none() {
                continue;
            }
            annotation
                .tables_after_phase1
                .insert(proc.id, proc.known_actives.clone());
            let known: Vec<(ProcessorId, TxType)> = proc
                .known_actives
                .iter()
                .map(|(p, t)| (*p, t.clone()))
                .collect();
            proc.selected = greedy_select_active_types(&known).contains(&proc.id);
            if proc.selected {
                annotation.selected.insert(proc.id);
            }
        }
    }

    fn sender_bit(&self, sender: usize, slot: ProcessorId, bit: u32) -> bool {
        let entry = self.procs[sender].known_actives.get(&slot);
        encode_type(entry, self.m)[bit as usize]
    }

    fn plan_invocations(&mut self, offset: u64, round: Round) -> Result<Vec<Issued>> {
        let mut issued = Vec::new();
        if offset < self.phase1_len {
            let role = self
                .schedule
                .as_ref()
                .expect("phase 1 exists only with a schedule")
                .role_at(offset);
            let r = role.receiver.0 as usize;
            let s = role.sender.0 as usize;

            let receiver_participates = self.procs[r]
                .active_type()
                .is_some_and(|t| t.contains(role.object));
            if receiver_participates {
                if role.segment_offset == 0 {
                    self.procs[r].rx = Some(RxBuffer {
                        sender: role.sender,
                        object: role.object,
                        bits: Vec::new(),
                    });
                }
                let tx =
                    channel_round_action(ChannelRole::Receiver, false, role.object, &self.procs[r])
                        .ok_or_else(|| Error::ModelViolation {
                            round,
                            message: format!(
                        "receiver {:?} has no transaction of its active type left for the channel",
                        role.receiver
                    ),
                        })?;
                issued.push(Issued {
                    proc: r,
                    tx,
                    ttype: self.procs[r]
                        .active_type()
                        .expect("participant is active")
                        .clone(),
                    purpose: Purpose::ChannelReceive {
                        bit_index: role.segment_offset,
                    },
                });
            }

            let sender_participates = self.procs[s]
                .active_type()
                .is_some_and(|t| t.contains(role.object));
            if sender_participates {
                let bit = self.sender_bit(s, role.slot, role.bit);
                if bit {
                    let tx = channel_round_action(ChannelRole::Sender, true, role.object, &self.procs[s])
                        .ok_or_else(|| Error::ModelViolation {
                            round,
                            message: format!(
                                "sender {:?} has no transaction of its active type left for the channel",
                                role.sender
                            ),
                        })?;
                    issued.push(Issued {
                        proc: s,
                        tx,
                        ttype: self.procs[s]
                            .active_type()
                            .expect("participant is active")
                            .clone(),
                        purpose: Purpose::ChannelSend,
                    });
                }
            }
        } else if offset < self.phase1_len + self.block_size {
            for p in 0..self.procs.len() {
                if !self.procs[p].selected {
                    continue;
                }
                if let Some(front) = self.procs[p].front_of_active() {
                    issued.push(Issued {
                        proc: p,
                        tx: front.id,
                        ttype: self.procs[p]
                            .active_type()
                            .expect("selected is active")
                            .clone(),
                        purpose: Purpose::Phase2,
                    });
                }
            }
        } else {
            let solo_offset = offset - self.phase1_len - self.block_size;
            let slot_len = self.block_size / self.n as u64;
            let owner = (solo_offset / slot_len) as usize;
            let candidate = self.procs[owner].oldest_unflagged().or_else(|| {
                self.serve_flagged_in_solo_slots
                    .then(|| self.procs[owner].oldest_any())
                    .flatten()
            });
            if let Some((ptx, ttype)) = candidate {
                issued.push(Issued {
                    proc: owner,
                    tx: ptx.id,
                    ttype,
                    purpose: Purpose::Phase3,
                });
            }
        }
        Ok(issued)
    }
}

impl Scheduler for DistributedScheduler {
    fn plan_round(
        &mut self,
        round: Round,
        newly_visible: &[Transaction],
        feedback: &RoundFeedback,
    ) -> Result<Vec<TxId>> {
        self.apply_feedback(feedback, round)?;
        for tx in newly_visible {
            let ProcessorId(owner) = tx.owner.ok_or_else(|| Error::ModelViolation {
                round,
                message: format!("{:?} has no owner in the queue-based model", tx.id),
            })?;
            self.procs[owner as usize].enqueue(tx, self.block_size);
        }
        let offset = (round - 1) % self.epoch_len;
        if offset == 0 {
            self.start_epoch(round);
        }
        if offset == self.phase1_len {
            self.start_phase2();
        }
        let issued = self.plan_invocations(offset, round)?;
        let ids = issued.iter().map(|i| i.tx).collect();
        self.last_issued = issued;
        Ok(ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::resolve_round;
    use crate::model::tx_type;

    #[test]
    fn entropy_examples() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        assert!((binary_entropy(0.25).unwrap() - 0.811278).abs() < 1e-6);
        assert!(binary_entropy(-0.1).is_err());
        assert!(binary_entropy(1.1).is_err());
    }

    #[test]
    fn bounds_examples() {
        let b = distributed_bounds(2, 2, 1, 1, Ratio::new(1, 12)).unwrap();
        assert_eq!(b.block_size, 16);
        assert_eq!(b.type_count, 2);
        assert_eq!(b.interval_block_budget, 4);
        assert_eq!(b.epoch_len, 48);
        assert_eq!(b.interval_len, 384);
        assert_eq!(b.bulk, 64);
        assert!(b.bulk_ok, "64 >= 1/(1 - 6/12) = 2");
        assert_eq!(b.rho_max, (1, 6));
        assert_eq!(b.pending_bound, 1024);
        assert_eq!(b.latency_bound, 3072);

        let c = distributed_bounds(2, 4, 2, 1, Ratio::new(1, 12)).unwrap();
        assert_eq!(c.type_count, 10);
        assert_eq!(c.entropy_estimate.map(|e| e.round() as u64), Some(16));
        assert_eq!(c.entropy_estimate_ok, Some(true));
    }

    #[test]
    fn bulk_check_needs_rate_below_max() {
        let b = distributed_bounds(2, 2, 1, 1, Ratio::new(1, 6)).unwrap();
        assert!(!b.bulk_ok, "at rho = rho_max the margin vanishes");
    }

    #[test]
    fn encode_decode_examples() {
        assert_eq!(
            encode_type(Some(&tx_type(4, &[0, 2])), 4),
            vec![true, false, true, false]
        );
        assert_eq!(encode_type(None, 3), vec![false; 3]);
        assert_eq!(decode_type(&[false, false, false]), None);
        for m in 1..=8u32 {
            for bits in 1u32..(1 << m) {
                let objs: Vec<u32> = (0..m).filter(|i| bits >> i & 1 == 1).collect();
                let t = tx_type(m, &objs);
                assert_eq!(decode_type(&encode_type(Some(&t), m)), Some(t));
            }
        }
    }

    #[test]
    fn schedule_tiles_exactly() {
        for (n, m) in [(2u32, 2u32), (3, 2), (2, 1), (4, 3)] {
            let s = EpochSchedule::new(n, m).unwrap();
            let l = s.phase_len();
            let expected = (n as u64 - 1).pow(2) * (n as u64).pow(2) * (m as u64).pow(2);
            assert_eq!(l, expected);
            let mut seen = std::collections::BTreeSet::new();
            for off in 0..l {
                let r = s.role_at(off);
                assert_ne!(r.sender, r.receiver);
                assert!(r.object.0 < m);
                assert!(r.slot.0 < n);
                assert!(r.bit < m);
                assert!(seen.insert((r.segment_index, r.slot, r.bit)));
            }
            assert_eq!(seen.len() as u64, l);
            assert_eq!(s.segment_count() * s.segment_len(), l);
        }
        // Spec'd sizes: n=2, m=2 gives 4 segments of 4 rounds; n=3, m=2
        // gives 24 segments of 6 rounds.
        let s = EpochSchedule::new(2, 2).unwrap();
        assert_eq!((s.segment_count(), s.segment_len()), (4, 4));
        let s = EpochSchedule::new(3, 2).unwrap();
        assert_eq!((s.segment_count(), s.segment_len()), (24, 6));
        assert_eq!(s.phase_len(), 144);
        assert!(EpochSchedule::new(1, 2).is_err());
    }

    #[test]
    fn schedule_order_is_row_major() {
        let s = EpochSchedule::new(3, 2).unwrap();
        let r0 = s.role_at(0);
        assert_eq!(
            (r0.repetition, r0.sender, r0.receiver, r0.object),
            (0, ProcessorId(0), ProcessorId(1), ObjectId(0))
        );
        let r1 = s.role_at(s.segment_len());
        assert_eq!(
            (r1.sender, r1.receiver, r1.object),
            (ProcessorId(0), ProcessorId(1), ObjectId(1))
        );
        let r2 = s.role_at(2 * s.segment_len());
        assert_eq!((r2.sender, r2.receiver), (ProcessorId(0), ProcessorId(2)));
    }

    fn loaded_state(
        id: u32,
        m: u32,
        objs: &[u32],
        count: u64,
        start_round: Round,
    ) -> ProcessorState {
        let mut st = ProcessorState::new(ProcessorId(id));
        let t = tx_type(m, objs);
        for i in 0..count {
            st.enqueue(
                &Transaction {
                    id: TxId(id as u64 * 10_000 + i),
                    ttype: t.clone(),
                    gen_round: start_round + i,
                    owner: Some(ProcessorId(id)),
                    commit_round: None,
                },
                u64::MAX, // no flagging in these unit fixtures
            );
        }
        st.active_type = Some(t);
        st
    }

    #[test]
    fn select_active_block_rules() {
        let block = 4u64;
        let mut st = ProcessorState::new(ProcessorId(0));
        let a = tx_type(2, &[0]);
        let b = tx_type(2, &[1]);
        let mut next = 0u64;
        let mut add = |st: &mut ProcessorState, t: &TxType, round: Round| {
            st.enqueue(
                &Transaction {
                    id: TxId(next),
                    ttype: t.clone(),
                    gen_round: round,
                    owner: Some(ProcessorId(0)),
                    commit_round: None,
                },
                block,
            );
            next += 1;
        };
        assert_eq!(st.select_active_block(block), None);
        // a reaches the threshold, b stays one short.
        for r in 1..=4 {
            add(&mut st, &a, r);
        }
        for r in 1..=3 {
            add(&mut st, &b, r);
        }
        assert_eq!(st.select_active_block(block), Some(a.clone()));
        // Now b is large too, and its newest transaction (round 4) is older
        // than a's newest once a gains a round-9 transaction.
        add(&mut st, &b, 4);
        add(&mut st, &a, 9);
        assert_eq!(st.select_active_block(block), Some(b));
    }

    #[test]
    fn flagging_marks_prefixes_of_l() {
        let block = 3u64;
        let mut st = ProcessorState::new(ProcessorId(0));
        let t = tx_type(1, &[0]);
        for i in 0..7u64 {
            st.enqueue(
                &Transaction {
                    id: TxId(i),
                    ttype: t.clone(),
                    gen_round: i + 1,
                    owner: Some(ProcessorId(0)),
                    commit_round: None,
                },
                block,
            );
        }
        // 7 arrivals with L=3: two flag events, one unflagged survivor.
        let q = st.queues.get(&t).unwrap();
        assert_eq!(q.flagged_prefix, 6);
        assert_eq!(st.oldest_unflagged().unwrap().0.id, TxId(6));
        assert_eq!(st.large_block_count(&t, block), 2);
    }

    #[test]
    fn flag_bookkeeping_matches_a_reference_model_under_commits() {
        // Interleave random enqueues and commits against an independent
        // model of the flagging rule: arrivals flag the L oldest unflagged
        // of their type once the unflagged suffix reaches L, flags are
        // sticky, commits just remove.
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        use std::collections::HashMap;

        let block = 3u64;
        let types = [tx_type(2, &[0]), tx_type(2, &[1]), tx_type(2, &[0, 1])];
        for seed in 0..40u64 {
            let mut rng = StdRng::seed_from_u64(seed);
            let mut st = ProcessorState::new(ProcessorId(0));
            // Model: per type, arrival-ordered (id, gen_round, flagged).
            let mut model: HashMap<TxType, Vec<(TxId, Round, bool)>> = HashMap::new();
            let mut next_id = 0u64;
            for round in 1..=120u64 {
                if rng.random_bool(0.6) {
                    let t = types[rng.random_range(0..types.len())].clone();
                    let tx = Transaction {
                        id: TxId(next_id),
                        ttype: t.clone(),
                        gen_round: round,
                        owner: Some(ProcessorId(0)),
                        commit_round: None,
                    };
                    next_id += 1;
                    st.enqueue(&tx, block);
                    let entry = model.entry(t).or_default();
                    entry.push((tx.id, round, false));
                    if entry.iter().filter(|e| !e.2).count() as u64 == block {
                        for e in entry.iter_mut().filter(|e| !e.2) {
                            e.2 = true;
                        }
                    }
                } else {
                    // Commit a random pending transaction.
                    let candidates: Vec<(TxType, TxId)> = model
                        .iter()
                        .flat_map(|(t, v)| v.iter().map(|e| (t.clone(), e.0)))
                        .collect();
                    if let Some((t, id)) = candidates
                        .get(rng.random_range(0..candidates.len().max(1)))
                        .cloned()
                    {
                        st.apply_commit(id, &t, round).unwrap();
                        let entry = model.get_mut(&t).unwrap();
                        entry.retain(|e| e.0 != id);
                    }
                }
                // Compare the observable surface against the model.
                let total: usize = model.values().map(Vec::len).sum();
                assert_eq!(
                    st.total_pending(),
                    total as u64,
                    "seed {seed} round {round}"
                );
                for t in &types {
                    let pending = model.get(t).map_or(0, Vec::len);
                    assert_eq!(st.pending_of(t), pending as u64);
                    let unflagged = model
                        .get(t)
                        .map_or(0, |v| v.iter().filter(|e| !e.2).count());
                    assert!(unflagged < block as usize, "unflagged suffix stays below L");
                }
                let expected_oldest = model
                    .values()
                    .flatten()
                    .filter(|e| !e.2)
                    .map(|e| (e.1, e.0))
                    .min();
                assert_eq!(
                    st.oldest_unflagged().map(|(p, _)| (p.gen_round, p.id)),
                    expected_oldest,
                    "seed {seed} round {round}"
                );
            }
        }
    }

    #[test]
    fn greedy_selection_examples() {
        let sel = greedy_select_active_types(&[
            (ProcessorId(0), tx_type(2, &[0])),
            (ProcessorId(1), tx_type(2, &[0, 1])),
            (ProcessorId(2), tx_type(2, &[1])),
        ]);
        assert_eq!(sel, BTreeSet::from([ProcessorId(0), ProcessorId(2)]));
        let sel = greedy_select_active_types(&[(ProcessorId(0), tx_type(2, &[0]))]);
        assert_eq!(sel, BTreeSet::from([ProcessorId(0)]));
    }

    #[test]
    fn channel_transmits_single_bits() {
        let m = 1;
        let sender = loaded_state(0, m, &[0], 8, 1);
        let receiver = loaded_state(1, m, &[0], 8, 1);
        let o = ObjectId(0);

        // bit = 1: both invoke, both abort, the receiver reads 1.
        let s_tx = channel_round_action(ChannelRole::Sender, true, o, &sender).unwrap();
        let r_tx = channel_round_action(ChannelRole::Receiver, false, o, &receiver).unwrap();
        let invocations = [
            Transaction {
                id: s_tx,
                ttype: tx_type(m, &[0]),
                gen_round: 1,
                owner: Some(ProcessorId(0)),
                commit_round: None,
            },
            Transaction {
                id: r_tx,
                ttype: tx_type(m, &[0]),
                gen_round: 1,
                owner: Some(ProcessorId(1)),
                commit_round: None,
            },
        ];
        let outcome = resolve_round(10, &invocations).unwrap();
        assert!(
            outcome.aborted.contains(&r_tx),
            "receiver decodes its abort as 1"
        );

        // bit = 0: the sender stays silent, the receiver's transaction
        // commits and reads as 0.
        assert_eq!(
            channel_round_action(ChannelRole::Sender, false, o, &sender),
            None
        );
        let outcome = resolve_round(11, &invocations[1..]).unwrap();
        assert!(outcome.committed.contains(&r_tx));

        // A sender whose active type misses the object stays silent.
        let elsewhere = loaded_state(2, 2, &[1], 4, 1);
        assert_eq!(
            channel_round_action(ChannelRole::Sender, true, ObjectId(0), &elsewhere),
            None
        );
    }

    #[test]
    fn expected_knowledge_components() {
        let mut actives = BTreeMap::new();
        actives.insert(ProcessorId(0), tx_type(4, &[0, 1]));
        actives.insert(ProcessorId(1), tx_type(4, &[1, 2]));
        actives.insert(ProcessorId(2), tx_type(4, &[3]));
        let tables = expected_knowledge(&actives);
        assert_eq!(tables[&ProcessorId(0)].len(), 2);
        assert_eq!(tables[&ProcessorId(0)], tables[&ProcessorId(1)]);
        assert_eq!(tables[&ProcessorId(2)].len(), 1);
    }

    #[test]
    fn position_arithmetic() {
        let s = DistributedScheduler::new(2, 1).unwrap();
        assert_eq!(s.block_size(), 4);
        assert_eq!(s.epoch_len(), 12);
        assert_eq!(s.position(1).phase, Phase::One);
        assert_eq!(s.position(4).phase, Phase::One);
        assert_eq!(s.position(5).phase, Phase::Two);
        assert_eq!(s.position(9).phase, Phase::Three);
        assert_eq!(s.position(12).phase, Phase::Three);
        assert_eq!(s.position(13).phase, Phase::One);
        assert_eq!(s.position(13).epoch, 1);

        let single = DistributedScheduler::new(1, 3).unwrap();
        assert_eq!(single.block_size(), 9);
        assert_eq!(single.epoch_len(), 18);
        assert_eq!(single.position(1).phase, Phase::Two);
        assert_eq!(single.position(10).phase, Phase::Three);
    }
}
