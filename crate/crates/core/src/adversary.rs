//! Transaction generators constrained by (ρ,b) congestion bounds, the
//! full-power lower-bound generator built on the pairwise-intersecting set
//! family, and an exact admissibility verifier.
//!
//! A generator of type (ρ,b) may create, for every entity (each object, and
//! each processor in the queue-based model) and every window of `t`
//! consecutive rounds, at most `ρ·t + b` units of congestion. ρ is kept as an
//! exact rational and every window check is integer cross-multiplication:
//! admissibility is a sharp inequality and float drift would mis-classify
//! boundary traces.

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::combinatorics::build_set_family;
use crate::engine::{Generated, Generator, Trace};
use crate::model::{ObjectId, ProcessorId, Round, TxType};
use crate::{Error, Result};

/// Which autonomy model the generation process targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AutonomyModel {
    #[serde(rename = "queue-free")]
    QueueFree,
    #[serde(rename = "queue-based")]
    QueueBased,
}

/// Generation rate, burstiness component, and autonomy model of an adversary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdversaryParams {
    rho: Ratio<i64>,
    b: u32,
    model: AutonomyModel,
}

impl AdversaryParams {
    /// Requires `0 < rho <= 1` (no scheduler can be stable above rate 1) and
    /// `b >= 1`.
    pub fn new(rho: Ratio<i64>, b: u32, model: AutonomyModel) -> Result<Self> {
        if rho <= Ratio::from_integer(0) || rho > Ratio::from_integer(1) {
            return Err(Error::InvalidInput(format!(
                "generation rate must lie in (0, 1], got {rho}"
            )));
        }
        if b < 1 {
            return Err(Error::InvalidInput(
                "burstiness component must be >= 1".into(),
            ));
        }
        Ok(AdversaryParams { rho, b, model })
    }

    pub fn rho(&self) -> Ratio<i64> {
        self.rho
    }

    pub fn b(&self) -> u32 {
        self.b
    }

    pub fn model(&self) -> AutonomyModel {
        self.model
    }
}

/// Parses "p/q" or a bare integer into an exact rational.
pub fn parse_ratio(s: &str) -> Result<Ratio<i64>> {
    let bad = |_| Error::InvalidInput(format!("not a rational: {s:?}"));
    match s.split_once('/') {
        Some((p, q)) => {
            let p: i64 = p.trim().parse().map_err(bad)?;
            let q: i64 = q.trim().parse().map_err(bad)?;
            if q == 0 {
                return Err(Error::InvalidInput("zero denominator".into()));
            }
            Ok(Ratio::new(p, q))
        }
        None => {
            let p: i64 = s.trim().parse().map_err(bad)?;
            Ok(Ratio::from_integer(p))
        }
    }
}

/// An entity congestion is charged against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Entity {
    Object(ObjectId),
    Processor(ProcessorId),
}

/// The earliest offending window of an inadmissible stream: smallest end
/// round, then first entity in (objects, processors) order, then earliest
/// start round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowViolation {
    pub entity: Entity,
    pub window: (Round, Round),
    pub congestion: u64,
}

impl WindowViolation {
    /// The congestion the window was allowed, `ρ·t + b`.
    pub fn allowed(&self, params: &AdversaryParams) -> Ratio<i64> {
        let t = (self.window.1 - self.window.0 + 1) as i64;
        params.rho * t + Ratio::from_integer(params.b as i64)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AdmissibilityVerdict {
    Admissible,
    Violation(WindowViolation),
}

impl AdmissibilityVerdict {
    pub fn is_admissible(&self) -> bool {
        matches!(self, AdmissibilityVerdict::Admissible)
    }
}

/// Exact check of the (ρ,b) window constraint for every entity.
///
/// Runs in O(T) per entity: with prefix congestion S(t) and
/// h(t) = q·S(t) − p·t (for ρ = p/q), the constraint over window (u+1, t] is
/// h(t) − h(u) ≤ q·b, so tracking the running minimum of h suffices. This is
/// equivalent to brute force over all O(T²) windows.
pub fn verify_admissibility(
    generations: &[Vec<Generated>],
    params: &AdversaryParams,
) -> Result<AdmissibilityVerdict> {
    let horizon = generations.len();
    let mut m = 0u32;
    let mut n = 0u32;
    for round in generations {
        for g in round {
            if m == 0 {
                m = g.ttype.width();
            } else if g.ttype.width() != m {
                return Err(Error::InvalidInput("mixed type widths in stream".into()));
            }
            match (params.model, g.owner) {
                (AutonomyModel::QueueBased, Some(ProcessorId(p))) => n = n.max(p + 1),
                (AutonomyModel::QueueBased, None) => {
                    return Err(Error::InvalidInput(
                        "queue-based stream requires an owner on every transaction".into(),
                    ))
                }
                (AutonomyModel::QueueFree, Some(_)) => {
                    return Err(Error::InvalidInput(
                        "queue-free stream must not carry owners".into(),
                    ))
                }
                (AutonomyModel::QueueFree, None) => {}
            }
        }
    }

    let entities: Vec<Entity> = (0..m)
        .map(|o| Entity::Object(ObjectId(o)))
        .chain((0..n).map(|p| Entity::Processor(ProcessorId(p))))
        .collect();

    // Per-entity per-round congestion.
    let mut per_round = vec![vec![0u64; horizon]; entities.len()];
    for (t, round) in generations.iter().enumerate() {
        for g in round {
            for ObjectId(o) in g.ttype.objects() {
                per_round[o as usize][t] += 1;
            }
            if let Some(ProcessorId(p)) = g.owner {
                per_round[(m + p) as usize][t] += 1;
            }
        }
    }

    let p = *params.rho.numer() as i128;
    let q = *params.rho.denom() as i128;
    let qb = q * params.b as i128;

    // First violating end round per entity.
    let mut best: Option<(usize, usize)> = None; // (end index 0-based, entity index)
    for (e, series) in per_round.iter().enumerate() {
        let mut s: i128 = 0;
        let mut hmin: i128 = 0; // h(0) = 0
        for (t0, &c) in series.iter().enumerate() {
            s += c as i128;
            let h = q * s - p * (t0 as i128 + 1);
            if h - hmin > qb {
                if best.is_none_or(|(bt, _)| t0 < bt) {
                    best = Some((t0, e));
                }
                break;
            }
            hmin = hmin.min(h);
        }
    }

    let Some((end, e)) = best else {
        return Ok(AdmissibilityVerdict::Admissible);
    };

    // Earliest start of a violating window ending at `end` for this entity.
    let series = &per_round[e];
    let prefix: Vec<i128> = series
        .iter()
        .scan(0i128, |acc, &c| {
            *acc += c as i128;
            Some(*acc)
        })
        .collect();
    let h = |t: usize| -> i128 {
        if t == 0 {
            0
        } else {
            q * prefix[t - 1] - p * t as i128
        }
    };
    let h_end = h(end + 1);
    let start = (0..=end)
        .find(|&u| h_end - h(u) > qb)
        .expect("a violating start exists for the flagged end round");
    let congestion = (prefix[end] - if start == 0 { 0 } else { prefix[start - 1] }) as u64;
    Ok(AdmissibilityVerdict::Violation(WindowViolation {
        entity: entities[e],
        window: (start as Round + 1, end as Round + 1),
        congestion,
    }))
}

/// Incremental form of the same window arithmetic, used by generators that
/// must stay admissible by construction. Tracks, per entity, the cumulative
/// congestion and the running minimum of h(t) = q·S(t) − p·t.
#[derive(Clone, Debug)]
pub struct CongestionLedger {
    p: i128,
    q: i128,
    qb: i128,
    round: u64,
    cumulative: Vec<u64>,
    hmin: Vec<i128>,
}

impl CongestionLedger {
    pub fn new(rho: Ratio<i64>, b: u32, entity_count: usize) -> Self {
        CongestionLedger {
            p: *rho.numer() as i128,
            q: *rho.denom() as i128,
            qb: *rho.denom() as i128 * b as i128,
            round: 0,
            cumulative: vec![0; entity_count],
            hmin: vec![0; entity_count],
        }
    }

    fn h(&self, entity: usize) -> i128 {
        self.q * self.cumulative[entity] as i128 - self.p * self.round as i128
    }

    /// Folds the finished round into the running minima and advances time.
    pub fn begin_round(&mut self) {
        for e in 0..self.cumulative.len() {
            let h = self.h(e);
            if h < self.hmin[e] {
                self.hmin[e] = h;
            }
        }
        self.round += 1;
    }

    /// True iff one extra unit on each listed entity keeps every window
    /// ending at the current round within ρ·t + b.
    pub fn fits(&self, entities: impl IntoIterator<Item = usize> + Clone) -> bool {
        entities
            .into_iter()
            .all(|e| self.h(e) + self.q - self.hmin[e] <= self.qb)
    }

    /// Charges one unit to each listed entity without checking.
    pub fn charge(&mut self, entities: impl IntoIterator<Item = usize>) {
        for e in entities {
            self.cumulative[e] += 1;
        }
    }

    /// Checks and charges in one step.
    pub fn try_charge(&mut self, entities: impl IntoIterator<Item = usize> + Clone) -> bool {
        if self.fits(entities.clone()) {
            self.charge(entities);
            true
        } else {
            false
        }
    }
}

/// What kinds of transactions a token-bucket adversary emits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WorkloadShape {
    /// Uniformly random types of weight 1..=max_weight.
    Uniform { max_weight: u32 },
    /// Weight-1 types cycling through the objects in index order.
    Singletons,
    /// A fixed cyclic sequence of types.
    Cycle(Vec<TxType>),
}

/// Admissible-by-construction generator: every entity holds a token bucket
/// with fill rate ρ and capacity ρ+b (in congestion units); a candidate is
/// emitted only if every entity it touches holds at least one token, each of
/// which is then debited one unit. The first candidate that does not fit is
/// buffered and ends the round.
pub struct TokenBucketGenerator {
    params: AdversaryParams,
    m: u32,
    shape: WorkloadShape,
    rng: ChaCha8Rng,
    tokens: Vec<Ratio<i64>>,
    capacity: Ratio<i64>,
    buffered: Option<TxType>,
    emitted_per_processor: Vec<u64>,
    cursor: u64,
}

impl TokenBucketGenerator {
    /// `n` is required (and only allowed) for queue-based params.
    pub fn new(
        params: AdversaryParams,
        m: u32,
        k: u32,
        n: Option<u32>,
        shape: WorkloadShape,
        seed: u64,
    ) -> Result<Self> {
        match &shape {
            WorkloadShape::Uniform { max_weight } => {
                if *max_weight < 1 || *max_weight > k {
                    return Err(Error::InvalidInput(format!(
                        "uniform shape weight must lie in [1, k={k}], got {max_weight}"
                    )));
                }
            }
            WorkloadShape::Singletons => {}
            WorkloadShape::Cycle(types) => {
                if types.is_empty() {
                    return Err(Error::InvalidInput(
                        "cycle shape needs at least one type".into(),
                    ));
                }
                for t in types {
                    if t.width() != m {
                        return Err(Error::InvalidInput(format!(
                            "cycle shape type {t} does not match m={m}"
                        )));
                    }
                    if t.weight() > k {
                        return Err(Error::InvalidInput(format!(
                            "cycle shape type {t} exceeds weight cap k={k}"
                        )));
                    }
                }
            }
        }
        let n = match (params.model, n) {
            (AutonomyModel::QueueBased, Some(n)) if n >= 1 => n,
            (AutonomyModel::QueueBased, _) => {
                return Err(Error::InvalidInput(
                    "queue-based generation requires n >= 1".into(),
                ))
            }
            (AutonomyModel::QueueFree, None) => 0,
            (AutonomyModel::QueueFree, Some(_)) => {
                return Err(Error::InvalidInput(
                    "queue-free generation takes no n".into(),
                ))
            }
        };
        let capacity = params.rho + Ratio::from_integer(params.b as i64);
        let entity_count = (m + n) as usize;
        Ok(TokenBucketGenerator {
            params,
            m,
            shape,
            rng: ChaCha8Rng::seed_from_u64(seed),
            tokens: vec![capacity; entity_count],
            capacity,
            buffered: None,
            emitted_per_processor: vec![0; n as usize],
            cursor: 0,
        })
    }

    fn draw(&mut self) -> TxType {
        match &self.shape {
            WorkloadShape::Uniform { max_weight } => {
                let w = self.rng.random_range(1..=*max_weight);
                let mut pool: Vec<u32> = (0..self.m).collect();
                for i in 0..w as usize {
                    let j = self.rng.random_range(i..pool.len());
                    pool.swap(i, j);
                }
                TxType::from_objects(self.m, pool[..w as usize].iter().map(|&o| ObjectId(o)))
                    .expect("drawn type is nonempty and in range")
            }
            WorkloadShape::Singletons => {
                let o = (self.cursor % self.m as u64) as u32;
                self.cursor += 1;
                TxType::from_objects(self.m, [ObjectId(o)]).expect("singleton is valid")
            }
            WorkloadShape::Cycle(types) => {
                let t = types[(self.cursor % types.len() as u64) as usize].clone();
                self.cursor += 1;
                t
            }
        }
    }

    fn least_loaded_processor(&self) -> ProcessorId {
        let mut best = 0usize;
        for p in 1..self.emitted_per_processor.len() {
            if self.emitted_per_processor[p] < self.emitted_per_processor[best] {
                best = p;
            }
        }
        ProcessorId(best as u32)
    }
}

impl Generator for TokenBucketGenerator {
    fn generate(&mut self, _round: Round) -> Vec<Generated> {
        let one = Ratio::from_integer(1);
        for t in &mut self.tokens {
            *t = (*t + self.params.rho).min(self.capacity);
        }
        let mut out = Vec::new();
        loop {
            let candidate = match self.buffered.take() {
                Some(t) => t,
                None => self.draw(),
            };
            let owner = (self.params.model == AutonomyModel::QueueBased)
                .then(|| self.least_loaded_processor());
            let entities: Vec<usize> = candidate
                .objects()
                .map(|ObjectId(o)| o as usize)
                .chain(owner.iter().map(|ProcessorId(p)| (self.m + p) as usize))
                .collect();
            if entities.iter().all(|&e| self.tokens[e] >= one) {
                for &e in &entities {
                    self.tokens[e] -= one;
                }
                if let Some(ProcessorId(p)) = owner {
                    self.emitted_per_processor[p as usize] += 1;
                }
                out.push(Generated {
                    ttype: candidate,
                    owner,
                });
            } else {
                self.buffered = Some(candidate);
                break;
            }
        }
        out
    }
}

/// The full-power generator behind the instability lower bound.
///
/// Builds pairwise-colliding types from the set family of the largest
/// applicable order `w` (w = k when k(k+1)/2 ≤ m, else the greatest order
/// whose ground set fits in m objects), then emits the cyclic sequence
/// T_1, T_2, …, T_{w+1}, T_1, … maximally each round subject to the
/// object-congestion constraint. Round 1 emits exactly the first `b`
/// sequence entries.
pub struct LowerBoundGenerator {
    types: Vec<TxType>,
    b: u32,
    ledger: CongestionLedger,
    next_seq: u64,
    started: bool,
}

impl LowerBoundGenerator {
    pub fn new(params: AdversaryParams, m: u32, k: u32) -> Result<Self> {
        if params.model != AutonomyModel::QueueFree {
            return Err(Error::InvalidInput(
                "the lower-bound generator targets the queue-free model".into(),
            ));
        }
        if k < 1 || k > m {
            return Err(Error::InvalidInput(format!(
                "need 1 <= k <= m, got k={k} m={m}"
            )));
        }
        let w = if k * (k + 1) / 2 <= m {
            k
        } else {
            (1..=k)
                .rev()
                .find(|n| n * (n + 1) / 2 <= m)
                .expect("w=1 always fits since m >= 1")
        };
        let family = build_set_family(w);
        let types = family
            .sets
            .iter()
            .map(|set| {
                // Family element j (1-based) is carried by object j-1.
                TxType::from_objects(m, set.iter().map(|&e| ObjectId(e - 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        let ledger = CongestionLedger::new(params.rho, params.b, m as usize);
        Ok(LowerBoundGenerator {
            types,
            b: params.b,
            ledger,
            next_seq: 0,
            started: false,
        })
    }

    /// The family order `w` actually used.
    pub fn family_order(&self) -> u32 {
        self.types.len() as u32 - 1
    }

    fn entities(&self, seq: u64) -> Vec<usize> {
        self.types[(seq % self.types.len() as u64) as usize]
            .objects()
            .map(|ObjectId(o)| o as usize)
            .collect()
    }

    fn emit(&self, seq: u64) -> Generated {
        Generated {
            ttype: self.types[(seq % self.types.len() as u64) as usize].clone(),
            owner: None,
        }
    }
}

impl Generator for LowerBoundGenerator {
    fn generate(&mut self, _round: Round) -> Vec<Generated> {
        self.ledger.begin_round();
        let mut out = Vec::new();
        if !self.started {
            self.started = true;
            for i in 0..self.b as u64 {
                let entities = self.entities(i);
                debug_assert!(
                    self.ledger.fits(entities.iter().copied()),
                    "round-1 burst fits"
                );
                self.ledger.charge(entities);
                out.push(self.emit(i));
            }
            self.next_seq = self.b as u64;
            return out;
        }
        while self.ledger.try_charge(self.entities(self.next_seq)) {
            out.push(self.emit(self.next_seq));
            self.next_seq += 1;
        }
        out
    }
}

/// Replays a fixed per-round schedule of generations; also serves as the
/// scripted generator in tests.
#[derive(Clone, Debug)]
pub struct ReplayGenerator {
    rounds: Vec<Vec<Generated>>,
}

impl ReplayGenerator {
    pub fn new(rounds: Vec<Vec<Generated>>) -> Self {
        ReplayGenerator { rounds }
    }

    pub fn rounds(&self) -> &[Vec<Generated>] {
        &self.rounds
    }
}

impl Generator for ReplayGenerator {
    fn generate(&mut self, round: Round) -> Vec<Generated> {
        self.rounds
            .get(round as usize - 1)
            .cloned()
            .unwrap_or_default()
    }
}

const STREAM_HEADER: &str = "round,owner,type";

/// Serializes a generation stream as `round,owner,type` lines; the owner
/// field is empty in the queue-free model.
pub fn stream_to_csv(rounds: &[Vec<Generated>]) -> String {
    let mut out = String::from(STREAM_HEADER);
    out.push('\n');
    for (i, round) in rounds.iter().enumerate() {
        for g in round {
            let owner = g
                .owner
                .map_or(String::new(), |ProcessorId(p)| p.to_string());
            out.push_str(&format!("{},{},{}\n", i + 1, owner, g.ttype.bitstring()));
        }
    }
    out
}

/// Parses the `round,owner,type` format; errors carry the offending line.
pub fn parse_stream(s: &str) -> Result<Vec<Vec<Generated>>> {
    let mut rounds: Vec<Vec<Generated>> = Vec::new();
    for (lineno, line) in s.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line == STREAM_HEADER) {
            continue;
        }
        let at = |msg: String| Error::InvalidInput(format!("line {}: {msg}", lineno + 1));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(at(format!("expected 3 fields, found {}", fields.len())));
        }
        let round: u64 = fields[0]
            .parse()
            .map_err(|_| at(format!("bad round {:?}", fields[0])))?;
        if round < 1 {
            return Err(at("rounds are numbered from 1".into()));
        }
        let owner = if fields[1].is_empty() {
            None
        } else {
            Some(ProcessorId(
                fields[1]
                    .parse()
                    .map_err(|_| at(format!("bad owner {:?}", fields[1])))?,
            ))
        };
        let ttype = TxType::parse_bitstring(fields[2])
            .map_err(|e| at(e.to_string()))?
            .ok_or_else(|| at("all-zeros type".into()))?;
        if rounds.len() < round as usize {
            rounds.resize(round as usize, Vec::new());
        }
        rounds[round as usize - 1].push(Generated { ttype, owner });
    }
    Ok(rounds)
}

/// Extracts the generation stream recorded in a trace, for replay.
pub fn stream_from_trace(trace: &Trace) -> Vec<Vec<Generated>> {
    trace
        .rounds
        .iter()
        .map(|r| {
            r.generated
                .iter()
                .map(|t| Generated {
                    ttype: t.ttype.clone(),
                    owner: t.owner,
                })
                .collect()
        })
        .collect()
}
