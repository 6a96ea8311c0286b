//! The synchronous round loop.
//!
//! Each round proceeds in a fixed order: the adversary emits this round's
//! generations, the scheduler (seeing only transactions generated in strictly
//! earlier rounds, plus the previous round's commit/abort feedback) names its
//! invocations, collisions are resolved, and the outcome is recorded. A run
//! is a pure function of (config, scheduler, adversary, seed).
//!
//! Feedback is deliberately a single commit/abort bit per invoked
//! transaction: the distributed scheduler's communication channel is built on
//! exactly that bit, and richer feedback would silently strengthen the model.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{ProcessorId, Round, SystemConfig, Transaction, TxId, TxType};
use crate::{Error, Result};

/// What happened to one invoked transaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fate {
    Committed,
    Aborted,
}

/// Commit/abort bits for the previous round's invocations, in invocation-id
/// order. Empty on round 1.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RoundFeedback {
    pub round: Option<Round>,
    pub outcomes: Vec<(TxId, Fate)>,
}

/// Resolution of one round: every invoked transaction either committed or
/// aborted, and the committed set is conflict-free.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub round: Round,
    pub invoked: BTreeSet<TxId>,
    pub committed: BTreeSet<TxId>,
    pub aborted: BTreeSet<TxId>,
}

/// A transaction emitted by a generator; the engine assigns the identity and
/// generation round.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generated {
    #[serde(rename = "type")]
    pub ttype: TxType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<ProcessorId>,
}

/// Transaction source driven once per round, in round order.
pub trait Generator {
    fn generate(&mut self, round: Round) -> Vec<Generated>;
}

/// Scheduler driven once per round. `newly_visible` holds the transactions
/// generated in the previous round (a transaction becomes schedulable only
/// after its generation round); `feedback` reports the previous round's
/// outcomes. Returns the ids to invoke this round.
pub trait Scheduler {
    fn plan_round(
        &mut self,
        round: Round,
        newly_visible: &[Transaction],
        feedback: &RoundFeedback,
    ) -> Result<Vec<TxId>>;
}

/// Resolves one round's invocations: a transaction commits iff no other
/// invoked transaction shares any of its objects, otherwise it aborts.
pub fn resolve_round(round: Round, invocations: &[Transaction]) -> Result<RoundOutcome> {
    let mut invoked = BTreeSet::new();
    for t in invocations {
        if !invoked.insert(t.id) {
            return Err(Error::InvalidInput(format!(
                "transaction {:?} invoked twice at round {round}",
                t.id
            )));
        }
    }
    let mut committed = BTreeSet::new();
    let mut aborted = BTreeSet::new();
    for (i, t) in invocations.iter().enumerate() {
        let collides = invocations
            .iter()
            .enumerate()
            .any(|(j, u)| i != j && t.ttype.collides(&u.ttype));
        if collides {
            aborted.insert(t.id);
        } else {
            committed.insert(t.id);
        }
    }
    Ok(RoundOutcome {
        round,
        invoked,
        committed,
        aborted,
    })
}

/// One recorded round: what was generated, how the invocations resolved, and
/// the pending count (generated minus committed) after the round.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRound {
    pub generated: Vec<Transaction>,
    #[serde(flatten)]
    pub outcome: RoundOutcome,
    pub pending_after: u64,
}

/// Full record of a simulation run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub config: SystemConfig,
    pub rounds: Vec<TraceRound>,
}

impl Trace {
    /// Summary CSV: one line per round with counts only.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,generated,invoked,committed,aborted,pending\n");
        for r in &self.rounds {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.outcome.round,
                r.generated.len(),
                r.outcome.invoked.len(),
                r.outcome.committed.len(),
                r.outcome.aborted.len(),
                r.pending_after
            ));
        }
        out
    }

    /// Full-fidelity structured form carrying ids and types as bitstrings.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Trace> {
        serde_json::from_str(s).map_err(|e| Error::InvalidInput(format!("trace parse: {e}")))
    }

    /// Total transactions generated over the whole run.
    pub fn generated_total(&self) -> u64 {
        self.rounds.iter().map(|r| r.generated.len() as u64).sum()
    }

    /// Pending count after the last recorded round.
    pub fn final_pending(&self) -> u64 {
        self.rounds.last().map_or(0, |r| r.pending_after)
    }
}

/// Runs the round loop for `config.horizon` rounds.
///
/// Errors if the scheduler invokes a transaction that is not pending and
/// visible, duplicates an invocation, or (queue-based) invokes two
/// transactions owned by one processor at the same round.
pub fn run_simulation(
    config: &SystemConfig,
    scheduler: &mut dyn Scheduler,
    generator: &mut dyn Generator,
) -> Result<Trace> {
    config.validate()?;
    let mut rounds = Vec::with_capacity(config.horizon as usize);
    let mut live: BTreeMap<TxId, Transaction> = BTreeMap::new();
    let mut committed_total: u64 = 0;
    let mut next_id: u64 = 0;
    let mut newly_visible: Vec<Transaction> = Vec::new();
    let mut feedback = RoundFeedback::default();

    for round in 1..=config.horizon {
        let mut generated = Vec::new();
        for g in generator.generate(round) {
            if g.ttype.width() != config.m {
                return Err(Error::InvalidInput(format!(
                    "generated type width {} does not match m={}",
                    g.ttype.width(),
                    config.m
                )));
            }
            if g.ttype.weight() > config.k {
                return Err(Error::InvalidInput(format!(
                    "generated type {} exceeds weight cap k={}",
                    g.ttype.bitstring(),
                    config.k
                )));
            }
            match (config.n, g.owner) {
                (Some(n), Some(ProcessorId(p))) if p < n => {}
                (Some(_), Some(ProcessorId(p))) => {
                    return Err(Error::InvalidInput(format!(
                        "owner {p} out of range for n={:?}",
                        config.n
                    )))
                }
                (Some(_), None) => {
                    return Err(Error::InvalidInput(
                        "queue-based run requires an owner on every transaction".into(),
                    ))
                }
                (None, Some(_)) => {
                    return Err(Error::InvalidInput(
                        "queue-free run must not assign owners".into(),
                    ))
                }
                (None, None) => {}
            }
            let tx = Transaction {
                id: TxId(next_id),
                ttype: g.ttype,
                gen_round: round,
                owner: g.owner,
                commit_round: None,
            };
            next_id += 1;
            live.insert(tx.id, tx.clone());
            generated.push(tx);
        }

        let invocation_ids = scheduler.plan_round(round, &newly_visible, &feedback)?;
        let mut invocations = Vec::with_capacity(invocation_ids.len());
        let mut owners_this_round = BTreeSet::new();
        for id in &invocation_ids {
            let tx = live.get(id).ok_or_else(|| Error::ProtocolViolation {
                round,
                message: format!("{id:?} is not pending (unknown or already committed)"),
            })?;
            if tx.gen_round >= round {
                return Err(Error::ProtocolViolation {
                    round,
                    message: format!(
                        "{id:?} generated at round {} is not yet visible",
                        tx.gen_round
                    ),
                });
            }
            if let Some(owner) = tx.owner {
                if !owners_this_round.insert(owner) {
                    return Err(Error::ProtocolViolation {
                        round,
                        message: format!("processor {owner:?} invoked two transactions"),
                    });
                }
            }
            invocations.push(tx.clone());
        }

        let outcome = resolve_round(round, &invocations)?;
        for id in &outcome.committed {
            live.remove(id);
            committed_total += 1;
        }
        feedback = RoundFeedback {
            round: Some(round),
            outcomes: outcome
                .invoked
                .iter()
                .map(|&id| {
                    let fate = if outcome.committed.contains(&id) {
                        Fate::Committed
                    } else {
                        Fate::Aborted
                    };
                    (id, fate)
                })
                .collect(),
        };

        rounds.push(TraceRound {
            generated: generated.clone(),
            outcome,
            pending_after: next_id - committed_total,
        });
        newly_visible = generated;
    }

    Ok(Trace {
        config: config.clone(),
        rounds,
    })
}

/// What a symmetric thread does at a round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThreadAction {
    Pause,
    Invoke,
}

/// A deterministic thread automaton over integer states: given the current
/// state and the feedback from the thread's own previous action (`None`
/// after a pause), produce this round's action and the next state.
pub trait ThreadPolicy {
    fn initial_state(&self) -> u64;
    fn step(&self, state: u64, feedback: Option<Fate>) -> (ThreadAction, u64);
}

impl<F> ThreadPolicy for F
where
    F: Fn(u64, Option<Fate>) -> (ThreadAction, u64),
{
    fn initial_state(&self) -> u64 {
        0
    }
    fn step(&self, state: u64, feedback: Option<Fate>) -> (ThreadAction, u64) {
        self(state, feedback)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymmetryRound {
    pub round: Round,
    pub states: (u64, u64),
    pub actions: (ThreadAction, ThreadAction),
    pub commits: u32,
}

/// Outcome of the two-thread single-object livelock demonstration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymmetryDemoReport {
    pub rounds: Vec<SymmetryRound>,
    pub total_commits: u64,
    pub states_always_equal: bool,
}

/// Runs two identical copies of `policy`, each driving one transaction on a
/// single shared object, for `horizon` rounds. With a deterministic policy
/// the two threads' states stay equal every round, so they either both pause
/// or both invoke (and mutually abort): neither transaction ever commits.
pub fn queue_free_symmetry_demo(policy: &dyn ThreadPolicy, horizon: u64) -> SymmetryDemoReport {
    let mut states = (policy.initial_state(), policy.initial_state());
    let mut feedbacks: (Option<Fate>, Option<Fate>) = (None, None);
    let mut done = (false, false);
    let mut rounds = Vec::with_capacity(horizon as usize);
    let mut total_commits = 0u64;
    let mut states_always_equal = true;

    for round in 1..=horizon {
        let (a_act, a_next) = if done.0 {
            (ThreadAction::Pause, states.0)
        } else {
            policy.step(states.0, feedbacks.0)
        };
        let (b_act, b_next) = if done.1 {
            (ThreadAction::Pause, states.1)
        } else {
            policy.step(states.1, feedbacks.1)
        };

        let a_invokes = !done.0 && a_act == ThreadAction::Invoke;
        let b_invokes = !done.1 && b_act == ThreadAction::Invoke;
        let mut commits = 0u32;
        feedbacks = (None, None);
        if a_invokes && b_invokes {
            feedbacks = (Some(Fate::Aborted), Some(Fate::Aborted));
        } else if a_invokes {
            feedbacks.0 = Some(Fate::Committed);
            done.0 = true;
            commits += 1;
        } else if b_invokes {
            feedbacks.1 = Some(Fate::Committed);
            done.1 = true;
            commits += 1;
        }
        total_commits += commits as u64;
        states = (a_next, b_next);
        states_always_equal &= states.0 == states.1;
        rounds.push(SymmetryRound {
            round,
            states,
            actions: (a_act, b_act),
            commits,
        });
    }

    SymmetryDemoReport {
        rounds,
        total_commits,
        states_always_equal,
    }
}
