//! The transaction operator: a control-state machine wrapped around each
//! program that requests locks, records undo history and calls commit.
//!
//! ```text
//!            victim                          recovered
//!   TA-ctl ──────────▶ waitForRecovery ─────────────▶ TA-ctl
//!     │  new locks needed
//!     ├──────────────▶ waitForLocks ── granted: step + record ──▶ TA-ctl
//!     │                     └──────── refused ─────────────────▶ TA-ctl
//!     ├── no new locks: step + record ──▶ TA-ctl
//!     └── terminated: call commit ──▶ Done
//! ```

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::AsmError;
use crate::eval::{eval_formula, yields};
use crate::machine::{Machine, MachineId};
use crate::rng::SeedStream;
use crate::rwloc::{rw_rule, RwSet};
use crate::state::{Interpretation, State, UpdateSet};
use crate::txctl::LockTable;
use crate::value::{Location, Value};

pub use crate::txctl::LockPair;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CtlState {
    NotRegistered,
    TaCtl,
    WaitForLocks,
    WaitForRecovery,
    Done,
}

/// One undo record: values overwritten by a step and the locks it obtained.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    /// Pre-step values of the shared and output locations written.
    pub val_set: UpdateSet,
    /// Pre-step values of the controlled locations written.
    pub private_set: UpdateSet,
    pub lock_set: LockPair,
    /// Global step of the recorded machine step.
    pub origin_step: u64,
    /// Global step of the lock request that preceded it, if any.
    pub request_step: Option<u64>,
}

impl HistoryEntry {
    /// Updates that undo the recorded step.
    pub fn restore_updates(&self) -> UpdateSet {
        self.val_set.clone().union(self.private_set.clone())
    }
}

/// Per-machine transactional bookkeeping.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxControlBlock {
    pub machine: MachineId,
    pub ctl_state: CtlState,
    /// LIFO; the youngest entry is last.
    pub history: Vec<HistoryEntry>,
    pub refused: Option<LockPair>,
    pub granted: Option<LockPair>,
    /// Proper steps executed so far, including undone ones.
    pub proper_steps: u64,
    /// Replayed choice keys; `None` derives keys from `proper_steps`.
    pub choice_keys: Option<Vec<u64>>,
    pub pending_request_step: Option<u64>,
}

impl TxControlBlock {
    pub fn new(machine: MachineId) -> Self {
        TxControlBlock {
            machine,
            ctl_state: CtlState::NotRegistered,
            history: Vec::new(),
            refused: None,
            granted: None,
            proper_steps: 0,
            choice_keys: None,
            pending_request_step: None,
        }
    }

    /// Key of the stream that resolves `choose` in the next proper step. It
    /// stays fixed between a lock request and the step it guards.
    pub fn choice_key(&self) -> u64 {
        self.choice_keys
            .as_ref()
            .and_then(|k| k.get(self.proper_steps as usize).copied())
            .unwrap_or(self.proper_steps)
    }

    pub fn is_active(&self) -> bool {
        matches!(self.ctl_state, CtlState::TaCtl | CtlState::WaitForLocks | CtlState::WaitForRecovery)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    Register,
    LockRequest,
    Proper,
    RefusedReturn,
    RecoveryEntry,
    RecoveryExit,
    CommitCall,
}

/// Everything one wrapper step contributes to the global step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WrapperOutput {
    /// `None` when the machine contributes no update.
    pub kind: Option<StepKind>,
    pub next: CtlState,
    /// Proper updates of the wrapped program.
    pub updates: UpdateSet,
    /// Locations read by the proper step with their pre-step values.
    pub reads: Vec<(Location, Value)>,
    pub record: Option<HistoryEntry>,
    pub request: Option<LockPair>,
    pub commit_call: bool,
    pub consume_flags: bool,
    pub choice_key: Option<u64>,
}

impl WrapperOutput {
    fn idle(state: CtlState) -> Self {
        WrapperOutput {
            kind: None,
            next: state,
            updates: UpdateSet::new(),
            reads: Vec::new(),
            record: None,
            request: None,
            commit_call: false,
            consume_flags: false,
            choice_key: None,
        }
    }

    fn transition(kind: StepKind, next: CtlState) -> Self {
        WrapperOutput {
            kind: Some(kind),
            ..Self::idle(next)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WrapperError {
    #[error("machine {machine}: {source}")]
    Eval { machine: String, source: AsmError },
    #[error("machine {machine}: step not allowed in control state {state:?}")]
    IllegalControlState { machine: String, state: CtlState },
    #[error("machine {machine}: still needs locks {needs:?} after a grant")]
    StaleGrant { machine: String, needs: LockPair },
    #[error("machine {machine}: inconsistent update set at {location}")]
    InconsistentStep { machine: String, location: Location },
    #[error("machine {machine}: write set {writes:?} differs from updated locations {updated:?}")]
    WriteSetMismatch {
        machine: String,
        writes: BTreeSet<Location>,
        updated: BTreeSet<Location>,
    },
}

/// What the wrapper may observe of the controller.
#[derive(Clone, Copy, Debug)]
pub struct ControllerView<'a> {
    pub locks: &'a LockTable,
    pub victim: bool,
}

/// Stream resolving `choose` for `machine`'s step with the given key.
pub fn choice_stream(seed: u64, machine: &str, key: u64) -> SeedStream {
    SeedStream::derive(seed, &["choose", machine, &key.to_string()])
}

fn eval_err(m: &Machine) -> impl Fn(AsmError) -> WrapperError + '_ {
    move |source| WrapperError::Eval {
        machine: m.name.clone(),
        source,
    }
}

/// Read and write locations of the machine's rule in `s`.
pub fn machine_rw(m: &Machine, s: &State, seed: u64, key: u64) -> Result<RwSet, WrapperError> {
    rw_rule(&m.main, s, &Interpretation::new(), &m.rules, &mut choice_stream(seed, &m.name, key)).map_err(eval_err(m))
}

/// `newLocks(M, S) = (R-Loc, W-Loc)`.
pub fn new_locks(m: &Machine, id: MachineId, s: &State, locks: &LockTable, seed: u64, key: u64) -> Result<LockPair, WrapperError> {
    let rw = machine_rw(m, s, seed, key)?;
    Ok(new_locks_from(m, id, &rw, locks))
}

pub fn new_locks_from(m: &Machine, id: MachineId, rw: &RwSet, locks: &LockTable) -> LockPair {
    let r_loc = rw
        .reads
        .iter()
        .filter(|l| m.classes.needs_read_lock(l) && !locks.r_locked(l, id) && !locks.w_locked(l, id))
        .cloned()
        .collect();
    let w_loc = rw
        .writes
        .iter()
        .filter(|l| m.classes.needs_write_lock(l) && !locks.w_locked(l, id))
        .cloned()
        .collect();
    LockPair { r_loc, w_loc }
}

pub fn new_locks_needed(m: &Machine, id: MachineId, s: &State, locks: &LockTable, seed: u64, key: u64) -> Result<bool, WrapperError> {
    Ok(!new_locks(m, id, s, locks, seed, key)?.is_empty())
}

/// `overWrittenVal`: current values of the shared and output locations in `writes`.
pub fn overwritten_values(m: &Machine, writes: &BTreeSet<Location>, s: &State) -> UpdateSet {
    writes
        .iter()
        .filter(|l| m.classes.needs_write_lock(l))
        .map(|l| (l.clone(), s.get(l)))
        .collect()
}

fn overwritten_private(m: &Machine, writes: &BTreeSet<Location>, s: &State) -> UpdateSet {
    writes
        .iter()
        .filter(|l| m.classes.is_controlled(l))
        .map(|l| (l.clone(), s.get(l)))
        .collect()
}

pub fn terminated(m: &Machine, s: &State) -> Result<bool, WrapperError> {
    eval_formula(&m.terminated, s, &Interpretation::new()).map_err(eval_err(m))
}

/// One step of the wrapped machine in the snapshot `s`.
pub fn wrapper_step(
    tcb: &TxControlBlock,
    m: &Machine,
    s: &State,
    view: ControllerView<'_>,
    step: u64,
    seed: u64,
) -> Result<WrapperOutput, WrapperError> {
    match tcb.ctl_state {
        CtlState::TaCtl => {
            if view.victim {
                return Ok(WrapperOutput::transition(StepKind::RecoveryEntry, CtlState::WaitForRecovery));
            }
            if terminated(m, s)? {
                let mut out = WrapperOutput::transition(StepKind::CommitCall, CtlState::Done);
                out.commit_call = true;
                return Ok(out);
            }
            let key = tcb.choice_key();
            let rw = machine_rw(m, s, seed, key)?;
            let needed = new_locks_from(m, tcb.machine, &rw, view.locks);
            if !needed.is_empty() {
                let mut out = WrapperOutput::transition(StepKind::LockRequest, CtlState::WaitForLocks);
                out.request = Some(needed);
                return Ok(out);
            }
            proper_step(tcb, m, s, rw, LockPair::empty(), None, step, seed)
        }
        CtlState::WaitForLocks => {
            if let Some(granted) = &tcb.granted {
                let key = tcb.choice_key();
                let rw = machine_rw(m, s, seed, key)?;
                let still = new_locks_from(m, tcb.machine, &rw, view.locks);
                if !still.is_empty() {
                    return Err(WrapperError::StaleGrant {
                        machine: m.name.clone(),
                        needs: still,
                    });
                }
                let mut out = proper_step(tcb, m, s, rw, granted.clone(), tcb.pending_request_step, step, seed)?;
                out.next = CtlState::TaCtl;
                out.consume_flags = true;
                return Ok(out);
            }
            if tcb.refused.is_some() {
                let mut out = WrapperOutput::transition(StepKind::RefusedReturn, CtlState::TaCtl);
                out.consume_flags = true;
                return Ok(out);
            }
            Ok(WrapperOutput::idle(CtlState::WaitForLocks))
        }
        CtlState::WaitForRecovery => {
            if view.victim {
                Ok(WrapperOutput::idle(CtlState::WaitForRecovery))
            } else {
                Ok(WrapperOutput::transition(StepKind::RecoveryExit, CtlState::TaCtl))
            }
        }
        state @ (CtlState::NotRegistered | CtlState::Done) => Err(WrapperError::IllegalControlState {
            machine: m.name.clone(),
            state,
        }),
    }
}

#[allow(clippy::too_many_arguments)]
fn proper_step(
    tcb: &TxControlBlock,
    m: &Machine,
    s: &State,
    rw: RwSet,
    lock_set: LockPair,
    request_step: Option<u64>,
    step: u64,
    seed: u64,
) -> Result<WrapperOutput, WrapperError> {
    let key = tcb.choice_key();
    let updates = yields(&m.main, s, &Interpretation::new(), &m.rules, &mut choice_stream(seed, &m.name, key)).map_err(eval_err(m))?;
    if let Some(location) = updates.first_clash() {
        return Err(WrapperError::InconsistentStep {
            machine: m.name.clone(),
            location,
        });
    }
    let updated = updates.locations();
    if updated != rw.writes {
        return Err(WrapperError::WriteSetMismatch {
            machine: m.name.clone(),
            writes: rw.writes,
            updated,
        });
    }
    let record = HistoryEntry {
        val_set: overwritten_values(m, &rw.writes, s),
        private_set: overwritten_private(m, &rw.writes, s),
        lock_set,
        origin_step: step,
        request_step,
    };
    Ok(WrapperOutput {
        kind: Some(StepKind::Proper),
        next: CtlState::TaCtl,
        updates,
        reads: rw.reads.iter().map(|l| (l.clone(), s.get(l))).collect(),
        record: Some(record),
        request: None,
        commit_call: false,
        consume_flags: false,
        choice_key: Some(key),
    })
}
