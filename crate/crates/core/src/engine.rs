//! The run engine: composes the wrapped machines and the controller into
//! global steps and records a trace.
//!
//! Every agent of a step reads the same pre-step snapshot of the state, the
//! lock table and the control blocks. Their contributions are merged, checked
//! for consistency and applied at once.

use std::collections::{BTreeMap, BTreeSet};

use crate::config::{Composition, ConfigError, RunConfig};
use crate::error::AsmError;
use crate::machine::MachineId;
use crate::rng::SeedStream;
use crate::state::{State, UpdateSet};
use crate::trace::{ControllerEvent, MachineStep, Outcome, StepRecord, Trace, TraceFooter, TraceHeader, TRACE_VERSION};
use crate::txctl::{ControllerError, ControllerState, LockDecision, LockOutcome, LockPair, LockViolation, RecoveryAction};
use crate::value::Location;
use crate::wrapper::{self, ControllerView, CtlState, StepKind, TxControlBlock, WrapperError, WrapperOutput};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("step {step}: {source}")]
    Wrapper { step: u64, source: WrapperError },
    #[error("step {step}: {source}")]
    Controller { step: u64, source: ControllerError },
    #[error("step {step}: {source}")]
    Asm { step: u64, source: AsmError },
    #[error("step {step}: inconsistent global update at {locations:?}")]
    InconsistentGlobalUpdate { step: u64, locations: Vec<Location> },
    #[error("step {step}: conflicting {what} updates for machine {machine}")]
    ConflictingBookkeeping { step: u64, machine: MachineId, what: &'static str },
    #[error("step {step}: {source}")]
    LockViolation { step: u64, source: LockViolation },
    #[error("step {step}: machine {machine} lost locks {lost:?} without commit or undo")]
    LockRetention { step: u64, machine: MachineId, lost: LockPair },
    #[error("step {step}: machine {machine} accessed {location} without the needed lock")]
    UnlockedAccess { step: u64, machine: MachineId, location: Location },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Agent {
    Machine(MachineId),
    LockHandler,
    Commit,
    DeadlockHandler,
    Recovery,
}

enum MachineAction {
    Register,
    Wrapper(Box<WrapperOutput>),
}

/// Decisions of every agent against one snapshot.
#[derive(Default)]
struct Plan {
    machines: Vec<(MachineId, MachineAction)>,
    lock: Option<LockDecision>,
    commit: Option<MachineId>,
    victim: Option<MachineId>,
    recovery: Option<RecoveryAction>,
}

impl Plan {
    fn agents(&self) -> Vec<Agent> {
        let mut out: Vec<Agent> = self.machines.iter().map(|(m, _)| Agent::Machine(*m)).collect();
        out.extend(self.lock.as_ref().map(|_| Agent::LockHandler));
        out.extend(self.commit.map(|_| Agent::Commit));
        out.extend(self.victim.map(|_| Agent::DeadlockHandler));
        out.extend(self.recovery.map(|_| Agent::Recovery));
        out
    }

    fn keep_only(&mut self, agent: Agent) {
        self.machines.retain(|(m, _)| agent == Agent::Machine(*m));
        if agent != Agent::LockHandler {
            self.lock = None;
        }
        if agent != Agent::Commit {
            self.commit = None;
        }
        if agent != Agent::DeadlockHandler {
            self.victim = None;
        }
        if agent != Agent::Recovery {
            self.recovery = None;
        }
    }
}

pub struct Engine {
    config: RunConfig,
    seed: u64,
    initial: State,
    state: State,
    ctl: ControllerState,
    tcbs: Vec<TxControlBlock>,
    steps: Vec<StepRecord>,
}

impl Engine {
    pub fn new(config: &RunConfig, seed: u64) -> Result<Self, EngineError> {
        config.validate()?;
        let s0 = config.initial_state()?;
        Ok(Self::from_state(config, seed, s0))
    }

    /// An engine starting from an arbitrary state, for serial replays.
    pub fn from_state(config: &RunConfig, seed: u64, state: State) -> Self {
        Engine {
            config: config.clone(),
            seed,
            initial: state.clone(),
            state,
            ctl: ControllerState::new(),
            tcbs: config.ids().map(TxControlBlock::new).collect(),
            steps: Vec::new(),
        }
    }

    /// Replays recorded `choose` keys for machine `m`, one per proper step.
    pub fn with_choice_keys(mut self, m: MachineId, keys: Vec<u64>) -> Self {
        self.tcbs[m.0].choice_keys = Some(keys);
        self
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn controller(&self) -> &ControllerState {
        &self.ctl
    }

    pub fn tcb(&self, m: MachineId) -> &TxControlBlock {
        &self.tcbs[m.0]
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn step_index(&self) -> u64 {
        self.steps.len() as u64
    }

    pub fn finished(&self) -> bool {
        self.tcbs.iter().all(|t| t.ctl_state == CtlState::Done) && self.ctl.commit_requests.is_empty()
    }

    fn wrap(&self, step: u64) -> impl Fn(WrapperError) -> EngineError {
        move |source| EngineError::Wrapper { step, source }
    }

    fn plan(&self, i: u64) -> Result<Plan, EngineError> {
        let (s, ctl, seed) = (&self.state, &self.ctl, self.seed);
        let mut needs = BTreeMap::new();
        let mut history_len = BTreeMap::new();
        let mut recovering = BTreeSet::new();
        for tcb in self.tcbs.iter().filter(|t| t.is_active()) {
            let m = &self.config.machines[tcb.machine.0];
            history_len.insert(tcb.machine, tcb.history.len());
            if tcb.ctl_state == CtlState::WaitForRecovery {
                recovering.insert(tcb.machine);
            }
            if wrapper::terminated(m, s).map_err(self.wrap(i))? {
                continue;
            }
            let pair = wrapper::new_locks(m, tcb.machine, s, &ctl.locks, seed, tcb.choice_key()).map_err(self.wrap(i))?;
            if !pair.is_empty() {
                needs.insert(tcb.machine, pair);
            }
        }

        let mut plan = Plan::default();
        for tcb in &self.tcbs {
            let id = tcb.machine;
            if tcb.ctl_state == CtlState::NotRegistered {
                if self.config.registration_step(id) <= i {
                    plan.machines.push((id, MachineAction::Register));
                }
                continue;
            }
            if !tcb.is_active() {
                continue;
            }
            let view = ControllerView {
                locks: &ctl.locks,
                victim: ctl.victims.contains(&id),
            };
            let out = wrapper::wrapper_step(tcb, &self.config.machines[id.0], s, view, i, seed).map_err(self.wrap(i))?;
            if out.kind.is_some() {
                plan.machines.push((id, MachineAction::Wrapper(Box::new(out))));
            }
        }
        let stream = |label: &str| SeedStream::derive(seed, &[label, &i.to_string()]);
        let p = &self.config.policies;
        plan.lock = ctl.lock_handler_step(&needs, p.lock_requests, self.config.wait_mode, &mut stream("lock-handler"));
        plan.commit = ctl.commit_step(p.commits, &mut stream("commit"));
        plan.victim = ctl.deadlock_handler_step(&needs, &history_len, p.victims, &mut stream("deadlock"));
        plan.recovery = ctl.recovery_step(&needs, &recovering, p.recovery, p.release, &mut stream("recovery"));

        if self.config.composition == Composition::Interleave {
            let agents = plan.agents();
            if !agents.is_empty() {
                let pick = agents[stream("interleave").pick(agents.len())];
                plan.keep_only(pick);
            }
        }
        Ok(plan)
    }

    /// Executes one global step.
    pub fn step(&mut self) -> Result<&StepRecord, EngineError> {
        let i = self.step_index();
        let plan = self.plan(i)?;
        let snapshot_locks = self.ctl.locks.clone();
        let held_before: Vec<LockPair> = self.tcbs.iter().map(|t| snapshot_locks.held_by(t.machine)).collect();

        let mut updates = UpdateSet::new();
        let mut per_machine = BTreeMap::new();
        let mut events = Vec::new();
        let mut history_touched = BTreeSet::new();
        let mut flags_touched = BTreeSet::new();
        let mut released: BTreeMap<MachineId, LockPair> = BTreeMap::new();
        let conflict = |machine, what| EngineError::ConflictingBookkeeping { step: i, machine, what };

        for (m, action) in plan.machines {
            let tcb = &mut self.tcbs[m.0];
            match action {
                MachineAction::Register => {
                    tcb.ctl_state = CtlState::TaCtl;
                    tcb.history.clear();
                    self.ctl.register(m);
                    per_machine.insert(
                        m,
                        MachineStep {
                            kind: StepKind::Register,
                            from: CtlState::NotRegistered,
                            to: CtlState::TaCtl,
                            updates: UpdateSet::new(),
                            reads: Vec::new(),
                            request: None,
                            lock_set: None,
                            choice_key: None,
                        },
                    );
                }
                MachineAction::Wrapper(out) => {
                    let kind = out.kind.expect("idle outputs are filtered");
                    if kind == StepKind::Proper {
                        let machine = &self.config.machines[m.0];
                        for (l, _) in &out.reads {
                            if machine.classes.needs_read_lock(l) && !snapshot_locks.r_locked(l, m) && !snapshot_locks.w_locked(l, m) {
                                return Err(EngineError::UnlockedAccess {
                                    step: i,
                                    machine: m,
                                    location: l.clone(),
                                });
                            }
                        }
                        for l in out.updates.locations() {
                            if machine.classes.needs_write_lock(&l) && !snapshot_locks.w_locked(&l, m) {
                                return Err(EngineError::UnlockedAccess {
                                    step: i,
                                    machine: m,
                                    location: l,
                                });
                            }
                        }
                        tcb.proper_steps += 1;
                    }
                    let from = tcb.ctl_state;
                    tcb.ctl_state = out.next;
                    if let Some(pair) = &out.request {
                        self.ctl.insert_lock_request(m, pair.clone(), i);
                        tcb.pending_request_step = Some(i);
                    }
                    if out.commit_call {
                        self.ctl.insert_commit_request(m, i);
                    }
                    if out.consume_flags {
                        flags_touched.insert(m);
                        tcb.granted = None;
                        tcb.refused = None;
                        tcb.pending_request_step = None;
                    }
                    let lock_set = out.record.as_ref().map(|r| r.lock_set.clone());
                    if let Some(rec) = out.record {
                        history_touched.insert(m);
                        tcb.history.push(rec);
                    }
                    updates.extend(out.updates.clone());
                    per_machine.insert(
                        m,
                        MachineStep {
                            kind,
                            from,
                            to: out.next,
                            updates: out.updates,
                            reads: out.reads,
                            request: out.request,
                            lock_set,
                            choice_key: out.choice_key,
                        },
                    );
                }
            }
        }

        if let Some(d) = plan.lock {
            let m = d.machine;
            if !flags_touched.insert(m) {
                return Err(conflict(m, "lock flag"));
            }
            self.ctl.apply_lock_decision(&d);
            let tcb = &mut self.tcbs[m.0];
            events.push(match d.outcome {
                LockOutcome::Grant => {
                    tcb.granted = Some(d.request.locks.clone());
                    ControllerEvent::LockGrant {
                        machine: m,
                        locks: d.request.locks,
                        request_step: d.request.step,
                    }
                }
                LockOutcome::Refuse(reason) => {
                    tcb.refused = Some(d.request.locks.clone());
                    ControllerEvent::LockRefuse {
                        machine: m,
                        locks: d.request.locks,
                        request_step: d.request.step,
                        reason,
                    }
                }
            });
        }

        if let Some(m) = plan.commit {
            if !history_touched.insert(m) {
                return Err(conflict(m, "history"));
            }
            let pair = self.ctl.apply_commit(m);
            self.tcbs[m.0].history.clear();
            released.insert(m, pair.clone());
            events.push(ControllerEvent::Commit {
                machine: m,
                released: pair,
            });
        }

        if let Some(m) = plan.victim {
            self.ctl.victimize(m);
            events.push(ControllerEvent::Victimize { machine: m });
        }

        match plan.recovery {
            Some(RecoveryAction::Unvictimize(m)) => {
                self.ctl.victims.remove(&m);
                events.push(ControllerEvent::Unvictimize { machine: m });
            }
            Some(RecoveryAction::Undo(m)) => {
                if !history_touched.insert(m) {
                    return Err(conflict(m, "history"));
                }
                let tcb = &mut self.tcbs[m.0];
                let entry = tcb.history.last().cloned();
                let restore = self
                    .ctl
                    .undo(m, entry.as_ref())
                    .map_err(|source| EngineError::Controller { step: i, source })?;
                let entry = entry.expect("undo succeeded");
                tcb.history.pop();
                updates.extend(restore.clone());
                released.insert(m, entry.lock_set.clone());
                events.push(ControllerEvent::UndoApplied {
                    machine: m,
                    restored: restore,
                    released: entry.lock_set,
                    origin_step: entry.origin_step,
                    request_step: entry.request_step,
                });
            }
            None => {}
        }

        let clashes = clashing_locations(&updates);
        if !clashes.is_empty() {
            return Err(EngineError::InconsistentGlobalUpdate {
                step: i,
                locations: clashes,
            });
        }
        self.state = self.state.apply(&updates).map_err(|source| EngineError::Asm { step: i, source })?;

        self.ctl
            .locks
            .check()
            .map_err(|source| EngineError::LockViolation { step: i, source })?;
        for (k, before) in held_before.iter().enumerate() {
            let m = MachineId(k);
            let after = self.ctl.locks.held_by(m);
            let rel = released.get(&m).cloned().unwrap_or_default();
            let lost = LockPair::new(
                before
                    .r_loc
                    .difference(&after.r_loc)
                    .filter(|l| !rel.r_loc.contains(*l))
                    .cloned()
                    .collect(),
                before
                    .w_loc
                    .difference(&after.w_loc)
                    .filter(|l| !rel.w_loc.contains(*l))
                    .cloned()
                    .collect(),
            );
            if !lost.is_empty() {
                return Err(EngineError::LockRetention { step: i, machine: m, lost });
            }
        }

        self.steps.push(StepRecord {
            index: i,
            per_machine,
            controller_events: events,
            state_hash: self.state.digest(),
        });
        Ok(self.steps.last().unwrap())
    }

    /// Steps until every machine has committed or the budget is spent.
    pub fn run_to_end(&mut self) -> Result<Outcome, EngineError> {
        while !self.finished() {
            if self.step_index() >= self.config.max_steps {
                return Ok(Outcome::BudgetExhausted);
            }
            self.step()?;
        }
        Ok(Outcome::AllCommitted)
    }

    pub fn into_trace(self, outcome: Outcome) -> Trace {
        Trace {
            header: TraceHeader {
                version: TRACE_VERSION,
                config_digest: self.config.digest(),
                seed: self.seed,
                config: self.config,
                initial_state: self.initial,
            },
            steps: self.steps,
            footer: TraceFooter {
                final_state: self.state,
                outcome,
            },
        }
    }
}

fn clashing_locations(u: &UpdateSet) -> Vec<Location> {
    let mut seen: BTreeMap<&Location, usize> = BTreeMap::new();
    for (l, _) in u.iter() {
        *seen.entry(l).or_default() += 1;
    }
    seen.into_iter().filter(|(_, n)| *n > 1).map(|(l, _)| l.clone()).collect()
}

/// Runs `config` under `seed` to completion or budget exhaustion.
pub fn run(config: &RunConfig, seed: u64) -> Result<Trace, EngineError> {
    let mut e = Engine::new(config, seed)?;
    let outcome = e.run_to_end()?;
    Ok(e.into_trace(outcome))
}
