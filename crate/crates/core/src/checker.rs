//! Serializability checking by cleansing and comparison with serial runs.
//!
//! A machine's schedule is cleansed by dropping idle steps, refused lock
//! requests and every step erased by recovery (the bracket steps, undone
//! proper steps and the requests that fed them). A run is serializable when
//! each committed machine's cleansed schedule, including the values it read,
//! matches the one it has in a run where the machines execute alone, one
//! after another, in commit order.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::config::RunConfig;
use crate::engine::{Engine, EngineError};
use crate::machine::MachineId;
use crate::rng::SeedStream;
use crate::state::UpdateSet;
use crate::trace::{
    project_schedule, ControllerEvent, MachineStep, Outcome, Schedule, ScheduleEntry, StepRecord, Trace, TraceFooter, TraceHeader,
    TRACE_VERSION,
};
use crate::txctl::LockPair;
use crate::value::{Location, Value};
use crate::wrapper::StepKind;

/// Largest number of committed machines the exhaustive oracle accepts.
pub const BRUTE_FORCE_LIMIT: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum CheckError {
    #[error("malformed trace for machine {machine}: {message}")]
    MalformedTrace { machine: MachineId, message: String },
    #[error("machine {0} has not committed")]
    UncommittedMachine(MachineId),
    #[error("{0} committed machines exceed the exhaustive limit of {BRUTE_FORCE_LIMIT}")]
    TooManyMachines(usize),
    #[error("traces were produced by different configurations")]
    ConfigMismatch,
    #[error("unknown machine {0}")]
    UnknownMachine(MachineId),
    #[error("serial run: {0}")]
    Engine(#[from] EngineError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CleansedEntry {
    pub step: u64,
    pub kind: StepKind,
    pub updates: UpdateSet,
    pub reads: Vec<(Location, Value)>,
    pub request: Option<LockPair>,
    pub choice_key: Option<u64>,
}

impl CleansedEntry {
    fn from_action(step: u64, a: &MachineStep) -> Self {
        CleansedEntry {
            step,
            kind: a.kind,
            updates: a.updates.clone(),
            reads: a.reads.clone(),
            request: a.request.clone(),
            choice_key: a.choice_key,
        }
    }

    /// The part compared between runs; step indices and choice keys differ.
    fn observable(&self) -> (StepKind, &UpdateSet, &[(Location, Value)], Option<&LockPair>) {
        (self.kind, &self.updates, &self.reads, self.request.as_ref())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CleansedSchedule {
    pub machine: MachineId,
    pub entries: Vec<CleansedEntry>,
}

impl CleansedSchedule {
    /// The residue as a schedule again, for idempotence checks.
    pub fn to_schedule(&self) -> Schedule {
        let entries = self
            .entries
            .iter()
            .map(|e| ScheduleEntry {
                step: e.step,
                action: Some(MachineStep {
                    kind: e.kind,
                    from: crate::wrapper::CtlState::TaCtl,
                    to: crate::wrapper::CtlState::TaCtl,
                    updates: e.updates.clone(),
                    reads: e.reads.clone(),
                    request: e.request.clone(),
                    lock_set: None,
                    choice_key: e.choice_key,
                }),
                events: Vec::new(),
            })
            .collect();
        Schedule {
            machine: self.machine,
            entries,
        }
    }

    /// Choice keys of the surviving proper steps, in order.
    pub fn choice_keys(&self) -> Vec<u64> {
        self.entries
            .iter()
            .filter(|e| e.kind == StepKind::Proper)
            .filter_map(|e| e.choice_key)
            .collect()
    }
}

/// Steps erased by one recovery bracket.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct Bracket {
    steps: BTreeSet<u64>,
}

/// Deletions found in a schedule: refused-request segments and brackets.
struct Deletions {
    refused: BTreeSet<u64>,
    brackets: Vec<Bracket>,
}

fn find_deletions(s: &Schedule) -> Result<Deletions, CheckError> {
    let malformed = |message: String| CheckError::MalformedTrace {
        machine: s.machine,
        message,
    };
    let kinds: BTreeMap<u64, StepKind> = s
        .entries
        .iter()
        .filter_map(|e| e.action.as_ref().map(|a| (e.step, a.kind)))
        .collect();
    let mut refused = BTreeSet::new();
    let mut brackets = Vec::new();
    let mut open: Option<Bracket> = None;
    for e in &s.entries {
        for ev in &e.events {
            match ev {
                ControllerEvent::LockRefuse { request_step, .. } => {
                    if kinds.get(request_step) != Some(&StepKind::LockRequest) {
                        return Err(malformed(format!("refusal at step {} of a request that was not made", e.step)));
                    }
                    refused.insert(*request_step);
                }
                ControllerEvent::UndoApplied {
                    origin_step, request_step, ..
                } => {
                    let b = open
                        .as_mut()
                        .ok_or_else(|| malformed(format!("undo at step {} outside a recovery bracket", e.step)))?;
                    if kinds.get(origin_step) != Some(&StepKind::Proper) {
                        return Err(malformed(format!("undo at step {} has no originating proper step", e.step)));
                    }
                    b.steps.insert(*origin_step);
                    if let Some(r) = request_step {
                        if kinds.get(r) != Some(&StepKind::LockRequest) {
                            return Err(malformed(format!("undo at step {} names a missing request", e.step)));
                        }
                        b.steps.insert(*r);
                    }
                }
                _ => {}
            }
        }
        match kinds.get(&e.step) {
            Some(StepKind::RefusedReturn) => {
                refused.insert(e.step);
            }
            Some(StepKind::RecoveryEntry) => {
                if open.is_some() {
                    return Err(malformed(format!("nested recovery entry at step {}", e.step)));
                }
                open = Some(Bracket {
                    steps: BTreeSet::from([e.step]),
                });
            }
            Some(StepKind::RecoveryExit) => {
                let mut b = open
                    .take()
                    .ok_or_else(|| malformed(format!("recovery exit at step {} without entry", e.step)))?;
                b.steps.insert(e.step);
                brackets.push(b);
            }
            _ => {}
        }
    }
    // A bracket still open when the trace ends belongs to an unfinished
    // recovery; its steps are erased as well.
    brackets.extend(open);
    Ok(Deletions { refused, brackets })
}

fn residue(s: &Schedule, keep: impl Fn(u64) -> bool) -> Vec<CleansedEntry> {
    s.entries
        .iter()
        .filter(|e| keep(e.step))
        .filter_map(|e| e.action.as_ref().map(|a| CleansedEntry::from_action(e.step, a)))
        .collect()
}

pub fn cleanse_schedule(s: &Schedule) -> Result<CleansedSchedule, CheckError> {
    let d = find_deletions(s)?;
    let erased: BTreeSet<u64> = d.refused.iter().chain(d.brackets.iter().flat_map(|b| &b.steps)).copied().collect();
    Ok(CleansedSchedule {
        machine: s.machine,
        entries: residue(s, |i| !erased.contains(&i)),
    })
}

pub fn cleanse(trace: &Trace, m: MachineId) -> Result<CleansedSchedule, CheckError> {
    let s = project_schedule(trace, m).map_err(|_| CheckError::UnknownMachine(m))?;
    cleanse_schedule(&s)
}

/// Cleansing with the bracket deletions applied one at a time in a seeded
/// random order, removing entries from a working list as it goes.
pub fn cleanse_confluent(trace: &Trace, m: MachineId, order_seed: u64) -> Result<CleansedSchedule, CheckError> {
    let s = project_schedule(trace, m).map_err(|_| CheckError::UnknownMachine(m))?;
    let d = find_deletions(&s)?;
    let mut rng = SeedStream::derive(order_seed, &["cleanse-order"]);
    let mut ops: Vec<BTreeSet<u64>> = d.brackets.into_iter().map(|b| b.steps).collect();
    ops.push(d.refused);
    rng.shuffle(&mut ops);
    let mut working: Vec<ScheduleEntry> = s.entries.into_iter().filter(|e| e.action.is_some()).collect();
    for op in ops {
        working.retain(|e| !op.contains(&e.step));
    }
    Ok(CleansedSchedule {
        machine: m,
        entries: working
            .iter()
            .map(|e| CleansedEntry::from_action(e.step, e.action.as_ref().unwrap()))
            .collect(),
    })
}

/// Where two runs first differ.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub machine: String,
    pub position: usize,
    pub reason: String,
}

fn pairs<'a>(it: impl IntoIterator<Item = &'a (Location, Value)>) -> String {
    let items: Vec<String> = it.into_iter().map(|(l, v)| format!("{l}={v}")).collect();
    format!("{{{}}}", items.join(", "))
}

fn compare_schedules(name: &str, a: &CleansedSchedule, b: &CleansedSchedule) -> Option<Witness> {
    let witness = |position, reason: String| Witness {
        machine: name.to_string(),
        position,
        reason,
    };
    for (k, (x, y)) in a.entries.iter().zip(&b.entries).enumerate() {
        if x.kind != y.kind {
            return Some(witness(k, format!("step kinds differ: {:?} vs {:?}", x.kind, y.kind)));
        }
        if x.reads != y.reads {
            return Some(witness(k, format!("reads differ: {} vs {}", pairs(&x.reads), pairs(&y.reads))));
        }
        if x.updates != y.updates {
            return Some(witness(
                k,
                format!("updates differ: {} vs {}", pairs(x.updates.iter()), pairs(y.updates.iter())),
            ));
        }
        if x.request != y.request {
            return Some(witness(k, "lock requests differ".into()));
        }
        debug_assert_eq!(x.observable(), y.observable());
    }
    if a.entries.len() != b.entries.len() {
        let n = a.entries.len().min(b.entries.len());
        return Some(witness(
            n,
            format!("schedule lengths differ: {} vs {}", a.entries.len(), b.entries.len()),
        ));
    }
    None
}

fn first_difference(a: &Trace, b: &Trace, machines: &[MachineId]) -> Result<Option<Witness>, CheckError> {
    if a.header.config_digest != b.header.config_digest {
        return Err(CheckError::ConfigMismatch);
    }
    for &m in machines {
        let name = &a.config().machines[m.0].name;
        if let Some(w) = compare_schedules(name, &cleanse(a, m)?, &cleanse(b, m)?) {
            return Ok(Some(w));
        }
    }
    Ok(None)
}

/// Equal cleansed schedules and reads for every machine.
pub fn equivalent(a: &Trace, b: &Trace) -> Result<bool, CheckError> {
    let all: Vec<MachineId> = a.config().ids().collect();
    Ok(first_difference(a, b, &all)?.is_none())
}

fn offset_event(e: &ControllerEvent, id: MachineId, off: u64) -> ControllerEvent {
    let mut e = e.clone();
    match &mut e {
        ControllerEvent::LockGrant { machine, request_step, .. } | ControllerEvent::LockRefuse { machine, request_step, .. } => {
            *machine = id;
            *request_step += off;
        }
        ControllerEvent::Commit { machine, .. } | ControllerEvent::Victimize { machine } | ControllerEvent::Unvictimize { machine } => {
            *machine = id
        }
        ControllerEvent::UndoApplied {
            machine,
            origin_step,
            request_step,
            ..
        } => {
            *machine = id;
            *origin_step += off;
            if let Some(r) = request_step {
                *r += off;
            }
        }
    }
    e
}

/// Runs the machines of `order` alone, one after another, starting from the
/// initial state of `trace`. Each machine replays the choices of its
/// surviving proper steps.
pub fn build_serial_run_in(trace: &Trace, order: &[MachineId]) -> Result<Trace, CheckError> {
    let config = trace.config();
    let seed = trace.header.seed;
    let mut state = trace.header.initial_state.clone();
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut outcome = Outcome::AllCommitted;
    for &m in order {
        if m.0 >= config.machines.len() {
            return Err(CheckError::UnknownMachine(m));
        }
        let keys = cleanse(trace, m)?.choice_keys();
        let mut solo = Engine::from_state(&config.solo(m), seed, state).with_choice_keys(MachineId(0), keys);
        if solo.run_to_end()? == Outcome::BudgetExhausted {
            outcome = Outcome::BudgetExhausted;
        }
        let off = steps.len() as u64;
        let solo = solo.into_trace(outcome);
        for rec in solo.steps {
            steps.push(StepRecord {
                index: rec.index + off,
                per_machine: rec.per_machine.into_values().map(|ms| (m, ms)).collect(),
                controller_events: rec.controller_events.iter().map(|e| offset_event(e, m, off)).collect(),
                state_hash: rec.state_hash,
            });
        }
        state = solo.footer.final_state;
        if outcome == Outcome::BudgetExhausted {
            break;
        }
    }
    Ok(Trace {
        header: TraceHeader {
            version: TRACE_VERSION,
            config_digest: config.digest(),
            seed,
            config: config.clone(),
            initial_state: trace.header.initial_state.clone(),
        },
        steps,
        footer: TraceFooter {
            final_state: state,
            outcome,
        },
    })
}

/// The serial run in commit order. Every machine must have committed.
pub fn build_serial_run(trace: &Trace) -> Result<Trace, CheckError> {
    let order = trace.commit_order();
    if let Some(m) = trace.config().ids().find(|m| !order.contains(m)) {
        return Err(CheckError::UncommittedMachine(m));
    }
    build_serial_run_in(trace, &order)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum Verdict {
    Serializable { order: Vec<MachineId> },
    NotSerializable { witness: Witness },
}

impl Verdict {
    pub fn is_serializable(&self) -> bool {
        matches!(self, Verdict::Serializable { .. })
    }
}

/// A verdict together with the machines left out because they never committed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Report {
    #[serde(flatten)]
    pub verdict: Verdict,
    pub order_names: Vec<String>,
    pub truncated: Vec<String>,
}

impl Report {
    fn new(trace: &Trace, verdict: Verdict) -> Self {
        let name = |m: &MachineId| trace.config().machines[m.0].name.clone();
        let committed = trace.commit_order();
        let order_names = match &verdict {
            Verdict::Serializable { order } => order.iter().map(name).collect(),
            Verdict::NotSerializable { .. } => Vec::new(),
        };
        Report {
            verdict,
            order_names,
            truncated: trace.config().ids().filter(|m| !committed.contains(m)).map(|m| name(&m)).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

fn check_order(trace: &Trace, order: &[MachineId]) -> Result<Option<Witness>, CheckError> {
    let serial = build_serial_run_in(trace, order)?;
    first_difference(trace, &serial, order)
}

/// Compares the run with its commit-order serial run. Machines that never
/// committed are left out and listed in the report.
pub fn check_serializable(trace: &Trace) -> Result<Report, CheckError> {
    let order = trace.commit_order();
    let verdict = match check_order(trace, &order)? {
        None => Verdict::Serializable { order },
        Some(witness) => Verdict::NotSerializable { witness },
    };
    Ok(Report::new(trace, verdict))
}

fn permutations(items: &[MachineId]) -> Vec<Vec<MachineId>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

/// Tries every order of the committed machines.
pub fn brute_force_serializable(trace: &Trace) -> Result<Report, CheckError> {
    let mut committed = trace.commit_order();
    if committed.len() > BRUTE_FORCE_LIMIT {
        return Err(CheckError::TooManyMachines(committed.len()));
    }
    committed.sort();
    let mut first = None;
    for order in permutations(&committed) {
        match check_order(trace, &order)? {
            None => return Ok(Report::new(trace, Verdict::Serializable { order })),
            Some(w) => {
                first.get_or_insert(w);
            }
        }
    }
    let witness = first.expect("at least one order is tried");
    Ok(Report::new(trace, Verdict::NotSerializable { witness }))
}

/// Two counters that each read `x` and write `x + 1`.
pub const LOST_UPDATE_PROGRAM: &str = "
machine A
  shared x/0
  init x := 0
  init a_pc := 0
  terminated: a_pc = 1
  rule: par { x := x + 1; a_pc := 1 }
machine B
  shared x/0
  init b_pc := 0
  terminated: b_pc = 1
  rule: par { x := x + 1; b_pc := 1 }
";

/// A forged run of [`LOST_UPDATE_PROGRAM`] in which both machines read
/// `x = 0` and write `x = 1`, as if each had run alone from the initial
/// state. Both hold the write lock on `x` at once, so no controller could
/// produce it.
pub fn lost_update_fixture() -> Trace {
    let config = RunConfig::from_source(LOST_UPDATE_PROGRAM, 2).expect("fixture parses");
    let s0 = config.initial_state().expect("fixture initial state");
    let solo: Vec<Trace> = config
        .ids()
        .map(|m| {
            let mut e = Engine::from_state(&config.solo(m), 0, s0.clone());
            let outcome = e.run_to_end().expect("solo run");
            e.into_trace(outcome)
        })
        .collect();
    let len = solo.iter().map(|t| t.steps.len()).max().unwrap_or(0);
    let mut state = s0.clone();
    let mut steps = Vec::new();
    for i in 0..len {
        let mut rec = StepRecord {
            index: i as u64,
            per_machine: BTreeMap::new(),
            controller_events: Vec::new(),
            state_hash: 0,
        };
        for (k, t) in solo.iter().enumerate() {
            if let Some(r) = t.steps.get(i) {
                let m = MachineId(k);
                rec.per_machine.extend(r.per_machine.values().map(|ms| (m, ms.clone())));
                rec.controller_events
                    .extend(r.controller_events.iter().map(|e| offset_event(e, m, 0)));
            }
        }
        state = state.apply(&rec.global_updates()).expect("forged updates agree");
        rec.state_hash = state.digest();
        steps.push(rec);
    }
    Trace {
        header: TraceHeader {
            version: TRACE_VERSION,
            config_digest: config.digest(),
            seed: 0,
            config,
            initial_state: s0,
        },
        steps,
        footer: TraceFooter {
            final_state: state,
            outcome: Outcome::AllCommitted,
        },
    }
}
