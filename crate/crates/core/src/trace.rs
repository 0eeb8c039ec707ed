//! Run traces: one record per global step, serialized as line-delimited JSON.
//!
//! A trace file holds a header line (format version, configuration, seed and
//! initial state), one line per step, and a final line with the final state
//! and outcome.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::machine::MachineId;
use crate::state::{State, UpdateSet};
use crate::txctl::{LockPair, RefuseReason};
use crate::value::{Location, Value};
use crate::wrapper::{CtlState, StepKind};

pub const TRACE_VERSION: u32 = 1;

/// What one machine did in one global step. Idle machines have no entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineStep {
    pub kind: StepKind,
    pub from: CtlState,
    pub to: CtlState,
    /// Proper updates of the wrapped program.
    #[serde(default, skip_serializing_if = "UpdateSet::is_empty")]
    pub updates: UpdateSet,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reads: Vec<(Location, Value)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<LockPair>,
    /// Locks recorded in the history entry of a proper step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lock_set: Option<LockPair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choice_key: Option<u64>,
}

impl MachineStep {
    pub fn is_proper(&self) -> bool {
        self.kind == StepKind::Proper
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum ControllerEvent {
    LockGrant {
        machine: MachineId,
        locks: LockPair,
        request_step: u64,
    },
    LockRefuse {
        machine: MachineId,
        locks: LockPair,
        request_step: u64,
        reason: RefuseReason,
    },
    Commit {
        machine: MachineId,
        released: LockPair,
    },
    Victimize {
        machine: MachineId,
    },
    Unvictimize {
        machine: MachineId,
    },
    UndoApplied {
        machine: MachineId,
        restored: UpdateSet,
        released: LockPair,
        origin_step: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        request_step: Option<u64>,
    },
}

impl ControllerEvent {
    pub fn machine(&self) -> MachineId {
        match self {
            ControllerEvent::LockGrant { machine, .. }
            | ControllerEvent::LockRefuse { machine, .. }
            | ControllerEvent::Commit { machine, .. }
            | ControllerEvent::Victimize { machine }
            | ControllerEvent::Unvictimize { machine }
            | ControllerEvent::UndoApplied { machine, .. } => *machine,
        }
    }

    /// State updates the event contributes to the global update set.
    pub fn updates(&self) -> Option<&UpdateSet> {
        match self {
            ControllerEvent::UndoApplied { restored, .. } => Some(restored),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: u64,
    pub per_machine: BTreeMap<MachineId, MachineStep>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub controller_events: Vec<ControllerEvent>,
    pub state_hash: u64,
}

impl StepRecord {
    /// The global update set of the step: machine updates and restores.
    pub fn global_updates(&self) -> UpdateSet {
        let mut u = UpdateSet::new();
        for ms in self.per_machine.values() {
            u.extend(ms.updates.clone());
        }
        for e in &self.controller_events {
            if let Some(r) = e.updates() {
                u.extend(r.clone());
            }
        }
        u
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    AllCommitted,
    BudgetExhausted,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub version: u32,
    pub config_digest: String,
    pub seed: u64,
    pub config: RunConfig,
    pub initial_state: State,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceFooter {
    pub final_state: State,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub header: TraceHeader,
    pub steps: Vec<StepRecord>,
    pub footer: TraceFooter,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Line {
    Header(TraceHeader),
    Step(StepRecord),
    End(TraceFooter),
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("unknown machine {0}")]
    UnknownMachine(MachineId),
}

impl Trace {
    pub fn config(&self) -> &RunConfig {
        &self.header.config
    }

    /// Machines with a commit event, in commit order.
    pub fn commit_order(&self) -> Vec<MachineId> {
        self.steps
            .iter()
            .flat_map(|s| &s.controller_events)
            .filter_map(|e| match e {
                ControllerEvent::Commit { machine, .. } => Some(*machine),
                _ => None,
            })
            .collect()
    }

    pub fn events(&self) -> impl Iterator<Item = (u64, &ControllerEvent)> {
        self.steps
            .iter()
            .flat_map(|s| s.controller_events.iter().map(move |e| (s.index, e)))
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        let mut line = |l: &Line| -> std::io::Result<()> {
            serde_json::to_writer(&mut w, l)?;
            w.write_all(b"\n")
        };
        line(&Line::Header(self.header.clone()))?;
        for s in &self.steps {
            line(&Line::Step(s.clone()))?;
        }
        line(&Line::End(self.footer.clone()))
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Trace, TraceError> {
        let mut header = None;
        let mut steps = Vec::new();
        let mut footer = None;
        let mut n = 0;
        for (i, text) in r.lines().enumerate() {
            let text = text?;
            n = i + 1;
            if text.trim().is_empty() {
                continue;
            }
            let bad = |message: String| TraceError::Malformed { line: i + 1, message };
            if footer.is_some() {
                return Err(bad("content after the end record".into()));
            }
            let line: Line = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
            match line {
                Line::Header(h) if header.is_none() && i == 0 => {
                    if h.version != TRACE_VERSION {
                        return Err(bad(format!("unsupported trace version {}", h.version)));
                    }
                    if h.config.digest() != h.config_digest {
                        return Err(bad("config digest mismatch".into()));
                    }
                    header = Some(h);
                }
                Line::Header(_) => return Err(bad("unexpected header".into())),
                Line::Step(_) if header.is_none() => return Err(bad("step before header".into())),
                Line::Step(s) => {
                    if s.index != steps.len() as u64 {
                        return Err(bad(format!("expected step {}, found {}", steps.len(), s.index)));
                    }
                    steps.push(s);
                }
                Line::End(f) => footer = Some(f),
            }
        }
        let header = header.ok_or(TraceError::Malformed {
            line: 1,
            message: "missing header".into(),
        })?;
        let footer = footer.ok_or(TraceError::Malformed {
            line: n,
            message: "missing end record (truncated trace?)".into(),
        })?;
        Ok(Trace { header, steps, footer })
    }

    pub fn from_jsonl(text: &str) -> Result<Trace, TraceError> {
        Self::read_jsonl(text.as_bytes())
    }
}

/// One step of a machine's schedule. Idle steps have no action.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScheduleEntry {
    pub step: u64,
    pub action: Option<MachineStep>,
    /// Controller events of this step whose subject is the machine.
    pub events: Vec<ControllerEvent>,
}

impl ScheduleEntry {
    pub fn updates(&self) -> UpdateSet {
        self.action.as_ref().map(|a| a.updates.clone()).unwrap_or_default()
    }
}

/// Projection of a trace onto one machine.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub machine: MachineId,
    pub entries: Vec<ScheduleEntry>,
}

pub fn project_schedule(trace: &Trace, m: MachineId) -> Result<Schedule, TraceError> {
    if m.0 >= trace.config().machines.len() {
        return Err(TraceError::UnknownMachine(m));
    }
    let entries = trace
        .steps
        .iter()
        .map(|s| ScheduleEntry {
            step: s.index,
            action: s.per_machine.get(&m).cloned(),
            events: s.controller_events.iter().filter(|e| e.machine() == m).cloned().collect(),
        })
        .collect();
    Ok(Schedule { machine: m, entries })
}
