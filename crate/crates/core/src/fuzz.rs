//! Random workloads: generated programs over a few shared locations, run
//! under the controller and checked for serializability.

use rayon::prelude::*;
use serde::Serialize;

use crate::checker::{check_serializable, CheckError, Verdict};
use crate::config::{Composition, ConfigError, RunConfig};
use crate::engine::{run, EngineError};
use crate::rng::{derive_seed, SeedStream};
use crate::trace::{ControllerEvent, Outcome, Trace};
use crate::txctl::WaitMode;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FuzzParams {
    pub machines: usize,
    /// Nullary shared locations `s0, s1, ...`.
    pub locations: usize,
    /// Adds a unary shared function `a` over `0` and `1`, reached through
    /// `choose` and `forall`.
    pub unary: bool,
    pub max_phases: usize,
    pub domain_size: usize,
    pub max_steps: u64,
    /// `None` alternates retry and suspend by run index.
    pub wait_mode: Option<WaitMode>,
    pub composition: Composition,
}

impl Default for FuzzParams {
    fn default() -> Self {
        FuzzParams {
            machines: 3,
            locations: 4,
            unary: true,
            max_phases: 4,
            domain_size: 4,
            max_steps: 200,
            wait_mode: None,
            composition: Composition::Sync,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FuzzError {
    #[error("invalid fuzz parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Check(#[from] CheckError),
}

impl FuzzParams {
    pub fn shared_locations(&self) -> usize {
        self.locations + if self.unary { 2 } else { 0 }
    }

    pub fn validate(&self) -> Result<(), FuzzError> {
        let bad = |m: &str| Err(FuzzError::Params(m.into()));
        if self.machines == 0 {
            return bad("at least one machine");
        }
        if self.locations == 0 {
            return bad("at least one shared location");
        }
        if self.shared_locations() > 8 {
            return bad("at most 8 shared locations, counting a(0) and a(1)");
        }
        if !(2..=8).contains(&self.domain_size) {
            return bad("domain size must be between 2 and 8");
        }
        if self.max_phases == 0 {
            return bad("at least one phase");
        }
        Ok(())
    }
}

struct Gen<'a> {
    rng: SeedStream,
    p: &'a FuzzParams,
    prefix: String,
}

impl Gen<'_> {
    fn shared(&mut self) -> String {
        format!("s{}", self.rng.pick(self.p.locations))
    }

    fn small(&mut self) -> i64 {
        self.rng.pick(4) as i64 - 1
    }

    fn operand(&mut self) -> String {
        match self.rng.pick(3) {
            0 => self.small().to_string(),
            1 => format!("{}_t", self.prefix),
            _ => self.shared(),
        }
    }

    /// One statement writing only the names in its returned write list.
    fn statement(&mut self, taken: &[String]) -> Option<(String, Vec<String>)> {
        let t = format!("{}_t", self.prefix);
        for _ in 0..8 {
            let kinds = if self.p.unary { 6 } else { 4 };
            let (text, writes) = match self.rng.pick(kinds) {
                0 => {
                    let dst = self.shared();
                    let (a, b) = (self.operand(), self.small());
                    (format!("{dst} := {a} + {b}"), vec![dst])
                }
                1 => (format!("{t} := {}", self.shared()), vec![t.clone()]),
                2 => {
                    let (g, c) = (self.shared(), self.small());
                    let (d1, d2) = (self.shared(), self.shared());
                    let (a, b) = (self.operand(), self.operand());
                    let text = format!("if {g} < {c} then {d1} := {a} else {d2} := {b} - 1");
                    let mut w = vec![d1, d2];
                    w.dedup();
                    (text, w)
                }
                3 => {
                    let (src, dst, c) = (self.shared(), self.shared(), self.small());
                    (format!("let v = {src} in {dst} := v + {c}"), vec![dst])
                }
                4 => {
                    let src = self.operand();
                    (format!("choose i with i < 2 do a(i) := a(i) + {src}"), vec!["a".into()])
                }
                _ => {
                    let src = self.shared();
                    (format!("forall i with i < 2 do a(i) := {src} - i"), vec!["a".into()])
                }
            };
            if writes.iter().all(|w| !taken.contains(w)) {
                return Some((text, writes));
            }
        }
        None
    }

    fn machine(&mut self, j: usize) -> String {
        let pc = format!("{}_pc", self.prefix);
        let phases = 1 + self.rng.pick(self.p.max_phases);
        let mut decls: Vec<String> = (0..self.p.locations).map(|k| format!("s{k}/0")).collect();
        if self.p.unary {
            decls.push("a/1".into());
        }
        let mut out = format!("machine M{j}\n  shared {}\n", decls.join(", "));
        if j == 0 {
            for k in 0..self.p.locations {
                out += &format!("  init s{k} := {}\n", self.rng.pick(3));
            }
            if self.p.unary {
                out += "  init a(0) := 0\n  init a(1) := 0\n";
            }
        }
        out += &format!("  init {pc} := 0\n  init {}_t := 0\n", self.prefix);
        out += &format!("  terminated: {pc} = {phases}\n  rule:");
        for k in 0..phases {
            let mut taken = vec![pc.clone()];
            let mut stmts = vec![format!("{pc} := {}", k + 1)];
            for _ in 0..1 + self.rng.pick(2) {
                if let Some((text, writes)) = self.statement(&taken) {
                    stmts.push(text);
                    taken.extend(writes);
                }
            }
            let kw = if k == 0 { " if" } else { " else if" };
            out += &format!("{kw} {pc} = {k} then par {{ {} }}\n   ", stmts.join("; "));
        }
        out.truncate(out.trim_end().len());
        out.push('\n');
        out
    }
}

/// A random configuration; the same `(params, seed)` gives the same programs.
pub fn generate(params: &FuzzParams, seed: u64, wait_mode: WaitMode) -> Result<RunConfig, FuzzError> {
    params.validate()?;
    let mut src = String::new();
    for j in 0..params.machines {
        let mut g = Gen {
            rng: SeedStream::derive(seed, &["fuzz-program", &j.to_string()]),
            p: params,
            prefix: format!("m{j}"),
        };
        src += &g.machine(j);
    }
    let config = RunConfig::from_source(&src, params.domain_size)?
        .with_max_steps(params.max_steps)
        .with_wait_mode(wait_mode)
        .with_composition(params.composition);
    config.validate()?;
    Ok(config)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Stats {
    pub steps: u64,
    pub commits: u64,
    pub grants: u64,
    pub refusals: u64,
    pub victimizations: u64,
    pub undos: u64,
}

impl Stats {
    pub fn of(trace: &Trace) -> Self {
        let mut s = Stats {
            steps: trace.steps.len() as u64,
            ..Stats::default()
        };
        for (_, e) in trace.events() {
            match e {
                ControllerEvent::LockGrant { .. } => s.grants += 1,
                ControllerEvent::LockRefuse { .. } => s.refusals += 1,
                ControllerEvent::Commit { .. } => s.commits += 1,
                ControllerEvent::Victimize { .. } => s.victimizations += 1,
                ControllerEvent::UndoApplied { .. } => s.undos += 1,
                ControllerEvent::Unvictimize { .. } => {}
            }
        }
        s
    }

    fn add(&mut self, o: &Stats) {
        self.steps += o.steps;
        self.commits += o.commits;
        self.grants += o.grants;
        self.refusals += o.refusals;
        self.victimizations += o.victimizations;
        self.undos += o.undos;
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub index: usize,
    /// Repro seed: `generate(params, seed, wait_mode)` then `run(.., seed)`.
    pub seed: u64,
    pub wait_mode: WaitMode,
    pub outcome: Option<Outcome>,
    pub serializable: bool,
    pub stats: Stats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub trace: Option<Trace>,
}

pub fn run_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, &["fuzz-run", &index.to_string()])
}

pub fn wait_mode_for(params: &FuzzParams, index: usize) -> WaitMode {
    params.wait_mode.unwrap_or(if index.is_multiple_of(2) {
        WaitMode::Retry
    } else {
        WaitMode::Suspend
    })
}

/// Generates, runs and checks one configuration.
pub fn fuzz_one(params: &FuzzParams, master: u64, index: usize) -> RunSummary {
    let seed = run_seed(master, index);
    let wait_mode = wait_mode_for(params, index);
    let mut summary = RunSummary {
        index,
        seed,
        wait_mode,
        outcome: None,
        serializable: false,
        stats: Stats::default(),
        error: None,
        trace: None,
    };
    let result = (|| -> Result<(Trace, Verdict), FuzzError> {
        let config = generate(params, seed, wait_mode)?;
        let trace = run(&config, seed)?;
        let report = check_serializable(&trace)?;
        Ok((trace, report.verdict))
    })();
    match result {
        Ok((trace, verdict)) => {
            summary.outcome = Some(trace.footer.outcome);
            summary.stats = Stats::of(&trace);
            summary.serializable = verdict.is_serializable();
            if let Verdict::NotSerializable { witness } = verdict {
                summary.error = Some(format!("{witness:?}"));
            }
            summary.trace = Some(trace);
        }
        Err(e) => summary.error = Some(e.to_string()),
    }
    summary
}

#[derive(Clone, Debug, Serialize)]
pub struct FuzzReport {
    pub runs: usize,
    pub serializable: usize,
    pub all_committed: usize,
    pub totals: Stats,
    pub failures: Vec<RunSummary>,
}

impl FuzzReport {
    pub fn from_summaries(summaries: Vec<RunSummary>) -> Self {
        let mut totals = Stats::default();
        for s in &summaries {
            totals.add(&s.stats);
        }
        FuzzReport {
            runs: summaries.len(),
            serializable: summaries.iter().filter(|s| s.serializable).count(),
            all_committed: summaries.iter().filter(|s| s.outcome == Some(Outcome::AllCommitted)).count(),
            totals,
            failures: summaries.into_iter().filter(|s| !s.serializable).collect(),
        }
    }

    pub fn passed(&self) -> bool {
        self.serializable == self.runs
    }
}

/// Runs `runs` independent cases in parallel. `keep_traces` retains every
/// trace in `summaries`; failing traces are always kept.
pub fn fuzz(params: &FuzzParams, runs: usize, master: u64, keep_traces: bool) -> (FuzzReport, Vec<RunSummary>) {
    let mut summaries: Vec<RunSummary> = (0..runs).into_par_iter().map(|i| fuzz_one(params, master, i)).collect();
    let report = FuzzReport::from_summaries(summaries.clone());
    if !keep_traces {
        summaries.iter_mut().for_each(|s| s.trace = None);
    }
    (report, summaries)
}
