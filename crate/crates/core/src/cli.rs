//! Command-line front end: `run`, `check` and `fuzz`.
//!
//! Each command writes to the given output and returns its exit code, so the
//! binary stays a one-liner and tests can drive commands in-process.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checker::{brute_force_serializable, check_serializable, lost_update_fixture, CheckError};
use crate::config::{self, Composition, RunConfig};
use crate::engine::{Engine, EngineError};
use crate::fuzz::{self, FuzzParams, Stats};
use crate::trace::{Outcome, Trace};
use crate::txctl::{ReleasePolicy, SelectPolicy, VictimPolicy, WaitMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_BUDGET: i32 = 2;
pub const EXIT_NOT_SERIALIZABLE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "taserial", version, about = "Run, fuzz and check transactional ASM programs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a program file or TOML manifest under the transaction controller.
    Run(RunArgs),
    /// Check a trace file for serializability.
    Check(CheckArgs),
    /// Generate, run and check random programs.
    Fuzz(FuzzArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// A `.ta` program file or a `.toml` manifest.
    pub config: PathBuf,
    /// Defaults to the manifest seed, then 0.
    #[arg(long, env = "TASERIAL_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Write the trace here (`-` for stdout).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub wait_mode: Option<WaitMode>,
    #[arg(long)]
    pub composition: Option<Composition>,
    #[command(flatten)]
    pub policies: PolicyArgs,
}

#[derive(Debug, Default, Args)]
pub struct PolicyArgs {
    #[arg(long, value_name = "POLICY")]
    pub lock_requests: Option<SelectPolicy>,
    #[arg(long, value_name = "POLICY")]
    pub commits: Option<SelectPolicy>,
    #[arg(long, value_name = "POLICY")]
    pub victims: Option<VictimPolicy>,
    #[arg(long, value_name = "POLICY")]
    pub recovery: Option<SelectPolicy>,
    #[arg(long, value_name = "POLICY")]
    pub release: Option<ReleasePolicy>,
}

impl PolicyArgs {
    fn apply(&self, config: &mut RunConfig) {
        let p = &mut config.policies;
        if let Some(v) = self.lock_requests {
            p.lock_requests = v;
        }
        if let Some(v) = self.commits {
            p.commits = v;
        }
        if let Some(v) = self.victims {
            p.victims = v;
        }
        if let Some(v) = self.recovery {
            p.recovery = v;
        }
        if let Some(v) = self.release {
            p.release = v;
        }
    }
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    pub trace: PathBuf,
    /// Also try every commit order (at most 4 committed machines).
    #[arg(long)]
    pub brute_force: bool,
}

#[derive(Debug, Args)]
pub struct FuzzArgs {
    #[arg(long, default_value_t = 100)]
    pub runs: usize,
    #[arg(long, default_value_t = 3)]
    pub machines: usize,
    #[arg(long, env = "TASERIAL_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Nullary shared locations; the unary `a(0)`, `a(1)` come on top.
    #[arg(long, default_value_t = 4)]
    pub locations: usize,
    #[arg(long, default_value_t = 4)]
    pub domain: usize,
    #[arg(long, default_value_t = 4)]
    pub phases: usize,
    #[arg(long, default_value_t = 200)]
    pub max_steps: u64,
    /// Leave out the unary location `a`.
    #[arg(long)]
    pub no_unary: bool,
    /// Fixed wait mode; by default runs alternate between retry and suspend.
    #[arg(long)]
    pub wait_mode: Option<WaitMode>,
    #[arg(long, default_value = "sync")]
    pub composition: Composition,
    /// Re-run a single case by index.
    #[arg(long)]
    pub only: Option<usize>,
    /// Where failing traces go.
    #[arg(long, default_value = ".")]
    pub dump_dir: PathBuf,
    /// Print only the aggregate line.
    #[arg(long)]
    pub quiet: bool,
    /// Check the forged lost-update trace instead; passes iff it is rejected.
    #[arg(long)]
    pub self_test: bool,
}

impl FuzzArgs {
    pub fn params(&self) -> FuzzParams {
        FuzzParams {
            machines: self.machines,
            locations: self.locations,
            unary: !self.no_unary,
            max_phases: self.phases,
            domain_size: self.domain,
            max_steps: self.max_steps,
            wait_mode: self.wait_mode,
            composition: self.composition,
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => dispatch(cli.command, out, err),
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            if e.use_stderr() {
                EXIT_FAILURE
            } else {
                EXIT_OK
            }
        }
    }
}

pub fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let code = match cmd {
        Command::Run(a) => cmd_run(&a, out, err),
        Command::Check(a) => cmd_check(&a, out, err),
        Command::Fuzz(a) => cmd_fuzz(&a, out, err),
    };
    match code {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_FAILURE
        }
    }
}

type CmdResult = Result<i32, Box<dyn std::error::Error>>;

#[derive(Serialize)]
struct RunSummaryLine<'a> {
    outcome: Option<Outcome>,
    seed: u64,
    commit_order: Vec<&'a str>,
    #[serde(flatten)]
    stats: Stats,
    #[serde(skip_serializing_if = "Option::is_none")]
    violation: Option<String>,
}

pub fn cmd_run(a: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let loaded = config::load(&a.config)?;
    for w in &loaded.warnings {
        writeln!(err, "warning: {w}")?;
    }
    let mut config = loaded.config;
    if let Some(n) = a.max_steps {
        config.max_steps = n;
    }
    if let Some(w) = a.wait_mode {
        config.wait_mode = w;
    }
    if let Some(c) = a.composition {
        config.composition = c;
    }
    a.policies.apply(&mut config);
    let seed = a.seed.or(loaded.seed).unwrap_or(0);

    let mut engine = Engine::new(&config, seed)?;
    let (outcome, violation) = match engine.run_to_end() {
        Ok(o) => (Some(o), None),
        Err(e @ EngineError::Config(_)) => return Err(e.into()),
        Err(e) => (None, Some(e.to_string())),
    };
    // A violating run still leaves its steps so far behind for inspection.
    let trace = engine.into_trace(outcome.unwrap_or(Outcome::BudgetExhausted));
    if let Some(path) = &a.trace {
        if path == Path::new("-") {
            trace.write_jsonl(&mut *out)?;
        } else {
            trace.write_jsonl(BufWriter::new(File::create(path)?))?;
        }
    }
    let names: Vec<&str> = trace.commit_order().iter().map(|m| config.machines[m.0].name.as_str()).collect();
    let line = RunSummaryLine {
        outcome,
        seed,
        commit_order: names,
        stats: Stats::of(&trace),
        violation,
    };
    let line = serde_json::to_string(&line)?;
    // Keep stdout a clean trace when the trace goes there.
    if a.trace.as_deref() == Some(Path::new("-")) {
        writeln!(err, "{line}")?;
    } else {
        writeln!(out, "{line}")?;
    }
    Ok(match outcome {
        None => EXIT_FAILURE,
        Some(Outcome::AllCommitted) => EXIT_OK,
        Some(Outcome::BudgetExhausted) => EXIT_BUDGET,
    })
}

pub fn cmd_check(a: &CheckArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let trace = match Trace::read_jsonl(BufReader::new(File::open(&a.trace)?)) {
        Ok(t) => t,
        Err(e) => {
            writeln!(err, "malformed trace: {e}")?;
            return Ok(EXIT_FAILURE);
        }
    };
    let report = match check_serializable(&trace) {
        Ok(r) => r,
        Err(e @ (CheckError::MalformedTrace { .. } | CheckError::UnknownMachine(_))) => {
            writeln!(err, "malformed trace: {e}")?;
            return Ok(EXIT_FAILURE);
        }
        Err(e) => return Err(e.into()),
    };
    writeln!(out, "{}", report.to_json())?;
    if a.brute_force {
        let exhaustive = brute_force_serializable(&trace)?;
        writeln!(out, "{}", exhaustive.to_json())?;
        if exhaustive.verdict.is_serializable() != report.verdict.is_serializable() {
            writeln!(err, "error: commit-order and exhaustive verdicts disagree")?;
            return Ok(EXIT_FAILURE);
        }
    }
    Ok(if report.verdict.is_serializable() {
        EXIT_OK
    } else {
        EXIT_NOT_SERIALIZABLE
    })
}

pub fn cmd_fuzz(a: &FuzzArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    if a.self_test {
        return self_test(out);
    }
    let params = a.params();
    params.validate()?;
    let (report, summaries) = match a.only {
        Some(i) => {
            let s = fuzz::fuzz_one(&params, a.seed, i);
            let report = fuzz::FuzzReport::from_summaries(vec![s.clone()]);
            (report, vec![s])
        }
        None => fuzz::fuzz(&params, a.runs, a.seed, false),
    };
    if !a.quiet {
        for s in &summaries {
            writeln!(out, "{}", serde_json::to_string(s)?)?;
        }
    }
    for f in &report.failures {
        writeln!(
            err,
            "FAIL run {} (seed {}): {}",
            f.index,
            f.seed,
            f.error.as_deref().unwrap_or("not serializable")
        )?;
        writeln!(
            err,
            "  repro: taserial fuzz --seed {} --machines {} --only {}",
            a.seed, a.machines, f.index
        )?;
        if let Some(t) = &f.trace {
            std::fs::create_dir_all(&a.dump_dir)?;
            let path = a.dump_dir.join(format!("fuzz-{}-{}.jsonl", a.seed, f.index));
            t.write_jsonl(BufWriter::new(File::create(&path)?))?;
            writeln!(err, "  trace: {}", path.display())?;
        }
    }
    #[derive(Serialize)]
    struct Aggregate<'a> {
        runs: usize,
        serializable: usize,
        all_committed: usize,
        #[serde(flatten)]
        totals: &'a Stats,
    }
    let agg = Aggregate {
        runs: report.runs,
        serializable: report.serializable,
        all_committed: report.all_committed,
        totals: &report.totals,
    };
    writeln!(out, "{}", serde_json::to_string(&agg)?)?;
    Ok(if report.passed() { EXIT_OK } else { EXIT_FAILURE })
}

fn self_test(out: &mut dyn Write) -> CmdResult {
    let forged = lost_update_fixture();
    let fast = check_serializable(&forged)?;
    let exhaustive = brute_force_serializable(&forged)?;
    writeln!(out, "{}", fast.to_json())?;
    writeln!(out, "{}", exhaustive.to_json())?;
    let caught = !fast.verdict.is_serializable() && !exhaustive.verdict.is_serializable();
    writeln!(
        out,
        "self-test: forged lost update {}",
        if caught { "rejected" } else { "ACCEPTED" }
    )?;
    Ok(if caught { EXIT_OK } else { EXIT_FAILURE })
}
