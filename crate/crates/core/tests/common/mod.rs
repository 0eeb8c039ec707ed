//! Test support shared by the integration suites: random rules and states, an
//! instrumented interpreter, an independent lock-table replay and a few fixed
//! workloads.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use taserial::config::RunConfig;
use taserial::eval::yields;
use taserial::machine::MachineId;
use taserial::rng::SeedStream;
use taserial::rwloc::analyze_rule;
use taserial::state::{Interpretation, State, UpdateSet};
use taserial::syntax::{Formula, Rule, RuleDef, RuleTable, Term};
use taserial::trace::{ControllerEvent, Trace};
use taserial::value::{Location, Value};
use taserial::wrapper::StepKind;

// ---------------------------------------------------------------------------
// Random rules over a fixed signature.
//
// Nullary `f`, `g`, `h` always hold domain elements, `a/1` holds integers and
// `p/1` booleans. Arguments of `a` and `p` are drawn from terms that stay in
// the domain, so no generated rule reads an undefined location or hits a
// type error.

pub const NULLARY: [&str; 3] = ["f", "g", "h"];

pub struct RuleGen {
    rng: ChaCha8Rng,
    pub domain: usize,
    pub allow_choose: bool,
    vars: Vec<String>,
    fresh: usize,
}

impl RuleGen {
    pub fn new(seed: u64, allow_choose: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let domain = rng.gen_range(2..=4);
        RuleGen {
            rng,
            domain,
            allow_choose,
            vars: Vec::new(),
            fresh: 0,
        }
    }

    pub fn state(&mut self) -> State {
        let mut s = State::with_int_domain(self.domain).unwrap();
        for f in NULLARY {
            s.set(Location::nullary(f), Value::int(self.rng.gen_range(0..self.domain as i64)));
        }
        for d in 0..self.domain as i64 {
            s.set(Location::new("a", vec![Value::int(d)]), Value::int(self.rng.gen_range(-3..6)));
            s.set(Location::new("p", vec![Value::int(d)]), Value::Bool(self.rng.gen_bool(0.5)));
        }
        s
    }

    pub fn rules(&self) -> RuleTable {
        let t = Term::var("t");
        let cell = Term::app("a", vec![t.clone()]);
        let bump = RuleDef {
            name: "bump".into(),
            params: vec!["t".into()],
            body: Rule::assign(cell.clone(), Term::plus(cell, Term::int(1))),
        };
        RuleTable::from([("bump".to_string(), bump)])
    }

    fn bind(&mut self) -> String {
        self.fresh += 1;
        format!("x{}", self.fresh)
    }

    /// A term whose value is a domain element.
    fn arg(&mut self) -> Term {
        match self.rng.gen_range(0..3) {
            0 if !self.vars.is_empty() => Term::var(&self.vars[self.rng.gen_range(0..self.vars.len())].clone()),
            1 => Term::nullary(NULLARY[self.rng.gen_range(0..3)]),
            _ => Term::int(self.rng.gen_range(0..self.domain as i64)),
        }
    }

    fn value(&mut self, depth: u32) -> Term {
        match self.rng.gen_range(0..5) {
            0 | 1 => self.arg(),
            2 => Term::app("a", vec![self.arg()]),
            3 if depth > 0 => Term::plus(self.value(depth - 1), self.value(depth - 1)),
            4 if depth > 0 => Term::minus(self.value(depth - 1), self.value(depth - 1)),
            _ => Term::app("a", vec![self.arg()]),
        }
    }

    fn formula(&mut self, depth: u32) -> Formula {
        let leaf = depth == 0 || self.rng.gen_bool(0.4);
        if leaf {
            return match self.rng.gen_range(0..4) {
                0 => Formula::Eq(self.value(1), self.value(1)),
                1 => Formula::Lt(self.value(1), self.value(1)),
                2 => Formula::atom("p", vec![self.arg()]),
                _ => Formula::Truth(self.rng.gen_bool(0.7)),
            };
        }
        match self.rng.gen_range(0..5) {
            0 => Formula::not(self.formula(depth - 1)),
            1 => Formula::and(self.formula(depth - 1), self.formula(depth - 1)),
            2 => Formula::or(self.formula(depth - 1), self.formula(depth - 1)),
            3 => {
                let x = self.bind();
                self.vars.push(x.clone());
                let body = self.formula(depth - 1);
                self.vars.pop();
                Formula::exists(&x, body)
            }
            _ => {
                let x = self.bind();
                self.vars.push(x.clone());
                let body = self.formula(depth - 1);
                self.vars.pop();
                Formula::forall(&x, body)
            }
        }
    }

    pub fn rule(&mut self, depth: u32) -> Rule {
        let leaf = depth == 0 || self.rng.gen_bool(0.25);
        if leaf {
            return match self.rng.gen_range(0..6) {
                0 => Rule::Skip,
                1 | 2 => {
                    let f = NULLARY[self.rng.gen_range(0..3)];
                    Rule::assign(Term::nullary(f), self.arg())
                }
                3 => Rule::Call("bump".into(), vec![self.arg()]),
                _ => {
                    let target = Term::app("a", vec![self.arg()]);
                    Rule::assign(target, self.value(2))
                }
            };
        }
        let kinds = if self.allow_choose { 7 } else { 6 };
        match self.rng.gen_range(0..kinds) {
            0 => Rule::if_then_else(self.formula(2), self.rule(depth - 1), self.rule(depth - 1)),
            1 => {
                let t = self.arg();
                let x = self.bind();
                self.vars.push(x.clone());
                let body = self.rule(depth - 1);
                self.vars.pop();
                Rule::let_in(&x, t, body)
            }
            2 => {
                let x = self.bind();
                self.vars.push(x.clone());
                let g = self.formula(1);
                let body = self.rule(depth - 1);
                self.vars.pop();
                Rule::forall_do(&x, g, body)
            }
            3 | 4 => Rule::par(self.rule(depth - 1), self.rule(depth - 1)),
            5 => Rule::seq(self.rule(depth - 1), self.rule(depth - 1)),
            _ => {
                let x = self.bind();
                self.vars.push(x.clone());
                let g = self.formula(1);
                let body = self.rule(depth - 1);
                self.vars.pop();
                Rule::choose_do(&x, g, body)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Instrumented interpreter: executes a rule and logs every location it looks
// up and every location it assigns. Written against the syntax only, not the
// library evaluator or analysis.

#[derive(Default, Debug)]
pub struct Probe {
    pub reads: BTreeSet<Location>,
    pub writes: BTreeSet<Location>,
}

fn int(v: &Value) -> i64 {
    match v {
        Value::Int(i) => i.try_into().expect("small integer"),
        other => panic!("expected an integer, got {other:?}"),
    }
}

impl Probe {
    fn lookup(&mut self, s: &State, loc: Location) -> Value {
        let v = s.get(&loc);
        self.reads.insert(loc);
        v
    }

    pub fn term(&mut self, t: &Term, s: &State, env: &Interpretation) -> Value {
        match t {
            Term::Var(x) => env[x].clone(),
            Term::Const(v) => v.clone(),
            Term::Apply(f, args) if f == "+" || f == "-" => {
                let a = int(&self.term(&args[0], s, env));
                let b = int(&self.term(&args[1], s, env));
                Value::int(if f == "+" { a + b } else { a - b })
            }
            Term::Apply(f, args) => {
                let loc = self.location(f, args, s, env);
                self.lookup(s, loc)
            }
        }
    }

    fn location(&mut self, f: &str, args: &[Term], s: &State, env: &Interpretation) -> Location {
        let vals = args.iter().map(|a| self.term(a, s, env)).collect();
        Location::new(f, vals)
    }

    /// Short-circuiting: only what execution actually touches is logged.
    pub fn formula(&mut self, phi: &Formula, s: &State, env: &Interpretation) -> bool {
        match phi {
            Formula::Truth(b) => *b,
            Formula::Atom(p, args) => {
                let loc = self.location(p, args, s, env);
                self.lookup(s, loc) == Value::Bool(true)
            }
            Formula::Not(a) => !self.formula(a, s, env),
            Formula::And(a, b) => self.formula(a, s, env) && self.formula(b, s, env),
            Formula::Or(a, b) => self.formula(a, s, env) || self.formula(b, s, env),
            Formula::Forall(x, a) => s.domain().to_vec().iter().all(|d| self.formula(a, s, &with(env, x, d))),
            Formula::Exists(x, a) => s.domain().to_vec().iter().any(|d| self.formula(a, s, &with(env, x, d))),
            Formula::Eq(a, b) => self.term(a, s, env) == self.term(b, s, env),
            Formula::Lt(a, b) => int(&self.term(a, s, env)) < int(&self.term(b, s, env)),
        }
    }

    /// Executes `r` and returns its updates as a list (duplicates allowed).
    pub fn rule(&mut self, r: &Rule, s: &State, env: &Interpretation, rules: &RuleTable, rng: &mut SeedStream) -> Vec<(Location, Value)> {
        match r {
            Rule::Skip => Vec::new(),
            Rule::Assign(Term::Apply(f, args), rhs) => {
                let loc = self.location(f, args, s, env);
                let v = self.term(rhs, s, env);
                self.writes.insert(loc.clone());
                vec![(loc, v)]
            }
            Rule::Assign(..) => panic!("bad assignment"),
            Rule::If(g, a, b) => {
                if self.formula(g, s, env) {
                    self.rule(a, s, env, rules, rng)
                } else {
                    self.rule(b, s, env, rules, rng)
                }
            }
            Rule::Let(x, t, body) => {
                let v = self.term(t, s, env);
                self.rule(body, s, &with(env, x, &v), rules, rng)
            }
            Rule::ForallDo(x, g, body) => {
                let mut out = Vec::new();
                for d in self.range(x, g, s, env) {
                    out.extend(self.rule(body, s, &with(env, x, &d), rules, rng));
                }
                out
            }
            Rule::ChooseDo(x, g, body) => {
                let candidates = self.range(x, g, s, env);
                if candidates.is_empty() {
                    return Vec::new();
                }
                let d = candidates[rng.pick(candidates.len())].clone();
                self.rule(body, s, &with(env, x, &d), rules, rng)
            }
            Rule::Par(a, b) => {
                let mut out = self.rule(a, s, env, rules, rng);
                out.extend(self.rule(b, s, env, rules, rng));
                out
            }
            Rule::Seq(a, b) => {
                let first = self.rule(a, s, env, rules, rng);
                let mut seen: BTreeMap<&Location, &Value> = BTreeMap::new();
                if first.iter().any(|(l, v)| seen.insert(l, v).is_some_and(|w| w != v)) {
                    return first;
                }
                let mut next = s.clone();
                for (l, v) in &first {
                    next.set(l.clone(), v.clone());
                }
                let second = self.rule(b, &next, env, rules, rng);
                let overridden: BTreeSet<&Location> = second.iter().map(|(l, _)| l).collect();
                let mut out: Vec<_> = first.iter().filter(|(l, _)| !overridden.contains(l)).cloned().collect();
                out.extend(second.iter().cloned());
                out
            }
            Rule::Call(name, args) => {
                let body = rules[name].instantiate(args);
                self.rule(&body, s, env, rules, rng)
            }
        }
    }

    /// Every candidate guard is evaluated, as `forall` and `choose` must.
    fn range(&mut self, x: &str, g: &Formula, s: &State, env: &Interpretation) -> Vec<Value> {
        s.domain()
            .to_vec()
            .into_iter()
            .filter(|d| self.formula(g, s, &with(env, x, d)))
            .collect()
    }
}

fn with(env: &Interpretation, x: &str, v: &Value) -> Interpretation {
    let mut e = env.clone();
    e.insert(x.to_string(), v.clone());
    e
}

/// Runs the analysis and the instrumented interpreter on one generated rule
/// and state, with the same `choose` stream.
pub fn rwloc_agrees(seed: u64, allow_choose: bool) -> Result<(), String> {
    let mut g = RuleGen::new(seed, allow_choose);
    let rule = g.rule(4);
    let s = g.state();
    let rules = g.rules();
    let env = Interpretation::new();
    let text = || taserial::dsl::print_rule(&rule);

    let (u, rw) = analyze_rule(&rule, &s, &env, &rules, &mut SeedStream::from_seed(seed)).map_err(|e| e.to_string())?;
    let mut probe = Probe::default();
    let logged: UpdateSet = probe
        .rule(&rule, &s, &env, &rules, &mut SeedStream::from_seed(seed))
        .into_iter()
        .collect();
    if !probe.reads.is_subset(&rw.reads) {
        return Err(format!("{}: executed reads {:?} not within {:?}", text(), probe.reads, rw.reads));
    }
    if probe.writes != rw.writes {
        return Err(format!("{}: executed writes {:?} vs {:?}", text(), probe.writes, rw.writes));
    }
    if logged != u {
        return Err(format!("{}: updates {logged:?} vs {u:?}", text()));
    }
    let plain = yields(&rule, &s, &env, &rules, &mut SeedStream::from_seed(seed)).map_err(|e| e.to_string())?;
    if plain != u {
        return Err(format!("{}: analysis and evaluation disagree on updates", text()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Independent 2PL audit: rebuild the lock table from controller events and
// check exclusivity and lock coverage of every proper step.

#[derive(Default)]
pub struct LockAudit {
    read: BTreeMap<Location, BTreeSet<MachineId>>,
    write: BTreeMap<Location, BTreeSet<MachineId>>,
    pub steps_checked: u64,
}

impl LockAudit {
    fn holds_write(&self, m: MachineId, l: &Location) -> bool {
        self.write.get(l).is_some_and(|s| s.contains(&m))
    }

    fn holds_any(&self, m: MachineId, l: &Location) -> bool {
        self.holds_write(m, l) || self.read.get(l).is_some_and(|s| s.contains(&m))
    }

    fn release(&mut self, m: MachineId, r: &BTreeSet<Location>, w: &BTreeSet<Location>) {
        for l in r {
            if let Some(s) = self.read.get_mut(l) {
                s.remove(&m);
            }
        }
        for l in w {
            if let Some(s) = self.write.get_mut(l) {
                s.remove(&m);
            }
        }
    }

    /// Returns a description of each violation found in `trace`.
    pub fn audit(&mut self, trace: &Trace) -> Vec<String> {
        *self = LockAudit {
            steps_checked: self.steps_checked,
            ..Default::default()
        };
        let machines = &trace.config().machines;
        let mut out = Vec::new();
        for step in &trace.steps {
            for (m, ms) in &step.per_machine {
                if ms.kind != StepKind::Proper {
                    continue;
                }
                let classes = &machines[m.0].classes;
                for (l, _) in ms.updates.iter() {
                    if classes.needs_write_lock(l) && !self.holds_write(*m, l) {
                        out.push(format!("step {}: {m} writes {l} without a write lock", step.index));
                    }
                }
                for (l, _) in &ms.reads {
                    if classes.needs_read_lock(l) && !self.holds_any(*m, l) {
                        out.push(format!("step {}: {m} reads {l} without a lock", step.index));
                    }
                }
            }
            for e in &step.controller_events {
                match e {
                    ControllerEvent::LockGrant { machine, locks, .. } => {
                        for l in &locks.r_loc {
                            self.read.entry(l.clone()).or_default().insert(*machine);
                        }
                        for l in &locks.w_loc {
                            self.write.entry(l.clone()).or_default().insert(*machine);
                        }
                    }
                    ControllerEvent::Commit { machine, released } | ControllerEvent::UndoApplied { machine, released, .. } => {
                        self.release(*machine, &released.r_loc, &released.w_loc);
                    }
                    _ => {}
                }
            }
            for (l, writers) in &self.write {
                if writers.len() > 1 {
                    out.push(format!("step {}: {l} write-locked by {writers:?}", step.index));
                }
                if let Some(w) = writers.iter().next() {
                    let others: Vec<_> = self.read.get(l).into_iter().flatten().filter(|r| *r != w).collect();
                    if !others.is_empty() {
                        out.push(format!(
                            "step {}: {l} write-locked by {w} and read-locked by {others:?}",
                            step.index
                        ));
                    }
                }
            }
            self.steps_checked += 1;
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Workloads.

/// A takes x then y, B takes y then x.
pub const DEADLOCK: &str = "
machine A shared x/0, y/0 init x := 0 init y := 0 init a_pc := 0
  terminated: a_pc = 2
  rule: if a_pc = 0 then par { x := 1; a_pc := 1 }
        else if a_pc = 1 then par { y := 1; a_pc := 2 }
machine B shared x/0, y/0 init b_pc := 0
  terminated: b_pc = 2
  rule: if b_pc = 0 then par { y := 2; b_pc := 1 }
        else if b_pc = 1 then par { x := 2; b_pc := 2 }
";

/// `V` writes x, y, a(1) and the output o, then needs w. `W` holds w and
/// needs x. `V` is declared first, so the lowest-id victim policy always
/// picks it, and since `W` waits for the lock from V's first step every step
/// of V has to be undone before `W` can go on.
pub const FULL_UNDO: &str = "
machine V shared x/0, y/0, w/0, a/1 output o/0
  init x := 10 init y := 20 init w := 30 init o := 40 init a(1) := 50 init v_pc := 0
  terminated: v_pc = 4
  rule: if v_pc = 0 then par { x := 1; v_pc := 1 }
        else if v_pc = 1 then par { y := x + 1; a(1) := 7; v_pc := 2 }
        else if v_pc = 2 then par { o := y; v_pc := 3 }
        else if v_pc = 3 then par { w := o; v_pc := 4 }
machine W shared x/0, w/0 monitored o/0 init w_pc := 0
  terminated: w_pc = 3
  rule: if w_pc = 0 then par { w := 3; w_pc := 1 }
        else if w_pc = 1 then w_pc := 2
        else if w_pc = 2 then par { x := w + o; w_pc := 3 }
";

pub fn config(src: &str) -> RunConfig {
    RunConfig::from_source(src, 4).expect("workload parses")
}
