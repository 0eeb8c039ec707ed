//! Machine programs and location classification.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::syntax::{Formula, Rule, RuleTable, Term};
use crate::value::{Location, Value};

/// Index of a machine in its run configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MachineId(pub usize);

impl fmt::Display for MachineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Per-machine classification of function names. Anything not listed is
/// controlled (private) by the machine.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationClass {
    pub shared: BTreeSet<String>,
    pub monitored: BTreeSet<String>,
    pub output: BTreeSet<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Class {
    Controlled,
    Shared,
    Monitored,
    Output,
}

impl LocationClass {
    pub fn class_of(&self, func: &str) -> Class {
        if self.shared.contains(func) {
            Class::Shared
        } else if self.monitored.contains(func) {
            Class::Monitored
        } else if self.output.contains(func) {
            Class::Output
        } else {
            Class::Controlled
        }
    }

    /// Locations whose reads must be locked: shared or monitored.
    pub fn needs_read_lock(&self, loc: &Location) -> bool {
        matches!(self.class_of(&loc.func), Class::Shared | Class::Monitored)
    }

    /// Locations whose writes must be locked: shared or output.
    pub fn needs_write_lock(&self, loc: &Location) -> bool {
        matches!(self.class_of(&loc.func), Class::Shared | Class::Output)
    }

    pub fn is_controlled(&self, loc: &Location) -> bool {
        self.class_of(&loc.func) == Class::Controlled
    }

    /// Names declared in more than one class.
    pub fn overlaps(&self) -> Vec<String> {
        let mut out = Vec::new();
        for n in self.shared.iter().chain(&self.monitored).chain(&self.output) {
            let count = [&self.shared, &self.monitored, &self.output]
                .iter()
                .filter(|c| c.contains(n))
                .count();
            if count > 1 && !out.contains(n) {
                out.push(n.clone());
            }
        }
        out
    }

    pub fn declared(&self) -> impl Iterator<Item = &String> {
        self.shared.iter().chain(&self.monitored).chain(&self.output)
    }
}

/// A machine program: its classification, initial values, termination
/// criterion, main rule and auxiliary named rules.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Machine {
    pub name: String,
    pub classes: LocationClass,
    /// Declared arities of classified functions.
    pub arities: BTreeMap<String, usize>,
    pub init: Vec<(Location, Value)>,
    pub terminated: Formula,
    pub main: Rule,
    pub rules: RuleTable,
}

impl Machine {
    pub fn new(name: impl Into<String>, main: Rule, terminated: Formula) -> Self {
        Machine {
            name: name.into(),
            classes: LocationClass::default(),
            arities: BTreeMap::new(),
            init: Vec::new(),
            terminated,
            main,
            rules: RuleTable::new(),
        }
    }

    pub fn shared(mut self, func: &str, arity: usize) -> Self {
        self.classes.shared.insert(func.to_string());
        self.arities.insert(func.to_string(), arity);
        self
    }

    pub fn monitored(mut self, func: &str, arity: usize) -> Self {
        self.classes.monitored.insert(func.to_string());
        self.arities.insert(func.to_string(), arity);
        self
    }

    pub fn output(mut self, func: &str, arity: usize) -> Self {
        self.classes.output.insert(func.to_string());
        self.arities.insert(func.to_string(), arity);
        self
    }

    pub fn init(mut self, loc: Location, v: Value) -> Self {
        self.init.push((loc, v));
        self
    }

    /// Function names used by the machine (rules, termination formula, inits).
    pub fn used_functions(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        collect_rule(&self.main, &mut out);
        for def in self.rules.values() {
            collect_rule(&def.body, &mut out);
        }
        collect_formula(&self.terminated, &mut out);
        for (loc, _) in &self.init {
            out.insert(loc.func.clone());
        }
        out
    }

    /// Function names appearing as the head of an assignment.
    pub fn assigned_functions(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        collect_assigned(&self.main, &mut out);
        for def in self.rules.values() {
            collect_assigned(&def.body, &mut out);
        }
        out
    }

    /// Function names the machine controls privately.
    pub fn controlled_functions(&self) -> BTreeSet<String> {
        self.used_functions()
            .into_iter()
            .filter(|f| self.classes.class_of(f) == Class::Controlled)
            .collect()
    }
}

fn collect_term(t: &Term, out: &mut BTreeSet<String>) {
    if let Term::Apply(f, args) = t {
        if !crate::syntax::is_static_function(f) {
            out.insert(f.clone());
        }
        args.iter().for_each(|a| collect_term(a, out));
    }
}

fn collect_formula(phi: &Formula, out: &mut BTreeSet<String>) {
    match phi {
        Formula::Truth(_) => {}
        Formula::Atom(p, args) => {
            out.insert(p.clone());
            args.iter().for_each(|a| collect_term(a, out));
        }
        Formula::Not(a) | Formula::Forall(_, a) | Formula::Exists(_, a) => collect_formula(a, out),
        Formula::And(a, b) | Formula::Or(a, b) => {
            collect_formula(a, out);
            collect_formula(b, out);
        }
        Formula::Eq(a, b) | Formula::Lt(a, b) => {
            collect_term(a, out);
            collect_term(b, out);
        }
    }
}

fn collect_rule(r: &Rule, out: &mut BTreeSet<String>) {
    match r {
        Rule::Skip => {}
        Rule::Assign(a, b) => {
            collect_term(a, out);
            collect_term(b, out);
        }
        Rule::If(g, a, b) => {
            collect_formula(g, out);
            collect_rule(a, out);
            collect_rule(b, out);
        }
        Rule::Let(_, t, body) => {
            collect_term(t, out);
            collect_rule(body, out);
        }
        Rule::ForallDo(_, g, body) | Rule::ChooseDo(_, g, body) => {
            collect_formula(g, out);
            collect_rule(body, out);
        }
        Rule::Par(a, b) | Rule::Seq(a, b) => {
            collect_rule(a, out);
            collect_rule(b, out);
        }
        Rule::Call(_, args) => args.iter().for_each(|a| collect_term(a, out)),
    }
}

fn collect_assigned(r: &Rule, out: &mut BTreeSet<String>) {
    match r {
        Rule::Assign(Term::Apply(f, _), _) => {
            out.insert(f.clone());
        }
        Rule::Skip | Rule::Assign(..) | Rule::Call(..) => {}
        Rule::If(_, a, b) | Rule::Par(a, b) | Rule::Seq(a, b) => {
            collect_assigned(a, out);
            collect_assigned(b, out);
        }
        Rule::Let(_, _, body) | Rule::ForallDo(_, _, body) | Rule::ChooseDo(_, _, body) => collect_assigned(body, out),
    }
}
