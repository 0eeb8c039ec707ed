//! Text syntax for machine programs.
//!
//! ```text
//! machine Counter
//!   shared x/0
//!   init x := 0
//!   init pc := 0
//!   terminated: pc = 1
//!   rule: if pc = 0 then par { x := x + 1; pc := 1 }
//! ```
//!
//! Identifiers bound by a rule parameter, `let`, `forall`, `choose` or a
//! quantifier are variables; any other bare identifier is a nullary function.

mod lexer;
mod parser;
mod printer;

use std::collections::{BTreeMap, BTreeSet};

pub use parser::{parse_program, parse_programs};
pub use printer::{print_formula, print_machine, print_programs, print_rule, print_term};

use crate::machine::{Class, Machine};
use crate::syntax::{Formula, Rule, Term};

pub(crate) const KEYWORDS: &[&str] = &[
    "machine",
    "shared",
    "monitored",
    "output",
    "init",
    "terminated",
    "rule",
    "skip",
    "if",
    "then",
    "else",
    "let",
    "in",
    "forall",
    "exists",
    "choose",
    "with",
    "do",
    "par",
    "seq",
    "call",
    "true",
    "false",
    "undef",
    "not",
    "and",
    "or",
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DslError {
    #[error("{line}:{col}: {message}")]
    Parse { line: usize, col: usize, message: String },
    #[error("machine {machine}: `{func}` used with {got} argument(s), expected {expected}")]
    Arity {
        machine: String,
        func: String,
        expected: usize,
        got: usize,
    },
    #[error("machine {machine}: unknown rule `{name}`")]
    UnknownIdentifier { machine: String, name: String },
    #[error("machine {machine}: {message}")]
    Invalid { machine: String, message: String },
}

impl DslError {
    pub(crate) fn parse(line: usize, col: usize, message: impl Into<String>) -> Self {
        DslError::Parse {
            line,
            col,
            message: message.into(),
        }
    }
}

/// Visits every term (including subterms) and every atom `(predicate, arity)`.
pub(crate) fn walk_machine(m: &Machine, on_term: &mut dyn FnMut(&Term), on_atom: &mut dyn FnMut(&str, usize)) {
    walk_rule(&m.main, on_term, on_atom);
    for def in m.rules.values() {
        walk_rule(&def.body, on_term, on_atom);
    }
    walk_formula(&m.terminated, on_term, on_atom);
}

fn walk_term(t: &Term, on_term: &mut dyn FnMut(&Term)) {
    on_term(t);
    if let Term::Apply(_, args) = t {
        args.iter().for_each(|a| walk_term(a, on_term));
    }
}

fn walk_formula(f: &Formula, on_term: &mut dyn FnMut(&Term), on_atom: &mut dyn FnMut(&str, usize)) {
    match f {
        Formula::Truth(_) => {}
        Formula::Atom(p, args) => {
            on_atom(p, args.len());
            args.iter().for_each(|a| walk_term(a, on_term));
        }
        Formula::Not(a) | Formula::Forall(_, a) | Formula::Exists(_, a) => walk_formula(a, on_term, on_atom),
        Formula::And(a, b) | Formula::Or(a, b) => {
            walk_formula(a, on_term, on_atom);
            walk_formula(b, on_term, on_atom);
        }
        Formula::Eq(a, b) | Formula::Lt(a, b) => {
            walk_term(a, on_term);
            walk_term(b, on_term);
        }
    }
}

fn walk_rule(r: &Rule, on_term: &mut dyn FnMut(&Term), on_atom: &mut dyn FnMut(&str, usize)) {
    match r {
        Rule::Skip => {}
        Rule::Assign(a, b) => {
            walk_term(a, on_term);
            walk_term(b, on_term);
        }
        Rule::If(g, a, b) => {
            walk_formula(g, on_term, on_atom);
            walk_rule(a, on_term, on_atom);
            walk_rule(b, on_term, on_atom);
        }
        Rule::Let(_, t, body) => {
            walk_term(t, on_term);
            walk_rule(body, on_term, on_atom);
        }
        Rule::ForallDo(_, g, body) | Rule::ChooseDo(_, g, body) => {
            walk_formula(g, on_term, on_atom);
            walk_rule(body, on_term, on_atom);
        }
        Rule::Par(a, b) | Rule::Seq(a, b) => {
            walk_rule(a, on_term, on_atom);
            walk_rule(b, on_term, on_atom);
        }
        Rule::Call(_, args) => args.iter().for_each(|a| walk_term(a, on_term)),
    }
}

/// Static checks on a parsed machine: disjoint classes, consistent arities,
/// declared and non-recursive rule calls, no assignment to monitored names.
pub fn validate_machine(m: &Machine) -> Result<(), DslError> {
    let invalid = |message: String| DslError::Invalid {
        machine: m.name.clone(),
        message,
    };
    if let Some(f) = m.classes.overlaps().first() {
        return Err(invalid(format!("`{f}` is declared in more than one class")));
    }
    parser::applied_arities(m).map_err(|(func, expected, got)| DslError::Arity {
        machine: m.name.clone(),
        func,
        expected,
        got,
    })?;
    let mut calls: Vec<(String, usize)> = Vec::new();
    collect_calls(&m.main, &mut calls);
    for def in m.rules.values() {
        collect_calls(&def.body, &mut calls);
    }
    for (name, n) in &calls {
        let def = m.rules.get(name).ok_or_else(|| DslError::UnknownIdentifier {
            machine: m.name.clone(),
            name: name.clone(),
        })?;
        if def.params.len() != *n {
            return Err(DslError::Arity {
                machine: m.name.clone(),
                func: name.clone(),
                expected: def.params.len(),
                got: *n,
            });
        }
    }
    if let Some(name) = recursive_rule(m) {
        return Err(invalid(format!("rule `{name}` is recursive")));
    }
    for f in m.assigned_functions() {
        if m.classes.class_of(&f) == Class::Monitored {
            return Err(invalid(format!("monitored function `{f}` is assigned")));
        }
    }
    Ok(())
}

fn collect_calls(r: &Rule, out: &mut Vec<(String, usize)>) {
    match r {
        Rule::Call(name, args) => out.push((name.clone(), args.len())),
        Rule::Skip | Rule::Assign(..) => {}
        Rule::If(_, a, b) | Rule::Par(a, b) | Rule::Seq(a, b) => {
            collect_calls(a, out);
            collect_calls(b, out);
        }
        Rule::Let(_, _, body) | Rule::ForallDo(_, _, body) | Rule::ChooseDo(_, _, body) => collect_calls(body, out),
    }
}

fn recursive_rule(m: &Machine) -> Option<String> {
    let graph: BTreeMap<&String, BTreeSet<String>> = m
        .rules
        .iter()
        .map(|(name, def)| {
            let mut out = BTreeSet::new();
            def.body.callees(&mut out);
            (name, out)
        })
        .collect();
    for start in graph.keys() {
        let mut stack: Vec<String> = graph[start].iter().cloned().collect();
        let mut seen = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if &&n == start {
                return Some(n);
            }
            if seen.insert(n.clone()) {
                if let Some(next) = graph.get(&n) {
                    stack.extend(next.iter().cloned());
                }
            }
        }
    }
    None
}

/// Serializes a machine list as program text.
pub mod program_text {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::machine::Machine;

    pub fn serialize<S: Serializer>(machines: &[Machine], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::print_programs(machines))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Machine>, D::Error> {
        let text = String::deserialize(d)?;
        super::parse_programs(&text).map_err(serde::de::Error::custom)
    }
}
