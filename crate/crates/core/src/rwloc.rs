//! Read and write locations of terms, formulae and rules.
//!
//! These are dynamic: they are computed in a given state under a given
//! interpretation, by structural induction over the syntax. For rules the
//! analysis runs alongside the update-set computation so that `seq` can look
//! at `S + U` and `choose` uses the same witness as execution.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::AsmError;
use crate::eval::{bind, eval_formula, eval_term, expand_call, location_of, range};
use crate::rng::SeedStream;
use crate::state::{Interpretation, State, UpdateSet};
use crate::syntax::{is_static_function, Formula, Rule, RuleTable, Term};
use crate::value::Location;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RwSet {
    pub reads: BTreeSet<Location>,
    pub writes: BTreeSet<Location>,
}

impl RwSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.reads.is_empty() && self.writes.is_empty()
    }

    fn absorb(&mut self, other: RwSet) {
        self.reads.extend(other.reads);
        self.writes.extend(other.writes);
    }

    fn reads_only(mut self) -> RwSet {
        self.writes.clear();
        self
    }
}

pub fn rw_term(t: &Term, s: &State, env: &Interpretation) -> Result<RwSet, AsmError> {
    let mut out = RwSet::new();
    match t {
        Term::Var(_) | Term::Const(_) => {}
        Term::Apply(f, args) => {
            for a in args {
                out.reads.extend(rw_term(a, s, env)?.reads);
            }
            if !is_static_function(f) {
                let loc = location_of(f, args, s, env)?;
                out.reads.insert(loc.clone());
                out.writes.insert(loc);
            }
        }
    }
    Ok(out)
}

/// Formulae are never written, so `writes` is always empty.
pub fn rw_formula(phi: &Formula, s: &State, env: &Interpretation) -> Result<RwSet, AsmError> {
    let mut out = RwSet::new();
    match phi {
        Formula::Truth(_) => {}
        Formula::Atom(p, args) => {
            out.absorb(rw_term(&Term::Apply(p.clone(), args.clone()), s, env)?.reads_only());
        }
        Formula::Not(a) => out.absorb(rw_formula(a, s, env)?),
        Formula::And(a, b) | Formula::Or(a, b) => {
            out.absorb(rw_formula(a, s, env)?);
            out.absorb(rw_formula(b, s, env)?);
        }
        Formula::Forall(x, a) | Formula::Exists(x, a) => {
            for d in s.domain() {
                out.absorb(rw_formula(a, s, &bind(env, x, d.clone()))?);
            }
        }
        Formula::Eq(a, b) | Formula::Lt(a, b) => {
            out.absorb(rw_term(a, s, env)?.reads_only());
            out.absorb(rw_term(b, s, env)?.reads_only());
        }
    }
    Ok(out)
}

pub fn rw_rule(r: &Rule, s: &State, env: &Interpretation, rules: &RuleTable, rng: &mut SeedStream) -> Result<RwSet, AsmError> {
    Ok(analyze_rule(r, s, env, rules, rng)?.1)
}

/// Update set and read/write locations of `r`, computed in one pass.
pub fn analyze_rule(
    r: &Rule,
    s: &State,
    env: &Interpretation,
    rules: &RuleTable,
    rng: &mut SeedStream,
) -> Result<(UpdateSet, RwSet), AsmError> {
    analyze(r, s, env, rules, rng, 0)
}

fn analyze(
    r: &Rule,
    s: &State,
    env: &Interpretation,
    rules: &RuleTable,
    rng: &mut SeedStream,
    depth: usize,
) -> Result<(UpdateSet, RwSet), AsmError> {
    match r {
        Rule::Skip => Ok((UpdateSet::new(), RwSet::new())),
        Rule::Assign(lhs, rhs) => {
            let Term::Apply(f, args) = lhs else {
                return Err(AsmError::TypeMismatch(format!("cannot assign to {lhs:?}")));
            };
            let target = rw_term(lhs, s, env)?;
            let mut rw = RwSet {
                reads: target.reads,
                writes: target.writes,
            };
            rw.reads.extend(rw_term(rhs, s, env)?.reads);
            let u = UpdateSet::singleton(location_of(f, args, s, env)?, eval_term(rhs, s, env)?);
            Ok((u, rw))
        }
        Rule::If(g, a, b) => {
            let mut rw = rw_formula(g, s, env)?;
            let branch = if eval_formula(g, s, env)? { a } else { b };
            let (u, inner) = analyze(branch, s, env, rules, rng, depth)?;
            rw.absorb(inner);
            Ok((u, rw))
        }
        Rule::Let(x, t, body) => {
            let mut rw = rw_term(t, s, env)?.reads_only();
            let v = eval_term(t, s, env)?;
            let (u, inner) = analyze(body, s, &bind(env, x, v), rules, rng, depth)?;
            rw.absorb(inner);
            Ok((u, rw))
        }
        Rule::ForallDo(x, g, body) => {
            let mut rw = rw_formula(&Formula::Forall(x.clone(), Box::new(g.clone())), s, env)?;
            let mut u = UpdateSet::new();
            for a in range(x, g, s, env)? {
                let (ua, inner) = analyze(body, s, &bind(env, x, a), rules, rng, depth)?;
                u.extend(ua);
                rw.absorb(inner);
            }
            Ok((u, rw))
        }
        Rule::ChooseDo(x, g, body) => {
            let mut rw = rw_formula(&Formula::Exists(x.clone(), Box::new(g.clone())), s, env)?;
            let candidates = range(x, g, s, env)?;
            if candidates.is_empty() {
                return Ok((UpdateSet::new(), rw));
            }
            let a = candidates[rng.pick(candidates.len())].clone();
            let (u, inner) = analyze(body, s, &bind(env, x, a), rules, rng, depth)?;
            rw.absorb(inner);
            Ok((u, rw))
        }
        Rule::Par(a, b) => {
            let (ua, mut rw) = analyze(a, s, env, rules, rng, depth)?;
            let (ub, rwb) = analyze(b, s, env, rules, rng, depth)?;
            rw.absorb(rwb);
            Ok((ua.union(ub), rw))
        }
        Rule::Seq(a, b) => {
            let (ua, mut rw) = analyze(a, s, env, rules, rng, depth)?;
            if !ua.is_consistent() {
                return Ok((ua, rw));
            }
            let next = s.apply(&ua)?;
            let (ub, rwb) = analyze(b, &next, env, rules, rng, depth)?;
            rw.absorb(rwb);
            Ok((ua.overridden_by(&ub), rw))
        }
        Rule::Call(name, args) => {
            let body = expand_call(name, args, rules, depth)?;
            analyze(&body, s, env, rules, rng, depth + 1)
        }
    }
}
