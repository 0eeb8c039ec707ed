//! Abstract syntax of machine programs: terms, formulae and rules.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::value::Value;

/// Names of the built-in static functions. Every other function symbol is
/// dynamic and denotes a family of locations.
pub const STATIC_PLUS: &str = "+";
pub const STATIC_MINUS: &str = "-";

pub fn is_static_function(name: &str) -> bool {
    name == STATIC_PLUS || name == STATIC_MINUS
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    Var(String),
    /// Literal; a nullary static function.
    Const(Value),
    Apply(String, Vec<Term>),
}

impl Term {
    pub fn var(name: &str) -> Self {
        Term::Var(name.to_string())
    }

    pub fn int(i: i64) -> Self {
        Term::Const(Value::int(i))
    }

    pub fn app(f: &str, args: Vec<Term>) -> Self {
        Term::Apply(f.to_string(), args)
    }

    pub fn nullary(f: &str) -> Self {
        Term::Apply(f.to_string(), Vec::new())
    }

    pub fn plus(a: Term, b: Term) -> Self {
        Term::Apply(STATIC_PLUS.to_string(), vec![a, b])
    }

    pub fn minus(a: Term, b: Term) -> Self {
        Term::Apply(STATIC_MINUS.to_string(), vec![a, b])
    }

    fn free_vars_into(&self, out: &mut BTreeSet<String>) {
        match self {
            Term::Var(x) => {
                out.insert(x.clone());
            }
            Term::Const(_) => {}
            Term::Apply(_, args) => args.iter().for_each(|a| a.free_vars_into(out)),
        }
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.free_vars_into(&mut out);
        out
    }

    fn subst(&self, sub: &BTreeMap<String, Term>) -> Term {
        match self {
            Term::Var(x) => sub.get(x).cloned().unwrap_or_else(|| self.clone()),
            Term::Const(_) => self.clone(),
            Term::Apply(f, args) => Term::Apply(f.clone(), args.iter().map(|a| a.subst(sub)).collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Formula {
    Truth(bool),
    Atom(String, Vec<Term>),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Forall(String, Box<Formula>),
    Exists(String, Box<Formula>),
    Eq(Term, Term),
    Lt(Term, Term),
}

impl Formula {
    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Self {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Self {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn forall(x: &str, body: Formula) -> Self {
        Formula::Forall(x.to_string(), Box::new(body))
    }

    pub fn exists(x: &str, body: Formula) -> Self {
        Formula::Exists(x.to_string(), Box::new(body))
    }

    pub fn atom(p: &str, args: Vec<Term>) -> Self {
        Formula::Atom(p.to_string(), args)
    }

    fn free_vars_into(&self, out: &mut BTreeSet<String>) {
        match self {
            Formula::Truth(_) => {}
            Formula::Atom(_, args) => args.iter().for_each(|a| a.free_vars_into(out)),
            Formula::Not(a) => a.free_vars_into(out),
            Formula::And(a, b) | Formula::Or(a, b) => {
                a.free_vars_into(out);
                b.free_vars_into(out);
            }
            Formula::Forall(x, a) | Formula::Exists(x, a) => {
                let mut inner = BTreeSet::new();
                a.free_vars_into(&mut inner);
                inner.remove(x);
                out.extend(inner);
            }
            Formula::Eq(a, b) | Formula::Lt(a, b) => {
                a.free_vars_into(out);
                b.free_vars_into(out);
            }
        }
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.free_vars_into(&mut out);
        out
    }

    fn subst(&self, sub: &BTreeMap<String, Term>, fresh: &mut Fresh) -> Formula {
        match self {
            Formula::Truth(_) => self.clone(),
            Formula::Atom(p, args) => Formula::Atom(p.clone(), args.iter().map(|a| a.subst(sub)).collect()),
            Formula::Not(a) => Formula::not(a.subst(sub, fresh)),
            Formula::And(a, b) => Formula::and(a.subst(sub, fresh), b.subst(sub, fresh)),
            Formula::Or(a, b) => Formula::or(a.subst(sub, fresh), b.subst(sub, fresh)),
            Formula::Forall(x, a) => {
                let (x2, inner) = fresh.enter_binder(x, sub);
                Formula::Forall(x2, Box::new(a.subst(&inner, fresh)))
            }
            Formula::Exists(x, a) => {
                let (x2, inner) = fresh.enter_binder(x, sub);
                Formula::Exists(x2, Box::new(a.subst(&inner, fresh)))
            }
            Formula::Eq(a, b) => Formula::Eq(a.subst(sub), b.subst(sub)),
            Formula::Lt(a, b) => Formula::Lt(a.subst(sub), b.subst(sub)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rule {
    Skip,
    /// `lhs := rhs`; the left-hand side is always an `Apply` of a dynamic function.
    Assign(Term, Term),
    If(Formula, Box<Rule>, Box<Rule>),
    Let(String, Term, Box<Rule>),
    ForallDo(String, Formula, Box<Rule>),
    ChooseDo(String, Formula, Box<Rule>),
    Par(Box<Rule>, Box<Rule>),
    Seq(Box<Rule>, Box<Rule>),
    Call(String, Vec<Term>),
}

impl Rule {
    pub fn assign(lhs: Term, rhs: Term) -> Self {
        Rule::Assign(lhs, rhs)
    }

    pub fn if_then_else(guard: Formula, then: Rule, otherwise: Rule) -> Self {
        Rule::If(guard, Box::new(then), Box::new(otherwise))
    }

    pub fn let_in(x: &str, t: Term, body: Rule) -> Self {
        Rule::Let(x.to_string(), t, Box::new(body))
    }

    pub fn forall_do(x: &str, guard: Formula, body: Rule) -> Self {
        Rule::ForallDo(x.to_string(), guard, Box::new(body))
    }

    pub fn choose_do(x: &str, guard: Formula, body: Rule) -> Self {
        Rule::ChooseDo(x.to_string(), guard, Box::new(body))
    }

    pub fn par(a: Rule, b: Rule) -> Self {
        Rule::Par(Box::new(a), Box::new(b))
    }

    pub fn seq(a: Rule, b: Rule) -> Self {
        Rule::Seq(Box::new(a), Box::new(b))
    }

    /// Right-nested parallel composition of a list; empty lists give `skip`.
    pub fn par_all(mut rules: Vec<Rule>) -> Self {
        match rules.len() {
            0 => Rule::Skip,
            1 => rules.pop().unwrap(),
            _ => {
                let first = rules.remove(0);
                Rule::par(first, Rule::par_all(rules))
            }
        }
    }

    pub fn seq_all(mut rules: Vec<Rule>) -> Self {
        match rules.len() {
            0 => Rule::Skip,
            1 => rules.pop().unwrap(),
            _ => {
                let first = rules.remove(0);
                Rule::seq(first, Rule::seq_all(rules))
            }
        }
    }

    pub fn contains_choose(&self) -> bool {
        match self {
            Rule::ChooseDo(..) => true,
            Rule::Skip | Rule::Assign(..) | Rule::Call(..) => false,
            Rule::If(_, a, b) | Rule::Par(a, b) | Rule::Seq(a, b) => a.contains_choose() || b.contains_choose(),
            Rule::Let(_, _, r) | Rule::ForallDo(_, _, r) => r.contains_choose(),
        }
    }

    /// Names of rules called (directly) from this rule.
    pub fn callees(&self, out: &mut BTreeSet<String>) {
        match self {
            Rule::Call(name, _) => {
                out.insert(name.clone());
            }
            Rule::Skip | Rule::Assign(..) => {}
            Rule::If(_, a, b) | Rule::Par(a, b) | Rule::Seq(a, b) => {
                a.callees(out);
                b.callees(out);
            }
            Rule::Let(_, _, r) | Rule::ForallDo(_, _, r) | Rule::ChooseDo(_, _, r) => r.callees(out),
        }
    }

    fn subst(&self, sub: &BTreeMap<String, Term>, fresh: &mut Fresh) -> Rule {
        match self {
            Rule::Skip => Rule::Skip,
            Rule::Assign(l, r) => Rule::Assign(l.subst(sub), r.subst(sub)),
            Rule::If(g, a, b) => Rule::if_then_else(g.subst(sub, fresh), a.subst(sub, fresh), b.subst(sub, fresh)),
            Rule::Let(x, t, body) => {
                let t2 = t.subst(sub);
                let (x2, inner) = fresh.enter_binder(x, sub);
                Rule::Let(x2, t2, Box::new(body.subst(&inner, fresh)))
            }
            Rule::ForallDo(x, g, body) => {
                let (x2, inner) = fresh.enter_binder(x, sub);
                Rule::ForallDo(x2, g.subst(&inner, fresh), Box::new(body.subst(&inner, fresh)))
            }
            Rule::ChooseDo(x, g, body) => {
                let (x2, inner) = fresh.enter_binder(x, sub);
                Rule::ChooseDo(x2, g.subst(&inner, fresh), Box::new(body.subst(&inner, fresh)))
            }
            Rule::Par(a, b) => Rule::par(a.subst(sub, fresh), b.subst(sub, fresh)),
            Rule::Seq(a, b) => Rule::seq(a.subst(sub, fresh), b.subst(sub, fresh)),
            Rule::Call(name, args) => Rule::Call(name.clone(), args.iter().map(|a| a.subst(sub)).collect()),
        }
    }
}

/// Capture-avoiding renaming of binders during call-by-reference expansion.
struct Fresh {
    counter: usize,
}

impl Fresh {
    fn enter_binder(&mut self, x: &str, sub: &BTreeMap<String, Term>) -> (String, BTreeMap<String, Term>) {
        let mut inner = sub.clone();
        inner.remove(x);
        let captured = inner.values().any(|t| t.free_vars().contains(x));
        if !captured {
            return (x.to_string(), inner);
        }
        self.counter += 1;
        let renamed = format!("{x}_{}", self.counter);
        inner.insert(x.to_string(), Term::Var(renamed.clone()));
        (renamed, inner)
    }
}

/// A named rule `r(x_1, ..., x_n) = body`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleDef {
    pub name: String,
    pub params: Vec<String>,
    pub body: Rule,
}

impl RuleDef {
    /// Body with parameters replaced by the argument terms (call by reference).
    pub fn instantiate(&self, args: &[Term]) -> Rule {
        let sub: BTreeMap<String, Term> = self.params.iter().cloned().zip(args.iter().cloned()).collect();
        self.body.subst(&sub, &mut Fresh { counter: 0 })
    }
}

/// Named rules visible to a machine's main rule.
pub type RuleTable = BTreeMap<String, RuleDef>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instantiate_substitutes_params() {
        let def = RuleDef {
            name: "put".into(),
            params: vec!["v".into()],
            body: Rule::assign(Term::nullary("last"), Term::var("v")),
        };
        let r = def.instantiate(&[Term::plus(Term::nullary("x"), Term::int(1))]);
        assert_eq!(r, Rule::assign(Term::nullary("last"), Term::plus(Term::nullary("x"), Term::int(1))));
    }

    #[test]
    fn instantiate_avoids_capture() {
        // put(v) = let y = 1 in f(y) := v, called as put(y)
        let def = RuleDef {
            name: "put".into(),
            params: vec!["v".into()],
            body: Rule::let_in(
                "y",
                Term::int(1),
                Rule::assign(Term::app("f", vec![Term::var("y")]), Term::var("v")),
            ),
        };
        let r = def.instantiate(&[Term::var("y")]);
        match r {
            Rule::Let(x, _, body) => {
                assert_ne!(x, "y");
                assert_eq!(*body, Rule::assign(Term::app("f", vec![Term::var(&x)]), Term::var("y")));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn shadowed_param_not_substituted() {
        let def = RuleDef {
            name: "r".into(),
            params: vec!["x".into()],
            body: Rule::forall_do(
                "x",
                Formula::Truth(true),
                Rule::assign(Term::app("f", vec![Term::var("x")]), Term::int(0)),
            ),
        };
        assert_eq!(def.instantiate(&[Term::int(5)]), def.body);
    }
}
