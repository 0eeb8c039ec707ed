//! Evaluation of terms and formulae, and the update-set semantics of rules.

use crate::error::AsmError;
use crate::rng::SeedStream;
use crate::state::{Interpretation, State, UpdateSet};
use crate::syntax::{Formula, Rule, RuleTable, Term, STATIC_MINUS, STATIC_PLUS};
use crate::value::{Location, Value};

/// Bound on nested rule calls. Call graphs are acyclic, so this only trips on
/// malformed rule tables that bypassed validation.
pub const MAX_CALL_DEPTH: usize = 64;

pub fn eval_term(t: &Term, s: &State, env: &Interpretation) -> Result<Value, AsmError> {
    match t {
        Term::Var(x) => env.get(x).cloned().ok_or_else(|| AsmError::UnboundVariable(x.clone())),
        Term::Const(v) => Ok(v.clone()),
        Term::Apply(f, args) if f == STATIC_PLUS || f == STATIC_MINUS => {
            if args.len() != 2 {
                return Err(AsmError::ArityMismatch {
                    func: f.clone(),
                    expected: 2,
                    got: args.len(),
                });
            }
            let a = eval_term(&args[0], s, env)?;
            let b = eval_term(&args[1], s, env)?;
            match (a.as_int(), b.as_int()) {
                (Some(a), Some(b)) => Ok(Value::Int(if f == STATIC_PLUS { a + b } else { a - b })),
                _ => Err(AsmError::TypeMismatch(format!("`{f}` applied to {a} and {b}"))),
            }
        }
        Term::Apply(f, args) => Ok(s.get(&location_of(f, args, s, env)?)),
    }
}

/// The location `(f, (val_S(t_1), ..., val_S(t_n)))`.
pub fn location_of(f: &str, args: &[Term], s: &State, env: &Interpretation) -> Result<Location, AsmError> {
    let vals = args.iter().map(|a| eval_term(a, s, env)).collect::<Result<Vec<_>, _>>()?;
    Ok(Location::new(f, vals))
}

pub fn eval_formula(phi: &Formula, s: &State, env: &Interpretation) -> Result<bool, AsmError> {
    Ok(match phi {
        Formula::Truth(b) => *b,
        Formula::Atom(p, args) => s.get(&location_of(p, args, s, env)?) == Value::Bool(true),
        Formula::Not(a) => !eval_formula(a, s, env)?,
        Formula::And(a, b) => eval_formula(a, s, env)? & eval_formula(b, s, env)?,
        Formula::Or(a, b) => eval_formula(a, s, env)? | eval_formula(b, s, env)?,
        Formula::Forall(x, a) => {
            let mut all = true;
            for d in s.domain() {
                all &= eval_formula(a, s, &bind(env, x, d.clone()))?;
            }
            all
        }
        Formula::Exists(x, a) => {
            let mut any = false;
            for d in s.domain() {
                any |= eval_formula(a, s, &bind(env, x, d.clone()))?;
            }
            any
        }
        Formula::Eq(a, b) => eval_term(a, s, env)? == eval_term(b, s, env)?,
        Formula::Lt(a, b) => {
            let (va, vb) = (eval_term(a, s, env)?, eval_term(b, s, env)?);
            match (va.as_int(), vb.as_int()) {
                (Some(x), Some(y)) => x < y,
                _ => return Err(AsmError::TypeMismatch(format!("`<` applied to {va} and {vb}"))),
            }
        }
    })
}

pub(crate) fn bind(env: &Interpretation, x: &str, v: Value) -> Interpretation {
    let mut e = env.clone();
    e.insert(x.to_string(), v);
    e
}

/// `range(x, α, S, I)`: domain elements satisfying the guard, in domain order.
pub fn range(x: &str, guard: &Formula, s: &State, env: &Interpretation) -> Result<Vec<Value>, AsmError> {
    let mut out = Vec::new();
    for d in s.domain() {
        if eval_formula(guard, s, &bind(env, x, d.clone()))? {
            out.push(d.clone());
        }
    }
    Ok(out)
}

/// The update set produced by `r` in `s` under `env`.
///
/// `choose` draws one index from `rng` per executed choose with a nonempty
/// range, in evaluation order. Read/write analysis consumes the stream in the
/// same order, so both agree on every witness.
pub fn yields(r: &Rule, s: &State, env: &Interpretation, rules: &RuleTable, rng: &mut SeedStream) -> Result<UpdateSet, AsmError> {
    yields_at(r, s, env, rules, rng, 0)
}

fn yields_at(
    r: &Rule,
    s: &State,
    env: &Interpretation,
    rules: &RuleTable,
    rng: &mut SeedStream,
    depth: usize,
) -> Result<UpdateSet, AsmError> {
    match r {
        Rule::Skip => Ok(UpdateSet::new()),
        Rule::Assign(lhs, rhs) => {
            let Term::Apply(f, args) = lhs else {
                return Err(AsmError::TypeMismatch(format!("cannot assign to {lhs:?}")));
            };
            let loc = location_of(f, args, s, env)?;
            Ok(UpdateSet::singleton(loc, eval_term(rhs, s, env)?))
        }
        Rule::If(g, a, b) => {
            if eval_formula(g, s, env)? {
                yields_at(a, s, env, rules, rng, depth)
            } else {
                yields_at(b, s, env, rules, rng, depth)
            }
        }
        Rule::Let(x, t, body) => {
            let v = eval_term(t, s, env)?;
            yields_at(body, s, &bind(env, x, v), rules, rng, depth)
        }
        Rule::ForallDo(x, g, body) => {
            let mut u = UpdateSet::new();
            for a in range(x, g, s, env)? {
                u.extend(yields_at(body, s, &bind(env, x, a), rules, rng, depth)?);
            }
            Ok(u)
        }
        Rule::ChooseDo(x, g, body) => {
            let candidates = range(x, g, s, env)?;
            if candidates.is_empty() {
                return Ok(UpdateSet::new());
            }
            let a = candidates[rng.pick(candidates.len())].clone();
            yields_at(body, s, &bind(env, x, a), rules, rng, depth)
        }
        Rule::Par(a, b) => {
            let ua = yields_at(a, s, env, rules, rng, depth)?;
            let ub = yields_at(b, s, env, rules, rng, depth)?;
            Ok(ua.union(ub))
        }
        Rule::Seq(a, b) => {
            let ua = yields_at(a, s, env, rules, rng, depth)?;
            if !ua.is_consistent() {
                return Ok(ua);
            }
            let next = s.apply(&ua)?;
            let ub = yields_at(b, &next, env, rules, rng, depth)?;
            Ok(ua.overridden_by(&ub))
        }
        Rule::Call(name, args) => {
            let body = expand_call(name, args, rules, depth)?;
            yields_at(&body, s, env, rules, rng, depth + 1)
        }
    }
}

pub(crate) fn expand_call(name: &str, args: &[Term], rules: &RuleTable, depth: usize) -> Result<Rule, AsmError> {
    if depth >= MAX_CALL_DEPTH {
        return Err(AsmError::CallDepth(name.to_string()));
    }
    let def = rules.get(name).ok_or_else(|| AsmError::UnknownRule(name.to_string()))?;
    if def.params.len() != args.len() {
        return Err(AsmError::ArityMismatch {
            func: name.to_string(),
            expected: def.params.len(),
            got: args.len(),
        });
    }
    Ok(def.instantiate(args))
}

/// `S + U`.
pub fn apply(s: &State, u: &UpdateSet) -> Result<State, AsmError> {
    s.apply(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::RuleDef;

    fn state() -> State {
        State::with_int_domain(2).unwrap()
    }

    fn loc(f: &str, args: &[i64]) -> Location {
        Location::new(f, args.iter().map(|&i| Value::int(i)).collect())
    }

    fn no_rules() -> RuleTable {
        RuleTable::new()
    }

    #[test]
    fn nullary_lookup() {
        let mut s = state();
        s.set(Location::nullary("lit5"), Value::int(5));
        assert_eq!(
            eval_term(&Term::nullary("lit5"), &s, &Interpretation::new()).unwrap(),
            Value::int(5)
        );
    }

    #[test]
    fn variable_from_env() {
        let env = bind(&Interpretation::new(), "x", Value::Bool(true));
        assert_eq!(eval_term(&Term::var("x"), &state(), &env).unwrap(), Value::Bool(true));
        assert_eq!(
            eval_term(&Term::var("y"), &state(), &env),
            Err(AsmError::UnboundVariable("y".into()))
        );
    }

    #[test]
    fn nested_lookup() {
        let mut s = state();
        s.set(loc("g", &[2]), Value::int(7));
        s.set(loc("f", &[7]), Value::int(9));
        let t = Term::app("f", vec![Term::app("g", vec![Term::int(2)])]);
        assert_eq!(eval_term(&t, &s, &Interpretation::new()).unwrap(), Value::int(9));
    }

    #[test]
    fn arithmetic_and_type_errors() {
        let env = Interpretation::new();
        let t = Term::minus(Term::plus(Term::int(2), Term::int(3)), Term::int(10));
        assert_eq!(eval_term(&t, &state(), &env).unwrap(), Value::int(-5));
        let bad = Term::plus(Term::int(1), Term::Const(Value::Bool(true)));
        assert!(matches!(eval_term(&bad, &state(), &env), Err(AsmError::TypeMismatch(_))));
        let arity = Term::app("+", vec![Term::int(1)]);
        assert!(matches!(eval_term(&arity, &state(), &env), Err(AsmError::ArityMismatch { .. })));
    }

    #[test]
    fn formula_basics() {
        let mut s = state();
        let env = bind(&Interpretation::new(), "x", Value::int(1));
        assert!(eval_formula(&Formula::Eq(Term::var("x"), Term::var("x")), &s, &env).unwrap());
        s.set(Location::nullary("lit"), Value::int(2));
        let all_lt = Formula::forall("x", Formula::Lt(Term::var("x"), Term::nullary("lit")));
        assert!(eval_formula(&all_lt, &s, &Interpretation::new()).unwrap());
        s.set(Location::nullary("P"), Value::Bool(false));
        assert!(eval_formula(&Formula::not(Formula::atom("P", vec![])), &s, &Interpretation::new()).unwrap());
        let some_is_one = Formula::exists("y", Formula::Eq(Term::var("y"), Term::int(1)));
        assert!(eval_formula(&some_is_one, &s, &Interpretation::new()).unwrap());
    }

    #[test]
    fn skip_yields_nothing() {
        let mut rng = SeedStream::from_seed(0);
        assert!(yields(&Rule::Skip, &state(), &Interpretation::new(), &no_rules(), &mut rng)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn assignment() {
        let mut rng = SeedStream::from_seed(0);
        let r = Rule::assign(Term::app("f", vec![Term::int(1)]), Term::int(3));
        let u = yields(&r, &state(), &Interpretation::new(), &no_rules(), &mut rng).unwrap();
        assert_eq!(u, UpdateSet::singleton(loc("f", &[1]), Value::int(3)));
    }

    #[test]
    fn par_clash_is_inconsistent() {
        let mut rng = SeedStream::from_seed(0);
        let f1 = Term::app("f", vec![Term::int(1)]);
        let r = Rule::par(Rule::assign(f1.clone(), Term::int(3)), Rule::assign(f1, Term::int(4)));
        let u = yields(&r, &state(), &Interpretation::new(), &no_rules(), &mut rng).unwrap();
        assert_eq!(u.len(), 2);
        assert!(!u.is_consistent());
    }

    #[test]
    fn seq_sees_first_updates() {
        let mut rng = SeedStream::from_seed(0);
        let x = Term::nullary("x");
        let r = Rule::seq(
            Rule::assign(x.clone(), Term::int(1)),
            Rule::assign(x.clone(), Term::plus(x.clone(), Term::int(1))),
        );
        let u = yields(&r, &state(), &Interpretation::new(), &no_rules(), &mut rng).unwrap();
        assert_eq!(u, UpdateSet::singleton(Location::nullary("x"), Value::int(2)));
    }

    #[test]
    fn seq_with_inconsistent_first_yields_first() {
        let mut rng = SeedStream::from_seed(0);
        let x = Term::nullary("x");
        let clash = Rule::par(Rule::assign(x.clone(), Term::int(1)), Rule::assign(x.clone(), Term::int(2)));
        let r = Rule::seq(clash.clone(), Rule::assign(Term::nullary("y"), Term::int(5)));
        let u1 = yields(&clash, &state(), &Interpretation::new(), &no_rules(), &mut rng).unwrap();
        let u = yields(&r, &state(), &Interpretation::new(), &no_rules(), &mut rng).unwrap();
        assert_eq!(u, u1);
    }

    #[test]
    fn forall_and_empty_choose() {
        let mut rng = SeedStream::from_seed(0);
        let body = Rule::assign(Term::app("f", vec![Term::var("x")]), Term::var("x"));
        let all = Rule::forall_do("x", Formula::Truth(true), body.clone());
        let u = yields(&all, &state(), &Interpretation::new(), &no_rules(), &mut rng).unwrap();
        assert_eq!(u.len(), 2);
        let none = Rule::choose_do("x", Formula::Truth(false), body);
        assert!(yields(&none, &state(), &Interpretation::new(), &no_rules(), &mut rng)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn choose_is_seed_deterministic() {
        let body = Rule::assign(Term::nullary("c"), Term::var("x"));
        let r = Rule::choose_do("x", Formula::Truth(true), body);
        let s = State::with_int_domain(8).unwrap();
        let run = |seed| yields(&r, &s, &Interpretation::new(), &no_rules(), &mut SeedStream::from_seed(seed)).unwrap();
        assert_eq!(run(3), run(3));
    }

    #[test]
    fn call_by_reference() {
        let mut rules = RuleTable::new();
        rules.insert(
            "put".into(),
            RuleDef {
                name: "put".into(),
                params: vec!["v".into()],
                body: Rule::assign(Term::nullary("last"), Term::var("v")),
            },
        );
        let mut rng = SeedStream::from_seed(0);
        let r = Rule::Call("put".into(), vec![Term::int(4)]);
        let u = yields(&r, &state(), &Interpretation::new(), &rules, &mut rng).unwrap();
        assert_eq!(u, UpdateSet::singleton(Location::nullary("last"), Value::int(4)));
        let bad = Rule::Call("nope".into(), vec![]);
        assert!(matches!(
            yields(&bad, &state(), &Interpretation::new(), &rules, &mut rng),
            Err(AsmError::UnknownRule(_))
        ));
    }
}
