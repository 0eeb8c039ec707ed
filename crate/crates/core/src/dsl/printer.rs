use std::fmt::Write;

use crate::machine::Machine;
use crate::syntax::{is_static_function, Formula, Rule, Term};

const INDENT: &str = "  ";

pub fn print_programs(machines: &[Machine]) -> String {
    machines.iter().map(print_machine).collect::<Vec<_>>().join("\n")
}

pub fn print_machine(m: &Machine) -> String {
    let mut out = format!("machine {}\n", m.name);
    for (kw, names) in [
        ("shared", &m.classes.shared),
        ("monitored", &m.classes.monitored),
        ("output", &m.classes.output),
    ] {
        if names.is_empty() {
            continue;
        }
        let sigs: Vec<String> = names
            .iter()
            .map(|f| format!("{f}/{}", m.arities.get(f).copied().unwrap_or(0)))
            .collect();
        writeln!(out, "{INDENT}{kw} {}", sigs.join(", ")).unwrap();
    }
    for (loc, v) in &m.init {
        if loc.args.is_empty() {
            writeln!(out, "{INDENT}init {} := {v}", loc.func).unwrap();
        } else {
            let args: Vec<String> = loc.args.iter().map(|a| a.to_string()).collect();
            writeln!(out, "{INDENT}init {}({}) := {v}", loc.func, args.join(", ")).unwrap();
        }
    }
    let mut p = Printer::default();
    writeln!(out, "{INDENT}terminated: {}", p.formula(&m.terminated)).unwrap();
    writeln!(out, "{INDENT}rule: {}", p.rule(&m.main, 1)).unwrap();
    for def in m.rules.values() {
        p.scope.extend(def.params.iter().cloned());
        let body = p.rule(&def.body, 1);
        p.scope.clear();
        writeln!(out, "{INDENT}rule {}({}): {body}", def.name, def.params.join(", ")).unwrap();
    }
    out
}

pub fn print_rule(r: &Rule) -> String {
    Printer::default().rule(r, 0)
}

pub fn print_formula(f: &Formula) -> String {
    Printer::default().formula(f)
}

pub fn print_term(t: &Term) -> String {
    Printer::default().term(t, true)
}

#[derive(Default)]
struct Printer {
    scope: Vec<String>,
}

impl Printer {
    fn bound<T>(&mut self, x: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        self.scope.push(x.to_string());
        let out = f(self);
        self.scope.pop();
        out
    }

    fn term(&self, t: &Term, top: bool) -> String {
        match t {
            Term::Var(x) => x.clone(),
            Term::Const(v) => v.to_string(),
            Term::Apply(f, args) if is_static_function(f) && args.len() == 2 => {
                let inner = format!("{} {f} {}", self.term(&args[0], false), self.term(&args[1], false));
                if top {
                    inner
                } else {
                    format!("({inner})")
                }
            }
            Term::Apply(f, args) if args.is_empty() && !self.scope.contains(f) => f.clone(),
            Term::Apply(f, args) => {
                let args: Vec<String> = args.iter().map(|a| self.term(a, true)).collect();
                format!("{f}({})", args.join(", "))
            }
        }
    }

    fn formula(&mut self, f: &Formula) -> String {
        match f {
            Formula::Truth(b) => b.to_string(),
            Formula::Atom(p, args) => self.term(&Term::Apply(p.clone(), args.clone()), true),
            Formula::Not(a) => format!("not {}", self.formula(a)),
            Formula::And(a, b) => format!("({} and {})", self.formula(a), self.formula(b)),
            Formula::Or(a, b) => format!("({} or {})", self.formula(a), self.formula(b)),
            Formula::Forall(x, a) => format!("(forall {x} . {})", self.bound(x, |p| p.formula(a))),
            Formula::Exists(x, a) => format!("(exists {x} . {})", self.bound(x, |p| p.formula(a))),
            Formula::Eq(a, b) => format!("{} = {}", self.term(a, true), self.term(b, true)),
            Formula::Lt(a, b) => format!("{} < {}", self.term(a, true), self.term(b, true)),
        }
    }

    fn rule(&mut self, r: &Rule, depth: usize) -> String {
        let pad = INDENT.repeat(depth + 1);
        let close = INDENT.repeat(depth);
        match r {
            Rule::Skip => "skip".into(),
            Rule::Assign(l, rhs) => format!("{} := {}", self.term(l, true), self.term(rhs, true)),
            Rule::If(g, a, b) => {
                let g = self.formula(g);
                let a = self.rule(a, depth + 1);
                let b = self.rule(b, depth + 1);
                format!("if {g} then\n{pad}{a}\n{close}else\n{pad}{b}")
            }
            Rule::Let(x, t, body) => {
                let t = self.term(t, true);
                let body = self.bound(x, |p| p.rule(body, depth));
                format!("let {x} = {t} in {body}")
            }
            Rule::ForallDo(x, g, body) | Rule::ChooseDo(x, g, body) => {
                let kw = if matches!(r, Rule::ForallDo(..)) { "forall" } else { "choose" };
                let (g, body) = self.bound(x, |p| (p.formula(g), p.rule(body, depth)));
                format!("{kw} {x} with {g} do {body}")
            }
            Rule::Par(..) | Rule::Seq(..) => {
                let is_par = matches!(r, Rule::Par(..));
                let mut items = Vec::new();
                let mut cur = r;
                loop {
                    match (cur, is_par) {
                        (Rule::Par(a, b), true) | (Rule::Seq(a, b), false) => {
                            items.push(self.rule(a, depth + 1));
                            cur = b;
                        }
                        _ => {
                            items.push(self.rule(cur, depth + 1));
                            break;
                        }
                    }
                }
                let kw = if is_par { "par" } else { "seq" };
                let body: Vec<String> = items.into_iter().map(|i| format!("{pad}{i}")).collect();
                format!("{kw} {{\n{}\n{close}}}", body.join(";\n"))
            }
            Rule::Call(name, args) => {
                let args: Vec<String> = args.iter().map(|a| self.term(a, true)).collect();
                format!("call {name}({})", args.join(", "))
            }
        }
    }
}
