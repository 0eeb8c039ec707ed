use std::collections::BTreeMap;

use super::lexer::{lex, Tok, Token};
use super::{DslError, KEYWORDS};
use crate::machine::Machine;
use crate::syntax::{Formula, Rule, RuleDef, Term, STATIC_MINUS, STATIC_PLUS};
use crate::value::{Location, Value};

/// Parses every machine in `src`.
pub fn parse_programs(src: &str) -> Result<Vec<Machine>, DslError> {
    let mut p = Parser {
        toks: lex(src)?,
        pos: 0,
        scope: Vec::new(),
    };
    let mut out = Vec::new();
    while p.peek() != &Tok::Eof {
        let m = p.machine()?;
        super::validate_machine(&m)?;
        out.push(m);
    }
    Ok(out)
}

/// Parses a source containing exactly one machine.
pub fn parse_program(src: &str) -> Result<Machine, DslError> {
    let mut ms = parse_programs(src)?;
    match ms.len() {
        1 => Ok(ms.pop().unwrap()),
        n => Err(DslError::parse(1, 1, format!("expected one machine, found {n}"))),
    }
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    scope: Vec<String>,
}

type PResult<T> = Result<T, DslError>;

impl Parser {
    fn peek(&self) -> &Tok {
        self.peek_at(0)
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.peek().clone();
        self.pos += 1;
        t
    }

    fn error<T>(&self, msg: impl Into<String>) -> PResult<T> {
        let t = &self.toks[self.pos.min(self.toks.len() - 1)];
        Err(DslError::parse(t.line, t.col, msg))
    }

    fn unexpected<T>(&self, wanted: &str) -> PResult<T> {
        self.error(format!("expected {wanted}, found {}", self.peek()))
    }

    fn expect(&mut self, tok: Tok) -> PResult<()> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.unexpected(&tok.to_string())
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.is_kw(kw) {
            self.bump();
            Ok(())
        } else {
            self.unexpected(&format!("`{kw}`"))
        }
    }

    /// A non-keyword identifier.
    fn name(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                Ok(s)
            }
            _ => self.unexpected("an identifier"),
        }
    }

    fn with_bound<T>(&mut self, x: &str, f: impl FnOnce(&mut Self) -> PResult<T>) -> PResult<T> {
        self.scope.push(x.to_string());
        let out = f(self);
        self.scope.pop();
        out
    }

    fn machine(&mut self) -> PResult<Machine> {
        self.expect_kw("machine")?;
        let name = self.name()?;
        let mut m = Machine::new(name, Rule::Skip, Formula::Truth(false));
        let (mut main, mut terminated) = (None, None);
        while let Tok::Ident(kw) = self.peek().clone() {
            match kw.as_str() {
                "shared" | "monitored" | "output" => {
                    self.bump();
                    loop {
                        let f = self.name()?;
                        self.expect(Tok::Slash)?;
                        let arity = match self.bump() {
                            Tok::Int(i) => match usize::try_from(i) {
                                Ok(a) => a,
                                Err(_) => return self.error("arity too large"),
                            },
                            _ => {
                                self.pos -= 1;
                                return self.unexpected("an arity");
                            }
                        };
                        m = match kw.as_str() {
                            "shared" => m.shared(&f, arity),
                            "monitored" => m.monitored(&f, arity),
                            _ => m.output(&f, arity),
                        };
                        if *self.peek() != Tok::Comma {
                            break;
                        }
                        self.bump();
                    }
                }
                "init" => {
                    self.bump();
                    let f = self.name()?;
                    let mut args = Vec::new();
                    if *self.peek() == Tok::LParen {
                        self.bump();
                        if *self.peek() != Tok::RParen {
                            args.push(self.value()?);
                            while *self.peek() == Tok::Comma {
                                self.bump();
                                args.push(self.value()?);
                            }
                        }
                        self.expect(Tok::RParen)?;
                    }
                    self.expect(Tok::Assign)?;
                    let v = self.value()?;
                    m = m.init(Location::new(f, args), v);
                }
                "terminated" => {
                    if terminated.is_some() {
                        return self.error("duplicate `terminated`");
                    }
                    self.bump();
                    self.expect(Tok::Colon)?;
                    terminated = Some(self.formula()?);
                }
                "rule" => {
                    self.bump();
                    if *self.peek() == Tok::Colon {
                        if main.is_some() {
                            return self.error("duplicate main rule");
                        }
                        self.bump();
                        main = Some(self.rule()?);
                        continue;
                    }
                    let rname = self.name()?;
                    self.expect(Tok::LParen)?;
                    let mut params = Vec::new();
                    if *self.peek() != Tok::RParen {
                        params.push(self.name()?);
                        while *self.peek() == Tok::Comma {
                            self.bump();
                            params.push(self.name()?);
                        }
                    }
                    self.expect(Tok::RParen)?;
                    self.expect(Tok::Colon)?;
                    self.scope.extend(params.iter().cloned());
                    let body = self.rule();
                    self.scope.truncate(self.scope.len() - params.len());
                    let body = body?;
                    if m.rules.contains_key(&rname) {
                        return Err(DslError::Invalid {
                            machine: m.name.clone(),
                            message: format!("rule `{rname}` defined twice"),
                        });
                    }
                    m.rules.insert(rname.clone(), RuleDef { name: rname, params, body });
                }
                _ => break,
            }
        }
        if !self.is_kw("machine") && *self.peek() != Tok::Eof {
            return self.unexpected("a declaration");
        }
        m.main = match main {
            Some(r) => r,
            None => return self.error(format!("machine `{}` has no `rule:`", m.name)),
        };
        m.terminated = match terminated {
            Some(t) => t,
            None => return self.error(format!("machine `{}` has no `terminated:`", m.name)),
        };
        Ok(m)
    }

    fn value(&mut self) -> PResult<Value> {
        match self.bump() {
            Tok::Int(i) => Ok(Value::Int(i)),
            Tok::Minus => match self.bump() {
                Tok::Int(i) => Ok(Value::Int(-i)),
                _ => {
                    self.pos -= 1;
                    self.unexpected("an integer")
                }
            },
            Tok::Sym(s) => Ok(Value::Sym(s)),
            Tok::Ident(s) if s == "true" => Ok(Value::Bool(true)),
            Tok::Ident(s) if s == "false" => Ok(Value::Bool(false)),
            Tok::Ident(s) if s == "undef" => Ok(Value::Undef),
            _ => {
                self.pos -= 1;
                self.unexpected("a value")
            }
        }
    }

    fn rule(&mut self) -> PResult<Rule> {
        let kw = match self.peek() {
            Tok::Ident(s) => s.clone(),
            _ => String::new(),
        };
        match kw.as_str() {
            "skip" => {
                self.bump();
                Ok(Rule::Skip)
            }
            "if" => {
                self.bump();
                let g = self.formula()?;
                self.expect_kw("then")?;
                let a = self.rule()?;
                let b = if self.is_kw("else") {
                    self.bump();
                    self.rule()?
                } else {
                    Rule::Skip
                };
                Ok(Rule::if_then_else(g, a, b))
            }
            "let" => {
                self.bump();
                let x = self.name()?;
                self.expect(Tok::Eq)?;
                let t = self.term()?;
                self.expect_kw("in")?;
                let body = self.with_bound(&x, |p| p.rule())?;
                Ok(Rule::let_in(&x, t, body))
            }
            "forall" | "choose" => {
                self.bump();
                let x = self.name()?;
                self.expect_kw("with")?;
                let (g, body) = self.with_bound(&x, |p| {
                    let g = p.formula()?;
                    p.expect_kw("do")?;
                    Ok((g, p.rule()?))
                })?;
                Ok(if kw == "forall" {
                    Rule::forall_do(&x, g, body)
                } else {
                    Rule::choose_do(&x, g, body)
                })
            }
            "par" | "seq" => {
                self.bump();
                self.expect(Tok::LBrace)?;
                let mut rules = vec![self.rule()?];
                while *self.peek() == Tok::Semi {
                    self.bump();
                    if *self.peek() == Tok::RBrace {
                        break;
                    }
                    rules.push(self.rule()?);
                }
                self.expect(Tok::RBrace)?;
                Ok(if kw == "par" { Rule::par_all(rules) } else { Rule::seq_all(rules) })
            }
            "call" => {
                self.bump();
                let name = self.name()?;
                let args = self.args()?;
                Ok(Rule::Call(name, args))
            }
            _ => {
                let lhs = self.term()?;
                match &lhs {
                    Term::Apply(f, _) if !crate::syntax::is_static_function(f) => {}
                    _ => return self.error("the left-hand side of `:=` must be a function application"),
                }
                self.expect(Tok::Assign)?;
                let rhs = self.term()?;
                Ok(Rule::assign(lhs, rhs))
            }
        }
    }

    fn args(&mut self) -> PResult<Vec<Term>> {
        self.expect(Tok::LParen)?;
        let mut args = Vec::new();
        if *self.peek() != Tok::RParen {
            args.push(self.term()?);
            while *self.peek() == Tok::Comma {
                self.bump();
                args.push(self.term()?);
            }
        }
        self.expect(Tok::RParen)?;
        Ok(args)
    }

    fn formula(&mut self) -> PResult<Formula> {
        let mut f = self.conjunction()?;
        while self.is_kw("or") {
            self.bump();
            f = Formula::or(f, self.conjunction()?);
        }
        Ok(f)
    }

    fn conjunction(&mut self) -> PResult<Formula> {
        let mut f = self.unary()?;
        while self.is_kw("and") {
            self.bump();
            f = Formula::and(f, self.unary()?);
        }
        Ok(f)
    }

    fn unary(&mut self) -> PResult<Formula> {
        if self.is_kw("not") {
            self.bump();
            return Ok(Formula::not(self.unary()?));
        }
        if self.is_kw("forall") || self.is_kw("exists") {
            let forall = self.is_kw("forall");
            self.bump();
            let x = self.name()?;
            self.expect(Tok::Dot)?;
            let body = self.with_bound(&x, |p| p.formula())?;
            return Ok(if forall {
                Formula::forall(&x, body)
            } else {
                Formula::exists(&x, body)
            });
        }
        if *self.peek() == Tok::LParen {
            let save = self.pos;
            self.bump();
            if let Ok(f) = self.formula() {
                if *self.peek() == Tok::RParen && !matches!(self.peek_at(1), Tok::Eq | Tok::Lt | Tok::Plus | Tok::Minus) {
                    self.bump();
                    return Ok(f);
                }
            }
            self.pos = save;
        }
        let t = self.term()?;
        match self.peek() {
            Tok::Eq => {
                self.bump();
                Ok(Formula::Eq(t, self.term()?))
            }
            Tok::Lt => {
                self.bump();
                Ok(Formula::Lt(t, self.term()?))
            }
            _ => match t {
                Term::Const(Value::Bool(b)) => Ok(Formula::Truth(b)),
                Term::Apply(p, args) if !crate::syntax::is_static_function(&p) => Ok(Formula::Atom(p, args)),
                _ => self.unexpected("`=` or `<`"),
            },
        }
    }

    fn term(&mut self) -> PResult<Term> {
        let mut t = self.primary()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => STATIC_PLUS,
                Tok::Minus => STATIC_MINUS,
                _ => return Ok(t),
            };
            self.bump();
            t = Term::app(op, vec![t, self.primary()?]);
        }
    }

    fn primary(&mut self) -> PResult<Term> {
        match self.peek().clone() {
            Tok::Int(i) => {
                self.bump();
                Ok(Term::Const(Value::Int(i)))
            }
            Tok::Minus => {
                self.bump();
                match self.bump() {
                    Tok::Int(i) => Ok(Term::Const(Value::Int(-i))),
                    _ => {
                        self.pos -= 1;
                        self.unexpected("an integer after `-`")
                    }
                }
            }
            Tok::Sym(s) => {
                self.bump();
                Ok(Term::Const(Value::Sym(s)))
            }
            Tok::LParen => {
                self.bump();
                let t = self.term()?;
                self.expect(Tok::RParen)?;
                Ok(t)
            }
            Tok::Ident(s) => match s.as_str() {
                "true" | "false" | "undef" => Ok(Term::Const(self.value()?)),
                _ => {
                    let f = self.name()?;
                    if *self.peek() == Tok::LParen {
                        Ok(Term::Apply(f, self.args()?))
                    } else if self.scope.contains(&f) {
                        Ok(Term::Var(f))
                    } else {
                        Ok(Term::nullary(&f))
                    }
                }
            },
            _ => self.unexpected("a term"),
        }
    }
}

/// Arities of every dynamic function applied in `m`, in first-use order.
pub(crate) fn applied_arities(m: &Machine) -> Result<BTreeMap<String, usize>, (String, usize, usize)> {
    let mut seen: BTreeMap<String, usize> = m.arities.clone();
    let mut check = |f: &str, n: usize| -> Result<(), (String, usize, usize)> {
        if crate::syntax::is_static_function(f) {
            return Ok(());
        }
        match seen.get(f) {
            Some(&k) if k != n => Err((f.to_string(), k, n)),
            Some(_) => Ok(()),
            None => {
                seen.insert(f.to_string(), n);
                Ok(())
            }
        }
    };
    for (loc, _) in &m.init {
        check(&loc.func, loc.args.len())?;
    }
    let mut terms = Vec::new();
    let mut atoms = Vec::new();
    super::walk_machine(m, &mut |t| terms.push(t.clone()), &mut |p, n| atoms.push((p.to_string(), n)));
    for t in &terms {
        if let Term::Apply(f, args) = t {
            check(f, args.len())?;
        }
    }
    for (p, n) in atoms {
        check(&p, n)?;
    }
    Ok(seen)
}
