use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use num_traits::Zero;

use super::{Agent, Branch, Declaration, FlowExpr, LinExpr, Program};
use crate::constraint::{AtomicConstraint, CmpOp, Constraint, Name, Term};
use crate::flow::Update;
use crate::num::{parse_rational, Rational};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Syntax,
    UnknownConstant,
    ConstantCycle,
    UnknownProcess,
    Arity,
    NoInitialAgent,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntaxError {
    pub kind: ErrorKind,
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    Punct(&'static str),
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

// Longest first.
const PUNCT: &[&str] = &[
    ":-", "->", "||", "=<", "<=", ">=", "\\=", "!=", "/\\", "(", ")", "[", "]", "{", "}", "|", ",", ".", ";", "+", "-",
    "*", "/", "=", "<", ">", "~",
];

fn lex(text: &str) -> Result<Vec<Token>, SyntaxError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '%' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let (start_line, start_col) = (line, col);
        if c.is_alphabetic() || c == '_' {
            let mut s = String::new();
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '\'') {
                s.push(chars[i]);
                i += 1;
                col += 1;
            }
            out.push(Token { tok: Tok::Ident(s), line: start_line, col: start_col });
            continue;
        }
        if c.is_ascii_digit() {
            let mut s = String::new();
            while i < chars.len() && chars[i].is_ascii_digit() {
                s.push(chars[i]);
                i += 1;
                col += 1;
            }
            if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                s.push('.');
                i += 1;
                col += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    s.push(chars[i]);
                    i += 1;
                    col += 1;
                }
            }
            out.push(Token { tok: Tok::Number(s), line: start_line, col: start_col });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        match PUNCT.iter().find(|p| rest.starts_with(**p)) {
            Some(p) => {
                i += p.len();
                col += p.len();
                out.push(Token { tok: Tok::Punct(p), line: start_line, col: start_col });
            }
            None => {
                return Err(SyntaxError {
                    kind: ErrorKind::Syntax,
                    line,
                    col,
                    message: format!("unexpected character `{}`", c),
                })
            }
        }
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

fn is_var_name(s: &str) -> bool {
    s != "_" && s.chars().next().is_some_and(|c| c.is_uppercase() || c == '_')
}

const KEYWORDS: &[&str] = &[
    "stop", "tell", "ask", "now", "then", "else", "exists", "change", "der", "const", "true", "false", "random", "in",
];

#[derive(Clone, Debug)]
enum ConstExpr {
    Num(Rational),
    Ref(String, usize, usize),
    Neg(Box<ConstExpr>),
    Bin(char, Box<ConstExpr>, Box<ConstExpr>),
}

/// Where a parsed constraint appears; decides whether wildcards or
/// `random` are allowed.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Ctx {
    Tell,
    Guard,
    Store,
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    constants: BTreeMap<Name, Rational>,
    calls: Vec<(Name, usize, usize, usize)>,
}

type PResult<T> = Result<T, SyntaxError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn err<T>(&self, message: String) -> PResult<T> {
        let (line, col) = self.here();
        Err(SyntaxError { kind: ErrorKind::Syntax, line, col, message })
    }

    fn describe(&self) -> String {
        match self.peek() {
            Tok::Ident(s) => format!("`{}`", s),
            Tok::Number(s) => format!("`{}`", s),
            Tok::Punct(p) => format!("`{}`", p),
            Tok::Eof => "end of input".to_string(),
        }
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == k)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> PResult<()> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            self.err(format!("expected `{}`, found {}", p, self.describe()))
        }
    }

    fn expect_kw(&mut self, k: &str) -> PResult<()> {
        if self.is_kw(k) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected `{}`, found {}", k, self.describe()))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.pos += 1;
                Ok(s)
            }
            _ => self.err(format!("expected identifier, found {}", self.describe())),
        }
    }

    fn variable(&mut self) -> PResult<Name> {
        let (line, col) = self.here();
        let s = self.ident()?;
        if !is_var_name(&s) {
            return Err(SyntaxError {
                kind: ErrorKind::Syntax,
                line,
                col,
                message: format!("expected a variable, found `{}`", s),
            });
        }
        if self.constants.contains_key(&s) {
            return Err(SyntaxError {
                kind: ErrorKind::Syntax,
                line,
                col,
                message: format!("constant `{}` used where a variable is expected", s),
            });
        }
        Ok(s)
    }

    fn var_list(&mut self) -> PResult<Vec<Name>> {
        let mut vars = alloc::vec![self.variable()?];
        while self.eat_punct(",") {
            vars.push(self.variable()?);
        }
        Ok(vars)
    }

    // Constants

    fn const_expr(&mut self) -> PResult<ConstExpr> {
        let mut lhs = self.const_term()?;
        loop {
            let op = if self.eat_punct("+") {
                '+'
            } else if self.eat_punct("-") {
                '-'
            } else {
                return Ok(lhs);
            };
            let rhs = self.const_term()?;
            lhs = ConstExpr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn const_term(&mut self) -> PResult<ConstExpr> {
        let mut lhs = self.const_factor()?;
        loop {
            let op = if self.eat_punct("*") {
                '*'
            } else if self.eat_punct("/") {
                '/'
            } else {
                return Ok(lhs);
            };
            let rhs = self.const_factor()?;
            lhs = ConstExpr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn const_factor(&mut self) -> PResult<ConstExpr> {
        if self.eat_punct("-") {
            return Ok(ConstExpr::Neg(Box::new(self.const_factor()?)));
        }
        if self.eat_punct("(") {
            let e = self.const_expr()?;
            self.expect_punct(")")?;
            return Ok(e);
        }
        let (line, col) = self.here();
        match self.peek().clone() {
            Tok::Number(s) => {
                self.pos += 1;
                Ok(ConstExpr::Num(parse_rational(&s).expect("lexer produces valid numbers")))
            }
            Tok::Ident(s) => {
                self.pos += 1;
                Ok(ConstExpr::Ref(s, line, col))
            }
            _ => self.err(format!("expected a number or constant, found {}", self.describe())),
        }
    }

    // Numbers in agent positions

    /// Unsigned rational literal `n`, `n.m` or `n/m`, or a constant name.
    fn unsigned_number(&mut self) -> PResult<Rational> {
        let (line, col) = self.here();
        match self.peek().clone() {
            Tok::Number(s) => {
                self.pos += 1;
                let mut q = parse_rational(&s).expect("lexer produces valid numbers");
                if self.is_punct("/") && matches!(self.peek_at(1), Tok::Number(_)) {
                    self.pos += 1;
                    let Tok::Number(d) = self.peek().clone() else { unreachable!() };
                    self.pos += 1;
                    let d = parse_rational(&d).expect("lexer produces valid numbers");
                    if d.is_zero() {
                        return Err(SyntaxError {
                            kind: ErrorKind::Syntax,
                            line,
                            col,
                            message: "division by zero".into(),
                        });
                    }
                    q /= d;
                }
                Ok(q)
            }
            Tok::Ident(s) if self.constants.contains_key(&s) => {
                self.pos += 1;
                Ok(self.constants[&s].clone())
            }
            Tok::Ident(s) if s.chars().all(|c| c.is_uppercase() || c.is_ascii_digit() || c == '_') && s.len() > 1 => {
                Err(SyntaxError {
                    kind: ErrorKind::UnknownConstant,
                    line,
                    col,
                    message: format!("unknown constant `{}`", s),
                })
            }
            _ => self.err(format!("expected a number, found {}", self.describe())),
        }
    }

    fn signed_number(&mut self) -> PResult<Rational> {
        if self.eat_punct("-") {
            Ok(-self.unsigned_number()?)
        } else {
            self.unsigned_number()
        }
    }

    fn starts_number(&self) -> bool {
        match self.peek() {
            Tok::Number(_) => true,
            Tok::Ident(s) => self.constants.contains_key(s),
            Tok::Punct("-") => true,
            _ => false,
        }
    }

    // Constraints

    fn constraint(&mut self, ctx: Ctx) -> PResult<Constraint> {
        if self.is_kw("true") {
            self.pos += 1;
            return Ok(Constraint::truth());
        }
        if self.is_kw("false") {
            self.pos += 1;
            return Ok(Constraint::falsity());
        }
        let mut atoms = alloc::vec![self.atomic(ctx)?];
        while self.eat_punct(",") || self.eat_punct("/\\") {
            atoms.push(self.atomic(ctx)?);
        }
        Ok(Constraint::from_atoms(atoms))
    }

    fn atomic(&mut self, ctx: Ctx) -> PResult<AtomicConstraint> {
        let lhs = self.variable()?;
        let op = match self.peek().clone() {
            Tok::Punct("=") => CmpOp::Eq,
            Tok::Punct("\\=") | Tok::Punct("!=") => CmpOp::Ne,
            Tok::Punct("<") => CmpOp::Lt,
            Tok::Punct("=<") | Tok::Punct("<=") => CmpOp::Le,
            Tok::Punct(">") => CmpOp::Gt,
            Tok::Punct(">=") => CmpOp::Ge,
            _ => return self.err(format!("expected a comparison operator, found {}", self.describe())),
        };
        self.pos += 1;
        if op == CmpOp::Eq {
            let t = self.term(ctx)?;
            return Ok(match t {
                Term::Num(q) => AtomicConstraint::cmp(&lhs, CmpOp::Eq, q),
                t => AtomicConstraint::TermEq(lhs, t),
            });
        }
        let bound = self.signed_number()?;
        Ok(AtomicConstraint::cmp(&lhs, op, bound))
    }

    fn term(&mut self, ctx: Ctx) -> PResult<Term> {
        if self.starts_number() {
            return Ok(Term::Num(self.signed_number()?));
        }
        if self.eat_punct("[") {
            if self.eat_punct("]") {
                return Ok(Term::Nil);
            }
            let mut items = alloc::vec![self.term(ctx)?];
            while self.eat_punct(",") {
                items.push(self.term(ctx)?);
            }
            let tail = if self.eat_punct("|") { self.term(ctx)? } else { Term::Nil };
            self.expect_punct("]")?;
            return Ok(items.into_iter().rev().fold(tail, |acc, h| Term::cons(h, acc)));
        }
        let (line, col) = self.here();
        let s = self.ident()?;
        if s == "_" {
            if ctx == Ctx::Tell {
                return Err(SyntaxError {
                    kind: ErrorKind::Syntax,
                    line,
                    col,
                    message: "`_` is not allowed in tell".into(),
                });
            }
            return Ok(Term::Wildcard);
        }
        if (s == "random" || s == "Random") && self.is_punct("(") {
            if ctx != Ctx::Tell {
                return Err(SyntaxError {
                    kind: ErrorKind::Syntax,
                    line,
                    col,
                    message: "`random` is only allowed in tell".into(),
                });
            }
            self.expect_punct("(")?;
            let lo = self.signed_number()?;
            self.expect_punct(",")?;
            let hi = self.signed_number()?;
            self.expect_punct(")")?;
            if lo > hi {
                return Err(SyntaxError {
                    kind: ErrorKind::Syntax,
                    line,
                    col,
                    message: "random(lo, hi) needs lo =< hi".into(),
                });
            }
            return Ok(Term::Random(lo, hi));
        }
        if is_var_name(&s) {
            return Ok(Term::Var(s));
        }
        if KEYWORDS.contains(&s.as_str()) {
            return Err(SyntaxError {
                kind: ErrorKind::Syntax,
                line,
                col,
                message: format!("unexpected keyword `{}`", s),
            });
        }
        Ok(Term::Atom(s))
    }

    // Linear expressions for change

    fn lin_expr(&mut self, own: Option<&str>) -> PResult<(LinExpr, Rational)> {
        let mut e = LinExpr { constant: Rational::zero(), terms: Vec::new() };
        let mut coef = Rational::zero();
        let mut sign =
            if self.eat_punct("-") { -Rational::from_integer(1.into()) } else { Rational::from_integer(1.into()) };
        loop {
            let (c, v) = self.lin_term()?;
            let c = sign.clone() * c;
            match v {
                Some(v) if Some(v.as_str()) == own => coef += c,
                Some(v) => match e.terms.iter_mut().find(|(_, w)| *w == v) {
                    Some((k, _)) => *k += c,
                    None => e.terms.push((c, v)),
                },
                None => e.constant += c,
            }
            if self.eat_punct("+") {
                sign = Rational::from_integer(1.into());
            } else if self.eat_punct("-") {
                sign = -Rational::from_integer(1.into());
            } else {
                break;
            }
        }
        e.terms.retain(|(c, _)| !c.is_zero());
        Ok((e, coef))
    }

    fn lin_term(&mut self) -> PResult<(Rational, Option<Name>)> {
        if matches!(self.peek(), Tok::Ident(s) if is_var_name(s) && !self.constants.contains_key(s)) {
            let v = self.variable()?;
            if self.eat_punct("*") {
                let c = self.unsigned_number()?;
                return Ok((c, Some(v)));
            }
            return Ok((Rational::from_integer(1.into()), Some(v)));
        }
        let c = self.unsigned_number()?;
        if self.eat_punct("*") {
            let v = self.variable()?;
            return Ok((c, Some(v)));
        }
        Ok((c, None))
    }

    // Agents

    fn agent(&mut self) -> PResult<Agent> {
        let mut items = alloc::vec![self.item()?];
        while self.eat_punct("||") {
            items.push(self.item()?);
        }
        Ok(Agent::par_all(items))
    }

    fn item(&mut self) -> PResult<Agent> {
        if self.is_kw("ask") {
            self.choice()
        } else {
            self.prim()
        }
    }

    fn choice(&mut self) -> PResult<Agent> {
        let mut asks = Vec::new();
        let mut conts = Vec::new();
        loop {
            self.expect_kw("ask")?;
            if self.eat_punct("~") {
                self.expect_punct("(")?;
                conts.push(self.constraint(Ctx::Guard)?);
                self.expect_punct(")")?;
            } else {
                self.expect_punct("(")?;
                let guard = self.constraint(Ctx::Guard)?;
                self.expect_punct(")")?;
                self.expect_punct("->")?;
                let body = self.prim()?;
                asks.push(Branch { guard, body });
            }
            if !self.eat_punct("+") {
                break;
            }
        }
        Ok(Agent::Choice { asks, conts })
    }

    fn prim(&mut self) -> PResult<Agent> {
        if self.eat_punct("(") {
            let a = self.agent()?;
            self.expect_punct(")")?;
            return Ok(a);
        }
        let (line, col) = self.here();
        let name = match self.peek().clone() {
            Tok::Ident(s) => s,
            _ => return self.err(format!("expected an agent, found {}", self.describe())),
        };
        match name.as_str() {
            "stop" => {
                self.pos += 1;
                Ok(Agent::Stop)
            }
            "tell" => {
                self.pos += 1;
                self.expect_punct("(")?;
                let c = self.constraint(Ctx::Tell)?;
                self.expect_punct(")")?;
                Ok(Agent::Tell(c))
            }
            "now" => {
                self.pos += 1;
                self.expect_punct("(")?;
                let guard = self.constraint(Ctx::Guard)?;
                self.expect_punct(")")?;
                self.expect_kw("then")?;
                let then = self.prim()?;
                self.expect_kw("else")?;
                let otherwise = self.prim()?;
                Ok(Agent::Now { guard, then: Box::new(then), otherwise: Box::new(otherwise) })
            }
            "exists" => {
                self.pos += 1;
                let vars = self.var_list()?;
                let local = if self.is_kw("in") {
                    self.pos += 1;
                    self.expect_punct("{")?;
                    let c = self.constraint(Ctx::Store)?;
                    self.expect_punct("}")?;
                    c
                } else {
                    Constraint::truth()
                };
                self.expect_punct("(")?;
                let body = self.agent()?;
                self.expect_punct(")")?;
                Ok(Agent::Hide { vars, body: Box::new(body), local })
            }
            "change" => {
                self.pos += 1;
                self.expect_punct("(")?;
                let var = self.variable()?;
                self.expect_punct(",")?;
                let value = if self.is_kw("_") {
                    self.pos += 1;
                    Update::Keep
                } else {
                    let (e, coef) = self.lin_expr(None)?;
                    debug_assert!(coef.is_zero());
                    Update::Set(e)
                };
                self.expect_punct(",")?;
                let flow = if self.is_kw("_") {
                    self.pos += 1;
                    Update::Keep
                } else {
                    self.expect_kw("der")?;
                    self.expect_punct("(")?;
                    let (l, c) = self.here();
                    let d = self.variable()?;
                    if d != var {
                        return Err(SyntaxError {
                            kind: ErrorKind::Syntax,
                            line: l,
                            col: c,
                            message: format!("flow of `{}` must be written der({}) = ...", var, var),
                        });
                    }
                    self.expect_punct(")")?;
                    self.expect_punct("=")?;
                    let (constant, coef) = self.lin_expr(Some(&var))?;
                    Update::Set(FlowExpr { constant, coef })
                };
                self.expect_punct(")")?;
                Ok(Agent::Change { var, value, flow })
            }
            _ if KEYWORDS.contains(&name.as_str()) || is_var_name(&name) || name == "_" => {
                self.err(format!("expected an agent, found {}", self.describe()))
            }
            _ => {
                self.pos += 1;
                let args = if self.eat_punct("(") {
                    let a = self.var_list()?;
                    self.expect_punct(")")?;
                    a
                } else {
                    Vec::new()
                };
                self.calls.push((name.clone(), args.len(), line, col));
                Ok(Agent::Call { name, args })
            }
        }
    }
}

fn eval_constants(raw: &[(String, ConstExpr, usize, usize)]) -> PResult<BTreeMap<Name, Rational>> {
    let table: BTreeMap<&str, &ConstExpr> = raw.iter().map(|(n, e, _, _)| (n.as_str(), e)).collect();
    let mut done: BTreeMap<Name, Rational> = BTreeMap::new();

    fn eval(
        e: &ConstExpr,
        table: &BTreeMap<&str, &ConstExpr>,
        done: &mut BTreeMap<Name, Rational>,
        stack: &mut Vec<String>,
    ) -> PResult<Rational> {
        match e {
            ConstExpr::Num(q) => Ok(q.clone()),
            ConstExpr::Neg(x) => Ok(-eval(x, table, done, stack)?),
            ConstExpr::Bin(op, a, b) => {
                let a = eval(a, table, done, stack)?;
                let b = eval(b, table, done, stack)?;
                Ok(match op {
                    '+' => a + b,
                    '-' => a - b,
                    '*' => a * b,
                    _ => {
                        if b.is_zero() {
                            return Err(SyntaxError {
                                kind: ErrorKind::Syntax,
                                line: 0,
                                col: 0,
                                message: "division by zero in constant".into(),
                            });
                        }
                        a / b
                    }
                })
            }
            ConstExpr::Ref(name, line, col) => {
                if let Some(v) = done.get(name) {
                    return Ok(v.clone());
                }
                if stack.contains(name) {
                    return Err(SyntaxError {
                        kind: ErrorKind::ConstantCycle,
                        line: *line,
                        col: *col,
                        message: format!("constant `{}` is defined in terms of itself", name),
                    });
                }
                let Some(def) = table.get(name.as_str()) else {
                    return Err(SyntaxError {
                        kind: ErrorKind::UnknownConstant,
                        line: *line,
                        col: *col,
                        message: format!("unknown constant `{}`", name),
                    });
                };
                stack.push(name.clone());
                let v = eval(def, table, done, stack)?;
                stack.pop();
                done.insert(name.clone(), v.clone());
                Ok(v)
            }
        }
    }

    for (name, e, _, _) in raw {
        let mut stack = alloc::vec![name.clone()];
        let v = eval(e, &table, &mut done, &mut stack)?;
        done.insert(name.clone(), v);
    }
    Ok(done)
}

/// Parses a `.hyt` program: constants, declarations, then an optional
/// initial agent (default: a zero-arity `init` declaration).
pub fn parse_program(text: &str) -> Result<Program, SyntaxError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, constants: BTreeMap::new(), calls: Vec::new() };

    let mut raw = Vec::new();
    while p.is_kw("const") {
        p.pos += 1;
        let (line, col) = p.here();
        let name = p.ident()?;
        if raw.iter().any(|(n, _, _, _): &(String, ConstExpr, usize, usize)| *n == name) {
            return Err(SyntaxError {
                kind: ErrorKind::Syntax,
                line,
                col,
                message: format!("constant `{}` defined twice", name),
            });
        }
        p.expect_punct("=")?;
        let e = p.const_expr()?;
        p.expect_punct(";")?;
        raw.push((name, e, line, col));
    }
    p.constants = eval_constants(&raw)?;

    let mut declarations = Vec::new();
    let mut initial: Option<Agent> = None;
    while *p.peek() != Tok::Eof {
        if initial.is_some() {
            return p.err(format!("unexpected {} after the initial agent", p.describe()));
        }
        let (line, col) = p.here();
        let calls_before = p.calls.len();
        let a = p.agent()?;
        if p.eat_punct(":-") {
            let Agent::Call { name, args } = a else {
                return Err(SyntaxError {
                    kind: ErrorKind::Syntax,
                    line,
                    col,
                    message: "invalid declaration head".into(),
                });
            };
            p.calls.truncate(calls_before);
            let distinct: BTreeSet<&Name> = args.iter().collect();
            if distinct.len() != args.len() {
                return Err(SyntaxError {
                    kind: ErrorKind::Syntax,
                    line,
                    col,
                    message: format!("repeated parameter in declaration of `{}`", name),
                });
            }
            let body = p.agent()?;
            p.expect_punct(".")?;
            declarations.push(Declaration { name, params: args, body });
        } else {
            if !p.eat_punct(".") && *p.peek() != Tok::Eof {
                return p.err(format!("expected `.` or `:-`, found {}", p.describe()));
            }
            initial = Some(a);
        }
    }

    let initial = match initial {
        Some(a) => a,
        None if declarations.iter().any(|d| d.name == "init" && d.params.is_empty()) => {
            p.calls.push(("init".into(), 0, 1, 1));
            Agent::Call { name: "init".into(), args: Vec::new() }
        }
        None => {
            let (line, col) = p.here();
            return Err(SyntaxError {
                kind: ErrorKind::NoInitialAgent,
                line,
                col,
                message: "program has no initial agent and no `init` declaration".into(),
            });
        }
    };

    for (name, arity, line, col) in &p.calls {
        let matching = declarations.iter().filter(|d| d.name == *name);
        let mut any = false;
        let mut arity_ok = false;
        for d in matching {
            any = true;
            arity_ok |= d.params.len() == *arity;
        }
        if !any {
            return Err(SyntaxError {
                kind: ErrorKind::UnknownProcess,
                line: *line,
                col: *col,
                message: format!("call to undeclared process `{}`", name),
            });
        }
        if !arity_ok {
            return Err(SyntaxError {
                kind: ErrorKind::Arity,
                line: *line,
                col: *col,
                message: format!("no declaration of `{}` takes {} argument(s)", name, arity),
            });
        }
    }

    Ok(Program { constants: p.constants, declarations, initial })
}

/// Parses a single agent; calls are not resolved.
pub fn parse_agent(text: &str) -> Result<Agent, SyntaxError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, constants: BTreeMap::new(), calls: Vec::new() };
    let a = p.agent()?;
    p.eat_punct(".");
    if *p.peek() != Tok::Eof {
        return p.err(format!("unexpected {}", p.describe()));
    }
    Ok(a)
}
