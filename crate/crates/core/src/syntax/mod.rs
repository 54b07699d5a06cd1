//! Agents, declarations and programs, with the pretty-printer that is the
//! inverse of [`parse_program`].

mod parser;

pub use parser::{parse_agent, parse_program, ErrorKind, SyntaxError};

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use num_traits::{One, Signed, Zero};

use crate::constraint::{Constraint, Name};
use crate::flow::{Flow, Update};
use crate::num::{fmt_rational, Rational};

/// `constant + sum(coef * var)` over discrete variables, resolved against the
/// store when a `change` executes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LinExpr {
    pub constant: Rational,
    pub terms: Vec<(Rational, Name)>,
}

impl LinExpr {
    pub fn constant(q: Rational) -> Self {
        LinExpr { constant: q, terms: Vec::new() }
    }

    pub fn as_constant(&self) -> Option<&Rational> {
        if self.terms.is_empty() {
            Some(&self.constant)
        } else {
            None
        }
    }

    fn rename(&self, ren: &impl Fn(&str) -> Name) -> LinExpr {
        LinExpr {
            constant: self.constant.clone(),
            terms: self.terms.iter().map(|(c, v)| (c.clone(), ren(v))).collect(),
        }
    }
}

/// Right-hand side of `der(x) = constant + coef*x`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowExpr {
    pub constant: LinExpr,
    pub coef: Rational,
}

impl FlowExpr {
    pub fn from_flow(f: &Flow) -> Self {
        FlowExpr { constant: LinExpr::constant(f.a.clone()), coef: f.b.clone() }
    }

    /// The flow, if no discrete variable is involved.
    pub fn as_flow(&self) -> Option<Flow> {
        self.constant.as_constant().map(|a| Flow::new(a.clone(), self.coef.clone()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Branch {
    pub guard: Constraint,
    pub body: Agent,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Agent {
    Stop,
    Tell(Constraint),
    Parallel(Box<Agent>, Box<Agent>),
    /// `exists vars (body)` with its local store.
    Hide {
        vars: Vec<Name>,
        body: Box<Agent>,
        local: Constraint,
    },
    /// `ask(c1) -> A1 + ... + ask~(inv1) + ...`
    Choice {
        asks: Vec<Branch>,
        conts: Vec<Constraint>,
    },
    Now {
        guard: Constraint,
        then: Box<Agent>,
        otherwise: Box<Agent>,
    },
    Call {
        name: Name,
        args: Vec<Name>,
    },
    Change {
        var: Name,
        value: Update<LinExpr>,
        flow: Update<FlowExpr>,
    },
}

impl Agent {
    pub fn par(a: Agent, b: Agent) -> Agent {
        Agent::Parallel(Box::new(a), Box::new(b))
    }

    /// Right-nested parallel composition of `agents` (`stop` if empty).
    pub fn par_all<I: IntoIterator<Item = Agent>>(agents: I) -> Agent {
        let mut items: Vec<Agent> = agents.into_iter().collect();
        let mut acc = match items.pop() {
            Some(a) => a,
            None => return Agent::Stop,
        };
        while let Some(a) = items.pop() {
            acc = Agent::par(a, acc);
        }
        acc
    }

    pub fn hide(vars: Vec<Name>, body: Agent) -> Agent {
        Agent::Hide { vars, body: Box::new(body), local: Constraint::truth() }
    }

    pub fn is_stop(&self) -> bool {
        match self {
            Agent::Stop => true,
            Agent::Parallel(a, b) => a.is_stop() && b.is_stop(),
            Agent::Hide { body, .. } => body.is_stop(),
            _ => false,
        }
    }

    /// Number of AST nodes.
    pub fn size(&self) -> usize {
        1 + match self {
            Agent::Parallel(a, b) => a.size() + b.size(),
            Agent::Hide { body, .. } => body.size(),
            Agent::Choice { asks, conts } => asks.iter().map(|b| b.body.size()).sum::<usize>() + conts.len(),
            Agent::Now { then, otherwise, .. } => then.size() + otherwise.size(),
            _ => 0,
        }
    }

    /// Variables not bound by an enclosing `exists`.
    pub fn free_vars(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        self.collect_free(&mut out);
        out
    }

    fn collect_free(&self, out: &mut BTreeSet<Name>) {
        match self {
            Agent::Stop => {}
            Agent::Tell(c) => out.extend(c.vars()),
            Agent::Parallel(a, b) => {
                a.collect_free(out);
                b.collect_free(out);
            }
            Agent::Hide { vars, body, local } => {
                let mut inner = body.free_vars();
                inner.extend(local.vars());
                for v in vars {
                    inner.remove(v);
                }
                out.extend(inner);
            }
            Agent::Choice { asks, conts } => {
                for b in asks {
                    out.extend(b.guard.vars());
                    b.body.collect_free(out);
                }
                for c in conts {
                    out.extend(c.vars());
                }
            }
            Agent::Now { guard, then, otherwise } => {
                out.extend(guard.vars());
                then.collect_free(out);
                otherwise.collect_free(out);
            }
            Agent::Call { args, .. } => out.extend(args.iter().cloned()),
            Agent::Change { var, value, flow } => {
                out.insert(var.clone());
                if let Update::Set(e) = value {
                    out.extend(e.terms.iter().map(|(_, v)| v.clone()));
                }
                if let Update::Set(f) = flow {
                    out.extend(f.constant.terms.iter().map(|(_, v)| v.clone()));
                }
            }
        }
    }

    /// Every variable name occurring anywhere, bound or free.
    pub fn all_vars(&self, out: &mut BTreeSet<Name>) {
        match self {
            Agent::Hide { vars, body, local } => {
                out.extend(vars.iter().cloned());
                out.extend(local.vars());
                body.all_vars(out);
            }
            Agent::Parallel(a, b) => {
                a.all_vars(out);
                b.all_vars(out);
            }
            Agent::Choice { asks, conts } => {
                for b in asks {
                    out.extend(b.guard.vars());
                    b.body.all_vars(out);
                }
                for c in conts {
                    out.extend(c.vars());
                }
            }
            Agent::Now { guard, then, otherwise } => {
                out.extend(guard.vars());
                then.all_vars(out);
                otherwise.all_vars(out);
            }
            other => out.extend(other.free_vars()),
        }
    }

    /// Capture-avoiding renaming of free variables. Hidden variables that
    /// would capture a substituted name are renamed to `name~k`.
    pub fn substitute(&self, map: &BTreeMap<Name, Name>) -> Agent {
        if map.is_empty() {
            return self.clone();
        }
        let ren = |v: &str| map.get(v).cloned().unwrap_or_else(|| v.into());
        match self {
            Agent::Stop => Agent::Stop,
            Agent::Tell(c) => Agent::Tell(c.rename(map)),
            Agent::Parallel(a, b) => Agent::par(a.substitute(map), b.substitute(map)),
            Agent::Hide { vars, body, local } => {
                let mut inner: BTreeMap<Name, Name> =
                    map.iter().filter(|(k, _)| !vars.contains(k)).map(|(k, v)| (k.clone(), v.clone())).collect();
                let targets: BTreeSet<&Name> = inner.values().collect();
                let mut taken = BTreeSet::new();
                self.all_vars(&mut taken);
                taken.extend(inner.keys().cloned());
                taken.extend(inner.values().cloned());
                let mut alpha: BTreeMap<Name, Name> = BTreeMap::new();
                for v in vars {
                    if targets.contains(v) {
                        let fresh = fresh_name(v, &taken);
                        taken.insert(fresh.clone());
                        alpha.insert(v.clone(), fresh);
                    }
                }
                let (vars, body, local) = if alpha.is_empty() {
                    (vars.clone(), (**body).clone(), local.clone())
                } else {
                    let vars = vars.iter().map(|v| alpha.get(v).cloned().unwrap_or_else(|| v.clone())).collect();
                    (vars, body.substitute(&alpha), local.rename(&alpha))
                };
                inner.retain(|k, _| !vars.contains(k));
                Agent::Hide { body: Box::new(body.substitute(&inner)), local: local.rename(&inner), vars }
            }
            Agent::Choice { asks, conts } => Agent::Choice {
                asks: asks
                    .iter()
                    .map(|b| Branch { guard: b.guard.rename(map), body: b.body.substitute(map) })
                    .collect(),
                conts: conts.iter().map(|c| c.rename(map)).collect(),
            },
            Agent::Now { guard, then, otherwise } => Agent::Now {
                guard: guard.rename(map),
                then: Box::new(then.substitute(map)),
                otherwise: Box::new(otherwise.substitute(map)),
            },
            Agent::Call { name, args } => {
                Agent::Call { name: name.clone(), args: args.iter().map(|a| ren(a)).collect() }
            }
            Agent::Change { var, value, flow } => Agent::Change {
                var: ren(var),
                value: match value {
                    Update::Keep => Update::Keep,
                    Update::Set(e) => Update::Set(e.rename(&ren)),
                },
                flow: match flow {
                    Update::Keep => Update::Keep,
                    Update::Set(f) => Update::Set(FlowExpr { constant: f.constant.rename(&ren), coef: f.coef.clone() }),
                },
            },
        }
    }
}

fn fresh_name(base: &str, taken: &BTreeSet<Name>) -> Name {
    let stem = match base.split_once('~') {
        Some((s, _)) => s,
        None => base,
    };
    let mut k = 1usize;
    loop {
        let cand = format!("{}~{}", stem, k);
        if !taken.contains(&cand) {
            return cand;
        }
        k += 1;
    }
}

/// `p(x1, ..., xn) :- A`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Declaration {
    pub name: Name,
    pub params: Vec<Name>,
    pub body: Agent,
}

impl Declaration {
    /// The body with parameters replaced by `args`.
    pub fn instantiate(&self, args: &[Name]) -> Agent {
        let map: BTreeMap<Name, Name> =
            self.params.iter().cloned().zip(args.iter().cloned()).filter(|(p, a)| p != a).collect();
        self.body.substitute(&map)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub constants: BTreeMap<Name, Rational>,
    pub declarations: Vec<Declaration>,
    pub initial: Agent,
}

impl Program {
    pub fn new(declarations: Vec<Declaration>, initial: Agent) -> Self {
        Program { constants: BTreeMap::new(), declarations, initial }
    }

    /// Declarations matching a call, in source order.
    pub fn lookup<'a>(&'a self, name: &'a str, arity: usize) -> impl Iterator<Item = &'a Declaration> + 'a {
        self.declarations.iter().filter(move |d| d.name == name && d.params.len() == arity)
    }
}

// Pretty-printing. Output re-parses to an equal AST.

struct Prim<'a>(&'a Agent);

impl fmt::Display for Prim<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Agent::Parallel(..) | Agent::Choice { .. } => write!(f, "({})", self.0),
            other => other.fmt(f),
        }
    }
}

fn write_vars(f: &mut fmt::Formatter<'_>, vars: &[Name]) -> fmt::Result {
    for (i, v) in vars.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        f.write_str(v)?;
    }
    Ok(())
}

impl fmt::Display for LinExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (c, v) in &self.terms {
            write_term(f, c, Some(v), &mut first)?;
        }
        if first || !self.constant.is_zero() {
            write_term(f, &self.constant, None, &mut first)?;
        }
        Ok(())
    }
}

fn write_term(f: &mut fmt::Formatter<'_>, c: &Rational, var: Option<&str>, first: &mut bool) -> fmt::Result {
    let neg = c.is_negative();
    let mag = c.abs();
    if *first {
        if neg {
            f.write_str("-")?;
        }
    } else {
        f.write_str(if neg { " - " } else { " + " })?;
    }
    *first = false;
    match var {
        Some(v) if mag.is_one() => f.write_str(v),
        Some(v) => write!(f, "{}*{}", fmt_rational(&mag), v),
        None => f.write_str(&fmt_rational(&mag)),
    }
}

impl fmt::Display for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Agent::Stop => f.write_str("stop"),
            Agent::Tell(c) => write!(f, "tell({})", c),
            Agent::Parallel(a, b) => {
                let left = match **a {
                    Agent::Parallel(..) => alloc::format!("({})", a),
                    _ => alloc::format!("{}", a),
                };
                write!(f, "{} || {}", left, b)
            }
            Agent::Hide { vars, body, local } => {
                f.write_str("exists ")?;
                write_vars(f, vars)?;
                if !local.is_true() {
                    write!(f, " in {{{}}}", local)?;
                }
                write!(f, " ({})", body)
            }
            Agent::Choice { asks, conts } => {
                let mut first = true;
                for b in asks {
                    if !first {
                        f.write_str(" + ")?;
                    }
                    first = false;
                    write!(f, "ask({}) -> {}", b.guard, Prim(&b.body))?;
                }
                for c in conts {
                    if !first {
                        f.write_str(" + ")?;
                    }
                    first = false;
                    write!(f, "ask~({})", c)?;
                }
                Ok(())
            }
            Agent::Now { guard, then, otherwise } => {
                write!(f, "now({}) then {} else {}", guard, Prim(then), Prim(otherwise))
            }
            Agent::Call { name, args } => {
                f.write_str(name)?;
                if !args.is_empty() {
                    f.write_str("(")?;
                    write_vars(f, args)?;
                    f.write_str(")")?;
                }
                Ok(())
            }
            Agent::Change { var, value, flow } => {
                write!(f, "change({}, ", var)?;
                match value {
                    Update::Keep => f.write_str("_")?,
                    Update::Set(e) => write!(f, "{}", e)?,
                }
                f.write_str(", ")?;
                match flow {
                    Update::Keep => f.write_str("_")?,
                    Update::Set(fl) => {
                        write!(f, "der({}) = ", var)?;
                        let mut first = true;
                        if !fl.coef.is_zero() {
                            write_term(f, &fl.coef, Some(var), &mut first)?;
                        }
                        for (c, v) in &fl.constant.terms {
                            write_term(f, c, Some(v), &mut first)?;
                        }
                        if first || !fl.constant.constant.is_zero() {
                            write_term(f, &fl.constant.constant, None, &mut first)?;
                        }
                    }
                }
                f.write_str(")")
            }
        }
    }
}

impl fmt::Display for Declaration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        if !self.params.is_empty() {
            f.write_str("(")?;
            write_vars(f, &self.params)?;
            f.write_str(")")?;
        }
        write!(f, " :- {}.", self.body)
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.constants {
            writeln!(f, "const {} = {};", k, fmt_rational(v))?;
        }
        if !self.constants.is_empty() {
            writeln!(f)?;
        }
        for d in &self.declarations {
            writeln!(f, "{}", d)?;
        }
        write!(f, "{}.", self.initial)?;
        writeln!(f)
    }
}
