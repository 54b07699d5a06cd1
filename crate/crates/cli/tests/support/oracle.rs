//! A second, deliberately naive reading of the transition rules, used to
//! cross-check the engine and the explorer.
//!
//! It shares only the constraint operations and the AST with the core. The
//! discrete rules are re-derived one by one, guards are split and evaluated
//! here, and the delay of a continuous step is found by evaluating every
//! watched condition exactly at each critical time and between consecutive
//! ones. Only constant-rate flows are supported, so every value stays an
//! exact rational and configurations can be compared by key.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use hytccp_core::constraint::{conj, entails, hide_all, AtomicConstraint, CmpOp, Constraint, LinCmp, Name, Term};
use hytccp_core::flow::{ContinuousStore, Flow, Update};
use hytccp_core::num::{int, Rational, Real};
use hytccp_core::semantics::Configuration;
use hytccp_core::syntax::{Agent, LinExpr, Program};
use num_traits::Zero;

/// Continuous variables: exact value and constant rate.
type Cont = BTreeMap<Name, (Rational, Rational)>;

struct Env<'a> {
    cont: &'a Cont,
    hidden: BTreeSet<Name>,
}

#[derive(Clone)]
struct Move {
    agent: Agent,
    store: Constraint,
    changes: Vec<(Name, Option<Rational>, Option<Rational>)>,
}

pub struct Oracle<'p> {
    program: &'p Program,
    horizon: Rational,
}

fn holds(op: CmpOp, lhs: &Rational, rhs: &Rational) -> bool {
    let o = lhs.cmp(rhs);
    match op {
        CmpOp::Eq => o == Ordering::Equal,
        CmpOp::Ne => o != Ordering::Equal,
        CmpOp::Lt => o == Ordering::Less,
        CmpOp::Le => o != Ordering::Greater,
        CmpOp::Gt => o == Ordering::Greater,
        CmpOp::Ge => o != Ordering::Less,
    }
}

/// Splits `guard` into its discrete part and its comparisons over
/// continuous variables; `None` when a continuous variable is equated with
/// something other than a number.
fn split(guard: &Constraint, cont: &Cont) -> Option<(Constraint, Vec<LinCmp>)> {
    let mut disc = Vec::new();
    let mut cmps = Vec::new();
    for atom in guard.atoms() {
        match atom {
            AtomicConstraint::TermEq(x, t) if cont.contains_key(&x) => match t {
                Term::Num(q) => cmps.push(LinCmp::new(&x, CmpOp::Eq, q)),
                _ => return None,
            },
            AtomicConstraint::LinCmp(c) if cont.contains_key(&c.var) => cmps.push(c),
            other => disc.push(other),
        }
    }
    Some((Constraint::from_atoms(disc), cmps))
}

/// The continuous atoms of `guard` when its discrete part is entailed by `d`.
fn entailed_part(guard: &Constraint, d: &Constraint, env: &Env<'_>) -> Option<Vec<LinCmp>> {
    if guard.is_false() {
        return if d.is_false() { Some(Vec::new()) } else { None };
    }
    let (disc, cmps) = split(guard, env.cont)?;
    // Hidden variables that a guard binding mentions on its right-hand side
    // and that the store leaves open act as match placeholders.
    let mut placeholders = BTreeSet::new();
    for t in disc.bindings().values() {
        t.collect_vars(&mut placeholders);
    }
    placeholders.retain(|v| env.hidden.contains(v) && !d.bindings().contains_key(v));
    if entails(d, &disc, &placeholders) {
        Some(cmps)
    } else {
        None
    }
}

fn value_at(cont: &Cont, x: &str, t: &Rational) -> Rational {
    let (v, a) = &cont[x];
    v + a * t
}

fn all_hold(atoms: &[LinCmp], cont: &Cont, t: &Rational) -> bool {
    atoms.iter().all(|c| holds(c.op, &value_at(cont, &c.var, t), &c.bound))
}

fn satisfied(guard: &Constraint, d: &Constraint, env: &Env<'_>) -> bool {
    match entailed_part(guard, d, env) {
        Some(cmps) => all_hold(&cmps, env.cont, &Rational::zero()),
        None => false,
    }
}

fn eval(e: &LinExpr, d: &Constraint) -> Option<Rational> {
    let mut sum = e.constant.clone();
    for (c, v) in &e.terms {
        match d.resolve(&Term::Var(v.clone())) {
            Term::Num(q) => sum += c * q,
            _ => return None,
        }
    }
    Some(sum)
}

fn finished(a: &Agent) -> bool {
    match a {
        Agent::Stop => true,
        Agent::Parallel(l, r) => finished(l) && finished(r),
        Agent::Hide { body, .. } => finished(body),
        _ => false,
    }
}

/// Times in `(0, inf)` where some atom changes truth value, sorted.
fn critical_times(atoms: &[LinCmp], cont: &Cont) -> Vec<Rational> {
    let mut ts = BTreeSet::new();
    for c in atoms {
        let (v, a) = &cont[&c.var];
        if !a.is_zero() {
            let t = (&c.bound - v) / a;
            if t > Rational::zero() {
                ts.insert(t);
            }
        }
    }
    ts.into_iter().collect()
}

/// One sample per piece of `[0, inf)` cut at `ts`, paired with the left end
/// of its piece and whether the piece is a single point.
fn pieces(ts: &[Rational]) -> Vec<(Rational, Rational, bool)> {
    let two = int(2);
    let mut out = vec![(Rational::zero(), Rational::zero(), true)];
    let mut prev = Rational::zero();
    for t in ts {
        out.push(((&prev + t) / &two, prev.clone(), false));
        out.push((t.clone(), t.clone(), true));
        prev = t.clone();
    }
    out.push((&prev + int(1), prev, false));
    out
}

/// End of the stretch from 0 where all atoms hold: `None` if they do not
/// hold at 0, `Some(None)` if they hold forever.
fn holds_until(atoms: &[LinCmp], cont: &Cont) -> Option<Option<Rational>> {
    let ps = pieces(&critical_times(atoms, cont));
    if !all_hold(atoms, cont, &ps[0].0) {
        return None;
    }
    for (sample, start, _) in ps.iter().skip(1) {
        if !all_hold(atoms, cont, sample) {
            return Some(Some(start.clone()));
        }
    }
    Some(None)
}

/// Infimum of the times in `(0, inf)` at which all atoms hold.
fn first_after_zero(atoms: &[LinCmp], cont: &Cont) -> Option<Rational> {
    let ps = pieces(&critical_times(atoms, cont));
    ps.iter().skip(1).find(|(sample, _, _)| all_hold(atoms, cont, sample)).map(|(_, start, _)| start.clone())
}

impl<'p> Oracle<'p> {
    pub fn new(program: &'p Program, horizon: Rational) -> Self {
        Oracle { program, horizon }
    }

    fn moves(&self, a: &Agent, d: &Constraint, env: &Env<'_>) -> Vec<Move> {
        let unchanged = |agent: Agent| Move { agent, store: d.clone(), changes: Vec::new() };
        match a {
            Agent::Stop => vec![],
            Agent::Tell(c) => {
                let c = c.instantiate_random(&mut |lo, _| lo.clone());
                vec![Move { agent: Agent::Stop, store: conj(d, &c), changes: Vec::new() }]
            }
            Agent::Parallel(l, r) => {
                let ml = self.moves(l, d, env);
                let mr = self.moves(r, d, env);
                if ml.is_empty() {
                    return mr.into_iter().map(|m| Move { agent: Agent::par((**l).clone(), m.agent), ..m }).collect();
                }
                if mr.is_empty() {
                    return ml.into_iter().map(|m| Move { agent: Agent::par(m.agent, (**r).clone()), ..m }).collect();
                }
                let mut out = Vec::new();
                for x in &ml {
                    for y in &mr {
                        let mut changes = x.changes.clone();
                        changes.extend(y.changes.iter().cloned());
                        out.push(Move {
                            agent: Agent::par(x.agent.clone(), y.agent.clone()),
                            store: conj(&x.store, &y.store),
                            changes,
                        });
                    }
                }
                out
            }
            Agent::Hide { vars, body, local } => {
                let inner = conj(local, &hide_all(d, vars));
                let mut hidden = env.hidden.clone();
                hidden.extend(vars.iter().cloned());
                let env_in = Env { cont: env.cont, hidden };
                self.moves(body, &inner, &env_in)
                    .into_iter()
                    .map(|m| Move {
                        store: conj(d, &hide_all(&m.store, vars)),
                        agent: Agent::Hide { vars: vars.clone(), body: Box::new(m.agent), local: m.store },
                        changes: m.changes,
                    })
                    .collect()
            }
            Agent::Choice { asks, .. } => {
                asks.iter().filter(|b| satisfied(&b.guard, d, env)).map(|b| unchanged(b.body.clone())).collect()
            }
            Agent::Now { guard, then, otherwise } => {
                let branch = if satisfied(guard, d, env) { then } else { otherwise };
                let ms = self.moves(branch, d, env);
                if ms.is_empty() {
                    vec![unchanged((**branch).clone())]
                } else {
                    ms
                }
            }
            Agent::Call { name, args } => self
                .program
                .declarations
                .iter()
                .filter(|decl| decl.name == *name && decl.params.len() == args.len())
                .map(|decl| unchanged(decl.instantiate(args)))
                .collect(),
            Agent::Change { var, value, flow } => {
                let value = match value {
                    Update::Keep => None,
                    Update::Set(e) => match eval(e, d) {
                        Some(q) => Some(q),
                        None => return vec![],
                    },
                };
                let rate = match flow {
                    Update::Keep => None,
                    Update::Set(f) => {
                        assert!(f.coef.is_zero(), "the oracle only handles constant-rate flows");
                        match eval(&f.constant, d) {
                            Some(q) => Some(q),
                            None => return vec![],
                        }
                    }
                };
                if (value.is_none() || rate.is_none()) && !env.cont.contains_key(var) {
                    return vec![];
                }
                vec![Move { agent: Agent::Stop, store: d.clone(), changes: vec![(var.clone(), value, rate)] }]
            }
        }
    }

    /// Waiting guards and invariant groups of a configuration that cannot
    /// move discretely.
    fn watched(
        &self,
        a: &Agent,
        d: &Constraint,
        env: &Env<'_>,
        guards: &mut Vec<Vec<LinCmp>>,
        groups: &mut Vec<Vec<Vec<LinCmp>>>,
    ) {
        match a {
            Agent::Parallel(l, r) => {
                self.watched(l, d, env, guards, groups);
                self.watched(r, d, env, guards, groups);
            }
            Agent::Hide { vars, body, local } => {
                let inner = conj(local, &hide_all(d, vars));
                let mut hidden = env.hidden.clone();
                hidden.extend(vars.iter().cloned());
                self.watched(body, &inner, &Env { cont: env.cont, hidden }, guards, groups);
            }
            Agent::Choice { asks, conts } => {
                for b in asks {
                    if let Some(cmps) = entailed_part(&b.guard, d, env) {
                        if !cmps.is_empty() {
                            guards.push(cmps);
                        }
                    }
                }
                if !conts.is_empty() {
                    groups.push(conts.iter().filter_map(|inv| entailed_part(inv, d, env)).collect());
                }
            }
            _ => {}
        }
    }

    /// Delay of the continuous step, or `None` when time cannot pass.
    fn delay(&self, a: &Agent, d: &Constraint, cont: &Cont) -> Option<Rational> {
        let env = Env { cont, hidden: BTreeSet::new() };
        let mut guards = Vec::new();
        let mut groups = Vec::new();
        self.watched(a, d, &env, &mut guards, &mut groups);
        if guards.is_empty() && groups.is_empty() {
            return None;
        }
        let mut tau = self.horizon.clone();
        for g in &guards {
            if all_hold(g, cont, &Rational::zero()) {
                continue;
            }
            if let Some(t) = first_after_zero(g, cont) {
                if t > Rational::zero() && t < tau {
                    tau = t;
                }
            }
        }
        for group in &groups {
            let mut until: Option<Option<Rational>> = None;
            for inv in group {
                if let Some(end) = holds_until(inv, cont) {
                    until = Some(match (until, end) {
                        (None, e) => e,
                        (Some(None), _) | (_, None) => None,
                        (Some(Some(x)), Some(y)) => Some(x.max(y)),
                    });
                }
            }
            match until {
                None => return None,
                Some(None) => {}
                Some(Some(t)) => {
                    if t.is_zero() {
                        return None;
                    }
                    if t < tau {
                        tau = t;
                    }
                }
            }
        }
        Some(tau)
    }

    pub fn successors(&self, cfg: &Configuration) -> Vec<Configuration> {
        let mut cont: Cont = BTreeMap::new();
        for (x, e) in cfg.cont.entries() {
            let v = e.value.as_exact().expect("exact values").clone();
            assert!(e.flow.b.is_zero(), "the oracle only handles constant-rate flows");
            cont.insert(x.clone(), (v, e.flow.a.clone()));
        }
        let env = Env { cont: &cont, hidden: BTreeSet::new() };
        let moves = self.moves(&cfg.agent, &cfg.store, &env);
        if !moves.is_empty() {
            return moves
                .into_iter()
                .map(|m| {
                    let mut next = cont.clone();
                    for (x, value, rate) in m.changes {
                        let old = next.get(&x).cloned();
                        let v = value.or_else(|| old.as_ref().map(|o| o.0.clone())).expect("checked above");
                        let a = rate.or_else(|| old.as_ref().map(|o| o.1.clone())).expect("checked above");
                        next.insert(x, (v, a));
                    }
                    Configuration { agent: m.agent, store: m.store, cont: build(&next), clock: cfg.clock.clone() }
                })
                .collect();
        }
        if finished(&cfg.agent) {
            return vec![];
        }
        let Some(tau) = self.delay(&cfg.agent, &cfg.store, &cont) else { return vec![] };
        let moved: Cont = cont.iter().map(|(x, (v, a))| (x.clone(), (v + a * &tau, a.clone()))).collect();
        let clock = match &cfg.clock {
            Real::Exact(c) => Real::Exact(c + &tau),
            Real::Approx(_) => unreachable!("exact clocks only"),
        };
        vec![Configuration { agent: cfg.agent.clone(), store: cfg.store.clone(), cont: build(&moved), clock }]
    }

    /// Keys of every configuration reachable in at most `depth` steps.
    pub fn reachable(&self, depth: usize) -> BTreeSet<String> {
        let init = Configuration::initial(self.program);
        let mut seen = BTreeSet::from([init.key()]);
        let mut layer = vec![init];
        for _ in 0..depth {
            let mut next = Vec::new();
            for cfg in &layer {
                for s in self.successors(cfg) {
                    if seen.insert(s.key()) {
                        next.push(s);
                    }
                }
            }
            layer = next;
        }
        seen
    }
}

fn build(cont: &Cont) -> ContinuousStore {
    let mut s = ContinuousStore::new();
    for (x, (v, a)) in cont {
        s.insert(x, Real::Exact(v.clone()), Flow::constant(a.clone()));
    }
    s
}
