//! The transition engine over configurations `<A, c, c~>` plus a clock.
//!
//! Discrete steps implement tell, choice, the four `now` rules, maximally
//! parallel composition, hiding with a local store, call unfolding and
//! `change`. Time passes only when no discrete step is enabled anywhere.
//! Stop, suspended choices and stuck `change` agents idle through time;
//! choices with `ask~` branches constrain how long.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::constraint::{conj, entails, eval_cont_atoms, hide_all, Constraint, LinCmp, Name, Term};
use crate::flow::{max_delay, ContinuousStore, DelayOutcome, Flow, Timelock, Update};
use crate::num::{Rational, Real};
use crate::random::Draw;
use crate::syntax::{Agent, Branch, LinExpr, Program};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Configuration {
    pub agent: Agent,
    pub store: Constraint,
    pub cont: ContinuousStore,
    pub clock: Real,
}

impl Configuration {
    pub fn initial(program: &Program) -> Self {
        Configuration {
            agent: program.initial.clone(),
            store: Constraint::truth(),
            cont: ContinuousStore::new(),
            clock: Real::zero(),
        }
    }

    /// The configuration with hidden discrete variables renamed `_0, _1, ...`
    /// in pre-order. Continuous variables keep their names since the
    /// continuous store is keyed by them.
    pub fn canonical(&self) -> Configuration {
        let mut k = 0usize;
        Configuration {
            agent: canon_agent(&self.agent, &self.cont, &mut k),
            store: self.store.resolved(),
            cont: self.cont.clone(),
            clock: self.clock.clone(),
        }
    }

    /// A string identifying the configuration up to hidden-variable renaming.
    pub fn key(&self) -> String {
        let c = self.canonical();
        let mut s = format!("{} @ {} @ ", c.agent, c.store);
        for (x, e) in c.cont.entries() {
            s.push_str(&format!("{}={:?}:{};", x, e.value, e.flow));
        }
        s.push_str(&format!(" @ {:?}", c.clock));
        s
    }
}

fn canon_agent(a: &Agent, cont: &ContinuousStore, k: &mut usize) -> Agent {
    match a {
        Agent::Hide { vars, body, local } => {
            let mut map = BTreeMap::new();
            for v in vars {
                if !cont.contains(v) {
                    map.insert(v.clone(), format!("_{}", *k));
                    *k += 1;
                }
            }
            let vars: Vec<Name> = vars.iter().map(|v| map.get(v).cloned().unwrap_or_else(|| v.clone())).collect();
            let body = body.substitute(&map);
            let local = local.rename(&map).resolved();
            Agent::Hide { vars, body: Box::new(canon_agent(&body, cont, k)), local }
        }
        Agent::Parallel(l, r) => {
            let l = canon_agent(l, cont, k);
            Agent::par(l, canon_agent(r, cont, k))
        }
        Agent::Choice { asks, conts } => Agent::Choice {
            asks: asks.iter().map(|b| Branch { guard: b.guard.clone(), body: canon_agent(&b.body, cont, k) }).collect(),
            conts: conts.clone(),
        },
        Agent::Now { guard, then, otherwise } => {
            let then = canon_agent(then, cont, k);
            Agent::Now {
                guard: guard.clone(),
                then: Box::new(then),
                otherwise: Box::new(canon_agent(otherwise, cont, k)),
            }
        }
        other => other.clone(),
    }
}

/// A nondeterministic pick made during a step: which ask branch, or which
/// of several matching declarations.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChoiceRecord {
    /// Path from the root: 0/1 for parallel sides, 0 into a hide body,
    /// 0/1 for the then/else branch of `now`.
    pub site: Vec<u32>,
    pub picked: usize,
    pub alternatives: usize,
}

/// A resolved `change` applied by a step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChangeOp {
    pub var: Name,
    pub value: Update<Rational>,
    pub flow: Update<Flow>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Successor {
    pub config: Configuration,
    pub choices: Vec<ChoiceRecord>,
    /// Told constraints with `random` terms already drawn.
    pub told: Vec<Constraint>,
    /// Applied left to right; a later change to the same variable wins.
    pub changes: Vec<ChangeOp>,
}

/// What a quiescent configuration lets time pass under.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Watch {
    /// Per choice with `ask~` branches: the continuous parts of the
    /// invariants whose discrete part is entailed.
    pub groups: Vec<Vec<Vec<LinCmp>>>,
    /// Continuous parts of suspended ask guards whose discrete part is entailed.
    pub guards: Vec<Vec<LinCmp>>,
}

impl Watch {
    pub fn is_empty(&self) -> bool {
        self.groups.is_empty() && self.guards.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Quiescence {
    AllStop,
    /// Nothing can step and no continuous evolution is watched.
    Suspended,
    Timelock(Timelock),
    InstantDivergence,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepResult {
    Discrete(Successor),
    Continuous { next: Configuration, tau: Real, outcome: DelayOutcome },
    Quiescent(Quiescence),
}

/// One step of a component: the new agent and the full store it sees.
#[derive(Clone)]
struct Local {
    agent: Agent,
    store: Constraint,
    choices: Vec<ChoiceRecord>,
    told: Vec<Constraint>,
    changes: Vec<ChangeOp>,
}

impl Local {
    fn plain(agent: Agent, store: Constraint) -> Self {
        Local { agent, store, choices: Vec::new(), told: Vec::new(), changes: Vec::new() }
    }
}

struct Scope<'a> {
    cont: &'a ContinuousStore,
    snapshot: &'a BTreeMap<Name, Real>,
    hidden: BTreeSet<Name>,
}

impl Scope<'_> {
    fn is_continuous(&self, x: &str) -> bool {
        self.cont.contains(x)
    }
}

/// Hidden variables, unbound in `view`, that occur inside the right-hand
/// sides of guard bindings. These are one-way match placeholders.
fn guard_locals(guard: &Constraint, view: &Constraint, hidden: &BTreeSet<Name>) -> BTreeSet<Name> {
    let mut inner = BTreeSet::new();
    for t in guard.bindings().values() {
        t.collect_vars(&mut inner);
    }
    inner.retain(|v| hidden.contains(v) && !view.bindings().contains_key(v));
    inner
}

/// Splits a guard and checks its discrete part. Returns the continuous
/// atoms when the discrete part is entailed.
fn discrete_part_entailed(guard: &Constraint, view: &Constraint, scope: &Scope<'_>) -> Option<Vec<LinCmp>> {
    let (disc, cont) = guard.split_continuous(|x| scope.is_continuous(x))?;
    let locals = guard_locals(&disc, view, &scope.hidden);
    if entails(view, &disc, &locals) {
        Some(cont)
    } else {
        None
    }
}

fn guard_holds(guard: &Constraint, view: &Constraint, scope: &Scope<'_>) -> bool {
    match discrete_part_entailed(guard, view, scope) {
        Some(cont) => eval_cont_atoms(cont.iter(), scope.snapshot) == Ok(true),
        None => false,
    }
}

fn eval_lin(e: &LinExpr, view: &Constraint) -> Option<Rational> {
    let mut acc = e.constant.clone();
    for (c, v) in &e.terms {
        match view.resolve(&Term::Var(v.clone())) {
            Term::Num(q) => acc += c * q,
            _ => return None,
        }
    }
    Some(acc)
}

/// The transition relation of one program.
#[derive(Clone, Copy)]
pub struct Engine<'p> {
    program: &'p Program,
}

impl<'p> Engine<'p> {
    pub fn new(program: &'p Program) -> Self {
        Engine { program }
    }

    pub fn program(&self) -> &'p Program {
        self.program
    }

    /// All configurations reachable in one discrete step, in AST order.
    /// `random` terms are drawn from `draw`.
    pub fn discrete_successors(&self, cfg: &Configuration, draw: &mut dyn Draw) -> Vec<Successor> {
        let snapshot = cfg.cont.snapshot();
        let scope = Scope { cont: &cfg.cont, snapshot: &snapshot, hidden: BTreeSet::new() };
        let mut path = Vec::new();
        self.step(&cfg.agent, &cfg.store, &scope, &mut path, draw)
            .into_iter()
            .map(|l| {
                let mut cont = cfg.cont.clone();
                for op in &l.changes {
                    if let Ok(next) = cont.apply_change(&op.var, &op.value, &op.flow) {
                        cont = next;
                    }
                }
                Successor {
                    config: Configuration { agent: l.agent, store: l.store, cont, clock: cfg.clock.clone() },
                    choices: l.choices,
                    told: l.told,
                    changes: l.changes,
                }
            })
            .collect()
    }

    /// Executes `body` under `local /\ exists vars. d`. Each result holds
    /// the new body, the new local store and the increment `exists vars. l'`
    /// to conjoin into `d`.
    pub fn hide_step(
        &self,
        local: &Constraint,
        vars: &[Name],
        body: &Agent,
        d: &Constraint,
        cont: &ContinuousStore,
        draw: &mut dyn Draw,
    ) -> Vec<(Agent, Constraint, Constraint)> {
        let snapshot = cont.snapshot();
        let mut hidden = BTreeSet::new();
        hidden.extend(vars.iter().cloned());
        let scope = Scope { cont, snapshot: &snapshot, hidden };
        let view_in = conj(local, &hide_all(d, vars));
        let mut path = vec![0];
        self.step(body, &view_in, &scope, &mut path, draw)
            .into_iter()
            .map(|l| {
                let published = hide_all(&l.store, vars);
                (l.agent, l.store, published)
            })
            .collect()
    }

    fn step(
        &self,
        a: &Agent,
        view: &Constraint,
        scope: &Scope<'_>,
        path: &mut Vec<u32>,
        draw: &mut dyn Draw,
    ) -> Vec<Local> {
        match a {
            Agent::Stop => Vec::new(),
            Agent::Tell(c) => {
                let c = if c.has_random() { c.instantiate_random(&mut |lo, hi| draw.draw(lo, hi)) } else { c.clone() };
                let mut l = Local::plain(Agent::Stop, conj(view, &c));
                l.told.push(c);
                vec![l]
            }
            Agent::Parallel(left, right) => {
                path.push(0);
                let ls = self.step(left, view, scope, path, draw);
                path.pop();
                path.push(1);
                let rs = self.step(right, view, scope, path, draw);
                path.pop();
                match (ls.is_empty(), rs.is_empty()) {
                    (true, true) => Vec::new(),
                    (false, true) => ls
                        .into_iter()
                        .map(|mut l| {
                            l.agent = Agent::par(l.agent, (**right).clone());
                            l
                        })
                        .collect(),
                    (true, false) => rs
                        .into_iter()
                        .map(|mut r| {
                            r.agent = Agent::par((**left).clone(), r.agent);
                            r
                        })
                        .collect(),
                    (false, false) => {
                        let mut out = Vec::with_capacity(ls.len() * rs.len());
                        for l in &ls {
                            for r in &rs {
                                let mut choices = l.choices.clone();
                                choices.extend(r.choices.iter().cloned());
                                let mut told = l.told.clone();
                                told.extend(r.told.iter().cloned());
                                let mut changes = l.changes.clone();
                                changes.extend(r.changes.iter().cloned());
                                out.push(Local {
                                    agent: Agent::par(l.agent.clone(), r.agent.clone()),
                                    store: conj(&l.store, &r.store),
                                    choices,
                                    told,
                                    changes,
                                });
                            }
                        }
                        out
                    }
                }
            }
            Agent::Hide { vars, body, local } => {
                let view_in = conj(local, &hide_all(view, vars));
                let mut hidden = scope.hidden.clone();
                hidden.extend(vars.iter().cloned());
                let inner = Scope { cont: scope.cont, snapshot: scope.snapshot, hidden };
                path.push(0);
                let succ = self.step(body, &view_in, &inner, path, draw);
                path.pop();
                succ.into_iter()
                    .map(|l| {
                        let published = conj(view, &hide_all(&l.store, vars));
                        Local {
                            agent: Agent::Hide { vars: vars.clone(), body: Box::new(l.agent), local: l.store },
                            store: published,
                            choices: l.choices,
                            told: l.told,
                            changes: l.changes,
                        }
                    })
                    .collect()
            }
            Agent::Choice { asks, .. } => asks
                .iter()
                .enumerate()
                .filter(|(_, b)| guard_holds(&b.guard, view, scope))
                .map(|(j, b)| {
                    let mut l = Local::plain(b.body.clone(), view.clone());
                    l.choices.push(ChoiceRecord { site: path.clone(), picked: j, alternatives: asks.len() });
                    l
                })
                .collect(),
            Agent::Now { guard, then, otherwise } => {
                let (chosen, side) = if guard_holds(guard, view, scope) { (then, 0) } else { (otherwise, 1) };
                path.push(side);
                let succ = self.step(chosen, view, scope, path, draw);
                path.pop();
                if succ.is_empty() {
                    vec![Local::plain((**chosen).clone(), view.clone())]
                } else {
                    succ
                }
            }
            Agent::Call { name, args } => {
                let decls: Vec<_> = self.program.lookup(name, args.len()).collect();
                let n = decls.len();
                decls
                    .into_iter()
                    .enumerate()
                    .map(|(k, d)| {
                        let mut l = Local::plain(d.instantiate(args), view.clone());
                        if n > 1 {
                            l.choices.push(ChoiceRecord { site: path.clone(), picked: k, alternatives: n });
                        }
                        l
                    })
                    .collect()
            }
            Agent::Change { var, value, flow } => {
                let value = match value {
                    Update::Keep => Update::Keep,
                    Update::Set(e) => match eval_lin(e, view) {
                        Some(q) => Update::Set(q),
                        None => return Vec::new(),
                    },
                };
                let flow = match flow {
                    Update::Keep => Update::Keep,
                    Update::Set(f) => match eval_lin(&f.constant, view) {
                        Some(a) => Update::Set(Flow::new(a, f.coef.clone())),
                        None => return Vec::new(),
                    },
                };
                let keeps = matches!(value, Update::Keep) || matches!(flow, Update::Keep);
                if keeps && !scope.cont.contains(var) {
                    return Vec::new();
                }
                let mut l = Local::plain(Agent::Stop, view.clone());
                l.changes.push(ChangeOp { var: var.clone(), value, flow });
                vec![l]
            }
        }
    }

    /// Invariant groups and watched guards of a configuration with no
    /// discrete successor.
    pub fn watch(&self, cfg: &Configuration) -> Watch {
        let snapshot = cfg.cont.snapshot();
        let scope = Scope { cont: &cfg.cont, snapshot: &snapshot, hidden: BTreeSet::new() };
        let mut out = Watch::default();
        self.collect_watch(&cfg.agent, &cfg.store, &scope, &mut out);
        out
    }

    fn collect_watch(&self, a: &Agent, view: &Constraint, scope: &Scope<'_>, out: &mut Watch) {
        match a {
            Agent::Parallel(l, r) => {
                self.collect_watch(l, view, scope, out);
                self.collect_watch(r, view, scope, out);
            }
            Agent::Hide { vars, body, local } => {
                let view_in = conj(local, &hide_all(view, vars));
                let mut hidden = scope.hidden.clone();
                hidden.extend(vars.iter().cloned());
                let inner = Scope { cont: scope.cont, snapshot: scope.snapshot, hidden };
                self.collect_watch(body, &view_in, &inner, out);
            }
            Agent::Choice { asks, conts } => {
                for b in asks {
                    if let Some(cont) = discrete_part_entailed(&b.guard, view, scope) {
                        if !cont.is_empty() {
                            out.guards.push(cont);
                        }
                    }
                }
                if !conts.is_empty() {
                    let group = conts.iter().filter_map(|inv| discrete_part_entailed(inv, view, scope)).collect();
                    out.groups.push(group);
                }
            }
            _ => {}
        }
    }

    /// For a configuration with no discrete successor: the watched
    /// conditions and the delay of the next continuous step, or why time
    /// cannot pass.
    pub fn quiescence(&self, cfg: &Configuration, horizon: &Real) -> Result<(Watch, DelayOutcome), Quiescence> {
        if cfg.agent.is_stop() {
            return Err(Quiescence::AllStop);
        }
        let w = self.watch(cfg);
        if w.is_empty() {
            return Err(Quiescence::Suspended);
        }
        match max_delay(&w.groups, &w.guards, &cfg.cont, horizon) {
            Ok(o) => Ok((w, o)),
            Err(t) => Err(Quiescence::Timelock(t)),
        }
    }

    /// One scheduler step: the first discrete successor if any, otherwise a
    /// continuous step of the earliest-event delay.
    pub fn step_first(&self, cfg: &Configuration, horizon: &Real, draw: &mut dyn Draw) -> StepResult {
        let mut succ = self.discrete_successors(cfg, draw);
        if !succ.is_empty() {
            return StepResult::Discrete(succ.swap_remove(0));
        }
        match self.quiescence(cfg, horizon) {
            Ok((_, outcome)) => {
                StepResult::Continuous { next: continuous_step(cfg, &outcome.tau), tau: outcome.tau.clone(), outcome }
            }
            Err(q) => StepResult::Quiescent(q),
        }
    }

    /// Whether more than `budget` consecutive discrete steps (following the
    /// first successor) happen without time advancing.
    pub fn detect_instant_divergence(&self, cfg: &Configuration, budget: usize, draw: &mut dyn Draw) -> bool {
        let mut cur = cfg.clone();
        for _ in 0..=budget {
            let mut succ = self.discrete_successors(&cur, draw);
            if succ.is_empty() {
                return false;
            }
            cur = succ.swap_remove(0).config;
        }
        true
    }
}

/// Lets `tau` time units pass: every continuous variable evolves under its
/// flow, the agent and the discrete store are untouched.
pub fn continuous_step(cfg: &Configuration, tau: &Real) -> Configuration {
    Configuration {
        agent: cfg.agent.clone(),
        store: cfg.store.clone(),
        cont: cfg.cont.evolve(tau),
        clock: &cfg.clock + tau,
    }
}
