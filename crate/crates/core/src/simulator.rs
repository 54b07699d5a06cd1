//! The scheduling loop, trace recording and bounded exhaustive exploration.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use sha2::{Digest, Sha256};

use crate::constraint::{Constraint, Name};
use crate::flow::{DelayCause, Entry, Timelock};
use crate::num::{int, Rational, Real};
use crate::random::{LowerBound, Seeded};
use crate::semantics::{continuous_step, ChangeOp, ChoiceRecord, Configuration, Engine, Quiescence};
use crate::syntax::Program;

pub const DEFAULT_DIVERGENCE_BUDGET: usize = 10_000;

/// How one successor is picked when several exist.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Policy {
    /// The first successor in AST order.
    First,
    /// Uniform over the successor list, drawn from the program-wide generator.
    Random,
    /// Bounded exhaustive exploration; `run` follows the first successor.
    Exhaustive { depth: usize },
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::First => f.write_str("first"),
            Policy::Random => f.write_str("random"),
            Policy::Exhaustive { depth } => write!(f, "exhaustive:{}", depth),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub max_time: Rational,
    pub max_steps: usize,
    /// Longest single continuous step.
    pub horizon: Rational,
    pub policy: Policy,
    /// Seeds `random(lo, hi)` and the random policy.
    pub seed: u64,
    /// Consecutive discrete steps allowed at one time point.
    pub divergence_budget: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            max_time: int(36_000),
            max_steps: 1_000_000,
            horizon: int(3_600),
            policy: Policy::First,
            seed: 0,
            divergence_budget: DEFAULT_DIVERGENCE_BUDGET,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TerminalKind {
    AllStop,
    Suspended,
    Timelock,
    InstantDivergence,
    MaxTime,
    MaxSteps,
}

impl TerminalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminalKind::AllStop => "all_stop",
            TerminalKind::Suspended => "suspended",
            TerminalKind::Timelock => "timelock",
            TerminalKind::InstantDivergence => "instant_divergence",
            TerminalKind::MaxTime => "max_time",
            TerminalKind::MaxSteps => "max_steps",
        }
    }

    /// Whether the run ended on a model pathology rather than a limit or
    /// normal completion.
    pub fn is_pathology(self) -> bool {
        matches!(self, TerminalKind::Timelock | TerminalKind::InstantDivergence)
    }
}

impl fmt::Display for TerminalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TraceEvent {
    Discrete {
        t: Real,
        choices: Vec<ChoiceRecord>,
        told: Vec<Constraint>,
        changes: Vec<ChangeOp>,
        /// The continuous store after the step.
        vars: BTreeMap<Name, Entry>,
    },
    Continuous {
        /// Clock at the start of the delay.
        t: Real,
        tau: Real,
        cause: DelayCause,
        start: BTreeMap<Name, Entry>,
        end: BTreeMap<Name, Entry>,
    },
    Terminal {
        t: Real,
        kind: TerminalKind,
        /// Extra information, e.g. which invariant group timelocked.
        detail: Option<String>,
    },
}

impl TraceEvent {
    pub fn clock(&self) -> &Real {
        match self {
            TraceEvent::Discrete { t, .. } | TraceEvent::Continuous { t, .. } | TraceEvent::Terminal { t, .. } => t,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceHeader {
    /// SHA-256 of the pretty-printed program, lowercase hex.
    pub program_sha256: String,
    pub options: RunOptions,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn terminal(&self) -> Option<TerminalKind> {
        match self.events.last() {
            Some(TraceEvent::Terminal { kind, .. }) => Some(*kind),
            _ => None,
        }
    }
}

pub fn program_hash(program: &Program) -> String {
    let digest = Sha256::digest(format!("{}", program).as_bytes());
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        s.push_str(&format!("{:02x}", b));
    }
    s
}

/// Runs the program and returns its trace.
pub fn run(program: &Program, options: &RunOptions) -> Trace {
    run_observed(program, options, &mut |_, _, _| {}).0
}

/// Like [`run`], calling `observe(before, event, after)` for every
/// discrete and continuous event. Also returns the final configuration.
pub fn run_observed(
    program: &Program,
    options: &RunOptions,
    observe: &mut dyn FnMut(&Configuration, &TraceEvent, &Configuration),
) -> (Trace, Configuration) {
    let engine = Engine::new(program);
    let mut rng = Seeded::new(options.seed);
    let mut cfg = Configuration::initial(program);
    let mut events = Vec::new();
    let mut steps = 0usize;
    let mut instant = 0usize;
    let max_time = Real::Exact(options.max_time.clone());

    let (kind, detail) = loop {
        let mut succ = engine.discrete_successors(&cfg, &mut rng);
        if !succ.is_empty() {
            if steps >= options.max_steps {
                break (TerminalKind::MaxSteps, None);
            }
            if instant >= options.divergence_budget {
                break (TerminalKind::InstantDivergence, None);
            }
            let idx = match options.policy {
                Policy::Random => rng.pick(succ.len()),
                Policy::First | Policy::Exhaustive { .. } => 0,
            };
            let s = succ.swap_remove(idx);
            let ev = TraceEvent::Discrete {
                t: cfg.clock.clone(),
                choices: s.choices,
                told: s.told,
                changes: s.changes,
                vars: s.config.cont.entries().clone(),
            };
            observe(&cfg, &ev, &s.config);
            events.push(ev);
            cfg = s.config;
            steps += 1;
            instant += 1;
            continue;
        }
        if cfg.agent.is_stop() {
            break (TerminalKind::AllStop, None);
        }
        if cfg.clock.cmp_value(&max_time) != Ordering::Less {
            // Nothing watched means nothing will ever happen; report that first.
            if engine.watch(&cfg).is_empty() {
                break (TerminalKind::Suspended, None);
            }
            break (TerminalKind::MaxTime, None);
        }
        let remaining = &max_time - &cfg.clock;
        let horizon = Real::Exact(options.horizon.clone()).min_value(remaining);
        match engine.quiescence(&cfg, &horizon) {
            Err(Quiescence::AllStop) => break (TerminalKind::AllStop, None),
            Err(Quiescence::Suspended) => break (TerminalKind::Suspended, None),
            Err(Quiescence::InstantDivergence) => break (TerminalKind::InstantDivergence, None),
            Err(Quiescence::Timelock(t)) => {
                let detail = match t {
                    Timelock::NoInvariant(g) => format!("no invariant of group {} holds", g),
                    Timelock::Boundary(g) => format!("invariants of group {} expire immediately", g),
                };
                break (TerminalKind::Timelock, Some(detail));
            }
            Ok((_, outcome)) => {
                let next = continuous_step(&cfg, &outcome.tau);
                let ev = TraceEvent::Continuous {
                    t: cfg.clock.clone(),
                    tau: outcome.tau,
                    cause: outcome.cause,
                    start: cfg.cont.entries().clone(),
                    end: next.cont.entries().clone(),
                };
                observe(&cfg, &ev, &next);
                events.push(ev);
                cfg = next;
                instant = 0;
            }
        }
    };
    events.push(TraceEvent::Terminal { t: cfg.clock.clone(), kind, detail });
    let header = TraceHeader { program_sha256: program_hash(program), options: options.clone() };
    (Trace { header, events }, cfg)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExploreOptions {
    pub depth: usize,
    /// Extra delays sampled evenly inside `(0, tau)` for each continuous step.
    pub time_samples: usize,
    pub horizon: Rational,
    /// Exploration stops, flagged incomplete, beyond this many states.
    pub state_cap: usize,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        ExploreOptions { depth: 5, time_samples: 0, horizon: int(3_600), state_cap: 100_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReachabilityReport {
    pub depth: usize,
    pub complete: bool,
    /// Reachable configurations keyed by [`Configuration::key`].
    pub states: BTreeMap<String, Configuration>,
}

/// All one-step successors used by the explorer: the discrete successors
/// if any exist, otherwise continuous steps of the earliest-event delay and
/// of the sampled shorter delays. `random` draws its lower bound.
pub fn explore_successors(engine: &Engine<'_>, cfg: &Configuration, opts: &ExploreOptions) -> Vec<Configuration> {
    let succ = engine.discrete_successors(cfg, &mut LowerBound);
    if !succ.is_empty() {
        return succ.into_iter().map(|s| s.config).collect();
    }
    let Ok((_, outcome)) = engine.quiescence(cfg, &Real::Exact(opts.horizon.clone())) else {
        return Vec::new();
    };
    let n = opts.time_samples as i64;
    let mut out = Vec::with_capacity(opts.time_samples + 1);
    for k in 1..=n {
        let frac = Real::Exact(Rational::new(k.into(), (n + 1).into()));
        out.push(continuous_step(cfg, &(&frac * &outcome.tau)));
    }
    out.push(continuous_step(cfg, &outcome.tau));
    out
}

/// Breadth-first reachability up to `depth` steps.
pub fn explore(program: &Program, opts: &ExploreOptions) -> ReachabilityReport {
    let engine = Engine::new(program);
    let init = Configuration::initial(program);
    let mut states = BTreeMap::new();
    states.insert(init.key(), init.clone());
    let mut frontier = alloc::vec![init];
    let mut complete = true;
    'outer: for _ in 0..opts.depth {
        let mut next = Vec::new();
        for cfg in &frontier {
            for s in explore_successors(&engine, cfg, opts) {
                let k = s.key();
                if !states.contains_key(&k) {
                    if states.len() >= opts.state_cap {
                        complete = false;
                        break 'outer;
                    }
                    states.insert(k, s.clone());
                    next.push(s);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    ReachabilityReport { depth: opts.depth, complete, states }
}
