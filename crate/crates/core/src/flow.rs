//! Continuous variables: values, affine flows `x' = a + b*x`, closed-form
//! evolution, and earliest-event computation for comparisons over them.
//!
//! Every one-dimensional affine trajectory is monotone (its derivative is
//! `(a + b*x0) * e^(b*t)`, which never changes sign), so the set of times at
//! which a comparison holds is a union of at most two intervals and only
//! interval endpoints ever need to be checked.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use num_traits::Zero;

use crate::constraint::{LinCmp, Name, FLOAT_TOLERANCE};
use crate::num::{rat_to_f64, Rational, Real};

/// `x' = a + b*x`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Flow {
    pub a: Rational,
    pub b: Rational,
}

impl Flow {
    pub fn new(a: Rational, b: Rational) -> Self {
        Flow { a, b }
    }

    pub fn constant(a: Rational) -> Self {
        Flow { a, b: Rational::zero() }
    }

    pub fn is_linear(&self) -> bool {
        self.b.is_zero()
    }

    /// Derivative at value `v`.
    fn slope_at(&self, v: &Real) -> Real {
        &Real::Exact(self.a.clone()) + &(&Real::Exact(self.b.clone()) * v)
    }
}

impl fmt::Display for Flow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = crate::num::fmt_rational(&self.a);
        if self.b < Rational::zero() {
            write!(f, "{}-{}*x", a, crate::num::fmt_rational(&-self.b.clone()))
        } else {
            write!(f, "{}+{}*x", a, crate::num::fmt_rational(&self.b))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Entry {
    pub value: Real,
    pub flow: Flow,
}

/// A value or flow component of a `change`, or `_` to keep the current one.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Update<T> {
    Keep,
    Set(T),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FlowError {
    KeepOnMissing(Name),
}

impl fmt::Display for FlowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlowError::KeepOnMissing(x) => write!(f, "`_` used for continuous variable `{}` before it has a value", x),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContinuousStore {
    entries: BTreeMap<Name, Entry>,
}

impl ContinuousStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, x: &str) -> Option<&Entry> {
        self.entries.get(x)
    }

    pub fn contains(&self, x: &str) -> bool {
        self.entries.contains_key(x)
    }

    pub fn entries(&self) -> &BTreeMap<Name, Entry> {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, x: &str, value: Real, flow: Flow) {
        self.entries.insert(x.into(), Entry { value, flow });
    }

    pub fn snapshot(&self) -> BTreeMap<Name, Real> {
        self.entries.iter().map(|(k, e)| (k.clone(), e.value.clone())).collect()
    }

    /// The `⊕ (x, v, f)` update.
    pub fn apply_change(
        &self,
        x: &str,
        value: &Update<Rational>,
        flow: &Update<Flow>,
    ) -> Result<ContinuousStore, FlowError> {
        let prev = self.entries.get(x);
        let value = match (value, prev) {
            (Update::Set(v), _) => Real::Exact(v.clone()),
            (Update::Keep, Some(e)) => e.value.clone(),
            (Update::Keep, None) => return Err(FlowError::KeepOnMissing(x.into())),
        };
        let flow = match (flow, prev) {
            (Update::Set(f), _) => f.clone(),
            (Update::Keep, Some(e)) => e.flow.clone(),
            (Update::Keep, None) => return Err(FlowError::KeepOnMissing(x.into())),
        };
        let mut out = self.clone();
        out.entries.insert(x.into(), Entry { value, flow });
        Ok(out)
    }

    /// Values after a delay `t`; flows are unchanged.
    pub fn evolve(&self, t: &Real) -> ContinuousStore {
        let entries = self
            .entries
            .iter()
            .map(|(k, e)| (k.clone(), Entry { value: solve_flow(&e.value, &e.flow, t), flow: e.flow.clone() }))
            .collect();
        ContinuousStore { entries }
    }
}

/// Closed-form solution of `x' = a + b*x`, `x(0) = v0`, at time `t`.
/// Exact when `b = 0` and the inputs are exact.
pub fn solve_flow(v0: &Real, f: &Flow, t: &Real) -> Real {
    if t.is_zero() {
        return v0.clone();
    }
    if f.b.is_zero() {
        return v0 + &(&Real::Exact(f.a.clone()) * t);
    }
    if let Real::Exact(q) = v0 {
        // Equilibrium: the trajectory is constant.
        if (&f.a + &f.b * q).is_zero() {
            return v0.clone();
        }
    }
    let a = rat_to_f64(&f.a);
    let b = rat_to_f64(&f.b);
    let shift = a / b;
    Real::Approx((v0.to_f64() + shift) * libm::exp(b * t.to_f64()) - shift)
}

/// One interval of `[0, inf)`; `hi = None` is unbounded.
#[derive(Clone, Debug, PartialEq)]
pub struct Interval {
    pub lo: Real,
    pub lo_closed: bool,
    pub hi: Option<Real>,
    pub hi_closed: bool,
}

impl Interval {
    fn all() -> Self {
        Interval { lo: Real::zero(), lo_closed: true, hi: None, hi_closed: false }
    }

    fn point(t: Real) -> Self {
        Interval { lo: t.clone(), lo_closed: true, hi: Some(t), hi_closed: true }
    }

    fn is_empty(&self) -> bool {
        match &self.hi {
            None => false,
            Some(h) => match self.lo.cmp_value(h) {
                Ordering::Greater => true,
                Ordering::Equal => !(self.lo_closed && self.hi_closed),
                Ordering::Less => false,
            },
        }
    }

    pub fn contains(&self, t: &Real) -> bool {
        let lo_ok = match t.cmp_value(&self.lo) {
            Ordering::Greater => true,
            Ordering::Equal => self.lo_closed,
            Ordering::Less => false,
        };
        let hi_ok = match &self.hi {
            None => true,
            Some(h) => match t.cmp_value(h) {
                Ordering::Less => true,
                Ordering::Equal => self.hi_closed,
                Ordering::Greater => false,
            },
        };
        lo_ok && hi_ok
    }

    fn intersect(&self, other: &Interval) -> Interval {
        let (lo, lo_closed) = match self.lo.cmp_value(&other.lo) {
            Ordering::Greater => (self.lo.clone(), self.lo_closed),
            Ordering::Less => (other.lo.clone(), other.lo_closed),
            Ordering::Equal => (self.lo.clone(), self.lo_closed && other.lo_closed),
        };
        let (hi, hi_closed) = match (&self.hi, &other.hi) {
            (None, None) => (None, false),
            (Some(h), None) => (Some(h.clone()), self.hi_closed),
            (None, Some(h)) => (Some(h.clone()), other.hi_closed),
            (Some(a), Some(b)) => match a.cmp_value(b) {
                Ordering::Less => (Some(a.clone()), self.hi_closed),
                Ordering::Greater => (Some(b.clone()), other.hi_closed),
                Ordering::Equal => (Some(a.clone()), self.hi_closed && other.hi_closed),
            },
        };
        Interval { lo, lo_closed, hi, hi_closed }
    }
}

/// The set of times in `[0, inf)` at which a condition holds, as sorted
/// disjoint intervals.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthSet(pub Vec<Interval>);

impl TruthSet {
    pub fn always() -> Self {
        TruthSet(vec![Interval::all()])
    }

    pub fn never() -> Self {
        TruthSet(Vec::new())
    }

    pub fn contains(&self, t: &Real) -> bool {
        self.0.iter().any(|i| i.contains(t))
    }

    pub fn intersect(&self, other: &TruthSet) -> TruthSet {
        let mut out = Vec::new();
        for a in &self.0 {
            for b in &other.0 {
                let i = a.intersect(b);
                if !i.is_empty() {
                    out.push(i);
                }
            }
        }
        out.sort_by(|x, y| x.lo.cmp_value(&y.lo).then((!x.lo_closed).cmp(&!y.lo_closed)));
        TruthSet(out)
    }

    /// The supremum of the connected stretch starting at 0, if 0 is in the set.
    /// `Some(None)` means the condition holds forever.
    pub fn holds_until(&self) -> Option<Option<Real>> {
        let zero = Real::zero();
        self.0.iter().find(|i| i.contains(&zero)).map(|i| i.hi.clone())
    }

    /// Infimum of the set restricted to `(0, inf)`.
    pub fn first_after_zero(&self) -> Option<Real> {
        let zero = Real::zero();
        for i in &self.0 {
            let lo_positive = i.lo.cmp_value(&zero) == Ordering::Greater;
            if lo_positive {
                return Some(i.lo.clone());
            }
            let extends = match &i.hi {
                None => true,
                Some(h) => h.cmp_value(&zero) == Ordering::Greater,
            };
            if extends {
                return Some(zero);
            }
        }
        None
    }
}

/// Where a monotone trajectory meets `bound`: `None` if it never does.
fn hitting_time(v0: &Real, f: &Flow, bound: &Rational) -> Option<Real> {
    let bound_r = Real::Exact(bound.clone());
    if near(v0, bound) {
        return Some(Real::zero());
    }
    if f.b.is_zero() {
        if f.a.is_zero() {
            return None;
        }
        let t = match v0 {
            Real::Exact(q) => Real::Exact((bound - q) / &f.a),
            Real::Approx(v) => Real::Approx((rat_to_f64(bound) - v) / rat_to_f64(&f.a)),
        };
        return if t.is_positive() { Some(t) } else { None };
    }
    let a = rat_to_f64(&f.a);
    let b = rat_to_f64(&f.b);
    let shift = a / b;
    let r = (rat_to_f64(bound) + shift) / (v0.to_f64() + shift);
    if !r.is_finite() || r <= 0.0 {
        return None;
    }
    let t = libm::log(r) / b;
    if !t.is_finite() || t <= 0.0 {
        return None;
    }
    Some(Real::Approx(refine_crossing(v0, f, &bound_r, t)))
}

/// Guarded bisection around a closed-form crossing estimate, to 1e-12 absolute.
fn refine_crossing(v0: &Real, f: &Flow, bound: &Real, estimate: f64) -> f64 {
    let g = |t: f64| solve_flow(v0, f, &Real::Approx(t)).to_f64() - bound.to_f64();
    let h = (estimate.abs() * 1e-9).max(1e-12);
    let mut lo = (estimate - h).max(0.0);
    let mut hi = estimate + h;
    let (glo, ghi) = (g(lo), g(hi));
    if !(glo.is_finite() && ghi.is_finite()) || glo.signum() == ghi.signum() {
        return estimate;
    }
    let rising = glo < ghi;
    for _ in 0..200 {
        if hi - lo <= 1e-12 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let below = g(mid) < 0.0;
        if below == rising {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn near(v: &Real, bound: &Rational) -> bool {
    match v {
        Real::Exact(q) => q == bound,
        Real::Approx(x) => {
            let b = rat_to_f64(bound);
            (x - b).abs() <= FLOAT_TOLERANCE * b.abs().max(1.0)
        }
    }
}

/// Times at which `cmp` holds along the trajectory of `(v0, f)`.
pub fn atom_truth(v0: &Real, f: &Flow, cmp: &LinCmp) -> TruthSet {
    let slope = f.slope_at(v0);
    let dir = slope.cmp_value(&Real::zero());
    let start = if near(v0, &cmp.bound) { Ordering::Equal } else { v0.cmp_value(&Real::Exact(cmp.bound.clone())) };
    if dir == Ordering::Equal {
        return if cmp.op.holds(start) { TruthSet::always() } else { TruthSet::never() };
    }
    // Sign of x(t) - bound on the pieces [0, t*), {t*}, (t*, inf).
    let hit = match start {
        Ordering::Equal => Some(Real::zero()),
        // Moving away from the bound never reaches it.
        s if s == dir => None,
        _ => hitting_time(v0, f, &cmp.bound),
    };
    let mut pieces: Vec<(Interval, Ordering)> = Vec::new();
    match hit {
        None => pieces.push((Interval::all(), start)),
        Some(t) => {
            if t.is_positive() {
                pieces.push((
                    Interval { lo: Real::zero(), lo_closed: true, hi: Some(t.clone()), hi_closed: false },
                    start,
                ));
            }
            pieces.push((Interval::point(t.clone()), Ordering::Equal));
            pieces.push((Interval { lo: t, lo_closed: false, hi: None, hi_closed: false }, dir));
        }
    }
    let mut out: Vec<Interval> = Vec::new();
    for (iv, sign) in pieces {
        if !cmp.op.holds(sign) {
            continue;
        }
        // Merge with the previous piece when they touch.
        if let Some(last) = out.last_mut() {
            if let Some(h) = &last.hi {
                if h.cmp_value(&iv.lo) == Ordering::Equal && (last.hi_closed || iv.lo_closed) {
                    last.hi = iv.hi.clone();
                    last.hi_closed = iv.hi_closed;
                    continue;
                }
            }
        }
        out.push(iv);
    }
    TruthSet(out)
}

/// Earliest `t >= 0` at which the truth value of `cmp` differs from its value
/// at `t = 0` (as an infimum), or `None` if it never changes.
pub fn crossing_time(v0: &Real, f: &Flow, cmp: &LinCmp) -> Option<Real> {
    let set = atom_truth(v0, f, cmp);
    match set.holds_until() {
        Some(end) => end,
        None => set.0.first().map(|i| i.lo.clone()),
    }
}

/// Truth set of a conjunction of comparisons, `None` if a variable is missing.
pub fn conjunction_truth(atoms: &[LinCmp], store: &ContinuousStore) -> Option<TruthSet> {
    let mut acc = TruthSet::always();
    for c in atoms {
        let e = store.get(&c.var)?;
        acc = acc.intersect(&atom_truth(&e.value, &e.flow, c));
    }
    Some(acc)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DelayCause {
    /// Index into the waiting guards.
    GuardEnables(usize),
    /// Index of the invariant group whose last invariant expires.
    InvariantExpires(usize),
    Horizon,
}

impl fmt::Display for DelayCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DelayCause::GuardEnables(i) => write!(f, "guard_enables:{}", i),
            DelayCause::InvariantExpires(i) => write!(f, "invariant_expires:{}", i),
            DelayCause::Horizon => f.write_str("horizon"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DelayOutcome {
    pub tau: Real,
    pub cause: DelayCause,
}

/// Time cannot pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Timelock {
    /// No invariant of this group holds now.
    NoInvariant(usize),
    /// Invariants hold now but expire immediately (boundary point).
    Boundary(usize),
}

/// Chooses the delay of the next continuous step.
///
/// `invariant_groups` holds, per choice agent with `ask~` branches, the
/// continuous part of each branch invariant whose discrete part is already
/// entailed: time may pass while at least one invariant of every group holds
/// over the closed interval. `waiting_guards` are continuous parts of
/// suspended `ask` branches whose discrete part is entailed. The result is
/// the earliest of guard enabling, group expiry and `horizon`, ties going to
/// guards, then invariants, then the horizon.
pub fn max_delay(
    invariant_groups: &[Vec<Vec<LinCmp>>],
    waiting_guards: &[Vec<LinCmp>],
    store: &ContinuousStore,
    horizon: &Real,
) -> Result<DelayOutcome, Timelock> {
    let zero = Real::zero();
    let mut best: Option<DelayOutcome> = None;
    let consider = |tau: Real, cause: DelayCause, best: &mut Option<DelayOutcome>| {
        let better = match best {
            None => true,
            Some(b) => tau.cmp_value(&b.tau) == Ordering::Less,
        };
        if better {
            *best = Some(DelayOutcome { tau, cause });
        }
    };

    for (i, guard) in waiting_guards.iter().enumerate() {
        let Some(set) = conjunction_truth(guard, store) else { continue };
        if set.contains(&zero) {
            continue;
        }
        if let Some(t) = set.first_after_zero() {
            if t.is_positive() {
                consider(t, DelayCause::GuardEnables(i), &mut best);
            }
        }
    }

    for (g, group) in invariant_groups.iter().enumerate() {
        let mut expiry: Option<Option<Real>> = None;
        for inv in group {
            let Some(set) = conjunction_truth(inv, store) else { continue };
            if let Some(end) = set.holds_until() {
                expiry = Some(match (expiry, end) {
                    (None, e) => e,
                    (Some(None), _) | (_, None) => None,
                    (Some(Some(a)), Some(b)) => Some(a.max_value(b)),
                });
            }
        }
        match expiry {
            None => return Err(Timelock::NoInvariant(g)),
            Some(None) => {}
            Some(Some(t)) => {
                if !t.is_positive() {
                    return Err(Timelock::Boundary(g));
                }
                consider(t, DelayCause::InvariantExpires(g), &mut best);
            }
        }
    }

    consider(horizon.clone(), DelayCause::Horizon, &mut best);
    Ok(best.expect("horizon always considered"))
}
