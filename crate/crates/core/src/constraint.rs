//! A concrete cylindric constraint system: Herbrand term equations (atoms,
//! numbers, open-ended streams) plus single-variable comparisons against
//! rational constants.
//!
//! Constraints are kept in triangular solved form: alias classes are rooted
//! at their smallest name, every other member is bound to its root, a root
//! is either unbound or bound to a non-variable term whose variables are
//! roots, bindings are acyclic, and comparisons only mention unbound roots.
//! Bound variables may occur inside other bindings, which keeps streams
//! linked to their named tails. [`Constraint::resolved`] gives the fully
//! dereferenced form, which is the same for equivalent wildcard-free
//! constraints.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::num::{fmt_rational, rat_to_f64, Rational, Real};

pub type Name = String;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Var(Name),
    Atom(Name),
    Num(Rational),
    /// The empty stream `[]`.
    Nil,
    Cons(Box<Term>, Box<Term>),
    /// `_`: match-anything in guards; an anonymous existential inside a store.
    Wildcard,
    /// `random(lo, hi)`, only legal inside `tell`; replaced by a drawn number
    /// before the constraint reaches a store.
    Random(Rational, Rational),
}

impl Term {
    pub fn var(name: &str) -> Term {
        Term::Var(name.into())
    }

    pub fn atom(name: &str) -> Term {
        Term::Atom(name.into())
    }

    pub fn cons(head: Term, tail: Term) -> Term {
        Term::Cons(Box::new(head), Box::new(tail))
    }

    pub fn collect_vars(&self, out: &mut BTreeSet<Name>) {
        match self {
            Term::Var(v) => {
                out.insert(v.clone());
            }
            Term::Cons(h, t) => {
                h.collect_vars(out);
                t.collect_vars(out);
            }
            _ => {}
        }
    }

    pub fn mentions(&self, x: &str) -> bool {
        match self {
            Term::Var(v) => v == x,
            Term::Cons(h, t) => h.mentions(x) || t.mentions(x),
            _ => false,
        }
    }

    pub fn has_wildcard(&self) -> bool {
        match self {
            Term::Wildcard => true,
            Term::Cons(h, t) => h.has_wildcard() || t.has_wildcard(),
            _ => false,
        }
    }

    pub fn has_random(&self) -> bool {
        match self {
            Term::Random(..) => true,
            Term::Cons(h, t) => h.has_random() || t.has_random(),
            _ => false,
        }
    }

    /// Applies `f` to every variable name.
    pub fn map_vars(&self, f: &mut impl FnMut(&str) -> Term) -> Term {
        match self {
            Term::Var(v) => f(v),
            Term::Cons(h, t) => Term::cons(h.map_vars(f), t.map_vars(f)),
            other => other.clone(),
        }
    }

    /// Replaces every `random(lo, hi)` with the value produced by `draw`.
    pub fn instantiate_random(&self, draw: &mut impl FnMut(&Rational, &Rational) -> Rational) -> Term {
        match self {
            Term::Random(lo, hi) => Term::Num(draw(lo, hi)),
            Term::Cons(h, t) => Term::cons(h.instantiate_random(draw), t.instantiate_random(draw)),
            other => other.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "\\=",
            CmpOp::Lt => "<",
            CmpOp::Le => "=<",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    /// Whether `ord` (value compared to bound) satisfies the operator.
    pub fn holds(self, ord: Ordering) -> bool {
        match self {
            CmpOp::Eq => ord == Ordering::Equal,
            CmpOp::Ne => ord != Ordering::Equal,
            CmpOp::Lt => ord == Ordering::Less,
            CmpOp::Le => ord != Ordering::Greater,
            CmpOp::Gt => ord == Ordering::Greater,
            CmpOp::Ge => ord != Ordering::Less,
        }
    }
}

/// `var op bound`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LinCmp {
    pub var: Name,
    pub op: CmpOp,
    pub bound: Rational,
}

impl LinCmp {
    pub fn new(var: &str, op: CmpOp, bound: Rational) -> Self {
        LinCmp { var: var.into(), op, bound }
    }

    pub fn holds_exact(&self, value: &Rational) -> bool {
        self.op.holds(value.cmp(&self.bound))
    }

    /// Evaluates against a possibly-approximate value. Floating values get a
    /// relative slack of `FLOAT_TOLERANCE` on `=`, `=<` and `>=` so that a
    /// state reached by stopping at a computed crossing satisfies the guard
    /// that defined the crossing.
    pub fn holds(&self, value: &Real) -> bool {
        match value {
            Real::Exact(q) => self.holds_exact(q),
            Real::Approx(v) => {
                let b = rat_to_f64(&self.bound);
                let eps = FLOAT_TOLERANCE * libm::fabs(b).max(1.0);
                match self.op {
                    CmpOp::Eq => libm::fabs(v - b) <= eps,
                    CmpOp::Ne => libm::fabs(v - b) > eps,
                    CmpOp::Lt => *v < b,
                    CmpOp::Le => *v <= b + eps,
                    CmpOp::Gt => *v > b,
                    CmpOp::Ge => *v >= b - eps,
                }
            }
        }
    }
}

pub const FLOAT_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AtomicConstraint {
    TermEq(Name, Term),
    LinCmp(LinCmp),
}

impl AtomicConstraint {
    pub fn eq(var: &str, term: Term) -> Self {
        AtomicConstraint::TermEq(var.into(), term)
    }

    pub fn cmp(var: &str, op: CmpOp, bound: Rational) -> Self {
        AtomicConstraint::LinCmp(LinCmp::new(var, op, bound))
    }
}

/// A finite conjunction of atomic constraints in triangular solved form.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Constraint {
    bindings: BTreeMap<Name, Term>,
    cmps: BTreeSet<LinCmp>,
    consistent: bool,
}

impl Default for Constraint {
    fn default() -> Self {
        Constraint::truth()
    }
}

impl Constraint {
    pub fn truth() -> Self {
        Constraint { bindings: BTreeMap::new(), cmps: BTreeSet::new(), consistent: true }
    }

    pub fn falsity() -> Self {
        Constraint { bindings: BTreeMap::new(), cmps: BTreeSet::new(), consistent: false }
    }

    pub fn from_atoms<I: IntoIterator<Item = AtomicConstraint>>(atoms: I) -> Self {
        let mut b = Builder::default();
        for a in atoms {
            if b.add_atom(&a).is_err() {
                return Constraint::falsity();
            }
        }
        b.finish()
    }

    pub fn atom(a: AtomicConstraint) -> Self {
        Constraint::from_atoms([a])
    }

    pub fn is_false(&self) -> bool {
        !self.consistent
    }

    pub fn is_true(&self) -> bool {
        self.consistent && self.bindings.is_empty() && self.cmps.is_empty()
    }

    pub fn bindings(&self) -> &BTreeMap<Name, Term> {
        &self.bindings
    }

    pub fn cmps(&self) -> &BTreeSet<LinCmp> {
        &self.cmps
    }

    /// The atoms of the solved form, bindings first.
    pub fn atoms(&self) -> Vec<AtomicConstraint> {
        let mut out: Vec<AtomicConstraint> =
            self.bindings.iter().map(|(k, v)| AtomicConstraint::TermEq(k.clone(), v.clone())).collect();
        out.extend(self.cmps.iter().cloned().map(AtomicConstraint::LinCmp));
        out
    }

    pub fn vars(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        for (k, v) in &self.bindings {
            out.insert(k.clone());
            v.collect_vars(&mut out);
        }
        for c in &self.cmps {
            out.insert(c.var.clone());
        }
        out
    }

    pub fn mentions(&self, x: &str) -> bool {
        self.bindings.iter().any(|(k, v)| k == x || v.mentions(x)) || self.cmps.iter().any(|c| c.var == x)
    }

    pub fn has_wildcard(&self) -> bool {
        self.bindings.values().any(Term::has_wildcard)
    }

    pub fn has_random(&self) -> bool {
        self.bindings.values().any(Term::has_random)
    }

    /// Fully dereferences `t` under this store.
    pub fn resolve(&self, t: &Term) -> Term {
        match t {
            Term::Var(v) => match self.bindings.get(v) {
                Some(b) => self.resolve(b),
                None => t.clone(),
            },
            Term::Cons(h, tl) => Term::cons(self.resolve(h), self.resolve(tl)),
            other => other.clone(),
        }
    }

    /// Whether every atom of `other` literally occurs in `self`, so that
    /// conjoining `other` adds nothing.
    fn contains_atoms_of(&self, other: &Constraint) -> bool {
        other.bindings.len() <= self.bindings.len()
            && other.bindings.iter().all(|(k, v)| self.bindings.get(k) == Some(v))
            && other.cmps.is_subset(&self.cmps)
    }

    /// The same information with every binding fully dereferenced. Used
    /// where equivalent stores must compare equal regardless of how they
    /// were built.
    pub fn resolved(&self) -> Constraint {
        if !self.consistent {
            return self.clone();
        }
        let bindings = self.bindings.iter().map(|(k, v)| (k.clone(), self.resolve(v))).collect();
        Constraint { bindings, cmps: self.cmps.clone(), consistent: true }
    }

    /// Consistently renames variables; used for capture-avoiding substitution
    /// and alpha-normalization. The result is re-normalized.
    pub fn rename(&self, map: &BTreeMap<Name, Name>) -> Constraint {
        if !self.consistent {
            return self.clone();
        }
        let ren = |v: &str| map.get(v).cloned().unwrap_or_else(|| v.into());
        let atoms = self.atoms().into_iter().map(|a| match a {
            AtomicConstraint::TermEq(x, t) => AtomicConstraint::TermEq(ren(&x), t.map_vars(&mut |v| Term::Var(ren(v)))),
            AtomicConstraint::LinCmp(c) => AtomicConstraint::LinCmp(LinCmp { var: ren(&c.var), ..c }),
        });
        Constraint::from_atoms(atoms)
    }

    /// Replaces `random(lo, hi)` terms using `draw`.
    pub fn instantiate_random(&self, draw: &mut impl FnMut(&Rational, &Rational) -> Rational) -> Constraint {
        if !self.has_random() {
            return self.clone();
        }
        let atoms = self.atoms().into_iter().map(|a| match a {
            AtomicConstraint::TermEq(x, t) => AtomicConstraint::TermEq(x, t.instantiate_random(draw)),
            other => other,
        });
        Constraint::from_atoms(atoms)
    }

    /// Splits a guard into its discrete part and the comparisons over
    /// continuous variables (as decided by `is_continuous`). Returns `None`
    /// when the guard equates a continuous variable with a non-number, which
    /// no snapshot can satisfy.
    pub fn split_continuous(&self, is_continuous: impl Fn(&str) -> bool) -> Option<(Constraint, Vec<LinCmp>)> {
        if !self.consistent {
            return Some((self.clone(), Vec::new()));
        }
        let mut discrete = Constraint::truth();
        let mut cont = Vec::new();
        for (k, v) in &self.bindings {
            if is_continuous(k) {
                match v {
                    Term::Num(q) => cont.push(LinCmp { var: k.clone(), op: CmpOp::Eq, bound: q.clone() }),
                    _ => return None,
                }
            } else {
                discrete.bindings.insert(k.clone(), v.clone());
            }
        }
        for c in &self.cmps {
            if is_continuous(&c.var) {
                cont.push(c.clone());
            } else {
                discrete.cmps.insert(c.clone());
            }
        }
        Some((discrete, cont))
    }
}

/// Conjunction. Inconsistency is reported as the `false` constraint.
pub fn conj(c: &Constraint, d: &Constraint) -> Constraint {
    if !c.consistent || !d.consistent {
        return Constraint::falsity();
    }
    if d.is_true() {
        return c.clone();
    }
    if c.is_true() {
        return d.clone();
    }
    if c.contains_atoms_of(d) {
        return c.clone();
    }
    if d.contains_atoms_of(c) {
        return d.clone();
    }
    let mut b = Builder { bindings: c.bindings.clone(), cmps: c.cmps.iter().cloned().collect() };
    for (k, v) in &d.bindings {
        if b.unify(&Term::Var(k.clone()), v).is_err() {
            return Constraint::falsity();
        }
    }
    b.cmps.extend(d.cmps.iter().cloned());
    b.finish()
}

/// Whether `store` entails `guard`, with the variables in `locals` (and every
/// wildcard) acting as one-way match placeholders. Sound but incomplete on
/// comparisons: an unbound variable only entails comparisons it literally
/// carries.
pub fn entails(store: &Constraint, guard: &Constraint, locals: &BTreeSet<Name>) -> bool {
    if !store.consistent {
        return true;
    }
    if !guard.consistent {
        return false;
    }
    let mut m = Matcher { store, locals, assign: BTreeMap::new() };
    for (x, pat) in &guard.bindings {
        let subject = if locals.contains(x) {
            match m.assign.get(x) {
                Some(s) => s.clone(),
                None => {
                    // An unassigned local on the left takes whatever the pattern denotes.
                    let s = store.resolve(pat);
                    m.assign.insert(x.clone(), s);
                    continue;
                }
            }
        } else {
            store.resolve(&Term::Var(x.clone()))
        };
        if !m.matches(&subject, pat) {
            return false;
        }
    }
    for c in &guard.cmps {
        let subject = if locals.contains(&c.var) {
            match m.assign.get(&c.var) {
                Some(s) => s.clone(),
                None => return false,
            }
        } else {
            store.resolve(&Term::Var(c.var.clone()))
        };
        let ok = match subject {
            Term::Num(q) => c.holds_exact(&q),
            Term::Var(r) => store.cmps.contains(&LinCmp { var: r, op: c.op, bound: c.bound.clone() }),
            _ => false,
        };
        if !ok {
            return false;
        }
    }
    true
}

struct Matcher<'a> {
    store: &'a Constraint,
    locals: &'a BTreeSet<Name>,
    assign: BTreeMap<Name, Term>,
}

impl Matcher<'_> {
    fn matches(&mut self, subject: &Term, pat: &Term) -> bool {
        match pat {
            Term::Wildcard => true,
            Term::Var(v) if self.locals.contains(v) => match self.assign.get(v) {
                Some(prev) => prev == subject,
                None => {
                    self.assign.insert(v.clone(), subject.clone());
                    true
                }
            },
            Term::Var(v) => self.store.resolve(&Term::Var(v.clone())) == *subject,
            Term::Cons(ph, pt) => match subject {
                Term::Cons(sh, st) => self.matches(sh, ph) && self.matches(st, pt),
                _ => false,
            },
            Term::Random(..) => false,
            other => subject == other,
        }
    }
}

/// Existential quantification: projects `x` out of `c`. Information about
/// other variables that flowed through `x` is kept by substitution; positions
/// where an unbound `x` occurred become anonymous.
pub fn hide(c: &Constraint, x: &str) -> Constraint {
    if !c.consistent || !c.mentions(x) {
        return c.clone();
    }
    let mut out = c.clone();
    let subst = |bindings: &mut BTreeMap<Name, Term>, by: &Term| {
        for v in bindings.values_mut() {
            if v.mentions(x) {
                *v = v.map_vars(&mut |w| if w == x { by.clone() } else { Term::Var(w.into()) });
            }
        }
    };
    match out.bindings.remove(x) {
        // An alias member: nothing refers to it but itself.
        Some(Term::Var(_)) => out,
        Some(t) => {
            let members: Vec<Name> = out
                .bindings
                .iter()
                .filter(|(_, v)| matches!(v, Term::Var(r) if r == x))
                .map(|(k, _)| k.clone())
                .collect();
            match members.iter().min().cloned() {
                Some(new_root) => {
                    out.bindings.insert(new_root.clone(), t);
                    subst(&mut out.bindings, &Term::Var(new_root));
                }
                None => subst(&mut out.bindings, &t),
            }
            out
        }
        None => {
            let members: Vec<Name> = out
                .bindings
                .iter()
                .filter(|(_, v)| matches!(v, Term::Var(r) if r == x))
                .map(|(k, _)| k.clone())
                .collect();
            match members.iter().min().cloned() {
                Some(new_root) => {
                    out.bindings.remove(&new_root);
                    subst(&mut out.bindings, &Term::Var(new_root.clone()));
                    out.cmps = out
                        .cmps
                        .iter()
                        .map(|cm| if cm.var == x { LinCmp { var: new_root.clone(), ..cm.clone() } } else { cm.clone() })
                        .collect();
                }
                None => {
                    subst(&mut out.bindings, &Term::Wildcard);
                    out.cmps.retain(|cm| cm.var != x);
                }
            }
            out
        }
    }
}

pub fn hide_all<'a, I: IntoIterator<Item = &'a Name>>(c: &Constraint, xs: I) -> Constraint {
    let mut out = c.clone();
    for x in xs {
        out = hide(&out, x);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MissingVariable(pub Name);

impl fmt::Display for MissingVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "continuous variable `{}` has no value", self.0)
    }
}

/// Evaluates comparisons over continuous variables against a snapshot of
/// their current values.
pub fn eval_cont_atoms<'a, I>(atoms: I, snapshot: &BTreeMap<Name, Real>) -> Result<bool, MissingVariable>
where
    I: IntoIterator<Item = &'a LinCmp>,
{
    let mut all = true;
    for c in atoms {
        let v = snapshot.get(&c.var).ok_or_else(|| MissingVariable(c.var.clone()))?;
        all &= c.holds(v);
    }
    Ok(all)
}

/// Same as [`eval_cont_atoms`] but for a guard given as a constraint whose
/// every atom is read as a comparison over continuous variables.
pub fn eval_cont_constraint(guard: &Constraint, snapshot: &BTreeMap<Name, Real>) -> Result<bool, MissingVariable> {
    match guard.split_continuous(|_| true) {
        Some((_, cont)) => eval_cont_atoms(cont.iter(), snapshot),
        None => Ok(false),
    }
}

#[derive(Default)]
struct Builder {
    bindings: BTreeMap<Name, Term>,
    cmps: Vec<LinCmp>,
}

struct Clash;

impl Builder {
    fn add_atom(&mut self, a: &AtomicConstraint) -> Result<(), Clash> {
        match a {
            AtomicConstraint::TermEq(x, t) => self.unify(&Term::Var(x.clone()), t).map(|_| ()),
            AtomicConstraint::LinCmp(c) if c.op == CmpOp::Eq => {
                self.unify(&Term::Var(c.var.clone()), &Term::Num(c.bound.clone())).map(|_| ())
            }
            AtomicConstraint::LinCmp(c) => {
                self.cmps.push(c.clone());
                Ok(())
            }
        }
    }

    /// Follows variable-to-variable links.
    fn walk(&self, t: &Term) -> Term {
        let mut cur = t.clone();
        let mut guard = 0usize;
        while let Term::Var(v) = &cur {
            match self.bindings.get(v) {
                Some(Term::Var(next)) if guard <= self.bindings.len() => {
                    cur = Term::Var(next.clone());
                    guard += 1;
                }
                _ => break,
            }
        }
        cur
    }

    /// Whether binding `x` to `t` would make `x` reachable from itself.
    fn occurs(&self, x: &str, t: &Term) -> bool {
        match t {
            Term::Var(v) if v == x => true,
            Term::Var(v) => self.bindings.get(v).is_some_and(|b| self.occurs(x, b)),
            Term::Cons(h, tl) => self.occurs(x, h) || self.occurs(x, tl),
            _ => false,
        }
    }

    /// Binds `x`, keeping the bindings acyclic.
    fn bind(&mut self, x: Name, t: Term) -> Result<(), Clash> {
        if self.occurs(&x, &t) {
            return Err(Clash);
        }
        self.bindings.insert(x, t);
        Ok(())
    }

    fn unify(&mut self, a: &Term, b: &Term) -> Result<Term, Clash> {
        let a = self.walk(a);
        let b = self.walk(b);
        match (a, b) {
            (Term::Wildcard, t) | (t, Term::Wildcard) => Ok(t),
            (Term::Var(x), Term::Var(y)) if x == y => Ok(Term::Var(x)),
            (Term::Var(x), Term::Var(y)) => {
                match (self.bindings.get(&x).cloned(), self.bindings.get(&y).cloned()) {
                    (None, _) => {
                        self.bind(x, Term::Var(y.clone()))?;
                        Ok(Term::Var(y))
                    }
                    (Some(_), None) => {
                        self.bind(y, Term::Var(x.clone()))?;
                        Ok(Term::Var(x))
                    }
                    (Some(tx), Some(ty)) => {
                        // Alias first so cycles through x and y are caught.
                        self.bind(y, Term::Var(x.clone()))?;
                        let merged = self.unify(&tx, &ty)?;
                        self.bindings.remove(&x);
                        self.bind(x.clone(), merged)?;
                        Ok(Term::Var(x))
                    }
                }
            }
            (Term::Var(x), t) | (t, Term::Var(x)) => match self.bindings.get(&x).cloned() {
                None => {
                    self.bind(x.clone(), t)?;
                    Ok(Term::Var(x))
                }
                Some(tx) => {
                    let merged = self.unify(&tx, &t)?;
                    self.bindings.remove(&x);
                    self.bind(x.clone(), merged)?;
                    Ok(Term::Var(x))
                }
            },
            (Term::Cons(h1, t1), Term::Cons(h2, t2)) => {
                let h = self.unify(&h1, &h2)?;
                let t = self.unify(&t1, &t2)?;
                Ok(Term::cons(h, t))
            }
            (x, y) if x == y => Ok(x),
            _ => Err(Clash),
        }
    }

    /// The last variable on a chain of variable-to-variable links.
    fn representative(&self, v: &str) -> Name {
        let mut cur: Name = v.into();
        let mut guard = 0usize;
        while let Some(Term::Var(next)) = self.bindings.get(&cur) {
            if guard > self.bindings.len() {
                break;
            }
            cur = next.clone();
            guard += 1;
        }
        cur
    }

    fn finish(self) -> Constraint {
        match self.try_finish() {
            Ok(c) => c,
            Err(Clash) => Constraint::falsity(),
        }
    }

    fn try_finish(self) -> Result<Constraint, Clash> {
        // Root every alias class at its smallest member.
        let mut members: BTreeMap<Name, BTreeSet<Name>> = BTreeMap::new();
        for (k, v) in &self.bindings {
            members.entry(self.representative(k)).or_default().insert(k.clone());
            if let Term::Var(w) = v {
                members.entry(self.representative(w)).or_default().insert(w.clone());
            }
        }
        let mut root_of: BTreeMap<Name, Name> = BTreeMap::new();
        for (rep, ms) in &members {
            let root = ms.iter().chain(core::iter::once(rep)).min().cloned().unwrap_or_else(|| rep.clone());
            for m in ms.iter().chain(core::iter::once(rep)) {
                root_of.insert(m.clone(), root.clone());
            }
        }
        let root = |v: &str| root_of.get(v).cloned().unwrap_or_else(|| v.into());
        let to_roots = |t: &Term| t.map_vars(&mut |v| Term::Var(root(v)));

        let mut bindings: BTreeMap<Name, Term> = BTreeMap::new();
        for (rep, ms) in &members {
            let r = root(rep);
            for m in ms.iter().chain(core::iter::once(rep)) {
                if *m != r {
                    bindings.insert(m.clone(), Term::Var(r.clone()));
                }
            }
            match self.bindings.get(rep) {
                None | Some(Term::Var(_)) | Some(Term::Wildcard) => {}
                Some(t) => {
                    bindings.insert(r.clone(), to_roots(t));
                }
            }
        }
        occurs_check(&bindings)?;
        let store = Constraint { bindings, cmps: BTreeSet::new(), consistent: true };

        let mut cmps: BTreeSet<LinCmp> = BTreeSet::new();
        for c in self.cmps {
            match store.resolve(&Term::Var(c.var.clone())) {
                Term::Num(q) => {
                    if !c.holds_exact(&q) {
                        return Err(Clash);
                    }
                }
                Term::Var(r) => {
                    cmps.insert(LinCmp { var: r, ..c });
                }
                _ => return Err(Clash),
            }
        }
        if !comparisons_satisfiable(&cmps) {
            return Err(Clash);
        }
        Ok(Constraint { bindings: store.bindings, cmps, consistent: true })
    }
}

/// Rejects bindings that reach back to themselves, such as `X = [1|X]`.
fn occurs_check(bindings: &BTreeMap<Name, Term>) -> Result<(), Clash> {
    // 0 = unseen, 1 = on the stack, 2 = done
    fn visit<'a>(
        v: &'a str,
        bindings: &'a BTreeMap<Name, Term>,
        state: &mut BTreeMap<&'a str, u8>,
    ) -> Result<(), Clash> {
        match state.get(v) {
            Some(1) => return Err(Clash),
            Some(_) => return Ok(()),
            None => {}
        }
        state.insert(v, 1);
        if let Some(t) = bindings.get(v) {
            let mut refs = BTreeSet::new();
            t.collect_vars(&mut refs);
            for w in refs {
                if let Some((key, _)) = bindings.get_key_value(w.as_str()) {
                    visit(key, bindings, state)?;
                }
            }
        }
        state.insert(v, 2);
        Ok(())
    }
    let mut state = BTreeMap::new();
    for k in bindings.keys() {
        visit(k, bindings, &mut state)?;
    }
    Ok(())
}

/// Per-variable feasibility of a set of comparisons over the rationals.
fn comparisons_satisfiable(cmps: &BTreeSet<LinCmp>) -> bool {
    let mut by_var: BTreeMap<&str, Vec<&LinCmp>> = BTreeMap::new();
    for c in cmps {
        by_var.entry(c.var.as_str()).or_default().push(c);
    }
    for group in by_var.values() {
        // (bound, strict)
        let mut lo: Option<(&Rational, bool)> = None;
        let mut hi: Option<(&Rational, bool)> = None;
        let mut ne: Vec<&Rational> = Vec::new();
        for c in group {
            match c.op {
                CmpOp::Gt | CmpOp::Ge => {
                    let strict = c.op == CmpOp::Gt;
                    lo = Some(match lo {
                        Some((b, s)) if b > &c.bound || (b == &c.bound && s) => (b, s),
                        _ => (&c.bound, strict),
                    });
                }
                CmpOp::Lt | CmpOp::Le => {
                    let strict = c.op == CmpOp::Lt;
                    hi = Some(match hi {
                        Some((b, s)) if b < &c.bound || (b == &c.bound && s) => (b, s),
                        _ => (&c.bound, strict),
                    });
                }
                CmpOp::Ne => ne.push(&c.bound),
                CmpOp::Eq => {}
            }
        }
        if let (Some((l, ls)), Some((h, hs))) = (lo, hi) {
            match l.cmp(h) {
                Ordering::Greater => return false,
                Ordering::Equal => {
                    if ls || hs || ne.contains(&l) {
                        return false;
                    }
                }
                Ordering::Less => {}
            }
        }
    }
    true
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) | Term::Atom(v) => f.write_str(v),
            Term::Num(q) => f.write_str(&fmt_rational(q)),
            Term::Nil => f.write_str("[]"),
            Term::Wildcard => f.write_str("_"),
            Term::Random(lo, hi) => write!(f, "random({}, {})", fmt_rational(lo), fmt_rational(hi)),
            Term::Cons(h, t) => {
                write!(f, "[{}", h)?;
                let mut tail = &**t;
                loop {
                    match tail {
                        Term::Cons(h2, t2) => {
                            write!(f, ", {}", h2)?;
                            tail = t2;
                        }
                        Term::Nil => break,
                        other => {
                            write!(f, "|{}", other)?;
                            break;
                        }
                    }
                }
                f.write_str("]")
            }
        }
    }
}

impl fmt::Display for LinCmp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.var, self.op.symbol(), fmt_rational(&self.bound))
    }
}

impl fmt::Display for AtomicConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AtomicConstraint::TermEq(x, t) => write!(f, "{} = {}", x, t),
            AtomicConstraint::LinCmp(c) => c.fmt(f),
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.consistent {
            return f.write_str("false");
        }
        let atoms = self.atoms();
        if atoms.is_empty() {
            return f.write_str("true");
        }
        for (i, a) in atoms.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            a.fmt(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::int;
    use alloc::string::ToString;

    fn v(n: &str) -> Term {
        Term::var(n)
    }

    fn eqc(x: &str, t: Term) -> Constraint {
        Constraint::atom(AtomicConstraint::eq(x, t))
    }

    fn locals(names: &[&str]) -> BTreeSet<Name> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn truth_is_unit() {
        let c = eqc("X", Term::cons(Term::atom("a"), v("Y")));
        assert_eq!(conj(&Constraint::truth(), &c), c);
    }

    #[test]
    fn clashing_atoms_are_false() {
        assert!(conj(&eqc("X", Term::atom("a")), &eqc("X", Term::atom("b"))).is_false());
    }

    #[test]
    fn substitution_closure() {
        let c = eqc("X", Term::cons(v("V"), v("R")));
        let d = Constraint::from_atoms([
            AtomicConstraint::eq("V", Term::Num(int(5))),
            AtomicConstraint::eq("R", Term::Nil),
        ]);
        let r = conj(&c, &d);
        assert_eq!(r.bindings().get("X"), Some(&Term::cons(v("V"), v("R"))));
        let r = r.resolved();
        assert_eq!(r.bindings().get("X"), Some(&Term::cons(Term::Num(int(5)), Term::Nil)));
        assert_eq!(r.bindings().get("V"), Some(&Term::Num(int(5))));
        assert_eq!(r.bindings().get("R"), Some(&Term::Nil));
        assert_eq!(r.bindings().len(), 3);
    }

    #[test]
    fn hiding_a_bound_tail_keeps_the_link() {
        let c = Constraint::from_atoms([
            AtomicConstraint::eq("In", Term::cons(Term::Num(int(1)), v("T"))),
            AtomicConstraint::eq("T", Term::cons(Term::Num(int(2)), v("U"))),
        ]);
        let h = hide(&c, "T");
        assert_eq!(h.bindings().get("In"), Some(&Term::cons(Term::Num(int(1)), Term::cons(Term::Num(int(2)), v("U")))));
        let later = conj(&h, &eqc("U", Term::cons(Term::Num(int(3)), Term::Nil)));
        assert_eq!(later.resolve(&v("In")).to_string(), "[1, 2, 3]");
    }

    #[test]
    fn occurs_check_fails() {
        assert!(eqc("X", Term::cons(Term::atom("a"), v("X"))).is_false());
    }

    #[test]
    fn stream_head_match_with_local() {
        let store = eqc("In", Term::cons(Term::Num(int(7)), v("R")));
        let guard = eqc("In", Term::cons(v("N"), Term::Wildcard));
        assert!(entails(&store, &guard, &locals(&["N"])));
        assert!(!entails(&Constraint::truth(), &guard, &locals(&["N"])));
    }

    #[test]
    fn entailment_edge_cases() {
        assert!(!entails(&Constraint::truth(), &eqc("X", Term::atom("a")), &BTreeSet::new()));
        assert!(entails(&eqc("X", Term::atom("a")), &Constraint::truth(), &BTreeSet::new()));
        assert!(entails(&Constraint::falsity(), &eqc("X", Term::atom("a")), &BTreeSet::new()));
        // x < 5 does not entail x < 10 when x is unbound.
        let lt5 = Constraint::atom(AtomicConstraint::cmp("X", CmpOp::Lt, int(5)));
        let lt10 = Constraint::atom(AtomicConstraint::cmp("X", CmpOp::Lt, int(10)));
        assert!(!entails(&lt5, &lt10, &BTreeSet::new()));
        assert!(entails(&lt5, &lt5, &BTreeSet::new()));
        let x3 = eqc("X", Term::Num(int(3)));
        assert!(entails(&x3, &lt10, &BTreeSet::new()));
    }

    #[test]
    fn hide_substitutes_then_drops() {
        let c = Constraint::from_atoms([
            AtomicConstraint::eq("X", Term::Num(int(5))),
            AtomicConstraint::eq("Y", Term::cons(v("X"), v("_T"))),
        ]);
        let h = hide(&c, "X");
        assert_eq!(h, eqc("Y", Term::cons(Term::Num(int(5)), v("_T"))));
        assert!(!h.mentions("X"));
        assert_eq!(hide(&Constraint::truth(), "X"), Constraint::truth());
        assert!(hide(&Constraint::falsity(), "X").is_false());
    }

    #[test]
    fn hide_unbound_variable_anonymizes() {
        let c = eqc("Y", Term::cons(Term::atom("a"), v("X")));
        let h = hide(&c, "X");
        assert_eq!(h.bindings().get("Y"), Some(&Term::cons(Term::atom("a"), Term::Wildcard)));
        // Later refinement of the anonymous tail is kept.
        let refined = conj(&h, &eqc("Y", Term::cons(Term::atom("a"), Term::cons(Term::atom("b"), v("Z")))));
        assert_eq!(
            refined.bindings().get("Y"),
            Some(&Term::cons(Term::atom("a"), Term::cons(Term::atom("b"), v("Z"))))
        );
    }

    #[test]
    fn hide_alias_root_keeps_class() {
        let c = Constraint::from_atoms([AtomicConstraint::eq("B", v("A")), AtomicConstraint::eq("C", v("A"))]);
        let h = hide(&c, "A");
        assert_eq!(h, eqc("C", v("B")));
    }

    #[test]
    fn comparisons_conflict() {
        let c = Constraint::from_atoms([
            AtomicConstraint::cmp("X", CmpOp::Lt, int(3)),
            AtomicConstraint::cmp("X", CmpOp::Gt, int(3)),
        ]);
        assert!(c.is_false());
        let point = Constraint::from_atoms([
            AtomicConstraint::cmp("X", CmpOp::Le, int(3)),
            AtomicConstraint::cmp("X", CmpOp::Ge, int(3)),
            AtomicConstraint::cmp("X", CmpOp::Ne, int(3)),
        ]);
        assert!(point.is_false());
        let bad = conj(&Constraint::atom(AtomicConstraint::cmp("X", CmpOp::Lt, int(3))), &eqc("X", Term::atom("a")));
        assert!(bad.is_false());
    }

    #[test]
    fn continuous_evaluation() {
        let snap: BTreeMap<Name, Real> =
            [("T".to_string(), Real::int(3600)), ("Vol".to_string(), Real::int(10))].into_iter().collect();
        let t_eq = LinCmp::new("T", CmpOp::Eq, int(3600));
        assert_eq!(eval_cont_atoms([&t_eq], &snap), Ok(true));
        let snap0: BTreeMap<Name, Real> = [("T".to_string(), Real::int(0))].into_iter().collect();
        assert_eq!(eval_cont_atoms([&LinCmp::new("T", CmpOp::Le, int(3600))], &snap0), Ok(true));
        assert_eq!(eval_cont_atoms([&LinCmp::new("Vol", CmpOp::Lt, int(10))], &snap), Ok(false));
        assert_eq!(eval_cont_atoms([&LinCmp::new("Q", CmpOp::Lt, int(10))], &snap), Err(MissingVariable("Q".into())));
        let guard = eqc("T", Term::Num(int(3600)));
        assert_eq!(eval_cont_constraint(&guard, &snap), Ok(true));
    }

    #[test]
    fn display_lists() {
        let t = Term::cons(Term::atom("a"), Term::cons(Term::Num(int(2)), v("T")));
        assert_eq!(t.to_string(), "[a, 2|T]");
        assert_eq!(Term::cons(Term::atom("a"), Term::Nil).to_string(), "[a]");
    }
}
