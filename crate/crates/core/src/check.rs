//! Static checks beyond parsing: declaration bodies are closed over their
//! parameters, and every variable read by an `ask~` invariant is the target
//! of some `change`.
//!
//! Variables are tracked per scope (a declaration, or the initial agent)
//! and linked across calls, so a parameter counts as continuous when some
//! call site passes a changed variable, or the body changes it.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::flow::Update;
use crate::syntax::{Agent, Program};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Diagnostic {
    /// Declaration name, or `<initial>`.
    pub scope: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "in {}: {}", self.scope, self.message)
    }
}

const INITIAL: &str = "<initial>";

type Node = (String, String);

struct Classes {
    parent: BTreeMap<Node, Node>,
}

impl Classes {
    fn find(&mut self, n: &Node) -> Node {
        let p = match self.parent.get(n) {
            Some(p) if p != n => p.clone(),
            _ => return n.clone(),
        };
        let root = self.find(&p);
        self.parent.insert(n.clone(), root.clone());
        root
    }

    fn union(&mut self, a: &Node, b: &Node) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (hi, lo) = if ra > rb { (ra, rb) } else { (rb, ra) };
            self.parent.insert(hi, lo);
        }
    }
}

#[derive(Default)]
struct Facts {
    changed: Vec<String>,
    invariant_reads: Vec<String>,
    calls: Vec<(String, Vec<String>)>,
}

fn collect(a: &Agent, out: &mut Facts) {
    match a {
        Agent::Stop | Agent::Tell(_) => {}
        Agent::Parallel(l, r) => {
            collect(l, out);
            collect(r, out);
        }
        Agent::Hide { body, .. } => collect(body, out),
        Agent::Choice { asks, conts } => {
            for b in asks {
                collect(&b.body, out);
            }
            for c in conts {
                out.invariant_reads.extend(c.vars());
            }
        }
        Agent::Now { then, otherwise, .. } => {
            collect(then, out);
            collect(otherwise, out);
        }
        Agent::Call { name, args } => out.calls.push((name.clone(), args.clone())),
        Agent::Change { var, value, flow } => {
            out.changed.push(var.clone());
            if matches!(value, Update::Keep) || matches!(flow, Update::Keep) {
                // A KEEP change also reads its target.
                out.invariant_reads.push(var.clone());
            }
        }
    }
}

/// Runs all static checks; an empty result means the program passes.
pub fn check_program(program: &Program) -> Vec<Diagnostic> {
    let mut diags = BTreeSet::new();

    for d in &program.declarations {
        let params: BTreeSet<&String> = d.params.iter().collect();
        for v in d.body.free_vars() {
            if !params.contains(&v) {
                diags.insert(Diagnostic {
                    scope: d.name.clone(),
                    message: format!("variable {} is neither a parameter nor hidden", v),
                });
            }
        }
    }

    let mut scopes: Vec<(String, Facts)> = Vec::new();
    let mut f = Facts::default();
    collect(&program.initial, &mut f);
    scopes.push((INITIAL.into(), f));
    for d in &program.declarations {
        let mut f = Facts::default();
        collect(&d.body, &mut f);
        scopes.push((d.name.clone(), f));
    }

    let mut classes = Classes { parent: BTreeMap::new() };
    for (scope, facts) in &scopes {
        for (callee, args) in &facts.calls {
            for d in program.lookup(callee, args.len()) {
                for (arg, param) in args.iter().zip(&d.params) {
                    classes.union(&(scope.clone(), arg.clone()), &(d.name.clone(), param.clone()));
                }
            }
        }
    }
    let mut continuous = BTreeSet::new();
    for (scope, facts) in &scopes {
        for v in &facts.changed {
            continuous.insert(classes.find(&(scope.clone(), v.clone())));
        }
    }
    for (scope, facts) in &scopes {
        for v in &facts.invariant_reads {
            if !continuous.contains(&classes.find(&(scope.clone(), v.clone()))) {
                diags.insert(Diagnostic {
                    scope: scope.clone(),
                    message: format!("uninitialized continuous variable {}", v),
                });
            }
        }
    }
    diags.into_iter().collect()
}
