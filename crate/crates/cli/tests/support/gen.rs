//! Seeded generator of small well-formed programs.
//!
//! Programs have at most three top-level components (plus the `change`
//! agents that create the continuous variables and a burst of tells), choices of at most four
//! branches and at most three continuous variables. Text is generated and
//! parsed, so every program also exercises the parser.

use std::fmt::Write;

use hytccp_core::syntax::{parse_program, Program};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MAX_COMPONENTS: usize = 3;
pub const MAX_BRANCHES: usize = 4;
pub const MAX_CONTINUOUS: usize = 3;

#[derive(Clone, Copy, Debug)]
pub struct GenOptions {
    /// Allow flows `der(x) = a + b*x` with `b != 0`.
    pub exponential: bool,
    /// Nesting depth of agents inside a component.
    pub depth: u32,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions { exponential: true, depth: 3 }
    }
}

const CONT: [&str; MAX_CONTINUOUS] = ["T", "U", "V"];
const DISC: [&str; 3] = ["X", "Y", "Z"];
const ATOMS: [&str; 3] = ["a", "b", "c"];

#[derive(PartialEq)]
enum Sort {
    Num,
    Atom,
    List,
}

fn sort(x: &str) -> Sort {
    match x {
        "Y" => Sort::Atom,
        "Z" => Sort::List,
        _ => Sort::Num,
    }
}

struct Gen<'r> {
    rng: &'r mut ChaCha8Rng,
    opts: GenOptions,
    cont: Vec<&'static str>,
    /// Name and arity of the declared processes.
    procs: Vec<(String, usize)>,
    fresh: usize,
    /// Values told in this program; one per sort keeps stores consistent.
    num: i64,
    atom: &'static str,
    head: String,
    clashes: bool,
}

impl Gen<'_> {
    fn pick<T: Copy>(&mut self, xs: &[T]) -> T {
        *xs.choose(self.rng).expect("non-empty")
    }

    fn small(&mut self) -> i64 {
        self.rng.gen_range(0..=6)
    }

    fn rate(&mut self) -> String {
        let q = self.pick(&["-2", "-1", "-1/2", "0", "1/2", "1", "2", "3"]);
        q.to_string()
    }

    fn flow(&mut self, x: &str) -> String {
        if self.opts.exponential && self.rng.gen_bool(0.3) {
            let b = self.pick(&["- 1", "- 1/2", "+ 1/4"]);
            format!("der({x}) = {} {b}*{x}", self.small())
        } else {
            format!("der({x}) = {}", self.rate())
        }
    }

    fn small_num(&mut self) -> i64 {
        self.rng.gen_range(0..=2)
    }

    /// Tells are drawn per sort so that most stores stay consistent: `Y`
    /// holds atoms, `Z` lists, every other variable numbers.
    fn tell_atom(&mut self, vars: &[String]) -> String {
        let x = vars.choose(self.rng).unwrap().clone();
        let num = self.num;
        match sort(&x) {
            Sort::Atom => format!("{x} = {}", self.atom),
            Sort::List => {
                let tail = format!("F{}", self.bump());
                if self.rng.gen_bool(0.5) {
                    format!("{x} = [{}|{tail}]", self.head)
                } else {
                    format!("{x} = [H{}|{tail}]", self.bump())
                }
            }
            Sort::Num => match self.rng.gen_range(0..5 + usize::from(self.clashes)) {
                0 => format!("{x} < {}", num + 1 + self.small_num()),
                1 => format!("{x} >= {}", num - self.small_num()),
                2 => format!("{x} = random({num}, {})", num + self.small_num()),
                // Some programs disagree with their own value and reach a false store.
                5 => format!("{x} = {}", num + 1),
                _ => format!("{x} = {num}"),
            },
        }
    }

    fn bump(&mut self) -> usize {
        self.fresh += 1;
        self.fresh
    }

    fn guard_atom(&mut self, vars: &[String]) -> String {
        let use_cont = !self.cont.is_empty() && self.rng.gen_bool(0.5);
        if use_cont {
            let x = self.pick(&self.cont.clone());
            let op = self.pick(&["=", ">=", "=<", ">", "<"]);
            format!("{x} {op} {}", self.small())
        } else {
            let x = vars.choose(self.rng).unwrap().clone();
            match sort(&x) {
                Sort::Atom => format!("{x} = {}", self.pick(&ATOMS)),
                Sort::List => match self.rng.gen_range(0..3) {
                    0 => format!("{x} = [_|_]"),
                    1 => format!("{x} = [a|_]"),
                    _ => format!("{x} = [{}|_]", self.small_num()),
                },
                Sort::Num => match self.rng.gen_range(0..3) {
                    0 => format!("{x} > {}", self.small_num()),
                    1 => format!("{x} < {}", self.small()),
                    _ => format!("{x} = {}", self.small_num()),
                },
            }
        }
    }

    fn guard(&mut self, vars: &[String]) -> String {
        let n = if self.rng.gen_bool(0.75) { 1 } else { 2 };
        (0..n).map(|_| self.guard_atom(vars)).collect::<Vec<_>>().join(", ")
    }

    fn invariant(&mut self) -> String {
        let x = self.pick(&self.cont.clone());
        let op = self.pick(&["=<", ">=", "<", ">"]);
        format!("{x} {op} {}", self.small() + 1)
    }

    fn change(&mut self, vars: &[String]) -> String {
        let x = self.pick(&self.cont.clone());
        let value = match self.rng.gen_range(0..3) {
            0 => "_".to_string(),
            1 => vars.iter().find(|v| sort(v) == Sort::Num).cloned().unwrap_or_else(|| "0".into()),
            _ => self.small().to_string(),
        };
        let flow = if self.rng.gen_bool(0.3) { "_".to_string() } else { self.flow(x) };
        format!("change({x}, {value}, {flow})")
    }

    fn call(&mut self, vars: &[String]) -> Option<String> {
        let (name, arity) = self.procs.choose(self.rng)?.clone();
        // Arguments match the sort of the parameter they replace.
        let mut args = Vec::new();
        for param in &DISC[..arity] {
            let fits: Vec<&String> = vars.iter().filter(|v| sort(v) == sort(param)).collect();
            args.push((*fits.choose(self.rng)?).clone());
        }
        Some(if args.is_empty() { name } else { format!("{name}({})", args.join(", ")) })
    }

    fn choice(&mut self, vars: &[String], depth: u32) -> String {
        let n = self.rng.gen_range(1..=MAX_BRANCHES);
        let invariants = if self.cont.is_empty() || n == 1 { 0 } else { self.rng.gen_range(0..=1) };
        let mut parts = Vec::new();
        for _ in 0..n - invariants {
            let g = self.guard(vars);
            let body = self.agent(vars, depth.saturating_sub(1));
            parts.push(format!("ask({g}) -> ({body})"));
        }
        for _ in 0..invariants {
            parts.push(format!("ask~({})", self.invariant()));
        }
        parts.join(" + ")
    }

    fn agent(&mut self, vars: &[String], depth: u32) -> String {
        let leaf = depth == 0 || self.rng.gen_bool(0.25);
        if leaf {
            return match self.rng.gen_range(0..5) {
                0 => "stop".into(),
                1 | 2 => format!("tell({})", self.tell_atom(vars)),
                3 if !self.cont.is_empty() => self.change(vars),
                _ => self.call(vars).unwrap_or_else(|| "stop".into()),
            };
        }
        match self.rng.gen_range(0..6) {
            0 | 1 => self.choice(vars, depth),
            2 => {
                let g = self.guard(vars);
                let a = self.agent(vars, depth - 1);
                let b = self.agent(vars, depth - 1);
                format!("now({g}) then ({a}) else ({b})")
            }
            3 => {
                let local = format!("L{}", self.bump());
                let mut inner = vars.to_vec();
                inner.push(local.clone());
                let body = self.agent(&inner, depth - 1);
                format!("exists {local} ({body})")
            }
            4 => {
                let a = self.agent(vars, depth - 1);
                let b = self.agent(vars, depth - 1);
                format!("{a} || {b}")
            }
            _ => {
                let a = self.agent(vars, depth - 1);
                format!("tell({}) || {a}", self.tell_atom(vars))
            }
        }
    }
}

/// A random program; `seed` fully determines the text.
pub fn program_text(seed: u64, opts: GenOptions) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_cont = if rng.gen_bool(0.15) { 0 } else { rng.gen_range(1..=MAX_CONTINUOUS) };
    let n_procs = rng.gen_range(0..=2);
    let mut g = Gen {
        rng: &mut rng,
        opts,
        cont: CONT[..n_cont].to_vec(),
        procs: (0..n_procs).map(|i| (format!("p{i}"), i + 1)).collect(),
        fresh: 0,
        num: 0,
        atom: "a",
        head: String::new(),
        clashes: false,
    };
    g.clashes = g.rng.gen_bool(0.5);
    g.num = g.small_num();
    g.atom = g.pick(&ATOMS);
    g.head = if g.rng.gen_bool(0.5) { g.pick(&ATOMS).to_string() } else { g.small_num().to_string() };
    let mut out = String::new();
    let procs = g.procs.clone();
    let mut decls = procs.clone();
    if let Some(first) = procs.first() {
        if g.rng.gen_bool(0.3) {
            decls.push(first.clone());
        }
    }
    for (name, arity) in &decls {
        let params: Vec<String> = DISC[..*arity].iter().map(|s| s.to_string()).collect();
        // Bodies mention only their parameters and the continuous variables,
        // and call only earlier processes so unfolding terminates.
        let index = procs.iter().position(|p| p.0 == *name).expect("declared");
        g.procs = procs[..index].to_vec();
        let body = g.agent(&params, opts.depth.saturating_sub(1));
        writeln!(out, "{name}({}) :- {body}.", params.join(", ")).unwrap();
    }
    g.procs = procs.clone();
    let vars: Vec<String> = DISC.iter().map(|s| s.to_string()).collect();
    let mut parts = Vec::new();
    for x in g.cont.clone() {
        let v0 = g.small();
        let flow = g.flow(x);
        parts.push(format!("change({x}, {v0}, {flow})"));
    }
    // The first component is a burst of tells so that guards have
    // something to react to.
    let n = g.rng.gen_range(1..=MAX_COMPONENTS);
    let k = g.rng.gen_range(1..=3);
    let tells: Vec<String> = (0..k).map(|_| format!("tell({})", g.tell_atom(&vars))).collect();
    parts.push(tells.join(" || "));
    for _ in 0..n {
        let a = if g.rng.gen_bool(0.6) { g.choice(&vars, opts.depth) } else { g.agent(&vars, opts.depth) };
        parts.push(a);
    }
    writeln!(out, "exists {} ({}).", DISC.join(", "), parts.join(" || ")).unwrap();
    out
}

pub fn program(seed: u64, opts: GenOptions) -> Program {
    let text = program_text(seed, opts);
    parse_program(&text).unwrap_or_else(|e| panic!("generated program does not parse: {e}\n{text}"))
}
