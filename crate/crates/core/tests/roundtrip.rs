//! Pretty-printing followed by parsing gives back the same AST.

use hytccp_core::constraint::{AtomicConstraint, CmpOp, Constraint, Name, Term};
use hytccp_core::flow::Update;
use hytccp_core::num::{ratio, Rational};
use hytccp_core::syntax::{parse_program, Agent, Branch, Declaration, FlowExpr, LinExpr, Program};
use proptest::prelude::*;

const VARS: &[&str] = &["X", "Y", "Vol", "In'", "T2"];
const ATOMS: &[&str] = &["a", "close", "open"];
/// Declared processes: name and arity.
const PROCS: &[(&str, usize)] = &[("p", 0), ("q", 2), ("gate", 1)];

fn var() -> impl Strategy<Value = Name> {
    prop::sample::select(VARS).prop_map(String::from)
}

fn rational() -> impl Strategy<Value = Rational> {
    (-40i64..40, 1i64..5).prop_map(|(n, d)| ratio(n, d))
}

fn nonzero() -> impl Strategy<Value = Rational> {
    rational().prop_filter("nonzero", |q| *q != ratio(0, 1))
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Ctx {
    Tell,
    Guard,
    Store,
}

fn term(ctx: Ctx) -> BoxedStrategy<Term> {
    let mut leaves: Vec<BoxedStrategy<Term>> = vec![
        var().prop_map(Term::Var).boxed(),
        prop::sample::select(ATOMS).prop_map(|a| Term::Atom(a.into())).boxed(),
        rational().prop_map(Term::Num).boxed(),
        Just(Term::Nil).boxed(),
    ];
    match ctx {
        Ctx::Tell => {
            leaves.push((0i64..5, 0i64..400).prop_map(|(lo, w)| Term::Random(ratio(lo, 1), ratio(lo + w, 1))).boxed())
        }
        Ctx::Guard | Ctx::Store => leaves.push(Just(Term::Wildcard).boxed()),
    }
    prop::strategy::Union::new(leaves)
        .prop_recursive(3, 12, 2, |inner| (inner.clone(), inner).prop_map(|(h, t)| Term::cons(h, t)))
        .boxed()
}

fn atomic(ctx: Ctx) -> impl Strategy<Value = AtomicConstraint> {
    let op = prop::sample::select(vec![CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge]);
    prop_oneof![
        (var(), term(ctx)).prop_map(|(x, t)| AtomicConstraint::eq(&x, t)),
        (var(), op, rational()).prop_map(|(x, op, q)| AtomicConstraint::cmp(&x, op, q)),
    ]
}

fn constraint(ctx: Ctx) -> impl Strategy<Value = Constraint> {
    prop::collection::vec(atomic(ctx), 0..4).prop_map(Constraint::from_atoms)
}

fn lin_expr(exclude: Option<String>) -> impl Strategy<Value = LinExpr> {
    (rational(), prop::collection::btree_map(var(), nonzero(), 0..3)).prop_map(move |(constant, terms)| LinExpr {
        constant,
        terms: terms.into_iter().filter(|(v, _)| Some(v) != exclude.as_ref()).map(|(v, c)| (c, v)).collect(),
    })
}

fn change() -> impl Strategy<Value = Agent> {
    var().prop_flat_map(|x| {
        let value = prop_oneof![Just(Update::Keep), lin_expr(None).prop_map(Update::Set)];
        let flow = prop_oneof![
            Just(Update::Keep),
            (lin_expr(Some(x.clone())), rational())
                .prop_map(|(constant, coef)| Update::Set(FlowExpr { constant, coef })),
        ];
        (Just(x), value, flow).prop_map(|(var, value, flow)| Agent::Change { var, value, flow })
    })
}

fn call() -> impl Strategy<Value = Agent> {
    prop::sample::select(PROCS).prop_flat_map(|(name, arity)| {
        prop::collection::vec(var(), arity).prop_map(move |args| Agent::Call { name: name.into(), args })
    })
}

fn distinct_vars(min: usize) -> impl Strategy<Value = Vec<Name>> {
    prop::collection::btree_set(var(), min..4).prop_map(|s| s.into_iter().collect())
}

fn agent() -> impl Strategy<Value = Agent> {
    let leaf = prop_oneof![Just(Agent::Stop), constraint(Ctx::Tell).prop_map(Agent::Tell), change(), call(),];
    leaf.prop_recursive(4, 24, 3, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Agent::par(a, b)),
            (distinct_vars(1), constraint(Ctx::Store), inner.clone()).prop_map(|(vars, local, body)| Agent::Hide {
                vars,
                body: Box::new(body),
                local
            }),
            (
                prop::collection::vec((constraint(Ctx::Guard), inner.clone()), 0..3),
                prop::collection::vec(constraint(Ctx::Guard), 0..2),
            )
                .prop_filter("a choice has a branch", |(a, c)| !a.is_empty() || !c.is_empty())
                .prop_map(|(asks, conts)| Agent::Choice {
                    asks: asks.into_iter().map(|(guard, body)| Branch { guard, body }).collect(),
                    conts,
                }),
            (constraint(Ctx::Guard), inner.clone(), inner).prop_map(|(guard, a, b)| Agent::Now {
                guard,
                then: Box::new(a),
                otherwise: Box::new(b),
            }),
        ]
    })
}

fn program() -> impl Strategy<Value = Program> {
    let decls: Vec<_> =
        PROCS
            .iter()
            .map(|&(name, arity)| {
                (prop::collection::btree_set(var(), arity..=arity), agent()).prop_map(move |(params, body)| {
                    Declaration { name: name.into(), params: params.into_iter().collect(), body }
                })
            })
            .collect();
    (decls, agent()).prop_map(|(declarations, initial)| Program::new(declarations, initial))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn print_then_parse_is_identity(p in program()) {
        let text = p.to_string();
        let back = parse_program(&text).map_err(|e| TestCaseError::fail(format!("{}\n{}", e, text)))?;
        prop_assert_eq!(back, p, "{}", text);
    }

    #[test]
    fn printing_is_a_fixpoint(p in program()) {
        let once = p.to_string();
        let twice = parse_program(&once).unwrap().to_string();
        prop_assert_eq!(once, twice);
    }
}
