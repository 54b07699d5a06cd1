//! JSONL and CSV serialization of traces and reachability reports.
//!
//! Exact values are written as rational strings (`"7"`, `"3/2"`), floating
//! point values as decimal strings, so every value round-trips.

use std::collections::BTreeMap;
use std::io::{self, Write};

use hytccp_core::constraint::Name;
use hytccp_core::flow::{Entry, Update};
use hytccp_core::num::{fmt_rational, Real};
use hytccp_core::semantics::{ChangeOp, ChoiceRecord, Configuration};
use hytccp_core::simulator::{Policy, ReachabilityReport, Trace, TraceEvent, TraceHeader};
use serde_json::{json, Map, Value};

pub const FORMAT_VERSION: u32 = 1;

pub fn real(v: &Real) -> Value {
    Value::String(v.to_string())
}

fn vars(entries: &BTreeMap<Name, Entry>) -> Value {
    let mut m = Map::new();
    for (x, e) in entries {
        m.insert(x.clone(), json!({ "v": real(&e.value), "flow": e.flow.to_string() }));
    }
    Value::Object(m)
}

fn choices(cs: &[ChoiceRecord]) -> Value {
    Value::Array(
        cs.iter().map(|c| json!({ "site": c.site, "picked": c.picked, "alternatives": c.alternatives })).collect(),
    )
}

fn changes(ops: &[ChangeOp]) -> Value {
    Value::Array(
        ops.iter()
            .map(|op| {
                let value = match &op.value {
                    Update::Keep => Value::Null,
                    Update::Set(q) => Value::String(fmt_rational(q)),
                };
                let flow = match &op.flow {
                    Update::Keep => Value::Null,
                    Update::Set(f) => Value::String(f.to_string()),
                };
                json!({ "var": op.var, "value": value, "flow": flow })
            })
            .collect(),
    )
}

fn policy_name(p: &Policy) -> &'static str {
    match p {
        Policy::First => "first",
        Policy::Random => "random",
        Policy::Exhaustive { .. } => "exhaustive",
    }
}

pub fn header_json(h: &TraceHeader) -> Value {
    let o = &h.options;
    json!({
        "kind": "header",
        "format_version": FORMAT_VERSION,
        "program_sha256": h.program_sha256,
        "seed": o.seed,
        "options": {
            "max_time": fmt_rational(&o.max_time),
            "max_steps": o.max_steps,
            "horizon": fmt_rational(&o.horizon),
            "policy": policy_name(&o.policy),
            "divergence_budget": o.divergence_budget,
        },
    })
}

pub fn event_json(index: usize, ev: &TraceEvent) -> Value {
    match ev {
        TraceEvent::Discrete { t, choices: cs, told, changes: ops, vars: vs } => json!({
            "event": index,
            "t": real(t),
            "kind": "discrete",
            "tau": Value::Null,
            "cause": Value::Null,
            "told": told.iter().map(|c| c.to_string()).collect::<Vec<_>>(),
            "changes": changes(ops),
            "vars": vars(vs),
            "choices": choices(cs),
        }),
        TraceEvent::Continuous { t, tau, cause, start, end } => json!({
            "event": index,
            "t": real(t),
            "kind": "continuous",
            "tau": real(tau),
            "cause": cause.to_string(),
            "told": [],
            "vars_start": vars(start),
            "vars": vars(end),
            "choices": [],
        }),
        TraceEvent::Terminal { t, kind, detail } => json!({
            "event": index,
            "t": real(t),
            "kind": "terminal",
            "tau": Value::Null,
            "cause": Value::Null,
            "told": [],
            "vars": {},
            "choices": [],
            "terminal_kind": kind.as_str(),
            "detail": detail,
        }),
    }
}

pub fn write_jsonl<W: Write>(out: &mut W, trace: &Trace) -> io::Result<()> {
    writeln!(out, "{}", header_json(&trace.header))?;
    for (i, ev) in trace.events.iter().enumerate() {
        writeln!(out, "{}", event_json(i, ev))?;
    }
    Ok(())
}

/// One row per variable per event; events without variables get one row
/// with empty variable columns.
pub fn write_csv<W: Write>(out: W, trace: &Trace) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["event", "kind", "t", "var", "value", "flow_a", "flow_b"])?;
    for (i, ev) in trace.events.iter().enumerate() {
        let (kind, t, entries): (&str, &Real, Option<&BTreeMap<Name, Entry>>) = match ev {
            TraceEvent::Discrete { t, vars, .. } => ("discrete", t, Some(vars)),
            TraceEvent::Continuous { t, end, .. } => ("continuous", t, Some(end)),
            TraceEvent::Terminal { t, kind, .. } => (kind.as_str(), t, None),
        };
        let kind =
            if matches!(ev, TraceEvent::Terminal { .. }) { format!("terminal:{}", kind) } else { kind.to_string() };
        let idx = i.to_string();
        let t = t.to_string();
        match entries {
            Some(m) if !m.is_empty() => {
                for (x, e) in m {
                    w.write_record([
                        idx.as_str(),
                        kind.as_str(),
                        t.as_str(),
                        x.as_str(),
                        &e.value.to_string(),
                        &fmt_rational(&e.flow.a),
                        &fmt_rational(&e.flow.b),
                    ])?;
                }
            }
            _ => w.write_record([idx.as_str(), kind.as_str(), t.as_str(), "", "", "", ""])?,
        }
    }
    w.flush()
}

fn config_json(c: &Configuration) -> Value {
    json!({
        "kind": "state",
        "t": real(&c.clock),
        "agent": c.agent.to_string(),
        "store": c.store.to_string(),
        "vars": vars(c.cont.entries()),
    })
}

/// A header line, one line per state (in key order) and a summary line.
pub fn write_report<W: Write>(out: &mut W, program_sha256: &str, report: &ReachabilityReport) -> io::Result<()> {
    writeln!(
        out,
        "{}",
        json!({
            "kind": "header",
            "format_version": FORMAT_VERSION,
            "program_sha256": program_sha256,
            "options": { "policy": "exhaustive", "depth": report.depth },
        })
    )?;
    for c in report.states.values() {
        writeln!(out, "{}", config_json(c))?;
    }
    writeln!(out, "{}", json!({ "kind": "summary", "states": report.states.len(), "complete": report.complete }))
}
