//! Line-oriented text format and JSON encoding of execution graphs.
//!
//! ```text
//! % comment
//! event <thread> <index> <OPKIND> loc=<int> val=<int> [upd=<fn>] [mark=<mark>]
//! po|rf|mo|rmw <t.i> <t.i>
//! spawn <child-thread> <t.i>
//! ```
//!
//! `val` is the written value for plain writes and the result otherwise.
//! When no `po` line is present, `po` is derived from thread indices.
//! [`print_graph`] emits the canonical sorted form; parsing it back yields
//! the same graph and printing again yields the same bytes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{EdgeSet, EventId, ExecutionGraph, Label, Mark, OpKind, Operation, ThreadId, UpdateFn};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {msg}")]
pub struct FormatError {
    pub line: usize,
    pub msg: String,
}

fn err(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError { line, msg: msg.into() }
}

fn event_fields(l: &Label, mark: Option<&Mark>) -> (String, i64, Option<String>, Option<String>) {
    let val = l.op.value().unwrap_or(l.result);
    (
        l.kind().name().to_string(),
        val,
        l.op.update().map(|f| f.to_string()),
        mark.map(|m| m.to_string()),
    )
}

pub fn print_graph(g: &ExecutionGraph) -> String {
    let mut out = String::new();
    for (&e, l) in &g.events {
        let (kind, val, upd, mark) = event_fields(l, g.marks.get(&e));
        write!(out, "event {} {} {} loc={} val={}", e.thread.0, e.index, kind, l.loc, val).unwrap();
        if let Some(u) = upd {
            write!(out, " upd={u}").unwrap();
        }
        if let Some(m) = mark {
            write!(out, " mark={m}").unwrap();
        }
        out.push('\n');
    }
    for (name, rel) in [("po", &g.po), ("rf", &g.rf), ("mo", &g.mo), ("rmw", &g.rmw)] {
        for (a, b) in rel {
            writeln!(out, "{name} {a} {b}").unwrap();
        }
    }
    for (e, t) in &g.spawn {
        writeln!(out, "spawn {t} {e}").unwrap();
    }
    out
}

fn build_label(
    line: usize,
    thread: ThreadId,
    kind: OpKind,
    loc: i64,
    val: i64,
    upd: Option<UpdateFn>,
) -> Result<Label, FormatError> {
    let (value, result) = if kind.is_write() { (Some(val), 0) } else { (None, val) };
    let op = Operation::from_parts(kind, value, upd)
        .ok_or_else(|| err(line, format!("operand mismatch for {}", kind.name())))?;
    Ok(Label::new(thread, loc, result, op))
}

pub fn parse_graph(text: &str) -> Result<ExecutionGraph, FormatError> {
    let mut g = ExecutionGraph::new();
    let mut saw_po = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('%').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let toks: Vec<&str> = body.split_whitespace().collect();
        let ev = |s: &str| s.parse::<EventId>().map_err(|m| err(line, m));
        match toks[0] {
            "event" => {
                if toks.len() < 6 {
                    return Err(err(line, "event line needs thread, index, kind, loc and val"));
                }
                let thread: u32 = toks[1].parse().map_err(|_| err(line, "bad thread"))?;
                let index: u32 = toks[2].parse().map_err(|_| err(line, "bad index"))?;
                let kind = OpKind::from_name(toks[3])
                    .ok_or_else(|| err(line, format!("unknown operation `{}`", toks[3])))?;
                let mut loc = None;
                let mut val = None;
                let mut upd = None;
                let mut mark = None;
                for t in &toks[4..] {
                    let (k, v) = t.split_once('=').ok_or_else(|| err(line, format!("bad field `{t}`")))?;
                    match k {
                        "loc" => loc = Some(v.parse().map_err(|_| err(line, "bad loc"))?),
                        "val" => val = Some(v.parse().map_err(|_| err(line, "bad val"))?),
                        "upd" => upd = Some(v.parse::<UpdateFn>().map_err(|m| err(line, m))?),
                        "mark" => mark = Some(v.parse::<Mark>().map_err(|m| err(line, m))?),
                        _ => return Err(err(line, format!("unknown field `{k}`"))),
                    }
                }
                let (loc, val) = loc.zip(val).ok_or_else(|| err(line, "missing loc or val"))?;
                let id = EventId::new(thread, index);
                let label = build_label(line, ThreadId(thread), kind, loc, val, upd)?;
                if g.events.insert(id, label).is_some() {
                    return Err(err(line, format!("duplicate event {id}")));
                }
                if let Some(m) = mark {
                    g.marks.insert(id, m);
                }
            }
            rel @ ("po" | "rf" | "mo" | "rmw") => {
                if toks.len() != 3 {
                    return Err(err(line, "edge line needs two events"));
                }
                let edge = (ev(toks[1])?, ev(toks[2])?);
                let set: &mut EdgeSet = match rel {
                    "po" => {
                        saw_po = true;
                        &mut g.po
                    }
                    "rf" => &mut g.rf,
                    "mo" => &mut g.mo,
                    _ => &mut g.rmw,
                };
                set.insert(edge);
            }
            "spawn" => {
                if toks.len() != 3 {
                    return Err(err(line, "spawn line needs a thread and an event"));
                }
                let t: u32 = toks[1].parse().map_err(|_| err(line, "bad thread"))?;
                g.spawn.insert((ev(toks[2])?, ThreadId(t)));
            }
            other => return Err(err(line, format!("unknown directive `{other}`"))),
        }
    }
    if !saw_po {
        g.rebuild_po();
    }
    Ok(g)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventDoc {
    pub id: String,
    pub op: String,
    pub loc: i64,
    pub val: i64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub upd: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mark: Option<String>,
}

/// JSON shape of a graph. Edges are `[from, to]` pairs of `"t.i"` ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDoc {
    pub events: Vec<EventDoc>,
    pub po: Vec<[String; 2]>,
    pub rf: Vec<[String; 2]>,
    pub mo: Vec<[String; 2]>,
    pub rmw: Vec<[String; 2]>,
    pub spawn: Vec<[String; 2]>,
}

fn edges(s: &EdgeSet) -> Vec<[String; 2]> {
    s.iter().map(|(a, b)| [a.to_string(), b.to_string()]).collect()
}

impl From<&ExecutionGraph> for GraphDoc {
    fn from(g: &ExecutionGraph) -> Self {
        GraphDoc {
            events: g
                .events
                .iter()
                .map(|(&e, l)| {
                    let (op, val, upd, mark) = event_fields(l, g.marks.get(&e));
                    EventDoc { id: e.to_string(), op, loc: l.loc, val, upd, mark }
                })
                .collect(),
            po: edges(&g.po),
            rf: edges(&g.rf),
            mo: edges(&g.mo),
            rmw: edges(&g.rmw),
            spawn: g.spawn.iter().map(|(e, t)| [t.to_string(), e.to_string()]).collect(),
        }
    }
}

impl TryFrom<&GraphDoc> for ExecutionGraph {
    type Error = FormatError;
    fn try_from(d: &GraphDoc) -> Result<Self, FormatError> {
        let bad = |m: String| err(0, m);
        let mut g = ExecutionGraph::new();
        for e in &d.events {
            let id: EventId = e.id.parse().map_err(bad)?;
            let kind = OpKind::from_name(&e.op).ok_or_else(|| bad(format!("unknown op {}", e.op)))?;
            let upd = e.upd.as_deref().map(str::parse::<UpdateFn>).transpose().map_err(bad)?;
            g.events.insert(id, build_label(0, id.thread, kind, e.loc, e.val, upd)?);
            if let Some(m) = &e.mark {
                g.marks.insert(id, m.parse().map_err(bad)?);
            }
        }
        let conv = |v: &Vec<[String; 2]>| -> Result<EdgeSet, FormatError> {
            v.iter()
                .map(|[a, b]| Ok((a.parse().map_err(bad)?, b.parse().map_err(bad)?)))
                .collect()
        };
        g.po = conv(&d.po)?;
        g.rf = conv(&d.rf)?;
        g.mo = conv(&d.mo)?;
        g.rmw = conv(&d.rmw)?;
        for [t, e] in &d.spawn {
            let t: u32 = t.parse().map_err(|_| bad(format!("bad thread {t}")))?;
            g.spawn.insert((e.parse().map_err(bad)?, ThreadId(t)));
        }
        Ok(g)
    }
}

pub fn graph_to_json(g: &ExecutionGraph) -> String {
    serde_json::to_string_pretty(&GraphDoc::from(g)).expect("graph document serializes")
}

pub fn graph_from_json(s: &str) -> Result<ExecutionGraph, FormatError> {
    let doc: GraphDoc = serde_json::from_str(s).map_err(|e| err(e.line(), e.to_string()))?;
    ExecutionGraph::try_from(&doc)
}
