//! The interleaving operational semantics: configurations, head steps, the
//! full step relation, safety exploration, and the correspondence between
//! execution prefixes and configurations.
//!
//! Freed cells become `Reserved` rather than unallocated, so a freed block is
//! never handed out again and any later access gets stuck. `cons` in thread
//! `t` allocates from `ALLOC_BASE * t` upwards, exactly as the unroller does,
//! so configurations and enumerated graphs agree on addresses.

use crate::enumerate::{Bounds, EnumError};
use crate::exec_graph::{
    restrict_unchecked, EventId, ExecutionGraph, Label, Loc, Mark, Operation, ThreadId, Val,
};
use crate::lang::{substitute, Cmd, Expr, Program, TraceEvent, ALLOC_BASE};
use crate::relations::{find_data_races, Analysis};
use crate::tied::{check_consistent_resource, net_resource, AtomicSpec, Monoid, TiedEvent, Total, TotalTied};
use crate::xmm::{check_grounded, order_respects_hb};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use thiserror::Error;

/// Stops exploration of one program.
pub const MAX_CONFIGURATIONS: usize = 2_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum CellState {
    Unallocated,
    Value(Val),
    /// Mid-write, in atomic mode, or freed.
    Reserved,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct AtomicCell {
    pub spec: String,
    pub omega: TotalTied,
}

/// Bookkeeping that names what a thread does next; it does not affect
/// which rules apply.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ThreadMeta {
    /// Graph events emitted so far.
    pub events: u32,
    pub forks: u32,
    pub next_cell: Loc,
}

/// `γ = (h, A, T)`. Unallocated cells are absent from `heap`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Configuration {
    pub heap: BTreeMap<Loc, CellState>,
    pub atomic: BTreeMap<Loc, AtomicCell>,
    pub threads: BTreeMap<ThreadId, Cmd>,
    pub meta: BTreeMap<ThreadId, ThreadMeta>,
    /// Cells not written since their allocation (strict `begin_atomic`).
    pub pristine: BTreeSet<Loc>,
}

impl Configuration {
    /// Declared locations hold their initial values; every top-level thread
    /// has started with location names substituted by addresses.
    pub fn initial(p: &Program) -> Self {
        let globals = p.globals();
        let close = |c: &Cmd| globals.iter().fold(c.clone(), |c, (x, v)| substitute(&c, *v, x));
        let threads: BTreeMap<ThreadId, Cmd> = p.main_threads().map(|(t, c)| (t, close(c))).collect();
        Configuration {
            heap: p.locations.iter().enumerate().map(|(i, (_, v))| (i as Loc, CellState::Value(*v))).collect(),
            atomic: BTreeMap::new(),
            meta: threads.keys().map(|t| (*t, ThreadMeta::default())).collect(),
            threads,
            pristine: (0..p.locations.len() as Loc).collect(),
        }
    }

    pub fn cell(&self, l: Loc) -> CellState {
        self.heap.get(&l).copied().unwrap_or(CellState::Unallocated)
    }

    /// The four-state location lemma: an atomic cell is reserved in `h`.
    pub fn four_state_ok(&self) -> bool {
        self.atomic.keys().all(|l| self.cell(*l) == CellState::Reserved)
            && self.heap.values().all(|c| *c != CellState::Unallocated)
    }

    /// Equality of `(h, A, T)`, ignoring bookkeeping.
    pub fn same_state(&self, other: &Self) -> bool {
        self.heap == other.heap && self.atomic == other.atomic && self.threads == other.threads
    }

    pub fn is_terminal(&self) -> bool {
        self.threads.values().all(|c| c.as_value().is_some())
    }

    fn meta_mut(&mut self, t: ThreadId) -> &mut ThreadMeta {
        self.meta.entry(t).or_default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Rule {
    Cons,
    NaRead,
    NaWriteStart,
    NaWriteEnd,
    Free,
    IfTrue,
    IfFalse,
    Let,
    BeginAtomic,
    EndAtomic,
    AtomicOp,
    AtomicOpStutter,
    Fork,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::Cons => "Cons",
            Rule::NaRead => "NA-Read",
            Rule::NaWriteStart => "NA-Write-Start",
            Rule::NaWriteEnd => "NA-Write-End",
            Rule::Free => "Free",
            Rule::IfTrue => "If-True",
            Rule::IfFalse => "If-False",
            Rule::Let => "Let",
            Rule::BeginAtomic => "BeginAtomic",
            Rule::EndAtomic => "EndAtomic",
            Rule::AtomicOp => "AtomicOp",
            Rule::AtomicOpStutter => "AtomicOp-Stutter",
            Rule::Fork => "Fork",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Emitted {
    pub loc: Loc,
    pub op: String,
    pub result: Val,
    pub mark: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepLabel {
    pub thread: ThreadId,
    pub rule: Rule,
    /// Graph events this step accounts for.
    pub events: Vec<TraceEvent>,
}

impl Serialize for StepLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let evs: Vec<Emitted> = self
            .events
            .iter()
            .map(|e| Emitted { loc: e.loc, op: e.op.to_string(), result: e.result, mark: e.mark.as_ref().map(|m| m.to_string()) })
            .collect();
        let mut st = s.serialize_struct("StepLabel", 3)?;
        st.serialize_field("thread", &self.thread)?;
        st.serialize_field("rule", &self.rule.to_string())?;
        st.serialize_field("events", &evs)?;
        st.end()
    }
}

impl fmt::Display for StepLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{} {}", self.thread, self.rule)?;
        for e in &self.events {
            write!(f, " [{} @{} = {}]", e.op, e.loc, e.result)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SafetyVerdict {
    pub safe: bool,
    /// Steps from the initial configuration to one with a stuck thread.
    pub stuck_trace: Option<Vec<StepLabel>>,
    pub stuck_thread: Option<ThreadId>,
    pub stuck_reason: Option<String>,
    /// Explored (configuration, thread) pairs where only stuttering applied.
    pub blocked_count: usize,
    pub configurations: usize,
    /// The four-state lemma held in every explored configuration.
    pub four_state_ok: bool,
}

/// How `AtomicOp` decides `Σ, t, v, o ⊨ ω`.
#[derive(Clone, Copy, Debug)]
pub enum Consistency<'g> {
    /// Witness search over synthetic traces of at most `bound` events.
    WitnessSearch { bound: usize },
    /// The witness induced by a guiding execution: results follow the
    /// graph and the executed events form `E_ex`. With an order, only that
    /// linearization is scheduled.
    GraphGuided { graph: &'g ExecutionGraph, order: Option<&'g [EventId]> },
}

/// Whether `begin_atomic` must immediately follow the cell's initializing
/// write or may come after later nonatomic writes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BeginMode {
    Strict,
    Permissive,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("order is not an hb-consistent linearization of an hb-prefix")]
    NotHbPrefix,
    #[error("event {0} is not its thread's next event")]
    OutOfOrder(EventId),
    #[error("thread of {0} has not started")]
    NotStarted(EventId),
    #[error("replay stuck at {0}: {1}")]
    ReplayStuck(EventId, String),
    #[error("event {0} is blocked: the tied resource is not consistent with it")]
    Blocked(EventId),
    #[error("the program does not produce event {0}")]
    Mismatch(EventId),
}

// ----------------------------------------------------------------------------
// Reduction contexts
// ----------------------------------------------------------------------------

/// `c = K[r]`: the frames of `K` (outermost first) and the redex `r`.
fn decompose(c: &Cmd) -> (Vec<(&String, &Cmd)>, &Cmd) {
    let mut frames = vec![];
    let mut cur = c;
    while let Cmd::Let(x, a, b) = cur {
        if a.as_value().is_some() {
            break;
        }
        frames.push((x, &**b));
        cur = a;
    }
    (frames, cur)
}

fn plug(frames: &[(&String, &Cmd)], c: Cmd) -> Cmd {
    frames.iter().rev().fold(c, |inner, (x, b)| Cmd::Let((*x).clone(), Box::new(inner), Box::new((*b).clone())))
}

enum Local {
    Next(Cmd, Rule),
    Fork { parent: Cmd, child: Cmd },
}

/// Thread-local steps: `Let`, `If` and `Fork`. `None` if the redex touches
/// memory, is stuck, or the thread is done.
fn local_step(c: &Cmd) -> Option<Local> {
    let (frames, r) = decompose(c);
    match r {
        Cmd::Let(x, a, b) => {
            let v = a.as_value()?;
            Some(Local::Next(plug(&frames, substitute(b, v, x)), Rule::Let))
        }
        Cmd::If(e, body) => match e.closed_value()? {
            0 => Some(Local::Next(plug(&frames, Cmd::ret(0)), Rule::IfFalse)),
            _ => Some(Local::Next(plug(&frames, (**body).clone()), Rule::IfTrue)),
        },
        Cmd::Fork(body) => Some(Local::Fork { parent: plug(&frames, Cmd::ret(0)), child: (**body).clone() }),
        _ => None,
    }
}

fn closed(e: &Expr) -> Result<Val, String> {
    e.closed_value().ok_or_else(|| format!("open expression {e:?}"))
}

fn ev(loc: Loc, op: Operation, result: Val, mark: Option<Mark>) -> TraceEvent {
    TraceEvent { loc, op, result, mark }
}

// ----------------------------------------------------------------------------
// Semantics
// ----------------------------------------------------------------------------

struct Guide<'g> {
    g: &'g ExecutionGraph,
    a: Analysis,
    order: Option<&'g [EventId]>,
}

/// What one thread can do in a configuration.
enum Outcome {
    Done,
    Stuck(String),
    /// A guided run left the guiding execution.
    Diverged,
    /// A guided run with a fixed order does not schedule this thread now.
    Unscheduled,
    Moves { moves: Vec<(Configuration, StepLabel)>, stutter: bool },
}

pub struct Semantics<'a> {
    specs: &'a [AtomicSpec],
    /// Candidate results for unguided atomic operations and `end_atomic`.
    domain: Vec<Val>,
    begin: BeginMode,
    search_bound: usize,
    guide: Option<Guide<'a>>,
}

impl<'a> Semantics<'a> {
    pub fn new(p: &'a Program, consistency: Consistency<'a>) -> Self {
        let mut domain = p.literals();
        domain.extend(p.specs.iter().map(|s| s.v0));
        domain.extend([0, 1]);
        domain.sort_unstable();
        domain.dedup();
        let (search_bound, guide) = match consistency {
            Consistency::WitnessSearch { bound } => (bound, None),
            Consistency::GraphGuided { graph, order } => (0, Some(Guide { g: graph, a: Analysis::new(graph), order })),
        };
        Semantics { specs: &p.specs, domain, begin: BeginMode::Permissive, search_bound, guide }
    }

    pub fn with_begin_mode(mut self, m: BeginMode) -> Self {
        self.begin = m;
        self
    }

    fn spec(&self, name: &str) -> Option<&AtomicSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    /// The guiding graph's next event of `t`, if guided.
    fn next_event(&self, cfg: &Configuration, t: ThreadId) -> Option<EventId> {
        let g = self.guide.as_ref()?.g;
        let id = EventId { thread: t, index: cfg.meta.get(&t).map_or(0, |m| m.events) };
        g.events.contains_key(&id).then_some(id)
    }

    /// Whether the emitted events continue `t`'s events in the guiding graph.
    fn follows_guide(&self, cfg: &Configuration, t: ThreadId, evs: &[TraceEvent]) -> bool {
        let Some(gd) = &self.guide else { return true };
        let start = cfg.meta.get(&t).map_or(0, |m| m.events);
        evs.iter().enumerate().all(|(k, e)| {
            let id = EventId { thread: t, index: start + k as u32 };
            gd.g.events.get(&id).is_some_and(|l| l.loc == e.loc && l.op == e.op && l.result == e.result)
                && gd.g.marks.get(&id) == e.mark.as_ref()
        })
    }

    /// With a fixed order, `t` may act only if its next event is the first
    /// one of the order not yet executed.
    fn scheduled(&self, cfg: &Configuration, t: ThreadId) -> bool {
        let Some(Guide { order: Some(order), .. }) = &self.guide else { return true };
        let done = |e: &EventId| e.is_init() || cfg.meta.get(&e.thread).is_some_and(|m| e.index < m.events);
        let first = order.iter().find(|e| !done(e));
        first.is_some_and(|&e| Some(e) == self.next_event(cfg, t))
    }

    /// All head steps of `t`, including stuttering, without `Fork`.
    pub fn head_step(&self, cfg: &Configuration, t: ThreadId) -> Vec<(Configuration, StepLabel)> {
        let Some(c) = cfg.threads.get(&t) else { return vec![] };
        match local_step(c) {
            Some(Local::Next(c2, rule)) => {
                let mut cfg2 = cfg.clone();
                cfg2.threads.insert(t, c2);
                vec![(cfg2, StepLabel { thread: t, rule, events: vec![] })]
            }
            Some(Local::Fork { .. }) => vec![],
            None => match self.memory_step(cfg, t) {
                Outcome::Moves { mut moves, stutter } => {
                    if stutter {
                        moves.push((cfg.clone(), StepLabel { thread: t, rule: Rule::AtomicOpStutter, events: vec![] }));
                    }
                    moves
                }
                _ => vec![],
            },
        }
    }

    /// Every step of every thread: head steps in context plus `Fork`.
    pub fn step(&self, cfg: &Configuration) -> Vec<(Configuration, StepLabel)> {
        let mut out = vec![];
        for &t in cfg.threads.keys() {
            if let Some(Local::Fork { .. }) = cfg.threads.get(&t).and_then(local_step) {
                let mut cfg2 = cfg.clone();
                let label = fork(&mut cfg2, t);
                out.push((cfg2, label));
            } else {
                out.extend(self.head_step(cfg, t));
            }
        }
        out
    }

    /// Steps of `t` whose redex touches memory.
    fn memory_step(&self, cfg: &Configuration, t: ThreadId) -> Outcome {
        let c = &cfg.threads[&t];
        if c.as_value().is_some() {
            return Outcome::Done;
        }
        let (frames, r) = decompose(c);
        let finish = |cfg: &Configuration, v: Val| -> Configuration {
            let mut cfg2 = cfg.clone();
            cfg2.threads.insert(t, plug(&frames, Cmd::ret(v)));
            cfg2
        };
        let stuck = |m: String| Outcome::Stuck(m);
        let one = |cfg2: Configuration, rule: Rule, events: Vec<TraceEvent>| Outcome::Moves {
            moves: vec![(cfg2, StepLabel { thread: t, rule, events })],
            stutter: false,
        };
        match r {
            Cmd::Cons(es) => {
                let vals: Result<Vec<Val>, String> = es.iter().map(closed).collect();
                let vals = match vals {
                    Ok(v) => v,
                    Err(m) => return stuck(m),
                };
                let meta = cfg.meta.get(&t).copied().unwrap_or_default();
                let base = ALLOC_BASE * t.0 as Loc + meta.next_cell;
                let cells: Vec<Loc> = (0..vals.len() as Loc).map(|i| base + i).collect();
                if cells.iter().any(|l| cfg.heap.contains_key(l)) {
                    return stuck("no fresh block".into());
                }
                let mut cfg2 = finish(cfg, base);
                cfg2.meta_mut(t).next_cell += vals.len() as Loc;
                let mut evs = vec![];
                for (l, v) in cells.into_iter().zip(vals) {
                    cfg2.heap.insert(l, CellState::Value(v));
                    cfg2.pristine.insert(l);
                    evs.push(ev(l, Operation::WriteNA(v), 0, Some(Mark::Alloc)));
                }
                one(cfg2, Rule::Cons, evs)
            }
            Cmd::ReadNA(e) => {
                let l = match closed(e) {
                    Ok(l) => l,
                    Err(m) => return stuck(m),
                };
                match cfg.cell(l) {
                    CellState::Value(v) => one(finish(cfg, v), Rule::NaRead, vec![ev(l, Operation::ReadNA, v, None)]),
                    s => stuck(format!("nonatomic read of cell {l} in state {s:?}")),
                }
            }
            Cmd::WriteNA(le, ve) => {
                let (l, v) = match (closed(le), closed(ve)) {
                    (Ok(l), Ok(v)) => (l, v),
                    (Err(m), _) | (_, Err(m)) => return stuck(m),
                };
                match cfg.cell(l) {
                    CellState::Value(_) => {
                        let mut cfg2 = cfg.clone();
                        cfg2.heap.insert(l, CellState::Reserved);
                        cfg2.threads.insert(t, plug(&frames, Cmd::WriteNAInProgress(l, v)));
                        one(cfg2, Rule::NaWriteStart, vec![])
                    }
                    s => stuck(format!("nonatomic write to cell {l} in state {s:?}")),
                }
            }
            Cmd::WriteNAInProgress(l, v) => {
                if cfg.cell(*l) != CellState::Reserved || cfg.atomic.contains_key(l) {
                    return stuck(format!("write in progress to cell {l} lost its reservation"));
                }
                let mut cfg2 = finish(cfg, 0);
                cfg2.heap.insert(*l, CellState::Value(*v));
                cfg2.pristine.remove(l);
                one(cfg2, Rule::NaWriteEnd, vec![ev(*l, Operation::WriteNA(*v), 0, None)])
            }
            Cmd::Free(e) => {
                let l = match closed(e) {
                    Ok(l) => l,
                    Err(m) => return stuck(m),
                };
                match cfg.cell(l) {
                    CellState::Value(_) => {
                        let mut cfg2 = finish(cfg, 0);
                        cfg2.heap.insert(l, CellState::Reserved);
                        cfg2.pristine.remove(&l);
                        one(cfg2, Rule::Free, vec![ev(l, Operation::WriteNA(0), 0, Some(Mark::Free))])
                    }
                    s => stuck(format!("free of cell {l} in state {s:?}")),
                }
            }
            Cmd::BeginAtomic(e, name) => {
                let l = match closed(e) {
                    Ok(l) => l,
                    Err(m) => return stuck(m),
                };
                let Some(spec) = self.spec(name) else { return stuck(format!("unknown specification {name}")) };
                let strict_ok = self.begin == BeginMode::Permissive || cfg.pristine.contains(&l);
                if cfg.cell(l) != CellState::Value(spec.v0) || !strict_ok {
                    return stuck(format!("begin_atomic on cell {l} in state {:?}", cfg.cell(l)));
                }
                let mut cfg2 = finish(cfg, 0);
                cfg2.heap.insert(l, CellState::Reserved);
                cfg2.pristine.remove(&l);
                cfg2.atomic.insert(l, AtomicCell { spec: name.clone(), omega: spec.rho0_total() });
                one(cfg2, Rule::BeginAtomic, vec![ev(l, Operation::WriteNA(spec.v0), 0, Some(Mark::BeginAtomic(name.clone())))])
            }
            Cmd::EndAtomic(e) => {
                let l = match closed(e) {
                    Ok(l) => l,
                    Err(m) => return stuck(m),
                };
                let Some(cell) = cfg.atomic.get(&l) else { return stuck(format!("end_atomic on nonatomic cell {l}")) };
                let spec = self.spec(&cell.spec).expect("installed spec exists");
                // the rule leaves the restored value open; guided runs take the graph's
                let values: Vec<Val> = match self.next_event(cfg, t).map(|id| self.guide.as_ref().unwrap().g.label(id)) {
                    Some(lab) => lab.written_value().into_iter().collect(),
                    None => spec.writable_values(&self.domain),
                };
                let moves = values
                    .into_iter()
                    .map(|v| {
                        let mut cfg2 = finish(cfg, 0);
                        cfg2.atomic.remove(&l);
                        cfg2.heap.insert(l, CellState::Value(v));
                        let evs = vec![ev(l, Operation::WriteNA(v), 0, Some(Mark::EndAtomic))];
                        (cfg2, StepLabel { thread: t, rule: Rule::EndAtomic, events: evs })
                    })
                    .collect();
                Outcome::Moves { moves, stutter: false }
            }
            Cmd::Op(o, e) => {
                let l = match closed(e) {
                    Ok(l) => l,
                    Err(m) => return stuck(m),
                };
                self.atomic_op(cfg, t, o, l, &finish)
            }
            Cmd::Ret(_) | Cmd::If(..) | Cmd::Let(..) | Cmd::Fork(_) => stuck(format!("no rule applies to {r:?}")),
        }
    }

    fn atomic_op(&self, cfg: &Configuration, t: ThreadId, o: &Operation, l: Loc, finish: &dyn Fn(&Configuration, Val) -> Configuration) -> Outcome {
        let Some(cell) = cfg.atomic.get(&l) else {
            return Outcome::Stuck(format!("atomic operation on cell {l} outside atomic mode"));
        };
        let spec = self.spec(&cell.spec).expect("installed spec exists");
        let Some((rho, theta)) = spec.pre_of(o) else {
            return Outcome::Stuck(format!("{o} is not enabled on cell {l}"));
        };
        let Some(rest) = cell.omega.subtract(&Total::at(rho, t, theta)) else {
            return Outcome::Stuck(format!("tied precondition of {o} unavailable on cell {l}"));
        };
        let candidates: Vec<Val> = match &self.guide {
            Some(gd) => match self.next_event(cfg, t) {
                Some(id) if gd.g.label(id).op == *o && gd.g.label(id).loc == l => vec![gd.g.label(id).result],
                _ => return Outcome::Diverged,
            },
            None => self.domain.clone(),
        };
        let mut moves = vec![];
        for v in candidates {
            let Some((rg, rl)) = spec.post_of(o, v) else { continue };
            if !self.entails(cfg, spec, t, v, o, l, &cell.omega) {
                continue;
            }
            let mut cfg2 = finish(cfg, v);
            let omega = rest.compose(&Total::at(rg, t, rl));
            cfg2.atomic.insert(l, AtomicCell { spec: cell.spec.clone(), omega });
            moves.push((cfg2, StepLabel { thread: t, rule: Rule::AtomicOp, events: vec![ev(l, o.clone(), v, None)] }));
        }
        Outcome::Moves { moves, stutter: true }
    }

    /// `Σ, t, v, o ⊨ ω` under the configured oracle.
    #[allow(clippy::too_many_arguments)]
    fn entails(&self, cfg: &Configuration, spec: &AtomicSpec, t: ThreadId, v: Val, o: &Operation, l: Loc, omega: &TotalTied) -> bool {
        match &self.guide {
            None => check_consistent_resource(spec, t, v, o, omega, self.search_bound).is_consistent(),
            Some(gd) => {
                let pivot = self.next_event(cfg, t).expect("guided op has an event");
                guided_witness_holds(gd.g, &gd.a, spec, l, pivot, &|e| {
                    cfg.meta.get(&e.thread).is_some_and(|m| e.index < m.events)
                }, omega)
            }
        }
    }

    /// What `t` can do, with guidance and scheduling applied.
    fn outcome(&self, cfg: &Configuration, t: ThreadId) -> Outcome {
        if !self.scheduled(cfg, t) {
            let c = &cfg.threads[&t];
            return if c.as_value().is_some() { Outcome::Done } else { Outcome::Unscheduled };
        }
        match self.memory_step(cfg, t) {
            Outcome::Moves { moves, stutter } => {
                let total = moves.len();
                let moves: Vec<_> = moves.into_iter().filter(|(_, lab)| self.follows_guide(cfg, t, &lab.events)).collect();
                if moves.is_empty() && !stutter && total > 0 {
                    Outcome::Diverged
                } else {
                    Outcome::Moves { moves, stutter }
                }
            }
            o => o,
        }
    }

    /// Applies local steps of `t` (and of threads it forks) until each
    /// reaches a memory redex, a value, or a stuck redex.
    fn normalize(&self, cfg: &mut Configuration, t: ThreadId, trace: &mut Vec<StepLabel>) {
        let mut todo = vec![t];
        while let Some(u) = todo.pop() {
            while let Some(step) = cfg.threads.get(&u).and_then(local_step) {
                match step {
                    Local::Next(c, rule) => {
                        cfg.threads.insert(u, c);
                        trace.push(StepLabel { thread: u, rule, events: vec![] });
                    }
                    Local::Fork { .. } => {
                        let label = fork(cfg, u);
                        trace.push(label.clone());
                        todo.push(child_of(cfg, u));
                    }
                }
            }
        }
    }

    /// Applies `t`'s memory steps and local steps until one more graph event
    /// has been emitted by `t`.
    fn emit_next(&self, cfg: &mut Configuration, e: EventId) -> Result<(), ReplayError> {
        let t = e.thread;
        let mut sink = vec![];
        while cfg.meta.get(&t).map_or(0, |m| m.events) <= e.index {
            match self.outcome(cfg, t) {
                Outcome::Moves { moves, .. } => {
                    let Some((mut cfg2, lab)) = moves.into_iter().next() else { return Err(ReplayError::Blocked(e)) };
                    cfg2.meta_mut(t).events += lab.events.len() as u32;
                    self.normalize(&mut cfg2, t, &mut sink);
                    *cfg = cfg2;
                }
                Outcome::Stuck(m) => return Err(ReplayError::ReplayStuck(e, m)),
                Outcome::Diverged | Outcome::Done | Outcome::Unscheduled => return Err(ReplayError::Mismatch(e)),
            }
        }
        Ok(())
    }
}

/// The thread most recently forked by `u`.
fn child_of(cfg: &Configuration, u: ThreadId) -> ThreadId {
    let k = cfg.meta[&u].forks - 1;
    u.child(k).expect("thread id overflow")
}

/// The `Fork` rule for `t`, whose redex is a fork.
fn fork(cfg: &mut Configuration, t: ThreadId) -> StepLabel {
    let Some(Local::Fork { parent, child }) = cfg.threads.get(&t).and_then(local_step) else {
        unreachable!("fork redex")
    };
    let k = cfg.meta_mut(t).forks;
    cfg.meta_mut(t).forks += 1;
    let id = t.child(k).expect("thread id overflow");
    cfg.threads.insert(t, parent);
    cfg.threads.insert(id, child);
    cfg.meta.insert(id, ThreadMeta::default());
    StepLabel { thread: t, rule: Rule::Fork, events: vec![] }
}

fn tied_event(g: &ExecutionGraph, e: EventId) -> TiedEvent {
    let l = g.label(e);
    TiedEvent::new(l.thread, l.op.clone(), l.result)
}

/// The witness induced by an execution: `E_ex` is the executed atomic events
/// on `l` after the latest executed `begin_atomic`, `E_at` the rf⁻¹-closure
/// of `E_ex ∪ {pivot}`. Checks the trace conditions and that every
/// hb-consistent order of `E_ex` replays to `omega`.
fn guided_witness_holds(
    g: &ExecutionGraph,
    a: &Analysis,
    spec: &AtomicSpec,
    l: Loc,
    pivot: EventId,
    done: &dyn Fn(EventId) -> bool,
    omega: &TotalTied,
) -> bool {
    let on_l = |e: &EventId| g.label(*e).loc == l;
    let begins: Vec<EventId> = g
        .marks
        .iter()
        .filter(|(e, m)| matches!(m, Mark::BeginAtomic(_)) && on_l(e) && done(**e))
        .map(|(e, _)| *e)
        .collect();
    let Some(&init) = begins.iter().find(|&&b| begins.iter().all(|&c| c == b || a.hb(c, b))) else {
        return false;
    };
    let atomic = |e: EventId| g.label(e).kind().mode().at_least_rlx();
    let ex: Vec<EventId> = g
        .events
        .keys()
        .copied()
        .filter(|&e| on_l(&e) && atomic(e) && done(e) && a.hb(init, e))
        .collect();
    let mut at: BTreeSet<EventId> = ex.iter().copied().collect();
    at.insert(pivot);
    let mut frontier: Vec<EventId> = at.iter().copied().collect();
    while let Some(x) = frontier.pop() {
        if let Some(w) = g.rf_source(x) {
            if w != init && at.insert(w) {
                frontier.push(w);
            }
        }
    }
    let trace_ok = at.iter().all(|&x| {
        let lab = g.label(x);
        on_l(&x)
            && atomic(x)
            && spec.enabled_at(&lab.op, lab.result)
            && a.hb(init, x)
            && (!lab.kind().reads() || g.rf_source(x).is_some_and(|w| w == init || at.contains(&w)))
    });
    if !trace_ok || g.label(init).written_value() != Some(spec.v0) {
        return false;
    }
    let ex_ok = ex.iter().all(|&x| x != pivot && !a.hb(pivot, x))
        && at.iter().all(|&x| !a.hb(x, pivot) || ex.contains(&x));
    ex_ok && all_orders_reach(g, a, spec, &ex, omega)
}

/// Every hb-consistent order of `ex` replays without a failed subtraction
/// and ends at `omega`. Replay from a set depends only on the set, so it
/// suffices to check each (downset, next event) pair.
fn all_orders_reach(g: &ExecutionGraph, a: &Analysis, spec: &AtomicSpec, ex: &[EventId], omega: &TotalTied) -> bool {
    let n = ex.len();
    assert!(n < 20, "too many executed events for subset replay");
    let evs: Vec<TiedEvent> = ex.iter().map(|&e| tied_event(g, e)).collect();
    let preds: Vec<u32> = (0..n)
        .map(|i| (0..n).filter(|&j| a.hb(ex[j], ex[i])).fold(0, |m, j| m | 1 << j))
        .collect();
    let mut seen: BTreeMap<u32, TotalTied> = BTreeMap::new();
    seen.insert(0, spec.rho0_total());
    let mut stack = vec![0u32];
    while let Some(s) = stack.pop() {
        let cur = seen[&s].clone();
        for i in (0..n).filter(|&i| s >> i & 1 == 0 && preds[i] & !s == 0) {
            let e = &evs[i];
            let (Some((pg, pl)), Some((qg, ql))) = (spec.pre_of(&e.op), spec.post_of(&e.op, e.result)) else {
                return false;
            };
            let Some(rest) = cur.subtract(&Total::at(pg, e.thread, pl)) else { return false };
            let next = rest.compose(&Total::at(qg, e.thread, ql));
            let s2 = s | 1 << i;
            if seen.insert(s2, next).is_none() {
                stack.push(s2);
            }
        }
    }
    seen.get(&((1u32 << n) - 1)).is_some_and(|w| w == omega)
}

// ----------------------------------------------------------------------------
// Exploration
// ----------------------------------------------------------------------------

struct Explorer<'s, 'a> {
    sem: &'s Semantics<'a>,
    visited: HashSet<Configuration>,
    blocked: usize,
    four_state_ok: bool,
    max_threads: usize,
    exceeded: Option<String>,
}

struct Stuck {
    trace: Vec<StepLabel>,
    thread: ThreadId,
    reason: String,
}

impl Explorer<'_, '_> {
    fn dfs(&mut self, cfg: Configuration, path: &mut Vec<StepLabel>) -> Option<Stuck> {
        if self.exceeded.is_some() || self.visited.contains(&cfg) {
            return None;
        }
        if self.visited.len() >= MAX_CONFIGURATIONS {
            self.exceeded = Some(format!("more than {MAX_CONFIGURATIONS} configurations"));
            return None;
        }
        if cfg.threads.len() > self.max_threads {
            self.exceeded = Some(format!("more than {} threads", self.max_threads));
            return None;
        }
        self.four_state_ok &= cfg.four_state_ok();
        self.visited.insert(cfg.clone());
        let threads: Vec<ThreadId> = cfg.threads.keys().copied().collect();
        for t in threads {
            match self.sem.outcome(&cfg, t) {
                Outcome::Done | Outcome::Diverged | Outcome::Unscheduled => {}
                Outcome::Stuck(reason) => return Some(Stuck { trace: path.clone(), thread: t, reason }),
                Outcome::Moves { moves, stutter } => {
                    if moves.is_empty() && stutter {
                        self.blocked += 1;
                    }
                    for (mut cfg2, lab) in moves {
                        let mark = path.len();
                        cfg2.meta_mut(t).events += lab.events.len() as u32;
                        path.push(lab);
                        self.sem.normalize(&mut cfg2, t, path);
                        if let Some(s) = self.dfs(cfg2, path) {
                            return Some(s);
                        }
                        path.truncate(mark);
                    }
                }
            }
        }
        None
    }
}

impl Semantics<'_> {
    /// Depth-first search of all interleavings. Thread-local steps are taken
    /// eagerly and stuttering is not expanded; neither changes which memory
    /// steps are reachable.
    pub fn explore(&self, p: &Program, b: &Bounds) -> Result<SafetyVerdict, EnumError> {
        let mut cfg = Configuration::initial(p);
        let mut path = vec![];
        let ts: Vec<ThreadId> = cfg.threads.keys().copied().collect();
        for t in ts {
            self.normalize(&mut cfg, t, &mut path);
        }
        let mut x = Explorer {
            sem: self,
            visited: HashSet::new(),
            blocked: 0,
            four_state_ok: true,
            max_threads: b.max_threads,
            exceeded: None,
        };
        let stuck = x.dfs(cfg, &mut path);
        if let Some(m) = x.exceeded {
            return Err(EnumError::BoundExceeded(m));
        }
        Ok(SafetyVerdict {
            safe: stuck.is_none(),
            stuck_thread: stuck.as_ref().map(|s| s.thread),
            stuck_reason: stuck.as_ref().map(|s| s.reason.clone()),
            stuck_trace: stuck.map(|s| s.trace),
            blocked_count: x.blocked,
            configurations: x.visited.len(),
            four_state_ok: x.four_state_ok,
        })
    }
}

/// Safety of `p`: no reachable configuration has a stuck thread.
pub fn explore_safety(p: &Program, consistency: Consistency, b: &Bounds) -> Result<SafetyVerdict, EnumError> {
    Semantics::new(p, consistency).explore(p, b)
}

// ----------------------------------------------------------------------------
// Replay and correspondence
// ----------------------------------------------------------------------------

/// The configuration reached by executing the events of `order` (an
/// hb-consistent linearization of an hb-prefix of `g`) as opsem steps.
/// Init writes are part of the initial configuration and may be omitted.
pub fn replay_prefix(p: &Program, g: &ExecutionGraph, order: &[EventId]) -> Result<Configuration, ReplayError> {
    let set: BTreeSet<EventId> = order.iter().copied().chain(g.events.keys().copied().filter(|e| e.is_init())).collect();
    if !is_hb_prefix(g, &set) || !order_respects_hb(g, order) || set.iter().any(|e| !g.events.contains_key(e)) {
        return Err(ReplayError::NotHbPrefix);
    }
    let sem = Semantics::new(p, Consistency::GraphGuided { graph: g, order: None });
    let mut cfg = Configuration::initial(p);
    let mut sink = vec![];
    let ts: Vec<ThreadId> = cfg.threads.keys().copied().collect();
    for t in ts {
        sem.normalize(&mut cfg, t, &mut sink);
    }
    for &e in order {
        if e.is_init() {
            continue;
        }
        let Some(m) = cfg.meta.get(&e.thread).copied() else { return Err(ReplayError::NotStarted(e)) };
        if e.index < m.events {
            // emitted together with an earlier event of the same step
            continue;
        }
        if e.index != m.events {
            return Err(ReplayError::OutOfOrder(e));
        }
        sem.emit_next(&mut cfg, e)?;
    }
    Ok(cfg)
}

fn is_hb_prefix(g: &ExecutionGraph, set: &BTreeSet<EventId>) -> bool {
    let a = Analysis::new(g);
    set.iter().all(|&e| g.events.keys().all(|&x| !a.hb(x, e) || set.contains(&x)))
}

/// Per-thread commands after the events of `keep`, with read results taken
/// from the labels and local steps applied eagerly.
fn thread_pool_after(p: &Program, g: &ExecutionGraph, keep: &BTreeSet<EventId>) -> Option<BTreeMap<ThreadId, Cmd>> {
    fn run(t: ThreadId, mut c: Cmd, g: &ExecutionGraph, keep: &BTreeSet<EventId>, out: &mut BTreeMap<ThreadId, Cmd>) -> Option<()> {
        let evs: Vec<EventId> = g.thread_events(t).into_iter().filter(|e| keep.contains(e)).collect();
        let (mut i, mut forks, mut next_cell) = (0usize, 0u32, 0 as Loc);
        loop {
            while let Some(s) = local_step(&c) {
                match s {
                    Local::Next(c2, _) => c = c2,
                    Local::Fork { parent, child } => {
                        run(t.child(forks)?, child, g, keep, out)?;
                        forks += 1;
                        c = parent;
                    }
                }
            }
            if i == evs.len() {
                break;
            }
            let (frames, r) = decompose(&c);
            let lab: &Label = g.label(evs[i]);
            let v = match r {
                Cmd::Cons(es) => {
                    i += es.len();
                    next_cell += es.len() as Loc;
                    ALLOC_BASE * t.0 as Loc + next_cell - es.len() as Loc
                }
                Cmd::ReadNA(_) | Cmd::Op(..) => {
                    i += 1;
                    lab.result
                }
                Cmd::WriteNA(..) | Cmd::WriteNAInProgress(..) | Cmd::Free(_) | Cmd::BeginAtomic(..) | Cmd::EndAtomic(_) => {
                    i += 1;
                    0
                }
                _ => return None,
            };
            if i > evs.len() {
                return None;
            }
            c = plug(&frames, Cmd::ret(v));
        }
        out.insert(t, c);
        Some(())
    }
    let globals = p.globals();
    let mut out = BTreeMap::new();
    for (t, c) in p.main_threads() {
        let c = globals.iter().fold(c.clone(), |c, (x, v)| substitute(&c, *v, x));
        run(t, c, g, keep, &mut out)?;
    }
    Some(out)
}

/// Mode of `l` right after the hb-maximal conversion among `evs`.
fn final_conversion(g: &ExecutionGraph, a: &Analysis, evs: &[EventId]) -> Option<EventId> {
    let conv: Vec<EventId> = evs
        .iter()
        .copied()
        .filter(|e| matches!(g.marks.get(e), Some(Mark::BeginAtomic(_) | Mark::EndAtomic)))
        .collect();
    conv.iter().copied().find(|&c| conv.iter().all(|&d| d == c || a.hb(d, c)))
}

/// `P ∼ cfg` for the hb-prefix `prefix` of `g` (init writes are always part
/// of the prefix).
pub fn config_corresponds(p: &Program, g: &ExecutionGraph, prefix: &BTreeSet<EventId>, cfg: &Configuration) -> bool {
    let keep: BTreeSet<EventId> = prefix.iter().copied().chain(g.events.keys().copied().filter(|e| e.is_init())).collect();
    if !keep.iter().all(|e| g.events.contains_key(e)) || !is_hb_prefix(g, &keep) {
        return false;
    }
    let sub = restrict_unchecked(g, &keep);
    let a = Analysis::new(&sub);
    if thread_pool_after(p, g, &keep).as_ref() != Some(&cfg.threads) {
        return false;
    }
    if find_data_races(&sub, &sub.mode_events()).is_racy() {
        return false;
    }
    if !check_grounded(&sub, &p.specs).is_grounded() {
        return false;
    }
    let mut heap = BTreeMap::new();
    let mut atomic = BTreeMap::new();
    for l in sub.locations() {
        let evs: Vec<EventId> = sub.events.keys().copied().filter(|e| sub.label(*e).loc == l).collect();
        // mode-well-formedness: each access sees the mode set by the
        // hb-maximal earlier conversion
        for &e in &evs {
            let before: Vec<EventId> = evs.iter().copied().filter(|&x| a.hb(x, e)).collect();
            let atomic_mode = matches!(final_conversion(&sub, &a, &before).and_then(|c| sub.marks.get(&c)), Some(Mark::BeginAtomic(_)));
            let is_atomic = sub.label(e).kind().mode().at_least_rlx() || matches!(sub.marks.get(&e), Some(Mark::EndAtomic));
            if is_atomic != atomic_mode {
                return false;
            }
        }
        match final_conversion(&sub, &a, &evs).and_then(|c| sub.marks.get(&c).map(|m| (c, m))) {
            Some((b, Mark::BeginAtomic(name))) => {
                let Some(spec) = p.spec(name) else { return false };
                let ops: Vec<TiedEvent> = evs
                    .iter()
                    .copied()
                    .filter(|&e| sub.label(e).kind().mode().at_least_rlx() && a.hb(b, e))
                    .map(|e| tied_event(&sub, e))
                    .collect();
                let Ok(Some(omega)) = net_resource(spec, &ops) else { return false };
                heap.insert(l, CellState::Reserved);
                atomic.insert(l, AtomicCell { spec: name.clone(), omega });
            }
            _ => {
                let writes: Vec<EventId> = evs.iter().copied().filter(|&e| sub.label(e).kind().writes()).collect();
                let Some(&last) = writes.iter().find(|&&w| writes.iter().all(|&x| x == w || a.hb(x, w))) else {
                    return false;
                };
                let state = match sub.marks.get(&last) {
                    Some(Mark::Free) => CellState::Reserved,
                    _ => match sub.label(last).written_value() {
                        Some(v) => CellState::Value(v),
                        None => return false,
                    },
                };
                heap.insert(l, state);
            }
        }
    }
    heap == cfg.heap && atomic == cfg.atomic
}
