//! C20 execution graphs: events, labels, the four base relations, and the
//! well-formedness conditions over them.
//!
//! Events are identified by `(thread, po-index)`. The initialization thread is
//! [`ThreadId::INIT`]; its events are pairwise po-unordered and po-precede
//! every access of their location. Relations are stored as sets of pairs; `po`
//! and `mo` are kept transitively closed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod format;
pub use format::{graph_from_json, graph_to_json, parse_graph, print_graph, FormatError};

pub type Loc = i64;
pub type Val = i64;

/// Thread identifier. Thread 0 is the initialization thread; top-level
/// threads are numbered from 1 and forked children get `100 * parent + k + 1`
/// for the parent's `k`-th fork.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ThreadId(pub u32);

impl ThreadId {
    pub const INIT: ThreadId = ThreadId(0);

    pub fn is_init(self) -> bool {
        self == Self::INIT
    }

    /// Id of the `ordinal`-th thread forked by `self`.
    pub fn child(self, ordinal: u32) -> Option<ThreadId> {
        self.0.checked_mul(100)?.checked_add(ordinal + 1).map(ThreadId)
    }
}

impl fmt::Display for ThreadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventId {
    pub thread: ThreadId,
    pub index: u32,
}

impl EventId {
    pub fn new(thread: u32, index: u32) -> Self {
        EventId { thread: ThreadId(thread), index }
    }

    pub fn is_init(self) -> bool {
        self.thread.is_init()
    }
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.thread.0, self.index)
    }
}

impl std::str::FromStr for EventId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (t, i) = s.split_once('.').ok_or_else(|| format!("bad event id `{s}`"))?;
        let thread = t.parse().map_err(|_| format!("bad thread in `{s}`"))?;
        let index = i.parse().map_err(|_| format!("bad index in `{s}`"))?;
        Ok(EventId::new(thread, index))
    }
}

/// Update function of a read-modify-write.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum UpdateFn {
    Add(Val),
    Set(Val),
    Table { map: BTreeMap<Val, Val>, default: Val },
}

impl UpdateFn {
    /// Applies the function. `Add` wraps on overflow.
    pub fn apply(&self, v: Val) -> Val {
        match self {
            UpdateFn::Add(k) => v.wrapping_add(*k),
            UpdateFn::Set(x) => *x,
            UpdateFn::Table { map, default } => *map.get(&v).unwrap_or(default),
        }
    }

    pub fn checked_apply(&self, v: Val) -> Option<Val> {
        match self {
            UpdateFn::Add(k) => v.checked_add(*k),
            _ => Some(self.apply(v)),
        }
    }
}

impl fmt::Display for UpdateFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UpdateFn::Add(k) => write!(f, "add:{k}"),
            UpdateFn::Set(v) => write!(f, "set:{v}"),
            UpdateFn::Table { map, default } => {
                write!(f, "table:")?;
                for (k, v) in map {
                    write!(f, "{k}>{v},")?;
                }
                write!(f, "_>{default}")
            }
        }
    }
}

impl std::str::FromStr for UpdateFn {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("bad update function `{s}`");
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "add" => rest.parse().map(UpdateFn::Add).map_err(|_| bad()),
            "set" => rest.parse().map(UpdateFn::Set).map_err(|_| bad()),
            "table" => {
                let mut map = BTreeMap::new();
                let mut default = None;
                for entry in rest.split(',') {
                    let (k, v) = entry.split_once('>').ok_or_else(bad)?;
                    let v: Val = v.parse().map_err(|_| bad())?;
                    if k == "_" {
                        default = Some(v);
                    } else {
                        map.insert(k.parse().map_err(|_| bad())?, v);
                    }
                }
                Ok(UpdateFn::Table { map, default: default.ok_or_else(bad)? })
            }
            _ => Err(bad()),
        }
    }
}

/// Access mode on the `na < rlx < acq < acqrel`, `rlx < rel < acqrel` lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Na,
    Rlx,
    Acq,
    Rel,
    AcqRel,
}

impl Mode {
    pub fn at_least_rlx(self) -> bool {
        self != Mode::Na
    }
    pub fn is_acquire(self) -> bool {
        matches!(self, Mode::Acq | Mode::AcqRel)
    }
    pub fn is_release(self) -> bool {
        matches!(self, Mode::Rel | Mode::AcqRel)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OpKind {
    ReadNA,
    ReadRlx,
    ReadAcq,
    FenceAcq,
    FenceRel,
    WriteNA,
    WriteRlx,
    WriteRel,
    RmwRlx,
    RmwRel,
    RmwAcq,
    RmwAcqRel,
}

impl OpKind {
    pub const ALL: [OpKind; 12] = [
        OpKind::ReadNA,
        OpKind::ReadRlx,
        OpKind::ReadAcq,
        OpKind::FenceAcq,
        OpKind::FenceRel,
        OpKind::WriteNA,
        OpKind::WriteRlx,
        OpKind::WriteRel,
        OpKind::RmwRlx,
        OpKind::RmwRel,
        OpKind::RmwAcq,
        OpKind::RmwAcqRel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::ReadNA => "R_na",
            OpKind::ReadRlx => "R_rlx",
            OpKind::ReadAcq => "R_acq",
            OpKind::FenceAcq => "F_acq",
            OpKind::FenceRel => "F_rel",
            OpKind::WriteNA => "W_na",
            OpKind::WriteRlx => "W_rlx",
            OpKind::WriteRel => "W_rel",
            OpKind::RmwRlx => "RMW_rlx",
            OpKind::RmwRel => "RMW_rel",
            OpKind::RmwAcq => "RMW_acq",
            OpKind::RmwAcqRel => "RMW_acqrel",
        }
    }

    pub fn from_name(s: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn mode(self) -> Mode {
        use OpKind::*;
        match self {
            ReadNA | WriteNA => Mode::Na,
            ReadRlx | WriteRlx | RmwRlx => Mode::Rlx,
            ReadAcq | FenceAcq | RmwAcq => Mode::Acq,
            WriteRel | FenceRel | RmwRel => Mode::Rel,
            RmwAcqRel => Mode::AcqRel,
        }
    }

    /// Plain read (not an RMW).
    pub fn is_read(self) -> bool {
        matches!(self, OpKind::ReadNA | OpKind::ReadRlx | OpKind::ReadAcq)
    }
    /// Plain write (not an RMW).
    pub fn is_write(self) -> bool {
        matches!(self, OpKind::WriteNA | OpKind::WriteRlx | OpKind::WriteRel)
    }
    pub fn is_rmw(self) -> bool {
        matches!(self, OpKind::RmwRlx | OpKind::RmwRel | OpKind::RmwAcq | OpKind::RmwAcqRel)
    }
    pub fn is_fence(self) -> bool {
        matches!(self, OpKind::FenceAcq | OpKind::FenceRel)
    }
    /// Read or RMW.
    pub fn reads(self) -> bool {
        self.is_read() || self.is_rmw()
    }
    /// Write or RMW.
    pub fn writes(self) -> bool {
        self.is_write() || self.is_rmw()
    }
    pub fn is_nonatomic(self) -> bool {
        self.mode() == Mode::Na
    }
    pub fn is_acquire(self) -> bool {
        self.mode().is_acquire()
    }
    pub fn is_release(self) -> bool {
        self.mode().is_release()
    }
}

/// A memory operation of the C20 operation set.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Operation {
    ReadNA,
    ReadRlx,
    ReadAcq,
    FenceAcq,
    FenceRel,
    WriteNA(Val),
    WriteRlx(Val),
    WriteRel(Val),
    RmwRlx(UpdateFn),
    RmwRel(UpdateFn),
    RmwAcq(UpdateFn),
    RmwAcqRel(UpdateFn),
}

impl Operation {
    pub fn kind(&self) -> OpKind {
        match self {
            Operation::ReadNA => OpKind::ReadNA,
            Operation::ReadRlx => OpKind::ReadRlx,
            Operation::ReadAcq => OpKind::ReadAcq,
            Operation::FenceAcq => OpKind::FenceAcq,
            Operation::FenceRel => OpKind::FenceRel,
            Operation::WriteNA(_) => OpKind::WriteNA,
            Operation::WriteRlx(_) => OpKind::WriteRlx,
            Operation::WriteRel(_) => OpKind::WriteRel,
            Operation::RmwRlx(_) => OpKind::RmwRlx,
            Operation::RmwRel(_) => OpKind::RmwRel,
            Operation::RmwAcq(_) => OpKind::RmwAcq,
            Operation::RmwAcqRel(_) => OpKind::RmwAcqRel,
        }
    }

    pub fn value(&self) -> Option<Val> {
        match self {
            Operation::WriteNA(v) | Operation::WriteRlx(v) | Operation::WriteRel(v) => Some(*v),
            _ => None,
        }
    }

    pub fn update(&self) -> Option<&UpdateFn> {
        match self {
            Operation::RmwRlx(f)
            | Operation::RmwRel(f)
            | Operation::RmwAcq(f)
            | Operation::RmwAcqRel(f) => Some(f),
            _ => None,
        }
    }

    /// Rebuilds an operation from its kind and payload. Fails when the payload
    /// does not match the kind.
    pub fn from_parts(kind: OpKind, value: Option<Val>, update: Option<UpdateFn>) -> Option<Self> {
        use OpKind::*;
        Some(match (kind, value, update) {
            (ReadNA, None, None) => Operation::ReadNA,
            (ReadRlx, None, None) => Operation::ReadRlx,
            (ReadAcq, None, None) => Operation::ReadAcq,
            (FenceAcq, None, None) => Operation::FenceAcq,
            (FenceRel, None, None) => Operation::FenceRel,
            (WriteNA, Some(v), None) => Operation::WriteNA(v),
            (WriteRlx, Some(v), None) => Operation::WriteRlx(v),
            (WriteRel, Some(v), None) => Operation::WriteRel(v),
            (RmwRlx, None, Some(f)) => Operation::RmwRlx(f),
            (RmwRel, None, Some(f)) => Operation::RmwRel(f),
            (RmwAcq, None, Some(f)) => Operation::RmwAcq(f),
            (RmwAcqRel, None, Some(f)) => Operation::RmwAcqRel(f),
            _ => return None,
        })
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind().name())?;
        if let Some(v) = self.value() {
            write!(f, "({v})")?;
        }
        if let Some(u) = self.update() {
            write!(f, "({u})")?;
        }
        Ok(())
    }
}

/// Event label `(t, l, v, o)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Label {
    pub thread: ThreadId,
    pub loc: Loc,
    pub result: Val,
    pub op: Operation,
}

impl Label {
    pub fn new(thread: ThreadId, loc: Loc, result: Val, op: Operation) -> Self {
        Label { thread, loc, result, op }
    }

    pub fn kind(&self) -> OpKind {
        self.op.kind()
    }

    /// Value stored by a write or RMW.
    pub fn written_value(&self) -> Option<Val> {
        match (&self.op.value(), self.op.update()) {
            (Some(v), _) => Some(*v),
            (None, Some(f)) => Some(f.apply(self.result)),
            _ => None,
        }
    }

    /// Value obtained by a read or RMW.
    pub fn read_value(&self) -> Option<Val> {
        self.kind().reads().then_some(self.result)
    }
}

/// Pseudo-event marks for allocation, deallocation and mode changes. Marked
/// events are labelled with ordinary nonatomic accesses.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mark {
    Alloc,
    Free,
    BeginAtomic(String),
    EndAtomic,
}

impl fmt::Display for Mark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mark::Alloc => write!(f, "alloc"),
            Mark::Free => write!(f, "free"),
            Mark::BeginAtomic(s) => write!(f, "begin:{s}"),
            Mark::EndAtomic => write!(f, "end"),
        }
    }
}

impl std::str::FromStr for Mark {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "alloc" => Ok(Mark::Alloc),
            "free" => Ok(Mark::Free),
            "end" => Ok(Mark::EndAtomic),
            _ => s
                .strip_prefix("begin:")
                .map(|n| Mark::BeginAtomic(n.to_string()))
                .ok_or_else(|| format!("bad mark `{s}`")),
        }
    }
}

pub type EdgeSet = BTreeSet<(EventId, EventId)>;

#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExecutionGraph {
    pub events: BTreeMap<EventId, Label>,
    pub po: EdgeSet,
    pub rf: EdgeSet,
    pub mo: EdgeSet,
    pub rmw: EdgeSet,
    /// `(e, t)`: thread `t` was forked after `e`, the last event that
    /// precedes the fork in the forking thread (or its own ancestors).
    pub spawn: BTreeSet<(EventId, ThreadId)>,
    pub marks: BTreeMap<EventId, Mark>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("graph is not high-level: rmw relation is non-empty")]
    NotHighLevel,
    #[error("graph is not low-level: event {0} carries an RMW operation")]
    NotLowLevel(EventId),
    #[error("update function for {0} does not produce the written value")]
    InconsistentUpdateFn(EventId),
    #[error("missing update function for rmw read {0}")]
    MissingUpdateFn(EventId),
    #[error("unknown event {0}")]
    UnknownEvent(EventId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WfRule {
    /// Labels: writes and fences have result 0.
    Label,
    Po,
    Rf,
    Mo,
    Rmw,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: WfRule,
    pub pair: (EventId, EventId),
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WellFormednessReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl ExecutionGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn label(&self, e: EventId) -> &Label {
        &self.events[&e]
    }

    pub fn event_ids(&self) -> impl Iterator<Item = EventId> + '_ {
        self.events.keys().copied()
    }

    pub fn threads(&self) -> BTreeSet<ThreadId> {
        self.events.keys().map(|e| e.thread).collect()
    }

    /// Events of `t` in program order.
    pub fn thread_events(&self, t: ThreadId) -> Vec<EventId> {
        self.events.keys().filter(|e| e.thread == t).copied().collect()
    }

    pub fn init_event(&self, loc: Loc) -> Option<EventId> {
        self.events
            .iter()
            .find(|(e, l)| e.is_init() && l.loc == loc)
            .map(|(e, _)| *e)
    }

    pub fn rf_source(&self, r: EventId) -> Option<EventId> {
        self.rf.iter().find(|(_, b)| *b == r).map(|(a, _)| *a)
    }

    pub fn locations(&self) -> BTreeSet<Loc> {
        self.events.values().map(|l| l.loc).collect()
    }

    pub fn is_high_level(&self) -> bool {
        self.rmw.is_empty()
    }

    pub fn is_low_level(&self) -> bool {
        self.events.values().all(|l| !l.kind().is_rmw())
    }

    /// Recomputes `po` from thread membership and indices: each thread is
    /// totally ordered by index, and each init write precedes every other
    /// event on its location.
    pub fn rebuild_po(&mut self) {
        let mut po = EdgeSet::new();
        let ids: Vec<EventId> = self.events.keys().copied().collect();
        for &a in &ids {
            for &b in &ids {
                if a == b {
                    continue;
                }
                if a.is_init() {
                    if !b.is_init() && self.events[&a].loc == self.events[&b].loc {
                        po.insert((a, b));
                    }
                } else if a.thread == b.thread && a.index < b.index {
                    po.insert((a, b));
                }
            }
        }
        self.po = po;
    }

    /// Sets the modification order of one location from an explicit sequence.
    pub fn set_mo_chain(&mut self, chain: &[EventId]) {
        for (i, &a) in chain.iter().enumerate() {
            for &b in &chain[i + 1..] {
                self.mo.insert((a, b));
            }
        }
    }

    /// Writes of `loc` in modification order.
    pub fn mo_sequence(&self, loc: Loc) -> Vec<EventId> {
        let mut ws: Vec<EventId> = self
            .events
            .iter()
            .filter(|(_, l)| l.loc == loc && l.kind().writes())
            .map(|(e, _)| *e)
            .collect();
        ws.sort_by_key(|w| self.mo.iter().filter(|(_, b)| b == w).count());
        ws
    }

    /// Mode pseudo-events (allocation, free, begin/end atomic).
    pub fn mode_events(&self) -> BTreeSet<EventId> {
        self.marks.keys().copied().collect()
    }
}

/// Incremental constructor used by tests and by the enumerator.
#[derive(Clone, Debug, Default)]
pub struct GraphBuilder {
    g: ExecutionGraph,
    next_index: BTreeMap<ThreadId, u32>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds the nonatomic initializing write of 0 to `loc`.
    pub fn init(&mut self, loc: Loc) -> EventId {
        self.push(ThreadId::INIT, loc, 0, Operation::WriteNA(0))
    }

    /// Appends an event to the end of `thread`.
    pub fn push(&mut self, thread: ThreadId, loc: Loc, result: Val, op: Operation) -> EventId {
        let idx = self.next_index.entry(thread).or_insert(0);
        let id = EventId { thread, index: *idx };
        *idx += 1;
        self.g.events.insert(id, Label::new(thread, loc, result, op));
        id
    }

    pub fn mark(&mut self, e: EventId, m: Mark) -> &mut Self {
        self.g.marks.insert(e, m);
        self
    }

    pub fn rf(&mut self, w: EventId, r: EventId) -> &mut Self {
        self.g.rf.insert((w, r));
        self
    }

    pub fn mo(&mut self, chain: &[EventId]) -> &mut Self {
        self.g.set_mo_chain(chain);
        self
    }

    pub fn rmw(&mut self, r: EventId, w: EventId) -> &mut Self {
        self.g.rmw.insert((r, w));
        self
    }

    pub fn spawn(&mut self, after: EventId, child: ThreadId) -> &mut Self {
        self.g.spawn.insert((after, child));
        self
    }

    /// Finishes the graph; `po` is derived and init writes are placed first
    /// in `mo` of their location.
    pub fn build(mut self) -> ExecutionGraph {
        self.g.rebuild_po();
        let inits: Vec<(EventId, Loc)> = self
            .g
            .events
            .iter()
            .filter(|(e, _)| e.is_init())
            .map(|(e, l)| (*e, l.loc))
            .collect();
        for (i, loc) in inits {
            let others: Vec<EventId> = self
                .g
                .events
                .iter()
                .filter(|(e, l)| **e != i && l.loc == loc && l.kind().writes())
                .map(|(e, _)| *e)
                .collect();
            for w in others {
                if !self.g.mo.contains(&(w, i)) {
                    self.g.mo.insert((i, w));
                }
            }
        }
        self.g
    }
}

/// Checks the structural conditions on `po`, `rf`, `mo` and `rmw`.
pub fn check_well_formed(g: &ExecutionGraph) -> WellFormednessReport {
    let mut v = Vec::new();
    let mut push = |rule, a: EventId, b: EventId, detail: String| {
        v.push(Violation { rule, pair: (a, b), detail })
    };

    for (&e, l) in &g.events {
        if l.thread != e.thread {
            push(WfRule::Label, e, e, "label thread differs from event thread".into());
        }
        if (l.kind().is_write() || l.kind().is_fence()) && l.result != 0 {
            push(WfRule::Label, e, e, "write or fence with nonzero result".into());
        }
    }

    // po
    for &(a, b) in &g.po {
        if !g.events.contains_key(&a) || !g.events.contains_key(&b) {
            push(WfRule::Po, a, b, "po mentions an unknown event".into());
            continue;
        }
        if a == b {
            push(WfRule::Po, a, b, "po is reflexive".into());
        } else if a.is_init() {
            if b.is_init() || g.events[&a].loc != g.events[&b].loc {
                push(WfRule::Po, a, b, "init event ordered before a non-access".into());
            }
        } else if a.thread != b.thread {
            push(WfRule::Po, a, b, "po relates events of different threads".into());
        } else if a.index > b.index {
            push(WfRule::Po, a, b, "po disagrees with thread index order".into());
        }
    }
    for (&a, la) in &g.events {
        if a.is_init() {
            for (&b, lb) in &g.events {
                if !b.is_init() && la.loc == lb.loc && !g.po.contains(&(a, b)) {
                    push(WfRule::Po, a, b, "init event does not precede an access of its location".into());
                }
            }
            continue;
        }
        for &b in g.events.keys() {
            if a < b && a.thread == b.thread && !g.po.contains(&(a, b)) && !g.po.contains(&(b, a)) {
                push(WfRule::Po, a, b, "thread events not totally ordered".into());
            }
        }
    }

    // rf
    let mut sources: BTreeMap<EventId, EventId> = BTreeMap::new();
    for &(w, r) in &g.rf {
        let (Some(lw), Some(lr)) = (g.events.get(&w), g.events.get(&r)) else {
            push(WfRule::Rf, w, r, "rf mentions an unknown event".into());
            continue;
        };
        if !lw.kind().writes() || !lr.kind().reads() {
            push(WfRule::Rf, w, r, "rf must go from a write/RMW to a read/RMW".into());
            continue;
        }
        if lw.loc != lr.loc {
            push(WfRule::Rf, w, r, "rf location mismatch".into());
        }
        if lw.written_value() != Some(lr.result) {
            push(WfRule::Rf, w, r, "rf value mismatch".into());
        }
        if let Some(prev) = sources.insert(r, w) {
            push(WfRule::Rf, prev, r, "read has more than one rf source".into());
        }
        if w.thread == r.thread && !w.is_init() && !g.po.contains(&(w, r)) {
            push(WfRule::Rf, w, r, "same-thread rf against program order".into());
        }
    }

    // mo
    for &(a, b) in &g.mo {
        let (Some(la), Some(lb)) = (g.events.get(&a), g.events.get(&b)) else {
            push(WfRule::Mo, a, b, "mo mentions an unknown event".into());
            continue;
        };
        if a == b {
            push(WfRule::Mo, a, b, "mo is reflexive".into());
        }
        if !la.kind().writes() || !lb.kind().writes() {
            push(WfRule::Mo, a, b, "mo relates a non-write".into());
        }
        if la.loc != lb.loc {
            push(WfRule::Mo, a, b, "mo relates different locations".into());
        }
        if g.mo.contains(&(b, a)) && a < b {
            push(WfRule::Mo, a, b, "mo is not antisymmetric".into());
        }
    }
    let writes: Vec<(EventId, Loc)> = g
        .events
        .iter()
        .filter(|(_, l)| l.kind().writes())
        .map(|(e, l)| (*e, l.loc))
        .collect();
    for (i, &(a, la)) in writes.iter().enumerate() {
        for &(b, lb) in &writes[i + 1..] {
            if la == lb && !g.mo.contains(&(a, b)) && !g.mo.contains(&(b, a)) {
                push(WfRule::Mo, a, b, "same-location writes unordered by mo".into());
            }
        }
    }
    for &(a, b) in &g.mo {
        for &(b2, c) in &g.mo {
            if b == b2 && a != c && !g.mo.contains(&(a, c)) {
                push(WfRule::Mo, a, c, "mo is not transitive".into());
            }
        }
    }

    // rmw
    for &(r, w) in &g.rmw {
        let (Some(lr), Some(lw)) = (g.events.get(&r), g.events.get(&w)) else {
            push(WfRule::Rmw, r, w, "rmw mentions an unknown event".into());
            continue;
        };
        if !lr.kind().is_read() || !lw.kind().is_write() {
            push(WfRule::Rmw, r, w, "rmw must relate a read to a write".into());
        }
        let immediate = r.thread == w.thread
            && !r.is_init()
            && g.po.contains(&(r, w))
            && !g.po.iter().any(|&(x, y)| x == r && g.po.contains(&(y, w)));
        if !immediate {
            push(WfRule::Rmw, r, w, "rmw target is not the immediate po successor".into());
        }
    }

    WellFormednessReport { ok: v.is_empty(), violations: v }
}

/// True iff every read and RMW has an rf source.
pub fn is_rf_complete(g: &ExecutionGraph) -> bool {
    let read: BTreeSet<EventId> = g.rf.iter().map(|(_, r)| *r).collect();
    g.events
        .iter()
        .filter(|(_, l)| l.kind().reads())
        .all(|(e, _)| read.contains(e))
}

/// Induced subgraph on `keep`.
pub fn restrict(g: &ExecutionGraph, keep: &BTreeSet<EventId>) -> Result<ExecutionGraph, GraphError> {
    if let Some(e) = keep.iter().find(|e| !g.events.contains_key(e)) {
        return Err(GraphError::UnknownEvent(*e));
    }
    Ok(restrict_unchecked(g, keep))
}

pub(crate) fn restrict_unchecked(g: &ExecutionGraph, keep: &BTreeSet<EventId>) -> ExecutionGraph {
    let both = |s: &EdgeSet| -> EdgeSet {
        s.iter()
            .filter(|(a, b)| keep.contains(a) && keep.contains(b))
            .copied()
            .collect()
    };
    ExecutionGraph {
        events: g
            .events
            .iter()
            .filter(|(e, _)| keep.contains(e))
            .map(|(e, l)| (*e, l.clone()))
            .collect(),
        po: both(&g.po),
        rf: both(&g.rf),
        mo: both(&g.mo),
        rmw: both(&g.rmw),
        spawn: g.spawn.iter().filter(|(e, _)| keep.contains(e)).copied().collect(),
        marks: g
            .marks
            .iter()
            .filter(|(e, _)| keep.contains(e))
            .map(|(e, m)| (*e, m.clone()))
            .collect(),
    }
}

/// Read and write halves of an RMW mode.
fn split_modes(kind: OpKind) -> (fn(Val) -> Operation, Operation) {
    match kind {
        OpKind::RmwRlx => (Operation::WriteRlx, Operation::ReadRlx),
        OpKind::RmwRel => (Operation::WriteRel, Operation::ReadRlx),
        OpKind::RmwAcq => (Operation::WriteRlx, Operation::ReadAcq),
        OpKind::RmwAcqRel => (Operation::WriteRel, Operation::ReadAcq),
        _ => unreachable!("not an RMW"),
    }
}

fn remap_edges(s: &EdgeSet, src: impl Fn(EventId) -> EventId, dst: impl Fn(EventId) -> EventId) -> EdgeSet {
    s.iter().map(|&(a, b)| (src(a), dst(b))).collect()
}

/// Splits every RMW event into a read and a write linked by `rmw`.
pub fn to_low_level(g: &ExecutionGraph) -> Result<ExecutionGraph, GraphError> {
    if !g.is_high_level() {
        return Err(GraphError::NotHighLevel);
    }
    // old id -> (read-side id, write-side id)
    let mut map: BTreeMap<EventId, (EventId, EventId)> = BTreeMap::new();
    let mut out = ExecutionGraph::new();
    let mut shift: BTreeMap<ThreadId, u32> = BTreeMap::new();
    for (&e, l) in &g.events {
        let s = *shift.get(&e.thread).unwrap_or(&0);
        let first = EventId { thread: e.thread, index: e.index + s };
        if let Some(f) = l.op.update() {
            let second = EventId { thread: e.thread, index: e.index + s + 1 };
            let (wmk, rop) = split_modes(l.kind());
            out.events.insert(first, Label::new(l.thread, l.loc, l.result, rop));
            out.events.insert(second, Label::new(l.thread, l.loc, 0, wmk(f.apply(l.result))));
            out.rmw.insert((first, second));
            shift.insert(e.thread, s + 1);
            map.insert(e, (first, second));
        } else {
            out.events.insert(first, l.clone());
            map.insert(e, (first, first));
        }
    }
    let rd = |e: EventId| map[&e].0;
    let wr = |e: EventId| map[&e].1;
    out.rf = remap_edges(&g.rf, wr, rd);
    out.mo = remap_edges(&g.mo, wr, wr);
    out.spawn = g.spawn.iter().map(|&(e, t)| (wr(e), t)).collect();
    out.marks = g.marks.iter().map(|(e, m)| (rd(*e), m.clone())).collect();
    out.rebuild_po();
    Ok(out)
}

fn merge_modes(read: OpKind, write: OpKind) -> fn(UpdateFn) -> Operation {
    match (read.is_acquire(), write.is_release()) {
        (false, false) => Operation::RmwRlx,
        (false, true) => Operation::RmwRel,
        (true, false) => Operation::RmwAcq,
        (true, true) => Operation::RmwAcqRel,
    }
}

/// Collapses each rmw-related read/write pair into a single RMW event, using
/// `fns` (keyed by the read half) as update functions.
pub fn to_high_level(
    g: &ExecutionGraph,
    fns: &BTreeMap<EventId, UpdateFn>,
) -> Result<ExecutionGraph, GraphError> {
    if let Some((e, _)) = g.events.iter().find(|(_, l)| l.kind().is_rmw()) {
        return Err(GraphError::NotLowLevel(*e));
    }
    let pair_of_write: BTreeMap<EventId, EventId> = g.rmw.iter().map(|&(r, w)| (w, r)).collect();
    let pair_of_read: BTreeMap<EventId, EventId> = g.rmw.iter().copied().collect();
    let mut map: BTreeMap<EventId, EventId> = BTreeMap::new();
    let mut out = ExecutionGraph::new();
    let mut shift: BTreeMap<ThreadId, u32> = BTreeMap::new();
    for (&e, l) in &g.events {
        if let Some(&r) = pair_of_write.get(&e) {
            map.insert(e, map[&r]);
            shift.entry(e.thread).and_modify(|s| *s += 1).or_insert(1);
            continue;
        }
        let s = *shift.get(&e.thread).unwrap_or(&0);
        let id = EventId { thread: e.thread, index: e.index - s };
        map.insert(e, id);
        if let Some(&w) = pair_of_read.get(&e) {
            let f = fns.get(&e).ok_or(GraphError::MissingUpdateFn(e))?;
            let lw = &g.events[&w];
            if lw.written_value() != Some(f.apply(l.result)) {
                return Err(GraphError::InconsistentUpdateFn(e));
            }
            let mk = merge_modes(l.kind(), lw.kind());
            out.events.insert(id, Label::new(l.thread, l.loc, l.result, mk(f.clone())));
        } else {
            out.events.insert(id, l.clone());
        }
    }
    let m = |e: EventId| map[&e];
    out.rf = remap_edges(&g.rf, m, m);
    out.mo = remap_edges(&g.mo, m, m);
    out.spawn = g.spawn.iter().map(|&(e, t)| (m(e), t)).collect();
    out.marks = g.marks.iter().map(|(e, mk)| (m(*e), mk.clone())).collect();
    out.rebuild_po();
    Ok(out)
}

/// The update functions that recover `g` from `to_low_level(g)`, keyed by the
/// read halves of the low-level graph.
pub fn natural_update_fns(g: &ExecutionGraph) -> BTreeMap<EventId, UpdateFn> {
    let mut out = BTreeMap::new();
    let mut shift: BTreeMap<ThreadId, u32> = BTreeMap::new();
    for (&e, l) in &g.events {
        let s = *shift.get(&e.thread).unwrap_or(&0);
        if let Some(f) = l.op.update() {
            out.insert(EventId { thread: e.thread, index: e.index + s }, f.clone());
            shift.insert(e.thread, s + 1);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn lb_cycle() -> ExecutionGraph {
        let (x, y) = (0, 1);
        let mut b = GraphBuilder::new();
        let ix = b.init(x);
        let iy = b.init(y);
        let t1 = ThreadId(1);
        let t2 = ThreadId(2);
        let r1 = b.push(t1, x, 1, Operation::ReadRlx);
        let w1 = b.push(t1, y, 0, Operation::WriteRlx(1));
        let r2 = b.push(t2, y, 1, Operation::ReadRlx);
        let w2 = b.push(t2, x, 0, Operation::WriteRlx(1));
        b.rf(w2, r1).rf(w1, r2).mo(&[ix, w2]).mo(&[iy, w1]);
        b.build()
    }

    #[test]
    fn lb_cycle_is_well_formed() {
        let r = check_well_formed(&lb_cycle());
        assert!(r.ok, "{:?}", r.violations);
        assert!(is_rf_complete(&lb_cycle()));
    }

    #[test]
    fn rf_value_mismatch_is_reported() {
        let mut g = lb_cycle();
        let r1 = EventId::new(1, 0);
        g.events.get_mut(&r1).unwrap().result = 2;
        let r = check_well_formed(&g);
        assert!(!r.ok);
        assert!(r.violations.iter().any(|v| v.rule == WfRule::Rf && v.detail.contains("value")));
    }

    #[test]
    fn unordered_writes_are_reported() {
        let mut b = GraphBuilder::new();
        let w1 = b.push(ThreadId(1), 5, 0, Operation::WriteRlx(1));
        let w2 = b.push(ThreadId(2), 5, 0, Operation::WriteRlx(2));
        let g = b.build();
        let r = check_well_formed(&g);
        assert!(r.violations.iter().any(|v| v.rule == WfRule::Mo && v.pair == (w1, w2)));
    }

    #[test]
    fn rf_completeness() {
        let mut g = lb_cycle();
        let first = *g.rf.iter().next().unwrap();
        g.rf.remove(&first);
        assert!(!is_rf_complete(&g));
        let mut b = GraphBuilder::new();
        b.push(ThreadId(1), 0, 0, Operation::WriteNA(3));
        assert!(is_rf_complete(&b.build()));
    }

    #[test]
    fn low_level_split_of_faa() {
        let mut b = GraphBuilder::new();
        let i = b.init(0);
        let u = b.push(ThreadId(1), 0, 1, Operation::RmwRlx(UpdateFn::Add(1)));
        let w = b.push(ThreadId(2), 0, 0, Operation::WriteRlx(1));
        b.rf(w, u).mo(&[i, w, u]);
        let g = b.build();
        assert!(check_well_formed(&g).ok);
        let low = to_low_level(&g).unwrap();
        assert!(check_well_formed(&low).ok, "{:?}", check_well_formed(&low).violations);
        let r = EventId::new(1, 0);
        let wr = EventId::new(1, 1);
        assert_eq!(low.label(r).op, Operation::ReadRlx);
        assert_eq!(low.label(r).result, 1);
        assert_eq!(low.label(wr).op, Operation::WriteRlx(2));
        assert!(low.rmw.contains(&(r, wr)));
        assert!(low.rf.contains(&(w, r)));
        assert!(low.mo.contains(&(w, wr)));
        let back = to_high_level(&low, &natural_update_fns(&g)).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn rmw_mode_split() {
        for (kind, rd, wr) in [
            (Operation::RmwAcq(UpdateFn::Add(1)), OpKind::ReadAcq, OpKind::WriteRlx),
            (Operation::RmwRel(UpdateFn::Add(1)), OpKind::ReadRlx, OpKind::WriteRel),
            (Operation::RmwAcqRel(UpdateFn::Add(1)), OpKind::ReadAcq, OpKind::WriteRel),
            (Operation::RmwRlx(UpdateFn::Add(1)), OpKind::ReadRlx, OpKind::WriteRlx),
        ] {
            let mut b = GraphBuilder::new();
            let i = b.init(0);
            let u = b.push(ThreadId(1), 0, 0, kind);
            b.rf(i, u).mo(&[i, u]);
            let low = to_low_level(&b.build()).unwrap();
            assert_eq!(low.label(EventId::new(1, 0)).kind(), rd);
            assert_eq!(low.label(EventId::new(1, 1)).kind(), wr);
        }
    }

    #[test]
    fn identity_cases() {
        let g = lb_cycle();
        assert_eq!(to_low_level(&g).unwrap(), g);
        let empty = ExecutionGraph::new();
        assert_eq!(to_high_level(&empty, &BTreeMap::new()).unwrap(), empty);
    }

    #[test]
    fn inconsistent_update_fn() {
        let mut b = GraphBuilder::new();
        let r = b.push(ThreadId(1), 0, 1, Operation::ReadRlx);
        let w = b.push(ThreadId(1), 0, 0, Operation::WriteRlx(5));
        b.rmw(r, w);
        let g = b.build();
        let fns = BTreeMap::from([(r, UpdateFn::Add(1))]);
        assert_eq!(to_high_level(&g, &fns), Err(GraphError::InconsistentUpdateFn(r)));
        let mut h = lb_cycle();
        h.rmw.insert((EventId::new(1, 0), EventId::new(1, 1)));
        assert_eq!(to_low_level(&h), Err(GraphError::NotHighLevel));
    }

    #[test]
    fn restriction() {
        let g = lb_cycle();
        let all: BTreeSet<EventId> = g.event_ids().collect();
        assert_eq!(restrict(&g, &all).unwrap(), g);
        let inits: BTreeSet<EventId> = g.event_ids().filter(|e| e.is_init()).collect();
        let r = restrict(&g, &inits).unwrap();
        assert!(r.rf.is_empty());
        assert_eq!(r.len(), 2);
        assert!(restrict(&g, &BTreeSet::new()).unwrap().is_empty());
        let bogus = BTreeSet::from([EventId::new(9, 9)]);
        assert_eq!(restrict(&g, &bogus), Err(GraphError::UnknownEvent(EventId::new(9, 9))));
    }

    #[test]
    fn update_fn_text() {
        for f in [
            UpdateFn::Add(-1),
            UpdateFn::Set(4),
            UpdateFn::Table { map: BTreeMap::from([(1, 2), (3, -4)]), default: 0 },
        ] {
            assert_eq!(f.to_string().parse::<UpdateFn>().unwrap(), f);
        }
    }
}
