//! Exhaustive enumeration of the consistent executions of a loop-free
//! program, and litmus verdicts over them.
//!
//! Reads are unrolled against per-location value sets computed by a
//! fixpoint. Each combination of thread traces is then matched against
//! modification orders: an RMW reads from its immediate mo-predecessor, so
//! fixing mo fixes its source, and only plain reads choose among writes.

use crate::exec_graph::{
    print_graph, EventId, ExecutionGraph, Label, Loc, Mark, Operation, ThreadId, UpdateFn, Val,
};
use crate::lang::{Cmd, Program, ThreadTrace, UnrollError};
use crate::relations::{check_consistent, find_data_races, Race};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Bounds {
    pub max_events: usize,
    pub max_value_iterations: usize,
    pub max_threads: usize,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds { max_events: 16, max_value_iterations: 16, max_threads: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EnumError {
    #[error("bound exceeded: {0}")]
    BoundExceeded(String),
    #[error(transparent)]
    Unroll(#[from] UnrollError),
}

/// A consistent execution with the final values of the program's registers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Execution {
    pub graph: ExecutionGraph,
    pub registers: BTreeMap<String, Val>,
}

// ----------------------------------------------------------------------------
// Traces
// ----------------------------------------------------------------------------

/// One thread of a run: its trace and the parent event it was forked after.
#[derive(Clone, Debug)]
pub struct ThreadRun {
    pub tid: ThreadId,
    pub trace: Arc<ThreadTrace>,
    pub anchor: Option<EventId>,
}

type ValueSets = BTreeMap<Loc, BTreeSet<Val>>;

/// The traces of one thread command, shared between runs.
pub type Traces = Arc<Vec<Arc<ThreadTrace>>>;

type RunFn<'a, T> = dyn Fn(&[ThreadRun]) -> Result<Vec<T>, EnumError> + Sync + 'a;

/// The unrolling machinery shared by enumeration and reachability.
pub struct Unrollings<'p> {
    pub program: &'p Program,
    pub bounds: Bounds,
    pub values: ValueSets,
    memo: Mutex<HashMap<(ThreadId, Cmd), Traces>>,
}

fn child(t: ThreadId, k: usize) -> Result<ThreadId, EnumError> {
    t.child(k as u32).ok_or_else(|| EnumError::BoundExceeded("fork nesting too deep for thread ids".into()))
}

/// Adds `v` and everything reachable from it by applying the update
/// functions within their budgets.
fn chain_values(v: Val, fs: &[(UpdateFn, usize)], used: &mut Vec<usize>, out: &mut BTreeSet<Val>) {
    out.insert(v);
    for k in 0..fs.len() {
        if used[k] < fs[k].1 {
            used[k] += 1;
            chain_values(fs[k].0.apply(v), fs, used, out);
            used[k] -= 1;
        }
    }
}

fn written(op: &Operation, read: Val) -> Option<Val> {
    match op {
        Operation::WriteNA(v) | Operation::WriteRlx(v) | Operation::WriteRel(v) => Some(*v),
        _ => op.update().map(|f| f.apply(read)),
    }
}

impl<'p> Unrollings<'p> {
    pub fn new(program: &'p Program, bounds: Bounds) -> Result<Self, EnumError> {
        let mut u = Unrollings { program, bounds, values: ValueSets::new(), memo: Mutex::new(HashMap::new()) };
        u.values = u.value_fixpoint()?;
        u.memo.lock().unwrap().clear();
        Ok(u)
    }

    /// Declared locations start from their initial value and every program
    /// literal, so self-justifying values can be guessed. Allocated cells
    /// only hold values some unrolling writes to them.
    fn seeds(&self) -> ValueSets {
        let lits = self.program.literals();
        let mut m = ValueSets::new();
        for (i, (_, v)) in self.program.locations.iter().enumerate() {
            let e = m.entry(i as Loc).or_default();
            e.insert(*v);
            e.extend(lits.iter().copied());
        }
        m
    }

    /// Values each location can hold: plain writes, closed under chains of
    /// RMWs that use each update function at most as often as one run can.
    fn value_fixpoint(&mut self) -> Result<ValueSets, EnumError> {
        let seeds = self.seeds();
        let mut vals = seeds.clone();
        for _ in 0..self.bounds.max_value_iterations.max(1) {
            self.values = vals.clone();
            self.memo.lock().unwrap().clear();
            let per_thread = self.all_thread_traces(true)?;
            let mut base = seeds.clone();
            // per location, update function -> how many one run can apply
            let mut budget: BTreeMap<Loc, BTreeMap<UpdateFn, usize>> = BTreeMap::new();
            for traces in per_thread.values() {
                let mut most: BTreeMap<Loc, BTreeMap<UpdateFn, usize>> = BTreeMap::new();
                for t in traces.iter() {
                    let mut c: BTreeMap<Loc, BTreeMap<UpdateFn, usize>> = BTreeMap::new();
                    for e in &t.events {
                        match e.op.update() {
                            Some(f) => *c.entry(e.loc).or_default().entry(f.clone()).or_default() += 1,
                            None if e.mark == Some(Mark::EndAtomic) => {}
                            None => {
                                if let Some(w) = written(&e.op, e.result) {
                                    base.entry(e.loc).or_default().insert(w);
                                }
                            }
                        }
                    }
                    for (l, fs) in c {
                        for (f, n) in fs {
                            let m = most.entry(l).or_default().entry(f).or_default();
                            *m = (*m).max(n);
                        }
                    }
                }
                for (l, fs) in most {
                    for (f, n) in fs {
                        *budget.entry(l).or_default().entry(f).or_default() += n;
                    }
                }
            }
            let mut next = ValueSets::new();
            for (l, vs) in &base {
                let fs: Vec<(UpdateFn, usize)> = budget.get(l).map(|m| m.clone().into_iter().collect()).unwrap_or_default();
                let out = next.entry(*l).or_default();
                for &v in vs {
                    chain_values(v, &fs, &mut vec![0; fs.len()], out);
                }
            }
            if next == vals {
                break;
            }
            vals = next;
        }
        Ok(vals)
    }

    /// Every trace of `cmd` run as `tid`, with reads drawn from the value sets.
    pub fn traces(&self, tid: ThreadId, cmd: &Cmd) -> Result<Traces, EnumError> {
        self.traces_with(tid, cmd, false)
    }

    /// With `partial`, also the prefixes that stop at a read of a location
    /// with no known values.
    fn traces_with(&self, tid: ThreadId, cmd: &Cmd, partial: bool) -> Result<Traces, EnumError> {
        if let Some(t) = self.memo.lock().unwrap().get(&(tid, cmd.clone())) {
            return Ok(t.clone());
        }
        let mut out = vec![];
        let mut stack = vec![vec![]];
        while let Some(oracle) = stack.pop() {
            match self.program.unroll(tid, cmd, &oracle) {
                Ok(t) => {
                    if t.events.len() > self.bounds.max_events {
                        return Err(EnumError::BoundExceeded(format!("thread {} has {} events", tid.0, t.events.len())));
                    }
                    out.push(Arc::new(t));
                }
                Err(UnrollError::OracleExhausted { at, loc, partial: stuck, .. }) => {
                    if at > self.bounds.max_events {
                        return Err(EnumError::BoundExceeded(format!("thread {} exceeds {} events", tid.0, self.bounds.max_events)));
                    }
                    if partial && self.values.get(&loc).is_none_or(|v| v.is_empty()) {
                        out.push(Arc::new(*stuck));
                    }
                    for v in self.values.get(&loc).into_iter().flatten().rev() {
                        let mut o = oracle.clone();
                        o.push(*v);
                        stack.push(o);
                    }
                }
                Err(e) => return Err(e.into()),
            }
        }
        out.sort_by(|a, b| format!("{:?}", a.events).cmp(&format!("{:?}", b.events)));
        let out = Arc::new(out);
        self.memo.lock().unwrap().insert((tid, cmd.clone()), out.clone());
        Ok(out)
    }

    fn all_thread_traces(&self, partial: bool) -> Result<HashMap<(ThreadId, Cmd), Traces>, EnumError> {
        let mut seen = HashMap::new();
        let mut work: Vec<(ThreadId, Cmd)> = self.program.main_threads().map(|(t, c)| (t, c.clone())).collect();
        while let Some((t, c)) = work.pop() {
            if seen.contains_key(&(t, c.clone())) {
                continue;
            }
            let trs = self.traces_with(t, &c, partial)?;
            for tr in trs.iter() {
                for (k, (_, c2)) in tr.forks.iter().enumerate() {
                    work.push((child(t, k)?, c2.clone()));
                }
            }
            seen.insert((t, c), trs);
        }
        Ok(seen)
    }

    fn slots(&self) -> Vec<Slot> {
        let mut v: Vec<_> = self.program.main_threads().map(|(t, c)| (t, c.clone(), None)).collect();
        v.reverse();
        v
    }

    fn expand(
        &self,
        pending: &[Slot],
        chosen: &mut Vec<ThreadRun>,
        f: &mut dyn FnMut(&[ThreadRun]) -> Result<(), EnumError>,
    ) -> Result<(), EnumError> {
        let Some(((tid, cmd, anchor), rest)) = pending.split_last() else {
            return f(chosen);
        };
        if chosen.len() + 1 > self.bounds.max_threads {
            return Err(EnumError::BoundExceeded(format!("more than {} threads", self.bounds.max_threads)));
        }
        for tr in self.traces(*tid, cmd)?.iter() {
            let mut next = rest.to_vec();
            push_forks(*tid, *anchor, tr, &mut next)?;
            chosen.push(ThreadRun { tid: *tid, trace: tr.clone(), anchor: *anchor });
            self.expand(&next, chosen, f)?;
            chosen.pop();
        }
        Ok(())
    }

    /// Calls `f` on every combination of thread traces, in parallel over the
    /// first thread's traces; results are gathered in a deterministic order.
    pub fn par_runs<T: Send>(
        &self,
        f: &RunFn<'_, T>,
    ) -> Result<Vec<T>, EnumError> {
        let slots = self.slots();
        let Some(((tid, cmd, anchor), rest)) = slots.split_last() else {
            return f(&[]);
        };
        let firsts = self.traces(*tid, cmd)?;
        let parts: Vec<Result<Vec<T>, EnumError>> = firsts
            .par_iter()
            .map(|tr| {
                let mut next = rest.to_vec();
                push_forks(*tid, *anchor, tr, &mut next)?;
                let mut chosen = vec![ThreadRun { tid: *tid, trace: tr.clone(), anchor: *anchor }];
                let mut acc = vec![];
                self.expand(&next, &mut chosen, &mut |run| {
                    acc.extend(f(run)?);
                    Ok(())
                })?;
                Ok(acc)
            })
            .collect();
        let mut out = vec![];
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }
}

type Slot = (ThreadId, Cmd, Option<EventId>);

/// Queues the children of `tr`; each hangs off the parent event before its
/// fork, or the parent's own anchor if there is none.
fn push_forks(tid: ThreadId, anchor: Option<EventId>, tr: &ThreadTrace, next: &mut Vec<Slot>) -> Result<(), EnumError> {
    for (k, (pos, c)) in tr.forks.iter().enumerate().rev() {
        let a = if *pos > 0 { Some(EventId { thread: tid, index: *pos as u32 - 1 }) } else { anchor };
        next.push((child(tid, k)?, c.clone(), a));
    }
    Ok(())
}

// ----------------------------------------------------------------------------
// Graphs of a run
// ----------------------------------------------------------------------------

struct Ev {
    id: EventId,
    label: Label,
    mark: Option<Mark>,
}

fn run_events(p: &Program, run: &[ThreadRun], lens: Option<&[usize]>) -> Vec<Ev> {
    let mut evs: Vec<Ev> = p
        .locations
        .iter()
        .enumerate()
        .map(|(i, (_, v))| Ev {
            id: EventId { thread: ThreadId::INIT, index: i as u32 },
            label: Label::new(ThreadId::INIT, i as Loc, 0, Operation::WriteNA(*v)),
            mark: None,
        })
        .collect();
    for (k, tr) in run.iter().enumerate() {
        let n = lens.map_or(tr.trace.events.len(), |l| l[k]);
        for (i, e) in tr.trace.events.iter().take(n).enumerate() {
            evs.push(Ev {
                id: EventId { thread: tr.tid, index: i as u32 },
                label: Label::new(tr.tid, e.loc, e.result, e.op.clone()),
                mark: e.mark.clone(),
            });
        }
    }
    evs
}

fn written_value(l: &Label) -> Option<Val> {
    l.written_value()
}

/// `end_atomic` is a redundant read-write pair: it writes back the value it
/// replaces, so its value comes from its mo-predecessor.
fn is_end(e: &Ev) -> bool {
    matches!(e.mark, Some(Mark::EndAtomic))
}

/// Value of the mo-last write of `seq`, looking through `end_atomic` events.
fn seq_value(evs: &[Ev], seq: &[usize]) -> Option<Val> {
    seq.iter().rev().find(|&&i| !is_end(&evs[i])).and_then(|&i| written_value(&evs[i].label))
}

/// Necessary condition for a run to have any execution: every read value is
/// written somewhere, and RMW reads of one value never outnumber its writes.
fn feasible(evs: &[Ev]) -> bool {
    // an end_atomic event repeats a value another write produces
    let mut wild: HashMap<Loc, usize> = HashMap::new();
    let mut writes: HashMap<(Loc, Val), usize> = HashMap::new();
    for e in evs {
        if is_end(e) {
            *wild.entry(e.label.loc).or_default() += 1;
        } else if let Some(w) = written_value(&e.label) {
            *writes.entry((e.label.loc, w)).or_default() += 1;
        }
    }
    let mut rmw_reads: HashMap<(Loc, Val), usize> = HashMap::new();
    for e in evs {
        if let Some(r) = e.label.read_value() {
            let key = (e.label.loc, r);
            let have = writes.get(&key).copied().unwrap_or(0);
            if have == 0 {
                return false;
            }
            if e.label.kind().is_rmw() {
                let c = rmw_reads.entry(key).or_default();
                *c += 1;
                if *c > have + wild.get(&key.0).copied().unwrap_or(0) {
                    return false;
                }
            }
        }
    }
    true
}

/// Per-location modification orders compatible with program order, in which
/// each RMW directly follows a write of the value it reads.
fn mo_orders(evs: &[Ev], writes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![];
    let mut seq = vec![];
    let mut used = vec![false; writes.len()];
    fn go(evs: &[Ev], writes: &[usize], used: &mut [bool], seq: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if seq.len() == writes.len() {
            out.push(seq.clone());
            return;
        }
        for (k, &w) in writes.iter().enumerate() {
            if used[k] {
                continue;
            }
            let id = evs[w].id;
            // init first; same-thread writes in program order
            if seq.is_empty() && writes.iter().any(|&x| evs[x].id.is_init()) && !id.is_init() {
                continue;
            }
            if writes.iter().enumerate().any(|(j, &x)| !used[j] && j != k && evs[x].id.thread == id.thread && evs[x].id.index < id.index) {
                continue;
            }
            if evs[w].label.kind().is_rmw() && seq_value(evs, seq) != evs[w].label.read_value() {
                continue;
            }
            if is_end(&evs[w]) && seq.is_empty() {
                continue;
            }
            used[k] = true;
            seq.push(w);
            go(evs, writes, used, seq, out);
            seq.pop();
            used[k] = false;
        }
    }
    go(evs, writes, &mut used, &mut seq, &mut out);
    out
}

fn base_graph(evs: &[Ev], run: &[ThreadRun]) -> ExecutionGraph {
    let mut g = ExecutionGraph::default();
    for e in evs {
        g.events.insert(e.id, e.label.clone());
        if let Some(m) = &e.mark {
            g.marks.insert(e.id, m.clone());
        }
    }
    for tr in run {
        if let Some(a) = tr.anchor {
            if g.events.contains_key(&a) && g.events.keys().any(|e| e.thread == tr.tid) {
                g.spawn.insert((a, tr.tid));
            }
        }
    }
    g.rebuild_po();
    g
}

/// All consistent graphs over the events of a run (optionally truncated to
/// per-thread prefixes).
fn graphs_of(p: &Program, run: &[ThreadRun], lens: Option<&[usize]>) -> Vec<ExecutionGraph> {
    let evs = run_events(p, run, lens);
    if !feasible(&evs) {
        return vec![];
    }
    let base = base_graph(&evs, run);
    let locs: BTreeSet<Loc> = evs.iter().map(|e| e.label.loc).collect();
    let mut per_loc: Vec<Vec<LocChoice>> = vec![];
    for &l in &locs {
        let cs = loc_choices(&evs, l);
        if cs.is_empty() {
            return vec![];
        }
        per_loc.push(cs);
    }
    let mut out = vec![];
    let mut pick = vec![0usize; per_loc.len()];
    loop {
        let mut g = base.clone();
        for (li, cs) in per_loc.iter().enumerate() {
            let c = &cs[pick[li]];
            for &(i, v) in &c.ends {
                let mut l = evs[i].label.clone();
                l.op = Operation::WriteNA(v);
                g.events.insert(evs[i].id, l);
            }
            let ids: Vec<EventId> = c.mo.iter().map(|&i| evs[i].id).collect();
            g.set_mo_chain(&ids);
            g.rf.extend(c.rf.iter().map(|&(w, r)| (evs[w].id, evs[r].id)));
        }
        if check_consistent(&g).consistent {
            out.push(g);
        }
        if !advance(&mut pick, |k| per_loc[k].len()) {
            break;
        }
    }
    out
}

/// One location's share of a candidate execution.
struct LocChoice {
    mo: Vec<usize>,
    rf: Vec<(usize, usize)>,
    ends: Vec<(usize, Val)>,
}

/// Every mo order and rf assignment on `l` that is coherent with program
/// order on `l`. Coherence is implied by consistency, so nothing is lost.
fn loc_choices(evs: &[Ev], l: Loc) -> Vec<LocChoice> {
    let on: Vec<usize> = (0..evs.len()).filter(|&i| evs[i].label.loc == l).collect();
    let ws: Vec<usize> = on.iter().copied().filter(|&i| evs[i].label.kind().writes()).collect();
    let reads: Vec<usize> = on.iter().copied().filter(|&i| evs[i].label.kind().reads() && !evs[i].label.kind().is_rmw()).collect();
    let mut out = vec![];
    for seq in mo_orders(evs, &ws) {
        // end_atomic values follow from the mo order
        let mut val: HashMap<usize, Option<Val>> = HashMap::new();
        let mut ends = vec![];
        for (k, &i) in seq.iter().enumerate() {
            if is_end(&evs[i]) {
                let v = seq_value(evs, &seq[..k]).expect("end_atomic follows a write");
                ends.push((i, v));
                val.insert(i, Some(v));
            } else {
                val.insert(i, written_value(&evs[i].label));
            }
        }
        let mut rmw_rf = vec![];
        for w in seq.windows(2) {
            if evs[w[1]].label.kind().is_rmw() {
                rmw_rf.push((w[0], w[1]));
            }
        }
        let srcs: Vec<Vec<usize>> = reads
            .iter()
            .map(|&r| ws.iter().copied().filter(|&w| w != r && val[&w] == evs[r].label.read_value()).collect())
            .collect();
        if srcs.iter().any(|s| s.is_empty()) {
            continue;
        }
        let mut pick = vec![0usize; reads.len()];
        loop {
            let mut rf = rmw_rf.clone();
            rf.extend(reads.iter().enumerate().map(|(k, &r)| (srcs[k][pick[k]], r)));
            if coherent(evs, &on, &seq, &rf) {
                out.push(LocChoice { mo: seq.clone(), rf, ends: ends.clone() });
            }
            if !advance(&mut pick, |k| srcs[k].len()) {
                break;
            }
        }
    }
    out
}

/// Irreflexivity of po;eco? restricted to the events `on` of one location.
fn coherent(evs: &[Ev], on: &[usize], mo: &[usize], rf: &[(usize, usize)]) -> bool {
    let n = on.len();
    if n > 64 {
        return true;
    }
    let pos: HashMap<usize, usize> = on.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let mut eco = vec![0u64; n];
    for (a, &x) in mo.iter().enumerate() {
        for &y in &mo[a + 1..] {
            eco[pos[&x]] |= 1 << pos[&y];
        }
    }
    for &(w, r) in rf {
        eco[pos[&w]] |= 1 << pos[&r];
        // fr: r reads before every mo-successor of w
        if let Some(a) = mo.iter().position(|&x| x == w) {
            for &y in &mo[a + 1..] {
                if y != r {
                    eco[pos[&r]] |= 1 << pos[&y];
                }
            }
        }
    }
    for k in 0..n {
        for j in 0..n {
            if eco[j] >> k & 1 == 1 {
                eco[j] |= eco[k];
            }
        }
    }
    for a in 0..n {
        if eco[a] >> a & 1 == 1 {
            return false;
        }
        for b in 0..n {
            let (ea, eb) = (evs[on[a]].id, evs[on[b]].id);
            if ea.thread == eb.thread && !ea.is_init() && ea.index < eb.index && eco[b] >> a & 1 == 1 {
                return false;
            }
        }
    }
    true
}

/// Odometer increment; false once every combination has been produced.
fn advance(pick: &mut [usize], len: impl Fn(usize) -> usize) -> bool {
    for (k, p) in pick.iter_mut().enumerate() {
        *p += 1;
        if *p < len(k) {
            return true;
        }
        *p = 0;
    }
    false
}

fn registers_of(run: &[ThreadRun]) -> BTreeMap<String, Val> {
    let mut m = BTreeMap::new();
    for tr in run {
        m.extend(tr.trace.registers.iter().map(|(k, v)| (k.clone(), *v)));
    }
    m
}

fn total_events(run: &[ThreadRun]) -> usize {
    run.iter().map(|t| t.trace.events.len()).sum()
}

fn sorted_unique(mut v: Vec<Execution>) -> Vec<Execution> {
    let mut keyed: Vec<(String, Execution)> = v.drain(..).map(|e| (print_graph(&e.graph), e)).collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    keyed.dedup_by(|a, b| a.0 == b.0);
    keyed.into_iter().map(|(_, e)| e).collect()
}

// ----------------------------------------------------------------------------
// Public operations
// ----------------------------------------------------------------------------

/// The consistent, rf-complete executions of `p`, in canonical order.
pub fn enumerate_executions(p: &Program, b: &Bounds) -> Result<Vec<Execution>, EnumError> {
    let u = Unrollings::new(p, *b)?;
    let all = u.par_runs(&|run| {
        let graphs = graphs_of(p, run, None);
        // runs that no consistent execution realises do not count
        if !graphs.is_empty() && total_events(run) + p.locations.len() > b.max_events {
            return Err(EnumError::BoundExceeded(format!("an execution has more than {} events", b.max_events)));
        }
        let regs = registers_of(run);
        Ok(graphs.into_iter().map(|graph| Execution { graph, registers: regs.clone() }).collect())
    })?;
    Ok(sorted_unique(all))
}

/// Consistent graphs of po-prefixes of runs of `p` with at most `max_size`
/// events, in canonical order.
pub fn enumerate_prefix_executions(p: &Program, b: &Bounds, max_size: usize) -> Result<Vec<ExecutionGraph>, EnumError> {
    let u = Unrollings::new(p, *b)?;
    let all = u.par_runs(&|run| {
        let full: Vec<usize> = run.iter().map(|t| t.trace.events.len()).collect();
        let mut lens = vec![0usize; run.len()];
        let mut out = vec![];
        loop {
            // a forked thread starts only once its fork point is reached
            let spawned = run.iter().zip(&lens).all(|(t, &n)| {
                n == 0
                    || t.anchor.is_none_or(|a| {
                        run.iter().position(|r| r.tid == a.thread).is_some_and(|pi| lens[pi] > a.index as usize)
                    })
            });
            let size = lens.iter().sum::<usize>() + p.locations.len();
            if spawned && size <= max_size {
                out.extend(graphs_of(p, run, Some(&lens)));
            }
            if !advance(&mut lens, |k| full[k] + 1) {
                break;
            }
        }
        Ok(out)
    })?;
    let mut keyed: Vec<(String, ExecutionGraph)> = all.into_iter().map(|g| (print_graph(&g), g)).collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    keyed.dedup_by(|a, b| a.0 == b.0);
    Ok(keyed.into_iter().map(|(_, g)| g).collect())
}

#[derive(Clone, Debug)]
pub struct LitmusVerdict {
    pub observable: bool,
    pub witnesses: Vec<Execution>,
    pub total_consistent: usize,
}

/// Plain C20 verdict: observable iff some consistent execution satisfies
/// the `exists` clause.
pub fn check_litmus(p: &Program, b: &Bounds) -> Result<LitmusVerdict, EnumError> {
    let all = enumerate_executions(p, b)?;
    let total_consistent = all.len();
    let witnesses: Vec<Execution> = all.into_iter().filter(|e| p.postcondition_holds(&e.registers)).collect();
    Ok(LitmusVerdict { observable: !witnesses.is_empty(), witnesses, total_consistent })
}

#[derive(Clone, Debug, Serialize)]
pub struct RaceSummary {
    pub executions: usize,
    pub racy_executions: usize,
    /// Races of the first racy execution, if any.
    pub example: Vec<Race>,
}

impl RaceSummary {
    pub fn is_racy(&self) -> bool {
        self.racy_executions > 0
    }
}

pub fn count_races(p: &Program, b: &Bounds) -> Result<RaceSummary, EnumError> {
    Ok(summarize_races(&enumerate_executions(p, b)?))
}

pub fn summarize_races(execs: &[Execution]) -> RaceSummary {
    let reports: Vec<_> = execs.iter().map(|e| find_data_races(&e.graph, &e.graph.mode_events())).collect();
    RaceSummary {
        executions: execs.len(),
        racy_executions: reports.iter().filter(|r| r.is_racy()).count(),
        example: reports.into_iter().find(|r| r.is_racy()).map(|r| r.races).unwrap_or_default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec_graph::check_well_formed;
    use crate::lang::parse_program;

    fn prog(threads: &[&str], exists: &str) -> Program {
        let mut s = String::from("litmus T\ninit X=0 Y=0\n");
        for t in threads {
            s.push_str(&format!("thread {{ {t} }}\n"));
        }
        s.push_str(exists);
        parse_program(&s).unwrap()
    }

    fn lb() -> Program {
        prog(&["let a = R_rlx(X) in W_rlx(Y, 1)", "let b = R_rlx(Y) in W_rlx(X, 1)"], "exists a=1 /\\ b=1")
    }

    #[test]
    fn lb_is_observable() {
        let v = check_litmus(&lb(), &Bounds::default()).unwrap();
        assert!(v.observable);
        assert_eq!(v.total_consistent, 4);
        for w in &v.witnesses {
            assert!(crate::relations::has_porf_cycle(&w.graph));
        }
    }

    #[test]
    fn lbd_is_observable_and_unwritten_values_are_not() {
        let lbd = prog(
            &["let a = R_rlx(X) in if a == 1 then W_rlx(Y, 1)", "let b = R_rlx(Y) in if b == 1 then W_rlx(X, 1)"],
            "exists a=1 /\\ b=1",
        );
        assert!(check_litmus(&lbd, &Bounds::default()).unwrap().observable);
        let mut p = lb();
        p.exists = Some(vec![("a".into(), 2)]);
        assert!(!check_litmus(&p, &Bounds::default()).unwrap().observable);
    }

    #[test]
    fn single_thread_has_one_execution() {
        let p = prog(&["[X] :=na 1; let a = [X]_na in a"], "exists a=1");
        let all = enumerate_executions(&p, &Bounds::default()).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].registers["a"], 1);
    }

    #[test]
    fn races() {
        let p = prog(&["[X] :=na 1", "[X] :=na 2"], "");
        assert!(count_races(&p, &Bounds::default()).unwrap().is_racy());
        let empty = parse_program("litmus E\n").unwrap();
        let s = count_races(&empty, &Bounds::default()).unwrap();
        assert!(!s.is_racy());
        assert_eq!(s.executions, 1);
    }

    #[test]
    fn bound_exceeded() {
        let p = prog(&["W_rlx(X, 1); W_rlx(X, 2); W_rlx(X, 3)"], "");
        let b = Bounds { max_events: 4, ..Bounds::default() };
        assert!(matches!(enumerate_executions(&p, &b), Err(EnumError::BoundExceeded(_))));
    }

    #[test]
    fn emitted_graphs_are_well_formed_and_consistent() {
        let p = prog(
            &["let a = FAA_rlx(X, 1) in W_rel(Y, 2)", "let b = R_acq(Y) in let c = XCHG_acqrel(X, 5) in fence_acq(Y)"],
            "",
        );
        let all = enumerate_executions(&p, &Bounds::default()).unwrap();
        assert!(!all.is_empty());
        for e in &all {
            assert!(check_well_formed(&e.graph).ok);
            assert!(crate::relations::check_consistent(&e.graph).consistent);
        }
    }

    #[test]
    fn forks_add_spawn_edges() {
        let p = parse_program("litmus F\ninit X=0\nthread { W_rlx(X, 1); fork(let a = R_rlx(X) in a) }\n").unwrap();
        let all = enumerate_executions(&p, &Bounds::default()).unwrap();
        // the child reads after the parent's write: 0 is coherence-forbidden
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].registers["a"], 1);
        assert_eq!(all[0].graph.spawn.len(), 1);
    }

    #[test]
    fn prefixes_include_the_empty_run() {
        let pre = enumerate_prefix_executions(&lb(), &Bounds::default(), 8).unwrap();
        assert!(pre.iter().any(|g| g.len() == 2));
        assert!(pre.iter().any(|g| g.len() == 6));
    }
}
