//! Construction of executions by Execute and Re-Execute steps, bounded
//! constructibility search over high-level (YMM) and low-level (XMM)
//! graphs, and the grounding checks used to argue the safety of YC20.
//!
//! The rpo side condition of a Re-Execute step is read as constraining
//! committed events: every rpo-predecessor of an event in `C \ D` must be
//! determined.

use crate::enumerate::{enumerate_prefix_executions, Bounds, EnumError};
use crate::exec_graph::{
    print_graph, restrict_unchecked, to_low_level, EventId, ExecutionGraph, Mark,
};
use crate::lang::Program;
use crate::relations::{derive_rpo, is_consistent, po_with_spawn, Analysis, EventIndex, Relation};
use crate::tied::AtomicSpec;
use rayon::prelude::*;
use serde::{Serialize, Serializer};
use std::collections::{BTreeMap, BTreeSet, HashMap};

/// Whether committed sets may split an RMW into its two halves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Granularity {
    /// RMWs are committed entirely or not at all.
    Ymm,
    /// The read and write halves of an RMW are committed independently.
    Xmm,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ReExecutePlan {
    pub committed: BTreeSet<EventId>,
    pub determined: BTreeSet<EventId>,
    /// Events added by Guided Steps, starting from the determined subgraph.
    pub addition_order: Vec<EventId>,
}

fn as_text<S: Serializer>(g: &ExecutionGraph, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&print_graph(g))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "step")]
pub enum Step {
    Execute {
        event: EventId,
        #[serde(serialize_with = "as_text")]
        graph: ExecutionGraph,
    },
    ReExecute {
        plan: ReExecutePlan,
        #[serde(serialize_with = "as_text")]
        graph: ExecutionGraph,
    },
}

impl Step {
    pub fn graph(&self) -> &ExecutionGraph {
        match self {
            Step::Execute { graph, .. } | Step::ReExecute { graph, .. } => graph,
        }
    }
}

/// A sequence of construction steps starting from the empty graph.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConstructionTrace {
    pub granularity: Option<Granularity>,
    pub steps: Vec<Step>,
}

impl ConstructionTrace {
    pub fn final_graph(&self) -> ExecutionGraph {
        self.steps.last().map(|s| s.graph().clone()).unwrap_or_default()
    }

    pub fn re_executions(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s, Step::ReExecute { .. })).count()
    }

    /// Index of the first step that fails validation.
    pub fn first_invalid_step(&self) -> Option<usize> {
        let gran = self.granularity.unwrap_or(Granularity::Ymm);
        let mut cur = ExecutionGraph::default();
        for (i, s) in self.steps.iter().enumerate() {
            let ok = match s {
                Step::Execute { event, graph } => {
                    validate_execute_step(&cur, graph) && graph.events.keys().all(|e| cur.events.contains_key(e) || e == event)
                }
                Step::ReExecute { plan, graph } => validate_re_execute_step(&cur, graph, plan, gran),
            };
            if !ok {
                return Some(i);
            }
            cur = s.graph().clone();
        }
        None
    }

    pub fn replays(&self) -> bool {
        self.first_invalid_step().is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Reachability {
    Constructible(ConstructionTrace),
    /// Exhaustive search at these bounds found no construction.
    NotWithinBounds { max_re_exec: usize, max_events: usize },
}

impl Reachability {
    pub fn is_constructible(&self) -> bool {
        matches!(self, Reachability::Constructible(_))
    }
}

/// A total order on the events of a graph.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct GroundingOrder(pub Vec<EventId>);

impl GroundingOrder {
    /// Events of `g` in an hb-consistent order, ties broken by id.
    pub fn hb_linearization(g: &ExecutionGraph) -> Self {
        Self::linearize(g, &g.events.keys().copied().collect())
    }

    /// Events of `keep` in an order consistent with `g`'s hb.
    pub fn linearize(g: &ExecutionGraph, keep: &BTreeSet<EventId>) -> Self {
        let a = Analysis::new(g);
        let mut left: Vec<EventId> = keep.iter().copied().collect();
        let mut out = Vec::with_capacity(left.len());
        while !left.is_empty() {
            let k = left
                .iter()
                .position(|&e| !left.iter().any(|&x| x != e && a.hb(x, e)))
                .expect("hb is acyclic on consistent graphs");
            out.push(left.remove(k));
        }
        GroundingOrder(out)
    }

    /// Grounding order for an Execute step: the old graph in hb order, then
    /// the new event.
    pub fn for_execute(old: &ExecutionGraph, event: EventId) -> Self {
        let mut o = Self::hb_linearization(old);
        o.0.push(event);
        o
    }

    /// Grounding order for a Re-Execute step into `g2`: determined events in
    /// hb order, then the guided additions.
    pub fn for_re_execute(g2: &ExecutionGraph, plan: &ReExecutePlan) -> Self {
        let mut o = Self::linearize(g2, &plan.determined);
        o.0.extend(plan.addition_order.iter().copied());
        o
    }

    /// A permutation of `g`'s events that never places an event before one
    /// of its hb-predecessors.
    pub fn is_consistent_with_hb(&self, g: &ExecutionGraph) -> bool {
        let set: BTreeSet<EventId> = self.0.iter().copied().collect();
        if set.len() != self.0.len() || set != g.events.keys().copied().collect() {
            return false;
        }
        order_respects_hb(g, &self.0)
    }
}

/// No event of `order` hb-precedes (in `g`) an event listed before it.
pub fn order_respects_hb(g: &ExecutionGraph, order: &[EventId]) -> bool {
    let a = Analysis::new(g);
    order
        .iter()
        .enumerate()
        .all(|(i, &x)| order[..i].iter().all(|&y| !a.hb(x, y)))
}

// ----------------------------------------------------------------------------
// Step validation
// ----------------------------------------------------------------------------

fn closed_po(g: &ExecutionGraph) -> (EventIndex, Relation) {
    let idx = EventIndex::new(g);
    let po = po_with_spawn(g, &idx);
    (idx, po)
}

/// `e` has no po- or rf-successor in `g`.
fn porf_maximal(g: &ExecutionGraph, e: EventId) -> bool {
    let (idx, po) = closed_po(g);
    po.successors(idx.of(e)).next().is_none() && !g.rf.iter().any(|(w, _)| *w == e)
}

pub fn validate_execute_step(g: &ExecutionGraph, g2: &ExecutionGraph) -> bool {
    if g2.len() != g.len() + 1 || !g.events.keys().all(|e| g2.events.contains_key(e)) {
        return false;
    }
    let e = *g2.events.keys().find(|e| !g.events.contains_key(e)).expect("one new event");
    let old: BTreeSet<EventId> = g.events.keys().copied().collect();
    is_consistent(g) && is_consistent(g2) && restrict_unchecked(g2, &old) == *g && porf_maximal(g2, e)
}

/// Immediate successors of `e` in the closed program order.
fn immediate_po_successors(idx: &EventIndex, po: &Relation, e: EventId) -> Vec<EventId> {
    let i = idx.of(e);
    po.successors(i)
        .filter(|&j| !po.successors(i).any(|k| po.contains(k, j)))
        .map(|j| idx.ids[j])
        .collect()
}

fn rf_map(g: &ExecutionGraph) -> BTreeMap<EventId, EventId> {
    g.rf.iter().map(|&(w, r)| (r, w)).collect()
}

fn rmw_partner(g: &ExecutionGraph, e: EventId) -> Option<EventId> {
    g.rmw
        .iter()
        .find_map(|&(r, w)| if r == e { Some(w) } else if w == e { Some(r) } else { None })
}

/// An event that may act as a release in a synchronisation.
fn is_release(g: &ExecutionGraph, e: EventId) -> bool {
    g.label(e).kind().is_release()
}

/// Lemma check: no committed, non-determined event of `plan` is a release
/// event of `g2`.
pub fn committed_nondetermined_not_release(g2: &ExecutionGraph, plan: &ReExecutePlan) -> bool {
    plan.committed
        .iter()
        .filter(|e| !plan.determined.contains(e))
        .all(|&e| !g2.events.contains_key(&e) || !is_release(g2, e))
}

/// Why `(g, g2, plan)` is not a Re-Execute step, if it is not.
pub fn re_execute_violation(
    g: &ExecutionGraph,
    g2: &ExecutionGraph,
    plan: &ReExecutePlan,
    gran: Granularity,
) -> Option<&'static str> {
    let (c, d) = (&plan.committed, &plan.determined);
    if !is_consistent(g) || !is_consistent(g2) {
        return Some("graphs must be consistent");
    }
    if !c.iter().all(|e| g.events.contains_key(e) && g2.events.contains_key(e)) {
        return Some("committed set must lie in both graphs");
    }
    if restrict_unchecked(g, c) != restrict_unchecked(g2, c) {
        return Some("graphs differ on the committed set");
    }
    let src = rf_map(g);
    if c.iter().any(|e| g.label(*e).kind().reads() && !src.get(e).is_some_and(|w| c.contains(w))) {
        return Some("a committed read reads from outside the committed set");
    }
    if gran == Granularity::Ymm && c.iter().any(|&e| rmw_partner(g, e).is_some_and(|p| !c.contains(&p))) {
        return Some("a committed set splits an RMW");
    }
    if !d.is_subset(c) {
        return Some("determined set must be committed");
    }
    let (idx, po) = closed_po(g);
    for &e in d {
        let j = idx.of(e);
        if (0..idx.ids.len()).any(|i| po.contains(i, j) && !d.contains(&idx.ids[i])) {
            return Some("determined set is not po-prefix-closed");
        }
        if immediate_po_successors(&idx, &po, e).iter().any(|s| c.contains(s) && !d.contains(s)) {
            return Some("determined set is not po-maximal in the committed set");
        }
    }
    if derive_rpo(g2).iter().any(|(a, b)| c.contains(b) && !d.contains(b) && !d.contains(a)) {
        return Some("an rpo edge reaches a committed non-determined event from outside the determined set");
    }
    let start = restrict_unchecked(g2, d);
    if !is_guided_order(&start, g2, c, &plan.addition_order) {
        return Some("the target is not reached by the given Guided Steps");
    }
    None
}

pub fn validate_re_execute_step(
    g: &ExecutionGraph,
    g2: &ExecutionGraph,
    plan: &ReExecutePlan,
    gran: Granularity,
) -> bool {
    re_execute_violation(g, g2, plan, gran).is_none()
}

/// Whether `e` may be added to the events `have` of a graph growing towards
/// `target`: all its po-predecessors are present, and it is not a read or
/// its source is present or it is committed.
fn guided_addable(
    target: &ExecutionGraph,
    idx: &EventIndex,
    po: &Relation,
    src: &BTreeMap<EventId, EventId>,
    have: &BTreeSet<EventId>,
    committed: &BTreeSet<EventId>,
    e: EventId,
) -> bool {
    let j = idx.of(e);
    (0..idx.ids.len()).all(|i| !po.contains(i, j) || have.contains(&idx.ids[i]))
        && (!target.label(e).kind().reads() || src.get(&e).is_some_and(|w| have.contains(w)) || committed.contains(&e))
}

/// `order` adds exactly the events of `target` missing from `start`, one
/// Guided Step at a time.
pub fn is_guided_order(start: &ExecutionGraph, target: &ExecutionGraph, committed: &BTreeSet<EventId>, order: &[EventId]) -> bool {
    if !start.events.keys().all(|e| target.events.contains_key(e))
        || restrict_unchecked(target, &start.events.keys().copied().collect()) != *start
    {
        return false;
    }
    let (idx, po) = closed_po(target);
    let src = rf_map(target);
    let mut have: BTreeSet<EventId> = start.events.keys().copied().collect();
    for &e in order {
        if have.contains(&e) || !target.events.contains_key(&e) || !guided_addable(target, &idx, &po, &src, &have, committed, e) {
            return false;
        }
        have.insert(e);
    }
    have.len() == target.len()
}

/// An order of Guided Steps under `committed` from `start` to `target`.
/// Addability only grows as events are added, so a greedy choice is
/// complete; ties go to the smallest id.
pub fn guided_steps_reachable(start: &ExecutionGraph, target: &ExecutionGraph, committed: &BTreeSet<EventId>) -> Option<Vec<EventId>> {
    if !start.events.keys().all(|e| target.events.contains_key(e))
        || restrict_unchecked(target, &start.events.keys().copied().collect()) != *start
    {
        return None;
    }
    let (idx, po) = closed_po(target);
    let src = rf_map(target);
    let mut have: BTreeSet<EventId> = start.events.keys().copied().collect();
    let mut order = vec![];
    while have.len() < target.len() {
        let e = target
            .events
            .keys()
            .copied()
            .find(|e| !have.contains(e) && guided_addable(target, &idx, &po, &src, &have, committed, *e))?;
        have.insert(e);
        order.push(e);
    }
    Some(order)
}

// ----------------------------------------------------------------------------
// Plan search
// ----------------------------------------------------------------------------

/// Events present in both graphs with identical labels, marks and forks.
fn common_events(g: &ExecutionGraph, g2: &ExecutionGraph) -> BTreeSet<EventId> {
    let forks = |h: &ExecutionGraph, e: EventId| -> Vec<_> { h.spawn.iter().filter(|(a, _)| *a == e).copied().collect() };
    g.events
        .iter()
        .filter(|(e, l)| {
            g2.events.get(e) == Some(l) && g.marks.get(e) == g2.marks.get(e) && forks(g, **e) == forks(g2, **e)
        })
        .map(|(e, _)| *e)
        .collect()
}

/// Candidate determined sets: per thread a prefix of common events, plus any
/// subset of the common init writes, filtered to po-prefix-closed sets.
fn determined_candidates(g: &ExecutionGraph, common: &BTreeSet<EventId>) -> Vec<BTreeSet<EventId>> {
    let inits: Vec<EventId> = common.iter().copied().filter(|e| e.is_init()).collect();
    let mut threads: Vec<Vec<EventId>> = vec![];
    for t in g.threads().into_iter().filter(|t| !t.is_init()) {
        let prefix: Vec<EventId> = g.thread_events(t).into_iter().take_while(|e| common.contains(e)).collect();
        threads.push(prefix);
    }
    let (idx, po) = closed_po(g);
    let mut out = vec![];
    let mut pick = vec![0usize; threads.len()];
    loop {
        for mask in 0u32..(1 << inits.len()) {
            let mut d: BTreeSet<EventId> = (0..inits.len()).filter(|k| mask >> k & 1 == 1).map(|k| inits[k]).collect();
            for (t, &n) in threads.iter().zip(&pick) {
                d.extend(t[..n].iter().copied());
            }
            let closed = d.iter().all(|&e| {
                let j = idx.of(e);
                (0..idx.ids.len()).all(|i| !po.contains(i, j) || d.contains(&idx.ids[i]))
            });
            if closed {
                out.push(d);
            }
        }
        let mut k = 0;
        loop {
            if k == pick.len() {
                // largest determined sets first
                out.sort_by_key(|d| std::cmp::Reverse(d.len()));
                return out;
            }
            pick[k] += 1;
            if pick[k] <= threads[k].len() {
                break;
            }
            pick[k] = 0;
            k += 1;
        }
    }
}

/// The largest committed sets compatible with `d`; several when `mo`
/// disagreements force a choice.
fn committed_for(
    g: &ExecutionGraph,
    g2: &ExecutionGraph,
    common: &BTreeSet<EventId>,
    d: &BTreeSet<EventId>,
    rpo2: &BTreeSet<(EventId, EventId)>,
    gran: Granularity,
) -> Vec<BTreeSet<EventId>> {
    let (idx, po) = closed_po(g);
    let mut a = common.clone();
    for &e in d {
        for s in immediate_po_successors(&idx, &po, e) {
            if !d.contains(&s) {
                a.remove(&s);
            }
        }
    }
    a.retain(|e| d.contains(e) || rpo2.iter().all(|(x, y)| y != e || d.contains(x)));
    let src = rf_map(g);
    let src2 = rf_map(g2);
    let mut out = vec![];
    shrink(g, g2, a, d, &src, &src2, gran, &mut out);
    out
}

#[allow(clippy::too_many_arguments)]
fn shrink(
    g: &ExecutionGraph,
    g2: &ExecutionGraph,
    mut a: BTreeSet<EventId>,
    d: &BTreeSet<EventId>,
    src: &BTreeMap<EventId, EventId>,
    src2: &BTreeMap<EventId, EventId>,
    gran: Granularity,
    out: &mut Vec<BTreeSet<EventId>>,
) {
    loop {
        let bad: Vec<EventId> = a
            .iter()
            .copied()
            .filter(|&e| {
                let reads = g.label(e).kind().reads();
                let src_ok = !reads || src.get(&e).is_some_and(|w| a.contains(w) && src2.get(&e) == Some(w));
                let pair_ok = gran == Granularity::Xmm || rmw_partner(g, e).is_none_or(|p| a.contains(&p));
                !src_ok || !pair_ok
            })
            .collect();
        if bad.is_empty() {
            break;
        }
        for e in bad {
            a.remove(&e);
        }
    }
    if !d.is_subset(&a) {
        return;
    }
    let (r1, r2) = (restrict_unchecked(g, &a), restrict_unchecked(g2, &a));
    if r1 == r2 {
        out.push(a);
        return;
    }
    // the remaining disagreement is in mo; drop either end of one pair
    let pair = r1.mo.symmetric_difference(&r2.mo).next().copied();
    if let Some((x, y)) = pair {
        for e in [x, y] {
            if !d.contains(&e) {
                let mut b = a.clone();
                b.remove(&e);
                shrink(g, g2, b, d, src, src2, gran, out);
            }
        }
    }
}

/// A Re-Execute plan taking `g` to `g2`, if any exists.
pub fn find_re_execute_plan(g: &ExecutionGraph, g2: &ExecutionGraph, gran: Granularity) -> Option<ReExecutePlan> {
    let common = common_events(g, g2);
    let rpo2 = derive_rpo(g2);
    for d in determined_candidates(g, &common) {
        for c in committed_for(g, g2, &common, &d, &rpo2, gran) {
            let start = restrict_unchecked(g2, &d);
            if let Some(order) = guided_steps_reachable(&start, g2, &c) {
                let plan = ReExecutePlan { committed: c, determined: d, addition_order: order };
                debug_assert!(validate_re_execute_step(g, g2, &plan, gran));
                return Some(plan);
            }
        }
    }
    None
}

// ----------------------------------------------------------------------------
// Reachability search
// ----------------------------------------------------------------------------

struct Pool {
    graphs: Vec<ExecutionGraph>,
    /// Execute successors: `(target index, added event)`.
    exec_succ: Vec<Vec<(usize, EventId)>>,
}

impl Pool {
    fn new(mut graphs: Vec<ExecutionGraph>) -> Self {
        // the empty graph and partial init prefixes come first
        let mut seen: BTreeSet<String> = BTreeSet::new();
        graphs.retain(|g| seen.insert(print_graph(g)));
        let n = graphs.len();
        let key: HashMap<String, usize> = graphs.iter().enumerate().map(|(i, g)| (print_graph(g), i)).collect();
        let preds: Vec<Vec<(usize, EventId)>> = graphs
            .par_iter()
            .map(|g2| {
                g2.events
                    .keys()
                    .copied()
                    .filter(|&e| porf_maximal(g2, e))
                    .filter_map(|e| {
                        let keep: BTreeSet<EventId> = g2.events.keys().copied().filter(|x| *x != e).collect();
                        key.get(&print_graph(&restrict_unchecked(g2, &keep))).map(|&i| (i, e))
                    })
                    .collect()
            })
            .collect();
        let mut exec_succ = vec![vec![]; n];
        for (j, ps) in preds.into_iter().enumerate() {
            for (i, e) in ps {
                exec_succ[i].push((j, e));
            }
        }
        Pool { graphs, exec_succ }
    }
}

/// Init-only prefixes of `g`: the empty graph, then one init write at a time.
fn init_prefixes(g: &ExecutionGraph) -> Vec<ExecutionGraph> {
    let inits: Vec<EventId> = g.events.keys().copied().filter(|e| e.is_init()).collect();
    (0..inits.len())
        .map(|k| restrict_unchecked(g, &inits[..k].iter().copied().collect()))
        .collect()
}

/// Low-level pool: every graph split into read/write halves, plus the
/// variants that stop between the halves of a thread's last RMW.
fn low_level_pool(high: Vec<ExecutionGraph>) -> Vec<ExecutionGraph> {
    let mut out = vec![];
    for g in high {
        let Ok(l) = to_low_level(&g) else { continue };
        for &(_, w) in &l.rmw {
            let last = l.thread_events(w.thread).last().copied() == Some(w);
            if last && !l.rf.iter().any(|(x, _)| *x == w) {
                let keep: BTreeSet<EventId> = l.events.keys().copied().filter(|e| *e != w).collect();
                let h = restrict_unchecked(&l, &keep);
                if is_consistent(&h) {
                    out.push(h);
                }
            }
        }
        out.push(l);
    }
    out
}

#[derive(Clone)]
enum Via {
    Root,
    Execute(usize, EventId),
    ReExecute(usize, ReExecutePlan),
}

fn search(graphs: Vec<ExecutionGraph>, target: &ExecutionGraph, max_re_exec: usize, gran: Granularity, max_events: usize) -> Reachability {
    let pool = Pool::new(graphs);
    let n = pool.graphs.len();
    let not_found = Reachability::NotWithinBounds { max_re_exec, max_events };
    let Some(goal) = pool.graphs.iter().position(|g| g == target) else {
        return not_found;
    };
    let Some(root) = pool.graphs.iter().position(|g| g.is_empty()) else {
        return not_found;
    };
    let mut via: Vec<Option<Via>> = vec![None; n];
    via[root] = Some(Via::Root);
    let mut frontier = execute_closure(&pool, &mut via, vec![root]);
    for level in 0..=max_re_exec {
        if via[goal].is_some() || level == max_re_exec || frontier.is_empty() {
            break;
        }
        let unreached: Vec<usize> = (0..n).filter(|&j| via[j].is_none()).collect();
        let found: Vec<(usize, usize, ReExecutePlan)> = unreached
            .par_iter()
            .filter_map(|&j| {
                frontier.iter().find_map(|&i| find_re_execute_plan(&pool.graphs[i], &pool.graphs[j], gran).map(|p| (j, i, p)))
            })
            .collect();
        let mut fresh = vec![];
        for (j, i, p) in found {
            via[j] = Some(Via::ReExecute(i, p));
            fresh.push(j);
        }
        frontier = execute_closure(&pool, &mut via, fresh);
    }
    if via[goal].is_none() {
        return not_found;
    }
    let mut steps = vec![];
    let mut cur = goal;
    loop {
        match via[cur].clone().expect("reached") {
            Via::Root => break,
            Via::Execute(i, e) => {
                steps.push(Step::Execute { event: e, graph: pool.graphs[cur].clone() });
                cur = i;
            }
            Via::ReExecute(i, plan) => {
                steps.push(Step::ReExecute { plan, graph: pool.graphs[cur].clone() });
                cur = i;
            }
        }
    }
    steps.reverse();
    Reachability::Constructible(ConstructionTrace { granularity: Some(gran), steps })
}

/// Marks everything reachable from `start` by Execute steps; returns the
/// newly reached states together with `start`, in index order.
fn execute_closure(pool: &Pool, via: &mut [Option<Via>], start: Vec<usize>) -> Vec<usize> {
    let mut out: BTreeSet<usize> = start.iter().copied().collect();
    let mut stack = start;
    while let Some(i) = stack.pop() {
        for &(j, e) in &pool.exec_succ[i] {
            if via[j].is_none() {
                via[j] = Some(Via::Execute(i, e));
                out.insert(j);
                stack.push(j);
            }
        }
    }
    out.into_iter().collect()
}

fn prefix_pool(p: &Program, target: &ExecutionGraph, b: &Bounds) -> Result<Vec<ExecutionGraph>, EnumError> {
    let mut graphs = enumerate_prefix_executions(p, b, target.len() + 2)?;
    if let Some(first) = graphs.iter().find(|g| g.events.keys().all(|e| e.is_init())) {
        let mut pre = init_prefixes(first);
        pre.append(&mut graphs);
        graphs = pre;
    } else {
        graphs.insert(0, ExecutionGraph::default());
    }
    Ok(graphs)
}

/// Bounded YMM constructibility of `target` (a high-level execution of `p`).
/// Intermediate graphs are consistent executions of po-prefixes of runs of
/// `p` with at most two events more than the target.
pub fn ymm_reachable(p: &Program, target: &ExecutionGraph, b: &Bounds, max_re_exec: usize) -> Result<Reachability, EnumError> {
    let graphs = prefix_pool(p, target, b)?;
    Ok(search(graphs, target, max_re_exec, Granularity::Ymm, target.len() + 2))
}

/// As [`ymm_reachable`] over low-level graphs, where committed sets may
/// split RMWs.
pub fn xmm_reachable(p: &Program, target: &ExecutionGraph, b: &Bounds, max_re_exec: usize) -> Result<Reachability, EnumError> {
    let high = prefix_pool(p, target, b)?;
    let Ok(low_target) = to_low_level(target) else {
        return Ok(Reachability::NotWithinBounds { max_re_exec, max_events: target.len() + 2 });
    };
    Ok(search(low_level_pool(high), &low_target, max_re_exec, Granularity::Xmm, target.len() + 2))
}

// ----------------------------------------------------------------------------
// Grounding
// ----------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Grounding {
    Grounded,
    NoBeginAtomic,
    /// Several hb-maximal `begin_atomic` events precede the access.
    AmbiguousBeginAtomic,
    UnknownSpec(String),
    /// This event (the access or an rf-ancestor) is not enabled.
    NotEnabled(EventId),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct GroundingReport {
    pub events: BTreeMap<EventId, Grounding>,
}

impl GroundingReport {
    pub fn is_grounded(&self) -> bool {
        self.events.values().all(|v| *v == Grounding::Grounded)
    }
}

fn is_atomic_access(g: &ExecutionGraph, e: EventId) -> bool {
    g.label(e).kind().mode().at_least_rlx()
}

fn begin_name(g: &ExecutionGraph, e: EventId) -> Option<&str> {
    match g.marks.get(&e) {
        Some(Mark::BeginAtomic(n)) => Some(n),
        _ => None,
    }
}

/// `e` and its atomic rf⁺-ancestors are enabled under `spec`; the chain
/// ends at the first nonatomic write.
fn grounded_wrt(g: &ExecutionGraph, src: &BTreeMap<EventId, EventId>, e: EventId, spec: &AtomicSpec) -> Result<(), EventId> {
    let mut cur = Some(e);
    let mut seen = BTreeSet::new();
    while let Some(x) = cur {
        if !seen.insert(x) || !is_atomic_access(g, x) {
            break;
        }
        let l = g.label(x);
        if !spec.enabled_at(&l.op, l.result) {
            return Err(x);
        }
        cur = src.get(&x).copied();
    }
    Ok(())
}

/// Per atomic access: the unique hb-maximal preceding `begin_atomic` on its
/// location, and enabledness of the access and its rf⁺-ancestors under
/// that spec.
pub fn check_grounded(g: &ExecutionGraph, specs: &[AtomicSpec]) -> GroundingReport {
    let a = Analysis::new(g);
    let src = rf_map(g);
    let begins: Vec<EventId> = g.marks.keys().copied().filter(|e| begin_name(g, *e).is_some()).collect();
    let mut events = BTreeMap::new();
    for e in g.events.keys().copied().filter(|&e| is_atomic_access(g, e)) {
        let loc = g.label(e).loc;
        let before: Vec<EventId> = begins.iter().copied().filter(|&b| g.label(b).loc == loc && a.hb(b, e)).collect();
        let maximal: Vec<EventId> = before.iter().copied().filter(|&b| !before.iter().any(|&c| a.hb(b, c))).collect();
        let verdict = match maximal.as_slice() {
            [] => Grounding::NoBeginAtomic,
            [b] => {
                let name = begin_name(g, *b).expect("begin event");
                match specs.iter().find(|s| s.name == name) {
                    None => Grounding::UnknownSpec(name.to_string()),
                    Some(spec) => match grounded_wrt(g, &src, e, spec) {
                        Ok(()) => Grounding::Grounded,
                        Err(x) => Grounding::NotEnabled(x),
                    },
                }
            }
            _ => Grounding::AmbiguousBeginAtomic,
        };
        events.insert(e, verdict);
    }
    GroundingReport { events }
}

/// Weak groundedness of every atomic access under `order`, which must be an
/// hb-consistent total order of `g`. "Grounding-order-predecessor" is read
/// as every event at or before the access in `order`.
pub fn check_weakly_grounded(g: &ExecutionGraph, order: &GroundingOrder, specs: &[AtomicSpec]) -> bool {
    if !order.is_consistent_with_hb(g) {
        return false;
    }
    let pos: BTreeMap<EventId, usize> = order.0.iter().enumerate().map(|(i, e)| (*e, i)).collect();
    let src = rf_map(g);
    let rf_ancestors = |x: EventId| -> Vec<EventId> {
        let mut out = vec![];
        let mut cur = src.get(&x).copied();
        while let Some(w) = cur {
            if out.contains(&w) {
                break;
            }
            out.push(w);
            cur = src.get(&w).copied();
        }
        out
    };
    let mut weak: BTreeMap<EventId, bool> = BTreeMap::new();
    for (i, &e) in order.0.iter().enumerate() {
        if !is_atomic_access(g, e) {
            continue;
        }
        let loc = g.label(e).loc;
        let recent = order.0[..i].iter().rev().find(|&&b| begin_name(g, b).is_some() && g.label(b).loc == loc);
        let first = recent.is_some_and(|&b| {
            let name = begin_name(g, b).expect("begin event");
            specs.iter().find(|s| s.name == name).is_some_and(|s| grounded_wrt(g, &src, e, s).is_ok())
        });
        let releases_first = order.0[..=i]
            .iter()
            .all(|&x| rf_ancestors(x).into_iter().all(|y| !is_release(g, y) || pos[&y] < i));
        let kind = g.label(e).kind();
        let source_ok = (kind.writes() && !kind.reads())
            || kind.is_fence()
            || src.get(&e).is_some_and(|&w| pos[&w] < i && (weak.get(&w).copied().unwrap_or(false) || !is_atomic_access(g, w)));
        let ok = first || (releases_first && source_ok);
        weak.insert(e, ok);
        if !ok {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enumerate::enumerate_executions;
    use crate::exec_graph::{GraphBuilder, Operation, ThreadId};
    use crate::lang::parse_program;
    use crate::tied::arc_spec;

    const LB: &str = "litmus LB\ninit X=0 Y=0\nthread {\n  let a = R_rlx(X) in W_rlx(Y, 1)\n}\nthread {\n  let b = R_rlx(Y) in W_rlx(X, 1)\n}\nexists a=1 /\\ b=1\n";
    const LBD: &str = "litmus LBD\ninit X=0 Y=0\nthread {\n  let a = R_rlx(X) in if a == 1 then W_rlx(Y, 1)\n}\nthread {\n  let b = R_rlx(Y) in if b == 1 then W_rlx(X, 1)\n}\nexists a=1 /\\ b=1\n";

    const LBF: &str = "litmus LBf\ninit X=0 Y=0\nthread {\n  let a = R_rlx(X) in fence_acq(X); W_rlx(Y, 1)\n}\nthread {\n  let b = R_rlx(Y) in fence_acq(Y); W_rlx(X, 1)\n}\nexists a=1 /\\ b=1\n";

    fn witness(src: &str) -> (Program, ExecutionGraph) {
        let p = parse_program(src).unwrap();
        let e = enumerate_executions(&p, &Bounds::default())
            .unwrap()
            .into_iter()
            .find(|e| p.postcondition_holds(&e.registers))
            .unwrap();
        (p, e.graph)
    }

    fn lb_straight() -> ExecutionGraph {
        let mut b = GraphBuilder::new();
        let ix = b.init(0);
        let iy = b.init(1);
        let r1 = b.push(ThreadId(1), 0, 0, Operation::ReadRlx);
        let w1 = b.push(ThreadId(1), 1, 0, Operation::WriteRlx(1));
        let r2 = b.push(ThreadId(2), 1, 0, Operation::ReadRlx);
        let w2 = b.push(ThreadId(2), 0, 0, Operation::WriteRlx(1));
        b.rf(ix, r1).rf(iy, r2).mo(&[ix, w2]).mo(&[iy, w1]);
        b.build()
    }

    #[test]
    fn execute_step_examples() {
        let mut b = GraphBuilder::new();
        b.init(0);
        let one = b.build();
        assert!(validate_execute_step(&ExecutionGraph::default(), &one));
        let (_, lb) = witness(LB);
        let keep: BTreeSet<EventId> = lb.events.keys().copied().filter(|e| e.is_init()).collect();
        assert!(!validate_execute_step(&restrict_unchecked(&lb, &keep), &lb));
    }

    #[test]
    fn re_execute_step_lb() {
        let (_, lb) = witness(LB);
        let g = lb_straight();
        let inits: BTreeSet<EventId> = g.events.keys().copied().filter(|e| e.is_init()).collect();
        // writes and inits agree; reads differ, so the cycle cannot be committed
        let plan = find_re_execute_plan(&g, &lb, Granularity::Ymm);
        assert!(plan.is_none());
        let same = ReExecutePlan { committed: g.events.keys().copied().collect(), determined: g.events.keys().copied().collect(), addition_order: vec![] };
        assert!(validate_re_execute_step(&g, &g, &same, Granularity::Ymm));
        assert!(inits.is_subset(&same.committed));
    }

    #[test]
    fn guided_steps_examples() {
        let (_, lb) = witness(LB);
        let empty = ExecutionGraph::default();
        assert!(guided_steps_reachable(&empty, &lb, &BTreeSet::new()).is_none());
        let reads: BTreeSet<EventId> = lb.events.iter().filter(|(_, l)| l.kind().reads()).map(|(e, _)| *e).collect();
        let order = guided_steps_reachable(&empty, &lb, &reads).unwrap();
        assert_eq!(order.len(), lb.len());
        assert_eq!(guided_steps_reachable(&lb, &lb, &BTreeSet::new()), Some(vec![]));
    }

    #[test]
    fn lb_constructible_lbd_not() {
        let (p, lb) = witness(LB);
        let r = ymm_reachable(&p, &lb, &Bounds::default(), 1).unwrap();
        let Reachability::Constructible(t) = r else { panic!("LB must be constructible") };
        assert!(t.replays());
        assert_eq!(t.final_graph(), lb);
        assert_eq!(t.re_executions(), 1);
        for s in &t.steps {
            if let Step::ReExecute { plan, graph } = s {
                assert!(committed_nondetermined_not_release(graph, plan));
            }
        }
        let (p, lbd) = witness(LBD);
        let r = ymm_reachable(&p, &lbd, &Bounds::default(), 3).unwrap();
        assert!(!r.is_constructible());
    }

    #[test]
    fn lbf_constructible() {
        let (p, lbf) = witness(LBF);
        let Reachability::Constructible(t) = ymm_reachable(&p, &lbf, &Bounds::default(), 1).unwrap() else {
            panic!("LBf must be constructible")
        };
        assert!(t.replays());
    }

    #[test]
    fn acquire_read_blocks_re_execution() {
        // LB with acquire reads: the read now has an rpo edge to the write
        let acq = LB.replace("R_rlx", "R_acq");
        let (p, g2) = witness(&acq);
        assert!(!ymm_reachable(&p, &g2, &Bounds::default(), 2).unwrap().is_constructible());
    }

    #[test]
    fn acyclic_targets_need_no_re_execution() {
        let p = parse_program(LB).unwrap();
        for e in enumerate_executions(&p, &Bounds::default()).unwrap() {
            if crate::relations::has_porf_cycle(&e.graph) {
                continue;
            }
            let Reachability::Constructible(t) = ymm_reachable(&p, &e.graph, &Bounds::default(), 0).unwrap() else {
                panic!("acyclic execution must be constructible")
            };
            assert_eq!(t.re_executions(), 0);
            assert!(t.replays());
        }
    }

    #[test]
    fn xmm_lifts_ymm() {
        let (p, lb) = witness(LB);
        let r = xmm_reachable(&p, &lb, &Bounds::default(), 1).unwrap();
        let Reachability::Constructible(t) = r else { panic!() };
        assert!(t.replays());
    }

    #[test]
    fn split_rmw_commit_depends_on_granularity() {
        // a lone FAA whose read half is not committed but whose write is
        let mut b = GraphBuilder::new();
        let ix = b.init(0);
        let r = b.push(ThreadId(1), 0, 0, Operation::ReadRlx);
        let w = b.push(ThreadId(1), 0, 0, Operation::WriteRlx(1));
        b.rf(ix, r).rmw(r, w).mo(&[ix, w]);
        let g = b.build();
        let plan = ReExecutePlan {
            committed: [ix, w].into_iter().collect(),
            determined: BTreeSet::new(),
            addition_order: vec![ix, r, w],
        };
        assert!(validate_re_execute_step(&g, &g, &plan, Granularity::Xmm));
        assert!(!validate_re_execute_step(&g, &g, &plan, Granularity::Ymm));
    }

    fn arc_one_owner() -> ExecutionGraph {
        let p = crate::arc::build_arc_program(&crate::arc::ArcScenario::new(0));
        enumerate_executions(&p, &Bounds::default()).unwrap().remove(0).graph
    }

    #[test]
    fn arc_execution_grounded_and_weakly_grounded() {
        let g = arc_one_owner();
        let specs = vec![arc_spec()];
        assert!(check_grounded(&g, &specs).is_grounded());
        assert!(check_weakly_grounded(&g, &GroundingOrder::hb_linearization(&g), &specs));
    }

    #[test]
    fn disabled_source_is_not_grounded() {
        let mut g = arc_one_owner();
        // relabel the decrement to read 0, which the spec does not enable
        let dec = *g.events.iter().find(|(_, l)| l.op.update().is_some()).unwrap().0;
        g.events.get_mut(&dec).unwrap().result = 0;
        let rep = check_grounded(&g, &[arc_spec()]);
        assert_eq!(rep.events[&dec], Grounding::NotEnabled(dec));
    }

    #[test]
    fn execute_extension_is_weakly_grounded() {
        let g = arc_one_owner();
        let order = GroundingOrder::hb_linearization(&g);
        let last = *order.0.last().unwrap();
        let keep: BTreeSet<EventId> = order.0[..order.0.len() - 1].iter().copied().collect();
        let old = restrict_unchecked(&g, &keep);
        assert!(check_grounded(&old, &[arc_spec()]).is_grounded());
        assert!(check_weakly_grounded(&g, &GroundingOrder::for_execute(&old, last), &[arc_spec()]));
    }
}
