//! Derived relations over execution graphs, C20 consistency, and data races.
//!
//! | side    | direct                  | via fence                                        |
//! |---------|-------------------------|--------------------------------------------------|
//! | release | release write/RMW `w`   | release fence po-before a relaxed+ write/RMW `w` |
//! | acquire | acquire read/RMW `r`    | acquire fence po-after a relaxed+ read/RMW `r`   |
//!
//! `sw` relates a release-side endpoint to an acquire-side endpoint whenever
//! `r` reads from `w`, or from the end of a release sequence (an rf chain of
//! RMWs) starting at an RMW that reads from `w`. Fence endpoints are the
//! related events; the mediating accesses are not.
//!
//! Fork edges (`spawn`) extend program order wherever program order is used
//! for ordering: in `hb`, in `rpo` and in `porf`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::exec_graph::{EdgeSet, EventId, ExecutionGraph, Loc, OpKind};

/// Dense bit-matrix relation over `0..n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Relation {
    n: usize,
    words: usize,
    bits: Vec<u64>,
}

impl Relation {
    pub fn new(n: usize) -> Self {
        let words = n.div_ceil(64).max(1);
        Relation { n, words, bits: vec![0; n * words] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.words + j / 64] >> (j % 64) & 1 == 1
    }

    pub fn insert(&mut self, i: usize, j: usize) {
        self.bits[i * self.words + j / 64] |= 1 << (j % 64);
    }

    fn row(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words..(i + 1) * self.words]
    }

    fn or_row_into(&mut self, src: usize, dst: usize) -> bool {
        let mut changed = false;
        for w in 0..self.words {
            let v = self.bits[src * self.words + w];
            let d = &mut self.bits[dst * self.words + w];
            changed |= *d | v != *d;
            *d |= v;
        }
        changed
    }

    pub fn union_with(&mut self, other: &Relation) {
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }

    /// Closes the relation under transitivity in place.
    pub fn close(&mut self) {
        for k in 0..self.n {
            for i in 0..self.n {
                if i != k && self.contains(i, k) {
                    self.or_row_into(k, i);
                }
            }
        }
    }

    pub fn closure(&self) -> Relation {
        let mut r = self.clone();
        r.close();
        r
    }

    pub fn is_irreflexive(&self) -> bool {
        (0..self.n).all(|i| !self.contains(i, i))
    }

    pub fn successors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let row = self.row(i);
        (0..self.n).filter(move |&j| row[j / 64] >> (j % 64) & 1 == 1)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| self.successors(i).map(move |j| (i, j)))
    }
}

/// Dense numbering of a graph's events in `EventId` order.
#[derive(Clone, Debug)]
pub struct EventIndex {
    pub ids: Vec<EventId>,
    pos: BTreeMap<EventId, usize>,
}

impl EventIndex {
    pub fn new(g: &ExecutionGraph) -> Self {
        let ids: Vec<EventId> = g.events.keys().copied().collect();
        let pos = ids.iter().enumerate().map(|(i, e)| (*e, i)).collect();
        EventIndex { ids, pos }
    }

    pub fn of(&self, e: EventId) -> usize {
        self.pos[&e]
    }

    pub fn get(&self, e: EventId) -> Option<usize> {
        self.pos.get(&e).copied()
    }

    pub fn relation(&self, edges: &EdgeSet) -> Relation {
        let mut r = Relation::new(self.ids.len());
        for &(a, b) in edges {
            if let (Some(i), Some(j)) = (self.get(a), self.get(b)) {
                r.insert(i, j);
            }
        }
        r
    }

    pub fn edges(&self, r: &Relation) -> EdgeSet {
        r.pairs().map(|(i, j)| (self.ids[i], self.ids[j])).collect()
    }
}

/// Program order extended by fork edges, transitively closed.
pub fn po_with_spawn(g: &ExecutionGraph, idx: &EventIndex) -> Relation {
    let mut r = idx.relation(&g.po);
    for &(e, t) in &g.spawn {
        if let (Some(i), Some(first)) = (idx.get(e), g.events.keys().find(|x| x.thread == t)) {
            r.insert(i, idx.of(*first));
        }
    }
    r.close();
    r
}

/// All derived relations of one graph, as dense matrices.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub idx: EventIndex,
    pub po: Relation,
    pub rf: Relation,
    pub mo: Relation,
    pub sw: Relation,
    pub hb: Relation,
    pub fr: Relation,
    pub eco: Relation,
}

impl Analysis {
    pub fn new(g: &ExecutionGraph) -> Self {
        let idx = EventIndex::new(g);
        let po = po_with_spawn(g, &idx);
        let rf = idx.relation(&g.rf);
        let mo = idx.relation(&g.mo);
        let sw = idx.relation(&derive_sw(g));
        let mut hb = po.clone();
        hb.union_with(&sw);
        hb.close();
        let fr = idx.relation(&derive_fr(g));
        let mut eco = rf.clone();
        eco.union_with(&mo);
        eco.union_with(&fr);
        eco.close();
        Analysis { idx, po, rf, mo, sw, hb, fr, eco }
    }

    pub fn hb(&self, a: EventId, b: EventId) -> bool {
        self.hb.contains(self.idx.of(a), self.idx.of(b))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedRelations {
    pub sw: EdgeSet,
    pub hb: EdgeSet,
    pub fr: EdgeSet,
    pub eco: EdgeSet,
    pub rpo: EdgeSet,
}

impl DerivedRelations {
    pub fn new(g: &ExecutionGraph) -> Self {
        let a = Analysis::new(g);
        DerivedRelations {
            sw: a.idx.edges(&a.sw),
            hb: a.idx.edges(&a.hb),
            fr: a.idx.edges(&a.fr),
            eco: a.idx.edges(&a.eco),
            rpo: derive_rpo(g),
        }
    }
}

fn rf_sources(g: &ExecutionGraph) -> BTreeMap<EventId, EventId> {
    g.rf.iter().map(|&(w, r)| (r, w)).collect()
}

/// Writes from which a release sequence (possibly empty) leads to `r`'s source.
fn sw_origins(g: &ExecutionGraph, src: &BTreeMap<EventId, EventId>, r: EventId) -> Vec<EventId> {
    let rmw_read_of: BTreeMap<EventId, EventId> = g.rmw.iter().map(|&(a, b)| (b, a)).collect();
    let mut out = Vec::new();
    let mut cur = src.get(&r).copied();
    while let Some(x) = cur {
        if out.contains(&x) {
            break;
        }
        out.push(x);
        cur = if g.label(x).kind().is_rmw() {
            src.get(&x).copied()
        } else {
            rmw_read_of.get(&x).and_then(|rd| src.get(rd)).copied()
        };
    }
    out
}

pub fn derive_sw(g: &ExecutionGraph) -> EdgeSet {
    let src = rf_sources(g);
    let po_after = |a: EventId| g.po.iter().filter(move |(x, _)| *x == a).map(|(_, y)| *y);
    let po_before = |b: EventId| g.po.iter().filter(move |(_, y)| *y == b).map(|(x, _)| *x);
    let mut sw = EdgeSet::new();
    for (&r, lr) in &g.events {
        let kr = lr.kind();
        if !kr.reads() || !kr.mode().at_least_rlx() {
            continue;
        }
        let mut acq: Vec<EventId> = po_after(r)
            .filter(|f| g.label(*f).kind() == OpKind::FenceAcq)
            .collect();
        if kr.is_acquire() {
            acq.push(r);
        }
        if acq.is_empty() {
            continue;
        }
        for w in sw_origins(g, &src, r) {
            let kw = g.label(w).kind();
            if !kw.mode().at_least_rlx() {
                continue;
            }
            let mut rel: Vec<EventId> = po_before(w)
                .filter(|f| g.label(*f).kind() == OpKind::FenceRel)
                .collect();
            if kw.is_release() {
                rel.push(w);
            }
            for &a in &rel {
                for &b in &acq {
                    sw.insert((a, b));
                }
            }
        }
    }
    sw
}

pub fn derive_hb(g: &ExecutionGraph) -> EdgeSet {
    let a = Analysis::new(g);
    a.idx.edges(&a.hb)
}

pub fn derive_fr(g: &ExecutionGraph) -> EdgeSet {
    let mut fr = EdgeSet::new();
    for &(w, r) in &g.rf {
        for &(w1, w2) in &g.mo {
            if w1 == w && w2 != r {
                fr.insert((r, w2));
            }
        }
    }
    fr
}

pub fn derive_eco(g: &ExecutionGraph) -> EdgeSet {
    let a = Analysis::new(g);
    a.idx.edges(&a.eco)
}

/// Whether a program-order pair `(e, e2)` is preserved by re-execution.
/// Fences count only in the fence-specific cases.
pub fn rpo_base(e: OpKind, e2: OpKind) -> bool {
    (e.reads() && e.mode().at_least_rlx() && e2 == OpKind::FenceAcq)
        || (!e.is_fence() && e.is_acquire())
        || (!e2.is_fence() && e2.is_release())
        || (e == OpKind::FenceRel && e2.writes() && e2.mode().at_least_rlx())
}

pub fn derive_rpo(g: &ExecutionGraph) -> EdgeSet {
    let idx = EventIndex::new(g);
    let po = po_with_spawn(g, &idx);
    let mut r = Relation::new(idx.ids.len());
    for (i, j) in po.pairs() {
        if rpo_base(g.label(idx.ids[i]).kind(), g.label(idx.ids[j]).kind()) {
            r.insert(i, j);
        }
    }
    r.close();
    idx.edges(&r)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reason {
    NotRfComplete,
    CoherenceViolation((EventId, EventId)),
    AtomicityViolation(EventId),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyVerdict {
    pub consistent: bool,
    pub reasons: Vec<Reason>,
}

pub fn check_consistent(g: &ExecutionGraph) -> ConsistencyVerdict {
    check_consistent_with(g, &Analysis::new(g))
}

pub fn check_consistent_with(g: &ExecutionGraph, a: &Analysis) -> ConsistencyVerdict {
    let mut reasons = Vec::new();
    if !crate::exec_graph::is_rf_complete(g) {
        reasons.push(Reason::NotRfComplete);
    }
    let n = a.idx.ids.len();
    for i in 0..n {
        if a.hb.contains(i, i) {
            reasons.push(Reason::CoherenceViolation((a.idx.ids[i], a.idx.ids[i])));
        }
    }
    for (i, j) in a.hb.pairs() {
        if i != j && a.eco.contains(j, i) {
            reasons.push(Reason::CoherenceViolation((a.idx.ids[i], a.idx.ids[j])));
        }
    }
    let mut pairs: Vec<(EventId, EventId)> = g.rmw.iter().copied().collect();
    pairs.extend(g.events.iter().filter(|(_, l)| l.kind().is_rmw()).map(|(e, _)| (*e, *e)));
    for (rd, wr) in pairs {
        let (ri, wi) = (a.idx.of(rd), a.idx.of(wr));
        if (0..n).any(|e| a.fr.contains(ri, e) && a.mo.contains(e, wi)) {
            reasons.push(Reason::AtomicityViolation(rd));
        }
    }
    ConsistencyVerdict { consistent: reasons.is_empty(), reasons }
}

pub fn is_consistent(g: &ExecutionGraph) -> bool {
    check_consistent(g).consistent
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Race {
    pub a: EventId,
    pub b: EventId,
    pub loc: Loc,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaceReport {
    pub races: Vec<Race>,
}

impl RaceReport {
    pub fn is_racy(&self) -> bool {
        !self.races.is_empty()
    }
}

/// Hb-unordered same-location pairs with a write-like and a nonatomic member.
/// Events in `mode_events` count as nonatomic writes.
pub fn find_data_races(g: &ExecutionGraph, mode_events: &std::collections::BTreeSet<EventId>) -> RaceReport {
    find_data_races_with(g, &Analysis::new(g), mode_events)
}

pub fn find_data_races_with(
    g: &ExecutionGraph,
    a: &Analysis,
    mode_events: &std::collections::BTreeSet<EventId>,
) -> RaceReport {
    let ids = &a.idx.ids;
    let mut races = Vec::new();
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            let (x, y) = (ids[i], ids[j]);
            let (lx, ly) = (g.label(x), g.label(y));
            if lx.loc != ly.loc || lx.kind().is_fence() || ly.kind().is_fence() {
                continue;
            }
            let mx = mode_events.contains(&x);
            let my = mode_events.contains(&y);
            let write_like = mx || my || lx.kind().writes() || ly.kind().writes();
            let nonatomic = mx || my || lx.kind().is_nonatomic() || ly.kind().is_nonatomic();
            if write_like && nonatomic && !a.hb.contains(i, j) && !a.hb.contains(j, i) {
                races.push(Race { a: x, b: y, loc: lx.loc });
            }
        }
    }
    RaceReport { races }
}

/// True iff `po ∪ rf` (with fork edges) has a cycle.
pub fn has_porf_cycle(g: &ExecutionGraph) -> bool {
    let idx = EventIndex::new(g);
    let mut r = po_with_spawn(g, &idx);
    r.union_with(&idx.relation(&g.rf));
    r.close();
    !r.is_irreflexive()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec_graph::{GraphBuilder, Operation, ThreadId, UpdateFn};
    use std::collections::BTreeSet;

    fn lb_cycle() -> ExecutionGraph {
        let mut b = GraphBuilder::new();
        let ix = b.init(0);
        let iy = b.init(1);
        let r1 = b.push(ThreadId(1), 0, 1, Operation::ReadRlx);
        let w1 = b.push(ThreadId(1), 1, 0, Operation::WriteRlx(1));
        let r2 = b.push(ThreadId(2), 1, 1, Operation::ReadRlx);
        let w2 = b.push(ThreadId(2), 0, 0, Operation::WriteRlx(1));
        b.rf(w2, r1).rf(w1, r2).mo(&[ix, w2]).mo(&[iy, w1]);
        b.build()
    }

    /// Independent closure by repeated relational composition.
    fn naive_closure(base: &EdgeSet) -> EdgeSet {
        let mut s = base.clone();
        loop {
            let extra: Vec<_> = s
                .iter()
                .flat_map(|&(a, b)| s.iter().filter(move |(c, _)| *c == b).map(move |&(_, d)| (a, d)))
                .filter(|p| !s.contains(p))
                .collect();
            if extra.is_empty() {
                return s;
            }
            s.extend(extra);
        }
    }

    #[test]
    fn lb_cycle_relations() {
        let g = lb_cycle();
        let d = DerivedRelations::new(&g);
        assert!(d.sw.is_empty());
        assert_eq!(d.hb, naive_closure(&g.po));
        assert!(d.hb.contains(&(EventId::new(0, 0), EventId::new(1, 0))));
        assert!(d.hb.contains(&(EventId::new(0, 0), EventId::new(2, 1))));
        assert!(check_consistent(&g).consistent);
        assert!(has_porf_cycle(&g));
    }

    #[test]
    fn fr_instances() {
        let mut b = GraphBuilder::new();
        let i = b.init(0);
        let w1 = b.push(ThreadId(1), 0, 0, Operation::WriteRlx(1));
        let w2 = b.push(ThreadId(1), 0, 0, Operation::WriteRlx(2));
        let r = b.push(ThreadId(2), 0, 1, Operation::ReadRlx);
        let r2 = b.push(ThreadId(2), 0, 2, Operation::ReadRlx);
        b.rf(w1, r).rf(w2, r2).mo(&[i, w1, w2]);
        let g = b.build();
        let fr = derive_fr(&g);
        assert!(fr.contains(&(r, w2)));
        assert!(!fr.iter().any(|(a, _)| *a == r2));
    }

    #[test]
    fn release_acquire_direct() {
        let mut b = GraphBuilder::new();
        let i = b.init(0);
        let w = b.push(ThreadId(1), 0, 0, Operation::WriteRel(1));
        let r = b.push(ThreadId(2), 0, 1, Operation::ReadAcq);
        b.rf(w, r).mo(&[i, w]);
        assert_eq!(derive_sw(&b.build()), EdgeSet::from([(w, r)]));
    }

    #[test]
    fn release_faa_to_acquire_fence() {
        let mut b = GraphBuilder::new();
        let i = b.init(0);
        let d1 = b.push(ThreadId(1), 0, 0, Operation::RmwRel(UpdateFn::Add(-1)));
        let d2 = b.push(ThreadId(2), 0, 1, Operation::RmwRel(UpdateFn::Add(-1)));
        let f = b.push(ThreadId(2), 0, 0, Operation::FenceAcq);
        b.rf(i, d1).rf(d1, d2).mo(&[i, d1, d2]);
        let g = b.build();
        // the init write is nonatomic: no release side there
        assert_eq!(derive_sw(&g), EdgeSet::from([(d1, f)]));
        let a = Analysis::new(&g);
        assert!(a.hb(d1, f));
    }

    #[test]
    fn release_sequence_through_rmws() {
        let mut b = GraphBuilder::new();
        let i = b.init(0);
        let w = b.push(ThreadId(1), 0, 0, Operation::WriteRel(1));
        let u = b.push(ThreadId(2), 0, 1, Operation::RmwRlx(UpdateFn::Add(1)));
        let r = b.push(ThreadId(3), 0, 2, Operation::ReadAcq);
        b.rf(w, u).rf(u, r).mo(&[i, w, u]);
        let g = b.build();
        assert!(check_consistent(&g).consistent);
        assert!(derive_sw(&g).contains(&(w, r)));
        let low = crate::exec_graph::to_low_level(&g).unwrap();
        assert!(derive_sw(&low).contains(&(w, EventId::new(3, 0))));
    }

    #[test]
    fn rpo_table() {
        use OpKind::*;
        assert!(rpo_base(ReadRlx, FenceAcq));
        assert!(!rpo_base(ReadRlx, WriteRlx));
        assert!(rpo_base(FenceRel, WriteRlx));
        assert!(rpo_base(ReadAcq, WriteRlx));
        assert!(rpo_base(ReadRlx, WriteRel));
        assert!(!rpo_base(FenceAcq, WriteRlx));
        assert!(!rpo_base(ReadRlx, FenceRel));
    }

    #[test]
    fn coherence_violation() {
        let mut b = GraphBuilder::new();
        let w1 = b.push(ThreadId(1), 0, 0, Operation::WriteNA(1));
        let w2 = b.push(ThreadId(1), 0, 0, Operation::WriteNA(2));
        b.mo(&[w2, w1]);
        let v = check_consistent(&b.build());
        assert!(v.reasons.contains(&Reason::CoherenceViolation((w1, w2))));
    }

    #[test]
    fn two_faas_reading_init() {
        for order in [[1u32, 2], [2, 1]] {
            let mut b = GraphBuilder::new();
            let i = b.init(0);
            let u1 = b.push(ThreadId(1), 0, 0, Operation::RmwRlx(UpdateFn::Add(1)));
            let u2 = b.push(ThreadId(2), 0, 0, Operation::RmwRlx(UpdateFn::Add(1)));
            let chain = if order[0] == 1 { [i, u1, u2] } else { [i, u2, u1] };
            b.rf(i, u1).rf(i, u2).mo(&chain);
            let v = check_consistent(&b.build());
            assert!(v.reasons.iter().any(|r| matches!(r, Reason::AtomicityViolation(_))));
        }
    }

    #[test]
    fn races() {
        let mut b = GraphBuilder::new();
        let w1 = b.push(ThreadId(1), 5, 0, Operation::WriteNA(1));
        let w2 = b.push(ThreadId(2), 5, 0, Operation::WriteNA(2));
        b.mo(&[w1, w2]);
        let g = b.build();
        let r = find_data_races(&g, &BTreeSet::new());
        assert_eq!(r.races, vec![Race { a: w1, b: w2, loc: 5 }]);

        let mut b = GraphBuilder::new();
        let w = b.push(ThreadId(1), 5, 0, Operation::WriteNA(1));
        let r1 = b.push(ThreadId(2), 5, 1, Operation::ReadNA);
        let r2 = b.push(ThreadId(3), 5, 1, Operation::ReadNA);
        b.rf(w, r1).rf(w, r2);
        let g = b.build();
        let races = find_data_races(&g, &BTreeSet::new()).races;
        assert!(races.iter().all(|x| (x.a, x.b) != (r1, r2)));
        assert!(find_data_races(&ExecutionGraph::new(), &BTreeSet::new()).races.is_empty());
    }

    #[test]
    fn single_thread_has_no_porf_cycle() {
        let mut b = GraphBuilder::new();
        let i = b.init(0);
        let w = b.push(ThreadId(1), 0, 0, Operation::WriteRlx(1));
        let r = b.push(ThreadId(1), 0, 1, Operation::ReadRlx);
        b.rf(w, r).mo(&[i, w]);
        assert!(!has_porf_cycle(&b.build()));
    }

    #[test]
    fn low_and_high_verdicts_agree_on_atomicity() {
        let mut b = GraphBuilder::new();
        let i = b.init(0);
        let u1 = b.push(ThreadId(1), 0, 0, Operation::RmwRlx(UpdateFn::Add(1)));
        let u2 = b.push(ThreadId(2), 0, 0, Operation::RmwRlx(UpdateFn::Add(1)));
        b.rf(i, u1).rf(i, u2).mo(&[i, u1, u2]);
        let g = b.build();
        let low = crate::exec_graph::to_low_level(&g).unwrap();
        assert_eq!(check_consistent(&g).consistent, check_consistent(&low).consistent);
    }
}
