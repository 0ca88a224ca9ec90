//! Core ARC: the reference-counting specification, its lemma oracles and
//! the end-to-end scenario programs.

use crate::enumerate::{enumerate_executions, Bounds, EnumError};
use crate::exec_graph::{EventId, ExecutionGraph, Mark, Operation, ThreadId, UpdateFn, Val};
use crate::opsem::{explore_safety, Consistency};
use crate::relations::{find_data_races, Analysis};
use crate::xmm::check_grounded;
use rayon::prelude::*;
use crate::tied::{
    arc_spec, check_sufficiency, search_witness, AtomicSpec, Guard, Judge, Monoid, Nat, Query, SearchStats,
    Sufficiency, TotalTied, Witness,
};
use crate::lang::{parse_program, Program};
use crate::tied::print_spec;
use serde::Serialize;

/// The thread whose operation is being judged.
const PIVOT: ThreadId = ThreadId(1);

/// Outcome of a bounded lemma oracle.
#[derive(Clone, Debug)]
pub struct LemmaVerdict {
    pub holds: bool,
    pub bound: usize,
    /// Trace graphs examined by the witness search.
    pub graphs: usize,
    /// Modification-order sequences walked by the symbolic cross-check.
    pub sequences: usize,
    pub counterexample: Option<(Box<Witness>, TotalTied)>,
    /// A sequence refuting the symbolic cross-check, in surface syntax.
    pub bad_sequence: Option<Vec<(String, Val)>>,
}

impl LemmaVerdict {
    /// True when nothing was examined.
    pub fn is_vacuous(&self) -> bool {
        self.graphs == 0
    }
}

/// Summary line for a lemma verdict.
#[derive(Clone, Debug, Serialize)]
pub struct LemmaSummary {
    pub name: String,
    pub holds: bool,
    pub bound: usize,
    pub graphs: usize,
    pub sequences: usize,
}

impl LemmaVerdict {
    pub fn summary(&self, name: &str) -> LemmaSummary {
        LemmaSummary {
            name: name.into(),
            holds: self.holds,
            bound: self.bound,
            graphs: self.graphs,
            sequences: self.sequences,
        }
    }
}

// ----------------------------------------------------------------------------
// Scenario programs
// ----------------------------------------------------------------------------

/// How the owners of an instance come to exist.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ArcLayout {
    /// The allocating thread clones once per extra owner, then forks them.
    Fan,
    /// Each owner clones for the next one and forks it before its own work.
    Chain,
}

/// One ARC instance shared by `clones + 1` owners, each of which reads the
/// payload once and drops its permission once.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ArcScenario {
    pub clones: usize,
    pub layout: ArcLayout,
    pub payload: Val,
}

impl ArcScenario {
    pub fn new(clones: usize) -> Self {
        ArcScenario { clones, layout: ArcLayout::Fan, payload: 42 }
    }

    pub fn owners(&self) -> usize {
        self.clones + 1
    }
}

/// `get(a)`, then `drop(a)`, with registers suffixed by `i`. The last owner
/// ends atomic mode before freeing: `free` needs a nonatomic cell.
fn owner_text(i: usize) -> String {
    format!(
        "let g{i} = [a + 1]_na in\nlet n{i} = FAA_rel(a, -1) in\nif n{i} == 1 then (\n  fence_acq(a);\n  end_atomic(a);\n  free(a);\n  free(a + 1)\n)"
    )
}

fn chain_text(i: usize, owners: usize) -> String {
    if i + 1 == owners {
        return owner_text(i);
    }
    format!("FAA_rlx(a, 1);\nfork(\n{}\n);\n{}", indent(&chain_text(i + 1, owners)), owner_text(i))
}

fn indent(s: &str) -> String {
    s.lines().map(|l| format!("  {l}")).collect::<Vec<_>>().join("\n")
}

/// The scenario as a litmus program with the reference-counting spec.
pub fn build_arc_program(s: &ArcScenario) -> Program {
    assert!(s.clones <= 3, "desk-scale scenarios have at most 3 clones");
    let mut body = format!("let a = cons(1, {}) in\nbegin_atomic(a, arc);\n", s.payload);
    match s.layout {
        ArcLayout::Fan => {
            body.push_str(&"FAA_rlx(a, 1);\n".repeat(s.clones));
            for i in 1..s.owners() {
                body.push_str(&format!("fork(\n{}\n);\n", indent(&owner_text(i))));
            }
            body.push_str(&owner_text(0));
        }
        ArcLayout::Chain => body.push_str(&chain_text(0, s.owners())),
    }
    let text = format!(
        "% Core ARC, {} clone(s), {:?} layout\nlitmus ARC{}\n{}thread {{\n{}\n}}\n",
        s.clones,
        s.layout,
        s.clones,
        print_spec(&arc_spec()),
        indent(&body)
    );
    parse_program(&text).expect("generated ARC program parses")
}

// ----------------------------------------------------------------------------
// Spec accessors and mutations
// ----------------------------------------------------------------------------

fn delta(op: &Operation) -> Option<i64> {
    match op.update() {
        Some(UpdateFn::Add(k)) => Some(*k),
        _ => None,
    }
}

/// The enabled counter updates of a spec: `(op, k)` for `FAA(k)`.
fn counter_ops(spec: &AtomicSpec) -> Vec<(Operation, i64)> {
    spec.pre.iter().filter_map(|(o, _)| delta(o).map(|k| (o.clone(), k))).collect()
}

fn decrement(spec: &AtomicSpec) -> Operation {
    counter_ops(spec).into_iter().find(|(_, k)| *k < 0).expect("spec has a decrement").0
}

fn fence(spec: &AtomicSpec) -> Operation {
    spec.pre.iter().find(|(o, _)| o.kind().is_fence()).expect("spec has a fence").0.clone()
}

/// ARC with increments also enabled when they read 0.
pub fn mutant_increment_from_zero() -> AtomicSpec {
    let mut s = arc_spec();
    for r in &mut s.post {
        if delta(&r.op).is_some_and(|k| k > 0) {
            r.guard = Guard::ge(0);
        }
    }
    s
}

/// ARC with relaxed instead of release decrements.
pub fn mutant_relaxed_decrement() -> AtomicSpec {
    let mut s = arc_spec();
    let rlx = Operation::RmwRlx(UpdateFn::Add(-1));
    for (o, _) in &mut s.pre {
        if delta(o).is_some_and(|k| k < 0) {
            *o = rlx.clone();
        }
    }
    for r in &mut s.post {
        if delta(&r.op).is_some_and(|k| k < 0) {
            r.op = rlx.clone();
        }
    }
    s
}

/// ARC with a decrement that demands no resource.
pub fn mutant_free_decrement() -> AtomicSpec {
    let mut s = arc_spec();
    for (o, p) in &mut s.pre {
        if delta(o).is_some_and(|k| k < 0) {
            *p = (Nat(0), Nat(0));
        }
    }
    s
}

// ----------------------------------------------------------------------------
// Modification-order walks
// ----------------------------------------------------------------------------

/// Every sequence of at most `bound` counter updates applied from `v0`,
/// as `(op index, value read)` lists. The updates form one mo chain, so
/// each reads its predecessor's value.
fn mo_sequences(spec: &AtomicSpec, bound: usize) -> Vec<Vec<(usize, Val)>> {
    let ops = counter_ops(spec);
    let mut out = vec![vec![]];
    let mut frontier: Vec<(Vec<(usize, Val)>, Val)> = vec![(vec![], spec.v0)];
    for _ in 0..bound {
        let mut next = vec![];
        for (seq, v) in &frontier {
            for (i, (_, k)) in ops.iter().enumerate() {
                let mut s = seq.clone();
                s.push((i, *v));
                out.push(s.clone());
                next.push((s, v.wrapping_add(*k)));
            }
        }
        frontier = next;
    }
    out
}

fn surface(spec: &AtomicSpec, seq: &[(usize, Val)]) -> Vec<(String, Val)> {
    let ops = counter_ops(spec);
    seq.iter().map(|&(i, v)| (crate::tied::op_surface(&ops[i].0), v)).collect()
}

/// Two decrements reading 1 are separated by an increment reading 0, and
/// that increment is disabled.
fn intervening_increment(spec: &AtomicSpec, bound: usize) -> (usize, Option<Vec<(String, Val)>>) {
    let ops = counter_ops(spec);
    let seqs = mo_sequences(spec, bound);
    for seq in &seqs {
        let ones: Vec<usize> = (0..seq.len()).filter(|&j| ops[seq[j].0].1 < 0 && seq[j].1 == 1).collect();
        for w in ones.windows(2) {
            let between = &seq[w[0] + 1..w[1]];
            let fine = between.iter().any(|&(i, v)| ops[i].1 > 0 && v == 0)
                && between
                    .iter()
                    .filter(|&&(i, v)| ops[i].1 > 0 && v == 0)
                    .all(|(i, v)| !spec.enabled_at(&ops[*i].0, *v));
            if !fine {
                return (seqs.len(), Some(surface(spec, seq)));
            }
        }
    }
    (seqs.len(), None)
}

/// Before a decrement reading 1 the chain holds as many increments as
/// decrements.
fn balanced_prefix(spec: &AtomicSpec, bound: usize) -> (usize, Option<Vec<(String, Val)>>) {
    let ops = counter_ops(spec);
    let seqs = mo_sequences(spec, bound);
    for seq in &seqs {
        // only traces whose events are all enabled
        if !seq.iter().all(|&(i, v)| spec.enabled_at(&ops[i].0, v)) {
            continue;
        }
        let Some(&(last, v)) = seq.last() else { continue };
        if ops[last].1 < 0 && v == 1 {
            let incs = seq[..seq.len() - 1].iter().filter(|(i, _)| ops[*i].1 > 0).count();
            let decs = seq.len() - 1 - incs;
            if incs != decs {
                return (seqs.len(), Some(surface(spec, seq)));
            }
        }
    }
    (seqs.len(), None)
}

fn run(spec: &AtomicSpec, op: Operation, result: Val, bound: usize, bad: &(dyn Fn(&TotalTied) -> bool + Sync)) -> (usize, Option<(Box<Witness>, TotalTied)>) {
    let q = Query { spec, thread: PIVOT, op, result, judge: Judge::Plain, bound };
    let stats = SearchStats::default();
    let found = search_witness(&q, bad, &stats);
    (stats.snapshot()[0], found.map(|(w, o)| (Box::new(w), o)))
}

// ----------------------------------------------------------------------------
// Lemma oracles
// ----------------------------------------------------------------------------

/// A decrement reading 1 is consistent only with resources holding no
/// thread-bound part: every witness for `(dec, 1)` with `ω ⊇ (1, ε)` has
/// `Θ = ε`.
pub fn check_lemma_decrement(bound: usize) -> LemmaVerdict {
    check_lemma_decrement_with(&arc_spec(), bound)
}

pub fn check_lemma_decrement_with(spec: &AtomicSpec, bound: usize) -> LemmaVerdict {
    let (graphs, cex) = run(spec, decrement(spec), 1, bound, &|w| w.global.0 >= 1 && !w.bound.is_unit());
    let (sequences, bad_sequence) = intervening_increment(spec, bound);
    LemmaVerdict { holds: cex.is_none() && bad_sequence.is_none(), bound, graphs, sequences, counterexample: cex, bad_sequence }
}

/// An acquire fence reading 0 is consistent only with an exhausted global
/// resource: every witness with `Θ(t) ≥ 1` has `ρ = 0`.
pub fn check_lemma_fence(bound: usize) -> LemmaVerdict {
    check_lemma_fence_with(&arc_spec(), bound)
}

pub fn check_lemma_fence_with(spec: &AtomicSpec, bound: usize) -> LemmaVerdict {
    let (graphs, cex) = run(spec, fence(spec), 0, bound, &|w| w.bound.get(PIVOT).0 >= 1 && w.global.0 != 0);
    let (sequences, bad_sequence) = balanced_prefix(spec, bound);
    LemmaVerdict { holds: cex.is_none() && bad_sequence.is_none(), bound, graphs, sequences, counterexample: cex, bad_sequence }
}

/// Outcome of the sufficiency oracle.
#[derive(Clone, Debug)]
pub struct SufficiencyVerdict {
    pub result: Sufficiency,
    /// Chains in which some counter update reads 0.
    pub zero_attempts: usize,
    /// Of those, the ones where the update's global precondition could not
    /// be taken from the resource left by its mo-predecessors.
    pub zero_attempts_refused: usize,
    /// The fence's only enabled result is 0.
    pub fence_only_zero: bool,
}

impl SufficiencyVerdict {
    pub fn holds(&self) -> bool {
        self.result.is_sufficient() && self.zero_attempts == self.zero_attempts_refused && self.fence_only_zero
    }
}

/// The tied preconditions of ARC force every operation to an enabled result.
pub fn check_arc_sufficiency(domain: &[Val], bound: usize) -> SufficiencyVerdict {
    check_arc_sufficiency_with(&arc_spec(), domain, bound)
}

pub fn check_arc_sufficiency_with(spec: &AtomicSpec, domain: &[Val], bound: usize) -> SufficiencyVerdict {
    let result = check_sufficiency(spec, domain, bound);
    let ops = counter_ops(spec);
    let (mut zero_attempts, mut refused) = (0, 0);
    for seq in mo_sequences(spec, bound) {
        let Some((&(last, v), prefix)) = seq.split_last() else { continue };
        if v != 0 || !prefix.iter().all(|&(i, w)| spec.enabled_at(&ops[i].0, w)) {
            continue;
        }
        zero_attempts += 1;
        let mut global = spec.rho0.0;
        for &(i, w) in prefix {
            let (pg, _) = spec.pre_of(&ops[i].0).expect("enabled");
            let (qg, _) = spec.post_of(&ops[i].0, w).expect("enabled");
            global = global.saturating_sub(pg.0) + qg.0;
        }
        let (pg, _) = spec.pre_of(&ops[last].0).expect("enabled");
        if global < pg.0 {
            refused += 1;
        }
    }
    let f = fence(spec);
    let fence_only_zero = domain.iter().all(|&v| spec.enabled_at(&f, v) == (v == 0));
    SufficiencyVerdict { result, zero_attempts, zero_attempts_refused: refused, fence_only_zero }
}

// ----------------------------------------------------------------------------
// End-to-end scorecard
// ----------------------------------------------------------------------------

/// How the enabledness of counter accesses is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ArcModel {
    /// Assumed: executions with a disabled counter access are dropped.
    C20,
    /// Derived: every execution is kept and must be grounded, and the
    /// preconditions must be sufficient.
    Yc20,
}

/// Checks on one consistent execution of a scenario.
#[derive(Clone, Debug, Serialize)]
pub struct ArcExecutionReport {
    pub index: usize,
    pub events: usize,
    pub race_free: bool,
    pub grounded: bool,
    /// Decrements that read 1.
    pub last_decrements: usize,
    pub safe: bool,
    pub stuck_reason: Option<String>,
    pub blocked: usize,
    pub configurations: usize,
    pub four_state_ok: bool,
    /// Every access of a freed cell hb-precedes its free.
    pub accesses_before_frees: bool,
}

impl ArcExecutionReport {
    pub fn passes(&self) -> bool {
        self.race_free && self.grounded && self.last_decrements == 1 && self.safe && self.four_state_ok && self.accesses_before_frees
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ArcScorecard {
    pub scenario: ArcScenario,
    pub model: ArcModel,
    pub executions: usize,
    /// Executions dropped by the C20 enabledness assumption.
    pub assumed_away: usize,
    pub race_free: bool,
    pub grounded: bool,
    pub exactly_one_last_decrement: bool,
    pub safe: bool,
    pub four_state_ok: bool,
    pub accesses_before_frees: bool,
    /// YC20 only: the sufficiency oracle over values -2..=5.
    pub sufficient: Option<bool>,
    pub reports: Vec<ArcExecutionReport>,
}

impl ArcScorecard {
    pub fn passes(&self) -> bool {
        self.race_free
            && self.grounded
            && self.exactly_one_last_decrement
            && self.safe
            && self.four_state_ok
            && self.accesses_before_frees
            && self.sufficient != Some(false)
    }
}

fn is_last_decrement(g: &ExecutionGraph, e: EventId) -> bool {
    let l = g.label(e);
    l.op.kind().is_rmw() && l.op.update() == Some(&UpdateFn::Add(-1)) && l.result == 1
}

fn counter_accesses_enabled(g: &ExecutionGraph, spec: &AtomicSpec) -> bool {
    g.events.values().filter(|l| l.kind().mode().at_least_rlx()).all(|l| spec.enabled_at(&l.op, l.result))
}

fn accesses_before_frees(g: &ExecutionGraph, a: &Analysis) -> bool {
    g.marks.iter().filter(|(_, m)| **m == Mark::Free).all(|(&f, _)| {
        let l = g.label(f).loc;
        g.events.iter().all(|(&e, lab)| e == f || lab.loc != l || a.hb(e, f))
    })
}

fn report(p: &Program, index: usize, g: &ExecutionGraph, b: &Bounds) -> Result<ArcExecutionReport, EnumError> {
    let a = Analysis::new(g);
    let v = explore_safety(p, Consistency::GraphGuided { graph: g, order: None }, b)?;
    Ok(ArcExecutionReport {
        index,
        events: g.len(),
        race_free: !find_data_races(g, &g.mode_events()).is_racy(),
        grounded: check_grounded(g, &p.specs).is_grounded(),
        last_decrements: g.events.keys().filter(|&&e| is_last_decrement(g, e)).count(),
        safe: v.safe,
        stuck_reason: v.stuck_reason,
        blocked: v.blocked_count,
        configurations: v.configurations,
        four_state_ok: v.four_state_ok,
        accesses_before_frees: accesses_before_frees(g, &a),
    })
}

/// Enumerates the scenario's consistent executions and checks each one:
/// race freedom, grounding, a single decrement reading 1, safety of the
/// guided operational semantics, and deallocation after every access.
pub fn arc_scorecard(s: &ArcScenario, model: ArcModel, b: &Bounds) -> Result<ArcScorecard, EnumError> {
    let p = build_arc_program(s);
    let spec = arc_spec();
    let all = enumerate_executions(&p, b)?;
    let total = all.len();
    let kept: Vec<ExecutionGraph> = all
        .into_iter()
        .map(|e| e.graph)
        .filter(|g| model == ArcModel::Yc20 || counter_accesses_enabled(g, &spec))
        .collect();
    let reports: Vec<ArcExecutionReport> =
        kept.par_iter().enumerate().map(|(i, g)| report(&p, i, g, b)).collect::<Result<_, _>>()?;
    let all_of = |f: fn(&ArcExecutionReport) -> bool| reports.iter().all(f);
    let sufficient = match model {
        ArcModel::C20 => None,
        ArcModel::Yc20 => Some(check_arc_sufficiency(&(-2..=5).collect::<Vec<_>>(), 6).holds()),
    };
    Ok(ArcScorecard {
        scenario: *s,
        model,
        executions: reports.len(),
        assumed_away: total - reports.len(),
        race_free: all_of(|r| r.race_free),
        grounded: all_of(|r| r.grounded),
        exactly_one_last_decrement: all_of(|r| r.last_decrements == 1),
        safe: all_of(|r| r.safe),
        four_state_ok: all_of(|r| r.four_state_ok),
        accesses_before_frees: all_of(|r| r.accesses_before_frees),
        sufficient,
        reports,
    })
}
