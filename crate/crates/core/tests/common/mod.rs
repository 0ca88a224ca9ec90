//! Helpers shared by the integration suites: a seeded property runner,
//! corpus paths, random graph generation and naive relation oracles.
#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestError, TestRng, TestRunner};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rmmlab::arc::{build_arc_program, ArcScenario};
use rmmlab::enumerate::{enumerate_executions, enumerate_prefix_executions, Bounds};
use rmmlab::exec_graph::*;
use rmmlab::lang::{parse_program, print_program, Program};
use rmmlab::opsem::{config_corresponds, explore_safety, replay_prefix, Consistency};
use rmmlab::relations::{Analysis, DerivedRelations};
use rmmlab::tied::{parse_spec, print_spec, Monoid, Nat, ThreadBound, Total, TotalTied};
use rmmlab::xmm::{committed_nondetermined_not_release, find_re_execute_plan, validate_re_execute_step, Granularity};
use std::collections::BTreeSet;
use std::path::PathBuf;

pub const DEFAULT_SEED: u64 = 0x5eed_2020;

/// `RMMLAB_SEED` if set, else a fixed seed so runs are reproducible.
pub fn seed() -> u64 {
    std::env::var("RMMLAB_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(DEFAULT_SEED)
}

pub fn runner(cases: u32) -> TestRunner {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed().to_le_bytes());
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    TestRunner::new_with_rng(config, TestRng::from_seed(RngAlgorithm::ChaCha, &bytes))
}

fn report<T: std::fmt::Debug>(r: Result<(), TestError<T>>) -> Result<(), String> {
    r.map_err(|e| format!("{e} (RMMLAB_SEED={})", seed()))
}

pub fn corpus(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(rel)
}

pub fn read_corpus(rel: &str) -> String {
    std::fs::read_to_string(corpus(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

pub fn load_litmus(rel: &str) -> Program {
    parse_program(&read_corpus(rel)).expect("bundled litmus file parses")
}

// ----------------------------------------------------------------------------
// File formats
// ----------------------------------------------------------------------------

fn files(dir: &str, ext: &str) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(corpus(dir))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(ext))
        .map(|n| format!("{dir}/{n}"))
        .collect();
    v.sort();
    assert!(!v.is_empty(), "no {ext} files under {dir}");
    v
}

/// Litmus, graph and spec files print back to their exact bytes.
pub fn corpus_round_trips() -> Result<usize, String> {
    let mut n = 0;
    for f in files("litmus", ".lit") {
        let text = read_corpus(&f);
        let p = parse_program(&text).map_err(|e| format!("{f}: {e}"))?;
        if print_program(&p) != text {
            return Err(format!("{f}: printed program differs"));
        }
        n += 1;
    }
    for f in files("graphs", ".graph") {
        let text = read_corpus(&f);
        let g = parse_graph(&text).map_err(|e| format!("{f}: {e}"))?;
        if print_graph(&g) != text {
            return Err(format!("{f}: printed graph differs"));
        }
        let json = graph_to_json(&g);
        if graph_from_json(&json).map_err(|e| format!("{f}: {e}"))? != g || graph_to_json(&g) != json {
            return Err(format!("{f}: JSON form does not round-trip"));
        }
        n += 1;
    }
    for f in files("specs", ".spec") {
        let text = read_corpus(&f);
        let s = parse_spec(&text).map_err(|e| format!("{f}: {e}"))?;
        if print_spec(&s) != text {
            return Err(format!("{f}: printed spec differs"));
        }
        n += 1;
    }
    Ok(n)
}

// ----------------------------------------------------------------------------
// Monoid laws
// ----------------------------------------------------------------------------

fn nat() -> impl Strategy<Value = Nat> {
    (0u64..1 << 20).prop_map(Nat)
}

fn bound() -> impl Strategy<Value = ThreadBound<Nat>> {
    prop::collection::vec((0u32..4, nat()), 0..4).prop_map(|v| {
        v.into_iter().fold(ThreadBound::unit(), |acc, (t, n)| acc.compose(&ThreadBound::singleton(ThreadId(t), n)))
    })
}

fn total() -> impl Strategy<Value = TotalTied> {
    (nat(), bound()).prop_map(|(g, b)| Total::new(g, b))
}

fn laws<M: Monoid>(a: &M, b: &M, c: &M) -> Result<(), TestCaseError> {
    prop_assert_eq!(a.compose(b).compose(c), a.compose(&b.compose(c)));
    prop_assert_eq!(a.compose(b), b.compose(a));
    prop_assert_eq!(a.compose(&M::unit()), a.clone());
    prop_assert_eq!(a.compose(b).subtract(b), Some(a.clone()));
    prop_assert!(a.compose(b).includes(a));
    if let Some(d) = a.subtract(b) {
        prop_assert_eq!(d.compose(b), a.clone());
    }
    Ok(())
}

/// Associativity, commutativity, unit and cancellativity on every monoid
/// instance, `cases` triples each.
pub fn monoid_laws(cases: u32) -> Result<(), String> {
    report(runner(cases).run(&(nat(), nat(), nat()), |(a, b, c)| laws(&a, &b, &c)))?;
    report(runner(cases).run(&(bound(), bound(), bound()), |(a, b, c)| laws(&a, &b, &c)))?;
    report(runner(cases).run(&(total(), total(), total()), |(a, b, c)| laws(&a, &b, &c)))?;
    let pair = || (nat(), bound());
    report(runner(cases).run(&(pair(), pair(), pair()), |(a, b, c)| laws(&a, &b, &c)))
}

// ----------------------------------------------------------------------------
// Random graphs and naive relation oracles
// ----------------------------------------------------------------------------

/// A random high-level graph over two locations with at most `max` events
/// including the two init writes. rf sources are drawn among earlier writes
/// so that values are well defined; mo is a random order after init.
pub fn random_graph(seed: u64, max: usize) -> ExecutionGraph {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut b = GraphBuilder::new();
    let mut writes: Vec<Vec<(EventId, Val)>> = vec![vec![(b.init(0), 0)], vec![(b.init(1), 0)]];
    let threads = rng.gen_range(1..=3u32);
    let n = rng.gen_range(1..=max - 2);
    for _ in 0..n {
        let t = ThreadId(rng.gen_range(1..=threads));
        let loc = rng.gen_range(0..2usize);
        let kind = OpKind::ALL[rng.gen_range(0..OpKind::ALL.len())];
        let (src, read) = {
            let &(w, v) = writes[loc].choose(&mut rng).expect("init write exists");
            (w, v)
        };
        let op = if kind.is_rmw() {
            let f = if rng.gen_bool(0.7) { UpdateFn::Add(rng.gen_range(-1..=1)) } else { UpdateFn::Set(rng.gen_range(0..3)) };
            Operation::from_parts(kind, None, Some(f)).unwrap()
        } else if kind.is_write() {
            Operation::from_parts(kind, Some(rng.gen_range(0..3)), None).unwrap()
        } else {
            Operation::from_parts(kind, None, None).unwrap()
        };
        let result = if kind.reads() { read } else { 0 };
        let written = op.update().map(|f| f.apply(read)).or(op.value());
        let e = b.push(t, loc as Loc, result, op);
        if kind.reads() {
            b.rf(src, e);
        }
        if let Some(v) = written {
            writes[loc].push((e, v));
        }
    }
    for ws in &writes {
        let mut chain: Vec<EventId> = ws.iter().map(|w| w.0).collect();
        chain[1..].shuffle(&mut rng);
        b.mo(&chain);
    }
    b.build()
}

/// Random graphs that pass the well-formedness check.
pub fn random_well_formed(seed: u64, max: usize) -> ExecutionGraph {
    (0..)
        .map(|k| random_graph(seed.wrapping_mul(31).wrapping_add(k), max))
        .find(|g| check_well_formed(g).ok)
        .expect("some candidate is well-formed")
}

fn compose(a: &EdgeSet, b: &EdgeSet) -> EdgeSet {
    let mut out = EdgeSet::new();
    for &(x, y) in a {
        for &(y2, z) in b {
            if y == y2 {
                out.insert((x, z));
            }
        }
    }
    out
}

/// Transitive closure by squaring until nothing changes.
pub fn naive_plus(r: &EdgeSet) -> EdgeSet {
    let mut cur = r.clone();
    loop {
        let mut next = cur.clone();
        next.extend(compose(&cur, &cur));
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

fn identity(g: &ExecutionGraph, keep: impl Fn(&Label) -> bool) -> EdgeSet {
    g.events.iter().filter(|(_, l)| keep(l)).map(|(&e, _)| (e, e)).collect()
}

/// sw written as one relational expression:
/// `([E⊒rel] ∪ [F_rel];po);[W⊒rlx];(rf;rmw)*;rf;[R⊒rlx];([E⊒acq] ∪ po;[F_acq])`,
/// where an RMW event counts as its own rmw pair and the rel/acq brackets
/// exclude fences.
pub fn naive_sw(g: &ExecutionGraph) -> EdgeSet {
    let po = naive_plus(&g.po);
    let rel_fence = identity(g, |l| l.kind() == OpKind::FenceRel);
    let acq_fence = identity(g, |l| l.kind() == OpKind::FenceAcq);
    let mut head = identity(g, |l| !l.kind().is_fence() && l.kind().is_release());
    head.extend(compose(&rel_fence, &po));
    let mut tail = identity(g, |l| !l.kind().is_fence() && l.kind().is_acquire());
    tail.extend(compose(&po, &acq_fence));
    let w_rlx = identity(g, |l| l.kind().writes() && l.kind().mode().at_least_rlx());
    let r_rlx = identity(g, |l| l.kind().reads() && l.kind().mode().at_least_rlx());
    let mut rmw = g.rmw.clone();
    rmw.extend(identity(g, |l| l.kind().is_rmw()));
    let mut rs = identity(g, |_| true);
    rs.extend(naive_plus(&compose(&g.rf, &rmw)));
    let mut out = compose(&head, &w_rlx);
    for r in [&rs, &g.rf, &r_rlx, &tail] {
        out = compose(&out, r);
    }
    out
}

pub fn naive_hb(g: &ExecutionGraph) -> EdgeSet {
    let mut base = g.po.clone();
    for &(e, t) in &g.spawn {
        if let Some(first) = g.events.keys().find(|x| x.thread == t) {
            base.insert((e, *first));
        }
    }
    base.extend(naive_sw(g));
    naive_plus(&base)
}

pub fn naive_eco(g: &ExecutionGraph) -> EdgeSet {
    let rf_inv: EdgeSet = g.rf.iter().map(|&(w, r)| (r, w)).collect();
    let fr: EdgeSet = compose(&rf_inv, &g.mo).into_iter().filter(|(a, b)| a != b).collect();
    let mut base = g.rf.clone();
    base.extend(g.mo.iter().copied());
    base.extend(fr);
    naive_plus(&base)
}

fn relations_agree(g: &ExecutionGraph) -> Result<(), TestCaseError> {
    let d = DerivedRelations::new(g);
    prop_assert_eq!(&d.sw, &naive_sw(g), "sw of\n{}", format::print_graph(g));
    prop_assert_eq!(&d.hb, &naive_hb(g), "hb of\n{}", format::print_graph(g));
    prop_assert_eq!(&d.eco, &naive_eco(g), "eco of\n{}", format::print_graph(g));
    Ok(())
}

/// sw, hb and eco against the naive oracles on random well-formed graphs of
/// at most 12 events, and on their low-level forms.
pub fn relations_match_oracle(cases: u32) -> Result<(), String> {
    report(runner(cases).run(&any::<u64>(), |s| {
        let g = random_well_formed(s, 12);
        relations_agree(&g)?;
        let low = to_low_level(&g).expect("high-level graph lowers");
        relations_agree(&low)
    }))
}

/// Lowering then raising with the natural update functions is the identity,
/// and lowering preserves well-formedness.
pub fn low_high_round_trip(cases: u32) -> Result<(), String> {
    report(runner(cases).run(&any::<u64>(), |s| {
        let g = random_well_formed(s, 12);
        let low = to_low_level(&g).expect("high-level graph lowers");
        prop_assert!(low.is_low_level());
        prop_assert!(check_well_formed(&low).ok, "lowered graph is ill-formed:\n{}", format::print_graph(&low));
        let back = to_high_level(&low, &natural_update_fns(&g)).expect("raising succeeds");
        prop_assert_eq!(back, g);
        Ok(())
    }))
}

// ----------------------------------------------------------------------------
// Operational semantics
// ----------------------------------------------------------------------------

/// All hb-downward-closed event sets of `g`.
pub fn hb_downsets(g: &ExecutionGraph, a: &Analysis) -> Vec<BTreeSet<EventId>> {
    let ids: Vec<EventId> = g.events.keys().copied().collect();
    let mut seen: BTreeSet<BTreeSet<EventId>> = BTreeSet::new();
    let mut stack = vec![BTreeSet::new()];
    while let Some(s) = stack.pop() {
        if !seen.insert(s.clone()) {
            continue;
        }
        for &e in &ids {
            if !s.contains(&e) && ids.iter().all(|&x| x == e || !a.hb(x, e) || s.contains(&x)) {
                let mut t = s.clone();
                t.insert(e);
                stack.push(t);
            }
        }
    }
    seen.into_iter().collect()
}

/// A uniformly drawn hb-consistent order of `prefix`.
pub fn random_linearization(prefix: &BTreeSet<EventId>, a: &Analysis, rng: &mut StdRng) -> Vec<EventId> {
    let mut left: Vec<EventId> = prefix.iter().copied().collect();
    let mut out = vec![];
    while !left.is_empty() {
        let ready: Vec<usize> = (0..left.len()).filter(|&k| !left.iter().any(|&x| x != left[k] && a.hb(x, left[k]))).collect();
        let k = *ready.choose(rng).expect("hb is acyclic");
        out.push(left.remove(k));
    }
    out
}

/// For every execution of ARC with up to `clones` clones and every hb-prefix
/// that does not split a step,
/// `orders` random hb-consistent orders replay to the same configuration,
/// which corresponds to the prefix. Returns the number of prefixes checked.
pub fn replay_determinism(clones: usize, orders: usize) -> Result<usize, String> {
    let mut rng = StdRng::seed_from_u64(seed());
    let mut checked = 0;
    for k in 0..=clones {
        let p = build_arc_program(&ArcScenario::new(k));
        for (i, ex) in enumerate_executions(&p, &Bounds::default()).map_err(|e| e.to_string())?.iter().enumerate() {
            let g = &ex.graph;
            let a = Analysis::new(g);
            for prefix in hb_downsets(g, &a) {
                let first = random_linearization(&prefix, &a, &mut rng);
                let cfg = replay_prefix(&p, g, &first).map_err(|e| format!("clones={k} execution {i}: {e:?}"))?;
                // a multi-cell cons is one step; prefixes splitting it are no configuration
                let emitted: BTreeSet<EventId> = cfg
                    .meta
                    .iter()
                    .flat_map(|(&t, m)| (0..m.events).map(move |index| EventId { thread: t, index }))
                    .collect();
                let proper: BTreeSet<EventId> = prefix.iter().copied().filter(|e| !e.is_init()).collect();
                if emitted != proper {
                    continue;
                }
                if !config_corresponds(&p, g, &prefix, &cfg) {
                    return Err(format!("clones={k} execution {i}: replay of {first:?} does not correspond"));
                }
                for _ in 1..orders {
                    let o = random_linearization(&prefix, &a, &mut rng);
                    let other = replay_prefix(&p, g, &o).map_err(|e| format!("clones={k} execution {i}: {e:?}"))?;
                    if !cfg.same_state(&other) {
                        return Err(format!("clones={k} execution {i}: orders {first:?} and {o:?} disagree"));
                    }
                }
                checked += 1;
            }
        }
    }
    Ok(checked)
}

/// Programs whose explorations exercise allocation, frees and mode changes.
pub fn four_state_programs() -> Vec<Program> {
    let mut v: Vec<Program> = (0..=2).map(|k| build_arc_program(&ArcScenario::new(k))).collect();
    for f in ["litmus/lb.lit", "litmus/lbd.lit", "litmus/lbf.lit"] {
        v.push(load_litmus(f));
    }
    v
}

/// The four-state location lemma on every configuration explored for the
/// given programs, under the witness-search and graph-guided judgments.
/// Returns the number of explorations.
pub fn four_state_lemma(programs: &[Program]) -> Result<usize, String> {
    let b = Bounds::default();
    let mut runs = 0;
    for p in programs {
        let v = explore_safety(p, Consistency::WitnessSearch { bound: 3 }, &b).map_err(|e| e.to_string())?;
        if !v.four_state_ok {
            return Err(format!("{}: witness-search exploration breaks the lemma", p.name));
        }
        runs += 1;
        for ex in enumerate_executions(p, &b).map_err(|e| e.to_string())? {
            let v = explore_safety(p, Consistency::GraphGuided { graph: &ex.graph, order: None }, &b).map_err(|e| e.to_string())?;
            if !v.four_state_ok {
                return Err(format!("{}: guided exploration breaks the lemma", p.name));
            }
            runs += 1;
        }
    }
    Ok(runs)
}

// ----------------------------------------------------------------------------
// Re-execution plans
// ----------------------------------------------------------------------------

/// Every plan `find_re_execute_plan` returns between two consistent prefix
/// graphs of the LB family that validates also passes the committed
/// non-determined check. Returns the number of validated plans.
pub fn plans_not_release() -> Result<usize, String> {
    let b = Bounds::default();
    let mut validated = 0;
    for f in ["litmus/lb.lit", "litmus/lbd.lit", "litmus/lbf.lit"] {
        let p = load_litmus(f);
        let graphs = enumerate_prefix_executions(&p, &b, 12).map_err(|e| e.to_string())?;
        for g in &graphs {
            for g2 in &graphs {
                for gran in [Granularity::Ymm, Granularity::Xmm] {
                    let Some(plan) = find_re_execute_plan(g, g2, gran) else { continue };
                    if !validate_re_execute_step(g, g2, &plan, gran) {
                        continue;
                    }
                    validated += 1;
                    if !committed_nondetermined_not_release(g2, &plan) {
                        return Err(format!("{f}: plan {plan:?} commits a release event"));
                    }
                }
            }
        }
    }
    Ok(validated)
}
