//! Acceptance run: one PASS/FAIL line per criterion, with its time budget.
//! Exits non-zero if any criterion fails.

mod common;

use common::*;
use rmmlab::arc::*;
use rmmlab::enumerate::{check_litmus, Bounds};
use rmmlab::exec_graph::{check_well_formed, parse_graph};
use rmmlab::lang::Program;
use rmmlab::relations::{check_consistent, derive_hb, derive_sw, has_porf_cycle};
use rmmlab::xmm::{ymm_reachable, Reachability};
use std::process::ExitCode;
use std::time::{Duration, Instant};

const LITMUS_BUDGET: Duration = Duration::from_secs(5);
const CYCLE_BUDGET: Duration = Duration::from_secs(1);
const LEMMA_BUDGET: Duration = Duration::from_secs(60);
const ARC_BUDGET: Duration = Duration::from_secs(120);

/// Re-Execute budget under which LB and LBf must be constructible.
const CONSTRUCT_RE_EXEC: usize = 1;
/// Re-Execute budget under which LBD must stay unconstructible.
const REFUTE_RE_EXEC: usize = 3;
const YC20_MAX_EVENTS: usize = 12;

const MONOID_CASES: u32 = 10_000;
const GRAPH_CASES: u32 = 2_000;
const REPLAY_CLONES: usize = 2;
const REPLAY_ORDERS: usize = 3;

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome { ok, detail: detail.into() }
}

fn constructible(p: &Program, b: &Bounds, re_exec: usize) -> Result<Option<usize>, String> {
    let v = check_litmus(p, b).map_err(|e| e.to_string())?;
    for w in &v.witnesses {
        if let Reachability::Constructible(t) = ymm_reachable(p, &w.graph, b, re_exec).map_err(|e| e.to_string())? {
            if !t.replays() || t.final_graph() != w.graph {
                return Err(format!("{}: construction does not replay to the witness", p.name));
            }
            return Ok(Some(t.re_executions()));
        }
    }
    Ok(None)
}

fn litmus_matrix() -> Result<Outcome, String> {
    let b = Bounds::default();
    let (lb, lbf, lbd) = (load_litmus("litmus/lb.lit"), load_litmus("litmus/lbf.lit"), load_litmus("litmus/lbd.lit"));
    let mut c20 = vec![];
    for p in [&lb, &lbf, &lbd] {
        c20.push(check_litmus(p, &b).map_err(|e| e.to_string())?.observable);
    }
    let yb = Bounds { max_events: YC20_MAX_EVENTS, ..b };
    let lb_y = constructible(&lb, &yb, CONSTRUCT_RE_EXEC)?;
    let lbf_y = constructible(&lbf, &yb, CONSTRUCT_RE_EXEC)?;
    let lbd_y = constructible(&lbd, &yb, REFUTE_RE_EXEC)?;
    let ok = c20.iter().all(|&o| o) && lb_y.is_some() && lbf_y.is_some() && lbd_y.is_none();
    Ok(outcome(
        ok,
        format!(
            "C20 observable LB={} LBf={} LBD={}; YC20 LB re-exec={lb_y:?} LBf re-exec={lbf_y:?} LBD@{REFUTE_RE_EXEC}={}",
            c20[0],
            c20[1],
            c20[2],
            if lbd_y.is_none() { "NotWithinBounds" } else { "constructible" }
        ),
    ))
}

fn lb_cycle() -> Result<Outcome, String> {
    let g = parse_graph(&read_corpus("graphs/lb_cycle.graph")).map_err(|e| e.to_string())?;
    let wf = check_well_formed(&g).ok;
    let cons = check_consistent(&g).consistent;
    let cycle = has_porf_cycle(&g);
    let sw = derive_sw(&g);
    let hb_is_po = derive_hb(&g) == naive_plus(&g.po);
    Ok(outcome(
        wf && cons && cycle && sw.is_empty() && hb_is_po,
        format!("well-formed={wf} consistent={cons} porf-cycle={cycle} |sw|={} hb=po+:{hb_is_po}", sw.len()),
    ))
}

fn lemmas() -> Result<Outcome, String> {
    let domain: Vec<i64> = (-2..=5).collect();
    let dec = check_lemma_decrement(6);
    let fence = check_lemma_fence(8);
    let suff = check_arc_sufficiency(&domain, 8);
    let relaxed = check_lemma_fence_with(&mutant_relaxed_decrement(), 8);
    let zeroed = check_arc_sufficiency_with(&mutant_free_decrement(), &domain, 8);
    let sound = dec.holds && !dec.is_vacuous() && fence.holds && !fence.is_vacuous() && suff.holds();
    let mutants = !relaxed.holds && (relaxed.counterexample.is_some() || relaxed.bad_sequence.is_some()) && !zeroed.holds();
    Ok(outcome(
        sound && mutants,
        format!(
            "decrement@6={} ({} graphs) fence@8={} ({} graphs) sufficiency@8={}; mutants refuted: relaxed-dec={} zeroed-pre={}",
            dec.holds,
            dec.graphs,
            fence.holds,
            fence.graphs,
            suff.holds(),
            !relaxed.holds,
            !zeroed.holds()
        ),
    ))
}

fn arc_end_to_end() -> Result<Outcome, String> {
    let b = Bounds::default();
    let mut ok = true;
    let mut parts = vec![];
    for clones in 0..=2 {
        for model in [ArcModel::C20, ArcModel::Yc20] {
            let s = arc_scorecard(&ArcScenario::new(clones), model, &b).map_err(|e| e.to_string())?;
            ok &= s.passes() && s.executions > 0;
            parts.push(format!("{clones}/{model:?}:{}{}", s.executions, if s.passes() { "" } else { "!" }));
        }
    }
    Ok(outcome(ok, format!("clones/model:executions {}", parts.join(" "))))
}

fn property_suites() -> Result<Outcome, String> {
    let mut fails = vec![];
    let mut note = |name: &str, r: Result<String, String>| match r {
        Ok(s) => format!("{name} {s}"),
        Err(e) => {
            fails.push(format!("{name}: {e}"));
            format!("{name} FAILED")
        }
    };
    let parts = [
        note("monoid", monoid_laws(MONOID_CASES).map(|_| format!("{MONOID_CASES}x4"))),
        note("hb/eco", relations_match_oracle(GRAPH_CASES).map(|_| format!("{GRAPH_CASES}"))),
        note("low/high", low_high_round_trip(GRAPH_CASES).map(|_| format!("{GRAPH_CASES}"))),
        note("replay", replay_determinism(REPLAY_CLONES, REPLAY_ORDERS).map(|n| format!("{n} prefixes"))),
        note("four-state", four_state_lemma(&four_state_programs()).map(|n| format!("{n} explorations"))),
        note("not-release", plans_not_release().map(|n| format!("{n} plans"))),
    ];
    let detail = parts.join(", ");
    for f in &fails {
        eprintln!("    {f}");
    }
    Ok(outcome(fails.is_empty(), detail))
}

fn golden_files() -> Result<Outcome, String> {
    corpus_round_trips().map(|n| outcome(true, format!("{n} files print back byte for byte")))
}

type Criterion = (&'static str, Option<Duration>, fn() -> Result<Outcome, String>);

fn main() -> ExitCode {
    // cargo passes harness flags such as --nocapture; none apply here
    let criteria: [Criterion; 6] = [
        ("litmus matrix", Some(LITMUS_BUDGET), litmus_matrix),
        ("load-buffering cycle graph", Some(CYCLE_BUDGET), lb_cycle),
        ("arc lemma oracles", Some(LEMMA_BUDGET), lemmas),
        ("arc end-to-end", Some(ARC_BUDGET), arc_end_to_end),
        ("property suites", None, property_suites),
        ("golden files", None, golden_files),
    ];
    println!("acceptance (RMMLAB_SEED={})", seed());
    let mut all = true;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let r = run();
        let took = t.elapsed();
        let in_time = budget.is_none_or(|b| took <= b);
        let (ok, detail) = match r {
            Ok(o) => (o.ok && in_time, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        all &= ok;
        let limit = budget.map_or(String::new(), |b| format!(" / {}s", b.as_secs()));
        println!(
            "{} {}. {name} [{:.2}s{limit}] {detail}",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            took.as_secs_f64()
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
