use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use rmmlab::arc::{arc_scorecard, ArcLayout, ArcModel, ArcScenario};
use rmmlab::enumerate::{check_litmus, enumerate_executions, summarize_races, Bounds, EnumError, Execution};
use rmmlab::exec_graph::format::GraphDoc;
use rmmlab::exec_graph::{check_well_formed, is_rf_complete, parse_graph, print_graph, ExecutionGraph};
use rmmlab::lang::{parse_program, Program};
use rmmlab::opsem::{BeginMode, Consistency, Semantics};
use rmmlab::relations::{check_consistent, derive_hb, derive_sw, find_data_races, has_porf_cycle};
use rmmlab::xmm::{xmm_reachable, ymm_reachable, Reachability};

const SCHEMA: &str = "rmmlab/1";

#[derive(Parser)]
#[command(
    name = "rmmlab",
    version,
    about = "Relaxed-memory laboratory: litmus enumeration, re-execution constructibility and a tied-resource operational semantics",
    after_help = "Exit codes: 0 verdict computed, 1 property violated, 2 usage or parse error, 3 bound exceeded.\n\
                  RMMLAB_SEED seeds the randomized property tests; no subcommand is randomized."
)]
struct Cli {
    #[command(flatten)]
    opts: Opts,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Opts {
    /// Memory model: plain C20, or C20 restricted to YMM/XMM-constructible executions.
    #[arg(long, global = true, value_enum, default_value_t = Model::C20)]
    model: Model,
    /// Print one JSON document instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads for enumeration and search (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, default_value_t = 16)]
    max_events: usize,
    #[arg(long, global = true, default_value_t = 8)]
    max_threads: usize,
    /// Re-Execute steps allowed in a construction.
    #[arg(long, global = true, default_value_t = 2)]
    max_re_exec: usize,
    /// Write every reported graph to this directory.
    #[arg(long, global = true)]
    emit_graphs: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Model {
    C20,
    Yc20,
    Xc20,
}

#[derive(Clone, Copy, ValueEnum)]
enum Layout {
    Fan,
    Chain,
}

#[derive(Subcommand)]
enum Cmd {
    /// Decide whether a litmus test's `exists` clause is observable.
    Check { file: PathBuf },
    /// List every consistent execution of a program.
    Enumerate { file: PathBuf },
    /// Search for a construction of a target execution (yc20 unless --model xc20).
    Reach {
        file: PathBuf,
        #[arg(long)]
        target: PathBuf,
    },
    /// Explore the operational semantics for stuck configurations.
    Opsem {
        file: PathBuf,
        /// Resolve atomic operations by this execution instead of witness search.
        #[arg(long)]
        guided: Option<PathBuf>,
        /// Largest synthetic trace tried by the witness search.
        #[arg(long, default_value_t = 3)]
        witness_bound: usize,
        /// Require begin_atomic to follow the cell's allocation directly.
        #[arg(long)]
        strict_begin: bool,
        /// Print the steps leading to a stuck configuration.
        #[arg(long)]
        trace: bool,
    },
    /// Run the ARC end-to-end scorecard (--model c20 or yc20).
    Arc {
        #[arg(long, default_value_t = 1)]
        clones: usize,
        #[arg(long, value_enum, default_value_t = Layout::Fan)]
        layout: Layout,
    },
    /// Check a serialized execution graph.
    Graph {
        file: PathBuf,
        /// Accepted for compatibility; consistency is always checked.
        #[arg(long)]
        consistency: bool,
    },
}

enum Failure {
    Usage(String),
    Bound(String),
}

impl From<EnumError> for Failure {
    fn from(e: EnumError) -> Self {
        match e {
            EnumError::BoundExceeded(m) => Failure::Bound(m),
            other => Failure::Usage(other.to_string()),
        }
    }
}

/// A computed verdict: text lines, a JSON body, and whether a property failed.
struct Report {
    text: Vec<String>,
    json: Value,
    violated: bool,
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn load_program(path: &Path) -> Result<Program, Failure> {
    parse_program(&read(path)?).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn load_graph(path: &Path) -> Result<ExecutionGraph, Failure> {
    parse_graph(&read(path)?).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn emit(dir: &Option<PathBuf>, stem: &str, graphs: &[&ExecutionGraph]) -> Result<(), Failure> {
    let Some(dir) = dir else { return Ok(()) };
    fs::create_dir_all(dir).map_err(|e| Failure::Usage(format!("{}: {e}", dir.display())))?;
    for (i, g) in graphs.iter().enumerate() {
        let path = dir.join(format!("{stem}-{i}.graph"));
        fs::write(&path, print_graph(g)).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn graph_json(g: &ExecutionGraph) -> Value {
    serde_json::to_value(GraphDoc::from(g)).expect("graph serializes")
}

fn execution_json(e: &Execution) -> Value {
    json!({ "registers": e.registers, "graph": graph_json(&e.graph) })
}

fn reach(p: &Program, g: &ExecutionGraph, b: &Bounds, o: &Opts) -> Result<Reachability, Failure> {
    Ok(match o.model {
        Model::Xc20 => xmm_reachable(p, g, b, o.max_re_exec)?,
        _ => ymm_reachable(p, g, b, o.max_re_exec)?,
    })
}

fn cmd_check(file: &Path, b: &Bounds, o: &Opts) -> Result<Report, Failure> {
    let p = load_program(file)?;
    let v = check_litmus(&p, b)?;
    let stem = file.file_stem().map_or("litmus".into(), |s| s.to_string_lossy().into_owned());
    emit(&o.emit_graphs, &stem, &v.witnesses.iter().map(|w| &w.graph).collect::<Vec<_>>())?;
    let (verdict, construction) = match o.model {
        Model::C20 => (if v.observable { "observable" } else { "unobservable" }, None),
        _ => {
            let mut found = None;
            for (i, w) in v.witnesses.iter().enumerate() {
                if let Reachability::Constructible(t) = reach(&p, &w.graph, b, o)? {
                    found = Some((i, t));
                    break;
                }
            }
            (if found.is_some() { "observable" } else { "unobservable(bounded)" }, found)
        }
    };
    let mut text = vec![format!(
        "{}: {verdict} under {} ({} consistent executions, {} satisfy the postcondition)",
        p.name,
        o.model.to_possible_value().unwrap().get_name(),
        v.total_consistent,
        v.witnesses.len()
    )];
    if let Some((i, t)) = &construction {
        text.push(format!("witness {i} constructed in {} steps with {} Re-Execute steps", t.steps.len(), t.re_executions()));
    } else if o.model != Model::C20 {
        text.push(format!("no construction with at most {} Re-Execute steps", o.max_re_exec));
    }
    let json = json!({
        "name": p.name,
        "verdict": verdict,
        "consistent_executions": v.total_consistent,
        "witnesses": v.witnesses.iter().map(execution_json).collect::<Vec<_>>(),
        "max_re_exec": (o.model != Model::C20).then_some(o.max_re_exec),
        "constructed_witness": construction.as_ref().map(|(i, _)| *i),
        "construction": construction.as_ref().map(|(_, t)| t),
    });
    Ok(Report { text, json, violated: false })
}

fn cmd_enumerate(file: &Path, b: &Bounds, o: &Opts) -> Result<Report, Failure> {
    let p = load_program(file)?;
    let execs = enumerate_executions(&p, b)?;
    let races = summarize_races(&execs);
    let stem = file.file_stem().map_or("exec".into(), |s| s.to_string_lossy().into_owned());
    emit(&o.emit_graphs, &stem, &execs.iter().map(|e| &e.graph).collect::<Vec<_>>())?;
    let mut text = vec![format!("{}: {} consistent executions, {} racy", p.name, execs.len(), races.racy_executions)];
    for (i, e) in execs.iter().enumerate() {
        let regs: Vec<String> = e.registers.iter().map(|(r, v)| format!("{r}={v}")).collect();
        text.push(format!("% execution {i}: {}", regs.join(" ")));
        text.push(print_graph(&e.graph).trim_end().to_string());
    }
    let json = json!({
        "name": p.name,
        "executions": execs.iter().map(execution_json).collect::<Vec<_>>(),
        "races": races,
    });
    Ok(Report { text, json, violated: races.is_racy() })
}

fn cmd_reach(file: &Path, target: &Path, b: &Bounds, o: &Opts) -> Result<Report, Failure> {
    let p = load_program(file)?;
    let g = load_graph(target)?;
    let r = reach(&p, &g, b, o)?;
    let text = match &r {
        Reachability::Constructible(t) => {
            let mut lines = vec![format!("constructible: {} steps, {} Re-Execute", t.steps.len(), t.re_executions())];
            for (i, s) in t.steps.iter().enumerate() {
                lines.push(format!("step {i}: {}", serde_json::to_string(s).expect("step serializes")));
            }
            lines
        }
        Reachability::NotWithinBounds { max_re_exec, max_events } => {
            vec![format!("not constructible within bounds (max_re_exec={max_re_exec}, max_events={max_events})")]
        }
    };
    if let Reachability::Constructible(t) = &r {
        let graphs: Vec<&ExecutionGraph> = t.steps.iter().map(|s| s.graph()).collect();
        emit(&o.emit_graphs, "step", &graphs)?;
    }
    Ok(Report { text, json: serde_json::to_value(&r).expect("reachability serializes"), violated: false })
}

fn cmd_opsem(file: &Path, guided: &Option<PathBuf>, witness_bound: usize, strict: bool, trace: bool, b: &Bounds) -> Result<Report, Failure> {
    let p = load_program(file)?;
    let g = guided.as_deref().map(load_graph).transpose()?;
    let consistency = match &g {
        Some(graph) => Consistency::GraphGuided { graph, order: None },
        None => Consistency::WitnessSearch { bound: witness_bound },
    };
    let mode = if strict { BeginMode::Strict } else { BeginMode::Permissive };
    let v = Semantics::new(&p, consistency).with_begin_mode(mode).explore(&p, b)?;
    let mut text = vec![format!(
        "{}: {} ({} configurations, {} blocked)",
        p.name,
        if v.safe { "safe" } else { "unsafe" },
        v.configurations,
        v.blocked_count
    )];
    if let (Some(t), Some(r)) = (v.stuck_thread, &v.stuck_reason) {
        text.push(format!("thread {t} stuck: {r}"));
    }
    if trace {
        for s in v.stuck_trace.iter().flatten() {
            text.push(s.to_string());
        }
    }
    Ok(Report { text, violated: !v.safe, json: serde_json::to_value(&v).expect("verdict serializes") })
}

fn cmd_arc(clones: usize, layout: Layout, b: &Bounds, o: &Opts) -> Result<Report, Failure> {
    if clones > 3 {
        return Err(Failure::Usage("at most 3 clones".into()));
    }
    let model = match o.model {
        Model::C20 => ArcModel::C20,
        Model::Yc20 => ArcModel::Yc20,
        Model::Xc20 => return Err(Failure::Usage("arc supports --model c20 or yc20".into())),
    };
    let layout = match layout {
        Layout::Fan => ArcLayout::Fan,
        Layout::Chain => ArcLayout::Chain,
    };
    let s = ArcScenario { layout, ..ArcScenario::new(clones) };
    let c = arc_scorecard(&s, model, b)?;
    let yes = |x: bool| if x { "yes" } else { "NO" };
    let mut text = vec![
        format!("ARC, {clones} clone(s), {layout:?} layout, model {model:?}", layout = s.layout),
        format!("consistent executions:        {}", c.executions),
    ];
    if model == ArcModel::C20 {
        text.push(format!("dropped by assumption:        {}", c.assumed_away));
    }
    text.extend([
        format!("race-free:                    {}", yes(c.race_free)),
        format!("grounded:                     {}", yes(c.grounded)),
        format!("one decrement reads 1:        {}", yes(c.exactly_one_last_decrement)),
        format!("guided opsem safe:            {}", yes(c.safe)),
        format!("four-state lemma:             {}", yes(c.four_state_ok)),
        format!("accesses before frees:        {}", yes(c.accesses_before_frees)),
    ]);
    if let Some(s) = c.sufficient {
        text.push(format!("preconditions sufficient:     {}", yes(s)));
    }
    text.push(if c.passes() { "PASS".into() } else { "FAIL".into() });
    Ok(Report { text, violated: !c.passes(), json: serde_json::to_value(&c).expect("scorecard serializes") })
}

fn cmd_graph(file: &Path) -> Result<Report, Failure> {
    let g = load_graph(file)?;
    let wf = check_well_formed(&g);
    let cons = check_consistent(&g);
    let races = find_data_races(&g, &g.mode_events());
    let sw = derive_sw(&g);
    let hb = derive_hb(&g);
    let porf = has_porf_cycle(&g);
    let text = vec![
        format!("events: {}", g.len()),
        format!("well-formed: {}", wf.ok),
        format!("rf-complete: {}", is_rf_complete(&g)),
        format!("consistent: {}", cons.consistent),
        format!("racy: {}", races.is_racy()),
        format!("porf cycle: {porf}"),
        format!("sw edges: {}", sw.len()),
        format!("hb edges: {}", hb.len()),
    ];
    let pairs = |s: &rmmlab::exec_graph::EdgeSet| s.iter().map(|(a, b)| [a.to_string(), b.to_string()]).collect::<Vec<_>>();
    let json = json!({
        "events": g.len(),
        "well_formed": wf.ok,
        "violations": wf.violations,
        "rf_complete": is_rf_complete(&g),
        "consistent": cons.consistent,
        "reasons": cons.reasons,
        "races": races.races,
        "porf_cycle": porf,
        "sw": pairs(&sw),
        "hb": pairs(&hb),
    });
    Ok(Report { text, json, violated: !wf.ok || !cons.consistent || races.is_racy() })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let o = &cli.opts;
    if let Some(n) = o.jobs {
        // fails only if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let b = Bounds { max_events: o.max_events, max_threads: o.max_threads, ..Bounds::default() };
    let (name, res) = match &cli.cmd {
        Cmd::Check { file } => ("check", cmd_check(file, &b, o)),
        Cmd::Enumerate { file } => ("enumerate", cmd_enumerate(file, &b, o)),
        Cmd::Reach { file, target } => ("reach", cmd_reach(file, target, &b, o)),
        Cmd::Opsem { file, guided, witness_bound, strict_begin, trace } => {
            ("opsem", cmd_opsem(file, guided, *witness_bound, *strict_begin, *trace, &b))
        }
        Cmd::Arc { clones, layout } => ("arc", cmd_arc(*clones, *layout, &b, o)),
        Cmd::Graph { file, .. } => ("graph", cmd_graph(file)),
    };
    let mut out: Vec<String> = vec![];
    let (code, doc) = match res {
        Ok(r) => {
            if !o.json {
                out.extend(r.text.iter().map(|l| format!("{l}\n")));
            }
            (u8::from(r.violated), json!({ "schema": SCHEMA, "command": name, "model": o.model, "result": r.json }))
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            (2, json!({ "schema": SCHEMA, "command": name, "error": m }))
        }
        Err(Failure::Bound(m)) => {
            eprintln!("bound exceeded: {m}");
            (3, json!({ "schema": SCHEMA, "command": name, "bound_exceeded": m }))
        }
    };
    if o.json {
        out.push(format!("{}\n", serde_json::to_string_pretty(&doc).expect("document serializes")));
    }
    // a closed pipe only truncates the output
    let _ = std::io::stdout().lock().write_all(out.concat().as_bytes());
    ExitCode::from(code)
}
