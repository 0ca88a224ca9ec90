//! Tied resources and atomic specifications.
//!
//! Resources live in cancellative commutative monoids. A [`TotalTied`] pairs
//! a global element with a thread-indexed map of local elements. An
//! [`AtomicSpec`] names the enabled operations of an atomic location, the
//! tied precondition each consumes, and the tied postcondition produced at
//! each enabled result value.
//!
//! The witness search for the consistency judgments lives in [`search`].

use std::collections::BTreeMap;
use std::fmt::{self, Debug, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec_graph::{Mode, OpKind, Operation, ThreadId, UpdateFn, Val};

pub mod search;
pub use search::{
    check_consistent_resource, check_grounding_consistent, check_sufficiency, search_witness, Judge, Judgment,
    Query, SearchStats, Sufficiency, Witness,
};

// ============================================================================
// Monoids
// ============================================================================

/// A cancellative commutative monoid with partial subtraction:
/// `a.compose(b).subtract(b) == Some(a)`.
pub trait Monoid: Clone + PartialEq + Debug {
    fn unit() -> Self;
    fn compose(&self, other: &Self) -> Self;
    /// The `c` with `c.compose(other) == self`, if any.
    fn subtract(&self, other: &Self) -> Option<Self>;

    fn is_unit(&self) -> bool {
        *self == Self::unit()
    }

    /// `self` includes `other` as a factor.
    fn includes(&self, other: &Self) -> bool {
        self.subtract(other).is_some()
    }
}

/// `(ℕ, +, 0)`. Composition panics on `u64` overflow.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Nat(pub u64);

impl Monoid for Nat {
    fn unit() -> Self {
        Nat(0)
    }
    fn compose(&self, other: &Self) -> Self {
        Nat(self.0.checked_add(other.0).expect("natural-number resource overflow"))
    }
    fn subtract(&self, other: &Self) -> Option<Self> {
        self.0.checked_sub(other.0).map(Nat)
    }
}

impl fmt::Display for Nat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl<A: Monoid, B: Monoid> Monoid for (A, B) {
    fn unit() -> Self {
        (A::unit(), B::unit())
    }
    fn compose(&self, other: &Self) -> Self {
        (self.0.compose(&other.0), self.1.compose(&other.1))
    }
    fn subtract(&self, other: &Self) -> Option<Self> {
        Some((self.0.subtract(&other.0)?, self.1.subtract(&other.1)?))
    }
}

/// Thread-bound resources `Θ`. Unit entries are never stored, so equality
/// is extensional.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ThreadBound<L>(BTreeMap<ThreadId, L>);

impl<L: Monoid> ThreadBound<L> {
    pub fn singleton(t: ThreadId, l: L) -> Self {
        let mut m = BTreeMap::new();
        if !l.is_unit() {
            m.insert(t, l);
        }
        ThreadBound(m)
    }

    pub fn get(&self, t: ThreadId) -> L {
        self.0.get(&t).cloned().unwrap_or_else(L::unit)
    }

    pub fn set(&mut self, t: ThreadId, l: L) {
        if l.is_unit() {
            self.0.remove(&t);
        } else {
            self.0.insert(t, l);
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&ThreadId, &L)> {
        self.0.iter()
    }
}

impl<L: Monoid> Monoid for ThreadBound<L> {
    fn unit() -> Self {
        ThreadBound(BTreeMap::new())
    }
    fn compose(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (t, l) in &other.0 {
            out.set(*t, out.get(*t).compose(l));
        }
        out
    }
    fn subtract(&self, other: &Self) -> Option<Self> {
        let mut out = self.clone();
        for (t, l) in &other.0 {
            out.set(*t, out.get(*t).subtract(l)?);
        }
        Some(out)
    }
}

/// Total tied resources `ω = (ρ, Θ)`.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Total<G, L> {
    pub global: G,
    pub bound: ThreadBound<L>,
}

impl<G: Monoid, L: Monoid> Total<G, L> {
    pub fn new(global: G, bound: ThreadBound<L>) -> Self {
        Total { global, bound }
    }

    /// `(g, ε[t := l])`.
    pub fn at(g: G, t: ThreadId, l: L) -> Self {
        Total { global: g, bound: ThreadBound::singleton(t, l) }
    }
}

impl<G: Monoid, L: Monoid> Monoid for Total<G, L> {
    fn unit() -> Self {
        Total { global: G::unit(), bound: ThreadBound::unit() }
    }
    fn compose(&self, other: &Self) -> Self {
        Total { global: self.global.compose(&other.global), bound: self.bound.compose(&other.bound) }
    }
    fn subtract(&self, other: &Self) -> Option<Self> {
        Some(Total { global: self.global.subtract(&other.global)?, bound: self.bound.subtract(&other.bound)? })
    }
}

pub type TotalTied = Total<Nat, Nat>;

impl fmt::Display for TotalTied {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {{", self.global)?;
        for (i, (t, l)) in self.bound.entries().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{t}:{l}")?;
        }
        write!(f, "}})")
    }
}

// ============================================================================
// Atomic specifications
// ============================================================================

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cmp {
    Ge,
    Le,
    Eq,
    Gt,
    Lt,
    Any,
}

/// Guard `z <cmp> k` on the result value of a postcondition family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Guard {
    pub cmp: Cmp,
    pub k: Val,
}

impl Guard {
    pub fn any() -> Self {
        Guard { cmp: Cmp::Any, k: 0 }
    }

    pub fn eq(k: Val) -> Self {
        Guard { cmp: Cmp::Eq, k }
    }

    pub fn ge(k: Val) -> Self {
        Guard { cmp: Cmp::Ge, k }
    }

    pub fn holds(&self, z: Val) -> bool {
        match self.cmp {
            Cmp::Ge => z >= self.k,
            Cmp::Le => z <= self.k,
            Cmp::Eq => z == self.k,
            Cmp::Gt => z > self.k,
            Cmp::Lt => z < self.k,
            Cmp::Any => true,
        }
    }
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.cmp {
            Cmp::Ge => ">=",
            Cmp::Le => "<=",
            Cmp::Eq => "=",
            Cmp::Gt => ">",
            Cmp::Lt => "<",
            Cmp::Any => return write!(f, "*"),
        };
        write!(f, "z{op}{}", self.k)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostRule {
    pub op: Operation,
    pub guard: Guard,
    pub global: Nat,
    pub local: Nat,
}

/// An atomic specification `Σ` over `(ℕ, +, 0)` for both resource kinds.
/// `post` is a list of guarded families; the first matching rule applies.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicSpec {
    pub name: String,
    pub v0: Val,
    pub rho0: Nat,
    pub pre: Vec<(Operation, (Nat, Nat))>,
    pub post: Vec<PostRule>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TiedError {
    #[error("operation {0} is not enabled")]
    NotEnabled(String),
    #[error("operation {0} has no postcondition at result {1}")]
    UnknownOperation(String, Val),
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum SpecError {
    #[error("invalid spec: nonatomic operation {0} is enabled")]
    NonatomicEnabled(String),
    #[error("invalid spec: postcondition for {0} without a precondition")]
    PostWithoutPre(String),
    #[error("spec syntax: {0}")]
    Syntax(String),
}

impl AtomicSpec {
    pub fn pre_of(&self, op: &Operation) -> Option<(Nat, Nat)> {
        self.pre.iter().find(|(o, _)| o == op).map(|(_, r)| *r)
    }

    pub fn post_of(&self, op: &Operation, z: Val) -> Option<(Nat, Nat)> {
        self.post
            .iter()
            .find(|r| &r.op == op && r.guard.holds(z))
            .map(|r| (r.global, r.local))
    }

    pub fn is_enabled_op(&self, op: &Operation) -> bool {
        self.pre_of(op).is_some()
    }

    /// `(op, z) ∈ dom post`.
    pub fn enabled_at(&self, op: &Operation, z: Val) -> bool {
        self.post_of(op, z).is_some()
    }

    pub fn enabled_ops(&self) -> impl Iterator<Item = &Operation> {
        self.pre.iter().map(|(o, _)| o)
    }

    pub fn rho0_total(&self) -> TotalTied {
        Total::new(self.rho0, ThreadBound::unit())
    }

    /// Validity plus `dom post ⊆ dom pre` on operations.
    pub fn validate(&self) -> Result<(), SpecError> {
        for (o, _) in &self.pre {
            if o.kind().mode() == Mode::Na {
                return Err(SpecError::NonatomicEnabled(op_surface(o)));
            }
        }
        for r in &self.post {
            if !self.is_enabled_op(&r.op) {
                return Err(SpecError::PostWithoutPre(op_surface(&r.op)));
            }
        }
        Ok(())
    }

    /// Values an operation may leave in memory when starting from one of
    /// `domain`: written values of enabled writes and RMWs at enabled results.
    pub fn writable_values(&self, domain: &[Val]) -> Vec<Val> {
        let mut out: Vec<Val> = vec![self.v0];
        for o in self.enabled_ops() {
            if let Some(v) = o.value() {
                out.push(v);
            }
            if let Some(f) = o.update() {
                for &z in domain {
                    if self.enabled_at(o, z) {
                        out.extend(f.checked_apply(z));
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// The reference-counting specification: relaxed increments, release
/// decrements and acquire fences, all enabled only at positive counts
/// (fences at 0).
pub fn arc_spec() -> AtomicSpec {
    let inc = Operation::RmwRlx(UpdateFn::Add(1));
    let dec = Operation::RmwRel(UpdateFn::Add(-1));
    let fence = Operation::FenceAcq;
    AtomicSpec {
        name: "arc".into(),
        v0: 1,
        rho0: Nat(1),
        pre: vec![(inc.clone(), (Nat(1), Nat(0))), (dec.clone(), (Nat(1), Nat(0))), (fence.clone(), (Nat(0), Nat(1)))],
        post: vec![
            PostRule { op: inc, guard: Guard::ge(1), global: Nat(2), local: Nat(0) },
            PostRule { op: dec.clone(), guard: Guard::ge(2), global: Nat(0), local: Nat(0) },
            PostRule { op: dec, guard: Guard::eq(1), global: Nat(0), local: Nat(1) },
            PostRule { op: fence, guard: Guard::eq(0), global: Nat(0), local: Nat(1) },
        ],
    }
}

// ============================================================================
// Replaying tied resources
// ============================================================================

/// An atomic event as seen by the tied-resource bookkeeping.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TiedEvent {
    pub thread: ThreadId,
    pub op: Operation,
    pub result: Val,
}

impl TiedEvent {
    pub fn new(thread: ThreadId, op: Operation, result: Val) -> Self {
        TiedEvent { thread, op, result }
    }
}

fn pre_post(spec: &AtomicSpec, e: &TiedEvent) -> Result<(TotalTied, TotalTied), TiedError> {
    let (pg, pl) = spec.pre_of(&e.op).ok_or_else(|| TiedError::NotEnabled(op_surface(&e.op)))?;
    let (qg, ql) = spec
        .post_of(&e.op, e.result)
        .ok_or_else(|| TiedError::UnknownOperation(op_surface(&e.op), e.result))?;
    Ok((Total::at(pg, e.thread, pl), Total::at(qg, e.thread, ql)))
}

/// Consumes each event's precondition and produces its postcondition, in
/// `order` (indices into `events`). `Ok(None)` if a subtraction fails.
pub fn replay_in_order(
    spec: &AtomicSpec,
    events: &[TiedEvent],
    order: &[usize],
) -> Result<Option<TotalTied>, TiedError> {
    let mut cur = spec.rho0_total();
    for &i in order {
        let (pre, post) = pre_post(spec, &events[i])?;
        match cur.subtract(&pre) {
            Some(rest) => cur = rest.compose(&post),
            None => return Ok(None),
        }
    }
    Ok(Some(cur))
}

/// All postconditions composed onto `(ρ0, ε)`, then all preconditions
/// subtracted.
pub fn net_resource(spec: &AtomicSpec, events: &[TiedEvent]) -> Result<Option<TotalTied>, TiedError> {
    let mut acc = spec.rho0_total();
    let mut pres = TotalTied::unit();
    for e in events {
        let (pre, post) = pre_post(spec, e)?;
        acc = acc.compose(&post);
        pres = pres.compose(&pre);
    }
    Ok(acc.subtract(&pres))
}

// ============================================================================
// Surface syntax
// ============================================================================

fn mode_suffix(k: OpKind) -> &'static str {
    match k.mode() {
        Mode::Na => "na",
        Mode::Rlx => "rlx",
        Mode::Acq => "acq",
        Mode::Rel => "rel",
        Mode::AcqRel => "acqrel",
    }
}

/// Location-free surface form of an operation, e.g. `FAA_rel(-1)`.
pub fn op_surface(op: &Operation) -> String {
    let k = op.kind();
    let m = mode_suffix(k);
    match op {
        Operation::ReadNA | Operation::ReadRlx | Operation::ReadAcq => format!("R_{m}"),
        Operation::FenceAcq => "fence_acq".into(),
        Operation::FenceRel => "fence_rel".into(),
        Operation::WriteNA(v) | Operation::WriteRlx(v) | Operation::WriteRel(v) => format!("W_{m}({v})"),
        _ => match op.update().expect("rmw") {
            UpdateFn::Add(d) => format!("FAA_{m}({d:+})"),
            UpdateFn::Set(v) => format!("XCHG_{m}({v})"),
            t @ UpdateFn::Table { .. } => format!("RMW_{m}({t})"),
        },
    }
}

fn rmw_of(mode: &str, f: UpdateFn) -> Option<Operation> {
    Some(match mode {
        "rlx" => Operation::RmwRlx(f),
        "rel" => Operation::RmwRel(f),
        "acq" => Operation::RmwAcq(f),
        "acqrel" => Operation::RmwAcqRel(f),
        _ => return None,
    })
}

/// Splits `NAME_mode` into its parts.
pub fn split_mode(head: &str) -> Option<(&str, &str)> {
    head.split_once('_')
}

/// Builds an operation from a surface head (`FAA_rlx`, `R_acq`, ...) and its
/// integer operand, if any.
pub fn op_from_head(head: &str, operand: Option<Val>) -> Option<Operation> {
    if head == "fence_acq" && operand.is_none() {
        return Some(Operation::FenceAcq);
    }
    if head == "fence_rel" && operand.is_none() {
        return Some(Operation::FenceRel);
    }
    let (base, mode) = split_mode(head)?;
    match (base, operand) {
        ("R", None) => match mode {
            "na" => Some(Operation::ReadNA),
            "rlx" => Some(Operation::ReadRlx),
            "acq" => Some(Operation::ReadAcq),
            _ => None,
        },
        ("W", Some(v)) => match mode {
            "na" => Some(Operation::WriteNA(v)),
            "rlx" => Some(Operation::WriteRlx(v)),
            "rel" => Some(Operation::WriteRel(v)),
            _ => None,
        },
        ("FAA", Some(k)) => rmw_of(mode, UpdateFn::Add(k)),
        ("XCHG", Some(v)) => rmw_of(mode, UpdateFn::Set(v)),
        _ => None,
    }
}

pub fn parse_op_surface(s: &str) -> Option<Operation> {
    let s = s.trim();
    match s.split_once('(') {
        None => op_from_head(s, None),
        Some((head, rest)) => {
            let arg = rest.strip_suffix(')')?.trim();
            if let Some(t) = arg.strip_prefix("table:") {
                let f: UpdateFn = format!("table:{t}").parse().ok()?;
                let (base, mode) = split_mode(head)?;
                return (base == "RMW").then(|| rmw_of(mode, f)).flatten();
            }
            op_from_head(head.trim(), Some(arg.parse().ok()?))
        }
    }
}

pub fn print_spec(spec: &AtomicSpec) -> String {
    let mut out = String::new();
    writeln!(out, "spec {} {{", spec.name).unwrap();
    writeln!(out, "  v0={}; rG=nat; rL=nat; rho0={};", spec.v0, spec.rho0).unwrap();
    for (o, (g, l)) in &spec.pre {
        writeln!(out, "  pre {} = ({g},{l});", op_surface(o)).unwrap();
    }
    for r in &spec.post {
        writeln!(out, "  post {} @ {} = ({},{});", op_surface(&r.op), r.guard, r.global, r.local).unwrap();
    }
    out.push('}');
    out.push('\n');
    out
}

fn parse_pair(s: &str) -> Result<(Nat, Nat), SpecError> {
    let bad = || SpecError::Syntax(format!("expected (g,l), found `{s}`"));
    let inner = s.trim().strip_prefix('(').and_then(|x| x.strip_suffix(')')).ok_or_else(bad)?;
    let (g, l) = inner.split_once(',').ok_or_else(bad)?;
    Ok((Nat(g.trim().parse().map_err(|_| bad())?), Nat(l.trim().parse().map_err(|_| bad())?)))
}

fn parse_guard(s: &str) -> Result<Guard, SpecError> {
    let s = s.trim();
    if s == "*" {
        return Ok(Guard::any());
    }
    let rest = s
        .strip_prefix('z')
        .ok_or_else(|| SpecError::Syntax(format!("guard must start with z: `{s}`")))?;
    let (cmp, k) = [(">=", Cmp::Ge), ("<=", Cmp::Le), (">", Cmp::Gt), ("<", Cmp::Lt), ("=", Cmp::Eq)]
        .into_iter()
        .find_map(|(p, c)| rest.strip_prefix(p).map(|k| (c, k)))
        .ok_or_else(|| SpecError::Syntax(format!("bad guard `{s}`")))?;
    let k = k.trim().parse().map_err(|_| SpecError::Syntax(format!("bad guard bound `{s}`")))?;
    Ok(Guard { cmp, k })
}

fn parse_op_checked(s: &str) -> Result<Operation, SpecError> {
    parse_op_surface(s).ok_or_else(|| SpecError::Syntax(format!("unknown operation `{}`", s.trim())))
}

/// Parses the body of a `spec NAME { ... }` block (the text between braces).
pub fn parse_spec_body(name: &str, body: &str) -> Result<AtomicSpec, SpecError> {
    let mut spec = AtomicSpec { name: name.to_string(), v0: 0, rho0: Nat(0), pre: vec![], post: vec![] };
    let (mut seen_v0, mut seen_rho0) = (false, false);
    for item in body.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some(rest) = item.strip_prefix("pre ") {
            let (op, pair) = rest.rsplit_once('=').ok_or_else(|| SpecError::Syntax(item.into()))?;
            spec.pre.push((parse_op_checked(op)?, parse_pair(pair)?));
        } else if let Some(rest) = item.strip_prefix("post ") {
            let (lhs, pair) = rest.rsplit_once('=').ok_or_else(|| SpecError::Syntax(item.into()))?;
            let (op, guard) = lhs.split_once('@').ok_or_else(|| SpecError::Syntax(item.into()))?;
            let (global, local) = parse_pair(pair)?;
            spec.post.push(PostRule { op: parse_op_checked(op)?, guard: parse_guard(guard)?, global, local });
        } else {
            let (k, v) = item.split_once('=').ok_or_else(|| SpecError::Syntax(item.into()))?;
            let v = v.trim();
            let num = || v.parse::<i64>().map_err(|_| SpecError::Syntax(format!("bad number in `{item}`")));
            match k.trim() {
                "v0" => {
                    spec.v0 = num()?;
                    seen_v0 = true;
                }
                "rho0" => {
                    spec.rho0 = Nat(v.parse().map_err(|_| SpecError::Syntax(format!("bad rho0 `{v}`")))?);
                    seen_rho0 = true;
                }
                "rG" | "rL" if v == "nat" => {}
                "rG" | "rL" => return Err(SpecError::Syntax(format!("unsupported monoid `{v}`"))),
                other => return Err(SpecError::Syntax(format!("unknown field `{other}`"))),
            }
        }
    }
    if !seen_v0 || !seen_rho0 {
        return Err(SpecError::Syntax("spec needs v0 and rho0".into()));
    }
    spec.validate()?;
    Ok(spec)
}

/// Parses a full `spec NAME { ... }` block.
pub fn parse_spec(text: &str) -> Result<AtomicSpec, SpecError> {
    let t = text.trim();
    let rest = t.strip_prefix("spec").ok_or_else(|| SpecError::Syntax("expected `spec`".into()))?;
    let (name, body) = rest.split_once('{').ok_or_else(|| SpecError::Syntax("expected `{`".into()))?;
    let body = body.trim_end().strip_suffix('}').ok_or_else(|| SpecError::Syntax("expected `}`".into()))?;
    parse_spec_body(name.trim(), body)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inc() -> Operation {
        Operation::RmwRlx(UpdateFn::Add(1))
    }
    fn dec() -> Operation {
        Operation::RmwRel(UpdateFn::Add(-1))
    }
    const T1: ThreadId = ThreadId(1);

    #[test]
    fn arc_spec_table() {
        let s = arc_spec();
        assert!(s.validate().is_ok());
        assert_eq!(s.pre_of(&inc()), Some((Nat(1), Nat(0))));
        assert_eq!(s.post_of(&dec(), 1), Some((Nat(0), Nat(1))));
        assert_eq!(s.post_of(&dec(), 3), Some((Nat(0), Nat(0))));
        assert_eq!(s.post_of(&inc(), 0), None);
        assert_eq!(s.post_of(&Operation::FenceAcq, 0), Some((Nat(0), Nat(1))));
    }

    #[test]
    fn replay_examples() {
        let s = arc_spec();
        let r = replay_in_order(&s, &[TiedEvent::new(T1, inc(), 1)], &[0]).unwrap();
        assert_eq!(r, Some(Total::new(Nat(2), ThreadBound::unit())));
        let r = replay_in_order(&s, &[TiedEvent::new(T1, dec(), 1)], &[0]).unwrap();
        assert_eq!(r, Some(Total::at(Nat(0), T1, Nat(1))));
        assert_eq!(replay_in_order(&s, &[], &[]).unwrap(), Some(s.rho0_total()));
        let two_decs = [TiedEvent::new(T1, dec(), 2), TiedEvent::new(ThreadId(2), dec(), 1)];
        assert_eq!(replay_in_order(&s, &two_decs, &[0, 1]).unwrap(), None);
        let bad = [TiedEvent::new(T1, inc(), 0)];
        assert!(matches!(replay_in_order(&s, &bad, &[0]), Err(TiedError::UnknownOperation(..))));
    }

    #[test]
    fn net_examples() {
        let s = arc_spec();
        let evs = [TiedEvent::new(T1, inc(), 1), TiedEvent::new(T1, dec(), 2)];
        // 1 + 2 + 0 - 1 - 1
        assert_eq!(net_resource(&s, &evs).unwrap(), Some(Total::new(Nat(1), ThreadBound::unit())));
        assert_eq!(net_resource(&s, &[]).unwrap(), Some(s.rho0_total()));
        for n in 0..5u64 {
            let mut evs = vec![];
            for i in 0..n {
                evs.push(TiedEvent::new(ThreadId(i as u32 + 1), inc(), 1));
                evs.push(TiedEvent::new(ThreadId(i as u32 + 1), dec(), 2));
            }
            let expect = 1 + 2 * n - n - n;
            assert_eq!(net_resource(&s, &evs).unwrap().unwrap().global, Nat(expect));
        }
    }

    #[test]
    fn spec_text_round_trip() {
        let s = arc_spec();
        let text = print_spec(&s);
        assert_eq!(parse_spec(&text).unwrap(), s);
        assert_eq!(print_spec(&parse_spec(&text).unwrap()), text);
    }

    #[test]
    fn spec_rejects_nonatomic() {
        let e = parse_spec("spec bad { v0=0; rG=nat; rL=nat; rho0=0; pre R_na = (0,0); }");
        assert!(matches!(e, Err(SpecError::NonatomicEnabled(_))));
    }

    #[test]
    fn surface_ops_round_trip() {
        for o in [
            inc(),
            dec(),
            Operation::FenceAcq,
            Operation::FenceRel,
            Operation::ReadAcq,
            Operation::WriteRel(3),
            Operation::RmwAcqRel(UpdateFn::Set(2)),
            Operation::RmwAcq(UpdateFn::Table { map: [(0, 1)].into_iter().collect(), default: 0 }),
        ] {
            assert_eq!(parse_op_surface(&op_surface(&o)), Some(o));
        }
    }

    #[test]
    fn thread_bound_has_no_unit_entries() {
        let a = ThreadBound::singleton(T1, Nat(1));
        let b = a.subtract(&a).unwrap();
        assert_eq!(b, ThreadBound::unit());
        assert!(ThreadBound::singleton(T1, Nat(0)).is_unit());
    }
}
