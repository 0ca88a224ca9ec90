//! The instrumented language: expressions, commands, litmus programs, the
//! surface parser and printer, substitution, and per-thread unrolling.
//!
//! Litmus files look like
//!
//! ```text
//! % header comments are kept verbatim
//! litmus LB
//! init X=0 Y=0
//! thread {
//!   let a = R_rlx(X) in
//!   W_rlx(Y, 1)
//! }
//! thread {
//!   let b = R_rlx(Y) in
//!   W_rlx(X, 1)
//! }
//! exists a=1 /\ b=1
//! ```
//!
//! `c1; c2` abbreviates `let _ = c1 in c2`. Equality is written `==`.
//! Atomic operations take the location first: `FAA_rel(a, -1)`,
//! `fence_acq(a)`, `W_rlx(Y, 1)`, `RMW_acq(X, table:0>1,_>0)`.

use crate::exec_graph::{Loc, Mark, Operation, ThreadId, Val};
use crate::tied::{op_surface, parse_op_surface, parse_spec_body, print_spec, AtomicSpec, SpecError};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

// ----------------------------------------------------------------------------
// Syntax
// ----------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Value(Val),
    Var(String),
    Add(Box<Expr>, Box<Expr>),
    Eq(Box<Expr>, Box<Expr>),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Cmd {
    /// A finished command yielding a value.
    Ret(Expr),
    Cons(Vec<Expr>),
    ReadNA(Expr),
    WriteNA(Expr, Expr),
    /// A nonatomic write whose first half has happened; runtime only.
    WriteNAInProgress(Loc, Val),
    Free(Expr),
    BeginAtomic(Expr, String),
    EndAtomic(Expr),
    /// An atomic operation on the location given by the expression.
    Op(Operation, Expr),
    If(Expr, Box<Cmd>),
    Let(String, Box<Cmd>, Box<Cmd>),
    Fork(Box<Cmd>),
}

/// The binder used for `c1; c2`.
pub const SEQ: &str = "_";

impl Expr {
    pub fn var(x: &str) -> Expr {
        Expr::Var(x.into())
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(b))
    }

    pub fn eq(a: Expr, b: Expr) -> Expr {
        Expr::Eq(Box::new(a), Box::new(b))
    }

    /// Evaluates under `env`; `None` names the first unbound variable.
    pub fn eval(&self, env: &BTreeMap<String, Val>) -> Result<Val, String> {
        Ok(match self {
            Expr::Value(v) => *v,
            Expr::Var(x) => *env.get(x).ok_or_else(|| x.clone())?,
            Expr::Add(a, b) => a.eval(env)?.wrapping_add(b.eval(env)?),
            Expr::Eq(a, b) => (a.eval(env)? == b.eval(env)?) as Val,
        })
    }

    /// Value of a closed expression.
    pub fn closed_value(&self) -> Option<Val> {
        self.eval(&BTreeMap::new()).ok()
    }

    fn subst(&self, v: Val, x: &str) -> Expr {
        match self {
            Expr::Var(y) if y == x => Expr::Value(v),
            Expr::Value(_) | Expr::Var(_) => self.clone(),
            Expr::Add(a, b) => Expr::add(a.subst(v, x), b.subst(v, x)),
            Expr::Eq(a, b) => Expr::eq(a.subst(v, x), b.subst(v, x)),
        }
    }
}

impl Cmd {
    pub fn ret(v: Val) -> Cmd {
        Cmd::Ret(Expr::Value(v))
    }

    pub fn seq(a: Cmd, b: Cmd) -> Cmd {
        Cmd::Let(SEQ.into(), Box::new(a), Box::new(b))
    }

    pub fn let_(x: &str, a: Cmd, b: Cmd) -> Cmd {
        Cmd::Let(x.into(), Box::new(a), Box::new(b))
    }

    /// `Some(v)` if the command is a value.
    pub fn as_value(&self) -> Option<Val> {
        match self {
            Cmd::Ret(e) => e.closed_value(),
            _ => None,
        }
    }
}

/// `c[v/x]`. Values contain no variables, so no capture can occur.
pub fn substitute(c: &Cmd, v: Val, x: &str) -> Cmd {
    let e = |e: &Expr| e.subst(v, x);
    match c {
        Cmd::Ret(a) => Cmd::Ret(e(a)),
        Cmd::Cons(es) => Cmd::Cons(es.iter().map(e).collect()),
        Cmd::ReadNA(a) => Cmd::ReadNA(e(a)),
        Cmd::WriteNA(a, b) => Cmd::WriteNA(e(a), e(b)),
        Cmd::WriteNAInProgress(..) => c.clone(),
        Cmd::Free(a) => Cmd::Free(e(a)),
        Cmd::BeginAtomic(a, s) => Cmd::BeginAtomic(e(a), s.clone()),
        Cmd::EndAtomic(a) => Cmd::EndAtomic(e(a)),
        Cmd::Op(o, a) => Cmd::Op(o.clone(), e(a)),
        Cmd::If(a, body) => Cmd::If(e(a), Box::new(substitute(body, v, x))),
        Cmd::Let(y, a, b) => {
            let b = if y == x { (**b).clone() } else { substitute(b, v, x) };
            Cmd::Let(y.clone(), Box::new(substitute(a, v, x)), Box::new(b))
        }
        Cmd::Fork(body) => Cmd::Fork(Box::new(substitute(body, v, x))),
    }
}

// ----------------------------------------------------------------------------
// Programs
// ----------------------------------------------------------------------------

/// A litmus program: named locations with initial values, atomic specs, and
/// parallel thread bodies. Thread `i` (0-based) runs as `ThreadId(i + 1)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub name: String,
    /// Leading `%` lines, kept for printing.
    pub comments: Vec<String>,
    /// Declared locations; the i-th lives at address i.
    pub locations: Vec<(String, Val)>,
    pub specs: Vec<AtomicSpec>,
    pub threads: Vec<Cmd>,
    /// Conjunction of register equalities; `None` if no `exists` clause.
    pub exists: Option<Vec<(String, Val)>>,
}

/// First address handed out by `cons`; thread `t` allocates from
/// `ALLOC_BASE * t`.
pub const ALLOC_BASE: Loc = 1000;

impl Program {
    pub fn spec(&self, name: &str) -> Option<&AtomicSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn address_of(&self, name: &str) -> Option<Loc> {
        self.locations.iter().position(|(n, _)| n == name).map(|i| i as Loc)
    }

    /// Initial environment binding each declared location name to its address.
    pub fn globals(&self) -> BTreeMap<String, Val> {
        self.locations.iter().enumerate().map(|(i, (n, _))| (n.clone(), i as Val)).collect()
    }

    pub fn main_threads(&self) -> impl Iterator<Item = (ThreadId, &Cmd)> {
        self.threads.iter().enumerate().map(|(i, c)| (ThreadId(i as u32 + 1), c))
    }

    /// Evaluates the `exists` clause; unknown registers make it false.
    pub fn postcondition_holds(&self, regs: &BTreeMap<String, Val>) -> bool {
        match &self.exists {
            None => true,
            Some(conj) => conj.iter().all(|(r, v)| regs.get(r) == Some(v)),
        }
    }

    /// Registers bound by `let` anywhere in the program, with duplicates.
    pub fn registers(&self) -> Vec<String> {
        fn walk(c: &Cmd, out: &mut Vec<String>) {
            match c {
                Cmd::Let(x, a, b) => {
                    if x != SEQ {
                        out.push(x.clone());
                    }
                    walk(a, out);
                    walk(b, out);
                }
                Cmd::If(_, b) | Cmd::Fork(b) => walk(b, out),
                _ => {}
            }
        }
        let mut out = vec![];
        for c in &self.threads {
            walk(c, &mut out);
        }
        out
    }

    /// Every literal value in the program: candidates for the value fixpoint.
    pub fn literals(&self) -> Vec<Val> {
        fn expr(e: &Expr, out: &mut Vec<Val>) {
            match e {
                Expr::Value(v) => out.push(*v),
                Expr::Var(_) => {}
                Expr::Add(a, b) | Expr::Eq(a, b) => {
                    expr(a, out);
                    expr(b, out);
                }
            }
        }
        fn cmd(c: &Cmd, out: &mut Vec<Val>) {
            match c {
                Cmd::Ret(e) | Cmd::ReadNA(e) | Cmd::Free(e) | Cmd::BeginAtomic(e, _) | Cmd::EndAtomic(e) => expr(e, out),
                Cmd::Cons(es) => es.iter().for_each(|e| expr(e, out)),
                Cmd::WriteNA(a, b) => {
                    expr(a, out);
                    expr(b, out);
                }
                Cmd::WriteNAInProgress(_, v) => out.push(*v),
                Cmd::Op(o, e) => {
                    if let Some(v) = o.value() {
                        out.push(v);
                    }
                    expr(e, out);
                }
                Cmd::If(e, b) => {
                    expr(e, out);
                    cmd(b, out);
                }
                Cmd::Let(_, a, b) => {
                    cmd(a, out);
                    cmd(b, out);
                }
                Cmd::Fork(b) => cmd(b, out),
            }
        }
        let mut out: Vec<Val> = self.locations.iter().map(|(_, v)| *v).collect();
        out.extend(self.specs.iter().map(|s| s.v0));
        for c in &self.threads {
            cmd(c, &mut out);
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

// ----------------------------------------------------------------------------
// Unrolling
// ----------------------------------------------------------------------------

/// One event of a thread trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub loc: Loc,
    pub op: Operation,
    pub result: Val,
    pub mark: Option<Mark>,
}

/// The events of one thread run under fixed read results, in program order.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ThreadTrace {
    pub events: Vec<TraceEvent>,
    /// Forked commands, closed, with the number of parent events before them.
    pub forks: Vec<(usize, Cmd)>,
    /// Final value of every register bound along the way.
    pub registers: BTreeMap<String, Val>,
    pub result: Val,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum UnrollError {
    /// The oracle ran out; `at` events had been emitted.
    #[error("oracle exhausted after {at} events")]
    OracleExhausted { at: usize, loc: Loc, op: Operation, partial: Box<ThreadTrace> },
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("unknown atomic specification `{0}`")]
    UnknownSpec(String),
    #[error("write in progress in source program")]
    RuntimeOnly,
}

/// Whether an event consumes an oracle value.
pub fn needs_value(op: &Operation, mark: Option<&Mark>) -> bool {
    op.kind().reads() && mark.is_none()
}

struct Unroller<'a> {
    thread: ThreadId,
    v0: &'a dyn Fn(&str) -> Option<Val>,
    oracle: &'a [Val],
    used: usize,
    next_cell: Loc,
    out: ThreadTrace,
}

impl Unroller<'_> {
    fn emit(&mut self, loc: Loc, op: Operation, mark: Option<Mark>) -> Result<Val, UnrollError> {
        let result = if needs_value(&op, mark.as_ref()) {
            let Some(&v) = self.oracle.get(self.used) else {
                return Err(UnrollError::OracleExhausted {
                    at: self.out.events.len(),
                    loc,
                    op,
                    partial: Box::new(self.out.clone()),
                });
            };
            self.used += 1;
            v
        } else {
            0
        };
        // an end_atomic write carries a placeholder 0 until the enumerator
        // gives it the value of its mo-predecessor
        self.out.events.push(TraceEvent { loc, op, result, mark });
        Ok(result)
    }

    fn run(&mut self, c: &Cmd, env: &mut BTreeMap<String, Val>) -> Result<Val, UnrollError> {
        let ev = |e: &Expr, env: &BTreeMap<String, Val>| e.eval(env).map_err(UnrollError::Unbound);
        match c {
            Cmd::Ret(e) => ev(e, env),
            Cmd::Cons(es) => {
                let base = ALLOC_BASE * self.thread.0 as Loc + self.next_cell;
                let vals = es.iter().map(|e| ev(e, env)).collect::<Result<Vec<_>, _>>()?;
                self.next_cell += vals.len() as Loc;
                for (i, v) in vals.into_iter().enumerate() {
                    self.emit(base + i as Loc, Operation::WriteNA(v), Some(Mark::Alloc))?;
                }
                Ok(base)
            }
            Cmd::ReadNA(l) => self.emit(ev(l, env)?, Operation::ReadNA, None),
            Cmd::WriteNA(l, v) => {
                let (l, v) = (ev(l, env)?, ev(v, env)?);
                self.emit(l, Operation::WriteNA(v), None)
            }
            Cmd::WriteNAInProgress(..) => Err(UnrollError::RuntimeOnly),
            Cmd::Free(l) => self.emit(ev(l, env)?, Operation::WriteNA(0), Some(Mark::Free)),
            Cmd::BeginAtomic(l, s) => {
                let v0 = (self.v0)(s).ok_or_else(|| UnrollError::UnknownSpec(s.clone()))?;
                self.emit(ev(l, env)?, Operation::WriteNA(v0), Some(Mark::BeginAtomic(s.clone())))
            }
            Cmd::EndAtomic(l) => self.emit(ev(l, env)?, Operation::WriteNA(0), Some(Mark::EndAtomic)),
            Cmd::Op(o, l) => self.emit(ev(l, env)?, o.clone(), None),
            Cmd::If(e, body) => {
                if ev(e, env)? != 0 {
                    self.run(body, env)
                } else {
                    Ok(0)
                }
            }
            Cmd::Let(x, a, b) => {
                let v = self.run(a, env)?;
                let saved = env.insert(x.clone(), v);
                if x != SEQ {
                    self.out.registers.insert(x.clone(), v);
                }
                let r = self.run(b, env);
                match saved {
                    Some(s) => env.insert(x.clone(), s),
                    None => env.remove(x),
                };
                r
            }
            Cmd::Fork(body) => {
                let closed = env.iter().fold((**body).clone(), |c, (x, v)| substitute(&c, *v, x));
                self.out.forks.push((self.out.events.len(), closed));
                Ok(0)
            }
        }
    }
}

/// Unrolls `c` as thread `thread`. `v0_of` resolves spec names to their
/// initial values; `globals` binds location names.
pub fn unroll_with(
    thread: ThreadId,
    c: &Cmd,
    oracle: &[Val],
    globals: &BTreeMap<String, Val>,
    v0_of: &dyn Fn(&str) -> Option<Val>,
) -> Result<ThreadTrace, UnrollError> {
    let mut u = Unroller { thread, v0: v0_of, oracle, used: 0, next_cell: 0, out: ThreadTrace::default() };
    let mut env = globals.clone();
    u.out.result = u.run(c, &mut env)?;
    Ok(u.out)
}

/// Unrolls a closed command as thread 1 with no specifications in scope.
pub fn unroll_thread(c: &Cmd, oracle: &[Val]) -> Result<ThreadTrace, UnrollError> {
    unroll_with(ThreadId(1), c, oracle, &BTreeMap::new(), &|_| None)
}

impl Program {
    pub fn unroll(&self, thread: ThreadId, c: &Cmd, oracle: &[Val]) -> Result<ThreadTrace, UnrollError> {
        unroll_with(thread, c, oracle, &self.globals(), &|s| self.spec(s).map(|s| s.v0))
    }
}

// ----------------------------------------------------------------------------
// Lexer
// ----------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("unresolved atomic specification `{0}`")]
    UnresolvedSpec(String),
    #[error("{0}")]
    Spec(#[from] SpecError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(Val),
    Sym(&'static str),
    /// A whole `spec NAME { ... }` block.
    SpecBlock(String, String),
    /// A `table:..` operand.
    Table(String),
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const SYMS: [&str; 14] = ["/\\", ":=", "==", "(", ")", "[", "]", "{", "}", ",", ";", "+", "=", "-"];

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = vec![];
    let (mut i, mut line, mut col) = (0, 1, 1);
    let err = |line, col, msg: String| ParseError::Syntax { line, col, msg };
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '%' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let (l0, c0) = (line, col);
        if c.is_ascii_digit() {
            let s: String = chars[i..].iter().take_while(|c| c.is_ascii_digit()).collect();
            i += s.len();
            col += s.len();
            let v = s.parse().map_err(|_| err(l0, c0, format!("integer out of range: {s}")))?;
            out.push(Token { tok: Tok::Int(v), line: l0, col: c0 });
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let s: String = chars[i..].iter().take_while(|c| c.is_alphanumeric() || **c == '_').collect();
            i += s.len();
            col += s.len();
            if s == "table" && chars.get(i) == Some(&':') {
                let rest: String = chars[i + 1..].iter().take_while(|c| **c != ')').collect();
                i += 1 + rest.len();
                col += 1 + rest.len();
                out.push(Token { tok: Tok::Table(format!("table:{}", rest.trim())), line: l0, col: c0 });
                continue;
            }
            if s == "spec" {
                // the spec body has its own grammar
                let rest: String = chars[i..].iter().collect();
                let open = rest.find('{').ok_or_else(|| err(l0, c0, "expected `{` after spec name".into()))?;
                let close = rest.find('}').ok_or_else(|| err(l0, c0, "unterminated spec".into()))?;
                let name = rest[..open].trim().to_string();
                let body = rest[open + 1..close].to_string();
                let consumed = rest[..=close].chars().count();
                let text: String = chars[i..i + consumed].iter().collect();
                i += consumed;
                line += text.matches('\n').count();
                col = match text.rfind('\n') {
                    Some(p) => text[p + 1..].chars().count() + 1,
                    None => col + consumed,
                };
                out.push(Token { tok: Tok::SpecBlock(name, body), line: l0, col: c0 });
                continue;
            }
            out.push(Token { tok: Tok::Ident(s), line: l0, col: c0 });
            continue;
        }
        let rest: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        match SYMS.iter().find(|s| rest.starts_with(**s)) {
            Some(s) => {
                i += s.len();
                col += s.len();
                out.push(Token { tok: Tok::Sym(s), line: l0, col: c0 });
            }
            None => return Err(err(l0, c0, format!("unexpected character `{c}`"))),
        }
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

// ----------------------------------------------------------------------------
// Parser
// ----------------------------------------------------------------------------

const KEYWORDS: [&str; 12] =
    ["let", "in", "if", "then", "fork", "cons", "free", "begin_atomic", "end_atomic", "thread", "exists", "init"];

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek2(&self) -> &Tok {
        &self.toks[(self.pos + 1).min(self.toks.len() - 1)].tok
    }

    fn next(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        let t = &self.toks[self.pos];
        Err(ParseError::Syntax { line: t.line, col: t.col, msg: msg.into() })
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == k)
    }

    fn sym(&mut self, s: &str) -> Result<(), ParseError> {
        if self.is_sym(s) {
            self.next();
            Ok(())
        } else {
            self.err(format!("expected `{s}`"))
        }
    }

    fn kw(&mut self, k: &str) -> Result<(), ParseError> {
        if self.is_kw(k) {
            self.next();
            Ok(())
        } else {
            self.err(format!("expected `{k}`"))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.next();
                Ok(s)
            }
            _ => self.err("expected identifier"),
        }
    }

    fn int(&mut self) -> Result<Val, ParseError> {
        let neg = if self.is_sym("-") {
            self.next();
            true
        } else {
            if self.is_sym("+") {
                self.next();
            }
            false
        };
        match self.next() {
            Tok::Int(v) => Ok(if neg { v.wrapping_neg() } else { v }),
            _ => {
                self.pos -= 1;
                self.err("expected integer")
            }
        }
    }

    // expr := sum ('==' sum)?
    fn expr(&mut self) -> Result<Expr, ParseError> {
        let a = self.sum()?;
        self.expr_rest(a)
    }

    fn expr_rest(&mut self, a: Expr) -> Result<Expr, ParseError> {
        let mut a = a;
        while self.is_sym("+") {
            self.next();
            a = Expr::add(a, self.atom()?);
        }
        if self.is_sym("==") {
            self.next();
            let b = self.sum()?;
            return Ok(Expr::eq(a, b));
        }
        Ok(a)
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut a = self.atom()?;
        while self.is_sym("+") {
            self.next();
            a = Expr::add(a, self.atom()?);
        }
        Ok(a)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::Int(_) => Ok(Expr::Value(self.int()?)),
            Tok::Sym("-") => Ok(Expr::Value(self.int()?)),
            Tok::Sym("(") => {
                self.next();
                let e = self.expr()?;
                self.sym(")")?;
                Ok(e)
            }
            Tok::Ident(_) => Ok(Expr::Var(self.ident()?)),
            _ => self.err("expected expression"),
        }
    }

    // cmd := simple (';' cmd)?
    fn cmd(&mut self) -> Result<Cmd, ParseError> {
        let a = self.simple()?;
        if self.is_sym(";") {
            self.next();
            let b = self.cmd()?;
            return Ok(Cmd::seq(a, b));
        }
        Ok(a)
    }

    fn simple(&mut self) -> Result<Cmd, ParseError> {
        let head = match self.peek().clone() {
            Tok::Ident(s) => s,
            Tok::Sym("(") => {
                self.next();
                let c = self.cmd()?;
                self.sym(")")?;
                return match c {
                    Cmd::Ret(e) if self.is_sym("+") || self.is_sym("==") => Ok(Cmd::Ret(self.expr_rest(e)?)),
                    c => Ok(c),
                };
            }
            Tok::Sym("[") => {
                self.next();
                let l = self.expr()?;
                self.sym("]")?;
                if self.is_sym(":=") {
                    self.next();
                    self.kw("na")?;
                    return Ok(Cmd::WriteNA(l, self.expr()?));
                }
                return match self.next() {
                    Tok::Ident(s) if s == "_na" => Ok(Cmd::ReadNA(l)),
                    _ => {
                        self.pos -= 1;
                        self.err("expected `_na` or `:=na`")
                    }
                };
            }
            _ => return Ok(Cmd::Ret(self.expr()?)),
        };
        match head.as_str() {
            "let" => {
                self.next();
                let x = self.ident()?;
                self.sym("=")?;
                let a = self.simple()?;
                self.kw("in")?;
                let b = self.cmd()?;
                Ok(Cmd::Let(x, Box::new(a), Box::new(b)))
            }
            "if" => {
                self.next();
                let e = self.expr()?;
                self.kw("then")?;
                Ok(Cmd::If(e, Box::new(self.simple()?)))
            }
            "fork" => {
                self.next();
                self.sym("(")?;
                let c = self.cmd()?;
                self.sym(")")?;
                Ok(Cmd::Fork(Box::new(c)))
            }
            "cons" => {
                self.next();
                self.sym("(")?;
                let mut es = vec![self.expr()?];
                while self.is_sym(",") {
                    self.next();
                    es.push(self.expr()?);
                }
                self.sym(")")?;
                Ok(Cmd::Cons(es))
            }
            "free" | "end_atomic" => {
                self.next();
                self.sym("(")?;
                let e = self.expr()?;
                self.sym(")")?;
                Ok(if head == "free" { Cmd::Free(e) } else { Cmd::EndAtomic(e) })
            }
            "begin_atomic" => {
                self.next();
                self.sym("(")?;
                let e = self.expr()?;
                self.sym(",")?;
                let s = self.ident()?;
                self.sym(")")?;
                Ok(Cmd::BeginAtomic(e, s))
            }
            _ if matches!(self.peek2(), Tok::Sym("(")) && is_op_head(&head) => self.op(&head),
            _ => Ok(Cmd::Ret(self.expr()?)),
        }
    }

    fn op(&mut self, head: &str) -> Result<Cmd, ParseError> {
        self.next();
        self.sym("(")?;
        let loc = self.expr()?;
        let arg = if self.is_sym(",") {
            self.next();
            match self.peek().clone() {
                Tok::Table(t) => {
                    self.next();
                    Some(t)
                }
                _ => Some(self.int()?.to_string()),
            }
        } else {
            None
        };
        self.sym(")")?;
        let text = match &arg {
            Some(a) => format!("{head}({a})"),
            None => head.to_string(),
        };
        match parse_op_surface(&text) {
            Some(o) if !o.kind().is_nonatomic() => Ok(Cmd::Op(o, loc)),
            Some(_) => self.err(format!("nonatomic operation `{head}`; use [e]_na or [e] :=na e")),
            None => self.err(format!("malformed operation `{text}`")),
        }
    }
}

fn is_op_head(h: &str) -> bool {
    h.starts_with("fence_") || ["R_", "W_", "FAA_", "XCHG_", "RMW_"].iter().any(|p| h.starts_with(p))
}

/// Parses a single command.
pub fn parse_cmd(text: &str) -> Result<Cmd, ParseError> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let c = p.cmd()?;
    if *p.peek() != Tok::Eof {
        return p.err("trailing input");
    }
    Ok(c)
}

/// Parses a litmus file.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let comments = text
        .lines()
        .take_while(|l| l.trim_start().starts_with('%'))
        .map(|l| l.to_string())
        .collect();
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let mut prog = Program { name: String::new(), comments, locations: vec![], specs: vec![], threads: vec![], exists: None };
    loop {
        match p.peek().clone() {
            Tok::Eof => break,
            Tok::SpecBlock(name, body) => {
                p.next();
                let s = parse_spec_body(&name, &body)?;
                s.validate()?;
                prog.specs.push(s);
            }
            Tok::Ident(k) if k == "litmus" => {
                p.next();
                prog.name = match p.next() {
                    Tok::Ident(s) => s,
                    _ => return p.err("expected test name"),
                };
            }
            Tok::Ident(k) if k == "init" => {
                p.next();
                while let Tok::Ident(x) = p.peek().clone() {
                    if KEYWORDS.contains(&x.as_str()) || x == "litmus" {
                        break;
                    }
                    p.next();
                    p.sym("=")?;
                    let v = p.int()?;
                    prog.locations.push((x, v));
                }
            }
            Tok::Ident(k) if k == "thread" => {
                p.next();
                p.sym("{")?;
                let c = p.cmd()?;
                p.sym("}")?;
                prog.threads.push(c);
            }
            Tok::Ident(k) if k == "exists" => {
                p.next();
                let mut conj = vec![];
                if p.is_kw("true") {
                    p.next();
                } else {
                    loop {
                        let r = p.ident()?;
                        p.sym("=")?;
                        conj.push((r, p.int()?));
                        if !p.is_sym("/\\") {
                            break;
                        }
                        p.next();
                    }
                }
                prog.exists = Some(conj);
            }
            _ => return p.err("expected `litmus`, `init`, `spec`, `thread` or `exists`"),
        }
    }
    check_specs(&prog)?;
    Ok(prog)
}

fn check_specs(p: &Program) -> Result<(), ParseError> {
    fn walk(c: &Cmd, p: &Program) -> Result<(), ParseError> {
        match c {
            Cmd::BeginAtomic(_, s) if p.spec(s).is_none() => Err(ParseError::UnresolvedSpec(s.clone())),
            Cmd::If(_, b) | Cmd::Fork(b) => walk(b, p),
            Cmd::Let(_, a, b) => walk(a, p).and_then(|_| walk(b, p)),
            _ => Ok(()),
        }
    }
    p.threads.iter().try_for_each(|c| walk(c, p))
}

// ----------------------------------------------------------------------------
// Printer
// ----------------------------------------------------------------------------

pub fn print_expr(e: &Expr) -> String {
    match e {
        Expr::Value(v) => v.to_string(),
        Expr::Var(x) => x.clone(),
        Expr::Add(a, b) => {
            let r = match **b {
                Expr::Add(..) | Expr::Eq(..) => format!("({})", print_expr(b)),
                _ => print_expr(b),
            };
            let l = match **a {
                Expr::Eq(..) => format!("({})", print_expr(a)),
                _ => print_expr(a),
            };
            format!("{l} + {r}")
        }
        Expr::Eq(a, b) => {
            let wrap = |x: &Expr| match x {
                Expr::Eq(..) => format!("({})", print_expr(x)),
                _ => print_expr(x),
            };
            format!("{} == {}", wrap(a), wrap(b))
        }
    }
}

/// An expression in command position must not start with `(`.
fn print_ret(e: &Expr) -> String {
    let s = print_expr(e);
    if s.starts_with('(') {
        format!("({s})")
    } else {
        s
    }
}

fn print_op(o: &Operation, l: &Expr) -> String {
    let s = op_surface(o);
    match s.split_once('(') {
        Some((head, arg)) => format!("{head}({}, {arg}", print_expr(l)),
        None => format!("{s}({})", print_expr(l)),
    }
}

fn indent(s: &str, by: usize) -> String {
    let pad = " ".repeat(by);
    s.lines().map(|l| format!("{pad}{l}")).collect::<Vec<_>>().join("\n")
}

/// A command that can stand where `simple` is expected.
fn print_simple(c: &Cmd) -> String {
    match c {
        Cmd::Let(..) => format!("(\n{}\n)", indent(&print_cmd(c), 2)),
        _ => print_cmd(c),
    }
}

/// Prints a command; sequences and lets span several lines.
pub fn print_cmd(c: &Cmd) -> String {
    match c {
        Cmd::Ret(e) => print_ret(e),
        Cmd::Cons(es) => format!("cons({})", es.iter().map(print_expr).collect::<Vec<_>>().join(", ")),
        Cmd::ReadNA(l) => format!("[{}]_na", print_expr(l)),
        Cmd::WriteNA(l, v) => format!("[{}] :=na {}", print_expr(l), print_expr(v)),
        Cmd::WriteNAInProgress(l, v) => format!("[{l}] :='na {v}"),
        Cmd::Free(l) => format!("free({})", print_expr(l)),
        Cmd::BeginAtomic(l, s) => format!("begin_atomic({}, {s})", print_expr(l)),
        Cmd::EndAtomic(l) => format!("end_atomic({})", print_expr(l)),
        Cmd::Op(o, l) => print_op(o, l),
        Cmd::If(e, body) => format!("if {} then {}", print_expr(e), print_simple(body)),
        Cmd::Let(x, a, b) if x == SEQ => format!("{};\n{}", print_simple(a), print_cmd(b)),
        Cmd::Let(x, a, b) => format!("let {x} = {} in\n{}", print_simple(a), print_cmd(b)),
        Cmd::Fork(body) => match **body {
            Cmd::Let(..) => format!("fork(\n{}\n)", indent(&print_cmd(body), 2)),
            _ => format!("fork({})", print_cmd(body)),
        },
    }
}

/// Canonical litmus text; `parse_program` inverts it.
pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    for c in &p.comments {
        writeln!(out, "{c}").unwrap();
    }
    writeln!(out, "litmus {}", p.name).unwrap();
    if !p.locations.is_empty() {
        let locs: Vec<String> = p.locations.iter().map(|(n, v)| format!("{n}={v}")).collect();
        writeln!(out, "init {}", locs.join(" ")).unwrap();
    }
    for s in &p.specs {
        out.push_str(&print_spec(s));
    }
    for c in &p.threads {
        writeln!(out, "thread {{\n{}\n}}", indent(&print_cmd(c), 2)).unwrap();
    }
    if let Some(conj) = &p.exists {
        let atoms: Vec<String> = conj.iter().map(|(r, v)| format!("{r}={v}")).collect();
        let body = if atoms.is_empty() { "true".to_string() } else { atoms.join(" /\\ ") };
        writeln!(out, "exists {body}").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec_graph::UpdateFn;
    use proptest::prelude::*;

    const LB: &str = "% LB\nlitmus LB\ninit X=0 Y=0\nthread {\n  let a = R_rlx(X) in\n  W_rlx(Y, 1)\n}\nthread {\n  let b = R_rlx(Y) in\n  W_rlx(X, 1)\n}\nexists a=1 /\\ b=1\n";

    #[test]
    fn litmus_round_trip() {
        let p = parse_program(LB).unwrap();
        assert_eq!(p.threads.len(), 2);
        assert_eq!(p.exists, Some(vec![("a".into(), 1), ("b".into(), 1)]));
        assert_eq!(print_program(&p), LB);
    }

    #[test]
    fn fences_take_a_location() {
        let c = parse_cmd("let a = R_rlx(X) in fence_acq(X); W_rlx(Y, 1)").unwrap();
        let Cmd::Let(_, _, rest) = c else { panic!() };
        let Cmd::Let(_, f, _) = *rest else { panic!() };
        assert_eq!(*f, Cmd::Op(Operation::FenceAcq, Expr::var("X")));
    }

    #[test]
    fn small_forms() {
        assert_eq!(
            parse_cmd("let x = [a]_na in x").unwrap(),
            Cmd::let_("x", Cmd::ReadNA(Expr::var("a")), Cmd::Ret(Expr::var("x")))
        );
        assert_eq!(parse_cmd("if 0 then free(a)").unwrap(), Cmd::If(Expr::Value(0), Box::new(Cmd::Free(Expr::var("a")))));
        assert!(matches!(parse_cmd("R_na(X)"), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse_cmd("let = 1 in 2"), Err(ParseError::Syntax { line: 1, col: 5, .. })));
    }

    #[test]
    fn unresolved_spec() {
        let e = parse_program("litmus T\nthread { begin_atomic(0, nope) }\n").unwrap_err();
        assert_eq!(e, ParseError::UnresolvedSpec("nope".into()));
    }

    #[test]
    fn substitution_respects_binders() {
        let c = parse_cmd("let y = FAA_rlx(x, 1) in [x]_na; let x = 2 in x").unwrap();
        let s = substitute(&c, 3, "x");
        let expected = parse_cmd("let y = FAA_rlx(3, 1) in [3]_na; let x = 2 in x").unwrap();
        assert_eq!(s, expected);
    }

    #[test]
    fn unrolling_lb_and_lbd() {
        let p = parse_program(LB).unwrap();
        let t = p.unroll(ThreadId(1), &p.threads[0], &[1]).unwrap();
        let ops: Vec<_> = t.events.iter().map(|e| (e.loc, e.op.clone(), e.result)).collect();
        assert_eq!(ops, vec![(0, Operation::ReadRlx, 1), (1, Operation::WriteRlx(1), 0)]);
        assert_eq!(t.registers["a"], 1);
        let lbd = parse_cmd("let a = R_rlx(X) in if a == 1 then W_rlx(Y, 1)").unwrap();
        let g = [("X".to_string(), 0), ("Y".to_string(), 1)].into_iter().collect();
        let t = unroll_with(ThreadId(1), &lbd, &[0], &g, &|_| None).unwrap();
        assert_eq!(t.events.len(), 1);
        assert!(matches!(unroll_with(ThreadId(1), &lbd, &[], &g, &|_| None), Err(UnrollError::OracleExhausted { at: 0, .. })));
    }

    #[test]
    fn forks_are_closed_and_positioned() {
        let c = parse_cmd("let a = cons(1, 7) in fork([a + 1]_na); FAA_rlx(a, 1)").unwrap();
        let t = unroll_thread(&c, &[1]).unwrap();
        assert_eq!(t.events.len(), 3);
        assert_eq!(t.events[0].mark, Some(Mark::Alloc));
        assert_eq!(t.forks, vec![(2, Cmd::ReadNA(Expr::add(Expr::Value(1000), Expr::Value(1))))]);
        assert_eq!(t.events[2].op, Operation::RmwRlx(UpdateFn::Add(1)));
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![(-3i64..4).prop_map(Expr::Value), prop::sample::select(vec!["x", "y", "a"]).prop_map(Expr::var)];
        leaf.prop_recursive(3, 12, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::add(a, b)),
                (inner.clone(), inner).prop_map(|(a, b)| Expr::eq(a, b)),
            ]
        })
    }

    fn arb_cmd() -> impl Strategy<Value = Cmd> {
        let ops = vec![
            Operation::ReadRlx,
            Operation::ReadAcq,
            Operation::FenceAcq,
            Operation::WriteRel(2),
            Operation::RmwRel(UpdateFn::Add(-1)),
            Operation::RmwAcqRel(UpdateFn::Set(3)),
        ];
        let leaf = prop_oneof![
            arb_expr().prop_map(Cmd::Ret),
            arb_expr().prop_map(Cmd::ReadNA),
            (arb_expr(), arb_expr()).prop_map(|(a, b)| Cmd::WriteNA(a, b)),
            arb_expr().prop_map(Cmd::Free),
            prop::collection::vec(arb_expr(), 1..3).prop_map(Cmd::Cons),
            (prop::sample::select(ops), arb_expr()).prop_map(|(o, e)| Cmd::Op(o, e)),
        ];
        leaf.prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                (arb_expr(), inner.clone()).prop_map(|(e, c)| Cmd::If(e, Box::new(c))),
                (prop::sample::select(vec!["_", "x", "y"]), inner.clone(), inner.clone())
                    .prop_map(|(x, a, b)| Cmd::let_(x, a, b)),
                inner.prop_map(|c| Cmd::Fork(Box::new(c))),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_then_parse_is_identity(c in arb_cmd()) {
            prop_assert_eq!(parse_cmd(&print_cmd(&c)).unwrap(), c);
        }

        #[test]
        fn substitution_agrees_with_environments(e in arb_expr(), x in -3i64..4, y in -3i64..4, a in -3i64..4) {
            let env: BTreeMap<String, Val> = [("x".into(), x), ("y".into(), y), ("a".into(), a)].into_iter().collect();
            let closed = e.subst(x, "x").subst(y, "y").subst(a, "a");
            prop_assert_eq!(closed.closed_value(), Some(e.eval(&env).unwrap()));
        }
    }
}
