//! User predicate definitions and the guarded predicate context.
//!
//! A folded predicate instance is an entry `(name, guard, args)`. A `None`
//! guard is an ordinary folded predicate; a `Some(κ)` guard is a full
//! borrow whose opening costs a fraction of κ's lifetime token and yields
//! an opaque closing token. Entries keep insertion order so matching and
//! diagnostics are deterministic.

use std::collections::BTreeMap;
use std::fmt;

use crate::asn::{Asn, Binder};
use crate::solver::{Pc, Solver};
use crate::term::{EKind, Expr, LocRef};

/// How a predicate may be used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredKind {
    /// Ordinary foldable predicate.
    Plain,
    /// May appear as a guarded entry (a full borrow body).
    Borrow,
    /// No definition; only direct entry matching applies.
    Abstract,
}

/// A predicate definition. Parameters listed in `ins` must determine every
/// other parameter in each disjunct (ins-to-outs dataflow); consumers match
/// entries on the ins and learn the outs.
#[derive(Debug, Clone, PartialEq)]
pub struct PredDef {
    pub name: String,
    pub params: Vec<Binder>,
    pub ins: Vec<usize>,
    pub kind: PredKind,
    pub disjuncts: Vec<Asn>,
    /// Producing the predicate expands its definition instead of adding a
    /// folded entry. Used by mutable-reference ownership, whose production
    /// must mint the fresh prophecy immediately.
    pub expand_on_produce: bool,
}

impl PredDef {
    pub fn new(name: impl Into<String>, params: Vec<Binder>, ins: Vec<usize>) -> PredDef {
        PredDef {
            name: name.into(),
            params,
            ins,
            kind: PredKind::Plain,
            disjuncts: Vec::new(),
            expand_on_produce: false,
        }
    }

    pub fn outs(&self) -> Vec<usize> {
        (0..self.params.len())
            .filter(|i| !self.ins.contains(i))
            .collect()
    }

    pub fn is_abstract(&self) -> bool {
        self.kind == PredKind::Abstract
    }

    /// The parameter-to-argument substitution for instantiating a disjunct.
    pub fn param_map(&self, args: &[Expr]) -> BTreeMap<String, Expr> {
        self.params
            .iter()
            .zip(args.iter())
            .map(|(b, a)| (b.name.clone(), a.clone()))
            .collect()
    }
}

/// Table of predicate definitions, keyed by name.
pub type PredTable = BTreeMap<String, PredDef>;

/// One folded (possibly guarded) predicate instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PredEntry {
    pub name: String,
    pub guard: Option<Expr>,
    pub args: Vec<Expr>,
}

/// Opaque closing token minted by a guarded unfold; single-use.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosingToken {
    pub pred: String,
    pub lft: Expr,
    pub frac: Expr,
    pub args: Vec<Expr>,
}

/// The guarded predicate context: folded entries plus outstanding closing
/// tokens.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredCtx {
    entries: Vec<PredEntry>,
    tokens: Vec<ClosingToken>,
}

impl PredCtx {
    pub fn new() -> PredCtx {
        PredCtx::default()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty() && self.tokens.is_empty()
    }

    pub fn entries(&self) -> &[PredEntry] {
        &self.entries
    }

    pub fn tokens(&self) -> &[ClosingToken] {
        &self.tokens
    }

    pub fn add_entry(&mut self, name: impl Into<String>, guard: Option<Expr>, args: Vec<Expr>) {
        self.entries.push(PredEntry {
            name: name.into(),
            guard,
            args,
        });
    }

    pub fn remove_entry(&mut self, idx: usize) -> PredEntry {
        self.entries.remove(idx)
    }

    pub fn add_token(&mut self, tok: ClosingToken) {
        self.tokens.push(tok);
    }

    pub fn remove_token(&mut self, idx: usize) -> ClosingToken {
        self.tokens.remove(idx)
    }

    /// First entry matching `name`, the guard, and the given argument
    /// positions under provable equality. `guard: None` matches only
    /// unguarded entries; `Some(κ)` only entries guarded by a lifetime
    /// provably equal to κ.
    pub fn find_entry(
        &self,
        solver: &Solver,
        pc: &Pc,
        name: &str,
        guard: Option<&Expr>,
        fixed: &[(usize, Expr)],
    ) -> Option<usize> {
        self.entries.iter().position(|e| {
            if e.name != name {
                return false;
            }
            match (guard, &e.guard) {
                (None, None) => {}
                (Some(k), Some(k2)) => {
                    if !solver.entails_eq(pc, k, k2) {
                        return false;
                    }
                }
                _ => return false,
            }
            fixed.iter().all(|(i, a)| {
                e.args
                    .get(*i)
                    .is_some_and(|b| solver.entails_eq(pc, a, b))
            })
        })
    }

    /// First token for `pred` under `lft`, matched by provable equality.
    pub fn find_token(&self, solver: &Solver, pc: &Pc, pred: &str, lft: &Expr) -> Option<usize> {
        self.tokens
            .iter()
            .position(|t| t.pred == pred && solver.entails_eq(pc, lft, &t.lft))
    }

    /// Any token guarding the given lifetime, regardless of predicate.
    pub fn find_token_for_lft(&self, solver: &Solver, pc: &Pc, lft: &Expr) -> Option<usize> {
        self.tokens
            .iter()
            .position(|t| solver.entails_eq(pc, lft, &t.lft))
    }

    /// Indices of entries whose arguments mention any of the given heap
    /// locations, in insertion order. Drives the auto-unfold heuristics.
    pub fn entries_reaching(&self, locs: &[LocRef]) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.args.iter().any(|a| mentions_any_loc(a, locs)))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Whether the expression contains a pointer term rooted at one of `locs`.
pub fn mentions_any_loc(e: &Expr, locs: &[LocRef]) -> bool {
    if let EKind::Ptr(l, _) = e.kind() {
        if locs.contains(l) {
            return true;
        }
    }
    e.children().iter().any(|c| mentions_any_loc(c, locs))
}

/// Collect the locations of all pointer terms in the expression.
pub fn collect_locs(e: &Expr, out: &mut Vec<LocRef>) {
    if let EKind::Ptr(l, _) = e.kind() {
        if !out.contains(l) {
            out.push(l.clone());
        }
    }
    for c in e.children() {
        collect_locs(&c, out);
    }
}

impl fmt::Display for PredEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.guard {
            Some(k) => write!(f, "&{k} {}(", self.name)?,
            None => write!(f, "{}(", self.name)?,
        }
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

impl fmt::Display for PredCtx {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(f, "  {e}")?;
        }
        for t in &self.tokens {
            write!(f, "  closing({}, {}, {}; ", t.pred, t.lft, t.frac)?;
            for (i, a) in t.args.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{a}")?;
            }
            writeln!(f, ")")?;
        }
        Ok(())
    }
}
