//! The composite symbolic state: heap, lifetime context, guarded
//! predicate context, prophecy context (which carries the observation
//! context), and the path condition.
//!
//! Branching operations clone the state per branch. Fresh-name counters
//! are part of the state, so sibling branches may reuse names; within one
//! path every fresh name is distinct.

use std::fmt;

use crate::heap::Heap;
use crate::lifetime::LftCtx;
use crate::prophecy::PcyCtx;
use crate::preds::PredCtx;
use crate::solver::{Pc, SatResult, Solver};
use crate::term::{Expr, Sort};

#[derive(Debug, Clone, Default)]
pub struct SymState {
    pub heap: Heap,
    pub lft: LftCtx,
    pub pcy: PcyCtx,
    pub preds: PredCtx,
    pub pc: Pc,
    fresh: u64,
}

impl SymState {
    pub fn new() -> SymState {
        SymState::default()
    }

    /// A fresh name. The `%` separator cannot appear in source
    /// identifiers, so fresh names never collide with binders.
    pub fn fresh_name(&mut self, hint: &str) -> String {
        let n = self.fresh;
        self.fresh += 1;
        let hint = hint.split('%').next().unwrap_or(hint);
        format!("{hint}%{n}")
    }

    /// A fresh symbolic variable.
    pub fn fresh_var(&mut self, hint: &str, sort: Sort) -> Expr {
        Expr::var(self.fresh_name(hint), sort)
    }

    /// A fresh prophecy variable name.
    pub fn fresh_pcy(&mut self, hint: &str) -> String {
        self.fresh_name(hint)
    }

    pub fn assume(&mut self, e: Expr) {
        self.pc.assume(e);
    }

    /// Path-condition satisfiability including held observations.
    pub fn consistent(&self, solver: &Solver) -> SatResult {
        self.pcy.consistent(solver, &self.pc)
    }

    /// Whether the path condition alone is already unsatisfiable.
    pub fn pruned(&self, solver: &Solver) -> bool {
        solver.sat(&self.pc) == SatResult::Unsat
    }

    pub fn entails(&self, solver: &Solver, e: &Expr) -> bool {
        solver.entails(&self.pc, e)
    }

    /// Whether every resource component is empty (pure states pass).
    pub fn is_resource_empty(&self) -> bool {
        self.heap.is_empty() && self.lft.is_empty() && self.preds.is_empty()
    }
}

impl fmt::Display for SymState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "heap:")?;
        write!(f, "{}", self.heap)?;
        writeln!(f, "lifetimes:")?;
        write!(f, "{}", self.lft)?;
        writeln!(f, "prophecies:")?;
        write!(f, "{}", self.pcy)?;
        writeln!(f, "predicates:")?;
        write!(f, "{}", self.preds)?;
        writeln!(f, "pc:")?;
        for e in self.pc.facts() {
            writeln!(f, "  {e}")?;
        }
        Ok(())
    }
}
