//! Prophecy variables and the observation context.
//!
//! A prophecy stands for the value a mutable borrow will hold when it
//! expires. Each prophecy has two exclusive halves: the value observer,
//! which carries the currently agreed value, and the controller, which
//! grants the right to update it. Updating requires both halves; holding
//! two copies of either half is impossible, so producing a duplicate
//! vanishes the path.
//!
//! Observations are propositions about prophecy terms, recorded in their
//! own context rather than the path condition because their truth is
//! settled only when prophecies resolve. A resolution observation
//! equating a prophecy with a prophecy-free value turns into a
//! substitution; observations that become prophecy-free are promoted to
//! ordinary path-condition facts. Consuming an observation never removes
//! it: observed knowledge is persistent.

use crate::solver::{Pc, SatResult, Solver};
use crate::term::{EKind, Expr};
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct PcyEntry {
    /// The value both halves currently agree on.
    pub current: Expr,
    pub observer: bool,
    pub controller: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PcyCtx {
    entries: BTreeMap<String, PcyEntry>,
    /// Observations still mentioning unresolved prophecies.
    obs: Vec<Expr>,
    /// Resolved prophecies, substituted into new and old observations.
    resolved: BTreeMap<String, Expr>,
}

pub type PcyBranches = Vec<(PcyCtx, Pc)>;

impl PcyCtx {
    pub fn new() -> PcyCtx {
        PcyCtx::default()
    }

    pub fn value_of(&self, pcy: &str) -> Option<&Expr> {
        self.entries.get(pcy).map(|e| &e.current)
    }

    pub fn observations(&self) -> &[Expr] {
        &self.obs
    }

    pub fn resolved(&self) -> &BTreeMap<String, Expr> {
        &self.resolved
    }

    /// Both halves of a fresh prophecy agreeing on `init`.
    pub fn create(&self, pcy: &str, init: Expr) -> Result<PcyCtx, String> {
        if self.entries.contains_key(pcy) {
            return Err(format!("prophecy {pcy} already exists"));
        }
        let mut ctx = self.clone();
        ctx.entries.insert(
            pcy.to_string(),
            PcyEntry {
                current: init,
                observer: true,
                controller: true,
            },
        );
        Ok(ctx)
    }

    /// Produce the value observer half carrying value `a`. A second copy
    /// of the half cannot exist; the other half, if present, must agree,
    /// which is learned into the path condition.
    pub fn produce_observer(&self, solver: &Solver, pc: &Pc, pcy: &str, a: Expr) -> PcyBranches {
        let mut ctx = self.clone();
        let mut pc = pc.clone();
        match ctx.entries.get_mut(pcy) {
            Some(e) if e.observer => return Vec::new(),
            Some(e) => {
                pc.assume(Expr::eq(a, e.current.clone()));
                if solver.sat(&pc) == SatResult::Unsat {
                    return Vec::new();
                }
                e.observer = true;
            }
            None => {
                ctx.entries.insert(
                    pcy.to_string(),
                    PcyEntry {
                        current: a,
                        observer: true,
                        controller: false,
                    },
                );
            }
        }
        vec![(ctx, pc)]
    }

    /// Produce the controller half.
    pub fn produce_controller(&self, solver: &Solver, pc: &Pc, pcy: &str, a: Expr) -> PcyBranches {
        let mut ctx = self.clone();
        let mut pc = pc.clone();
        match ctx.entries.get_mut(pcy) {
            Some(e) if e.controller => return Vec::new(),
            Some(e) => {
                pc.assume(Expr::eq(a, e.current.clone()));
                if solver.sat(&pc) == SatResult::Unsat {
                    return Vec::new();
                }
                e.controller = true;
            }
            None => {
                ctx.entries.insert(
                    pcy.to_string(),
                    PcyEntry {
                        current: a,
                        observer: false,
                        controller: true,
                    },
                );
            }
        }
        vec![(ctx, pc)]
    }

    /// Consume the observer half, returning the agreed value.
    pub fn consume_observer(&self, pcy: &str) -> Result<(PcyCtx, Expr), String> {
        let mut ctx = self.clone();
        match ctx.entries.get_mut(pcy) {
            Some(e) if e.observer => {
                e.observer = false;
                let v = e.current.clone();
                if !e.controller {
                    ctx.entries.remove(pcy);
                }
                Ok((ctx, v))
            }
            _ => Err(format!("value observer for {pcy} not held")),
        }
    }

    /// Consume the controller half, returning the agreed value.
    pub fn consume_controller(&self, pcy: &str) -> Result<(PcyCtx, Expr), String> {
        let mut ctx = self.clone();
        match ctx.entries.get_mut(pcy) {
            Some(e) if e.controller => {
                e.controller = false;
                let v = e.current.clone();
                if !e.observer {
                    ctx.entries.remove(pcy);
                }
                Ok((ctx, v))
            }
            _ => Err(format!("controller for {pcy} not held")),
        }
    }

    /// Update the agreed value. Requires both halves.
    pub fn update(&self, pcy: &str, new: Expr) -> Result<PcyCtx, String> {
        let mut ctx = self.clone();
        match ctx.entries.get_mut(pcy) {
            Some(e) if e.observer && e.controller => {
                e.current = new;
                Ok(ctx)
            }
            Some(_) => Err(format!("updating {pcy} requires both halves")),
            None => Err(format!("prophecy {pcy} not held")),
        }
    }

    /// Update the agreed value while the controller half is in transit
    /// during a borrow close: the engine consumed the controller out of the
    /// context and is about to seal it back inside the borrow, so for the
    /// duration of the close it wields both halves even though only the
    /// observer is recorded here.
    pub fn update_closed(&self, pcy: &str, new: Expr) -> Result<PcyCtx, String> {
        let mut ctx = self.clone();
        match ctx.entries.get_mut(pcy) {
            Some(e) if e.observer && !e.controller => {
                e.current = new;
                Ok(ctx)
            }
            Some(e) if e.controller => {
                Err(format!("controller for {pcy} is not sealed inside a borrow"))
            }
            _ => Err(format!("prophecy {pcy} not held")),
        }
    }

    /// Substitute resolved prophecies into an expression.
    pub fn apply_resolutions(&self, e: &Expr) -> Expr {
        if self.resolved.is_empty() {
            return e.clone();
        }
        e.subst_proph(&self.resolved)
    }

    /// Record an observation. Prophecy-free conjuncts are promoted to the
    /// path condition; a resolution equation becomes a substitution; an
    /// observation inconsistent with what is already known vanishes the
    /// path.
    pub fn observe(&self, solver: &Solver, pc: &Pc, o: Expr) -> PcyBranches {
        let mut ctx = self.clone();
        let mut pc = pc.clone();
        if !ctx.observe_in_place(&mut pc, o) {
            return Vec::new();
        }
        if solver.sat(&ctx.with_observations(&pc)) == SatResult::Unsat {
            return Vec::new();
        }
        vec![(ctx, pc)]
    }

    fn observe_in_place(&mut self, pc: &mut Pc, o: Expr) -> bool {
        let o = self.apply_resolutions(&o);
        if let EKind::And(parts) = o.kind() {
            let parts = parts.clone();
            return parts.into_iter().all(|p| self.observe_in_place(pc, p));
        }
        if o == Expr::bool_(false) {
            return false;
        }
        if !o.has_proph() {
            pc.assume(o);
            return true;
        }
        // A resolution: the prophecy equals a prophecy-free value.
        if let EKind::Eq(a, b) = o.kind() {
            let (pcy, val) = match (a.kind(), b.kind()) {
                (EKind::Proph(x, _), _) if !b.has_proph() => (x.clone(), b.clone()),
                (_, EKind::Proph(x, _)) if !a.has_proph() => (x.clone(), a.clone()),
                _ => (String::new(), Expr::bool_(false)),
            };
            if !pcy.is_empty() {
                let mut m = BTreeMap::new();
                m.insert(pcy.clone(), val.clone());
                // Rewrite held observations; promote any that became free.
                let old = std::mem::take(&mut self.obs);
                self.resolved.insert(pcy, val);
                for oo in old {
                    let oo = oo.subst_proph(&m);
                    if !self.observe_in_place(pc, oo) {
                        return false;
                    }
                }
                return true;
            }
        }
        self.obs.push(o);
        true
    }

    /// The path condition extended with all held observations and all
    /// resolution equations. Resolutions are substituted into expressions
    /// the engine sees directly, but a prophecy can also hide behind a path
    /// variable (a pc equation mentioning it); stating the resolution as a
    /// fact reaches those occurrences too.
    pub fn with_observations(&self, pc: &Pc) -> Pc {
        let mut out = pc.clone();
        for o in &self.obs {
            out.assume(o.clone());
        }
        for (x, v) in &self.resolved {
            out.assume(Expr::eq(Expr::proph(x.clone(), v.sort()), v.clone()));
        }
        out
    }

    /// Check an observation against what is known. Persistent, so nothing
    /// is removed.
    pub fn entails_observation(&self, solver: &Solver, pc: &Pc, o: &Expr) -> bool {
        let o = self.apply_resolutions(o);
        solver.entails(&self.with_observations(pc), &o)
    }

    /// Whether the path condition and observations are mutually
    /// consistent. A panic on an inconsistent path is unreachable and may
    /// be pruned; on a consistent path it is a real defect.
    pub fn consistent(&self, solver: &Solver, pc: &Pc) -> SatResult {
        solver.sat(&self.with_observations(pc))
    }
}

impl fmt::Display for PcyCtx {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (x, e) in &self.entries {
            let halves = match (e.observer, e.controller) {
                (true, true) => "obs+ctl",
                (true, false) => "obs",
                (false, true) => "ctl",
                (false, false) => "none",
            };
            writeln!(f, "pcy {x} [{halves}] = {}", e.current)?;
        }
        for o in &self.obs {
            writeln!(f, "<{o}>")?;
        }
        for (x, v) in &self.resolved {
            writeln!(f, "^{x} := {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Options;
    use crate::term::Sort;

    fn setup() -> (Solver, Pc) {
        (Solver::new(&Options::default()), Pc::new())
    }

    #[test]
    fn update_requires_both_halves() {
        let (_, _) = setup();
        let ctx = PcyCtx::new().create("x", Expr::int(1)).unwrap();
        let ctx = ctx.update("x", Expr::int(2)).unwrap();
        assert_eq!(ctx.value_of("x"), Some(&Expr::int(2)));
        let (ctx, v) = ctx.consume_controller("x").unwrap();
        assert_eq!(v, Expr::int(2));
        assert!(ctx.update("x", Expr::int(3)).is_err());
    }

    #[test]
    fn duplicate_halves_vanish() {
        let (solver, pc) = setup();
        let ctx = PcyCtx::new().create("x", Expr::int(1)).unwrap();
        assert!(ctx
            .produce_observer(&solver, &pc, "x", Expr::int(1))
            .is_empty());
        assert!(ctx
            .produce_controller(&solver, &pc, "x", Expr::int(1))
            .is_empty());
    }

    #[test]
    fn halves_agree_on_rejoin() {
        let (solver, pc) = setup();
        let ctx = PcyCtx::new().create("x", Expr::int(5)).unwrap();
        let (ctx, _) = ctx.consume_observer("x").unwrap();
        // Producing the half back with a symbolic value teaches agreement.
        let a = Expr::var("a", Sort::Int);
        let (ctx, pc) = ctx
            .produce_observer(&solver, &pc, "x", a.clone())
            .remove(0);
        assert!(solver.entails_eq(&pc, &a, &Expr::int(5)));
        // Disagreeing values make the state impossible.
        let (ctx2, _) = ctx.consume_observer("x").unwrap();
        assert!(ctx2
            .produce_observer(&solver, &pc, "x", Expr::int(6))
            .is_empty());
    }

    #[test]
    fn resolution_becomes_substitution() {
        let (solver, pc) = setup();
        let ctx = PcyCtx::new();
        let px = Expr::proph("x", Sort::Int);
        // An observation about an unresolved prophecy is held, not promoted.
        let (ctx, pc) = ctx
            .observe(&solver, &pc, Expr::le(Expr::int(3), px.clone()))
            .remove(0);
        assert_eq!(ctx.observations().len(), 1);
        assert!(pc.facts().is_empty());
        // Resolving the prophecy promotes the held observation.
        let (ctx, pc) = ctx
            .observe(&solver, &pc, Expr::eq(px.clone(), Expr::int(7)))
            .remove(0);
        assert!(ctx.observations().is_empty());
        assert!(solver.entails(&pc, &Expr::bool_(true)));
        assert_eq!(ctx.resolved().get("x"), Some(&Expr::int(7)));
        // Later mentions of the prophecy are rewritten.
        assert!(ctx.entails_observation(&solver, &pc, &Expr::le(px, Expr::int(7))));
    }

    #[test]
    fn contradictory_observation_vanishes() {
        let (solver, pc) = setup();
        let ctx = PcyCtx::new();
        let px = Expr::proph("x", Sort::Int);
        let (ctx, pc) = ctx
            .observe(&solver, &pc, Expr::le(Expr::int(10), px.clone()))
            .remove(0);
        assert!(ctx
            .observe(&solver, &pc, Expr::eq(px, Expr::int(3)))
            .is_empty());
    }

    #[test]
    fn panic_consistency_distinguishes_paths() {
        let (solver, pc) = setup();
        let ctx = PcyCtx::new();
        let px = Expr::proph("x", Sort::Int);
        let (ctx, pc) = ctx
            .observe(&solver, &pc, Expr::lt(px.clone(), Expr::int(5)))
            .remove(0);
        // Consistent: the prophecy may still be below five.
        assert_ne!(ctx.consistent(&solver, &pc), SatResult::Unsat);
        // An impossible combination prunes the panic path.
        let mut pc2 = pc.clone();
        pc2.assume(Expr::le(Expr::int(5), px.clone()));
        let branches = ctx.observe(&solver, &pc2, Expr::lt(px, Expr::int(4)));
        assert!(branches.is_empty());
        assert_eq!(ctx.consistent(&solver, &pc2), SatResult::Unsat);
    }

    #[test]
    fn observations_are_persistent_and_monotone() {
        let (solver, pc) = setup();
        let ctx = PcyCtx::new();
        let px = Expr::proph("x", Sort::Int);
        let o1 = Expr::le(Expr::int(0), px.clone());
        let (ctx, pc) = ctx.observe(&solver, &pc, o1.clone()).remove(0);
        assert!(ctx.entails_observation(&solver, &pc, &o1));
        let o2 = Expr::le(px.clone(), Expr::int(9));
        let (ctx, pc) = ctx.observe(&solver, &pc, o2.clone()).remove(0);
        // Earlier knowledge survives later observations.
        assert!(ctx.entails_observation(&solver, &pc, &o1));
        assert!(ctx.entails_observation(&solver, &pc, &o2));
    }
}
