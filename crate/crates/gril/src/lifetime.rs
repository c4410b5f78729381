//! Lifetime tokens: fractional alive tokens and persistent death
//! certificates.
//!
//! A lifetime is either alive, with the state holding some fraction
//! `0 < q <= 1` of its token, or ended. Ending requires the whole token;
//! once ended, the death certificate is duplicable knowledge. Holding any
//! alive fraction of an ended lifetime is contradictory, so producing one
//! onto a dead lifetime vanishes the path, and vice versa.
//!
//! Fractions are real-sorted terms; splits and joins are symbolic, with
//! validity (`q <= 1`) learned as a path-condition fact on production.

use crate::solver::{Pc, SatResult, Solver};
use crate::term::Expr;
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum LftState {
    /// The held fraction of the token.
    Alive(Expr),
    Dead,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LftCtx {
    entries: BTreeMap<Expr, LftState>,
}

/// Outcome of a lifetime operation on one branch; an empty branch list
/// means the resource combination is impossible and the path vanishes.
pub type LftBranches = Vec<(LftCtx, Pc)>;

impl LftCtx {
    pub fn new() -> LftCtx {
        LftCtx::default()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Expr, &LftState)> {
        self.entries.iter()
    }

    /// Canonical key for a lifetime: exact match first, then a
    /// path-condition-equal entry.
    fn find(&self, solver: &Solver, pc: &Pc, lft: &Expr) -> Option<Expr> {
        if self.entries.contains_key(lft) {
            return Some(lft.clone());
        }
        self.entries
            .keys()
            .find(|k| solver.entails_eq(pc, k, lft))
            .cloned()
    }

    pub fn state_of(&self, solver: &Solver, pc: &Pc, lft: &Expr) -> Option<&LftState> {
        let key = self.find(solver, pc, lft)?;
        self.entries.get(&key)
    }

    /// Produce an alive fraction `q` of the token for `lft`. Joins with any
    /// fraction already held; the combined fraction being a valid token
    /// (`0 < q' <= 1`) is learned into the path condition.
    pub fn produce_alive(&self, solver: &Solver, pc: &Pc, lft: &Expr, q: Expr) -> LftBranches {
        let mut pc = pc.clone();
        pc.assume(Expr::lt(Expr::real(0, 1), q.clone()));
        pc.assume(Expr::le(q.clone(), Expr::real(1, 1)));
        let key = self.find(solver, &pc, lft).unwrap_or_else(|| lft.clone());
        let mut ctx = self.clone();
        match ctx.entries.get(&key) {
            Some(LftState::Dead) => return Vec::new(),
            Some(LftState::Alive(held)) => {
                let total = Expr::add(held.clone(), q);
                pc.assume(Expr::le(total.clone(), Expr::real(1, 1)));
                ctx.entries.insert(key, LftState::Alive(total));
            }
            None => {
                ctx.entries.insert(key, LftState::Alive(q));
            }
        }
        if solver.sat(&pc) == SatResult::Unsat {
            return Vec::new();
        }
        vec![(ctx, pc)]
    }

    /// Consume an exact fraction `q` from the held token. The held
    /// fraction must provably cover `q`; what remains stays in the
    /// context, and a provably-zero remainder drops the entry.
    pub fn consume_alive(
        &self,
        solver: &Solver,
        pc: &Pc,
        lft: &Expr,
        q: &Expr,
    ) -> Result<LftCtx, String> {
        let key = match self.find(solver, pc, lft) {
            Some(k) => k,
            None => return Err(format!("no alive token held for {lft}")),
        };
        let mut ctx = self.clone();
        match ctx.entries.get(&key) {
            Some(LftState::Dead) => Err(format!("lifetime {lft} already ended")),
            Some(LftState::Alive(held)) => {
                if !solver.entails(pc, &Expr::le(q.clone(), held.clone())) {
                    return Err(format!(
                        "held fraction of {lft} does not provably cover the requested amount"
                    ));
                }
                let rest = Expr::sub(held.clone(), q.clone());
                if solver.entails_eq(pc, &rest, &Expr::real(0, 1)) {
                    ctx.entries.remove(&key);
                } else {
                    ctx.entries.insert(key, LftState::Alive(rest));
                }
                Ok(ctx)
            }
            None => unreachable!(),
        }
    }

    /// Consume whatever fraction is held, returning it. Used when a
    /// specification binds the fraction rather than fixing it.
    pub fn consume_alive_all(
        &self,
        solver: &Solver,
        pc: &Pc,
        lft: &Expr,
    ) -> Result<(LftCtx, Expr), String> {
        let key = match self.find(solver, pc, lft) {
            Some(k) => k,
            None => return Err(format!("no alive token held for {lft}")),
        };
        let mut ctx = self.clone();
        match ctx.entries.remove(&key) {
            Some(LftState::Alive(held)) => Ok((ctx, held)),
            Some(LftState::Dead) => Err(format!("lifetime {lft} already ended")),
            None => unreachable!(),
        }
    }

    /// End a lifetime: requires the whole token, leaves the death
    /// certificate.
    pub fn end_lifetime(&self, solver: &Solver, pc: &Pc, lft: &Expr) -> Result<LftCtx, String> {
        let key = match self.find(solver, pc, lft) {
            Some(k) => k,
            None => return Err(format!("no token held for {lft}")),
        };
        let mut ctx = self.clone();
        match ctx.entries.get(&key) {
            Some(LftState::Dead) => Err(format!("lifetime {lft} already ended")),
            Some(LftState::Alive(held)) => {
                if !solver.entails_eq(pc, held, &Expr::real(1, 1)) {
                    return Err(format!(
                        "ending {lft} requires the whole token, held fraction is {held}"
                    ));
                }
                ctx.entries.insert(key, LftState::Dead);
                Ok(ctx)
            }
            None => unreachable!(),
        }
    }

    /// Produce the death certificate. Contradicts any held alive fraction.
    pub fn produce_dead(&self, solver: &Solver, pc: &Pc, lft: &Expr) -> LftBranches {
        let key = self.find(solver, pc, lft).unwrap_or_else(|| lft.clone());
        let mut ctx = self.clone();
        match ctx.entries.get(&key) {
            Some(LftState::Alive(_)) => Vec::new(),
            _ => {
                ctx.entries.insert(key, LftState::Dead);
                vec![(ctx, pc.clone())]
            }
        }
    }

    /// Check the death certificate. Persistent: consuming never removes it.
    pub fn consume_dead(&self, solver: &Solver, pc: &Pc, lft: &Expr) -> Result<(), String> {
        match self.state_of(solver, pc, lft) {
            Some(LftState::Dead) => Ok(()),
            Some(LftState::Alive(_)) => Err(format!("lifetime {lft} is still alive")),
            None => Err(format!("no death certificate for {lft}")),
        }
    }
}

impl fmt::Display for LftCtx {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (lft, st) in &self.entries {
            match st {
                LftState::Alive(q) => writeln!(f, "[{lft}]_{q}")?,
                LftState::Dead => writeln!(f, "[dead {lft}]")?,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Options;

    fn setup() -> (Solver, Expr, Pc) {
        (
            Solver::new(&Options::default()),
            Expr::lft("a"),
            Pc::new(),
        )
    }

    #[test]
    fn split_and_rejoin_full_token() {
        let (solver, k, pc) = setup();
        let ctx = LftCtx::new();
        let (ctx, pc) = ctx
            .produce_alive(&solver, &pc, &k, Expr::real(1, 2))
            .remove(0);
        let (ctx, pc) = ctx
            .produce_alive(&solver, &pc, &k, Expr::real(1, 2))
            .remove(0);
        // The halves joined into the whole token, so ending succeeds.
        let ctx = ctx.end_lifetime(&solver, &pc, &k).unwrap();
        assert!(ctx.consume_dead(&solver, &pc, &k).is_ok());
    }

    #[test]
    fn ending_with_partial_token_fails() {
        let (solver, k, pc) = setup();
        let ctx = LftCtx::new();
        let (ctx, pc) = ctx
            .produce_alive(&solver, &pc, &k, Expr::real(2, 3))
            .remove(0);
        assert!(ctx.end_lifetime(&solver, &pc, &k).is_err());
    }

    #[test]
    fn overfull_token_vanishes() {
        let (solver, k, pc) = setup();
        let ctx = LftCtx::new();
        let (ctx, pc) = ctx
            .produce_alive(&solver, &pc, &k, Expr::real(3, 4))
            .remove(0);
        // 3/4 + 1/2 > 1: no valid state holds both.
        assert!(ctx
            .produce_alive(&solver, &pc, &k, Expr::real(1, 2))
            .is_empty());
    }

    #[test]
    fn alive_after_death_vanishes() {
        let (solver, k, pc) = setup();
        let ctx = LftCtx::new();
        let (ctx, pc) = ctx
            .produce_alive(&solver, &pc, &k, Expr::real(1, 1))
            .remove(0);
        let ctx = ctx.end_lifetime(&solver, &pc, &k).unwrap();
        assert!(ctx
            .produce_alive(&solver, &pc, &k, Expr::real(1, 4))
            .is_empty());
        // The certificate is persistent.
        assert!(ctx.consume_dead(&solver, &pc, &k).is_ok());
        assert!(ctx.consume_dead(&solver, &pc, &k).is_ok());
    }

    #[test]
    fn consume_exact_fraction_leaves_rest() {
        let (solver, k, pc) = setup();
        let ctx = LftCtx::new();
        let (ctx, pc) = ctx
            .produce_alive(&solver, &pc, &k, Expr::real(1, 1))
            .remove(0);
        let ctx = ctx
            .consume_alive(&solver, &pc, &k, &Expr::real(1, 3))
            .unwrap();
        // 2/3 remains: consuming 2/3 exactly empties the entry.
        let ctx = ctx
            .consume_alive(&solver, &pc, &k, &Expr::real(2, 3))
            .unwrap();
        assert!(ctx.is_empty());
    }

    #[test]
    fn symbolic_fraction_roundtrip() {
        let (solver, k, pc) = setup();
        let q = Expr::var("q", crate::term::Sort::Real);
        let ctx = LftCtx::new();
        let (ctx, pc) = ctx.produce_alive(&solver, &pc, &k, q.clone()).remove(0);
        // Production taught us 0 < q <= 1.
        assert!(solver.entails(&pc, &Expr::le(q.clone(), Expr::real(1, 1))));
        let (ctx, got) = ctx.consume_alive_all(&solver, &pc, &k).unwrap();
        assert_eq!(got, q);
        assert!(ctx.is_empty());
    }

    #[test]
    fn distinct_lifetimes_do_not_interfere() {
        let (solver, ka, pc) = setup();
        let kb = Expr::lft("b");
        let ctx = LftCtx::new();
        let (ctx, pc) = ctx
            .produce_alive(&solver, &pc, &ka, Expr::real(1, 1))
            .remove(0);
        let (ctx, pc) = ctx
            .produce_alive(&solver, &pc, &kb, Expr::real(1, 1))
            .remove(0);
        let ctx = ctx.end_lifetime(&solver, &pc, &ka).unwrap();
        assert!(ctx.consume_dead(&solver, &pc, &kb).is_err());
        assert!(matches!(
            ctx.state_of(&solver, &pc, &kb),
            Some(LftState::Alive(_))
        ));
    }
}
