//! Path-condition solver.
//!
//! The pipeline is: normalization (constructor folding, guarded sequence
//! rewrites, remainder reduction), variable elimination into a solved
//! substitution, ground rewriting for residual equalities, linear integer
//! and rational arithmetic over uninterpreted atoms (Gaussian elimination,
//! interval propagation, Fourier-Motzkin with integer tightening), and
//! finally bounded case splits on disjunctions, option and boolean
//! variables, length-bounded sequences, and small integer intervals.
//!
//! `Unsat` answers are always backed by a derived contradiction. `Sat` is
//! liberal: "no contradiction found". That asymmetry keeps verification
//! sound; an over-eager `Sat` can only produce a spurious verification
//! failure, never a spurious success.
//!
//! Sequence semantics are total: out-of-range `at` yields the element
//! sort's default value, and out-of-range `update` leaves the sequence
//! unchanged. Every rewrite below preserves that total semantics.

use crate::config::{Options, SolverChoice};
use crate::term::{EKind, Expr, Sort};
use crate::types::Ty;
use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::rc::Rc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SatResult {
    Sat,
    Unsat,
    Unknown,
}

impl fmt::Display for SatResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SatResult::Sat => write!(f, "sat"),
            SatResult::Unsat => write!(f, "unsat"),
            SatResult::Unknown => write!(f, "unknown"),
        }
    }
}

/// Strongest provable order relation between two integer expressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
    Unknown,
}

/// A path condition: a conjunction of boolean facts, insertion-ordered.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Pc {
    facts: Vec<Expr>,
}

impl Pc {
    pub fn new() -> Pc {
        Pc::default()
    }

    pub fn assume(&mut self, e: Expr) {
        match e.kind() {
            EKind::BoolLit(true) => {}
            EKind::And(parts) => {
                for p in parts.clone() {
                    self.assume(p);
                }
            }
            _ => {
                if !self.facts.contains(&e) {
                    self.facts.push(e);
                }
            }
        }
    }

    pub fn facts(&self) -> &[Expr] {
        &self.facts
    }

    /// Whether `false` is literally among the facts.
    pub fn has_false(&self) -> bool {
        self.facts.iter().any(|f| f.as_bool_lit() == Some(false))
    }

    pub fn with(&self, e: Expr) -> Pc {
        let mut pc = self.clone();
        pc.assume(e);
        pc
    }
}

impl fmt::Display for Pc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.facts.is_empty() {
            return write!(f, "true");
        }
        for (i, e) in self.facts.iter().enumerate() {
            if i > 0 {
                write!(f, " /\\ ")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Linear combinations over uninterpreted atoms
// ---------------------------------------------------------------------------

/// `k + sum(coeff * atom)`. Denominators are cleared during construction,
/// so a `Lin` compared against zero is exact for both ints and rationals.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Lin {
    k: i128,
    terms: BTreeMap<Expr, i128>,
    /// Whether every atom is integer-sorted (enables integer tightening).
    int: bool,
}

impl Lin {
    fn constant(k: i128, int: bool) -> Lin {
        Lin {
            k,
            terms: BTreeMap::new(),
            int,
        }
    }

    fn atom(a: Expr, int: bool) -> Lin {
        let mut terms = BTreeMap::new();
        terms.insert(a, 1);
        Lin { k: 0, terms, int }
    }

    fn is_const(&self) -> bool {
        self.terms.is_empty()
    }

    fn add_term(&mut self, a: Expr, c: i128) {
        if c == 0 {
            return;
        }
        let entry = self.terms.entry(a).or_insert(0);
        *entry += c;
        if *entry == 0 {
            let key = self
                .terms
                .iter()
                .find(|(_, v)| **v == 0)
                .map(|(k, _)| k.clone());
            if let Some(k) = key {
                self.terms.remove(&k);
            }
        }
    }

    fn add(&self, other: &Lin) -> Option<Lin> {
        let mut out = self.clone();
        out.int = self.int && other.int;
        out.k = out.k.checked_add(other.k)?;
        for (a, c) in &other.terms {
            out.add_term(a.clone(), *c);
        }
        Some(out)
    }

    fn scale(&self, c: i128) -> Option<Lin> {
        let mut out = Lin::constant(self.k.checked_mul(c)?, self.int);
        for (a, co) in &self.terms {
            out.add_term(a.clone(), co.checked_mul(c)?);
        }
        Some(out)
    }

    fn sub(&self, other: &Lin) -> Option<Lin> {
        self.add(&other.scale(-1)?)
    }

    /// Divide all coefficients by their gcd; tighten the constant for ints.
    /// Applies to a `<= 0` constraint.
    fn tighten_le(&mut self) {
        if self.terms.is_empty() {
            return;
        }
        let mut g: i128 = 0;
        for c in self.terms.values() {
            g = gcd_i(g, *c);
        }
        if g > 1 {
            for c in self.terms.values_mut() {
                *c /= g;
            }
            // sum + k <= 0 with original coeffs g*ci: g*s + k <= 0
            // => s <= floor(-k / g) => s - floor(-k/g) <= 0
            if self.int {
                self.k = -div_floor(-self.k, g);
            } else {
                // Rational: exact scaling is fine; keep k/g rounded safely
                // only when divisible, otherwise leave untightened.
                if self.k % g == 0 {
                    self.k /= g;
                } else {
                    // Undo coefficient division to stay exact.
                    for c in self.terms.values_mut() {
                        *c *= g;
                    }
                }
            }
        }
    }

    fn to_expr(&self) -> Expr {
        let mut acc = Expr::int(self.k);
        for (a, c) in &self.terms {
            let t = if *c == 1 {
                a.clone()
            } else {
                Expr::mul(Expr::int(*c), a.clone())
            };
            acc = Expr::add(acc, t);
        }
        acc
    }
}

fn gcd_i(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

fn div_floor(a: i128, b: i128) -> i128 {
    let q = a / b;
    if (a % b != 0) && ((a < 0) != (b < 0)) {
        q - 1
    } else {
        q
    }
}

fn div_ceil(a: i128, b: i128) -> i128 {
    let q = a / b;
    if (a % b != 0) && ((a < 0) == (b < 0)) {
        q + 1
    } else {
        q
    }
}

// ---------------------------------------------------------------------------
// Intervals
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Itv {
    lo: Option<i128>,
    hi: Option<i128>,
}

impl Itv {
    const TOP: Itv = Itv { lo: None, hi: None };

    fn empty(&self) -> bool {
        matches!((self.lo, self.hi), (Some(l), Some(h)) if l > h)
    }

    fn meet(&self, other: &Itv) -> Itv {
        Itv {
            lo: opt_max(self.lo, other.lo),
            hi: opt_min(self.hi, other.hi),
        }
    }

    fn singleton(&self) -> Option<i128> {
        match (self.lo, self.hi) {
            (Some(l), Some(h)) if l == h => Some(l),
            _ => None,
        }
    }
}

fn opt_max(a: Option<i128>, b: Option<i128>) -> Option<i128> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

fn opt_min(a: Option<i128>, b: Option<i128>) -> Option<i128> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

// ---------------------------------------------------------------------------
// Solver
// ---------------------------------------------------------------------------

pub struct Solver {
    seq_depth: u32,
    node_budget: u64,
    smt_cmd: Option<String>,
}

impl Solver {
    pub fn new(opts: &Options) -> Solver {
        let smt_cmd = match &opts.solver {
            SolverChoice::Builtin => None,
            SolverChoice::SmtLib(cmd) => Some(cmd.clone()),
        };
        Solver {
            seq_depth: opts.seq_depth,
            node_budget: 60_000,
            smt_cmd,
        }
    }

    pub fn sat(&self, pc: &Pc) -> SatResult {
        if let Some(cmd) = &self.smt_cmd {
            if pc.facts().iter().all(smt::translatable) {
                if let Some(r) = smt::query(cmd, pc.facts()) {
                    return r;
                }
            }
        }
        let budget = Rc::new(Cell::new(self.node_budget));
        let mut ctx = Ctx::new(self, budget);
        for f in pc.facts() {
            ctx.facts.push(f.clone());
        }
        ctx.solve()
    }

    /// Whether `pc` entails `goal`: `pc /\ !goal` is unsatisfiable.
    pub fn entails(&self, pc: &Pc, goal: &Expr) -> bool {
        if goal.as_bool_lit() == Some(true) {
            return true;
        }
        self.sat(&pc.with(Expr::not(goal.clone()))) == SatResult::Unsat
    }

    pub fn entails_eq(&self, pc: &Pc, a: &Expr, b: &Expr) -> bool {
        let e = Expr::eq(a.clone(), b.clone());
        self.entails(pc, &e)
    }

    /// Strongest provable comparison between integer expressions.
    pub fn compare(&self, pc: &Pc, a: &Expr, b: &Expr) -> Cmp {
        if self.entails(pc, &Expr::le(a.clone(), b.clone())) {
            if self.entails(pc, &Expr::le(b.clone(), a.clone())) {
                Cmp::Eq
            } else if self.entails(pc, &Expr::lt(a.clone(), b.clone())) {
                Cmp::Lt
            } else {
                Cmp::Le
            }
        } else if self.entails(pc, &Expr::le(b.clone(), a.clone())) {
            if self.entails(pc, &Expr::lt(b.clone(), a.clone())) {
                Cmp::Gt
            } else {
                Cmp::Ge
            }
        } else {
            Cmp::Unknown
        }
    }

    /// Context-free normalization. Idempotent.
    pub fn simplify(&self, e: &Expr) -> Expr {
        let budget = Rc::new(Cell::new(self.node_budget));
        let ctx = Ctx::new(self, budget);
        ctx.norm(e)
    }

    /// Normalize `e` under the facts of `pc`: solved variables are
    /// substituted and guarded rewrites may fire.
    pub fn normalize_under(&self, pc: &Pc, e: &Expr) -> Expr {
        let budget = Rc::new(Cell::new(self.node_budget));
        let mut ctx = Ctx::new(self, budget);
        for f in pc.facts() {
            ctx.facts.push(f.clone());
        }
        let _ = ctx.saturate();
        ctx.norm(e)
    }

    /// Reinterpret a byte count `e` as a count of `unit`-sized elements.
    /// Succeeds only when every summand is a multiple of `size_of(unit)`.
    /// For an opaque size the constant part must be zero; for a known
    /// scalar size everything must divide it exactly.
    pub fn in_units_of(&self, e: &Expr, unit: &Ty) -> Option<Expr> {
        let size = Expr::size_of(unit.clone());
        if size == Expr::int(1) {
            return Some(e.clone());
        }
        let budget = Rc::new(Cell::new(self.node_budget));
        let ctx = Ctx::new(self, budget);
        let lin = ctx.linearize(e)?;
        if let Some(sz) = size.as_int_lit() {
            if lin.k % sz != 0 {
                return None;
            }
            let mut out = Lin::constant(lin.k / sz, true);
            for (atom, c) in &lin.terms {
                if c % sz != 0 {
                    return None;
                }
                out.add_term(atom.clone(), c / sz);
            }
            return Some(out.to_expr());
        }
        if lin.k != 0 {
            return None;
        }
        let mut out = Lin::constant(0, true);
        for (atom, c) in &lin.terms {
            match atom.kind() {
                EKind::SizeOf(t) if t == unit => {
                    out.k = out.k.checked_add(*c)?;
                }
                EKind::Mul(a, b) if *a == size => {
                    out.add_term(b.clone(), *c);
                }
                EKind::Mul(a, b) if *b == size => {
                    out.add_term(a.clone(), *c);
                }
                _ => return None,
            }
        }
        Some(out.to_expr())
    }
}

// ---------------------------------------------------------------------------
// Saturation context
// ---------------------------------------------------------------------------

#[derive(Clone)]
struct Ctx<'s> {
    solver: &'s Solver,
    budget: Rc<Cell<u64>>,
    /// Remaining unprocessed or residual boolean facts.
    facts: Vec<Expr>,
    /// Solved variables (idempotent: values never mention solved vars).
    subst: BTreeMap<String, Expr>,
    /// Solved prophecy variables.
    psubst: BTreeMap<String, Expr>,
    /// Oriented ground rewrite rules from residual equalities.
    rewrites: Vec<(Expr, Expr)>,
    /// Interval bounds per atom, rebuilt by each arithmetic pass.
    bounds: BTreeMap<Expr, Itv>,
    /// Gaussian solved form: atom = rhs / den (den > 0).
    solved: BTreeMap<Expr, (Lin, i128)>,
    /// Resolved `<= 0` combinations, for relational guard queries.
    les_store: Vec<Lin>,
}

impl<'s> Ctx<'s> {
    fn new(solver: &'s Solver, budget: Rc<Cell<u64>>) -> Ctx<'s> {
        Ctx {
            solver,
            budget,
            facts: Vec::new(),
            subst: BTreeMap::new(),
            psubst: BTreeMap::new(),
            rewrites: Vec::new(),
            bounds: BTreeMap::new(),
            solved: BTreeMap::new(),
            les_store: Vec::new(),
        }
    }

    fn spend(&self, n: u64) -> bool {
        let left = self.budget.get();
        if left < n {
            self.budget.set(0);
            false
        } else {
            self.budget.set(left - n);
            true
        }
    }

    fn solve(mut self) -> SatResult {
        if !self.spend(1) {
            return SatResult::Unknown;
        }
        if self.saturate() == SatResult::Unsat {
            return SatResult::Unsat;
        }
        match self.pick_split() {
            None => SatResult::Sat,
            Some(branches) => {
                let mut unknown = false;
                for b in branches {
                    match b.solve() {
                        SatResult::Sat => return SatResult::Sat,
                        SatResult::Unknown => unknown = true,
                        SatResult::Unsat => {}
                    }
                }
                if unknown {
                    SatResult::Unknown
                } else {
                    SatResult::Unsat
                }
            }
        }
    }

    // --- saturation ---

    /// Returns `Unsat` when a contradiction is derived, `Sat` otherwise
    /// (meaning: no contradiction, residual facts may remain).
    fn saturate(&mut self) -> SatResult {
        for _round in 0..24 {
            if !self.spend(4) {
                return SatResult::Sat;
            }
            let mut changed = false;
            // Normalize and dispatch facts.
            let mut queue: Vec<Expr> = std::mem::take(&mut self.facts);
            let mut residual: Vec<Expr> = Vec::new();
            let mut seen: BTreeSet<Expr> = BTreeSet::new();
            while let Some(f) = queue.pop() {
                let n = self.norm(&f);
                if n != f {
                    changed = true;
                }
                match n.kind() {
                    EKind::BoolLit(true) => {}
                    EKind::BoolLit(false) => return SatResult::Unsat,
                    EKind::And(parts) => queue.extend(parts.clone()),
                    EKind::Eq(a, b) => {
                        if self.handle_eq(a.clone(), b.clone(), &mut queue, &mut residual) {
                            changed = true;
                        }
                    }
                    EKind::Var(x, Sort::Bool) => {
                        self.bind_var(x.clone(), Expr::bool_(true));
                        changed = true;
                    }
                    EKind::Not(inner) => match inner.kind() {
                        EKind::Var(x, Sort::Bool) => {
                            self.bind_var(x.clone(), Expr::bool_(false));
                            changed = true;
                        }
                        EKind::IsSome(opt) => {
                            if let EKind::Var(x, Sort::Opt(el)) = opt.kind() {
                                self.bind_var(x.clone(), Expr::none((**el).clone()));
                                changed = true;
                            } else if seen.insert(n.clone()) {
                                residual.push(n.clone());
                            }
                        }
                        _ => {
                            if seen.insert(n.clone()) {
                                residual.push(n.clone());
                            }
                        }
                    },
                    EKind::IsSome(opt) => {
                        if let EKind::Var(x, Sort::Opt(el)) = opt.kind() {
                            let inner = Expr::var(format!("{x}#some"), (**el).clone());
                            self.bind_var(x.clone(), Expr::some(inner));
                            changed = true;
                        } else if seen.insert(n.clone()) {
                            residual.push(n.clone());
                        }
                    }
                    _ => {
                        if seen.insert(n.clone()) {
                            residual.push(n.clone());
                        }
                    }
                }
            }
            // Complementary residual literals contradict.
            for f in &residual {
                let neg = self.norm(&Expr::not(f.clone()));
                if seen.contains(&neg) {
                    return SatResult::Unsat;
                }
            }
            self.facts = residual;
            match self.arith_pass() {
                ArithOutcome::Unsat => return SatResult::Unsat,
                ArithOutcome::Changed => changed = true,
                ArithOutcome::Stable => {}
            }
            if !changed {
                break;
            }
        }
        if self.fm_unsat() {
            return SatResult::Unsat;
        }
        SatResult::Sat
    }

    /// Returns true when the equality advanced the solved state.
    fn handle_eq(
        &mut self,
        a: Expr,
        b: Expr,
        queue: &mut Vec<Expr>,
        residual: &mut Vec<Expr>,
    ) -> bool {
        // Variable elimination, preferring to keep smaller names.
        let pick = |x: &Expr, y: &Expr| -> Option<(String, Expr, bool)> {
            if let EKind::Var(n, _) = x.kind() {
                let mut vars = BTreeSet::new();
                y.collect_vars(&mut vars);
                if !vars.contains(n) {
                    return Some((n.clone(), y.clone(), false));
                }
            }
            if let EKind::Proph(n, _) = x.kind() {
                let mut prophs = BTreeSet::new();
                y.collect_prophs(&mut prophs);
                if !prophs.contains(n) {
                    return Some((n.clone(), y.clone(), true));
                }
            }
            None
        };
        let choice = match (a.kind(), b.kind()) {
            (EKind::Var(n1, _), EKind::Var(n2, _)) => {
                // Eliminate the lexicographically larger name.
                if n1 > n2 {
                    pick(&a, &b)
                } else {
                    pick(&b, &a)
                }
            }
            (EKind::Var(..), _) => pick(&a, &b).or_else(|| pick(&b, &a)),
            (_, EKind::Var(..)) => pick(&b, &a).or_else(|| pick(&a, &b)),
            (EKind::Proph(..), _) => pick(&a, &b).or_else(|| pick(&b, &a)),
            (_, EKind::Proph(..)) => pick(&b, &a).or_else(|| pick(&a, &b)),
            _ => None,
        };
        if let Some((name, value, is_proph)) = choice {
            if is_proph {
                self.bind_proph(name, value);
            } else {
                self.bind_var(name, value);
            }
            return true;
        }
        let sort = a.sort();
        match sort {
            Sort::Int | Sort::Real => {
                // Arithmetic equality: kept as a residual fact for the
                // linear pass (re-dispatched every round).
                residual.push(Expr::mk_eq_raw(a, b));
                false
            }
            Sort::Bool => {
                queue.push(Expr::or(vec![Expr::not(a.clone()), b.clone()]));
                queue.push(Expr::or(vec![Expr::not(b), a]));
                true
            }
            Sort::Seq(_) => {
                queue.push(Expr::eq(
                    Expr::seq_len(a.clone()),
                    Expr::seq_len(b.clone()),
                ));
                self.add_rewrite(a, b)
            }
            _ => self.add_rewrite(a, b),
        }
    }

    fn bind_var(&mut self, name: String, value: Expr) {
        let value = value.subst(&self.subst);
        let mut single = BTreeMap::new();
        single.insert(name.clone(), value.clone());
        let keys: Vec<String> = self.subst.keys().cloned().collect();
        for k in keys {
            let v = self.subst[&k].subst(&single);
            self.subst.insert(k, v);
        }
        for (l, r) in self.rewrites.iter_mut() {
            *l = l.subst(&single);
            *r = r.subst(&single);
        }
        self.subst.insert(name, value);
        self.solved.clear();
        self.bounds.clear();
    }

    fn bind_proph(&mut self, name: String, value: Expr) {
        let value = value.subst_proph(&self.psubst);
        let mut single = BTreeMap::new();
        single.insert(name.clone(), value.clone());
        let keys: Vec<String> = self.psubst.keys().cloned().collect();
        for k in keys {
            let v = self.psubst[&k].subst_proph(&single);
            self.psubst.insert(k, v);
        }
        for (l, r) in self.rewrites.iter_mut() {
            *l = l.subst_proph(&single);
            *r = r.subst_proph(&single);
        }
        self.psubst.insert(name, value);
        self.solved.clear();
        self.bounds.clear();
    }

    /// Orient `a = b` into a terminating ground rewrite. Returns true when
    /// a new rule was added.
    fn add_rewrite(&mut self, a: Expr, b: Expr) -> bool {
        if a == b {
            return false;
        }
        let (l, r) = if (b.size(), &b) < (a.size(), &a) {
            (a, b)
        } else {
            (b, a)
        };
        if self.rewrites.iter().any(|(l0, r0)| *l0 == l && *r0 == r) {
            return false;
        }
        self.rewrites.push((l, r));
        true
    }

    // --- arithmetic ---

    fn arith_pass(&mut self) -> ArithOutcome {
        let snapshot = (
            self.solved.clone(),
            self.bounds.clone(),
            self.les_store.clone(),
        );
        let mut eqs: Vec<Lin> = Vec::new();
        let mut les: Vec<Lin> = Vec::new();
        let mut nes: Vec<Lin> = Vec::new();
        self.solved.clear();
        self.les_store.clear();
        for f in &self.facts.clone() {
            match f.kind() {
                EKind::Eq(a, b) if is_num_sort(&a.sort()) => {
                    if let Some(l) = self.lin_diff(a, b) {
                        eqs.push(l);
                    }
                }
                EKind::Le(a, b) => {
                    if let Some(l) = self.lin_diff(a, b) {
                        les.push(l);
                    }
                }
                EKind::Lt(a, b) => {
                    if let Some(mut l) = self.lin_diff(a, b) {
                        if l.int {
                            l.k += 1;
                            les.push(l);
                        } else {
                            // Strict rational: record as a disequality plus
                            // the non-strict bound.
                            nes.push(l.clone());
                            les.push(l);
                        }
                    }
                }
                EKind::Not(inner) => {
                    if let EKind::Eq(a, b) = inner.kind() {
                        if is_num_sort(&a.sort()) {
                            if let Some(l) = self.lin_diff(a, b) {
                                nes.push(l);
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        // Gaussian elimination: solve equalities with a unit coefficient.
        let mut progressed = true;
        while progressed {
            progressed = false;
            let mut i = 0;
            while i < eqs.len() {
                let l = self.resolve_lin(&eqs[i]);
                if l.is_const() {
                    if l.k != 0 {
                        return ArithOutcome::Unsat;
                    }
                    eqs.remove(i);
                    continue;
                }
                // Integer feasibility: gcd of coefficients must divide k.
                if l.int {
                    let mut g = 0;
                    for c in l.terms.values() {
                        g = gcd_i(g, *c);
                    }
                    if g > 1 && l.k % g != 0 {
                        return ArithOutcome::Unsat;
                    }
                }
                // Integer pivots need a unit coefficient to stay exact;
                // rational pivots divide through, tracked by a denominator.
                let pivot = if l.int {
                    l.terms
                        .iter()
                        .find(|(_, c)| c.abs() == 1)
                        .map(|(a, c)| (a.clone(), *c))
                } else {
                    l.terms.iter().next().map(|(a, c)| (a.clone(), *c))
                };
                if let Some((atom, c)) = pivot {
                    // c*atom + rest = 0  =>  atom = -rest/c = rest*(-sgn c)/|c|
                    let mut rest = l.clone();
                    rest.terms.remove(&atom);
                    if let Some(rhs) = rest.scale(-c.signum()) {
                        self.solved.insert(atom, (rhs, c.abs()));
                        eqs.remove(i);
                        progressed = true;
                        continue;
                    }
                }
                i += 1;
            }
        }
        // Interval propagation.
        self.bounds.clear();
        let mut view: Vec<Lin> = Vec::new();
        for l in &les {
            view.push(self.resolve_lin(l));
        }
        for l in &eqs {
            let r = self.resolve_lin(l);
            view.push(r.clone());
            if let Some(neg) = r.scale(-1) {
                view.push(neg);
            }
        }
        // Built-in facts for atoms in the universe.
        let mut universe: BTreeSet<Expr> = BTreeSet::new();
        for l in &view {
            universe.extend(l.terms.keys().cloned());
        }
        for l in &nes {
            universe.extend(self.resolve_lin(l).terms.keys().cloned());
        }
        for a in &universe {
            if let Some(itv) = builtin_bound(a) {
                let cur = self.bounds.get(a).copied().unwrap_or(Itv::TOP);
                self.bounds.insert(a.clone(), cur.meet(&itv));
            }
        }
        let rounds = 2 * universe.len() + 4;
        for _ in 0..rounds {
            let mut tightened = false;
            for l in &view {
                if !l.int {
                    continue;
                }
                for (atom, c) in &l.terms {
                    // c*atom <= -k - sum(other terms); bound the rhs above.
                    let mut hi: Option<i128> = Some(-l.k);
                    for (a2, c2) in &l.terms {
                        if a2 == atom {
                            continue;
                        }
                        let b = self.bounds.get(a2).copied().unwrap_or(Itv::TOP);
                        let contrib = if *c2 > 0 { b.lo } else { b.hi };
                        hi = match (hi, contrib) {
                            (Some(h), Some(v)) => c2
                                .checked_mul(v)
                                .and_then(|cv| h.checked_sub(cv)),
                            _ => None,
                        };
                    }
                    if let Some(h) = hi {
                        let cur = self.bounds.get(atom).copied().unwrap_or(Itv::TOP);
                        let new = if *c > 0 {
                            cur.meet(&Itv {
                                lo: None,
                                hi: Some(div_floor(h, *c)),
                            })
                        } else {
                            cur.meet(&Itv {
                                lo: Some(div_ceil(h, *c)),
                                hi: None,
                            })
                        };
                        if new != cur {
                            if new.empty() {
                                return ArithOutcome::Unsat;
                            }
                            self.bounds.insert(atom.clone(), new);
                            tightened = true;
                        }
                    }
                }
            }
            if !tightened {
                break;
            }
        }
        // Constant constraint checks.
        for l in &view {
            let r = self.resolve_lin(l);
            if r.is_const() && r.k > 0 {
                return ArithOutcome::Unsat;
            }
        }
        for l in &nes {
            let r = self.resolve_lin(l);
            if r.is_const() && r.k == 0 {
                return ArithOutcome::Unsat;
            }
            // A disequality against a pinned singleton interval.
            if r.terms.len() == 1 {
                let (atom, c) = r.terms.iter().next().unwrap();
                if let Some(v) = self.bounds.get(atom).and_then(|b| b.singleton()) {
                    if c * v + r.k == 0 {
                        return ArithOutcome::Unsat;
                    }
                }
            }
        }
        self.les_store = view;
        if (self.solved.clone(), self.bounds.clone(), self.les_store.clone()) == snapshot {
            ArithOutcome::Stable
        } else {
            ArithOutcome::Changed
        }
    }

    /// Apply the Gaussian solved form to a linear combination. The result
    /// is the original scaled by a positive factor, so its sign against
    /// zero is unchanged.
    fn resolve_lin(&self, l: &Lin) -> Lin {
        let mut out = l.clone();
        for _ in 0..4 * (l.terms.len() + 1) {
            let hit = out
                .terms
                .iter()
                .find(|(a, _)| self.solved.contains_key(*a))
                .map(|(a, c)| (a.clone(), *c));
            let Some((atom, c)) = hit else { break };
            let (rhs, den) = self.solved[&atom].clone();
            out.terms.remove(&atom);
            let next = out
                .scale(den)
                .and_then(|scaled| rhs.scale(c).and_then(|r| scaled.add(&r)));
            match next {
                Some(n) => out = n,
                None => {
                    // Arithmetic overflow: keep the atom unresolved.
                    out.add_term(atom, c);
                    break;
                }
            }
        }
        out
    }

    fn lin_diff(&self, a: &Expr, b: &Expr) -> Option<Lin> {
        let (la, da) = self.lin_of(a)?;
        let (lb, db) = self.lin_of(b)?;
        la.scale(db)?.sub(&lb.scale(da)?)
    }

    /// Linearize an Int- or Real-sorted expression over uninterpreted atoms.
    /// Returns the numerator after clearing denominators (sign-preserving).
    fn linearize(&self, e: &Expr) -> Option<Lin> {
        let (l, _den) = self.lin_of(e)?;
        Some(l)
    }

    fn lin_of(&self, e: &Expr) -> Option<(Lin, i128)> {
        let int = e.sort() == Sort::Int;
        match e.kind() {
            EKind::IntLit(v) => Some((Lin::constant(*v, true), 1)),
            EKind::RealLit(n, d) => Some((Lin::constant(*n, false), *d)),
            EKind::Add(a, b) => {
                let (la, da) = self.lin_of(a)?;
                let (lb, db) = self.lin_of(b)?;
                let l = la.scale(db)?.add(&lb.scale(da)?)?;
                Some((l, da.checked_mul(db)?))
            }
            EKind::Sub(a, b) => {
                let (la, da) = self.lin_of(a)?;
                let (lb, db) = self.lin_of(b)?;
                let l = la.scale(db)?.sub(&lb.scale(da)?)?;
                Some((l, da.checked_mul(db)?))
            }
            EKind::Neg(a) => {
                let (la, da) = self.lin_of(a)?;
                Some((la.scale(-1)?, da))
            }
            EKind::Mul(a, b) => {
                if let Some(c) = a.as_int_lit() {
                    let (lb, db) = self.lin_of(b)?;
                    return Some((lb.scale(c)?, db));
                }
                if let Some(c) = b.as_int_lit() {
                    let (la, da) = self.lin_of(a)?;
                    return Some((la.scale(c)?, da));
                }
                if let EKind::RealLit(n, d) = a.kind() {
                    let (lb, db) = self.lin_of(b)?;
                    return Some((lb.scale(*n)?, db.checked_mul(*d)?));
                }
                if let EKind::RealLit(n, d) = b.kind() {
                    let (la, da) = self.lin_of(a)?;
                    return Some((la.scale(*n)?, da.checked_mul(*d)?));
                }
                Some((Lin::atom(e.clone(), int), 1))
            }
            _ => Some((Lin::atom(e.clone(), int), 1)),
        }
    }

    /// Fourier-Motzkin refutation over the current inequality system.
    fn fm_unsat(&mut self) -> bool {
        let mut les: Vec<Lin> = Vec::new();
        for f in &self.facts.clone() {
            match f.kind() {
                EKind::Le(a, b) => {
                    if let Some(l) = self.lin_diff(a, b) {
                        les.push(self.resolve_lin(&l));
                    }
                }
                EKind::Lt(a, b) => {
                    if let Some(mut l) = self.lin_diff(a, b) {
                        l = self.resolve_lin(&l);
                        if l.int {
                            l.k += 1;
                        } else {
                            // Track strictness for rationals.
                            l.k += 0;
                            l.terms.insert(strict_marker(), 1);
                        }
                        les.push(l);
                    }
                }
                EKind::Eq(a, b) if is_num_sort(&a.sort()) => {
                    if let Some(l) = self.lin_diff(a, b) {
                        let r = self.resolve_lin(&l);
                        if let Some(neg) = r.scale(-1) {
                            les.push(r);
                            les.push(neg);
                        }
                    }
                }
                _ => {}
            }
        }
        // Seed built-in lower bounds so FM sees them.
        let mut universe: BTreeSet<Expr> = BTreeSet::new();
        for l in &les {
            universe.extend(l.terms.keys().cloned());
        }
        for a in &universe {
            if let Some(itv) = builtin_bound(a) {
                if let Some(lo) = itv.lo {
                    // lo <= a  =>  lo - a <= 0
                    let mut l = Lin::constant(lo, true);
                    l.add_term(a.clone(), -1);
                    les.push(l);
                }
                if let Some(hi) = itv.hi {
                    let mut l = Lin::constant(-hi, true);
                    l.add_term(a.clone(), 1);
                    les.push(l);
                }
            }
        }
        let atoms: Vec<Expr> = universe.into_iter().collect();
        if atoms.len() > 8 || les.len() > 48 {
            return false;
        }
        for atom in &atoms {
            if *atom == strict_marker() {
                continue;
            }
            let (mut lower, mut upper, mut rest) = (Vec::new(), Vec::new(), Vec::new());
            for l in les {
                match l.terms.get(atom).copied().unwrap_or(0) {
                    0 => rest.push(l),
                    c if c > 0 => upper.push(l),
                    _ => lower.push(l),
                }
            }
            for up in &upper {
                for lo in &lower {
                    let cu = up.terms[atom];
                    let cl = -lo.terms[atom];
                    let combined = match up
                        .scale(cl)
                        .and_then(|a| lo.scale(cu).and_then(|b| a.add(&b)))
                    {
                        Some(mut c) => {
                            c.terms.remove(atom);
                            c.tighten_le();
                            c
                        }
                        None => continue,
                    };
                    rest.push(combined);
                }
            }
            if rest.len() > 120 {
                return false;
            }
            les = rest;
        }
        for l in &les {
            let strict = l.terms.contains_key(&strict_marker());
            let mut c = l.clone();
            c.terms.remove(&strict_marker());
            if c.is_const() {
                if c.k > 0 || (strict && c.k == 0) {
                    return true;
                }
            }
        }
        false
    }

    // --- normalization ---

    fn norm(&self, e: &Expr) -> Expr {
        let mut cur = e.clone();
        for _ in 0..8 {
            if !self.spend(1) {
                return cur;
            }
            let next = cur.rewrite(&mut |n| self.norm_node(n));
            if next == cur {
                return cur;
            }
            cur = next;
        }
        cur
    }

    fn norm_node(&self, n: &Expr) -> Option<Expr> {
        match n.kind() {
            EKind::Var(x, _) => self.subst.get(x).cloned(),
            EKind::Proph(x, _) => self.psubst.get(x).cloned(),
            EKind::Not(inner) => match inner.kind() {
                EKind::And(parts) => Some(Expr::or(
                    parts.iter().map(|p| Expr::not(p.clone())).collect(),
                )),
                EKind::Or(parts) => Some(Expr::and(
                    parts.iter().map(|p| Expr::not(p.clone())).collect(),
                )),
                _ => self.rewrite_lookup(n),
            },
            EKind::Eq(a, b) => {
                if a.sort() == Sort::Bool {
                    return Some(Expr::and(vec![
                        Expr::or(vec![Expr::not(a.clone()), b.clone()]),
                        Expr::or(vec![Expr::not(b.clone()), a.clone()]),
                    ]));
                }
                // Head injectivity of cons-shaped concatenations.
                if let (EKind::SeqConcat(ps), EKind::SeqConcat(qs)) = (a.kind(), b.kind()) {
                    if let (EKind::SeqUnit(x), EKind::SeqUnit(y)) = (ps[0].kind(), qs[0].kind()) {
                        let resta = Expr::seq_concat(ps[1..].to_vec());
                        let restb = Expr::seq_concat(qs[1..].to_vec());
                        return Some(Expr::and(vec![
                            Expr::eq(x.clone(), y.clone()),
                            Expr::eq(resta, restb),
                        ]));
                    }
                }
                if let (EKind::SeqUnit(x), EKind::SeqConcat(qs)) = (a.kind(), b.kind()) {
                    if let EKind::SeqUnit(y) = qs[0].kind() {
                        let restb = Expr::seq_concat(qs[1..].to_vec());
                        let elem = restb.sort().seq_elem().cloned().unwrap_or(Sort::Int);
                        return Some(Expr::and(vec![
                            Expr::eq(x.clone(), y.clone()),
                            Expr::eq(restb, Expr::seq_empty(elem)),
                        ]));
                    }
                }
                if let (EKind::SeqConcat(ps), EKind::SeqUnit(y)) = (a.kind(), b.kind()) {
                    if let EKind::SeqUnit(x) = ps[0].kind() {
                        let resta = Expr::seq_concat(ps[1..].to_vec());
                        let elem = resta.sort().seq_elem().cloned().unwrap_or(Sort::Int);
                        return Some(Expr::and(vec![
                            Expr::eq(x.clone(), y.clone()),
                            Expr::eq(resta, Expr::seq_empty(elem)),
                        ]));
                    }
                }
                self.rewrite_lookup(n)
            }
            EKind::Rem(a, b) => {
                let c = b.as_int_lit()?;
                if c <= 0 {
                    return self.rewrite_lookup(n);
                }
                let lin = self.linearize(a)?;
                let mut out = Lin::constant(lin.k.rem_euclid(c), true);
                let mut reduced = out.k != lin.k;
                for (atom, co) in &lin.terms {
                    let co2 = co.rem_euclid(c);
                    if co2 != *co {
                        reduced = true;
                    }
                    out.add_term(atom.clone(), co2);
                }
                if !reduced {
                    return self.rewrite_lookup(n);
                }
                if out.is_const() {
                    Some(Expr::int(out.k))
                } else {
                    Some(Expr::rem(out.to_expr(), b.clone()))
                }
            }
            EKind::SeqLen(s) => match s.kind() {
                EKind::SeqTake(s0, k) => {
                    let len0 = Expr::seq_len(s0.clone());
                    if self.proves_le(k, &len0) && self.proves_le(&Expr::int(0), k) {
                        Some(k.clone())
                    } else if self.proves_le(&len0, k) {
                        Some(len0)
                    } else {
                        self.rewrite_lookup(n)
                    }
                }
                EKind::SeqDrop(s0, k) => {
                    let len0 = Expr::seq_len(s0.clone());
                    if self.proves_le(&Expr::int(0), k) && self.proves_le(k, &len0) {
                        Some(Expr::sub(len0, k.clone()))
                    } else if self.proves_le(&len0, k) {
                        Some(Expr::int(0))
                    } else if self.proves_le(k, &Expr::int(0)) {
                        Some(len0)
                    } else {
                        self.rewrite_lookup(n)
                    }
                }
                _ => self.rewrite_lookup(n),
            },
            EKind::SeqAt(s, i) => {
                match s.kind() {
                    EKind::SeqConcat(parts) => {
                        let head = &parts[0];
                        let hl = Expr::seq_len(head.clone());
                        if self.proves_lt(i, &hl) {
                            return Some(Expr::seq_at(head.clone(), i.clone()));
                        }
                        if self.proves_le(&hl, i) {
                            let rest = Expr::seq_concat(parts[1..].to_vec());
                            return Some(Expr::seq_at(rest, Expr::sub(i.clone(), hl)));
                        }
                    }
                    EKind::SeqUpdate(s0, j, v) => {
                        let len0 = Expr::seq_len(s0.clone());
                        if self.proves_eq(i, j)
                            && self.proves_le(&Expr::int(0), j)
                            && self.proves_lt(j, &len0)
                        {
                            return Some(v.clone());
                        }
                        if self.proves_ne(i, j) {
                            return Some(Expr::seq_at(s0.clone(), i.clone()));
                        }
                    }
                    EKind::SeqDrop(s0, k) => {
                        if self.proves_le(&Expr::int(0), k) && self.proves_le(&Expr::int(0), i) {
                            return Some(Expr::seq_at(
                                s0.clone(),
                                Expr::add(k.clone(), i.clone()),
                            ));
                        }
                    }
                    EKind::SeqTake(s0, k) => {
                        if self.proves_lt(i, k) {
                            return Some(Expr::seq_at(s0.clone(), i.clone()));
                        }
                    }
                    _ => {}
                }
                self.rewrite_lookup(n)
            }
            EKind::SeqTake(s, kx) => {
                let len = Expr::seq_len(s.clone());
                if self.proves_le(&len, kx) {
                    return Some(s.clone());
                }
                if self.proves_le(kx, &Expr::int(0)) {
                    let elem = s.sort().seq_elem().cloned().unwrap_or(Sort::Int);
                    return Some(Expr::seq_empty(elem));
                }
                match s.kind() {
                    EKind::SeqConcat(parts) => {
                        let head = &parts[0];
                        let hl = Expr::seq_len(head.clone());
                        if self.proves_le(kx, &hl) {
                            return Some(Expr::seq_take(head.clone(), kx.clone()));
                        }
                        if self.proves_le(&hl, kx) {
                            let rest = Expr::seq_concat(parts[1..].to_vec());
                            return Some(Expr::seq_concat(vec![
                                head.clone(),
                                Expr::seq_take(rest, Expr::sub(kx.clone(), hl)),
                            ]));
                        }
                    }
                    EKind::SeqUpdate(s0, j, _) => {
                        if self.proves_le(kx, j) {
                            return Some(Expr::seq_take(s0.clone(), kx.clone()));
                        }
                    }
                    EKind::SeqTake(s0, m) => {
                        if self.proves_le(kx, m) {
                            return Some(Expr::seq_take(s0.clone(), kx.clone()));
                        }
                        if self.proves_le(m, kx) {
                            return Some(Expr::seq_take(s0.clone(), m.clone()));
                        }
                    }
                    _ => {}
                }
                self.rewrite_lookup(n)
            }
            EKind::SeqDrop(s, kx) => {
                let len = Expr::seq_len(s.clone());
                if self.proves_le(&len, kx) {
                    let elem = s.sort().seq_elem().cloned().unwrap_or(Sort::Int);
                    return Some(Expr::seq_empty(elem));
                }
                if self.proves_le(kx, &Expr::int(0)) {
                    return Some(s.clone());
                }
                match s.kind() {
                    EKind::SeqConcat(parts) => {
                        let head = &parts[0];
                        let hl = Expr::seq_len(head.clone());
                        if self.proves_le(&hl, kx) {
                            let rest = Expr::seq_concat(parts[1..].to_vec());
                            return Some(Expr::seq_drop(rest, Expr::sub(kx.clone(), hl)));
                        }
                        if self.proves_le(kx, &hl) {
                            let rest = Expr::seq_concat(parts[1..].to_vec());
                            return Some(Expr::seq_concat(vec![
                                Expr::seq_drop(head.clone(), kx.clone()),
                                rest,
                            ]));
                        }
                    }
                    EKind::SeqDrop(s0, m) => {
                        if self.proves_le(&Expr::int(0), m) && self.proves_le(&Expr::int(0), kx) {
                            return Some(Expr::seq_drop(
                                s0.clone(),
                                Expr::add(m.clone(), kx.clone()),
                            ));
                        }
                    }
                    _ => {}
                }
                self.rewrite_lookup(n)
            }
            EKind::SeqUpdate(s, i, v) => {
                match s.kind() {
                    EKind::SeqEmpty(_) => return Some(s.clone()),
                    EKind::SeqUnit(_) => {
                        if self.proves_eq(i, &Expr::int(0)) {
                            return Some(Expr::seq_unit(v.clone()));
                        }
                        if self.proves_ne(i, &Expr::int(0)) {
                            return Some(s.clone());
                        }
                    }
                    EKind::SeqConcat(parts) => {
                        let head = &parts[0];
                        let hl = Expr::seq_len(head.clone());
                        if self.proves_le(&Expr::int(0), i) && self.proves_lt(i, &hl) {
                            let rest = Expr::seq_concat(parts[1..].to_vec());
                            return Some(Expr::seq_concat(vec![
                                Expr::seq_update(head.clone(), i.clone(), v.clone()),
                                rest,
                            ]));
                        }
                        if self.proves_le(&hl, i) {
                            let rest = Expr::seq_concat(parts[1..].to_vec());
                            return Some(Expr::seq_concat(vec![
                                head.clone(),
                                Expr::seq_update(rest, Expr::sub(i.clone(), hl), v.clone()),
                            ]));
                        }
                    }
                    _ => {}
                }
                self.rewrite_lookup(n)
            }
            EKind::SeqConcat(parts) => {
                // take(s, k) ++ [at(s, k)]      == take(s, k+1)  (0 <= k < len)
                // [at(s, k)] ++ drop(s, k+1)    == drop(s, k)    (0 <= k < len)
                // take(s, k) ++ drop(s, k)      == s             (0 <= k <= len)
                for w in 0..parts.len().saturating_sub(1) {
                    let (x, y) = (&parts[w], &parts[w + 1]);
                    let merged = self.try_merge_concat(x, y);
                    if let Some(m) = merged {
                        let mut out = parts[..w].to_vec();
                        out.push(m);
                        out.extend(parts[w + 2..].iter().cloned());
                        return Some(Expr::seq_concat(out));
                    }
                }
                self.rewrite_lookup(n)
            }
            _ => self.rewrite_lookup(n),
        }
    }

    fn try_merge_concat(&self, x: &Expr, y: &Expr) -> Option<Expr> {
        if let (EKind::SeqTake(s, k), EKind::SeqUnit(u)) = (x.kind(), y.kind()) {
            if let EKind::SeqAt(s2, k2) = u.kind() {
                if s == s2
                    && self.proves_eq(k, k2)
                    && self.proves_le(&Expr::int(0), k)
                    && self.proves_lt(k, &Expr::seq_len(s.clone()))
                {
                    return Some(Expr::seq_take(
                        s.clone(),
                        Expr::add(k.clone(), Expr::int(1)),
                    ));
                }
            }
        }
        if let (EKind::SeqUnit(u), EKind::SeqDrop(s, k1)) = (x.kind(), y.kind()) {
            if let EKind::SeqAt(s2, k) = u.kind() {
                if s == s2
                    && self.proves_eq(k1, &Expr::add(k.clone(), Expr::int(1)))
                    && self.proves_le(&Expr::int(0), k)
                    && self.proves_lt(k, &Expr::seq_len(s.clone()))
                {
                    return Some(Expr::seq_drop(s.clone(), k.clone()));
                }
            }
        }
        if let (EKind::SeqTake(s, k), EKind::SeqDrop(s2, k2)) = (x.kind(), y.kind()) {
            if s == s2
                && self.proves_eq(k, k2)
                && self.proves_le(&Expr::int(0), k)
                && self.proves_le(k, &Expr::seq_len(s.clone()))
            {
                return Some(s.clone());
            }
        }
        None
    }

    fn rewrite_lookup(&self, n: &Expr) -> Option<Expr> {
        for (l, r) in &self.rewrites {
            if n == l {
                return Some(r.clone());
            }
        }
        None
    }

    // --- lightweight guard queries (no recursion into sat) ---

    fn guard_cmp(&self, a: &Expr, b: &Expr) -> Cmp {
        let lin = match self.lin_diff(a, b) {
            Some(l) => self.resolve_lin(&l),
            None => return Cmp::Unknown,
        };
        if lin.is_const() {
            return match lin.k {
                0 => Cmp::Eq,
                k if k < 0 => Cmp::Lt,
                _ => Cmp::Gt,
            };
        }
        // Interval of the combination from per-atom bounds.
        let mut lo: Option<i128> = Some(lin.k);
        let mut hi: Option<i128> = Some(lin.k);
        for (atom, c) in &lin.terms {
            let b = self
                .bounds
                .get(atom)
                .copied()
                .or_else(|| builtin_bound(atom))
                .unwrap_or(Itv::TOP);
            let (tlo, thi) = if *c > 0 { (b.lo, b.hi) } else { (b.hi, b.lo) };
            lo = match (lo, tlo) {
                (Some(x), Some(v)) => c.checked_mul(v).and_then(|cv| x.checked_add(cv)),
                _ => None,
            };
            hi = match (hi, thi) {
                (Some(x), Some(v)) => c.checked_mul(v).and_then(|cv| x.checked_add(cv)),
                _ => None,
            };
        }
        // Relational facts: for every known `l <= 0`, a constant difference
        // `lin - l = k` gives `lin <= k`; `lin + l = k` gives `lin >= k`.
        for l in &self.les_store {
            if let Some(d) = lin.sub(l) {
                if d.is_const() {
                    hi = opt_min(hi, Some(d.k));
                }
            }
            if let Some(d) = lin.add(l) {
                if d.is_const() {
                    lo = opt_max(lo, Some(d.k));
                }
            }
        }
        match (lo, hi) {
            (Some(l), Some(h)) if l == 0 && h == 0 => Cmp::Eq,
            (Some(l), _) if l > 0 => Cmp::Gt,
            (Some(l), _) if l == 0 => Cmp::Ge,
            (_, Some(h)) if h < 0 => Cmp::Lt,
            (_, Some(h)) if h == 0 => Cmp::Le,
            _ => Cmp::Unknown,
        }
    }

    fn proves_le(&self, a: &Expr, b: &Expr) -> bool {
        matches!(self.guard_cmp(a, b), Cmp::Lt | Cmp::Le | Cmp::Eq)
    }

    fn proves_lt(&self, a: &Expr, b: &Expr) -> bool {
        matches!(self.guard_cmp(a, b), Cmp::Lt)
    }

    fn proves_eq(&self, a: &Expr, b: &Expr) -> bool {
        a == b || matches!(self.guard_cmp(a, b), Cmp::Eq)
    }

    fn proves_ne(&self, a: &Expr, b: &Expr) -> bool {
        matches!(self.guard_cmp(a, b), Cmp::Lt | Cmp::Gt)
    }

    // --- case splits ---

    fn pick_split(&self) -> Option<Vec<Ctx<'s>>> {
        // 1. Disjunction.
        for (i, f) in self.facts.iter().enumerate() {
            if let EKind::Or(parts) = f.kind() {
                let mut out = Vec::new();
                for p in parts {
                    let mut b = self.clone();
                    b.facts.remove(i);
                    b.facts.push(p.clone());
                    out.push(b)
                }
                return Some(out);
            }
        }
        // Gather variables occurring in residual facts.
        let mut opt_vars: BTreeMap<String, Sort> = BTreeMap::new();
        let mut bool_vars: BTreeSet<String> = BTreeSet::new();
        let mut seq_vars: BTreeMap<String, Sort> = BTreeMap::new();
        let mut int_vars: BTreeSet<String> = BTreeSet::new();
        for f in &self.facts {
            collect_typed_vars(f, &mut |name, sort| match sort {
                Sort::Opt(el) => {
                    opt_vars.insert(name.to_string(), (*el.clone()).clone());
                }
                Sort::Bool => {
                    bool_vars.insert(name.to_string());
                }
                Sort::Seq(el) => {
                    seq_vars.insert(name.to_string(), (*el.clone()).clone());
                }
                Sort::Int => {
                    int_vars.insert(name.to_string());
                }
                _ => {}
            });
        }
        // 2. Option variable: None or Some(fresh).
        if let Some((x, el)) = opt_vars.into_iter().next() {
            let mut b1 = self.clone();
            b1.facts.push(Expr::eq(
                Expr::var(x.clone(), Sort::opt(el.clone())),
                Expr::none(el.clone()),
            ));
            let mut b2 = self.clone();
            b2.facts.push(Expr::eq(
                Expr::var(x.clone(), Sort::opt(el.clone())),
                Expr::some(Expr::var(format!("{x}#some"), el)),
            ));
            return Some(vec![b1, b2]);
        }
        // 3. Boolean variable.
        if let Some(x) = bool_vars.into_iter().next() {
            let mut b1 = self.clone();
            b1.facts.push(Expr::var(x.clone(), Sort::Bool));
            let mut b2 = self.clone();
            b2.facts.push(Expr::not(Expr::var(x, Sort::Bool)));
            return Some(vec![b1, b2]);
        }
        // 4. Sequence variable with a small length bound: expand literally.
        for (x, el) in seq_vars {
            let v = Expr::var(x.clone(), Sort::seq(el.clone()));
            let len_atom = Expr::seq_len(v.clone());
            let b = self
                .bounds
                .get(&len_atom)
                .copied()
                .unwrap_or(Itv::TOP);
            let lo = b.lo.unwrap_or(0).max(0);
            if let Some(hi) = b.hi {
                if hi <= self.solver.seq_depth as i128 && lo <= hi {
                    let mut out = Vec::new();
                    for n in lo..=hi {
                        let elems: Vec<Expr> = (0..n)
                            .map(|j| Expr::seq_unit(Expr::var(format!("{x}#{j}"), el.clone())))
                            .collect();
                        let concrete = if elems.is_empty() {
                            Expr::seq_empty(el.clone())
                        } else {
                            Expr::seq_concat(elems)
                        };
                        let mut br = self.clone();
                        br.facts.push(Expr::eq(v.clone(), concrete));
                        out.push(br);
                    }
                    return Some(out);
                }
            }
        }
        // 5. Small-interval integer variable: enumerate.
        for x in int_vars {
            let v = Expr::var(x.clone(), Sort::Int);
            let b = self.bounds.get(&v).copied().unwrap_or(Itv::TOP);
            if let (Some(lo), Some(hi)) = (b.lo, b.hi) {
                if hi - lo <= 32 {
                    let mut out = Vec::new();
                    for val in lo..=hi {
                        let mut br = self.clone();
                        br.facts.push(Expr::eq(v.clone(), Expr::int(val)));
                        out.push(br);
                    }
                    return Some(out);
                }
            }
        }
        None
    }
}

enum ArithOutcome {
    Unsat,
    Changed,
    Stable,
}

fn is_num_sort(s: &Sort) -> bool {
    matches!(s, Sort::Int | Sort::Real)
}

/// Marker atom recording strictness of rational `<` constraints in FM.
fn strict_marker() -> Expr {
    Expr::var("#strict", Sort::Real)
}

/// Built-in facts: sequence lengths are non-negative, sizes are at least 1,
/// euclidean remainders by a positive constant lie in `[0, c)`.
fn builtin_bound(atom: &Expr) -> Option<Itv> {
    match atom.kind() {
        EKind::SeqLen(_) => Some(Itv {
            lo: Some(0),
            hi: None,
        }),
        EKind::SizeOf(_) => Some(Itv {
            lo: Some(1),
            hi: None,
        }),
        EKind::Rem(_, b) => {
            let c = b.as_int_lit()?;
            if c > 0 {
                Some(Itv {
                    lo: Some(0),
                    hi: Some(c - 1),
                })
            } else {
                None
            }
        }
        _ => None,
    }
}

fn collect_typed_vars(e: &Expr, f: &mut dyn FnMut(&str, &Sort)) {
    if let EKind::Var(n, s) = e.kind() {
        f(n, s);
    }
    for c in e.children() {
        collect_typed_vars(&c, f);
    }
}

impl Expr {
    /// Raw equality node builder used by the solver to park arithmetic
    /// equalities without re-entering constructor decomposition.
    fn mk_eq_raw(a: Expr, b: Expr) -> Expr {
        Expr::eq(a, b)
    }
}

// ---------------------------------------------------------------------------
// SMT-LIB subprocess backend
// ---------------------------------------------------------------------------

pub(crate) mod smt {
    use super::SatResult;
    use crate::term::{EKind, Expr, Sort};
    use std::collections::BTreeSet;
    use std::io::Write;
    use std::process::{Command, Stdio};

    /// Only pure Int/Bool/Real queries are shipped out; everything else
    /// stays on the builtin pipeline.
    pub fn translatable(e: &Expr) -> bool {
        let sort_ok = matches!(e.sort(), Sort::Int | Sort::Bool | Sort::Real);
        let kind_ok = matches!(
            e.kind(),
            EKind::Var(..)
                | EKind::Proph(..)
                | EKind::IntLit(_)
                | EKind::BoolLit(_)
                | EKind::RealLit(..)
                | EKind::Add(..)
                | EKind::Sub(..)
                | EKind::Mul(..)
                | EKind::Neg(_)
                | EKind::Rem(..)
                | EKind::Eq(..)
                | EKind::Le(..)
                | EKind::Lt(..)
                | EKind::Not(_)
                | EKind::And(_)
                | EKind::Or(_)
        );
        sort_ok && kind_ok && e.children().iter().all(translatable)
    }

    pub fn query(cmd: &str, facts: &[Expr]) -> Option<SatResult> {
        let script = script_for(facts)?;
        let mut parts = cmd.split_whitespace();
        let prog = parts.next()?;
        let mut child = Command::new(prog)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .ok()?;
        child
            .stdin
            .as_mut()
            .and_then(|s| s.write_all(script.as_bytes()).ok())?;
        let out = child.wait_with_output().ok()?;
        let text = String::from_utf8_lossy(&out.stdout);
        for line in text.lines() {
            match line.trim() {
                "sat" => return Some(SatResult::Sat),
                "unsat" => return Some(SatResult::Unsat),
                "unknown" => return Some(SatResult::Unknown),
                _ => {}
            }
        }
        None
    }

    fn script_for(facts: &[Expr]) -> Option<String> {
        let mut vars: BTreeSet<(String, Sort, bool)> = BTreeSet::new();
        for f in facts {
            collect(f, &mut vars);
        }
        let mut s = String::from("(set-logic ALL)\n");
        for (name, sort, proph) in &vars {
            let smt_sort = match sort {
                Sort::Int => "Int",
                Sort::Bool => "Bool",
                Sort::Real => "Real",
                _ => return None,
            };
            s.push_str(&format!(
                "(declare-const {} {})\n",
                sym(name, *proph),
                smt_sort
            ));
        }
        for f in facts {
            s.push_str(&format!("(assert {})\n", term(f)?));
        }
        s.push_str("(check-sat)\n");
        Some(s)
    }

    fn collect(e: &Expr, out: &mut BTreeSet<(String, Sort, bool)>) {
        match e.kind() {
            EKind::Var(n, s) => {
                out.insert((n.clone(), s.clone(), false));
            }
            EKind::Proph(n, s) => {
                out.insert((n.clone(), s.clone(), true));
            }
            _ => {}
        }
        for c in e.children() {
            collect(&c, out);
        }
    }

    fn sym(name: &str, proph: bool) -> String {
        if proph {
            format!("|p:{name}|")
        } else {
            format!("|v:{name}|")
        }
    }

    fn term(e: &Expr) -> Option<String> {
        Some(match e.kind() {
            EKind::Var(n, _) => sym(n, false),
            EKind::Proph(n, _) => sym(n, true),
            EKind::IntLit(v) => {
                if *v < 0 {
                    format!("(- {})", -v)
                } else {
                    format!("{v}")
                }
            }
            EKind::BoolLit(v) => format!("{v}"),
            EKind::RealLit(n, d) => format!("(/ {n}.0 {d}.0)"),
            EKind::Add(a, b) => format!("(+ {} {})", term(a)?, term(b)?),
            EKind::Sub(a, b) => format!("(- {} {})", term(a)?, term(b)?),
            EKind::Mul(a, b) => format!("(* {} {})", term(a)?, term(b)?),
            EKind::Neg(a) => format!("(- {})", term(a)?),
            EKind::Rem(a, b) => format!("(mod {} {})", term(a)?, term(b)?),
            EKind::Eq(a, b) => format!("(= {} {})", term(a)?, term(b)?),
            EKind::Le(a, b) => format!("(<= {} {})", term(a)?, term(b)?),
            EKind::Lt(a, b) => format!("(< {} {})", term(a)?, term(b)?),
            EKind::Not(a) => format!("(not {})", term(a)?),
            EKind::And(ps) => {
                let mut s = String::from("(and");
                for p in ps {
                    s.push(' ');
                    s.push_str(&term(p)?);
                }
                s.push(')');
                s
            }
            EKind::Or(ps) => {
                let mut s = String::from("(or");
                for p in ps {
                    s.push(' ');
                    s.push_str(&term(p)?);
                }
                s.push(')');
                s
            }
            _ => return None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Options;
    use crate::term::{Expr, Sort};

    fn solver() -> Solver {
        Solver::new(&Options::default())
    }

    fn ivar(n: &str) -> Expr {
        Expr::var(n, Sort::Int)
    }

    fn pc_of(facts: Vec<Expr>) -> Pc {
        let mut pc = Pc::new();
        for f in facts {
            pc.assume(f);
        }
        pc
    }

    #[test]
    fn basic_arith_entailment() {
        let s = solver();
        let x = ivar("x");
        let pc = pc_of(vec![Expr::le(x.clone(), Expr::int(3))]);
        assert!(s.entails(&pc, &Expr::lt(x.clone(), Expr::int(10))));
        assert!(!s.entails(&pc, &Expr::lt(x, Expr::int(3))));
    }

    #[test]
    fn overflow_guard_contradiction() {
        let s = solver();
        let x = ivar("x");
        let max = Expr::int(2147483647);
        let pc = pc_of(vec![
            Expr::le(x.clone(), Expr::sub(max.clone(), Expr::int(2))),
            Expr::lt(max, Expr::add(x, Expr::int(2))),
        ]);
        assert_eq!(s.sat(&pc), SatResult::Unsat);
    }

    #[test]
    fn evenness_is_preserved_by_adding_two() {
        let s = solver();
        let x = ivar("x");
        let even = Expr::eq(Expr::rem(x.clone(), Expr::int(2)), Expr::int(0));
        let pc = pc_of(vec![even]);
        let next_even = Expr::eq(
            Expr::rem(Expr::add(x, Expr::int(2)), Expr::int(2)),
            Expr::int(0),
        );
        assert!(s.entails(&pc, &next_even));
    }

    #[test]
    fn odd_plus_two_stays_odd() {
        let s = solver();
        let x = ivar("x");
        let odd = Expr::eq(Expr::rem(x.clone(), Expr::int(2)), Expr::int(1));
        let pc = pc_of(vec![odd]);
        let even = Expr::eq(
            Expr::rem(Expr::add(x, Expr::int(2)), Expr::int(2)),
            Expr::int(0),
        );
        assert!(!s.entails(&pc, &even));
        assert!(s.entails(&pc, &Expr::not(even)));
    }

    #[test]
    fn cons_length_arithmetic() {
        // s = prepend(e, t) entails len(s) = len(t) + 1, and with len(s) = 3
        // the tail length is pinned to 2.
        let s = solver();
        let sv = Expr::var("s", Sort::seq(Sort::Int));
        let tv = Expr::var("t", Sort::seq(Sort::Int));
        let ev = ivar("e");
        let pc = pc_of(vec![Expr::eq(
            sv.clone(),
            Expr::seq_prepend(ev, tv.clone()),
        )]);
        let goal = Expr::eq(
            Expr::seq_len(sv.clone()),
            Expr::add(Expr::seq_len(tv.clone()), Expr::int(1)),
        );
        assert!(s.entails(&pc, &goal));
        let pc2 = pc.with(Expr::eq(Expr::seq_len(sv), Expr::int(3)));
        assert_eq!(s.sat(&pc2), SatResult::Sat);
        assert!(s.entails(&pc2, &Expr::eq(Expr::seq_len(tv), Expr::int(2))));
    }

    #[test]
    fn option_reasoning_via_split() {
        let s = solver();
        let x = Expr::var("x", Sort::opt(Sort::Int));
        let pc = pc_of(vec![
            Expr::is_some(x.clone()),
            Expr::eq(Expr::unwrap(x.clone()), Expr::int(3)),
        ]);
        assert!(s.entails(&pc, &Expr::eq(x, Expr::some(Expr::int(3)))));
    }

    #[test]
    fn boolean_biconditional_propagates() {
        let s = solver();
        let h = Expr::var("h", Sort::opt(Sort::Ptr));
        let r = Expr::var("r", Sort::seq(Sort::Int));
        let bic = Expr::eq(
            Expr::eq(h.clone(), Expr::none(Sort::Ptr)),
            Expr::eq(r.clone(), Expr::seq_empty(Sort::Int)),
        );
        let pc = pc_of(vec![bic, Expr::eq(h, Expr::none(Sort::Ptr))]);
        assert!(s.entails(&pc, &Expr::eq(r, Expr::seq_empty(Sort::Int))));
    }

    #[test]
    fn take_at_recomposition() {
        let s = solver();
        let sv = Expr::var("s", Sort::seq(Sort::Int));
        let len = Expr::seq_len(sv.clone());
        let pc = pc_of(vec![Expr::lt(Expr::int(0), len.clone())]);
        let n = Expr::sub(len, Expr::int(1));
        let recomposed = Expr::seq_concat(vec![
            Expr::seq_take(sv.clone(), n.clone()),
            Expr::seq_unit(Expr::seq_at(sv.clone(), n)),
        ]);
        assert!(s.entails(&pc, &Expr::eq(recomposed, sv)));
    }

    #[test]
    fn fraction_conservation() {
        let s = solver();
        let q1 = Expr::var("q1", Sort::Real);
        let q2 = Expr::var("q2", Sort::Real);
        let pc = pc_of(vec![
            Expr::le(Expr::add(q1.clone(), q2.clone()), Expr::real(1, 1)),
            Expr::eq(q1, Expr::real(1, 1)),
            Expr::lt(Expr::real(0, 1), q2),
        ]);
        assert_eq!(s.sat(&pc), SatResult::Unsat);
    }

    #[test]
    fn half_fractions_sum_back() {
        let s = solver();
        let q = Expr::var("q", Sort::Real);
        let pc = pc_of(vec![Expr::eq(
            Expr::add(q.clone(), Expr::real(1, 2)),
            Expr::real(1, 1),
        )]);
        assert!(s.entails(&pc, &Expr::eq(q, Expr::real(1, 2))));
    }

    #[test]
    fn seq_expansion_decides_small_lengths() {
        let s = solver();
        let sv = Expr::var("s", Sort::seq(Sort::Int));
        // len(s) = 2 and at(s,0) = at(s,1) and at(s,0) != at(s,1): unsat.
        let pc = pc_of(vec![
            Expr::eq(Expr::seq_len(sv.clone()), Expr::int(2)),
            Expr::eq(
                Expr::seq_at(sv.clone(), Expr::int(0)),
                Expr::seq_at(sv.clone(), Expr::int(1)),
            ),
            Expr::not(Expr::eq(
                Expr::seq_at(sv.clone(), Expr::int(0)),
                Expr::seq_at(sv, Expr::int(1)),
            )),
        ]);
        assert_eq!(s.sat(&pc), SatResult::Unsat);
    }

    #[test]
    fn update_then_read_back() {
        let s = solver();
        let sv = Expr::var("s", Sort::seq(Sort::Int));
        let i = ivar("i");
        let pc = pc_of(vec![
            Expr::le(Expr::int(0), i.clone()),
            Expr::lt(i.clone(), Expr::seq_len(sv.clone())),
        ]);
        let updated = Expr::seq_update(sv, i.clone(), Expr::int(7));
        let goal = Expr::eq(Expr::seq_at(updated, i), Expr::int(7));
        assert!(s.entails(&pc, &goal));
    }

    #[test]
    fn simplify_is_idempotent_on_samples() {
        let s = solver();
        let sv = Expr::var("s", Sort::seq(Sort::Int));
        let samples = vec![
            Expr::add(ivar("x"), Expr::int(0)),
            Expr::seq_len(Expr::seq_prepend(ivar("e"), sv.clone())),
            Expr::not(Expr::lt(ivar("x"), ivar("y"))),
            Expr::seq_drop(Expr::seq_drop(sv, Expr::int(1)), Expr::int(1)),
        ];
        for e in samples {
            let once = s.simplify(&e);
            let twice = s.simplify(&once);
            assert_eq!(once, twice, "not idempotent on {e}");
        }
    }

    #[test]
    fn in_units_of_multiples() {
        let s = solver();
        let t = Ty::Int(crate::types::IntTy::I32);
        let n = ivar("n");
        let bytes = Expr::mul(Expr::size_of(t.clone()), n.clone());
        assert_eq!(s.in_units_of(&bytes, &t), Some(n.clone()));
        let mixed = Expr::add(bytes, Expr::int(1));
        assert_eq!(s.in_units_of(&mixed, &t), None);
        let two = Expr::mul(Expr::int(2), Expr::size_of(t.clone()));
        assert_eq!(s.in_units_of(&two, &t), Some(Expr::int(2)));
    }

    #[test]
    fn compare_detects_order() {
        let s = solver();
        let x = ivar("x");
        let pc = pc_of(vec![Expr::lt(x.clone(), Expr::int(5))]);
        assert_eq!(s.compare(&pc, &x, &Expr::int(5)), Cmp::Lt);
        assert_eq!(s.compare(&pc, &Expr::int(5), &x), Cmp::Gt);
        assert_eq!(s.compare(&pc, &x, &x), Cmp::Eq);
        assert_eq!(
            s.compare(&pc, &x, &Expr::var("y", Sort::Int)),
            Cmp::Unknown
        );
    }

    #[test]
    fn normalize_under_substitutes_solved_vars() {
        let s = solver();
        let x = ivar("x");
        let pc = pc_of(vec![Expr::eq(x.clone(), Expr::int(4))]);
        let e = Expr::add(x, Expr::int(1));
        assert_eq!(s.normalize_under(&pc, &e), Expr::int(5));
    }

    // --- SMT-LIB backend, exercised against stub executables ---

    fn stub_solver(dir: &std::path::Path, name: &str, body: &str) -> Solver {
        use std::os::unix::fs::PermissionsExt;
        let path = dir.join(name);
        std::fs::write(&path, body).unwrap();
        std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
        let mut opts = Options::default();
        opts.solver = crate::config::SolverChoice::SmtLib(path.display().to_string());
        Solver::new(&opts)
    }

    #[test]
    fn smtlib_answer_is_trusted_for_scalar_queries() {
        let dir = tempfile::tempdir().unwrap();
        // This query is satisfiable, but the stub says unsat; a scalar
        // query must be decided by the configured backend.
        let s = stub_solver(dir.path(), "stub-unsat.sh", "#!/bin/sh\ncat > /dev/null\necho unsat\n");
        let pc = pc_of(vec![Expr::le(ivar("x"), Expr::int(3))]);
        assert_eq!(s.sat(&pc), SatResult::Unsat);

        let s2 = stub_solver(dir.path(), "stub-sat.sh", "#!/bin/sh\ncat > /dev/null\necho sat\n");
        let contradiction = pc_of(vec![
            Expr::lt(ivar("x"), Expr::int(0)),
            Expr::lt(Expr::int(0), ivar("x")),
        ]);
        assert_eq!(s2.sat(&contradiction), SatResult::Sat);
    }

    #[test]
    fn smtlib_spawn_failure_falls_back_to_builtin() {
        let mut opts = Options::default();
        opts.solver =
            crate::config::SolverChoice::SmtLib("/nonexistent/gril-smt-backend".to_string());
        let s = Solver::new(&opts);
        let contradiction = pc_of(vec![
            Expr::lt(ivar("x"), Expr::int(0)),
            Expr::lt(Expr::int(0), ivar("x")),
        ]);
        assert_eq!(s.sat(&contradiction), SatResult::Unsat);
    }

    #[test]
    fn smtlib_garbage_output_falls_back_to_builtin() {
        let dir = tempfile::tempdir().unwrap();
        let s = stub_solver(dir.path(), "stub-bad.sh", "#!/bin/sh\ncat > /dev/null\necho flurgh\n");
        let contradiction = pc_of(vec![
            Expr::lt(ivar("x"), Expr::int(0)),
            Expr::lt(Expr::int(0), ivar("x")),
        ]);
        assert_eq!(s.sat(&contradiction), SatResult::Unsat);
    }

    #[test]
    fn smtlib_skips_sequence_queries() {
        let dir = tempfile::tempdir().unwrap();
        // The stub would answer sat, but sequence queries never reach it.
        let s = stub_solver(dir.path(), "stub-sat2.sh", "#!/bin/sh\ncat > /dev/null\necho sat\n");
        let sv = Expr::var("s", Sort::seq(Sort::Int));
        let pc = pc_of(vec![
            Expr::eq(Expr::seq_len(sv.clone()), Expr::int(1)),
            Expr::eq(sv, Expr::seq_empty(Sort::Int)),
        ]);
        assert_eq!(s.sat(&pc), SatResult::Unsat);
    }

    #[test]
    fn smtlib_script_shape() {
        let x = ivar("x");
        let facts = vec![Expr::le(x.clone(), Expr::int(3)), Expr::not(Expr::eq(x, Expr::int(2)))];
        assert!(facts.iter().all(smt::translatable));
        let sv = Expr::var("s", Sort::seq(Sort::Int));
        assert!(!smt::translatable(&Expr::eq(
            Expr::seq_len(sv),
            Expr::int(0)
        )));
    }
}
