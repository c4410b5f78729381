//! Production and consumption of compound assertions over full symbolic
//! states, with matching plans, fold/unfold, guarded unfold/fold, and
//! specification application.
//!
//! Consumption follows a matching plan: atoms are ordered so every
//! out-binder is learned before it is used (ins before outs), and planning
//! fails rather than search. Execution is backtrack-free across committed
//! atoms; only disjunct selection retries, and then only against the
//! pre-attempt resources. Missing atoms trigger bounded recovery: related
//! folded predicates are unfolded, guarded predicates are opened at the
//! cost of their lifetime token, and open borrows are closed when a token
//! or lifetime atom demands it.

use std::collections::{BTreeMap, BTreeSet};

use crate::asn::{Asn, Binder, Spec};
use crate::config::Options;
use crate::heap::{HeapEnv, HeapOut};
use crate::preds::{collect_locs, ClosingToken, PredDef, PredKind, PredTable};
use crate::solver::Solver;
use crate::state::SymState;
use crate::term::{EKind, Expr, LocRef};
use crate::types::TypeTable;

/// Everything the engine needs besides the state: the solver, the type
/// table, the predicate definitions, and the heuristic budgets.
pub struct Env<'a> {
    pub solver: &'a Solver,
    pub table: &'a TypeTable,
    pub preds: &'a PredTable,
    pub opts: &'a Options,
}

impl<'a> Env<'a> {
    pub fn henv(&self) -> HeapEnv<'a> {
        HeapEnv {
            solver: self.solver,
            table: self.table,
        }
    }

    pub(crate) fn def(&self, name: &str) -> Result<&'a PredDef, String> {
        self.preds
            .get(name)
            .ok_or_else(|| format!("unknown predicate {name}"))
    }
}

/// Learned bindings from consumption: binder name to value.
pub type Binds = BTreeMap<String, Expr>;

/// Per-path consume outcome: the advanced state paired with either the
/// learned bindings or a diagnostic naming the first unmatchable atom.
pub type ConsumeBranches = Vec<(SymState, Result<Binds, String>)>;

/// Reserved binding-key prefix recording the values met by prophecy
/// controller atoms, used by the trial close that drives automatic
/// prophecy updates. `%` keeps it outside the source identifier space.
pub const PCTRL_SEEN: &str = "%pctrl:";

// --- production ---

/// Produce `asn` under `binds` into the state. Branches may vanish
/// (contradictory resources or observations); an `Err` means the
/// assertion itself is malformed for production.
pub fn produce(
    env: &Env,
    st: SymState,
    asn: &Asn,
    binds: &Binds,
) -> Result<Vec<SymState>, String> {
    produce_closed(env, st, &asn.subst(binds))
}

fn produce_closed(env: &Env, mut st: SymState, asn: &Asn) -> Result<Vec<SymState>, String> {
    match asn {
        Asn::Emp => Ok(vec![st]),
        Asn::Star(parts) => {
            let mut frontier = vec![st];
            for p in parts {
                let mut next = Vec::new();
                for s in frontier {
                    next.extend(produce_closed(env, s, p)?);
                }
                frontier = next;
            }
            Ok(frontier)
        }
        Asn::Exists(bs, body) => {
            let mut m = Binds::new();
            for b in bs {
                let e = if b.proph {
                    Expr::proph(st.fresh_pcy(&b.name), b.sort.clone())
                } else {
                    st.fresh_var(&b.name, b.sort.clone())
                };
                m.insert(b.name.clone(), e);
            }
            produce_closed(env, st, &body.subst(&m))
        }
        Asn::Pure(e) => {
            st.assume(e.clone());
            if st.pruned(env.solver) {
                Ok(Vec::new())
            } else {
                Ok(vec![st])
            }
        }
        Asn::PointsTo { addr, ty, val } => {
            let brs = st
                .heap
                .produce_points_to(&env.henv(), &st.pc, addr, ty, val.clone());
            adopt_produce(&st, asn, brs)
        }
        Asn::Many {
            addr,
            elem,
            count,
            vals,
        } => {
            let brs = st
                .heap
                .produce_many(&env.henv(), &st.pc, addr, elem, count, vals);
            adopt_produce(
                &st,
                asn,
                brs.into_iter()
                    .map(|(h, pc, r)| (h, pc, r.map(|_| ())))
                    .collect(),
            )
        }
        Asn::UninitMany { addr, elem, count } => {
            let brs = st.heap.produce_uninit(&env.henv(), &st.pc, addr, elem, count);
            adopt_produce(
                &st,
                asn,
                brs.into_iter()
                    .map(|(h, pc, r)| (h, pc, r.map(|_| ())))
                    .collect(),
            )
        }
        Asn::Pred { name, args } => {
            let def = env.def(name)?;
            if args.len() != def.params.len() {
                return Err(format!("predicate {name} expects {} arguments", def.params.len()));
            }
            if def.expand_on_produce && !def.disjuncts.is_empty() {
                let m = def.param_map(args);
                let mut out = Vec::new();
                for d in def.disjuncts.clone() {
                    out.extend(produce_closed(env, st.clone(), &d.subst(&m))?);
                }
                return Ok(out);
            }
            st.preds.add_entry(name.clone(), None, args.clone());
            Ok(vec![st])
        }
        Asn::Borrow { pred, lft, args } => {
            let def = env.def(pred)?;
            if def.kind != PredKind::Borrow {
                return Err(format!("predicate {pred} is not borrow-flagged"));
            }
            if args.len() != def.params.len() {
                return Err(format!("predicate {pred} expects {} arguments", def.params.len()));
            }
            st.preds.add_entry(pred.clone(), Some(lft.clone()), args.clone());
            Ok(vec![st])
        }
        Asn::Obs(e) => {
            let brs = st.pcy.observe(env.solver, &st.pc, e.clone());
            Ok(adopt_pcy(&st, brs))
        }
        Asn::Alive { lft, frac } => {
            let brs = st.lft.produce_alive(env.solver, &st.pc, lft, frac.clone());
            Ok(brs
                .into_iter()
                .map(|(ctx, pc)| {
                    let mut s2 = st.clone();
                    s2.lft = ctx;
                    s2.pc = pc;
                    s2
                })
                .collect())
        }
        Asn::Dead { lft } => {
            let brs = st.lft.produce_dead(env.solver, &st.pc, lft);
            Ok(brs
                .into_iter()
                .map(|(ctx, pc)| {
                    let mut s2 = st.clone();
                    s2.lft = ctx;
                    s2.pc = pc;
                    s2
                })
                .collect())
        }
        Asn::VObs { pcy, val } => {
            let x = proph_name(env, &st, pcy)?;
            let brs = st.pcy.produce_observer(env.solver, &st.pc, &x, val.clone());
            Ok(adopt_pcy(&st, brs))
        }
        Asn::PCtrl { pcy, val } => {
            let x = proph_name(env, &st, pcy)?;
            let brs = st.pcy.produce_controller(env.solver, &st.pc, &x, val.clone());
            Ok(adopt_pcy(&st, brs))
        }
        Asn::ClosingTok {
            pred,
            lft,
            frac,
            args,
        } => {
            st.preds.add_token(ClosingToken {
                pred: pred.clone(),
                lft: lft.clone(),
                frac: frac.clone(),
                args: args.clone(),
            });
            Ok(vec![st])
        }
        Asn::Wand { .. } => Err(
            "a magic wand can only be established by proving its extraction obligation".into(),
        ),
    }
}

fn adopt_produce(
    st: &SymState,
    asn: &Asn,
    brs: crate::heap::Branches<()>,
) -> Result<Vec<SymState>, String> {
    let mut out = Vec::new();
    for (h, pc, r) in brs {
        match r {
            HeapOut::Ok(()) => {
                let mut s2 = st.clone();
                s2.heap = h;
                s2.pc = pc;
                out.push(s2);
            }
            HeapOut::Fail(m) => return Err(format!("producing {asn}: {m}")),
            HeapOut::Miss => return Err(format!("producing {asn}: resource shape conflict")),
            // Ownership beyond the allocation bounds has no model.
            HeapOut::Ub(_) => {}
        }
    }
    Ok(out)
}

fn adopt_pcy(st: &SymState, brs: Vec<(crate::prophecy::PcyCtx, crate::solver::Pc)>) -> Vec<SymState> {
    brs.into_iter()
        .map(|(ctx, pc)| {
            let mut s2 = st.clone();
            s2.pcy = ctx;
            s2.pc = pc;
            s2
        })
        .collect()
}

fn proph_name(env: &Env, st: &SymState, e: &Expr) -> Result<String, String> {
    if let EKind::Proph(n, _) = e.kind() {
        return Ok(n.clone());
    }
    let n = env.solver.normalize_under(&st.pc, e);
    if let EKind::Proph(n, _) = n.kind() {
        return Ok(n.clone());
    }
    Err(format!("{e} does not denote a prophecy variable"))
}

// --- consumption ---

/// Consume `asn` from the state, learning the `outs` binders. Free
/// variables of `asn` must be bound by `binds` or listed in `outs`.
pub fn consume(
    env: &Env,
    st: SymState,
    asn: &Asn,
    binds: &Binds,
    outs: &[Binder],
) -> ConsumeBranches {
    consume_inner(env, st, asn, binds, outs, false)
}

fn consume_inner(
    env: &Env,
    mut st: SymState,
    asn: &Asn,
    binds: &Binds,
    outs: &[Binder],
    lenient: bool,
) -> ConsumeBranches {
    let mut out_set: BTreeSet<String> = outs.iter().map(|b| b.name.clone()).collect();
    let mut atoms = Vec::new();
    flatten_into(&mut st, asn, &mut out_set, &mut atoms);
    let bound: BTreeSet<String> = binds.keys().cloned().collect();
    let order = match plan(env, &atoms, &bound, &out_set) {
        Ok(o) => o,
        Err(m) => return vec![(st, Err(m))],
    };
    let mut frontier: ConsumeBranches = vec![(st, Ok(binds.clone()))];
    for i in order {
        let mut next = Vec::new();
        for (s, r) in frontier {
            match r {
                Ok(b) => next.extend(consume_atom_rec(
                    env,
                    s,
                    &atoms[i],
                    &b,
                    &out_set,
                    env.opts.unfold_budget,
                    env.opts.gunfold_budget,
                    lenient,
                )),
                Err(_) => next.push((s, r)),
            }
        }
        frontier = next;
    }
    frontier
}

/// Flatten stars and peel existentials, renaming peeled binders apart so
/// nested bodies cannot capture caller bindings.
fn flatten_into(st: &mut SymState, a: &Asn, outs: &mut BTreeSet<String>, atoms: &mut Vec<Asn>) {
    match a {
        Asn::Emp => {}
        Asn::Star(parts) => parts.iter().for_each(|p| flatten_into(st, p, outs, atoms)),
        Asn::Exists(bs, body) => {
            let mut m = Binds::new();
            for b in bs {
                let fresh = st.fresh_name(&b.name);
                m.insert(b.name.clone(), Expr::var(fresh.clone(), b.sort.clone()));
                outs.insert(fresh);
            }
            flatten_into(st, &body.subst(&m), outs, atoms);
        }
        other => atoms.push(other.clone()),
    }
}

/// Variables of `e` that are not yet bound. Engine-created names (those
/// carrying `%`) are ambient symbolic constants denoting themselves;
/// any other variable that is neither bound nor an out-binder is an
/// error in the assertion.
fn unknowns(
    e: &Expr,
    bound: &BTreeSet<String>,
    outs: &BTreeSet<String>,
) -> Result<BTreeSet<String>, String> {
    let mut vs = BTreeSet::new();
    e.collect_vars(&mut vs);
    let mut out = BTreeSet::new();
    for v in vs {
        if bound.contains(&v) {
            continue;
        }
        if outs.contains(&v) {
            out.insert(v);
        } else if !v.contains('%') {
            return Err(format!("unbound variable {v}"));
        }
    }
    Ok(out)
}

/// The unbound out-variable a value position can learn, if it is a bare
/// variable; compound expressions must be fully bound instead.
fn learnable_var(e: &Expr, bound: &BTreeSet<String>, outs: &BTreeSet<String>) -> Option<String> {
    match e.kind() {
        EKind::Var(n, _) if !bound.contains(n) && outs.contains(n) => Some(n.clone()),
        _ => None,
    }
}

/// Dataflow of one atom: variables it requires bound, variables it learns.
fn atom_flow(
    env: &Env,
    a: &Asn,
    bound: &BTreeSet<String>,
    outs: &BTreeSet<String>,
) -> Result<(BTreeSet<String>, BTreeSet<String>), String> {
    let mut req = BTreeSet::new();
    let mut learns = BTreeSet::new();
    let value_pos = |e: &Expr, req: &mut BTreeSet<String>, learns: &mut BTreeSet<String>| {
        match learnable_var(e, bound, outs) {
            Some(x) => {
                learns.insert(x);
                Ok(())
            }
            None => {
                req.extend(unknowns(e, bound, outs)?);
                Ok::<(), String>(())
            }
        }
    };
    match a {
        Asn::Emp => {}
        Asn::Pure(e) | Asn::Obs(e) => {
            // An equality defining a single unbound variable learns it.
            let mut defined = false;
            if let EKind::Eq(l, r) = e.kind() {
                for (x, other) in [(l, r), (r, l)] {
                    if let Some(v) = learnable_var(x, bound, outs) {
                        let u = unknowns(other, bound, outs)?;
                        if !u.contains(&v) {
                            req.extend(u);
                            learns.insert(v);
                            defined = true;
                            break;
                        }
                    }
                }
            }
            if !defined {
                req.extend(unknowns(e, bound, outs)?);
            }
        }
        Asn::PointsTo { addr, val, .. } => {
            req.extend(unknowns(addr, bound, outs)?);
            value_pos(val, &mut req, &mut learns)?;
        }
        Asn::Many {
            addr, count, vals, ..
        } => {
            req.extend(unknowns(addr, bound, outs)?);
            req.extend(unknowns(count, bound, outs)?);
            value_pos(vals, &mut req, &mut learns)?;
        }
        Asn::UninitMany { addr, count, .. } => {
            req.extend(unknowns(addr, bound, outs)?);
            req.extend(unknowns(count, bound, outs)?);
        }
        Asn::Pred { name, args } => {
            let def = env.def(name)?;
            if args.len() != def.params.len() {
                return Err(format!("predicate {name} expects {} arguments", def.params.len()));
            }
            // An in-parameter that is itself a bare unknown is learned from
            // the matched entry; the remaining ins anchor the match.
            for (i, arg) in args.iter().enumerate() {
                if def.ins.contains(&i) && learnable_var(arg, bound, outs).is_none() {
                    req.extend(unknowns(arg, bound, outs)?);
                } else {
                    value_pos(arg, &mut req, &mut learns)?;
                }
            }
        }
        Asn::Borrow { pred, lft, args } => {
            let def = env.def(pred)?;
            if args.len() != def.params.len() {
                return Err(format!("predicate {pred} expects {} arguments", def.params.len()));
            }
            req.extend(unknowns(lft, bound, outs)?);
            for (i, arg) in args.iter().enumerate() {
                if def.ins.contains(&i) && learnable_var(arg, bound, outs).is_none() {
                    req.extend(unknowns(arg, bound, outs)?);
                } else {
                    value_pos(arg, &mut req, &mut learns)?;
                }
            }
        }
        Asn::Alive { lft, frac } => {
            req.extend(unknowns(lft, bound, outs)?);
            value_pos(frac, &mut req, &mut learns)?;
        }
        Asn::Dead { lft } => req.extend(unknowns(lft, bound, outs)?),
        Asn::VObs { pcy, val } | Asn::PCtrl { pcy, val } => {
            req.extend(unknowns(pcy, bound, outs)?);
            value_pos(val, &mut req, &mut learns)?;
        }
        Asn::ClosingTok {
            lft, frac, args, ..
        } => {
            req.extend(unknowns(lft, bound, outs)?);
            for arg in args {
                req.extend(unknowns(arg, bound, outs)?);
            }
            value_pos(frac, &mut req, &mut learns)?;
        }
        Asn::Wand { .. } => {
            return Err("magic wand atoms cannot be consumed directly".into());
        }
        Asn::Star(..) | Asn::Exists(..) => unreachable!("atoms are flattened"),
    }
    Ok((req, learns))
}

/// Order atoms so every variable is learned before it is required.
fn plan(
    env: &Env,
    atoms: &[Asn],
    bound: &BTreeSet<String>,
    outs: &BTreeSet<String>,
) -> Result<Vec<usize>, String> {
    let mut bound = bound.clone();
    let mut placed = vec![false; atoms.len()];
    let mut order = Vec::with_capacity(atoms.len());
    while order.len() < atoms.len() {
        let mut progressed = false;
        for (i, a) in atoms.iter().enumerate() {
            if placed[i] {
                continue;
            }
            let (req, learns) = atom_flow(env, a, &bound, outs)?;
            if req.is_subset(&bound) {
                placed[i] = true;
                order.push(i);
                bound.extend(learns);
                progressed = true;
            }
        }
        if !progressed {
            let stuck = atoms
                .iter()
                .enumerate()
                .find(|(i, _)| !placed[*i])
                .map(|(_, a)| a.to_string())
                .unwrap_or_default();
            return Err(format!(
                "cannot derive a matching plan: {stuck} awaits unlearned variables"
            ));
        }
    }
    Ok(order)
}

/// Equality discharge for a matched value against an expected one:
/// provable passes, refutable fails, otherwise the path splits.
fn eq_check(
    env: &Env,
    st: SymState,
    found: &Expr,
    expected: &Expr,
    binds: Binds,
    diag: String,
) -> ConsumeBranches {
    let e = Expr::eq(found.clone(), expected.clone());
    if st.entails(env.solver, &e) {
        return vec![(st, Ok(binds))];
    }
    if st.entails(env.solver, &Expr::not(e.clone())) {
        return vec![(st, Err(diag))];
    }
    let mut out = Vec::new();
    let mut yes = st.clone();
    yes.assume(e.clone());
    if !yes.pruned(env.solver) {
        out.push((yes, Ok(binds)));
    }
    let mut no = st;
    no.assume(Expr::not(e));
    if !no.pruned(env.solver) {
        out.push((no, Err(diag)));
    }
    out
}

/// Bind a value position: learn a bare out-variable, otherwise check
/// provable equality against the already-bound expectation.
fn bind_value(
    env: &Env,
    st: SymState,
    pos: &Expr,
    found: Expr,
    mut binds: Binds,
    outs: &BTreeSet<String>,
    atom: &Asn,
) -> ConsumeBranches {
    let bound: BTreeSet<String> = binds.keys().cloned().collect();
    if let Some(x) = learnable_var(pos, &bound, outs) {
        binds.insert(x, found);
        return vec![(st, Ok(binds))];
    }
    let expected = pos.subst(&binds);
    let diag = format!("value mismatch consuming {atom}: held {found}");
    eq_check(env, st, &found, &expected, binds, diag)
}

/// Consume one atom with bounded recovery on frame miss.
#[allow(clippy::too_many_arguments)]
fn consume_atom_rec(
    env: &Env,
    st: SymState,
    atom: &Asn,
    binds: &Binds,
    outs: &BTreeSet<String>,
    depth: u32,
    gdepth: u32,
    lenient: bool,
) -> ConsumeBranches {
    let results = consume_atom(env, st, atom, binds, outs, lenient);
    let mut out = Vec::new();
    for (st_f, r) in results {
        match r {
            Ok(b) => out.push((st_f, Ok(b))),
            Err(miss) => {
                let recovered =
                    recover(env, &st_f, atom, binds, outs, depth, gdepth, lenient, &miss);
                match recovered {
                    Some(brs) => out.extend(brs),
                    None => out.push((st_f, Err(miss))),
                }
            }
        }
    }
    out
}

/// Attempt recovery actions for a missed atom. Returns `None` when no
/// action applies; otherwise the retried branches (which keep the original
/// diagnostic on persistent failure).
#[allow(clippy::too_many_arguments)]
fn recover(
    env: &Env,
    st: &SymState,
    atom: &Asn,
    binds: &Binds,
    outs: &BTreeSet<String>,
    depth: u32,
    gdepth: u32,
    lenient: bool,
    miss: &str,
) -> Option<ConsumeBranches> {
    let retry = |states: Vec<SymState>, depth: u32, gdepth: u32| -> ConsumeBranches {
        let mut out = Vec::new();
        for s in states {
            out.extend(consume_atom_rec(env, s, atom, binds, outs, depth, gdepth, lenient));
        }
        out
    };
    // Key locations of the atom, for reachability-directed unfolding.
    let locs = atom_locs(env, atom, binds);
    match atom {
        Asn::PointsTo { .. } | Asn::Many { .. } | Asn::UninitMany { .. } => {
            if depth > 0 {
                if let Some(idx) = plain_entry_reaching(env, st, &locs) {
                    if let Ok(states) = unfold_entry(env, st.clone(), idx) {
                        let brs = retry(states, depth - 1, gdepth);
                        if brs.iter().any(|(_, r)| r.is_ok()) {
                            return Some(brs);
                        }
                    }
                }
            }
            if gdepth > 0 {
                if let Some(idx) = guarded_entry_reaching(env, st, &locs) {
                    if let Ok(states) = gunfold_entry(env, st.clone(), idx) {
                        let brs = retry(states, depth, gdepth - 1);
                        if brs.iter().any(|(_, r)| r.is_ok()) {
                            return Some(brs);
                        }
                    }
                }
            }
            None
        }
        Asn::Pred { name, args } => {
            // Unfold a related folded predicate, then retry.
            if depth > 0 {
                if let Some(idx) = plain_entry_reaching(env, st, &locs) {
                    if let Ok(states) = unfold_entry(env, st.clone(), idx) {
                        let brs = retry(states, depth - 1, gdepth);
                        if brs.iter().any(|(_, r)| r.is_ok()) {
                            return Some(brs);
                        }
                    }
                }
            }
            // Consume the definition instead of a folded entry.
            if depth > 0 {
                if let Ok(def) = env.def(name) {
                    if !def.disjuncts.is_empty() {
                        let args: Vec<Expr> = args.iter().map(|a| a.subst(binds)).collect();
                        let brs = try_disjuncts(
                            env,
                            st.clone(),
                            def,
                            &args,
                            binds,
                            outs,
                            depth - 1,
                            gdepth,
                            lenient,
                        );
                        if brs.iter().any(|(_, r)| r.is_ok()) {
                            return Some(brs);
                        }
                    }
                }
            }
            if gdepth > 0 {
                if let Some(idx) = guarded_entry_reaching(env, st, &locs) {
                    if let Ok(states) = gunfold_entry(env, st.clone(), idx) {
                        let brs = retry(states, depth, gdepth - 1);
                        if brs.iter().any(|(_, r)| r.is_ok()) {
                            return Some(brs);
                        }
                    }
                }
            }
            None
        }
        Asn::Borrow { pred, lft, .. } => {
            // The borrow may be open: close it with its token and retry.
            let lft = lft.subst(binds);
            let idx = st.preds.find_token(env.solver, &st.pc, pred, &lft)?;
            let brs = close_borrow_updating(env, st.clone(), idx);
            let mut out = Vec::new();
            let mut any_ok = false;
            for (s2, r) in brs {
                match r {
                    Ok(_) => {
                        let rs = retry(vec![s2], depth, gdepth);
                        any_ok |= rs.iter().any(|(_, r)| r.is_ok());
                        out.extend(rs);
                    }
                    Err(e) => out.push((s2, Err(format!("{miss}; closing failed: {e}")))),
                }
            }
            if any_ok {
                Some(out)
            } else {
                None
            }
        }
        Asn::Alive { lft, .. } => {
            // The missing fraction may be held by an open borrow.
            let lft = lft.subst(binds);
            let idx = st.preds.find_token_for_lft(env.solver, &st.pc, &lft)?;
            let brs = close_borrow_updating(env, st.clone(), idx);
            let mut out = Vec::new();
            let mut any_ok = false;
            for (s2, r) in brs {
                match r {
                    Ok(_) => {
                        let rs = retry(vec![s2], depth, gdepth);
                        any_ok |= rs.iter().any(|(_, r)| r.is_ok());
                        out.extend(rs);
                    }
                    Err(e) => out.push((s2, Err(format!("{miss}; closing failed: {e}")))),
                }
            }
            if any_ok {
                Some(out)
            } else {
                None
            }
        }
        _ => None,
    }
}

/// Heap locations an atom's key expressions mention, after binding.
fn atom_locs(env: &Env, atom: &Asn, binds: &Binds) -> Vec<LocRef> {
    let mut locs = Vec::new();
    let mut add = |e: &Expr| collect_locs(&e.subst(binds), &mut locs);
    match atom {
        Asn::PointsTo { addr, .. }
        | Asn::Many { addr, .. }
        | Asn::UninitMany { addr, .. } => add(addr),
        Asn::Pred { name, args } => {
            if let Ok(def) = env.def(name) {
                for (i, a) in args.iter().enumerate() {
                    if def.ins.contains(&i) {
                        add(a);
                    }
                }
            }
        }
        Asn::Borrow { pred, args, .. } => {
            if let Ok(def) = env.def(pred) {
                for (i, a) in args.iter().enumerate() {
                    if def.ins.contains(&i) {
                        add(a);
                    }
                }
            }
        }
        _ => {}
    }
    locs
}

fn plain_entry_reaching(env: &Env, st: &SymState, locs: &[LocRef]) -> Option<usize> {
    st.preds
        .entries_reaching(locs)
        .into_iter()
        .find(|&i| {
            let e = &st.preds.entries()[i];
            e.guard.is_none()
                && env
                    .preds
                    .get(&e.name)
                    .is_some_and(|d| !d.disjuncts.is_empty())
        })
}

fn guarded_entry_reaching(env: &Env, st: &SymState, locs: &[LocRef]) -> Option<usize> {
    st.preds
        .entries_reaching(locs)
        .into_iter()
        .find(|&i| {
            let e = &st.preds.entries()[i];
            e.guard.is_some()
                && env
                    .preds
                    .get(&e.name)
                    .is_some_and(|d| !d.disjuncts.is_empty())
        })
}

/// Consume one atom against one state. `Err` results carry the state at
/// the failure point so recovery can act on it.
fn consume_atom(
    env: &Env,
    mut st: SymState,
    atom: &Asn,
    binds: &Binds,
    outs: &BTreeSet<String>,
    lenient: bool,
) -> ConsumeBranches {
    let bound: BTreeSet<String> = binds.keys().cloned().collect();
    match atom {
        Asn::Emp => vec![(st, Ok(binds.clone()))],
        Asn::Pure(e) => {
            if let Some((x, v)) = definition_form(e, &bound, outs, binds) {
                let mut b = binds.clone();
                b.insert(x, v);
                return vec![(st, Ok(b))];
            }
            let e = e.subst(binds);
            if st.entails(env.solver, &e) {
                return vec![(st, Ok(binds.clone()))];
            }
            let diag = format!("pure assertion not entailed: ({e})");
            if st.entails(env.solver, &Expr::not(e.clone())) {
                return vec![(st, Err(diag))];
            }
            let mut out = Vec::new();
            let mut yes = st.clone();
            yes.assume(e.clone());
            if !yes.pruned(env.solver) {
                out.push((yes, Ok(binds.clone())));
            }
            st.assume(Expr::not(e));
            if !st.pruned(env.solver) {
                out.push((st, Err(diag)));
            }
            out
        }
        Asn::Obs(e) => {
            let mut b = binds.clone();
            if let Some((x, v)) = definition_form(e, &bound, outs, binds) {
                b.insert(x, v);
            }
            let e = e.subst(&b);
            if st.pcy.entails_observation(env.solver, &st.pc, &e) {
                vec![(st, Ok(b))]
            } else {
                vec![(st, Err(format!("observation not entailed: <{e}>")))]
            }
        }
        Asn::PointsTo { addr, ty, val } => {
            let addr = addr.subst(binds);
            let brs = st.heap.consume_points_to(&env.henv(), &st.pc, &addr, ty);
            let mut out = Vec::new();
            for (h, pc, r) in brs {
                let mut s2 = st.clone();
                s2.heap = h;
                s2.pc = pc;
                match r {
                    HeapOut::Ok(v) => {
                        out.extend(bind_value(env, s2, val, v, binds.clone(), outs, atom))
                    }
                    HeapOut::Miss => out.push((s2, Err(format!("missing resource: {atom}")))),
                    HeapOut::Fail(m) => out.push((s2, Err(format!("consuming {atom}: {m}")))),
                    HeapOut::Ub(u) => out.push((
                        s2,
                        Err(format!("{atom} requests cells outside the allocation ({u})")),
                    )),
                }
            }
            out
        }
        Asn::Many {
            addr,
            elem,
            count,
            vals,
        } => {
            let addr = addr.subst(binds);
            let count = count.subst(binds);
            let brs = st.heap.consume_many(&env.henv(), &st.pc, &addr, elem, &count);
            let mut out = Vec::new();
            for (h, pc, r) in brs {
                let mut s2 = st.clone();
                s2.heap = h;
                s2.pc = pc;
                match r {
                    HeapOut::Ok(vs) => {
                        out.extend(bind_value(env, s2, vals, vs, binds.clone(), outs, atom))
                    }
                    HeapOut::Miss => out.push((s2, Err(format!("missing resource: {atom}")))),
                    HeapOut::Fail(m) => out.push((s2, Err(format!("consuming {atom}: {m}")))),
                    HeapOut::Ub(u) => out.push((
                        s2,
                        Err(format!("{atom} requests cells outside the allocation ({u})")),
                    )),
                }
            }
            out
        }
        Asn::UninitMany { addr, elem, count } => {
            let addr = addr.subst(binds);
            let count = count.subst(binds);
            let brs = st
                .heap
                .consume_uninit(&env.henv(), &st.pc, &addr, elem, &count);
            let mut out = Vec::new();
            for (h, pc, r) in brs {
                let mut s2 = st.clone();
                s2.heap = h;
                s2.pc = pc;
                match r {
                    HeapOut::Ok(_) => out.push((s2, Ok(binds.clone()))),
                    HeapOut::Miss => out.push((s2, Err(format!("missing resource: {atom}")))),
                    HeapOut::Fail(m) => out.push((s2, Err(format!("consuming {atom}: {m}")))),
                    HeapOut::Ub(u) => out.push((
                        s2,
                        Err(format!("{atom} requests cells outside the allocation ({u})")),
                    )),
                }
            }
            out
        }
        Asn::Pred { name, args } => {
            let def = match env.def(name) {
                Ok(d) => d,
                Err(m) => return vec![(st, Err(m))],
            };
            let (fixed, learned) = split_ins(def, args, binds, &bound, outs);
            match st.preds.find_entry(env.solver, &st.pc, name, None, &fixed) {
                Some(idx) => {
                    let entry = st.preds.remove_entry(idx);
                    consume_entry_args(env, st, &learned, args, &entry.args, binds, outs, atom)
                }
                None => vec![(st, Err(format!("missing resource: {atom}")))],
            }
        }
        Asn::Borrow { pred, lft, args } => {
            let def = match env.def(pred) {
                Ok(d) => d,
                Err(m) => return vec![(st, Err(m))],
            };
            let lft_b = lft.subst(binds);
            let (fixed, learned) = split_ins(def, args, binds, &bound, outs);
            match st
                .preds
                .find_entry(env.solver, &st.pc, pred, Some(&lft_b), &fixed)
            {
                Some(idx) => {
                    let entry = st.preds.remove_entry(idx);
                    consume_entry_args(env, st, &learned, args, &entry.args, binds, outs, atom)
                }
                None => vec![(st, Err(format!("missing resource: {atom}")))],
            }
        }
        Asn::Alive { lft, frac } => {
            let lft = lft.subst(binds);
            if let Some(x) = learnable_var(frac, &bound, outs) {
                match st.lft.consume_alive_all(env.solver, &st.pc, &lft) {
                    Ok((ctx, q)) => {
                        let mut b = binds.clone();
                        b.insert(x, q);
                        st.lft = ctx;
                        vec![(st, Ok(b))]
                    }
                    Err(m) => vec![(st, Err(format!("consuming {atom}: {m}")))],
                }
            } else {
                let q = frac.subst(binds);
                match st.lft.consume_alive(env.solver, &st.pc, &lft, &q) {
                    Ok(ctx) => {
                        st.lft = ctx;
                        vec![(st, Ok(binds.clone()))]
                    }
                    Err(m) => vec![(st, Err(format!("consuming {atom}: {m}")))],
                }
            }
        }
        Asn::Dead { lft } => {
            let lft = lft.subst(binds);
            match st.lft.consume_dead(env.solver, &st.pc, &lft) {
                Ok(()) => vec![(st, Ok(binds.clone()))],
                Err(m) => vec![(st, Err(format!("consuming {atom}: {m}")))],
            }
        }
        Asn::VObs { pcy, val } => {
            let x = match proph_name(env, &st, &pcy.subst(binds)) {
                Ok(x) => x,
                Err(m) => return vec![(st, Err(m))],
            };
            match st.pcy.consume_observer(&x) {
                Ok((ctx, v)) => {
                    st.pcy = ctx;
                    bind_value(env, st, val, v, binds.clone(), outs, atom)
                }
                Err(m) => vec![(st, Err(format!("consuming {atom}: {m}")))],
            }
        }
        Asn::PCtrl { pcy, val } => {
            let x = match proph_name(env, &st, &pcy.subst(binds)) {
                Ok(x) => x,
                Err(m) => return vec![(st, Err(m))],
            };
            match st.pcy.consume_controller(&x) {
                Ok((ctx, v)) => {
                    st.pcy = ctx;
                    if let Some(xv) = learnable_var(val, &bound, outs) {
                        let mut b = binds.clone();
                        b.insert(xv, v);
                        vec![(st, Ok(b))]
                    } else if lenient {
                        // Trial close: skip the agreement check and record
                        // the value the body demands of the controller, so
                        // the caller can update the prophecy and re-close.
                        let mut b = binds.clone();
                        b.insert(format!("{PCTRL_SEEN}{x}"), val.subst(binds));
                        vec![(st, Ok(b))]
                    } else {
                        bind_value(env, st, val, v, binds.clone(), outs, atom)
                    }
                }
                Err(m) => vec![(st, Err(format!("consuming {atom}: {m}")))],
            }
        }
        Asn::ClosingTok {
            pred,
            lft,
            frac,
            args,
        } => {
            let lft_b = lft.subst(binds);
            let args_b: Vec<Expr> = args.iter().map(|a| a.subst(binds)).collect();
            let found = st.preds.tokens().iter().position(|t| {
                t.pred == *pred
                    && env.solver.entails_eq(&st.pc, &lft_b, &t.lft)
                    && t.args.len() == args_b.len()
                    && t.args
                        .iter()
                        .zip(&args_b)
                        .all(|(a, b)| env.solver.entails_eq(&st.pc, a, b))
            });
            match found {
                Some(idx) => {
                    let tok = st.preds.remove_token(idx);
                    bind_value(env, st, frac, tok.frac, binds.clone(), outs, atom)
                }
                None => vec![(st, Err(format!("missing resource: {atom}")))],
            }
        }
        Asn::Wand { .. } => vec![(
            st,
            Err("magic wand atoms cannot be consumed directly".into()),
        )],
        Asn::Star(..) | Asn::Exists(..) => unreachable!("atoms are flattened"),
    }
}

/// Detect `x == e` (either side) where `x` is a single unbound out-binder
/// and `e` is fully bound; returns the learned binding.
fn definition_form(
    e: &Expr,
    bound: &BTreeSet<String>,
    outs: &BTreeSet<String>,
    binds: &Binds,
) -> Option<(String, Expr)> {
    if let EKind::Eq(l, r) = e.kind() {
        for (x, other) in [(l, r), (r, l)] {
            if let Some(v) = learnable_var(x, bound, outs) {
                let mut u = BTreeSet::new();
                other.collect_vars(&mut u);
                // Usable when no unlearned out remains: ambient constants
                // of the state are as determined as bound variables.
                if u.iter().all(|n| bound.contains(n) || !outs.contains(n)) {
                    return Some((v, other.subst(binds)));
                }
            }
        }
    }
    None
}

/// Match a removed entry's out positions against the atom's out
/// Split a predicate atom's in-positions for entry matching: ins whose
/// argument is already determined anchor the search, ins that are bare
/// unknowns are learned from whichever entry the anchors select.
fn split_ins(
    def: &PredDef,
    args: &[Expr],
    binds: &Binds,
    bound: &BTreeSet<String>,
    outs: &BTreeSet<String>,
) -> (Vec<(usize, Expr)>, Vec<usize>) {
    let mut fixed = Vec::new();
    let mut learned: Vec<usize> = def.outs();
    for &i in &def.ins {
        if learnable_var(&args[i], bound, outs).is_some() {
            learned.push(i);
        } else {
            fixed.push((i, args[i].subst(binds)));
        }
    }
    learned.sort_unstable();
    (fixed, learned)
}

/// Match the unanchored argument positions of a removed entry against the
/// atom's expressions: learn bare variables, check bound expectations.
#[allow(clippy::too_many_arguments)]
fn consume_entry_args(
    env: &Env,
    st: SymState,
    positions: &[usize],
    args: &[Expr],
    entry_args: &[Expr],
    binds: &Binds,
    outs: &BTreeSet<String>,
    atom: &Asn,
) -> ConsumeBranches {
    let mut frontier = vec![(st, Ok(binds.clone()))];
    for &j in positions {
        let mut next = Vec::new();
        for (s, r) in frontier {
            match r {
                Ok(b) => next.extend(bind_value(
                    env,
                    s,
                    &args[j],
                    entry_args[j].clone(),
                    b,
                    outs,
                    atom,
                )),
                Err(_) => next.push((s, r)),
            }
        }
        frontier = next;
    }
    frontier
}

/// Try each disjunct of a definition in textual order, consuming its body
/// directly. A path that fails one disjunct retries the next against the
/// pre-attempt resources under the path condition it accumulated.
#[allow(clippy::too_many_arguments)]
fn try_disjuncts(
    env: &Env,
    st: SymState,
    def: &PredDef,
    args: &[Expr],
    binds: &Binds,
    outs: &BTreeSet<String>,
    depth: u32,
    gdepth: u32,
    lenient: bool,
) -> ConsumeBranches {
    try_disjuncts_from(env, st, def, args, binds, outs, depth, gdepth, lenient, 0)
}

#[allow(clippy::too_many_arguments)]
fn try_disjuncts_from(
    env: &Env,
    st: SymState,
    def: &PredDef,
    args: &[Expr],
    binds: &Binds,
    outs: &BTreeSet<String>,
    depth: u32,
    gdepth: u32,
    lenient: bool,
    dix: usize,
) -> ConsumeBranches {
    if dix >= def.disjuncts.len() {
        return vec![(st, Err(format!("no disjunct of {} applies", def.name)))];
    }
    let m = def.param_map(args);
    let body = def.disjuncts[dix].subst(&m);
    let snapshot = st.clone();
    let brs = consume_body(env, st, &body, binds, outs, depth, gdepth, lenient);
    let mut out = Vec::new();
    for (s2, r) in brs {
        match r {
            Ok(b) => out.push((s2, Ok(b))),
            Err(_) => {
                // Retry the next disjunct on the pre-attempt resources,
                // keeping the path condition learned so far.
                let mut retry = snapshot.clone();
                retry.pc = s2.pc.clone();
                out.extend(try_disjuncts_from(
                    env, retry, def, args, binds, outs, depth, gdepth, lenient,
                    dix + 1,
                ));
            }
        }
    }
    out
}

/// Consume a definition body: flatten (renaming its existentials apart),
/// plan, and execute with the given budgets.
#[allow(clippy::too_many_arguments)]
fn consume_body(
    env: &Env,
    mut st: SymState,
    body: &Asn,
    binds: &Binds,
    outs: &BTreeSet<String>,
    depth: u32,
    gdepth: u32,
    lenient: bool,
) -> ConsumeBranches {
    let mut out_set = outs.clone();
    let mut atoms = Vec::new();
    flatten_into(&mut st, body, &mut out_set, &mut atoms);
    let bound: BTreeSet<String> = binds.keys().cloned().collect();
    let order = match plan(env, &atoms, &bound, &out_set) {
        Ok(o) => o,
        Err(m) => return vec![(st, Err(m))],
    };
    let mut frontier: ConsumeBranches = vec![(st, Ok(binds.clone()))];
    for i in order {
        let mut next = Vec::new();
        for (s, r) in frontier {
            match r {
                Ok(b) => next.extend(consume_atom_rec(
                    env, s, &atoms[i], &b, &out_set, depth, gdepth, lenient,
                )),
                Err(_) => next.push((s, r)),
            }
        }
        frontier = next;
    }
    frontier
}

// --- ghost commands: fold, unfold, gunfold, gfold ---

/// Fold a predicate instance: consume one disjunct of its definition and
/// add the folded entry. Unbound out arguments are learned from the body.
pub fn fold(
    env: &Env,
    st: SymState,
    name: &str,
    args: &[Expr],
    binds: &Binds,
    outs: &[Binder],
) -> ConsumeBranches {
    let def = match env.def(name) {
        Ok(d) => d,
        Err(m) => return vec![(st, Err(m))],
    };
    if def.is_abstract() {
        return vec![(st, Err(format!("predicate {name} is abstract")))];
    }
    if args.len() != def.params.len() {
        return vec![(
            st,
            Err(format!("predicate {name} expects {} arguments", def.params.len())),
        )];
    }
    let out_set: BTreeSet<String> = outs.iter().map(|b| b.name.clone()).collect();
    let args_b: Vec<Expr> = args.iter().map(|a| a.subst(binds)).collect();
    let brs = try_disjuncts(
        env,
        st,
        def,
        &args_b,
        binds,
        &out_set,
        env.opts.unfold_budget,
        env.opts.gunfold_budget,
        false,
    );
    brs.into_iter()
        .map(|(mut s, r)| match r {
            Ok(b) => {
                let resolved: Vec<Expr> = args_b.iter().map(|a| a.subst(&b)).collect();
                s.preds.add_entry(name.to_string(), None, resolved);
                (s, Ok(b))
            }
            Err(e) => (s, Err(format!("cannot fold {name}: {e}"))),
        })
        .collect()
}

/// Unfold a folded predicate entry matched on its in-parameters,
/// producing its definition disjunct by disjunct.
pub fn unfold(
    env: &Env,
    st: SymState,
    name: &str,
    args: &[Expr],
    binds: &Binds,
) -> Result<Vec<SymState>, String> {
    let def = env.def(name)?;
    if def.is_abstract() {
        return Err(format!("predicate {name} is abstract"));
    }
    if args.len() != def.params.len() {
        return Err(format!("predicate {name} expects {} arguments", def.params.len()));
    }
    let fixed: Vec<(usize, Expr)> = def
        .ins
        .iter()
        .map(|&i| (i, args[i].subst(binds)))
        .collect();
    let idx = st
        .preds
        .find_entry(env.solver, &st.pc, name, None, &fixed)
        .ok_or_else(|| format!("no folded instance of {name} matches"))?;
    unfold_entry(env, st, idx)
}

/// Unfold the entry at `idx`, branching over the definition's disjuncts.
pub fn unfold_entry(env: &Env, mut st: SymState, idx: usize) -> Result<Vec<SymState>, String> {
    let entry = st.preds.remove_entry(idx);
    let def = env.def(&entry.name)?;
    if def.is_abstract() {
        return Err(format!("predicate {} is abstract", entry.name));
    }
    let m = def.param_map(&entry.args);
    let mut out = Vec::new();
    for d in &def.disjuncts {
        out.extend(produce_closed(env, st.clone(), &d.subst(&m))?);
    }
    Ok(out)
}

/// Open a guarded predicate: consume the whole held fraction of its
/// lifetime token, produce the definition, and mint the closing token.
pub fn gunfold(
    env: &Env,
    st: SymState,
    pred: &str,
    lft: &Expr,
    args: &[Expr],
    binds: &Binds,
) -> Result<Vec<SymState>, String> {
    let def = env.def(pred)?;
    if args.len() != def.params.len() {
        return Err(format!("predicate {pred} expects {} arguments", def.params.len()));
    }
    let lft = lft.subst(binds);
    let fixed: Vec<(usize, Expr)> = def
        .ins
        .iter()
        .map(|&i| (i, args[i].subst(binds)))
        .collect();
    let idx = st
        .preds
        .find_entry(env.solver, &st.pc, pred, Some(&lft), &fixed)
        .ok_or_else(|| format!("no borrow &{lft} {pred}(..) is held"))?;
    gunfold_entry(env, st, idx)
}

/// Open the guarded entry at `idx`.
pub fn gunfold_entry(env: &Env, mut st: SymState, idx: usize) -> Result<Vec<SymState>, String> {
    let entry = st.preds.remove_entry(idx);
    let lft = entry
        .guard
        .clone()
        .expect("gunfold requires a guarded entry");
    let def = env.def(&entry.name)?;
    let (ctx, q) = st
        .lft
        .consume_alive_all(env.solver, &st.pc, &lft)
        .map_err(|m| format!("cannot open borrow &{lft} {}(..): {m}", entry.name))?;
    st.lft = ctx;
    let m = def.param_map(&entry.args);
    let mut out = Vec::new();
    for d in &def.disjuncts {
        for mut s2 in produce_closed(env, st.clone(), &d.subst(&m))? {
            s2.preds.add_token(ClosingToken {
                pred: entry.name.clone(),
                lft: lft.clone(),
                frac: q.clone(),
                args: entry.args.clone(),
            });
            out.push(s2);
        }
    }
    Ok(out)
}

/// Close a borrow: consume its closing token and the definition (in
/// positions fixed by the token, out positions relearned), re-add the
/// guarded entry, and restore the lifetime token fraction.
pub fn gfold(env: &Env, mut st: SymState, token_idx: usize, lenient: bool) -> ConsumeBranches {
    let tok = st.preds.remove_token(token_idx);
    let def = match env.def(&tok.pred) {
        Ok(d) => d,
        Err(m) => return vec![(st, Err(m))],
    };
    // Fix ins from the token; relearn outs from the reformed body.
    let mut args = Vec::with_capacity(def.params.len());
    let mut out_binders = BTreeSet::new();
    for (i, p) in def.params.iter().enumerate() {
        if def.ins.contains(&i) {
            args.push(tok.args[i].clone());
        } else {
            let name = st.fresh_name(&p.name);
            out_binders.insert(name.clone());
            args.push(Expr::var(name, p.sort.clone()));
        }
    }
    let binds = Binds::new();
    let brs = try_disjuncts(
        env,
        st,
        def,
        &args,
        &binds,
        &out_binders,
        env.opts.unfold_budget,
        env.opts.gunfold_budget,
        lenient,
    );
    let mut out = Vec::new();
    for (s2, r) in brs {
        match r {
            Ok(b) => {
                let resolved: Vec<Expr> = args.iter().map(|a| a.subst(&b)).collect();
                let mut s3 = s2;
                s3.preds
                    .add_entry(tok.pred.clone(), Some(tok.lft.clone()), resolved);
                let lbrs = s3
                    .lft
                    .produce_alive(env.solver, &s3.pc, &tok.lft, tok.frac.clone());
                for (ctx, pc) in lbrs {
                    let mut s4 = s3.clone();
                    s4.lft = ctx;
                    s4.pc = pc;
                    out.push((s4, Ok(b.clone())));
                }
            }
            Err(e) => out.push((
                s2,
                Err(format!("cannot close borrow &{} {}(..): {e}", tok.lft, tok.pred)),
            )),
        }
    }
    out
}

/// Close a borrow the way the prophecy discipline expects: read the value
/// the reformed body demands of each controller sealed inside it and
/// repoint the prophecy to that value before the entry re-forms. A store
/// through a mutable reference leaves the agreed value stale; every
/// engine-driven close travels through here so the agreed value tracks the
/// heap. Structural and pure invariants of the body are still checked.
pub fn close_borrow_updating(env: &Env, st: SymState, token_idx: usize) -> ConsumeBranches {
    let brs = gfold(env, st, token_idx, true);
    let mut out = Vec::new();
    for (s2, r) in brs {
        match r {
            Ok(b) => {
                let mut s3 = s2;
                let mut err = None;
                for (k, v) in &b {
                    if let Some(x) = k.strip_prefix(PCTRL_SEEN) {
                        match s3.pcy.update_closed(x, v.clone()) {
                            Ok(ctx) => s3.pcy = ctx,
                            Err(e) => {
                                err = Some(e);
                                break;
                            }
                        }
                    }
                }
                match err {
                    None => out.push((s3, Ok(b))),
                    Some(e) => {
                        out.push((s3, Err(format!("repointing prophecy at close: {e}"))))
                    }
                }
            }
            Err(e) => out.push((s2, Err(e))),
        }
    }
    out
}

// --- specification application ---

/// Apply a specification: consume `requires` (learning the universals),
/// then produce `ensures` with fresh existentials. The caller pre-binds
/// argument names and, for functions, the return-value name.
pub fn apply_spec(env: &Env, st: SymState, spec: &Spec, binds: &Binds) -> ConsumeBranches {
    let brs = consume(env, st, &spec.requires, binds, &spec.universals);
    let mut out = Vec::new();
    for (s2, r) in brs {
        match r {
            Ok(b) => {
                let ens = Asn::exists(spec.existentials.clone(), spec.ensures.clone());
                match produce(env, s2.clone(), &ens, &b) {
                    Ok(states) => out.extend(states.into_iter().map(|s3| (s3, Ok(b.clone())))),
                    Err(e) => out.push((s2, Err(format!("producing ensures: {e}")))),
                }
            }
            Err(e) => out.push((s2, Err(format!("requires not consumable: {e}")))),
        }
    }
    out
}

/// Apply a lemma: specification application without a return value.
pub fn apply_lemma(env: &Env, st: SymState, spec: &Spec, binds: &Binds) -> ConsumeBranches {
    apply_spec(env, st, spec, binds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::term::Sort;
    use crate::types::{IntTy, Ty};

    struct Fix {
        solver: Solver,
        table: TypeTable,
        preds: PredTable,
        opts: Options,
    }

    impl Fix {
        fn new() -> Fix {
            let opts = Options::default();
            let solver = Solver::new(&opts);
            let mut preds = PredTable::new();

            // cell(p; v) = p |-> v
            let mut cell = PredDef::new(
                "cell",
                vec![
                    Binder::new("p", Sort::Ptr),
                    Binder::new("v", Sort::Int),
                ],
                vec![0],
            );
            cell.disjuncts = vec![Asn::pts(
                Expr::var("p", Sort::Ptr),
                Ty::Int(IntTy::U64),
                Expr::var("v", Sort::Int),
            )];
            preds.insert("cell".into(), cell);

            // listy(h; r): empty or a single boxed element.
            let mut listy = PredDef::new(
                "listy",
                vec![
                    Binder::new("h", Sort::opt(Sort::Ptr)),
                    Binder::new("r", Sort::seq(Sort::Int)),
                ],
                vec![0],
            );
            listy.disjuncts = vec![
                Asn::star(vec![
                    Asn::pure(Expr::eq(Expr::var("h", Sort::opt(Sort::Ptr)), Expr::none(Sort::Ptr))),
                    Asn::pure(Expr::eq(Expr::var("r", Sort::seq(Sort::Int)), Expr::seq_empty(Sort::Int))),
                ]),
                Asn::exists(
                    vec![Binder::new("b", Sort::Ptr), Binder::new("v", Sort::Int)],
                    Asn::star(vec![
                        Asn::pure(Expr::eq(
                            Expr::var("h", Sort::opt(Sort::Ptr)),
                            Expr::some(Expr::var("b", Sort::Ptr)),
                        )),
                        Asn::pts(
                            Expr::var("b", Sort::Ptr),
                            Ty::Int(IntTy::U64),
                            Expr::var("v", Sort::Int),
                        ),
                        Asn::pure(Expr::eq(
                            Expr::var("r", Sort::seq(Sort::Int)),
                            Expr::seq_unit(Expr::var("v", Sort::Int)),
                        )),
                    ]),
                ),
            ];
            preds.insert("listy".into(), listy);

            // mut_cell(p) = exists v. p |-> v, borrow-flagged.
            let mut mc = PredDef::new("mut_cell", vec![Binder::new("p", Sort::Ptr)], vec![0]);
            mc.kind = PredKind::Borrow;
            mc.disjuncts = vec![Asn::exists(
                vec![Binder::new("v", Sort::Int)],
                Asn::pts(
                    Expr::var("p", Sort::Ptr),
                    Ty::Int(IntTy::U64),
                    Expr::var("v", Sort::Int),
                ),
            )];
            preds.insert("mut_cell".into(), mc);

            // inv42(p) = exists v. p |-> v * (v = 42), borrow-flagged.
            let mut inv = PredDef::new("inv42", vec![Binder::new("p", Sort::Ptr)], vec![0]);
            inv.kind = PredKind::Borrow;
            inv.disjuncts = vec![Asn::exists(
                vec![Binder::new("v", Sort::Int)],
                Asn::star(vec![
                    Asn::pts(
                        Expr::var("p", Sort::Ptr),
                        Ty::Int(IntTy::U64),
                        Expr::var("v", Sort::Int),
                    ),
                    Asn::pure(Expr::eq(Expr::var("v", Sort::Int), Expr::int(42))),
                ]),
            )];
            preds.insert("inv42".into(), inv);

            // opaque(p): abstract, no definition.
            let mut ab = PredDef::new("opaque", vec![Binder::new("p", Sort::Ptr)], vec![0]);
            ab.kind = PredKind::Abstract;
            preds.insert("opaque".into(), ab);

            Fix {
                solver,
                table: TypeTable::default(),
                preds,
                opts,
            }
        }

        fn env(&self) -> Env<'_> {
            Env {
                solver: &self.solver,
                table: &self.table,
                preds: &self.preds,
                opts: &self.opts,
            }
        }
    }

    fn ptr(name: &str) -> Expr {
        Expr::ptr(LocRef::Sym(name.into()), vec![])
    }

    fn u64t() -> Ty {
        Ty::Int(IntTy::U64)
    }

    fn ok_branches(brs: &ConsumeBranches) -> Vec<&(SymState, Result<Binds, String>)> {
        brs.iter().filter(|(_, r)| r.is_ok()).collect()
    }

    #[test]
    fn produce_then_consume_roundtrip_points_to() {
        let f = Fix::new();
        let env = f.env();
        let st = SymState::new();
        let asn = Asn::pts(ptr("l"), u64t(), Expr::int(7));
        let states = produce(&env, st, &asn, &Binds::new()).unwrap();
        assert_eq!(states.len(), 1);

        let want = Asn::exists(
            vec![Binder::new("w", Sort::Int)],
            Asn::pts(ptr("l"), u64t(), Expr::var("w", Sort::Int)),
        );
        let brs = consume(&env, states.into_iter().next().unwrap(), &want, &Binds::new(), &[]);
        let oks = ok_branches(&brs);
        assert_eq!(oks.len(), 1);
        let (st2, r) = oks[0];
        let b = r.as_ref().unwrap();
        let learned = b.values().next().unwrap();
        assert_eq!(learned.as_int_lit(), Some(7));
        assert!(st2.heap.owns_nothing());
    }

    #[test]
    fn consume_value_mismatch_splits_on_unknown() {
        let f = Fix::new();
        let env = f.env();
        let mut st = SymState::new();
        let vh = st.fresh_var("v", Sort::Int);
        let asn = Asn::pts(ptr("l"), u64t(), vh.clone());
        let states = produce(&env, st, &asn, &Binds::new()).unwrap();

        let want = Asn::pts(ptr("l"), u64t(), Expr::int(5));
        let brs = consume(&env, states.into_iter().next().unwrap(), &want, &Binds::new(), &[]);
        assert_eq!(brs.len(), 2);
        let ok = brs.iter().find(|(_, r)| r.is_ok()).unwrap();
        assert!(ok.0.entails(&f.solver, &Expr::eq(vh.clone(), Expr::int(5))));
        let err = brs.iter().find(|(_, r)| r.is_err()).unwrap();
        assert!(err.0.entails(&f.solver, &Expr::not(Expr::eq(vh, Expr::int(5)))));
    }

    #[test]
    fn plan_orders_value_learning_before_pure_use() {
        let f = Fix::new();
        let env = f.env();
        let st = SymState::new();
        let states = produce(
            &env,
            st,
            &Asn::pts(ptr("l"), u64t(), Expr::int(9)),
            &Binds::new(),
        )
        .unwrap();

        // Textually the pure atom comes first but needs y, which only the
        // points-to can teach.
        let want = Asn::exists(
            vec![Binder::new("x", Sort::Int), Binder::new("y", Sort::Int)],
            Asn::star(vec![
                Asn::pure(Expr::eq(
                    Expr::var("x", Sort::Int),
                    Expr::add(Expr::var("y", Sort::Int), Expr::int(1)),
                )),
                Asn::pts(ptr("l"), u64t(), Expr::var("y", Sort::Int)),
            ]),
        );
        let brs = consume(&env, states.into_iter().next().unwrap(), &want, &Binds::new(), &[]);
        let oks = ok_branches(&brs);
        assert_eq!(oks.len(), 1);
        let b = oks[0].1.as_ref().unwrap();
        let x = b.iter().find(|(k, _)| k.starts_with("x%")).unwrap().1;
        assert_eq!(x.as_int_lit(), Some(10));
    }

    #[test]
    fn plan_rejects_unbound_variables() {
        let f = Fix::new();
        let env = f.env();
        let st = SymState::new();
        let want = Asn::pts(ptr("l"), u64t(), Expr::var("nowhere", Sort::Int));
        let brs = consume(&env, st, &want, &Binds::new(), &[]);
        assert_eq!(brs.len(), 1);
        let err = brs[0].1.as_ref().unwrap_err();
        assert!(err.contains("unbound variable nowhere"), "{err}");
    }

    #[test]
    fn fold_unfold_round_trip() {
        let f = Fix::new();
        let env = f.env();
        let st = SymState::new();
        let states = produce(
            &env,
            st,
            &Asn::pts(ptr("l"), u64t(), Expr::int(7)),
            &Binds::new(),
        )
        .unwrap();

        let args = [ptr("l"), Expr::var("w", Sort::Int)];
        let brs = fold(
            &env,
            states.into_iter().next().unwrap(),
            "cell",
            &args,
            &Binds::new(),
            &[Binder::new("w", Sort::Int)],
        );
        let oks = ok_branches(&brs);
        assert_eq!(oks.len(), 1);
        let folded = &oks[0].0;
        assert!(folded.heap.owns_nothing());
        assert_eq!(folded.preds.entries().len(), 1);
        assert_eq!(folded.preds.entries()[0].args[1].as_int_lit(), Some(7));

        let back = unfold(&env, folded.clone(), "cell", &args, &Binds::new()).unwrap();
        assert_eq!(back.len(), 1);
        assert!(back[0].preds.is_empty());
        let brs = consume(
            &env,
            back.into_iter().next().unwrap(),
            &Asn::pts(ptr("l"), u64t(), Expr::int(7)),
            &Binds::new(),
            &[],
        );
        assert_eq!(ok_branches(&brs).len(), 1);
    }

    #[test]
    fn fold_picks_disjunct_and_learns_repr() {
        let f = Fix::new();
        let env = f.env();

        // Empty head: first disjunct applies, r learned as the empty sequence.
        let st = SymState::new();
        let mut binds = Binds::new();
        binds.insert("h".into(), Expr::none(Sort::Ptr));
        let args = [Expr::var("h", Sort::opt(Sort::Ptr)), Expr::var("r", Sort::seq(Sort::Int))];
        let brs = fold(&env, st, "listy", &args, &binds, &[Binder::new("r", Sort::seq(Sort::Int))]);
        let oks = ok_branches(&brs);
        assert_eq!(oks.len(), 1);
        let entry = &oks[0].0.preds.entries()[0];
        assert_eq!(entry.args[1], Expr::seq_empty(Sort::Int));

        // Non-empty head: first disjunct refutes, second consumes the cell.
        let st = SymState::new();
        let states = produce(
            &env,
            st,
            &Asn::pts(ptr("b"), u64t(), Expr::int(5)),
            &Binds::new(),
        )
        .unwrap();
        let mut binds = Binds::new();
        binds.insert("h".into(), Expr::some(ptr("b")));
        let brs = fold(
            &env,
            states.into_iter().next().unwrap(),
            "listy",
            &args,
            &binds,
            &[Binder::new("r", Sort::seq(Sort::Int))],
        );
        let oks = ok_branches(&brs);
        assert_eq!(oks.len(), 1);
        let (st2, r) = oks[0];
        assert!(st2.heap.owns_nothing());
        let learned = r.as_ref().unwrap().get("r").unwrap();
        assert_eq!(*learned, Expr::seq_unit(Expr::int(5)));
    }

    #[test]
    fn unfold_abstract_predicate_errors() {
        let f = Fix::new();
        let env = f.env();
        let mut st = SymState::new();
        st.preds.add_entry("opaque", None, vec![ptr("l")]);
        let err = unfold(&env, st, "opaque", &[ptr("l")], &Binds::new()).unwrap_err();
        assert!(err.contains("abstract"), "{err}");
    }

    #[test]
    fn gunfold_then_gfold_round_trips_and_token_is_single_use() {
        let f = Fix::new();
        let env = f.env();
        let k = Expr::lft("k");

        let mut st = SymState::new();
        st.preds.add_entry("mut_cell", Some(k.clone()), vec![ptr("l")]);
        let mut states = produce(
            &env,
            st,
            &Asn::star(vec![
                Asn::pts(ptr("l"), u64t(), Expr::int(7)),
                Asn::Alive {
                    lft: k.clone(),
                    frac: Expr::real(1, 1),
                },
            ]),
            &Binds::new(),
        )
        .unwrap();
        // Hide the raw cell inside the borrow: drop it from the heap view.
        let st = states.remove(0);
        let brs = consume(
            &env,
            st,
            &Asn::exists(
                vec![Binder::new("w", Sort::Int)],
                Asn::pts(ptr("l"), u64t(), Expr::var("w", Sort::Int)),
            ),
            &Binds::new(),
            &[],
        );
        let st = brs.into_iter().find(|(_, r)| r.is_ok()).unwrap().0;

        let opened = gunfold(&env, st, "mut_cell", &k, &[ptr("l")], &Binds::new()).unwrap();
        assert_eq!(opened.len(), 1);
        let st = opened.into_iter().next().unwrap();
        assert_eq!(st.preds.tokens().len(), 1);
        assert!(st.preds.entries().is_empty());
        assert!(st.lft.state_of(&f.solver, &st.pc, &k).is_none());
        assert!(!st.heap.is_empty());

        let idx = st.preds.find_token(&f.solver, &st.pc, "mut_cell", &k).unwrap();
        let brs = gfold(&env, st, idx, false);
        let oks = ok_branches(&brs);
        assert_eq!(oks.len(), 1);
        let closed = &oks[0].0;
        assert!(closed.heap.owns_nothing());
        assert_eq!(closed.preds.entries().len(), 1);
        assert!(closed.preds.tokens().is_empty());
        // The full token is held again.
        let held = closed.lft.state_of(&f.solver, &closed.pc, &k);
        assert!(held.is_some());
        // The token was consumed: no second close is possible.
        assert!(closed.preds.find_token(&f.solver, &closed.pc, "mut_cell", &k).is_none());
    }

    #[test]
    fn gunfold_dead_lifetime_fails() {
        let f = Fix::new();
        let env = f.env();
        let k = Expr::lft("k");
        let mut st = SymState::new();
        st.preds.add_entry("mut_cell", Some(k.clone()), vec![ptr("l")]);
        let mut states = produce(&env, st, &Asn::Dead { lft: k.clone() }, &Binds::new()).unwrap();
        let st = states.remove(0);
        let err = gunfold(&env, st, "mut_cell", &k, &[ptr("l")], &Binds::new()).unwrap_err();
        assert!(err.contains("cannot open"), "{err}");
    }

    #[test]
    fn gfold_with_broken_invariant_fails() {
        let f = Fix::new();
        let env = f.env();
        let k = Expr::lft("k");
        let mut st = SymState::new();
        st.preds.add_entry("inv42", Some(k.clone()), vec![ptr("l")]);
        let mut states = produce(
            &env,
            st,
            &Asn::Alive {
                lft: k.clone(),
                frac: Expr::real(1, 1),
            },
            &Binds::new(),
        )
        .unwrap();
        let st = states.remove(0);
        let opened = gunfold(&env, st, "inv42", &k, &[ptr("l")], &Binds::new()).unwrap();
        assert_eq!(opened.len(), 1);
        let st = opened.into_iter().next().unwrap();

        // Break the invariant: replace the stored 42 with 7.
        let brs = consume(
            &env,
            st,
            &Asn::exists(
                vec![Binder::new("w", Sort::Int)],
                Asn::pts(ptr("l"), u64t(), Expr::var("w", Sort::Int)),
            ),
            &Binds::new(),
            &[],
        );
        let st = brs.into_iter().find(|(_, r)| r.is_ok()).unwrap().0;
        let mut states = produce(
            &env,
            st,
            &Asn::pts(ptr("l"), u64t(), Expr::int(7)),
            &Binds::new(),
        )
        .unwrap();
        let st = states.remove(0);

        let idx = st.preds.find_token(&f.solver, &st.pc, "inv42", &k).unwrap();
        let brs = gfold(&env, st, idx, false);
        assert!(brs.iter().all(|(_, r)| r.is_err()));
        let err = brs[0].1.as_ref().unwrap_err();
        assert!(err.contains("cannot close borrow"), "{err}");
    }

    #[test]
    fn consume_auto_unfolds_on_points_to_miss() {
        let f = Fix::new();
        let env = f.env();
        let mut st = SymState::new();
        st.preds.add_entry("cell", None, vec![ptr("l"), Expr::int(7)]);

        let want = Asn::exists(
            vec![Binder::new("w", Sort::Int)],
            Asn::pts(ptr("l"), u64t(), Expr::var("w", Sort::Int)),
        );
        let brs = consume(&env, st, &want, &Binds::new(), &[]);
        let oks = ok_branches(&brs);
        assert_eq!(oks.len(), 1);
        let (st2, r) = oks[0];
        let learned = r.as_ref().unwrap().values().next().unwrap();
        assert_eq!(learned.as_int_lit(), Some(7));
        assert!(st2.preds.is_empty());
        assert!(st2.heap.owns_nothing());
    }

    #[test]
    fn consume_auto_opens_borrow_and_leaves_token() {
        let f = Fix::new();
        let env = f.env();
        let k = Expr::lft("k");

        // The cell exists only inside the borrow; the heap starts bare.
        let mut st = SymState::new();
        st.preds.add_entry("mut_cell", Some(k.clone()), vec![ptr("l")]);
        let mut states = produce(
            &env,
            st,
            &Asn::Alive {
                lft: k.clone(),
                frac: Expr::real(1, 1),
            },
            &Binds::new(),
        )
        .unwrap();
        let st = states.remove(0);

        let want = Asn::exists(
            vec![Binder::new("w", Sort::Int)],
            Asn::pts(ptr("l"), u64t(), Expr::var("w", Sort::Int)),
        );
        let brs = consume(&env, st, &want, &Binds::new(), &[]);
        let oks = ok_branches(&brs);
        assert_eq!(oks.len(), 1);
        let st2 = &oks[0].0;
        assert_eq!(st2.preds.tokens().len(), 1, "closing token left for the ghost step");
        assert!(st2.preds.entries().is_empty());
        assert!(st2.lft.state_of(&f.solver, &st2.pc, &k).is_none());
    }

    #[test]
    fn consume_lifetime_token_auto_closes_borrow() {
        let f = Fix::new();
        let env = f.env();
        let k = Expr::lft("k");
        let mut st = SymState::new();
        st.preds.add_entry("mut_cell", Some(k.clone()), vec![ptr("l")]);
        let mut states = produce(
            &env,
            st,
            &Asn::star(vec![
                Asn::pts(ptr("l"), u64t(), Expr::int(7)),
                Asn::Alive {
                    lft: k.clone(),
                    frac: Expr::real(1, 1),
                },
            ]),
            &Binds::new(),
        )
        .unwrap();
        let st = states.remove(0);
        let brs = consume(
            &env,
            st,
            &Asn::exists(
                vec![Binder::new("w", Sort::Int)],
                Asn::pts(ptr("l"), u64t(), Expr::var("w", Sort::Int)),
            ),
            &Binds::new(),
            &[],
        );
        let st = brs.into_iter().find(|(_, r)| r.is_ok()).unwrap().0;
        let opened = gunfold(&env, st, "mut_cell", &k, &[ptr("l")], &Binds::new()).unwrap();
        let st = opened.into_iter().next().unwrap();
        // The token fraction now sits in a closing token, not the context.
        assert!(st.lft.state_of(&f.solver, &st.pc, &k).is_none());

        // Demanding the token forces the borrow shut.
        let want = Asn::Alive {
            lft: k.clone(),
            frac: Expr::var("q", Sort::Real),
        };
        let brs = consume(&env, st, &want, &Binds::new(), &[Binder::new("q", Sort::Real)]);
        let oks = ok_branches(&brs);
        assert_eq!(oks.len(), 1);
        let (st2, r) = oks[0];
        let q = r.as_ref().unwrap().get("q").unwrap();
        assert!(f.solver.entails_eq(&st2.pc, q, &Expr::real(1, 1)));
        assert!(st2.preds.tokens().is_empty());
        assert_eq!(st2.preds.entries().len(), 1);
    }

    #[test]
    fn apply_spec_learns_universals_and_freshens_existentials() {
        let f = Fix::new();
        let env = f.env();
        let st = SymState::new();
        let mut states = produce(
            &env,
            st,
            &Asn::pts(ptr("l"), u64t(), Expr::int(5)),
            &Binds::new(),
        )
        .unwrap();
        let st = states.remove(0);

        // forall a. { p |-> a } f() { p |-> a + 1 }
        let spec = Spec {
            universals: vec![Binder::new("a", Sort::Int)],
            requires: Asn::pts(ptr("l"), u64t(), Expr::var("a", Sort::Int)),
            existentials: vec![],
            ensures: Asn::pts(
                ptr("l"),
                u64t(),
                Expr::add(Expr::var("a", Sort::Int), Expr::int(1)),
            ),
        };
        let brs = apply_spec(&env, st, &spec, &Binds::new());
        let oks = ok_branches(&brs);
        assert_eq!(oks.len(), 1);
        let (st2, r) = oks[0];
        assert_eq!(r.as_ref().unwrap().get("a").unwrap().as_int_lit(), Some(5));
        let brs = consume(
            &env,
            st2.clone(),
            &Asn::pts(ptr("l"), u64t(), Expr::int(6)),
            &Binds::new(),
            &[],
        );
        assert_eq!(ok_branches(&brs).len(), 1);
    }

    #[test]
    fn pure_consume_splits_on_unknown_guard() {
        let f = Fix::new();
        let env = f.env();
        let mut st = SymState::new();
        let vh = st.fresh_var("v", Sort::Int);
        let want = Asn::pure(Expr::le(vh.clone(), Expr::int(10)));
        let brs = consume(&env, st, &want, &Binds::new(), &[]);
        assert_eq!(brs.len(), 2);
        assert!(brs.iter().any(|(s, r)| {
            r.is_ok() && s.entails(&f.solver, &Expr::le(vh.clone(), Expr::int(10)))
        }));
        assert!(brs.iter().any(|(s, r)| {
            r.is_err() && s.entails(&f.solver, &Expr::gt(vh.clone(), Expr::int(10)))
        }));
    }

    #[test]
    fn prophecy_halves_produce_and_consume() {
        let f = Fix::new();
        let env = f.env();
        let mut st = SymState::new();
        let x = Expr::proph(st.fresh_pcy("x"), Sort::Int);
        let mut binds = Binds::new();
        binds.insert("x".into(), x.clone());

        let asn = Asn::star(vec![
            Asn::VObs {
                pcy: Expr::var("x", Sort::Int),
                val: Expr::int(5),
            },
            Asn::PCtrl {
                pcy: Expr::var("x", Sort::Int),
                val: Expr::int(5),
            },
        ]);
        let states = produce(&env, st, &asn, &binds).unwrap();
        assert_eq!(states.len(), 1);
        let st = states.into_iter().next().unwrap();

        let want = Asn::exists(
            vec![Binder::new("w", Sort::Int), Binder::new("w2", Sort::Int)],
            Asn::star(vec![
                Asn::VObs {
                    pcy: Expr::var("x", Sort::Int),
                    val: Expr::var("w", Sort::Int),
                },
                Asn::PCtrl {
                    pcy: Expr::var("x", Sort::Int),
                    val: Expr::var("w2", Sort::Int),
                },
            ]),
        );
        let brs = consume(&env, st, &want, &binds, &[]);
        let oks = ok_branches(&brs);
        assert_eq!(oks.len(), 1);
        let (st2, r) = oks[0];
        let b = r.as_ref().unwrap();
        let learned: Vec<_> = b
            .iter()
            .filter(|(k, _)| k.starts_with("w"))
            .map(|(_, v)| v.as_int_lit())
            .collect();
        assert_eq!(learned, vec![Some(5), Some(5)]);
        assert!(st2.pcy.value_of("x%0").is_none(), "entry dropped once both halves are gone");
    }

    #[test]
    fn observation_definition_form_learns_prophecy_alias() {
        let f = Fix::new();
        let env = f.env();
        let mut st = SymState::new();
        let x0 = st.fresh_pcy("x");
        let xe = Expr::proph(x0.clone(), Sort::Int);
        st.pcy = st.pcy.create(&x0, Expr::int(5)).unwrap();

        // r is a pair whose future half is the prophecy itself.
        let r = Expr::tup(vec![Expr::int(5), xe.clone()]);
        let mut binds = Binds::new();
        binds.insert("r".into(), r);

        let want = Asn::exists(
            vec![Binder::proph("x", Sort::Int)],
            Asn::star(vec![
                Asn::Obs(Expr::eq(
                    Expr::tup_get(Expr::var("r", Sort::Tuple(vec![Sort::Int, Sort::Int])), 1),
                    Expr::var("x", Sort::Int),
                )),
                Asn::VObs {
                    pcy: Expr::var("x", Sort::Int),
                    val: Expr::tup_get(Expr::var("r", Sort::Tuple(vec![Sort::Int, Sort::Int])), 0),
                },
            ]),
        );
        let brs = consume(&env, st, &want, &binds, &[]);
        let oks = ok_branches(&brs);
        assert_eq!(oks.len(), 1);
        let b = oks[0].1.as_ref().unwrap();
        let learned = b.iter().find(|(k, _)| k.starts_with("x%")).unwrap().1;
        assert_eq!(*learned, xe);
    }

    #[test]
    fn lenient_controller_consume_records_seen_value() {
        let k = Expr::lft("k");

        // pcy_cell(p) = exists v. p |-> v * pctrl(x0, v), borrow-flagged.
        let mut fx = Fix::new();
        let mut pc_cell = PredDef::new("pcy_cell", vec![Binder::new("p", Sort::Ptr)], vec![0]);
        pc_cell.kind = PredKind::Borrow;
        pc_cell.disjuncts = vec![Asn::exists(
            vec![Binder::new("v", Sort::Int)],
            Asn::star(vec![
                Asn::pts(
                    Expr::var("p", Sort::Ptr),
                    Ty::Int(IntTy::U64),
                    Expr::var("v", Sort::Int),
                ),
                Asn::PCtrl {
                    pcy: Expr::proph("x0", Sort::Int),
                    val: Expr::var("v", Sort::Int),
                },
            ]),
        )];
        fx.preds.insert("pcy_cell".into(), pc_cell);
        let env = fx.env();

        let mut st = SymState::new();
        st.pcy = st.pcy.create("x0", Expr::int(7)).unwrap();
        // The controller half lives inside the borrow, not the context.
        let (ctx, _) = st.pcy.consume_controller("x0").unwrap();
        st.pcy = ctx;
        st.preds.add_entry("pcy_cell", Some(k.clone()), vec![ptr("l")]);
        let mut states = produce(
            &env,
            st,
            &Asn::Alive {
                lft: k.clone(),
                frac: Expr::real(1, 1),
            },
            &Binds::new(),
        )
        .unwrap();
        let st = states.remove(0);
        let opened = gunfold(&env, st, "pcy_cell", &k, &[ptr("l")], &Binds::new()).unwrap();
        let st = opened.into_iter().next().unwrap();

        // Store a different value, then trial-close leniently: the close
        // succeeds and reports what the controller now carries.
        let brs = consume(
            &env,
            st,
            &Asn::exists(
                vec![Binder::new("w", Sort::Int)],
                Asn::pts(ptr("l"), u64t(), Expr::var("w", Sort::Int)),
            ),
            &Binds::new(),
            &[],
        );
        let st = brs.into_iter().find(|(_, r)| r.is_ok()).unwrap().0;
        let mut states = produce(
            &env,
            st,
            &Asn::pts(ptr("l"), u64t(), Expr::int(9)),
            &Binds::new(),
        )
        .unwrap();
        let st = states.remove(0);

        let idx = st.preds.find_token(&fx.solver, &st.pc, "pcy_cell", &k).unwrap();
        let brs = gfold(&env, st.clone(), idx, true);
        let oks = ok_branches(&brs);
        assert_eq!(oks.len(), 1);
        let seen = oks[0].1.as_ref().unwrap().get("%pctrl:x0").unwrap();
        assert_eq!(seen.as_int_lit(), Some(9));

        // A strict close of the same state fails on the stale controller.
        let brs = gfold(&env, st, idx, false);
        assert!(brs.iter().all(|(_, r)| r.is_err()));
    }
}
