//! Symbolic heap: block-offset memory with ownership holes.
//!
//! A root is either a typed cell tree (`Typed`) or a laid-out array
//! (`Array`). Trees mirror struct/enum shape with name-keyed children, so
//! nothing depends on field declaration order. Arrays carry an index type
//! and an ordered run of chunks covering `[0, coverage)` in index units;
//! each chunk is missing, uninitialized, or a typed sequence of values.
//!
//! `Missing` marks ownership the current state does not hold: touching it
//! is a recoverable frame miss (the caller may unfold a predicate to get
//! the cells back), never undefined behavior. Reading `Uninit` is UB.
//!
//! Operations branch: an undecided index comparison forks the path
//! condition. Every returned branch carries its own heap and pc.

use crate::diag::UbKind;
use crate::solver::{Cmp, Pc, Solver};
use crate::term::{value_sort, EKind, Expr, LocRef, ProjElem};
use crate::types::{IntTy, Ty, TypeTable};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

pub struct HeapEnv<'a> {
    pub solver: &'a Solver,
    pub table: &'a TypeTable,
}

/// Outcome of a heap operation on one branch.
#[derive(Debug, Clone, PartialEq)]
pub enum HeapOut<T> {
    Ok(T),
    /// The footprint is not in the current state (recoverable).
    Miss,
    /// The state shape contradicts the request (verification failure).
    Fail(String),
    Ub(UbKind),
}

impl<T> HeapOut<T> {
    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> HeapOut<U> {
        match self {
            HeapOut::Ok(v) => HeapOut::Ok(f(v)),
            HeapOut::Miss => HeapOut::Miss,
            HeapOut::Fail(m) => HeapOut::Fail(m),
            HeapOut::Ub(u) => HeapOut::Ub(u),
        }
    }
}

pub type Branches<T> = Vec<(Heap, Pc, HeapOut<T>)>;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Missing,
    Uninit,
    Val(Expr),
    Struct(Ty, BTreeMap<String, Node>),
    EnumV(Ty, String, BTreeMap<String, Node>),
}

impl Node {
    fn fully_owned(&self) -> bool {
        match self {
            Node::Missing => false,
            Node::Uninit | Node::Val(_) => true,
            Node::Struct(_, ch) | Node::EnumV(_, _, ch) => ch.values().all(Node::fully_owned),
        }
    }

    fn owns_nothing(&self) -> bool {
        match self {
            Node::Missing => true,
            Node::Uninit | Node::Val(_) => false,
            Node::Struct(_, ch) | Node::EnumV(_, _, ch) => ch.values().all(Node::owns_nothing),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChunkNode {
    Missing,
    Uninit,
    Vals { elem: Ty, count: Expr, vs: Expr },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    /// Start, in index units.
    pub lo: Expr,
    /// Width, in index units.
    pub width: Expr,
    pub node: ChunkNode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaidOut {
    pub index_ty: Ty,
    /// Allocation size in index units; `None` for predicate-produced
    /// footprints whose allocation bounds are unknown.
    pub extent: Option<Expr>,
    pub chunks: Vec<Chunk>,
}

impl LaidOut {
    fn coverage(&self) -> Expr {
        match self.chunks.last() {
            Some(c) => Expr::add(c.lo.clone(), c.width.clone()),
            None => Expr::int(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Root {
    Typed(Ty, Node),
    Array(LaidOut),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Heap {
    roots: BTreeMap<LocRef, Root>,
    freed: BTreeSet<LocRef>,
}

/// Index-unit width of one `elem` in an array indexed by `index_ty`.
fn conv_factor(index_ty: &Ty, elem: &Ty) -> Option<Expr> {
    if index_ty == elem {
        Some(Expr::int(1))
    } else if *index_ty == Ty::Int(IntTy::U8) {
        Some(Expr::size_of(elem.clone()))
    } else {
        None
    }
}

/// The distinguished dangling address: a well-formed pointer value that
/// owns nothing. Zero-width operations on it succeed.
pub fn dangling_ptr() -> Expr {
    Expr::ptr(LocRef::Conc(0), Vec::new())
}

fn validity_facts(ty: &Ty, value: &Expr, out: &mut Vec<Expr>) {
    match ty {
        Ty::Int(it) => {
            out.push(Expr::le(Expr::int(IntTy::min(*it)), value.clone()));
            out.push(Expr::le(value.clone(), Expr::int(IntTy::max(*it))));
        }
        Ty::Tuple(ts) => {
            for (i, t) in ts.iter().enumerate() {
                validity_facts(t, &Expr::tup_get(value.clone(), i), out);
            }
        }
        _ => {}
    }
}

impl Heap {
    pub fn new() -> Heap {
        Heap::default()
    }

    pub fn roots(&self) -> &BTreeMap<LocRef, Root> {
        &self.roots
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    /// Whether the heap holds no positive resource: every root is a bare
    /// skeleton of missing cells. Freed markers are knowledge, not
    /// ownership, and do not count.
    pub fn owns_nothing(&self) -> bool {
        self.roots.values().all(|r| match r {
            Root::Typed(_, n) => n.owns_nothing(),
            Root::Array(l) => l
                .chunks
                .iter()
                .all(|c| matches!(c.node, ChunkNode::Missing)),
        })
    }

    pub fn insert_root(&mut self, loc: LocRef, root: Root) {
        self.roots.insert(loc, root);
    }

    pub fn remove_root(&mut self, loc: &LocRef) -> Option<Root> {
        self.roots.remove(loc)
    }

    /// A fresh typed allocation, uninitialized.
    pub fn alloc_typed(&mut self, loc: LocRef, ty: Ty) {
        self.roots.insert(loc, Root::Typed(ty, Node::Uninit));
    }

    /// A fresh array allocation of `extent` index units, uninitialized.
    pub fn alloc_array(&mut self, loc: LocRef, index_ty: Ty, extent: Expr) {
        let chunks = if extent.as_int_lit() == Some(0) {
            Vec::new()
        } else {
            vec![Chunk {
                lo: Expr::int(0),
                width: extent.clone(),
                node: ChunkNode::Uninit,
            }]
        };
        self.roots.insert(
            loc,
            Root::Array(LaidOut {
                index_ty,
                extent: Some(extent),
                chunks,
            }),
        );
    }

    /// Find the canonical root key for `loc`: exact match first, then a
    /// path-condition-equal symbolic location.
    fn find_loc(&self, env: &HeapEnv, pc: &Pc, loc: &LocRef) -> Option<LocRef> {
        if self.roots.contains_key(loc) {
            return Some(loc.clone());
        }
        let lp = Expr::ptr(loc.clone(), Vec::new());
        for key in self.roots.keys() {
            if matches!(key, LocRef::Sym(_)) || matches!(loc, LocRef::Sym(_)) {
                let kp = Expr::ptr(key.clone(), Vec::new());
                if env.solver.entails_eq(pc, &lp, &kp) {
                    return Some(key.clone());
                }
            }
        }
        None
    }

    fn is_freed(&self, env: &HeapEnv, pc: &Pc, loc: &LocRef) -> bool {
        if self.freed.contains(loc) {
            return true;
        }
        let lp = Expr::ptr(loc.clone(), Vec::new());
        self.freed.iter().any(|key| {
            (matches!(key, LocRef::Sym(_)) || matches!(loc, LocRef::Sym(_)))
                && env.solver.entails_eq(pc, &lp, &Expr::ptr(key.clone(), Vec::new()))
        })
    }

    // --- loads and stores ---

    pub fn load(&self, env: &HeapEnv, pc: &Pc, ptr: &Expr, ty: &Ty) -> Branches<Expr> {
        self.access_value(env, pc, ptr, ty, AccessKind::Copy)
    }

    /// Load that takes ownership: the source becomes uninitialized.
    pub fn move_load(&self, env: &HeapEnv, pc: &Pc, ptr: &Expr, ty: &Ty) -> Branches<Expr> {
        self.access_value(env, pc, ptr, ty, AccessKind::Move)
    }

    /// Consume a points-to: read the value and drop ownership of the cells.
    pub fn consume_points_to(&self, env: &HeapEnv, pc: &Pc, ptr: &Expr, ty: &Ty) -> Branches<Expr> {
        self.access_value(env, pc, ptr, ty, AccessKind::Consume)
    }

    fn access_value(
        &self,
        env: &HeapEnv,
        pc: &Pc,
        ptr: &Expr,
        ty: &Ty,
        kind: AccessKind,
    ) -> Branches<Expr> {
        let (loc, proj) = match resolve_ptr(env, pc, ptr) {
            Some(p) => p,
            None => return vec![(self.clone(), pc.clone(), HeapOut::Miss)],
        };
        if self.is_freed(env, pc, &loc) {
            return vec![(self.clone(), pc.clone(), HeapOut::Ub(UbKind::UseAfterFree))];
        }
        let key = match self.find_loc(env, pc, &loc) {
            Some(k) => k,
            None => return vec![(self.clone(), pc.clone(), HeapOut::Miss)],
        };
        match self.roots.get(&key).unwrap() {
            Root::Typed(root_ty, _) => {
                let root_ty = root_ty.clone();
                let mut heap = self.clone();
                let Some(Root::Typed(_, node)) = heap.roots.get_mut(&key) else {
                    unreachable!()
                };
                let out = match descend(env, node, &proj, &root_ty) {
                    Err(e) => e,
                    Ok(leaf) => match read_node(env, leaf, ty) {
                        HeapOut::Ok((value, facts)) => {
                            match kind {
                                AccessKind::Copy => {}
                                AccessKind::Move => *leaf = Node::Uninit,
                                AccessKind::Consume => *leaf = Node::Missing,
                            }
                            let mut pc2 = pc.clone();
                            for f in facts {
                                pc2.assume(f);
                            }
                            return vec![(heap, pc2, HeapOut::Ok(value))];
                        }
                        other => other.map(|_| unreachable!()),
                    },
                };
                vec![(self.clone(), pc.clone(), out)]
            }
            Root::Array(la) => {
                let la = la.clone();
                let Some(off) = offsets_to_index(&proj, &la.index_ty) else {
                    return vec![(self.clone(), pc.clone(), HeapOut::Miss)];
                };
                let Some(cf) = conv_factor(&la.index_ty, ty) else {
                    return vec![(self.clone(), pc.clone(), HeapOut::Miss)];
                };
                let mut out = Vec::new();
                for (pc1, res) in isolate(env, pc, &la, &off, &cf) {
                    match res {
                        Err(e) => out.push((self.clone(), pc1, e.map(|_| unreachable!()))),
                        Ok((mut la2, run)) => {
                            let i = run.start;
                            // A value read needs the cell as one typed chunk.
                            if run.len() != 1 {
                                out.push((self.clone(), pc1, HeapOut::Miss));
                                continue;
                            }
                            match &la2.chunks[i].node {
                                ChunkNode::Missing => {
                                    out.push((self.clone(), pc1, HeapOut::Miss))
                                }
                                ChunkNode::Uninit => out.push((
                                    self.clone(),
                                    pc1,
                                    HeapOut::Ub(UbKind::ReadUninit),
                                )),
                                ChunkNode::Vals { elem, vs, .. } => {
                                    if elem != ty {
                                        out.push((self.clone(), pc1, HeapOut::Miss));
                                        continue;
                                    }
                                    let value = Expr::seq_at(vs.clone(), Expr::int(0));
                                    let mut pc2 = pc1;
                                    let mut facts = Vec::new();
                                    validity_facts(ty, &value, &mut facts);
                                    for f in facts {
                                        pc2.assume(f);
                                    }
                                    match kind {
                                        AccessKind::Copy => {}
                                        AccessKind::Move => {
                                            la2.chunks[i].node = ChunkNode::Uninit
                                        }
                                        AccessKind::Consume => {
                                            la2.chunks[i].node = ChunkNode::Missing
                                        }
                                    }
                                    let mut heap = self.clone();
                                    heap.roots.insert(key.clone(), Root::Array(fuse(la2)));
                                    out.push((heap, pc2, HeapOut::Ok(value)));
                                }
                            }
                        }
                    }
                }
                out
            }
        }
    }

    pub fn store(&self, env: &HeapEnv, pc: &Pc, ptr: &Expr, ty: &Ty, value: Expr) -> Branches<()> {
        let (loc, proj) = match resolve_ptr(env, pc, ptr) {
            Some(p) => p,
            None => return vec![(self.clone(), pc.clone(), HeapOut::Miss)],
        };
        if self.is_freed(env, pc, &loc) {
            return vec![(self.clone(), pc.clone(), HeapOut::Ub(UbKind::UseAfterFree))];
        }
        let key = match self.find_loc(env, pc, &loc) {
            Some(k) => k,
            None => return vec![(self.clone(), pc.clone(), HeapOut::Miss)],
        };
        match self.roots.get(&key).unwrap() {
            Root::Typed(root_ty, _) => {
                let root_ty = root_ty.clone();
                let mut heap = self.clone();
                let Some(Root::Typed(_, node)) = heap.roots.get_mut(&key) else {
                    unreachable!()
                };
                let out = match descend(env, node, &proj, &root_ty) {
                    Err(e) => return vec![(self.clone(), pc.clone(), downcast_out(e))],
                    Ok(leaf) => {
                        if matches!(leaf, Node::Missing) {
                            HeapOut::Miss
                        } else {
                            *leaf = make_node(env, ty, value);
                            return vec![(heap, pc.clone(), HeapOut::Ok(()))];
                        }
                    }
                };
                vec![(self.clone(), pc.clone(), out)]
            }
            Root::Array(la) => {
                let la = la.clone();
                let Some(off) = offsets_to_index(&proj, &la.index_ty) else {
                    return vec![(self.clone(), pc.clone(), HeapOut::Miss)];
                };
                let Some(cf) = conv_factor(&la.index_ty, ty) else {
                    return vec![(self.clone(), pc.clone(), HeapOut::Miss)];
                };
                let mut out = Vec::new();
                for (pc1, res) in isolate(env, pc, &la, &off, &cf) {
                    match res {
                        Err(e) => out.push((self.clone(), pc1, e)),
                        Ok((mut la2, run)) => {
                            // A store overwrites whatever typed or uninit
                            // cells cover the range, but never missing ones.
                            if la2.chunks[run.clone()]
                                .iter()
                                .any(|c| matches!(c.node, ChunkNode::Missing))
                            {
                                out.push((self.clone(), pc1, HeapOut::Miss));
                                continue;
                            }
                            let lo = la2.chunks[run.start].lo.clone();
                            la2.chunks.splice(
                                run.clone(),
                                [Chunk {
                                    lo,
                                    width: cf.clone(),
                                    node: ChunkNode::Vals {
                                        elem: ty.clone(),
                                        count: Expr::int(1),
                                        vs: Expr::seq_unit(value.clone()),
                                    },
                                }],
                            );
                            let mut heap = self.clone();
                            heap.roots.insert(key.clone(), Root::Array(fuse(la2)));
                            out.push((heap, pc1, HeapOut::Ok(())));
                        }
                    }
                }
                out
            }
        }
    }

    // --- points-to production ---

    /// Produce ownership of `ptr -> value`. Producing over cells already
    /// owned contradicts separation: that branch vanishes (empty result).
    pub fn produce_points_to(
        &self,
        env: &HeapEnv,
        pc: &Pc,
        ptr: &Expr,
        ty: &Ty,
        value: Expr,
    ) -> Branches<()> {
        let Some((loc, proj)) = resolve_ptr(env, pc, ptr) else {
            return vec![(
                self.clone(),
                pc.clone(),
                HeapOut::Fail(format!("cannot resolve pointer {ptr}")),
            )];
        };
        // Ownership at a freed location contradicts the freed resource.
        if self.is_freed(env, pc, &loc) {
            return Vec::new();
        }
        let key = self
            .find_loc(env, pc, &loc)
            .unwrap_or_else(|| loc.clone());
        if !self.roots.contains_key(&key) {
            // Fresh root built along the projection spine.
            let mut heap = self.clone();
            match build_spine(env, &proj, ty, make_node(env, ty, value)) {
                Some(root) => {
                    heap.roots.insert(key, root);
                    return vec![(heap, pc.clone(), HeapOut::Ok(()))];
                }
                None => {
                    return vec![(
                        self.clone(),
                        pc.clone(),
                        HeapOut::Fail("unsupported projection shape".into()),
                    )]
                }
            }
        }
        match self.roots.get(&key).unwrap() {
            Root::Typed(root_ty, _) => {
                let root_ty = root_ty.clone();
                let mut heap = self.clone();
                let Some(Root::Typed(_, node)) = heap.roots.get_mut(&key) else {
                    unreachable!()
                };
                match descend_expanding(env, node, &proj, &root_ty) {
                    Err(e) => vec![(self.clone(), pc.clone(), e)],
                    Ok(leaf) => {
                        if matches!(leaf, Node::Missing) {
                            *leaf = make_node(env, ty, value);
                            vec![(heap, pc.clone(), HeapOut::Ok(()))]
                        } else {
                            // Both states own the cells: contradiction.
                            Vec::new()
                        }
                    }
                }
            }
            Root::Array(la) => {
                let la = la.clone();
                let Some(off) = offsets_to_index(&proj, &la.index_ty) else {
                    return vec![(
                        self.clone(),
                        pc.clone(),
                        HeapOut::Fail("unsupported projection shape".into()),
                    )];
                };
                let Some(cf) = conv_factor(&la.index_ty, ty) else {
                    return vec![(
                        self.clone(),
                        pc.clone(),
                        HeapOut::Fail("incompatible element type".into()),
                    )];
                };
                let mut out = Vec::new();
                for (pc1, res) in isolate(env, pc, &la, &off, &cf) {
                    match res {
                        Err(e) => out.push((self.clone(), pc1, e)),
                        Ok((mut la2, run)) => {
                            if la2.chunks[run.clone()]
                                .iter()
                                .all(|c| matches!(c.node, ChunkNode::Missing))
                            {
                                let lo = la2.chunks[run.start].lo.clone();
                                la2.chunks.splice(
                                    run.clone(),
                                    [Chunk {
                                        lo,
                                        width: cf.clone(),
                                        node: ChunkNode::Vals {
                                            elem: ty.clone(),
                                            count: Expr::int(1),
                                            vs: Expr::seq_unit(value.clone()),
                                        },
                                    }],
                                );
                                let mut heap = self.clone();
                                heap.roots.insert(key.clone(), Root::Array(fuse(la2)));
                                out.push((heap, pc1, HeapOut::Ok(())));
                            }
                            // Owned overlap: branch vanishes.
                        }
                    }
                }
                out
            }
        }
    }

    // --- ranged array resources ---

    /// Consume `count` initialized `elem` cells starting at `ptr`,
    /// returning their values as a sequence.
    pub fn consume_many(
        &self,
        env: &HeapEnv,
        pc: &Pc,
        ptr: &Expr,
        elem: &Ty,
        count: &Expr,
    ) -> Branches<Expr> {
        let elem_sort = value_sort(elem);
        if env.solver.entails_eq(pc, count, &Expr::int(0)) {
            return vec![(
                self.clone(),
                pc.clone(),
                HeapOut::Ok(Expr::seq_empty(elem_sort)),
            )];
        }
        self.ranged_op(env, pc, ptr, elem, count, RangedKind::ConsumeMany)
    }

    /// Consume `count` uninitialized `elem` cells starting at `ptr`.
    pub fn consume_uninit(
        &self,
        env: &HeapEnv,
        pc: &Pc,
        ptr: &Expr,
        elem: &Ty,
        count: &Expr,
    ) -> Branches<Expr> {
        if env.solver.entails_eq(pc, count, &Expr::int(0)) {
            return vec![(self.clone(), pc.clone(), HeapOut::Ok(Expr::unit()))];
        }
        self.ranged_op(env, pc, ptr, elem, count, RangedKind::ConsumeUninit)
    }

    /// Produce `count` cells holding `vs` (a sequence) starting at `ptr`.
    pub fn produce_many(
        &self,
        env: &HeapEnv,
        pc: &Pc,
        ptr: &Expr,
        elem: &Ty,
        count: &Expr,
        vs: &Expr,
    ) -> Branches<Expr> {
        let mut pc = pc.clone();
        pc.assume(Expr::eq(Expr::seq_len(vs.clone()), count.clone()));
        if env.solver.entails_eq(&pc, count, &Expr::int(0)) {
            return vec![(self.clone(), pc, HeapOut::Ok(Expr::unit()))];
        }
        self.ranged_produce(env, &pc, ptr, elem, count, Some(vs.clone()))
    }

    /// Produce `count` uninitialized cells starting at `ptr`.
    pub fn produce_uninit(
        &self,
        env: &HeapEnv,
        pc: &Pc,
        ptr: &Expr,
        elem: &Ty,
        count: &Expr,
    ) -> Branches<Expr> {
        if env.solver.entails_eq(pc, count, &Expr::int(0)) {
            return vec![(self.clone(), pc.clone(), HeapOut::Ok(Expr::unit()))];
        }
        self.ranged_produce(env, pc, ptr, elem, count, None)
    }

    fn ranged_op(
        &self,
        env: &HeapEnv,
        pc: &Pc,
        ptr: &Expr,
        elem: &Ty,
        count: &Expr,
        kind: RangedKind,
    ) -> Branches<Expr> {
        let (loc, proj) = match resolve_ptr(env, pc, ptr) {
            Some(p) => p,
            None => return vec![(self.clone(), pc.clone(), HeapOut::Miss)],
        };
        let key = match self.find_loc(env, pc, &loc) {
            Some(k) => k,
            None => return vec![(self.clone(), pc.clone(), HeapOut::Miss)],
        };
        let Root::Array(la) = self.roots.get(&key).unwrap() else {
            return vec![(self.clone(), pc.clone(), HeapOut::Miss)];
        };
        let la = la.clone();
        let Some(off) = offsets_to_index(&proj, &la.index_ty) else {
            return vec![(self.clone(), pc.clone(), HeapOut::Miss)];
        };
        let Some(cf) = conv_factor(&la.index_ty, elem) else {
            return vec![(self.clone(), pc.clone(), HeapOut::Miss)];
        };
        let width = Expr::mul(count.clone(), cf);
        let mut out = Vec::new();
        for (pc1, res) in isolate_range(env, pc, &la, &off, &width) {
            match res {
                Err(e) => out.push((self.clone(), pc1, e.map(|_| unreachable!()))),
                Ok((mut la2, run)) => {
                    let result = match kind {
                        RangedKind::ConsumeMany => {
                            let mut parts = Vec::new();
                            let mut bad = None;
                            for c in &la2.chunks[run.clone()] {
                                match &c.node {
                                    ChunkNode::Vals { elem: e2, vs, .. } if e2 == elem => {
                                        parts.push(vs.clone())
                                    }
                                    ChunkNode::Vals { .. } => {
                                        bad = Some(HeapOut::Miss);
                                        break;
                                    }
                                    ChunkNode::Uninit => {
                                        bad = Some(HeapOut::Fail(
                                            "uninitialized cells where values expected".into(),
                                        ));
                                        break;
                                    }
                                    ChunkNode::Missing => {
                                        bad = Some(HeapOut::Miss);
                                        break;
                                    }
                                }
                            }
                            match bad {
                                Some(b) => b,
                                None => HeapOut::Ok(Expr::seq_concat(parts)),
                            }
                        }
                        RangedKind::ConsumeUninit => {
                            if la2.chunks[run.clone()]
                                .iter()
                                .all(|c| matches!(c.node, ChunkNode::Uninit))
                            {
                                HeapOut::Ok(Expr::unit())
                            } else if la2.chunks[run.clone()]
                                .iter()
                                .any(|c| matches!(c.node, ChunkNode::Missing))
                            {
                                HeapOut::Miss
                            } else {
                                HeapOut::Fail("initialized cells where uninit expected".into())
                            }
                        }
                    };
                    match result {
                        HeapOut::Ok(v) => {
                            let lo = la2.chunks[run.start].lo.clone();
                            la2.chunks.splice(
                                run.clone(),
                                [Chunk {
                                    lo,
                                    width: width.clone(),
                                    node: ChunkNode::Missing,
                                }],
                            );
                            let mut heap = self.clone();
                            heap.roots.insert(key.clone(), Root::Array(fuse(la2)));
                            out.push((heap, pc1, HeapOut::Ok(v)));
                        }
                        other => out.push((self.clone(), pc1, other)),
                    }
                }
            }
        }
        out
    }

    fn ranged_produce(
        &self,
        env: &HeapEnv,
        pc: &Pc,
        ptr: &Expr,
        elem: &Ty,
        count: &Expr,
        vs: Option<Expr>,
    ) -> Branches<Expr> {
        let Some((loc, proj)) = resolve_ptr(env, pc, ptr) else {
            return vec![(
                self.clone(),
                pc.clone(),
                HeapOut::Fail(format!("cannot resolve pointer {ptr}")),
            )];
        };
        // Ownership at a freed location contradicts the freed resource.
        if self.is_freed(env, pc, &loc) {
            return Vec::new();
        }
        let key = self
            .find_loc(env, pc, &loc)
            .unwrap_or_else(|| loc.clone());
        if !self.roots.contains_key(&key) {
            // Fresh open array rooted at this location.
            let la = LaidOut {
                index_ty: elem.clone(),
                extent: None,
                chunks: Vec::new(),
            };
            let mut heap = self.clone();
            heap.roots.insert(key.clone(), Root::Array(la));
            return heap.ranged_produce(env, pc, ptr, elem, count, vs);
        }
        let Root::Array(la) = self.roots.get(&key).unwrap() else {
            return vec![(
                self.clone(),
                pc.clone(),
                HeapOut::Fail("array resource over a scalar allocation".into()),
            )];
        };
        let la = la.clone();
        let Some(off) = offsets_to_index(&proj, &la.index_ty) else {
            return vec![(
                self.clone(),
                pc.clone(),
                HeapOut::Fail("unsupported projection shape".into()),
            )];
        };
        let Some(cf) = conv_factor(&la.index_ty, elem) else {
            return vec![(
                self.clone(),
                pc.clone(),
                HeapOut::Fail("incompatible element type".into()),
            )];
        };
        let width = Expr::mul(count.clone(), cf);
        let mut out = Vec::new();
        for (pc1, res) in isolate_range(env, pc, &la, &off, &width) {
            match res {
                Err(e) => out.push((self.clone(), pc1, e.map(|_| unreachable!()))),
                Ok((mut la2, run)) => {
                    if !la2.chunks[run.clone()]
                        .iter()
                        .all(|c| matches!(c.node, ChunkNode::Missing))
                    {
                        // Owned overlap: separation contradiction, vanish.
                        continue;
                    }
                    let lo = la2.chunks[run.start].lo.clone();
                    let node = match &vs {
                        Some(v) => ChunkNode::Vals {
                            elem: elem.clone(),
                            count: count.clone(),
                            vs: v.clone(),
                        },
                        None => ChunkNode::Uninit,
                    };
                    la2.chunks.splice(
                        run.clone(),
                        [Chunk {
                            lo,
                            width: width.clone(),
                            node,
                        }],
                    );
                    let mut heap = self.clone();
                    heap.roots.insert(key.clone(), Root::Array(fuse(la2)));
                    out.push((heap, pc1, HeapOut::Ok(Expr::unit())));
                }
            }
        }
        out
    }

    // --- deallocation ---

    /// Free a whole allocation. The pointer must be a root address and the
    /// state must own every cell of the allocation.
    pub fn free(&self, env: &HeapEnv, pc: &Pc, ptr: &Expr) -> Branches<()> {
        let (loc, proj) = match resolve_ptr(env, pc, ptr) {
            Some(p) => p,
            None => return vec![(self.clone(), pc.clone(), HeapOut::Miss)],
        };
        if !offsets_all_zero(env, pc, &proj) {
            return vec![(self.clone(), pc.clone(), HeapOut::Ub(UbKind::InvalidFree))];
        }
        if self.is_freed(env, pc, &loc) {
            return vec![(self.clone(), pc.clone(), HeapOut::Ub(UbKind::DoubleFree))];
        }
        let key = match self.find_loc(env, pc, &loc) {
            Some(k) => k,
            None => return vec![(self.clone(), pc.clone(), HeapOut::Miss)],
        };
        let owned = match self.roots.get(&key).unwrap() {
            Root::Typed(_, node) => node.fully_owned(),
            Root::Array(la) => la
                .chunks
                .iter()
                .all(|c| !matches!(c.node, ChunkNode::Missing)),
        };
        if !owned {
            return vec![(self.clone(), pc.clone(), HeapOut::Miss)];
        }
        let mut heap = self.clone();
        heap.roots.remove(&key);
        heap.freed.insert(key);
        vec![(heap, pc.clone(), HeapOut::Ok(()))]
    }

    /// Grow an array allocation: move its cells to a fresh location with
    /// `new_count` elements of `elem`, uninitialized past the old data.
    /// The old location is freed.
    pub fn realloc_array(
        &self,
        env: &HeapEnv,
        pc: &Pc,
        ptr: &Expr,
        elem: &Ty,
        old_count: &Expr,
        new_count: &Expr,
        new_loc: LocRef,
    ) -> Branches<Expr> {
        if !env.solver.entails(
            pc,
            &Expr::le(old_count.clone(), new_count.clone()),
        ) {
            return vec![(
                self.clone(),
                pc.clone(),
                HeapOut::Fail("shrinking reallocation not supported".into()),
            )];
        }
        let zero_old = env.solver.entails_eq(pc, old_count, &Expr::int(0));
        let new_ptr = Expr::ptr(new_loc.clone(), Vec::new());
        if zero_old {
            // Nothing to move: a fresh allocation.
            let mut heap = self.clone();
            heap.alloc_array(new_loc, elem.clone(), new_count.clone());
            return vec![(heap, pc.clone(), HeapOut::Ok(new_ptr))];
        }
        let (loc, proj) = match resolve_ptr(env, pc, ptr) {
            Some(p) => p,
            None => return vec![(self.clone(), pc.clone(), HeapOut::Miss)],
        };
        if !proj.is_empty() {
            return vec![(self.clone(), pc.clone(), HeapOut::Ub(UbKind::InvalidFree))];
        }
        if self.is_freed(env, pc, &loc) {
            return vec![(self.clone(), pc.clone(), HeapOut::Ub(UbKind::DoubleFree))];
        }
        let key = match self.find_loc(env, pc, &loc) {
            Some(k) => k,
            None => return vec![(self.clone(), pc.clone(), HeapOut::Miss)],
        };
        let Root::Array(la) = self.roots.get(&key).unwrap() else {
            return vec![(self.clone(), pc.clone(), HeapOut::Miss)];
        };
        // Translate the old chunks into element units of `elem`.
        let mut new_chunks: Vec<Chunk> = Vec::new();
        let mut pos = Expr::int(0);
        for c in &la.chunks {
            let w = match conv_factor(&la.index_ty, elem) {
                Some(cf) if cf == Expr::int(1) => c.width.clone(),
                _ => match env.solver.in_units_of(&c.width, elem) {
                    Some(w) => w,
                    None => return vec![(self.clone(), pc.clone(), HeapOut::Miss)],
                },
            };
            let node = match &c.node {
                ChunkNode::Missing => {
                    return vec![(self.clone(), pc.clone(), HeapOut::Miss)]
                }
                ChunkNode::Uninit => ChunkNode::Uninit,
                ChunkNode::Vals {
                    elem: e2,
                    count,
                    vs,
                } => {
                    if e2 != elem {
                        return vec![(self.clone(), pc.clone(), HeapOut::Miss)];
                    }
                    ChunkNode::Vals {
                        elem: e2.clone(),
                        count: count.clone(),
                        vs: vs.clone(),
                    }
                }
            };
            new_chunks.push(Chunk {
                lo: pos.clone(),
                width: w.clone(),
                node,
            });
            pos = Expr::add(pos, w);
        }
        // The moved data must cover exactly the claimed old extent.
        if !env.solver.entails_eq(pc, &pos, old_count) {
            return vec![(self.clone(), pc.clone(), HeapOut::Miss)];
        }
        let tail = Expr::sub(new_count.clone(), old_count.clone());
        if !env.solver.entails_eq(pc, &tail, &Expr::int(0)) {
            new_chunks.push(Chunk {
                lo: pos,
                width: tail,
                node: ChunkNode::Uninit,
            });
        }
        let mut heap = self.clone();
        heap.roots.remove(&key);
        heap.freed.insert(key);
        heap.roots.insert(
            new_loc,
            Root::Array(fuse(LaidOut {
                index_ty: elem.clone(),
                extent: Some(new_count.clone()),
                chunks: new_chunks,
            })),
        );
        vec![(heap, pc.clone(), HeapOut::Ok(new_ptr))]
    }
}

#[derive(Clone, Copy)]
enum AccessKind {
    Copy,
    Move,
    Consume,
}

#[derive(Clone, Copy)]
enum RangedKind {
    ConsumeMany,
    ConsumeUninit,
}

/// Resolve a pointer expression to a location and projection, normalizing
/// under the path condition if needed.
fn resolve_ptr(env: &HeapEnv, pc: &Pc, ptr: &Expr) -> Option<(LocRef, Vec<ProjElem>)> {
    if let Some((loc, proj)) = ptr.as_ptr() {
        return Some((loc.clone(), proj.to_vec()));
    }
    let n = env.solver.normalize_under(pc, ptr);
    n.as_ptr().map(|(l, p)| (l.clone(), p.to_vec()))
}

fn offsets_all_zero(env: &HeapEnv, pc: &Pc, proj: &[ProjElem]) -> bool {
    proj.iter().all(|p| match p {
        ProjElem::Offset(_, e) => env.solver.entails_eq(pc, e, &Expr::int(0)),
        _ => false,
    })
}

/// Fold leading offsets into a single index-unit displacement.
fn offsets_to_index(proj: &[ProjElem], index_ty: &Ty) -> Option<Expr> {
    let mut off = Expr::int(0);
    for p in proj {
        match p {
            ProjElem::Offset(u, e) => {
                let cf = conv_factor(index_ty, u)?;
                off = Expr::add(off, Expr::mul(e.clone(), cf));
            }
            _ => return None,
        }
    }
    Some(off)
}

/// Walk a typed node along field projections. Missing nodes stop the walk.
fn descend<'n>(
    env: &HeapEnv,
    node: &'n mut Node,
    proj: &[ProjElem],
    _root_ty: &Ty,
) -> Result<&'n mut Node, HeapOut<Expr>> {
    let mut cur = node;
    for (i, p) in proj.iter().enumerate() {
        match p {
            ProjElem::Offset(_, e) => {
                // Offsets inside a scalar allocation must be zero.
                if e.as_int_lit() == Some(0) {
                    continue;
                }
                let _ = (env, i);
                return Err(HeapOut::Ub(UbKind::OutOfBounds));
            }
            ProjElem::Field(cty, fname) => {
                expand_struct(env, cur, cty)?;
                match cur {
                    Node::Struct(_, children) => match children.get_mut(fname) {
                        Some(child) => cur = child,
                        None => {
                            return Err(HeapOut::Fail(format!("no field {fname} on {cty}")))
                        }
                    },
                    Node::Missing => return Err(HeapOut::Miss),
                    _ => return Err(HeapOut::Fail(format!("field access on non-struct {cty}"))),
                }
            }
            ProjElem::VField(cty, variant, fname) => match cur {
                Node::EnumV(_, v, children) => {
                    if v != variant {
                        return Err(HeapOut::Ub(UbKind::ReadUninit));
                    }
                    match children.get_mut(fname) {
                        Some(child) => cur = child,
                        None => {
                            return Err(HeapOut::Fail(format!(
                                "no field {fname} on {cty}::{variant}"
                            )))
                        }
                    }
                }
                Node::Missing => return Err(HeapOut::Miss),
                Node::Uninit => return Err(HeapOut::Ub(UbKind::ReadUninit)),
                _ => return Err(HeapOut::Fail("variant access on non-enum cell".into())),
            },
        }
    }
    Ok(cur)
}

/// Like `descend`, but expands Missing nodes into struct skeletons so a
/// production can land inside a partially-missing tree.
fn descend_expanding<'n>(
    env: &HeapEnv,
    node: &'n mut Node,
    proj: &[ProjElem],
    root_ty: &Ty,
) -> Result<&'n mut Node, HeapOut<()>> {
    let mut cur = node;
    for p in proj {
        match p {
            ProjElem::Field(cty, fname) => {
                if matches!(cur, Node::Missing) {
                    let fields = env
                        .table
                        .fields_of(cty)
                        .ok_or_else(|| HeapOut::Fail(format!("unknown struct {cty}")))?;
                    let children: BTreeMap<String, Node> = fields
                        .iter()
                        .map(|(n, _)| (n.clone(), Node::Missing))
                        .collect();
                    *cur = Node::Struct(cty.clone(), children);
                }
                expand_struct(env, cur, cty).map_err(downcast_out)?;
                match cur {
                    Node::Struct(_, children) => match children.get_mut(fname) {
                        Some(child) => cur = child,
                        None => {
                            return Err(HeapOut::Fail(format!("no field {fname} on {cty}")))
                        }
                    },
                    _ => return Err(HeapOut::Fail(format!("field access on non-struct {cty}"))),
                }
            }
            _ => {
                let _ = root_ty;
                return Err(HeapOut::Fail("unsupported projection shape".into()));
            }
        }
    }
    Ok(cur)
}

fn downcast_out(e: HeapOut<Expr>) -> HeapOut<()> {
    e.map(|_| ())
}

/// Explode a whole-struct value or an uninitialized cell into a struct
/// node with per-field children.
fn expand_struct(env: &HeapEnv, node: &mut Node, cty: &Ty) -> Result<(), HeapOut<Expr>> {
    match node {
        Node::Struct(..) => Ok(()),
        Node::Val(e) => {
            let fields = env
                .table
                .fields_of(cty)
                .ok_or_else(|| HeapOut::Fail(format!("unknown struct {cty}")))?;
            let children: BTreeMap<String, Node> = fields
                .iter()
                .map(|(n, fty)| {
                    (
                        n.clone(),
                        Node::Val(Expr::struct_get(e.clone(), n, value_sort(fty))),
                    )
                })
                .collect();
            *node = Node::Struct(cty.clone(), children);
            Ok(())
        }
        Node::Uninit => {
            let fields = env
                .table
                .fields_of(cty)
                .ok_or_else(|| HeapOut::Fail(format!("unknown struct {cty}")))?;
            let children: BTreeMap<String, Node> = fields
                .iter()
                .map(|(n, _)| (n.clone(), Node::Uninit))
                .collect();
            *node = Node::Struct(cty.clone(), children);
            Ok(())
        }
        Node::Missing => Err(HeapOut::Miss),
        Node::EnumV(..) => Err(HeapOut::Fail("field access on enum cell".into())),
    }
}

/// Read a node as a value of type `ty`, collecting validity facts.
fn read_node(env: &HeapEnv, node: &Node, ty: &Ty) -> HeapOut<(Expr, Vec<Expr>)> {
    match node {
        Node::Missing => HeapOut::Miss,
        Node::Uninit => HeapOut::Ub(UbKind::ReadUninit),
        Node::Val(e) => {
            let mut facts = Vec::new();
            validity_facts(ty, e, &mut facts);
            HeapOut::Ok((e.clone(), facts))
        }
        Node::Struct(sty, children) => {
            let Some(fields) = env.table.fields_of(sty) else {
                return HeapOut::Fail(format!("unknown struct {sty}"));
            };
            let mut parts = Vec::new();
            let mut facts = Vec::new();
            for (fname, fty) in &fields {
                let Some(child) = children.get(fname) else {
                    return HeapOut::Fail(format!("missing field {fname}"));
                };
                match read_node(env, child, fty) {
                    HeapOut::Ok((v, fs)) => {
                        facts.extend(fs);
                        parts.push((fname.clone(), v));
                    }
                    other => return other,
                }
            }
            HeapOut::Ok((Expr::struct_mk(sty.clone(), parts), facts))
        }
        Node::EnumV(ety, variant, children) => {
            let Some(variants) = env.table.variants_of(ety) else {
                return HeapOut::Fail(format!("unknown enum {ety}"));
            };
            let Some((_, fields)) = variants.iter().find(|(v, _)| v == variant) else {
                return HeapOut::Fail(format!("unknown variant {variant}"));
            };
            let mut parts = Vec::new();
            let mut facts = Vec::new();
            for (fname, fty) in fields {
                let Some(child) = children.get(fname) else {
                    return HeapOut::Fail(format!("missing field {fname}"));
                };
                match read_node(env, child, fty) {
                    HeapOut::Ok((v, fs)) => {
                        facts.extend(fs);
                        parts.push((fname.clone(), v));
                    }
                    other => return other,
                }
            }
            HeapOut::Ok((Expr::enum_mk(ety.clone(), variant.clone(), parts), facts))
        }
    }
}

/// Build a node for storing `value` at type `ty`. Whole constructor values
/// explode into trees so later field accesses stay cheap.
fn make_node(env: &HeapEnv, ty: &Ty, value: Expr) -> Node {
    match value.kind() {
        EKind::StructMk(sty, fields) => {
            let Some(decl) = env.table.fields_of(sty) else {
                return Node::Val(value);
            };
            let mut children = BTreeMap::new();
            for (fname, fty) in &decl {
                let v = fields
                    .iter()
                    .find(|(n, _)| n == fname)
                    .map(|(_, v)| v.clone())
                    .unwrap_or_else(|| {
                        Expr::struct_get(value.clone(), fname, value_sort(fty))
                    });
                children.insert(fname.clone(), make_node(env, fty, v));
            }
            Node::Struct(sty.clone(), children)
        }
        EKind::EnumMk(ety, variant, fields) => {
            let Some(variants) = env.table.variants_of(ety) else {
                return Node::Val(value);
            };
            let Some((_, decl)) = variants.iter().find(|(v, _)| v == variant) else {
                return Node::Val(value);
            };
            let mut children = BTreeMap::new();
            for (fname, fty) in decl {
                let v = fields
                    .iter()
                    .find(|(n, _)| n == fname)
                    .map(|(_, v)| v.clone())
                    .unwrap_or_else(|| Expr::bool_(false));
                children.insert(fname.clone(), make_node(env, fty, v));
            }
            Node::EnumV(ety.clone(), variant.clone(), children)
        }
        _ => {
            let _ = ty;
            Node::Val(value)
        }
    }
}

/// Build a fresh root along a projection spine ending in `leaf`.
fn build_spine(env: &HeapEnv, proj: &[ProjElem], leaf_ty: &Ty, leaf: Node) -> Option<Root> {
    if proj.is_empty() {
        return Some(Root::Typed(leaf_ty.clone(), leaf));
    }
    match &proj[0] {
        ProjElem::Field(cty, fname) => {
            let fields = env.table.fields_of(cty)?;
            let mut children: BTreeMap<String, Node> = fields
                .iter()
                .map(|(n, _)| (n.clone(), Node::Missing))
                .collect();
            let inner = build_spine_node(env, &proj[1..], leaf)?;
            children.insert(fname.clone(), inner);
            Some(Root::Typed(cty.clone(), Node::Struct(cty.clone(), children)))
        }
        ProjElem::Offset(u, e) => {
            if proj.len() != 1 {
                return None;
            }
            let la = LaidOut {
                index_ty: u.clone(),
                extent: None,
                chunks: vec![
                    Chunk {
                        lo: Expr::int(0),
                        width: e.clone(),
                        node: ChunkNode::Missing,
                    },
                    Chunk {
                        lo: e.clone(),
                        width: Expr::int(1),
                        node: match leaf {
                            Node::Val(v) => ChunkNode::Vals {
                                elem: leaf_ty.clone(),
                                count: Expr::int(1),
                                vs: Expr::seq_unit(v),
                            },
                            Node::Uninit => ChunkNode::Uninit,
                            _ => return None,
                        },
                    },
                ],
            };
            Some(Root::Array(la))
        }
        ProjElem::VField(..) => None,
    }
}

fn build_spine_node(env: &HeapEnv, proj: &[ProjElem], leaf: Node) -> Option<Node> {
    if proj.is_empty() {
        return Some(leaf);
    }
    match &proj[0] {
        ProjElem::Field(cty, fname) => {
            let fields = env.table.fields_of(cty)?;
            let mut children: BTreeMap<String, Node> = fields
                .iter()
                .map(|(n, _)| (n.clone(), Node::Missing))
                .collect();
            let inner = build_spine_node(env, &proj[1..], leaf)?;
            children.insert(fname.clone(), inner);
            Some(Node::Struct(cty.clone(), children))
        }
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Array isolation
// ---------------------------------------------------------------------------

type SplitBranches = Vec<(Pc, Result<(Vec<Chunk>, usize), HeapOut<()>>)>;

/// Branch on `a <= b`, pruning unsatisfiable sides.
fn le_branch(env: &HeapEnv, pc: &Pc, a: &Expr, b: &Expr) -> Vec<(Pc, bool)> {
    match env.solver.compare(pc, a, b) {
        Cmp::Le | Cmp::Lt | Cmp::Eq => vec![(pc.clone(), true)],
        Cmp::Gt => vec![(pc.clone(), false)],
        _ => {
            let mut out = Vec::new();
            let yes = pc.with(Expr::le(a.clone(), b.clone()));
            if env.solver.sat(&yes) != crate::solver::SatResult::Unsat {
                out.push((yes, true));
            }
            let no = pc.with(Expr::lt(b.clone(), a.clone()));
            if env.solver.sat(&no) != crate::solver::SatResult::Unsat {
                out.push((no, false));
            }
            out
        }
    }
}

/// Split the chunk run at boundary `b` (index units), returning the chunk
/// index that starts exactly at `b`. Assumes `0 <= b <= coverage`.
fn split_boundary(
    env: &HeapEnv,
    pc: Pc,
    index_ty: &Ty,
    chunks: Vec<Chunk>,
    b: &Expr,
    idx: usize,
) -> SplitBranches {
    if idx >= chunks.len() {
        return vec![(pc, Ok((chunks, idx)))];
    }
    let c = chunks[idx].clone();
    let end = Expr::add(c.lo.clone(), c.width.clone());
    let mut out = Vec::new();
    // Loop invariant: pc entails c.lo <= b.
    for (pc1, at_or_before) in le_branch(env, &pc, b, &c.lo) {
        if at_or_before {
            out.push((pc1, Ok((chunks.clone(), idx))));
        } else {
            for (pc2, past_end) in le_branch(env, &pc1, &end, b) {
                if past_end {
                    out.extend(split_boundary(env, pc2, index_ty, chunks.clone(), b, idx + 1));
                } else {
                    // Strictly inside this chunk: split it.
                    let d = Expr::sub(b.clone(), c.lo.clone());
                    match split_chunk(env, index_ty, &c, &d, b) {
                        Ok((c1, c2)) => {
                            let mut nc = chunks.clone();
                            nc.splice(idx..=idx, [c1, c2]);
                            out.push((pc2, Ok((nc, idx + 1))));
                        }
                        Err(e) => out.push((pc2, Err(e))),
                    }
                }
            }
        }
    }
    out
}

/// Split one chunk at relative offset `d` (index units, strictly inside).
fn split_chunk(
    env: &HeapEnv,
    index_ty: &Ty,
    c: &Chunk,
    d: &Expr,
    abs: &Expr,
) -> Result<(Chunk, Chunk), HeapOut<()>> {
    let w2 = Expr::sub(c.width.clone(), d.clone());
    let (n1, n2) = match &c.node {
        ChunkNode::Missing => (ChunkNode::Missing, ChunkNode::Missing),
        ChunkNode::Uninit => (ChunkNode::Uninit, ChunkNode::Uninit),
        ChunkNode::Vals { elem, count, vs } => {
            // Element count before the cut; must divide evenly.
            let k = match conv_factor(index_ty, elem) {
                Some(cf) if cf == Expr::int(1) => d.clone(),
                _ => match env.solver.in_units_of(d, elem) {
                    Some(k) => k,
                    None => return Err(HeapOut::Miss),
                },
            };
            (
                ChunkNode::Vals {
                    elem: elem.clone(),
                    count: k.clone(),
                    vs: Expr::seq_take(vs.clone(), k.clone()),
                },
                ChunkNode::Vals {
                    elem: elem.clone(),
                    count: Expr::sub(count.clone(), k.clone()),
                    vs: Expr::seq_drop(vs.clone(), k),
                },
            )
        }
    };
    Ok((
        Chunk {
            lo: c.lo.clone(),
            width: d.clone(),
            node: n1,
        },
        Chunk {
            lo: abs.clone(),
            width: w2,
            node: n2,
        },
    ))
}

/// Isolate a single-element range `[off, off + cf)`.
fn isolate(
    env: &HeapEnv,
    pc: &Pc,
    la: &LaidOut,
    off: &Expr,
    cf: &Expr,
) -> Vec<(Pc, Result<(LaidOut, std::ops::Range<usize>), HeapOut<()>>)> {
    isolate_range(env, pc, la, off, cf)
}

/// Isolate the range `[lo, lo + width)` as whole chunks, splitting at both
/// boundaries. Emits out-of-bounds UB branches where the range provably or
/// possibly exceeds the allocation.
fn isolate_range(
    env: &HeapEnv,
    pc: &Pc,
    la: &LaidOut,
    lo: &Expr,
    width: &Expr,
) -> Vec<(Pc, Result<(LaidOut, std::ops::Range<usize>), HeapOut<()>>)> {
    let hi = Expr::add(lo.clone(), width.clone());
    let mut out = Vec::new();
    for (pc0, nonneg) in le_branch(env, pc, &Expr::int(0), lo) {
        if !nonneg {
            out.push((pc0, Err(HeapOut::Ub(UbKind::OutOfBounds))));
            continue;
        }
        // Allocation bound check (closed arrays only).
        let mut in_bounds: Vec<Pc> = Vec::new();
        if let Some(ext) = &la.extent {
            for (pc1, ok) in le_branch(env, &pc0, &hi, ext) {
                if ok {
                    in_bounds.push(pc1);
                } else {
                    out.push((pc1, Err(HeapOut::Ub(UbKind::OutOfBounds))));
                }
            }
        } else {
            in_bounds.push(pc0);
        }
        for pc1 in in_bounds {
            // Extend coverage of an open footprint up to `hi`.
            let mut chunks = la.chunks.clone();
            let cov = la.coverage();
            let mut states: Vec<(Pc, Vec<Chunk>)> = Vec::new();
            if la.extent.is_none() {
                for (pc2, within) in le_branch(env, &pc1, &hi, &cov) {
                    if within {
                        states.push((pc2, chunks.clone()));
                    } else {
                        let mut ext = chunks.clone();
                        ext.push(Chunk {
                            lo: cov.clone(),
                            width: Expr::sub(hi.clone(), cov.clone()),
                            node: ChunkNode::Missing,
                        });
                        states.push((pc2, ext));
                    }
                }
            } else {
                states.push((pc1, std::mem::take(&mut chunks)));
            }
            for (pc2, cs) in states {
                for (pc3, r1) in split_boundary(env, pc2, &la.index_ty, cs, lo, 0) {
                    match r1 {
                        Err(e) => out.push((pc3, Err(e))),
                        Ok((cs1, i)) => {
                            for (pc4, r2) in split_boundary(env, pc3, &la.index_ty, cs1, &hi, i) {
                                match r2 {
                                    Err(e) => out.push((pc4, Err(e))),
                                    Ok((cs2, j)) => {
                                        if j <= i {
                                            // Zero-width range: nothing isolated.
                                            out.push((
                                                pc4,
                                                Err(HeapOut::Fail(
                                                    "zero-width isolation".into(),
                                                )),
                                            ));
                                        } else {
                                            out.push((
                                                pc4,
                                                Ok((
                                                    LaidOut {
                                                        index_ty: la.index_ty.clone(),
                                                        extent: la.extent.clone(),
                                                        chunks: cs2,
                                                    },
                                                    i..j,
                                                )),
                                            ));
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Merge adjacent chunks of the same kind.
fn fuse(la: LaidOut) -> LaidOut {
    let mut chunks: Vec<Chunk> = Vec::with_capacity(la.chunks.len());
    for c in la.chunks {
        // Zero-width chunks carry no resource.
        if c.width.as_int_lit() == Some(0) {
            continue;
        }
        match (chunks.last_mut(), &c.node) {
            (Some(prev), ChunkNode::Missing) if matches!(prev.node, ChunkNode::Missing) => {
                prev.width = Expr::add(prev.width.clone(), c.width);
            }
            (Some(prev), ChunkNode::Uninit) if matches!(prev.node, ChunkNode::Uninit) => {
                prev.width = Expr::add(prev.width.clone(), c.width);
            }
            (Some(prev), ChunkNode::Vals { elem, count, vs }) => {
                let merged = match &prev.node {
                    ChunkNode::Vals {
                        elem: e0,
                        count: c0,
                        vs: v0,
                    } if e0 == elem => Some(ChunkNode::Vals {
                        elem: e0.clone(),
                        count: Expr::add(c0.clone(), count.clone()),
                        vs: Expr::seq_concat(vec![v0.clone(), vs.clone()]),
                    }),
                    _ => None,
                };
                match merged {
                    Some(m) => {
                        prev.node = m;
                        prev.width = Expr::add(prev.width.clone(), c.width);
                    }
                    None => chunks.push(c),
                }
            }
            _ => chunks.push(c),
        }
    }
    LaidOut {
        index_ty: la.index_ty,
        extent: la.extent,
        chunks,
    }
}

impl fmt::Display for Heap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (loc, root) in &self.roots {
            match root {
                Root::Typed(ty, node) => writeln!(f, "{loc}: {ty} = {}", fmt_node(node))?,
                Root::Array(la) => {
                    write!(f, "{loc}: [{};", la.index_ty)?;
                    match &la.extent {
                        Some(e) => write!(f, " {e}]")?,
                        None => write!(f, " ?]")?,
                    }
                    for c in &la.chunks {
                        write!(f, " [{} +{}: ", c.lo, c.width)?;
                        match &c.node {
                            ChunkNode::Missing => write!(f, "missing]")?,
                            ChunkNode::Uninit => write!(f, "uninit]")?,
                            ChunkNode::Vals { elem, vs, .. } => write!(f, "{elem} {vs}]")?,
                        }
                    }
                    writeln!(f)?;
                }
            }
        }
        for loc in &self.freed {
            writeln!(f, "{loc}: freed")?;
        }
        Ok(())
    }
}

fn fmt_node(n: &Node) -> String {
    match n {
        Node::Missing => "missing".into(),
        Node::Uninit => "uninit".into(),
        Node::Val(e) => format!("{e}"),
        Node::Struct(ty, ch) => {
            let inner: Vec<String> = ch
                .iter()
                .map(|(k, v)| format!("{k}: {}", fmt_node(v)))
                .collect();
            format!("{ty} {{ {} }}", inner.join(", "))
        }
        Node::EnumV(_, v, ch) => {
            let inner: Vec<String> = ch
                .iter()
                .map(|(k, v)| format!("{k}: {}", fmt_node(v)))
                .collect();
            format!("{v} {{ {} }}", inner.join(", "))
        }
    }
}
