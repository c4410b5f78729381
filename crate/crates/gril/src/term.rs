//! Symbolic expressions: the term language shared by the path condition,
//! the heap, assertions, and specifications.
//!
//! Terms are immutable trees behind `Rc`. Smart constructors perform local
//! normalization (constant folding, constructor decomposition of equalities,
//! flattening of `and`/`or`/`concat`, projection-offset merging) so that the
//! solver and the heap see a small canonical surface.
//!
//! Struct fields and enum variants are referenced by name everywhere; field
//! value lists are kept sorted by field name. Nothing in a term depends on
//! declaration order, which keeps every downstream verdict and diagnostic
//! stable under struct-field permutations.

use crate::types::{IntTy, Ty};
use std::fmt;
use std::rc::Rc;

/// Sorts of the term language. `Data` covers opaque IR values (abstract
/// type parameters and whole struct/enum values); `Abs` covers opaque
/// logic-level representation sorts such as `T::ReprTy`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sort {
    Int,
    Bool,
    Real,
    Ptr,
    Lft,
    Seq(Box<Sort>),
    Opt(Box<Sort>),
    Tuple(Vec<Sort>),
    Data(Ty),
    Abs(String),
}

impl Sort {
    pub fn seq(elem: Sort) -> Sort {
        Sort::Seq(Box::new(elem))
    }
    pub fn opt(elem: Sort) -> Sort {
        Sort::Opt(Box::new(elem))
    }
    pub fn unit() -> Sort {
        Sort::Tuple(Vec::new())
    }

    /// Element sort of a sequence sort.
    pub fn seq_elem(&self) -> Option<&Sort> {
        match self {
            Sort::Seq(e) => Some(e),
            _ => None,
        }
    }

    pub fn opt_elem(&self) -> Option<&Sort> {
        match self {
            Sort::Opt(e) => Some(e),
            _ => None,
        }
    }
}

impl fmt::Display for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sort::Int => write!(f, "Int"),
            Sort::Bool => write!(f, "Bool"),
            Sort::Real => write!(f, "Real"),
            Sort::Ptr => write!(f, "Ptr"),
            Sort::Lft => write!(f, "Lft"),
            Sort::Seq(e) => write!(f, "Seq<{e}>"),
            Sort::Opt(e) => write!(f, "Option<{e}>"),
            Sort::Tuple(es) => {
                write!(f, "(")?;
                for (i, e) in es.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{e}")?;
                }
                write!(f, ")")
            }
            Sort::Data(t) => write!(f, "Data<{t}>"),
            Sort::Abs(n) => write!(f, "{n}"),
        }
    }
}

/// Value sort of an IR type.
pub fn value_sort(ty: &Ty) -> Sort {
    match ty {
        Ty::Unit => Sort::unit(),
        Ty::Bool => Sort::Bool,
        Ty::Int(_) => Sort::Int,
        Ty::RawPtr(_) | Ty::NonNull(_) | Ty::MutRef(_) | Ty::Boxed(_) => Sort::Ptr,
        Ty::Opt(t) => Sort::opt(value_sort(t)),
        Ty::Tuple(ts) => Sort::Tuple(ts.iter().map(value_sort).collect()),
        Ty::Param(_) | Ty::Named(..) => Sort::Data(ty.clone()),
    }
}

/// A memory location: concrete allocation id or a symbolic location.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LocRef {
    Conc(u64),
    Sym(String),
}

impl fmt::Display for LocRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LocRef::Conc(n) => write!(f, "l{n}"),
            LocRef::Sym(s) => write!(f, "{s}"),
        }
    }
}

/// One projection step of an address: a typed array offset, a struct field
/// (by name), or an enum variant field (by names).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProjElem {
    /// `+T e`: offset by `e` elements of type `T`
    Offset(Ty, Expr),
    /// `.T field`: field of struct `T`
    Field(Ty, String),
    /// `.T::Variant field`: field of enum `T`'s variant
    VField(Ty, String, String),
}

impl fmt::Display for ProjElem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProjElem::Offset(t, e) => write!(f, "+[{t}]{e}"),
            ProjElem::Field(_, name) => write!(f, ".{name}"),
            ProjElem::VField(_, v, name) => write!(f, ".{v}::{name}"),
        }
    }
}

/// Interior node of a term.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EKind {
    Var(String, Sort),
    /// A prophecy variable (distinct namespace from `Var`).
    Proph(String, Sort),
    IntLit(i128),
    BoolLit(bool),
    /// Rational literal `num/den`, normalized with `den > 0`.
    RealLit(i128, i128),
    LftLit(String),
    Ptr(LocRef, Vec<ProjElem>),
    SizeOf(Ty),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Neg(Expr),
    Rem(Expr, Expr),
    Eq(Expr, Expr),
    Le(Expr, Expr),
    Lt(Expr, Expr),
    Not(Expr),
    And(Vec<Expr>),
    Or(Vec<Expr>),
    SeqEmpty(Sort),
    SeqUnit(Expr),
    SeqConcat(Vec<Expr>),
    SeqLen(Expr),
    SeqAt(Expr, Expr),
    SeqTake(Expr, Expr),
    SeqDrop(Expr, Expr),
    SeqUpdate(Expr, Expr, Expr),
    TupMk(Vec<Expr>),
    TupGet(Expr, usize),
    NoneLit(Sort),
    SomeMk(Expr),
    IsSome(Expr),
    Unwrap(Expr),
    /// Struct value; fields sorted by name.
    StructMk(Ty, Vec<(String, Expr)>),
    StructGet(Expr, String, Sort),
    /// Enum value of a concrete variant; fields sorted by name.
    EnumMk(Ty, String, Vec<(String, Expr)>),
    EnumIs(Expr, String),
    EnumGet(Expr, String, String, Sort),
}

/// A symbolic expression.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Expr(Rc<EKind>);

impl Expr {
    pub fn kind(&self) -> &EKind {
        &self.0
    }

    fn mk(k: EKind) -> Expr {
        Expr(Rc::new(k))
    }

    // --- atoms ---

    pub fn var(name: impl Into<String>, sort: Sort) -> Expr {
        Expr::mk(EKind::Var(name.into(), sort))
    }

    pub fn proph(name: impl Into<String>, sort: Sort) -> Expr {
        Expr::mk(EKind::Proph(name.into(), sort))
    }

    pub fn int(v: i128) -> Expr {
        Expr::mk(EKind::IntLit(v))
    }

    pub fn bool_(v: bool) -> Expr {
        Expr::mk(EKind::BoolLit(v))
    }

    pub fn real(num: i128, den: i128) -> Expr {
        assert!(den != 0, "zero denominator");
        let (mut n, mut d) = if den < 0 { (-num, -den) } else { (num, den) };
        let g = gcd(n.unsigned_abs(), d.unsigned_abs()).max(1) as i128;
        n /= g;
        d /= g;
        Expr::mk(EKind::RealLit(n, d))
    }

    pub fn lft(name: impl Into<String>) -> Expr {
        Expr::mk(EKind::LftLit(name.into()))
    }

    pub fn unit() -> Expr {
        Expr::mk(EKind::TupMk(Vec::new()))
    }

    /// Scalar sizes are fixed by the memory model; aggregate and parameter
    /// sizes stay symbolic.
    pub fn size_of(ty: Ty) -> Expr {
        match &ty {
            Ty::Bool | Ty::Int(IntTy::U8) => Expr::int(1),
            Ty::Int(IntTy::U32) | Ty::Int(IntTy::I32) => Expr::int(4),
            Ty::Int(IntTy::U64) | Ty::Int(IntTy::Usize) => Expr::int(8),
            _ => Expr::mk(EKind::SizeOf(ty)),
        }
    }

    /// A pointer from a location and projection list. Consecutive offsets of
    /// the same element type merge: `+T a` then `+T b` becomes `+T (a+b)`.
    pub fn ptr(loc: LocRef, proj: Vec<ProjElem>) -> Expr {
        let mut out: Vec<ProjElem> = Vec::with_capacity(proj.len());
        for p in proj {
            match (out.last(), &p) {
                (Some(ProjElem::Offset(t1, a)), ProjElem::Offset(t2, b)) if t1 == t2 => {
                    let merged = ProjElem::Offset(t1.clone(), Expr::add(a.clone(), b.clone()));
                    out.pop();
                    out.push(merged);
                }
                _ => out.push(p),
            }
        }
        Expr::mk(EKind::Ptr(loc, out))
    }

    /// Extend a pointer term by one projection element.
    pub fn ptr_proj(&self, elem: ProjElem) -> Option<Expr> {
        match self.kind() {
            EKind::Ptr(loc, proj) => {
                let mut p = proj.clone();
                p.push(elem);
                Some(Expr::ptr(loc.clone(), p))
            }
            _ => None,
        }
    }

    // --- arithmetic ---

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a.kind(), b.kind()) {
            (EKind::IntLit(x), EKind::IntLit(y)) => Expr::int(x + y),
            (EKind::IntLit(0), _) => b,
            (_, EKind::IntLit(0)) => a,
            (EKind::RealLit(n1, d1), EKind::RealLit(n2, d2)) => {
                Expr::real(n1 * d2 + n2 * d1, d1 * d2)
            }
            _ => Expr::mk(EKind::Add(a, b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a.kind(), b.kind()) {
            (EKind::IntLit(x), EKind::IntLit(y)) => Expr::int(x - y),
            (_, EKind::IntLit(0)) => a,
            (EKind::RealLit(n1, d1), EKind::RealLit(n2, d2)) => {
                Expr::real(n1 * d2 - n2 * d1, d1 * d2)
            }
            _ if a == b => match a.sort() {
                Sort::Real => Expr::real(0, 1),
                _ => Expr::int(0),
            },
            _ => Expr::mk(EKind::Sub(a, b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a.kind(), b.kind()) {
            (EKind::IntLit(x), EKind::IntLit(y)) => Expr::int(x * y),
            (EKind::IntLit(1), _) => b,
            (_, EKind::IntLit(1)) => a,
            (EKind::IntLit(0), _) | (_, EKind::IntLit(0)) => Expr::int(0),
            // Commutative: canonical operand order keeps atom identity stable.
            _ if b < a => Expr::mk(EKind::Mul(b, a)),
            _ => Expr::mk(EKind::Mul(a, b)),
        }
    }

    pub fn neg(a: Expr) -> Expr {
        match a.kind() {
            EKind::IntLit(x) => Expr::int(-x),
            EKind::Neg(inner) => inner.clone(),
            _ => Expr::mk(EKind::Neg(a)),
        }
    }

    pub fn rem(a: Expr, b: Expr) -> Expr {
        match (a.kind(), b.kind()) {
            (EKind::IntLit(x), EKind::IntLit(y)) if *y != 0 => Expr::int(x.rem_euclid(*y)),
            _ => Expr::mk(EKind::Rem(a, b)),
        }
    }

    // --- comparisons and logic ---

    /// Equality with constructor decomposition. Tuple, option, struct, and
    /// enum constructors decompose into field equalities; distinct
    /// constructors or distinct concrete values collapse to `false`.
    pub fn eq(a: Expr, b: Expr) -> Expr {
        if a == b {
            return Expr::bool_(true);
        }
        match (a.kind(), b.kind()) {
            (EKind::IntLit(x), EKind::IntLit(y)) => Expr::bool_(x == y),
            (EKind::BoolLit(x), EKind::BoolLit(y)) => Expr::bool_(x == y),
            (EKind::RealLit(n1, d1), EKind::RealLit(n2, d2)) => {
                Expr::bool_(n1 == n2 && d1 == d2)
            }
            (EKind::BoolLit(true), _) => b,
            (_, EKind::BoolLit(true)) => a,
            (EKind::BoolLit(false), _) => Expr::not(b),
            (_, EKind::BoolLit(false)) => Expr::not(a),
            (EKind::SomeMk(x), EKind::SomeMk(y)) => Expr::eq(x.clone(), y.clone()),
            (EKind::SomeMk(_), EKind::NoneLit(_)) | (EKind::NoneLit(_), EKind::SomeMk(_)) => {
                Expr::bool_(false)
            }
            (EKind::NoneLit(_), EKind::NoneLit(_)) => Expr::bool_(true),
            (EKind::TupMk(xs), EKind::TupMk(ys)) if xs.len() == ys.len() => Expr::and(
                xs.iter()
                    .zip(ys)
                    .map(|(x, y)| Expr::eq(x.clone(), y.clone()))
                    .collect(),
            ),
            (EKind::StructMk(t1, fs1), EKind::StructMk(t2, fs2)) if t1 == t2 => Expr::and(
                fs1.iter()
                    .zip(fs2)
                    .map(|((_, x), (_, y))| Expr::eq(x.clone(), y.clone()))
                    .collect(),
            ),
            (EKind::EnumMk(t1, v1, fs1), EKind::EnumMk(t2, v2, fs2)) if t1 == t2 => {
                if v1 != v2 {
                    Expr::bool_(false)
                } else {
                    Expr::and(
                        fs1.iter()
                            .zip(fs2)
                            .map(|((_, x), (_, y))| Expr::eq(x.clone(), y.clone()))
                            .collect(),
                    )
                }
            }
            (EKind::Ptr(l1, p1), EKind::Ptr(l2, p2)) => match ptr_eq_shape(l1, p1, l2, p2) {
                Some(e) => e,
                None => Expr::mk(EKind::Eq(a, b)),
            },
            (EKind::SeqUnit(x), EKind::SeqUnit(y)) => Expr::eq(x.clone(), y.clone()),
            (EKind::SeqEmpty(_), EKind::SeqEmpty(_)) => Expr::bool_(true),
            (EKind::SeqEmpty(_), EKind::SeqUnit(_)) | (EKind::SeqUnit(_), EKind::SeqEmpty(_)) => {
                Expr::bool_(false)
            }
            _ => {
                // Canonical argument order keeps syntactically equal queries equal.
                if b < a {
                    Expr::mk(EKind::Eq(b, a))
                } else {
                    Expr::mk(EKind::Eq(a, b))
                }
            }
        }
    }

    pub fn le(a: Expr, b: Expr) -> Expr {
        match (a.kind(), b.kind()) {
            (EKind::IntLit(x), EKind::IntLit(y)) => Expr::bool_(x <= y),
            (EKind::RealLit(n1, d1), EKind::RealLit(n2, d2)) => Expr::bool_(n1 * d2 <= n2 * d1),
            _ if a == b => Expr::bool_(true),
            _ => Expr::mk(EKind::Le(a, b)),
        }
    }

    pub fn lt(a: Expr, b: Expr) -> Expr {
        match (a.kind(), b.kind()) {
            (EKind::IntLit(x), EKind::IntLit(y)) => Expr::bool_(x < y),
            (EKind::RealLit(n1, d1), EKind::RealLit(n2, d2)) => Expr::bool_(n1 * d2 < n2 * d1),
            _ if a == b => Expr::bool_(false),
            _ => Expr::mk(EKind::Lt(a, b)),
        }
    }

    pub fn ge(a: Expr, b: Expr) -> Expr {
        Expr::le(b, a)
    }

    pub fn gt(a: Expr, b: Expr) -> Expr {
        Expr::lt(b, a)
    }

    pub fn not(a: Expr) -> Expr {
        match a.kind() {
            EKind::BoolLit(v) => Expr::bool_(!v),
            EKind::Not(inner) => inner.clone(),
            EKind::Lt(x, y) => Expr::le(y.clone(), x.clone()),
            EKind::Le(x, y) => Expr::lt(y.clone(), x.clone()),
            _ => Expr::mk(EKind::Not(a)),
        }
    }

    pub fn and(parts: Vec<Expr>) -> Expr {
        let mut flat = Vec::with_capacity(parts.len());
        for p in parts {
            match p.kind() {
                EKind::BoolLit(true) => {}
                EKind::BoolLit(false) => return Expr::bool_(false),
                EKind::And(inner) => flat.extend(inner.iter().cloned()),
                _ => flat.push(p),
            }
        }
        match flat.len() {
            0 => Expr::bool_(true),
            1 => flat.pop().unwrap(),
            _ => Expr::mk(EKind::And(flat)),
        }
    }

    pub fn or(parts: Vec<Expr>) -> Expr {
        let mut flat = Vec::with_capacity(parts.len());
        for p in parts {
            match p.kind() {
                EKind::BoolLit(false) => {}
                EKind::BoolLit(true) => return Expr::bool_(true),
                EKind::Or(inner) => flat.extend(inner.iter().cloned()),
                _ => flat.push(p),
            }
        }
        match flat.len() {
            0 => Expr::bool_(false),
            1 => flat.pop().unwrap(),
            _ => Expr::mk(EKind::Or(flat)),
        }
    }

    pub fn implies(a: Expr, b: Expr) -> Expr {
        Expr::or(vec![Expr::not(a), b])
    }

    // --- sequences ---

    pub fn seq_empty(elem: Sort) -> Expr {
        Expr::mk(EKind::SeqEmpty(elem))
    }

    pub fn seq_unit(e: Expr) -> Expr {
        Expr::mk(EKind::SeqUnit(e))
    }

    pub fn seq_concat(parts: Vec<Expr>) -> Expr {
        let mut flat: Vec<Expr> = Vec::with_capacity(parts.len());
        let mut elem_sort = None;
        for p in parts {
            if elem_sort.is_none() {
                elem_sort = p.sort().seq_elem().cloned();
            }
            match p.kind() {
                EKind::SeqEmpty(_) => {}
                EKind::SeqConcat(inner) => flat.extend(inner.iter().cloned()),
                _ => flat.push(p),
            }
        }
        match flat.len() {
            0 => Expr::seq_empty(elem_sort.unwrap_or(Sort::Int)),
            1 => flat.pop().unwrap(),
            _ => Expr::mk(EKind::SeqConcat(flat)),
        }
    }

    pub fn seq_prepend(e: Expr, s: Expr) -> Expr {
        Expr::seq_concat(vec![Expr::seq_unit(e), s])
    }

    pub fn seq_push(s: Expr, e: Expr) -> Expr {
        Expr::seq_concat(vec![s, Expr::seq_unit(e)])
    }

    pub fn seq_len(s: Expr) -> Expr {
        match s.kind() {
            EKind::SeqEmpty(_) => Expr::int(0),
            EKind::SeqUnit(_) => Expr::int(1),
            EKind::SeqConcat(parts) => {
                let mut acc = Expr::int(0);
                for p in parts {
                    acc = Expr::add(acc, Expr::seq_len(p.clone()));
                }
                acc
            }
            EKind::SeqUpdate(inner, _, _) => Expr::seq_len(inner.clone()),
            _ => Expr::mk(EKind::SeqLen(s)),
        }
    }

    pub fn seq_at(s: Expr, i: Expr) -> Expr {
        match (s.kind(), i.kind()) {
            (EKind::SeqUnit(e), EKind::IntLit(0)) => e.clone(),
            _ => Expr::mk(EKind::SeqAt(s, i)),
        }
    }

    pub fn seq_take(s: Expr, n: Expr) -> Expr {
        match n.kind() {
            EKind::IntLit(0) => {
                let elem = s.sort().seq_elem().cloned().unwrap_or(Sort::Int);
                Expr::seq_empty(elem)
            }
            _ => Expr::mk(EKind::SeqTake(s, n)),
        }
    }

    pub fn seq_drop(s: Expr, n: Expr) -> Expr {
        match n.kind() {
            EKind::IntLit(0) => s,
            _ => Expr::mk(EKind::SeqDrop(s, n)),
        }
    }

    pub fn seq_tail(s: Expr) -> Expr {
        Expr::seq_drop(s, Expr::int(1))
    }

    pub fn seq_update(s: Expr, i: Expr, e: Expr) -> Expr {
        Expr::mk(EKind::SeqUpdate(s, i, e))
    }

    // --- tuples, options, structs, enums ---

    pub fn tup(parts: Vec<Expr>) -> Expr {
        Expr::mk(EKind::TupMk(parts))
    }

    pub fn tup_get(e: Expr, i: usize) -> Expr {
        match e.kind() {
            EKind::TupMk(parts) if i < parts.len() => parts[i].clone(),
            _ => Expr::mk(EKind::TupGet(e, i)),
        }
    }

    pub fn none(elem: Sort) -> Expr {
        Expr::mk(EKind::NoneLit(elem))
    }

    pub fn some(e: Expr) -> Expr {
        Expr::mk(EKind::SomeMk(e))
    }

    pub fn is_some(e: Expr) -> Expr {
        match e.kind() {
            EKind::SomeMk(_) => Expr::bool_(true),
            EKind::NoneLit(_) => Expr::bool_(false),
            _ => Expr::mk(EKind::IsSome(e)),
        }
    }

    pub fn unwrap(e: Expr) -> Expr {
        match e.kind() {
            EKind::SomeMk(inner) => inner.clone(),
            _ => Expr::mk(EKind::Unwrap(e)),
        }
    }

    /// Struct value; `fields` may arrive in any order and are sorted by name.
    pub fn struct_mk(ty: Ty, mut fields: Vec<(String, Expr)>) -> Expr {
        fields.sort_by(|a, b| a.0.cmp(&b.0));
        Expr::mk(EKind::StructMk(ty, fields))
    }

    pub fn struct_get(e: Expr, field: &str, sort: Sort) -> Expr {
        if let EKind::StructMk(_, fields) = e.kind() {
            if let Some((_, v)) = fields.iter().find(|(f, _)| f == field) {
                return v.clone();
            }
        }
        Expr::mk(EKind::StructGet(e, field.to_string(), sort))
    }

    pub fn enum_mk(ty: Ty, variant: impl Into<String>, mut fields: Vec<(String, Expr)>) -> Expr {
        fields.sort_by(|a, b| a.0.cmp(&b.0));
        Expr::mk(EKind::EnumMk(ty, variant.into(), fields))
    }

    pub fn enum_is(e: Expr, variant: &str) -> Expr {
        match e.kind() {
            EKind::EnumMk(_, v, _) => Expr::bool_(v == variant),
            _ => Expr::mk(EKind::EnumIs(e, variant.to_string())),
        }
    }

    pub fn enum_get(e: Expr, variant: &str, field: &str, sort: Sort) -> Expr {
        if let EKind::EnumMk(_, v, fields) = e.kind() {
            if v == variant {
                if let Some((_, x)) = fields.iter().find(|(f, _)| f == field) {
                    return x.clone();
                }
            }
        }
        Expr::mk(EKind::EnumGet(e, variant.to_string(), field.to_string(), sort))
    }

    // --- queries ---

    pub fn sort(&self) -> Sort {
        match self.kind() {
            EKind::Var(_, s) | EKind::Proph(_, s) => s.clone(),
            EKind::IntLit(_) | EKind::SizeOf(_) => Sort::Int,
            EKind::BoolLit(_) => Sort::Bool,
            EKind::RealLit(..) => Sort::Real,
            EKind::LftLit(_) => Sort::Lft,
            EKind::Ptr(..) => Sort::Ptr,
            EKind::Add(a, _) | EKind::Sub(a, _) | EKind::Mul(a, _) | EKind::Neg(a) => a.sort(),
            EKind::Rem(..) => Sort::Int,
            EKind::Eq(..)
            | EKind::Le(..)
            | EKind::Lt(..)
            | EKind::Not(_)
            | EKind::And(_)
            | EKind::Or(_)
            | EKind::IsSome(_)
            | EKind::EnumIs(..) => Sort::Bool,
            EKind::SeqEmpty(e) => Sort::seq(e.clone()),
            EKind::SeqUnit(e) => Sort::seq(e.sort()),
            EKind::SeqConcat(parts) => parts[0].sort(),
            EKind::SeqLen(_) => Sort::Int,
            EKind::SeqAt(s, _) => s.sort().seq_elem().cloned().expect("SeqAt of non-seq"),
            EKind::SeqTake(s, _) | EKind::SeqDrop(s, _) | EKind::SeqUpdate(s, _, _) => s.sort(),
            EKind::TupMk(parts) => Sort::Tuple(parts.iter().map(Expr::sort).collect()),
            EKind::TupGet(e, i) => match e.sort() {
                Sort::Tuple(parts) if *i < parts.len() => parts[*i].clone(),
                other => panic!("TupGet({i}) of sort {other}"),
            },
            EKind::NoneLit(e) => Sort::opt(e.clone()),
            EKind::SomeMk(e) => Sort::opt(e.sort()),
            EKind::Unwrap(e) => e.sort().opt_elem().cloned().expect("Unwrap of non-option"),
            EKind::StructMk(ty, _) | EKind::EnumMk(ty, _, _) => Sort::Data(ty.clone()),
            EKind::StructGet(_, _, s) | EKind::EnumGet(_, _, _, s) => s.clone(),
        }
    }

    /// Whether any prophecy variable occurs.
    pub fn has_proph(&self) -> bool {
        match self.kind() {
            EKind::Proph(..) => true,
            _ => self.children().iter().any(|c| c.has_proph()),
        }
    }

    /// Direct child expressions (including inside pointer projections).
    pub fn children(&self) -> Vec<Expr> {
        match self.kind() {
            EKind::Var(..)
            | EKind::Proph(..)
            | EKind::IntLit(_)
            | EKind::BoolLit(_)
            | EKind::RealLit(..)
            | EKind::LftLit(_)
            | EKind::SizeOf(_)
            | EKind::SeqEmpty(_)
            | EKind::NoneLit(_) => Vec::new(),
            EKind::Ptr(_, proj) => proj
                .iter()
                .filter_map(|p| match p {
                    ProjElem::Offset(_, e) => Some(e.clone()),
                    _ => None,
                })
                .collect(),
            EKind::Add(a, b)
            | EKind::Sub(a, b)
            | EKind::Mul(a, b)
            | EKind::Rem(a, b)
            | EKind::Eq(a, b)
            | EKind::Le(a, b)
            | EKind::Lt(a, b)
            | EKind::SeqAt(a, b)
            | EKind::SeqTake(a, b)
            | EKind::SeqDrop(a, b) => vec![a.clone(), b.clone()],
            EKind::Neg(a)
            | EKind::Not(a)
            | EKind::SeqUnit(a)
            | EKind::SeqLen(a)
            | EKind::TupGet(a, _)
            | EKind::SomeMk(a)
            | EKind::IsSome(a)
            | EKind::Unwrap(a)
            | EKind::StructGet(a, _, _)
            | EKind::EnumIs(a, _)
            | EKind::EnumGet(a, _, _, _) => vec![a.clone()],
            EKind::And(parts) | EKind::Or(parts) | EKind::SeqConcat(parts) | EKind::TupMk(parts) => {
                parts.clone()
            }
            EKind::SeqUpdate(a, b, c) => vec![a.clone(), b.clone(), c.clone()],
            EKind::StructMk(_, fields) | EKind::EnumMk(_, _, fields) => {
                fields.iter().map(|(_, e)| e.clone()).collect()
            }
        }
    }

    /// Collect free variable names (not prophecies).
    pub fn collect_vars(&self, out: &mut std::collections::BTreeSet<String>) {
        if let EKind::Var(n, _) = self.kind() {
            out.insert(n.clone());
        }
        for c in self.children() {
            c.collect_vars(out);
        }
    }

    /// Collect prophecy variable names.
    pub fn collect_prophs(&self, out: &mut std::collections::BTreeSet<String>) {
        if let EKind::Proph(n, _) = self.kind() {
            out.insert(n.clone());
        }
        for c in self.children() {
            c.collect_prophs(out);
        }
    }

    /// Substitute variables by name. Rebuilds through smart constructors so
    /// the result is normalized.
    pub fn subst(&self, map: &std::collections::BTreeMap<String, Expr>) -> Expr {
        self.rewrite(&mut |e| match e.kind() {
            EKind::Var(n, _) => map.get(n).cloned(),
            _ => None,
        })
    }

    /// Substitute prophecy variables by name.
    pub fn subst_proph(&self, map: &std::collections::BTreeMap<String, Expr>) -> Expr {
        self.rewrite(&mut |e| match e.kind() {
            EKind::Proph(n, _) => map.get(n).cloned(),
            _ => None,
        })
    }

    /// Bottom-up rewrite: children first, then the node itself. `f` returns
    /// `Some(replacement)` to replace a node.
    pub fn rewrite(&self, f: &mut dyn FnMut(&Expr) -> Option<Expr>) -> Expr {
        let rebuilt = self.rebuild_children(&mut |c| c.rewrite(f));
        f(&rebuilt).unwrap_or(rebuilt)
    }

    /// Rebuild this node with each child passed through `g`, re-applying
    /// smart constructors.
    fn rebuild_children(&self, g: &mut dyn FnMut(&Expr) -> Expr) -> Expr {
        match self.kind() {
            EKind::Var(..)
            | EKind::Proph(..)
            | EKind::IntLit(_)
            | EKind::BoolLit(_)
            | EKind::RealLit(..)
            | EKind::LftLit(_)
            | EKind::SizeOf(_)
            | EKind::SeqEmpty(_)
            | EKind::NoneLit(_) => self.clone(),
            EKind::Ptr(loc, proj) => {
                let proj2: Vec<ProjElem> = proj
                    .iter()
                    .map(|p| match p {
                        ProjElem::Offset(t, e) => ProjElem::Offset(t.clone(), g(e)),
                        other => other.clone(),
                    })
                    .collect();
                Expr::ptr(loc.clone(), proj2)
            }
            EKind::Add(a, b) => Expr::add(g(a), g(b)),
            EKind::Sub(a, b) => Expr::sub(g(a), g(b)),
            EKind::Mul(a, b) => Expr::mul(g(a), g(b)),
            EKind::Neg(a) => Expr::neg(g(a)),
            EKind::Rem(a, b) => Expr::rem(g(a), g(b)),
            EKind::Eq(a, b) => Expr::eq(g(a), g(b)),
            EKind::Le(a, b) => Expr::le(g(a), g(b)),
            EKind::Lt(a, b) => Expr::lt(g(a), g(b)),
            EKind::Not(a) => Expr::not(g(a)),
            EKind::And(parts) => Expr::and(parts.iter().map(|p| g(p)).collect()),
            EKind::Or(parts) => Expr::or(parts.iter().map(|p| g(p)).collect()),
            EKind::SeqUnit(a) => Expr::seq_unit(g(a)),
            EKind::SeqConcat(parts) => Expr::seq_concat(parts.iter().map(|p| g(p)).collect()),
            EKind::SeqLen(a) => Expr::seq_len(g(a)),
            EKind::SeqAt(a, b) => Expr::seq_at(g(a), g(b)),
            EKind::SeqTake(a, b) => Expr::seq_take(g(a), g(b)),
            EKind::SeqDrop(a, b) => Expr::seq_drop(g(a), g(b)),
            EKind::SeqUpdate(a, b, c) => Expr::seq_update(g(a), g(b), g(c)),
            EKind::TupMk(parts) => Expr::tup(parts.iter().map(|p| g(p)).collect()),
            EKind::TupGet(a, i) => Expr::tup_get(g(a), *i),
            EKind::SomeMk(a) => Expr::some(g(a)),
            EKind::IsSome(a) => Expr::is_some(g(a)),
            EKind::Unwrap(a) => Expr::unwrap(g(a)),
            EKind::StructMk(ty, fields) => Expr::struct_mk(
                ty.clone(),
                fields.iter().map(|(f, e)| (f.clone(), g(e))).collect(),
            ),
            EKind::StructGet(a, f, s) => Expr::struct_get(g(a), f, s.clone()),
            EKind::EnumMk(ty, v, fields) => Expr::enum_mk(
                ty.clone(),
                v.clone(),
                fields.iter().map(|(f, e)| (f.clone(), g(e))).collect(),
            ),
            EKind::EnumIs(a, v) => Expr::enum_is(g(a), v),
            EKind::EnumGet(a, v, f, s) => Expr::enum_get(g(a), v, f, s.clone()),
        }
    }

    /// Node count, used to orient rewrite rules (larger rewrites to smaller).
    pub fn size(&self) -> usize {
        1 + self.children().iter().map(Expr::size).sum::<usize>()
    }

    pub fn as_int_lit(&self) -> Option<i128> {
        match self.kind() {
            EKind::IntLit(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bool_lit(&self) -> Option<bool> {
        match self.kind() {
            EKind::BoolLit(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_ptr(&self) -> Option<(&LocRef, &[ProjElem])> {
        match self.kind() {
            EKind::Ptr(l, p) => Some((l, p)),
            _ => None,
        }
    }
}

/// Structural pointer equality where decidable: same concrete locations with
/// shape-compatible projections decompose; provably distinct shapes refute.
fn ptr_eq_shape(l1: &LocRef, p1: &[ProjElem], l2: &LocRef, p2: &[ProjElem]) -> Option<Expr> {
    if let (LocRef::Conc(a), LocRef::Conc(b)) = (l1, l2) {
        if a != b {
            return Some(Expr::bool_(false));
        }
    }
    if l1 != l2 {
        return None;
    }
    if p1.len() != p2.len() {
        // Same location, different projection depth: distinct addresses
        // except for offset arithmetic, which the merge normalizes away.
        let fieldish = |p: &[ProjElem]| {
            p.iter()
                .all(|e| matches!(e, ProjElem::Field(..) | ProjElem::VField(..)))
        };
        if fieldish(p1) && fieldish(p2) {
            return Some(Expr::bool_(false));
        }
        return None;
    }
    let mut conj = Vec::new();
    for (a, b) in p1.iter().zip(p2) {
        match (a, b) {
            (ProjElem::Field(t1, f1), ProjElem::Field(t2, f2)) => {
                if t1 != t2 || f1 != f2 {
                    return Some(Expr::bool_(false));
                }
            }
            (ProjElem::VField(t1, v1, f1), ProjElem::VField(t2, v2, f2)) => {
                if t1 != t2 || v1 != v2 || f1 != f2 {
                    return Some(Expr::bool_(false));
                }
            }
            (ProjElem::Offset(t1, e1), ProjElem::Offset(t2, e2)) => {
                if t1 != t2 {
                    return None;
                }
                conj.push(Expr::eq(e1.clone(), e2.clone()));
            }
            _ => return None,
        }
    }
    Some(Expr::and(conj))
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind() {
            EKind::Var(n, _) => write!(f, "{n}"),
            EKind::Proph(n, _) => write!(f, "up({n})"),
            EKind::IntLit(v) => write!(f, "{v}"),
            EKind::BoolLit(v) => write!(f, "{v}"),
            EKind::RealLit(n, d) => {
                if *d == 1 {
                    write!(f, "{n}r")
                } else {
                    write!(f, "{n}/{d}")
                }
            }
            EKind::LftLit(n) => write!(f, "'{n}"),
            EKind::Ptr(loc, proj) => {
                write!(f, "{loc}")?;
                for p in proj {
                    write!(f, "{p}")?;
                }
                Ok(())
            }
            EKind::SizeOf(t) => write!(f, "size_of::<{t}>()"),
            EKind::Add(a, b) => write!(f, "({a} + {b})"),
            EKind::Sub(a, b) => write!(f, "({a} - {b})"),
            EKind::Mul(a, b) => write!(f, "({a} * {b})"),
            EKind::Neg(a) => write!(f, "(-{a})"),
            EKind::Rem(a, b) => write!(f, "({a} % {b})"),
            EKind::Eq(a, b) => write!(f, "({a} == {b})"),
            EKind::Le(a, b) => write!(f, "({a} <= {b})"),
            EKind::Lt(a, b) => write!(f, "({a} < {b})"),
            EKind::Not(a) => write!(f, "!{a}"),
            EKind::And(parts) => {
                write!(f, "(")?;
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        write!(f, " && ")?;
                    }
                    write!(f, "{p}")?;
                }
                write!(f, ")")
            }
            EKind::Or(parts) => {
                write!(f, "(")?;
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        write!(f, " || ")?;
                    }
                    write!(f, "{p}")?;
                }
                write!(f, ")")
            }
            EKind::SeqEmpty(_) => write!(f, "seq![]"),
            EKind::SeqUnit(e) => write!(f, "seq![{e}]"),
            EKind::SeqConcat(parts) => {
                write!(f, "concat(")?;
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{p}")?;
                }
                write!(f, ")")
            }
            EKind::SeqLen(s) => write!(f, "len({s})"),
            EKind::SeqAt(s, i) => write!(f, "at({s}, {i})"),
            EKind::SeqTake(s, n) => write!(f, "take({s}, {n})"),
            EKind::SeqDrop(s, n) => write!(f, "drop({s}, {n})"),
            EKind::SeqUpdate(s, i, e) => write!(f, "update({s}, {i}, {e})"),
            EKind::TupMk(parts) => {
                write!(f, "(")?;
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{p}")?;
                }
                write!(f, ")")
            }
            EKind::TupGet(e, i) => write!(f, "{e}.{i}"),
            EKind::NoneLit(_) => write!(f, "None"),
            EKind::SomeMk(e) => write!(f, "Some({e})"),
            EKind::IsSome(e) => write!(f, "is_some({e})"),
            EKind::Unwrap(e) => write!(f, "unwrap({e})"),
            EKind::StructMk(ty, fields) => {
                write!(f, "{ty} {{ ")?;
                for (i, (name, e)) in fields.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{name}: {e}")?;
                }
                write!(f, " }}")
            }
            EKind::StructGet(e, field, _) => write!(f, "{e}.{field}"),
            EKind::EnumMk(_, v, fields) => {
                write!(f, "{v} {{ ")?;
                for (i, (name, e)) in fields.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{name}: {e}")?;
                }
                write!(f, " }}")
            }
            EKind::EnumIs(e, v) => write!(f, "is_{v}({e})"),
            EKind::EnumGet(e, v, field, _) => write!(f, "{e}.{v}::{field}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_folding() {
        assert_eq!(Expr::add(Expr::int(2), Expr::int(3)), Expr::int(5));
        assert_eq!(
            Expr::add(Expr::var("x", Sort::Int), Expr::int(0)),
            Expr::var("x", Sort::Int)
        );
        assert_eq!(Expr::lt(Expr::int(2), Expr::int(3)), Expr::bool_(true));
    }

    #[test]
    fn equality_decomposition() {
        let x = Expr::var("x", Sort::Int);
        let y = Expr::var("y", Sort::Int);
        assert_eq!(
            Expr::eq(Expr::some(x.clone()), Expr::some(y.clone())),
            Expr::eq(x.clone(), y.clone())
        );
        assert_eq!(
            Expr::eq(Expr::some(x.clone()), Expr::none(Sort::Int)),
            Expr::bool_(false)
        );
        let e = Expr::eq(Expr::tup(vec![x.clone(), y.clone()]), Expr::tup(vec![y, x]));
        assert!(matches!(e.kind(), EKind::And(_)));
    }

    #[test]
    fn struct_fields_sorted_by_name() {
        let ty = Ty::Named("P".into(), vec![]);
        let a = Expr::struct_mk(
            ty.clone(),
            vec![
                ("b".into(), Expr::int(2)),
                ("a".into(), Expr::int(1)),
            ],
        );
        let b = Expr::struct_mk(
            ty,
            vec![
                ("a".into(), Expr::int(1)),
                ("b".into(), Expr::int(2)),
            ],
        );
        assert_eq!(a, b);
        assert_eq!(Expr::struct_get(a, "b", Sort::Int), Expr::int(2));
    }

    #[test]
    fn offset_merging() {
        let t = Ty::Int(IntTy::I32);
        let p = Expr::ptr(
            LocRef::Conc(1),
            vec![
                ProjElem::Offset(t.clone(), Expr::int(2)),
                ProjElem::Offset(t.clone(), Expr::int(3)),
            ],
        );
        let (_, proj) = p.as_ptr().unwrap();
        assert_eq!(proj.len(), 1);
        assert_eq!(proj[0], ProjElem::Offset(t, Expr::int(5)));
    }

    #[test]
    fn concat_normalization() {
        let s = Expr::var("s", Sort::seq(Sort::Int));
        let e = Expr::seq_concat(vec![
            Expr::seq_empty(Sort::Int),
            Expr::seq_prepend(Expr::int(1), s.clone()),
        ]);
        // concat([1] ++ s) flattens to concat(seq![1], s)
        match e.kind() {
            EKind::SeqConcat(parts) => {
                assert_eq!(parts.len(), 2);
                assert_eq!(parts[0], Expr::seq_unit(Expr::int(1)));
            }
            other => panic!("unexpected: {other:?}"),
        }
        assert_eq!(
            Expr::seq_len(e),
            Expr::add(Expr::int(1), Expr::seq_len(s))
        );
    }

    #[test]
    fn ptr_field_disequality() {
        let ty = Ty::Named("P".into(), vec![]);
        let base = Expr::ptr(LocRef::Conc(7), vec![]);
        let a = base.ptr_proj(ProjElem::Field(ty.clone(), "a".into())).unwrap();
        let b = base.ptr_proj(ProjElem::Field(ty, "b".into())).unwrap();
        assert_eq!(Expr::eq(a.clone(), b), Expr::bool_(false));
        assert_eq!(Expr::eq(a.clone(), a), Expr::bool_(true));
    }

    #[test]
    fn scalar_sizes_are_concrete() {
        assert_eq!(Expr::size_of(Ty::Int(IntTy::U8)), Expr::int(1));
        assert_eq!(Expr::size_of(Ty::Int(IntTy::U64)), Expr::int(8));
        assert!(matches!(
            Expr::size_of(Ty::Named("Node".into(), vec![])).kind(),
            EKind::SizeOf(_)
        ));
    }

    #[test]
    fn proph_detection_and_subst() {
        let p = Expr::proph("x", Sort::Int);
        let e = Expr::add(p.clone(), Expr::int(1));
        assert!(e.has_proph());
        let mut map = std::collections::BTreeMap::new();
        map.insert("x".to_string(), Expr::int(4));
        assert_eq!(e.subst_proph(&map), Expr::int(5));
    }
}
