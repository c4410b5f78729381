//! The assertion language: spatial atoms over the symbolic heap, lifetime
//! tokens, guarded predicates, prophecy halves, and observations, closed
//! under separating conjunction and existential quantification.
//!
//! Assertions are data; their meaning lives in the produce/consume engine.
//! Variables are ordinary `term::Expr` variables. A binder marked `proph`
//! ranges over prophecy variables and is instantiated with a fresh prophecy
//! rather than a fresh symbolic value.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::term::{Expr, Sort};
use crate::types::Ty;

/// A logical binder, for existentials and specification quantifiers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Binder {
    pub name: String,
    pub sort: Sort,
    pub proph: bool,
}

impl Binder {
    pub fn new(name: impl Into<String>, sort: Sort) -> Binder {
        Binder {
            name: name.into(),
            sort,
            proph: false,
        }
    }

    pub fn proph(name: impl Into<String>, sort: Sort) -> Binder {
        Binder {
            name: name.into(),
            sort,
            proph: true,
        }
    }
}

/// Assertion syntax.
#[derive(Debug, Clone, PartialEq)]
pub enum Asn {
    Emp,
    /// Pure formula conjoined to the path condition.
    Pure(Expr),
    /// Separating conjunction, flattened.
    Star(Vec<Asn>),
    Exists(Vec<Binder>, Box<Asn>),
    /// `addr ↦ᵀ val`, one typed initialized cell.
    PointsTo { addr: Expr, ty: Ty, val: Expr },
    /// `count` initialized `elem` cells at `addr`; `vals` is their sequence.
    Many {
        addr: Expr,
        elem: Ty,
        count: Expr,
        vals: Expr,
    },
    /// `count` uninitialized `elem` cells at `addr`.
    UninitMany { addr: Expr, elem: Ty, count: Expr },
    /// Folded user predicate instance.
    Pred { name: String, args: Vec<Expr> },
    /// Full borrow: a guarded predicate entry `&κ pred(args)`.
    Borrow {
        pred: String,
        lft: Expr,
        args: Vec<Expr>,
    },
    /// Observation `⟨o⟩` over prophecy and symbolic variables.
    Obs(Expr),
    /// Lifetime token `[κ]_q`.
    Alive { lft: Expr, frac: Expr },
    /// Death certificate `[†κ]`.
    Dead { lft: Expr },
    /// Value observer half of prophecy `pcy`, carrying `val`.
    VObs { pcy: Expr, val: Expr },
    /// Prophecy controller half of `pcy`, carrying `val`.
    PCtrl { pcy: Expr, val: Expr },
    /// Opaque closing token from a guarded unfold.
    ClosingTok {
        pred: String,
        lft: Expr,
        frac: Expr,
        args: Vec<Expr>,
    },
    /// Magic wand `lhs −∗ rhs`; provable only as an extraction obligation.
    Wand { lhs: Box<Asn>, rhs: Box<Asn> },
}

impl Asn {
    pub fn pure(e: Expr) -> Asn {
        Asn::Pure(e)
    }

    /// Star of parts, flattening nested stars and dropping `emp`.
    pub fn star(parts: Vec<Asn>) -> Asn {
        let mut out = Vec::new();
        for p in parts {
            match p {
                Asn::Emp => {}
                Asn::Star(inner) => out.extend(inner),
                other => out.push(other),
            }
        }
        match out.len() {
            0 => Asn::Emp,
            1 => out.into_iter().next().unwrap(),
            _ => Asn::Star(out),
        }
    }

    pub fn exists(binders: Vec<Binder>, body: Asn) -> Asn {
        if binders.is_empty() {
            body
        } else {
            Asn::Exists(binders, Box::new(body))
        }
    }

    pub fn pts(addr: Expr, ty: Ty, val: Expr) -> Asn {
        Asn::PointsTo { addr, ty, val }
    }

    pub fn pred(name: impl Into<String>, args: Vec<Expr>) -> Asn {
        Asn::Pred {
            name: name.into(),
            args,
        }
    }

    /// Free variables, respecting binder shadowing.
    pub fn free_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Asn::Emp => {}
            Asn::Pure(e) | Asn::Obs(e) => e.collect_vars(out),
            Asn::Star(parts) => parts.iter().for_each(|p| p.free_vars(out)),
            Asn::Exists(bs, body) => {
                let mut inner = BTreeSet::new();
                body.free_vars(&mut inner);
                for b in bs {
                    inner.remove(&b.name);
                }
                out.extend(inner);
            }
            Asn::PointsTo { addr, val, .. } => {
                addr.collect_vars(out);
                val.collect_vars(out);
            }
            Asn::Many {
                addr, count, vals, ..
            } => {
                addr.collect_vars(out);
                count.collect_vars(out);
                vals.collect_vars(out);
            }
            Asn::UninitMany { addr, count, .. } => {
                addr.collect_vars(out);
                count.collect_vars(out);
            }
            Asn::Pred { args, .. } => args.iter().for_each(|a| a.collect_vars(out)),
            Asn::Borrow { lft, args, .. } => {
                lft.collect_vars(out);
                args.iter().for_each(|a| a.collect_vars(out));
            }
            Asn::Alive { lft, frac } => {
                lft.collect_vars(out);
                frac.collect_vars(out);
            }
            Asn::Dead { lft } => lft.collect_vars(out),
            Asn::VObs { pcy, val } | Asn::PCtrl { pcy, val } => {
                pcy.collect_vars(out);
                val.collect_vars(out);
            }
            Asn::ClosingTok {
                lft, frac, args, ..
            } => {
                lft.collect_vars(out);
                frac.collect_vars(out);
                args.iter().for_each(|a| a.collect_vars(out));
            }
            Asn::Wand { lhs, rhs } => {
                lhs.free_vars(out);
                rhs.free_vars(out);
            }
        }
    }

    /// Substitute free variables, respecting binder shadowing.
    pub fn subst(&self, map: &BTreeMap<String, Expr>) -> Asn {
        let s = |e: &Expr| e.subst(map);
        match self {
            Asn::Emp => Asn::Emp,
            Asn::Pure(e) => Asn::Pure(s(e)),
            Asn::Obs(e) => Asn::Obs(s(e)),
            Asn::Star(parts) => Asn::Star(parts.iter().map(|p| p.subst(map)).collect()),
            Asn::Exists(bs, body) => {
                let mut inner = map.clone();
                for b in bs {
                    inner.remove(&b.name);
                }
                Asn::Exists(bs.clone(), Box::new(body.subst(&inner)))
            }
            Asn::PointsTo { addr, ty, val } => Asn::PointsTo {
                addr: s(addr),
                ty: ty.clone(),
                val: s(val),
            },
            Asn::Many {
                addr,
                elem,
                count,
                vals,
            } => Asn::Many {
                addr: s(addr),
                elem: elem.clone(),
                count: s(count),
                vals: s(vals),
            },
            Asn::UninitMany { addr, elem, count } => Asn::UninitMany {
                addr: s(addr),
                elem: elem.clone(),
                count: s(count),
            },
            Asn::Pred { name, args } => Asn::Pred {
                name: name.clone(),
                args: args.iter().map(s).collect(),
            },
            Asn::Borrow { pred, lft, args } => Asn::Borrow {
                pred: pred.clone(),
                lft: s(lft),
                args: args.iter().map(s).collect(),
            },
            Asn::Alive { lft, frac } => Asn::Alive {
                lft: s(lft),
                frac: s(frac),
            },
            Asn::Dead { lft } => Asn::Dead { lft: s(lft) },
            Asn::VObs { pcy, val } => Asn::VObs {
                pcy: s(pcy),
                val: s(val),
            },
            Asn::PCtrl { pcy, val } => Asn::PCtrl {
                pcy: s(pcy),
                val: s(val),
            },
            Asn::ClosingTok {
                pred,
                lft,
                frac,
                args,
            } => Asn::ClosingTok {
                pred: pred.clone(),
                lft: s(lft),
                frac: s(frac),
                args: args.iter().map(s).collect(),
            },
            Asn::Wand { lhs, rhs } => Asn::Wand {
                lhs: Box::new(lhs.subst(map)),
                rhs: Box::new(rhs.subst(map)),
            },
        }
    }
}

fn write_args(f: &mut fmt::Formatter<'_>, args: &[Expr]) -> fmt::Result {
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            write!(f, ", ")?;
        }
        write!(f, "{a}")?;
    }
    Ok(())
}

impl fmt::Display for Asn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Asn::Emp => write!(f, "emp"),
            Asn::Pure(e) => write!(f, "({e})"),
            Asn::Star(parts) => {
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        write!(f, " * ")?;
                    }
                    write!(f, "{p}")?;
                }
                Ok(())
            }
            Asn::Exists(bs, body) => {
                write!(f, "exists ")?;
                for (i, b) in bs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{}", b.name)?;
                }
                write!(f, ". {body}")
            }
            Asn::PointsTo { addr, ty, val } => write!(f, "{addr} |-> [{ty}] {val}"),
            Asn::Many {
                addr,
                elem,
                count,
                vals,
            } => write!(f, "{addr} |-> many({elem}, {count}, {vals})"),
            Asn::UninitMany { addr, elem, count } => {
                write!(f, "{addr} |-> uninit({elem}, {count})")
            }
            Asn::Pred { name, args } => {
                write!(f, "{name}(")?;
                write_args(f, args)?;
                write!(f, ")")
            }
            Asn::Borrow { pred, lft, args } => {
                write!(f, "&{lft} {pred}(")?;
                write_args(f, args)?;
                write!(f, ")")
            }
            Asn::Obs(e) => write!(f, "<{e}>"),
            Asn::Alive { lft, frac } => write!(f, "[{lft}]_({frac})"),
            Asn::Dead { lft } => write!(f, "[dead {lft}]"),
            Asn::VObs { pcy, val } => write!(f, "vobs({pcy}, {val})"),
            Asn::PCtrl { pcy, val } => write!(f, "pctrl({pcy}, {val})"),
            Asn::ClosingTok {
                pred,
                lft,
                frac,
                args,
            } => {
                write!(f, "closing({pred}, {lft}, {frac}; ")?;
                write_args(f, args)?;
                write!(f, ")")
            }
            Asn::Wand { lhs, rhs } => write!(f, "({lhs}) -* ({rhs})"),
        }
    }
}

/// A function or lemma specification. Universals are learned while
/// consuming `requires`; existentials are freshened while producing
/// `ensures`. Lifetime tokens and fraction binders appear as ordinary
/// atoms and universals inside the two assertions.
#[derive(Debug, Clone, PartialEq)]
pub struct Spec {
    pub universals: Vec<Binder>,
    pub requires: Asn,
    pub existentials: Vec<Binder>,
    pub ensures: Asn,
}
