//! Ownership predicates for the IR type grammar and the borrow encoding of
//! mutable references.
//!
//! Every type `T` gets an ownership predicate `own@T(value, repr)` relating
//! a runtime value to its mathematical representation; registered user
//! predicates stand in for named types. `&mut T` is the exception: its
//! predicate `own@&mut T(lft, ptr, repr)` owns no memory directly but holds
//! a full borrow of the pointee body `mutbody@T` together with the observer
//! half of a prophecy whose controller is sealed inside the borrow. In
//! type-safety-only mode the prophecy machinery drops out and mutable
//! references carry the unit representation. The `@` in generated names
//! keeps them outside the source identifier space.

use std::collections::{BTreeMap, BTreeSet};

use crate::asn::{Asn, Binder, Spec};
use crate::assertion::{close_borrow_updating, consume, produce, Binds, ConsumeBranches, Env};
use crate::config::Mode;
use crate::preds::{PredDef, PredKind, PredTable};
use crate::solver::Pc;
use crate::state::SymState;
use crate::term::{value_sort, EKind, Expr, Sort};
use crate::types::Ty;

/// Registered ownership implementations: the rendering of a named type to
/// the predicate relating its values to their representations. Registered
/// predicates take exactly a value and a representation.
pub type OwnImpls = BTreeMap<String, String>;

/// Generates ownership and borrow-body predicates on demand. Generation
/// mutates a predicate table; lookups and runtime reasoning borrow it.
pub struct BorrowGen<'a> {
    pub mode: Mode,
    pub impls: &'a OwnImpls,
}

impl<'a> BorrowGen<'a> {
    /// Name of the structural ownership predicate for `ty`.
    pub fn own_name(ty: &Ty) -> String {
        format!("own@{ty}")
    }

    /// Name of the borrow-body predicate guarding the pointee of `&mut ty`.
    pub fn body_name(pointee: &Ty) -> String {
        format!("mutbody@{pointee}")
    }

    /// The representation sort of `ty`. Named types take it from their
    /// registered ownership predicate.
    pub fn repr_sort(&self, preds: &PredTable, ty: &Ty) -> Result<Sort, String> {
        Ok(match ty {
            Ty::Unit => Sort::unit(),
            Ty::Bool => Sort::Bool,
            Ty::Int(_) => Sort::Int,
            Ty::RawPtr(_) | Ty::NonNull(_) => Sort::Ptr,
            Ty::MutRef(t) => match self.mode {
                Mode::Ts => Sort::unit(),
                Mode::Fc => {
                    let r = self.repr_sort(preds, t)?;
                    Sort::Tuple(vec![r.clone(), r])
                }
            },
            Ty::Boxed(t) => self.repr_sort(preds, t)?,
            Ty::Opt(t) => Sort::opt(self.repr_sort(preds, t)?),
            Ty::Tuple(ts) => Sort::Tuple(
                ts.iter()
                    .map(|t| self.repr_sort(preds, t))
                    .collect::<Result<_, _>>()?,
            ),
            Ty::Param(p) => Sort::Abs(format!("{p}::Repr")),
            Ty::Named(..) => {
                let def = self.impl_def(preds, ty)?;
                def.params[1].sort.clone()
            }
        })
    }

    /// The name of the ownership predicate for `ty` in an already-populated
    /// table.
    pub fn own_ref(&self, preds: &PredTable, ty: &Ty) -> Result<String, String> {
        let name = match ty {
            Ty::Named(..) => return Ok(self.impl_def(preds, ty)?.name.clone()),
            _ => Self::own_name(ty),
        };
        if !preds.contains_key(&name) {
            return Err(format!("ownership predicate for {ty} is not in the table"));
        }
        Ok(name)
    }

    fn impl_def<'p>(&self, preds: &'p PredTable, ty: &Ty) -> Result<&'p PredDef, String> {
        let key = ty.to_string();
        let name = self
            .impls
            .get(&key)
            .ok_or_else(|| format!("missing Ownable impl for a non-generic arg type: {key}"))?;
        let def = preds
            .get(name)
            .ok_or_else(|| format!("Ownable impl for {key} names unknown predicate {name}"))?;
        if def.params.len() != 2 {
            return Err(format!(
                "Ownable impl {name} for {key} must take exactly a value and a representation"
            ));
        }
        Ok(def)
    }

    /// Ensure the ownership predicate for `ty` exists, generating it and
    /// its dependencies as needed, and return its name.
    pub fn ensure_own(&self, preds: &mut PredTable, ty: &Ty) -> Result<String, String> {
        if let Ty::MutRef(t) = ty {
            return self.ensure_mutref(preds, t);
        }
        if ty.contains_mut_ref() {
            return Err(format!(
                "mutable references may only appear at the top level of a type: {ty}"
            ));
        }
        if let Ty::Named(..) = ty {
            return Ok(self.impl_def(preds, ty)?.name.clone());
        }
        let name = Self::own_name(ty);
        if preds.contains_key(&name) {
            return Ok(name);
        }
        let def = self.build_own(preds, ty, &name)?;
        preds.insert(name.clone(), def);
        Ok(name)
    }

    fn build_own(&self, preds: &mut PredTable, ty: &Ty, name: &str) -> Result<PredDef, String> {
        let vsort = value_sort(ty);
        let rsort = self.repr_sort(preds, ty)?;
        let v = Expr::var("v", vsort.clone());
        let r = Expr::var("r", rsort.clone());
        let mut def = PredDef::new(
            name,
            vec![Binder::new("v", vsort.clone()), Binder::new("r", rsort)],
            vec![0],
        );
        match ty {
            Ty::Unit => {
                def.disjuncts = vec![Asn::star(vec![
                    Asn::pure(Expr::eq(v, Expr::unit())),
                    Asn::pure(Expr::eq(r, Expr::unit())),
                ])];
                def.expand_on_produce = true;
            }
            Ty::Bool => {
                def.disjuncts = vec![Asn::pure(Expr::eq(r, v))];
                def.expand_on_produce = true;
            }
            Ty::Int(it) => {
                def.disjuncts = vec![Asn::star(vec![
                    Asn::pure(Expr::le(Expr::int((*it).min()), v.clone())),
                    Asn::pure(Expr::le(v.clone(), Expr::int((*it).max()))),
                    Asn::pure(Expr::eq(r, v)),
                ])];
                def.expand_on_produce = true;
            }
            // A bare pointer owns nothing; its representation is the
            // address itself.
            Ty::RawPtr(_) | Ty::NonNull(_) => {
                def.disjuncts = vec![Asn::pure(Expr::eq(r, v))];
                def.expand_on_produce = true;
            }
            Ty::Boxed(t) => {
                let inner = self.ensure_own(preds, t)?;
                let tr = self.repr_sort(preds, t)?;
                let w = Expr::var("w", value_sort(t));
                let rw = Expr::var("rw", tr.clone());
                def.disjuncts = vec![Asn::exists(
                    vec![Binder::new("w", value_sort(t)), Binder::new("rw", tr)],
                    Asn::star(vec![
                        Asn::pts(v, (**t).clone(), w.clone()),
                        Asn::pred(inner, vec![w, rw.clone()]),
                        Asn::pure(Expr::eq(r, rw)),
                    ]),
                )];
            }
            Ty::Opt(t) => {
                let inner = self.ensure_own(preds, t)?;
                let tr = self.repr_sort(preds, t)?;
                let w = Expr::var("w", value_sort(t));
                let rw = Expr::var("rw", tr.clone());
                let none_case = Asn::star(vec![
                    Asn::pure(Expr::not(Expr::is_some(v.clone()))),
                    Asn::pure(Expr::eq(r.clone(), Expr::none(tr.clone()))),
                ]);
                let some_case = Asn::exists(
                    vec![Binder::new("w", value_sort(t)), Binder::new("rw", tr)],
                    Asn::star(vec![
                        Asn::pure(Expr::is_some(v.clone())),
                        Asn::pure(Expr::eq(w.clone(), Expr::unwrap(v))),
                        Asn::pred(inner, vec![w, rw.clone()]),
                        Asn::pure(Expr::eq(r, Expr::some(rw))),
                    ]),
                );
                def.disjuncts = vec![none_case, some_case];
            }
            Ty::Tuple(ts) => {
                let mut binders = Vec::new();
                let mut atoms = Vec::new();
                let mut reprs = Vec::new();
                for (i, t) in ts.iter().enumerate() {
                    let inner = self.ensure_own(preds, t)?;
                    let tr = self.repr_sort(preds, t)?;
                    let w = Expr::var(format!("w{i}"), value_sort(t));
                    let rw = Expr::var(format!("r{i}"), tr.clone());
                    binders.push(Binder::new(format!("w{i}"), value_sort(t)));
                    binders.push(Binder::new(format!("r{i}"), tr));
                    atoms.push(Asn::pure(Expr::eq(w.clone(), Expr::tup_get(v.clone(), i))));
                    atoms.push(Asn::pred(inner, vec![w, rw.clone()]));
                    reprs.push(rw);
                }
                atoms.push(Asn::pure(Expr::eq(r, Expr::tup(reprs))));
                def.disjuncts = vec![Asn::exists(binders, Asn::star(atoms))];
            }
            Ty::Param(_) => def.kind = PredKind::Abstract,
            Ty::MutRef(_) | Ty::Named(..) => unreachable!("handled by ensure_own"),
        }
        Ok(def)
    }

    /// Generate the mutable-reference predicates for `&mut pointee`: the
    /// borrow body guarding the pointee and the reference's own predicate.
    /// The pointee's ownership body is inlined one level into the borrow
    /// body, so ownership existentials are top-level existentials of the
    /// borrow body.
    fn ensure_mutref(&self, preds: &mut PredTable, pointee: &Ty) -> Result<String, String> {
        let mref = Ty::mut_ref(pointee.clone());
        let own_nm = Self::own_name(&mref);
        if preds.contains_key(&own_nm) {
            return Ok(own_nm);
        }
        if pointee.contains_mut_ref() {
            return Err(format!(
                "mutable references may only appear at the top level of a type: {mref}"
            ));
        }
        let body_nm = Self::body_name(pointee);
        let rsort = self.repr_sort(preds, pointee)?;
        let vsort = value_sort(pointee);
        let fc = self.mode == Mode::Fc;

        let pv = Expr::var("p", Sort::Ptr);
        let xv = Expr::var("x", rsort.clone());
        let av = Expr::var("a", rsort.clone());
        let vv = Expr::var("v", vsort.clone());

        let inner_nm = self.ensure_own(preds, pointee)?;
        let inner = preds.get(&inner_nm).cloned().expect("just ensured");

        let mut disjuncts = Vec::new();
        if inner.disjuncts.is_empty() {
            // Abstract pointee ownership stays a single folded atom.
            let mut atoms = vec![
                Asn::pts(pv.clone(), pointee.clone(), vv.clone()),
                Asn::pred(inner_nm.clone(), vec![vv.clone(), av.clone()]),
            ];
            if fc {
                atoms.push(Asn::PCtrl {
                    pcy: xv.clone(),
                    val: av.clone(),
                });
            }
            disjuncts.push(Asn::exists(
                vec![
                    Binder::new("v", vsort.clone()),
                    Binder::new("a", rsort.clone()),
                ],
                Asn::star(atoms),
            ));
        } else {
            let mut taken: BTreeSet<String> =
                ["p", "x", "v", "a"].iter().map(|s| s.to_string()).collect();
            for prm in &inner.params {
                taken.insert(prm.name.clone());
            }
            for d in &inner.disjuncts {
                let (bs, core) = split_exists(d);
                let mut m = Binds::new();
                m.insert(inner.params[0].name.clone(), vv.clone());
                m.insert(inner.params[1].name.clone(), av.clone());
                let (bs, renames) = rename_apart(&bs, &taken);
                m.extend(renames);
                let core = core.subst(&m);
                let mut binders = vec![
                    Binder::new("v", vsort.clone()),
                    Binder::new("a", rsort.clone()),
                ];
                binders.extend(bs);
                let mut atoms = vec![Asn::pts(pv.clone(), pointee.clone(), vv.clone()), core];
                if fc {
                    atoms.push(Asn::PCtrl {
                        pcy: xv.clone(),
                        val: av.clone(),
                    });
                }
                disjuncts.push(Asn::exists(binders, Asn::star(atoms)));
            }
        }

        let mut body_params = vec![Binder::new("p", Sort::Ptr)];
        let mut body_ins = vec![0];
        if fc {
            body_params.push(Binder::new("x", rsort.clone()));
            body_ins.push(1);
        }
        let mut body = PredDef::new(body_nm.clone(), body_params, body_ins);
        body.kind = PredKind::Borrow;
        body.disjuncts = disjuncts;
        preds.insert(body_nm.clone(), body);

        let mrsort = self.repr_sort(preds, &mref)?;
        let kv = Expr::var("k", Sort::Lft);
        let rv = Expr::var("r", mrsort.clone());
        let disjunct = if fc {
            Asn::exists(
                vec![
                    Binder::proph("x", rsort.clone()),
                    Binder::new("a", rsort.clone()),
                ],
                Asn::star(vec![
                    Asn::pure(Expr::eq(rv, Expr::tup(vec![av.clone(), xv.clone()]))),
                    Asn::VObs {
                        pcy: xv.clone(),
                        val: av,
                    },
                    Asn::Borrow {
                        pred: body_nm,
                        lft: kv,
                        args: vec![pv, xv],
                    },
                ]),
            )
        } else {
            Asn::star(vec![
                Asn::pure(Expr::eq(rv, Expr::unit())),
                Asn::Borrow {
                    pred: body_nm,
                    lft: kv,
                    args: vec![pv],
                },
            ])
        };
        let mut own = PredDef::new(
            own_nm.clone(),
            vec![
                Binder::new("k", Sort::Lft),
                Binder::new("p", Sort::Ptr),
                Binder::new("r", mrsort),
            ],
            vec![0, 1],
        );
        own.expand_on_produce = true;
        own.disjuncts = vec![disjunct];
        preds.insert(own_nm.clone(), own);
        Ok(own_nm)
    }

    /// The ownership atom for `ty` applied to value `v` and representation
    /// `r`. Mutable references take the ambient lifetime as an extra first
    /// argument.
    pub fn own_atom(
        &self,
        preds: &mut PredTable,
        ty: &Ty,
        lft: &Expr,
        v: Expr,
        r: Expr,
    ) -> Result<Asn, String> {
        let name = self.ensure_own(preds, ty)?;
        let args = if matches!(ty, Ty::MutRef(_)) {
            vec![lft.clone(), v, r]
        } else {
            vec![v, r]
        };
        Ok(Asn::pred(name, args))
    }
}

/// Splits the outermost existential binders off an assertion.
fn split_exists(a: &Asn) -> (Vec<Binder>, Asn) {
    match a {
        Asn::Exists(bs, body) => {
            let (mut inner, core) = split_exists(body);
            let mut all = bs.clone();
            all.append(&mut inner);
            (all, core)
        }
        other => (Vec::new(), other.clone()),
    }
}

/// Renames binders away from `taken`, returning the renamed binders and
/// the rename substitution. Renamed names stay legal source identifiers so
/// generated definitions can be printed back.
fn rename_apart(bs: &[Binder], taken: &BTreeSet<String>) -> (Vec<Binder>, Binds) {
    let mut out = Vec::new();
    let mut map = Binds::new();
    let mut used = taken.clone();
    for b in bs {
        let mut name = b.name.clone();
        let mut n = 0u32;
        while used.contains(&name) {
            n += 1;
            name = format!("{}_{n}", b.name);
        }
        used.insert(name.clone());
        if name != b.name {
            map.insert(b.name.clone(), Expr::var(name.clone(), b.sort.clone()));
        }
        let nb = if b.proph {
            Binder::proph(name, b.sort.clone())
        } else {
            Binder::new(name, b.sort.clone())
        };
        out.push(nb);
    }
    (out, map)
}

/// First of `base`, `base0`, `base1`, ... not in `taken`; the returned
/// name is recorded as taken.
fn pick_name(base: &str, taken: &mut BTreeSet<String>) -> String {
    let name = if taken.contains(base) {
        (0..)
            .map(|n| format!("{base}{n}"))
            .find(|c| !taken.contains(c))
            .expect("unbounded candidate space")
    } else {
        base.to_string()
    };
    taken.insert(name.clone());
    name
}

// --- prophecy resolution ---

/// Resolve the prophecy of `&mut pointee` at `addr` under `lft`: consume
/// the reference's ownership and record the observation equating the
/// prophesied representation with the current one. In type-safety-only
/// mode ownership of a dropped reference conveys nothing, so resolution is
/// a successful no-op.
pub fn mutref_resolve(
    env: &Env,
    gen: &BorrowGen,
    mut st: SymState,
    pointee: &Ty,
    lft: &Expr,
    addr: &Expr,
) -> ConsumeBranches {
    if gen.mode == Mode::Ts {
        return vec![(st, Ok(Binds::new()))];
    }
    let mref = Ty::mut_ref(pointee.clone());
    let rsort = match gen.repr_sort(env.preds, &mref) {
        Ok(s) => s,
        Err(m) => return vec![(st, Err(m))],
    };
    let rn = st.fresh_name("r");
    let rvar = Expr::var(rn.clone(), rsort.clone());
    let atom = Asn::pred(
        BorrowGen::own_name(&mref),
        vec![lft.clone(), addr.clone(), rvar],
    );
    let brs = consume(
        env,
        st,
        &atom,
        &Binds::new(),
        &[Binder::new(rn.clone(), rsort)],
    );
    let mut out = Vec::new();
    for (s, r) in brs {
        match r {
            Ok(b) => {
                let Some(rv) = b.get(&rn) else {
                    out.push((s, Err(format!("resolving &mut at {addr}: representation not determined"))));
                    continue;
                };
                let cur = Expr::tup_get(rv.clone(), 0);
                let fut = Expr::tup_get(rv.clone(), 1);
                for (ctx, pc) in s.pcy.observe(env.solver, &s.pc, Expr::eq(fut, cur)) {
                    let mut s2 = s.clone();
                    s2.pcy = ctx;
                    s2.pc = pc;
                    out.push((s2, Ok(Binds::new())));
                }
            }
            Err(m) => out.push((s, Err(format!("resolving &mut at {addr}: {m}")))),
        }
    }
    out
}

/// Close the pointee borrow if the reference at `addr` is currently open,
/// then resolve its prophecy. The close repoints the prophecy at the
/// current pointee representation, so the resolution reflects the last
/// written state.
pub fn mutref_auto_resolve(
    env: &Env,
    gen: &BorrowGen,
    st: SymState,
    pointee: &Ty,
    lft: &Expr,
    addr: &Expr,
) -> ConsumeBranches {
    let body_nm = BorrowGen::body_name(pointee);
    let open = st.preds.tokens().iter().position(|t| {
        t.pred == body_nm
            && env.solver.entails_eq(&st.pc, &t.lft, lft)
            && t.args
                .first()
                .is_some_and(|a| env.solver.entails_eq(&st.pc, a, addr))
    });
    let Some(idx) = open else {
        return mutref_resolve(env, gen, st, pointee, lft, addr);
    };
    let mut out = Vec::new();
    for (s, r) in close_borrow_updating(env, st, idx) {
        match r {
            Ok(_) => out.extend(mutref_resolve(env, gen, s, pointee, lft, addr)),
            Err(m) => out.push((s, Err(m))),
        }
    }
    out
}

// --- lemma generation ---

/// A lemma produced by predicate transformation. Trusted lemmas are
/// admitted without proof; their soundness rests on the obligations
/// generated alongside them.
#[derive(Debug, Clone)]
pub struct GeneratedLemma {
    pub name: String,
    pub spec: Spec,
    pub trusted: bool,
}

/// Derive a frozen variant of a borrow predicate: the named existentials
/// become extra in-parameters, pinned across openings of the borrow. Also
/// returns the trusted lemma converting a borrow of the original predicate
/// into a borrow of the frozen one. Freezing nothing yields a renaming.
pub fn gen_freeze_lemma(
    preds: &mut PredTable,
    borrow_pred: &str,
    frozen: &[String],
    frozen_pred: &str,
    lemma_name: &str,
) -> Result<GeneratedLemma, String> {
    let def = preds
        .get(borrow_pred)
        .cloned()
        .ok_or_else(|| format!("unknown predicate {borrow_pred}"))?;
    if def.kind != PredKind::Borrow {
        return Err(format!("predicate {borrow_pred} is not borrow-flagged"));
    }
    if preds.contains_key(frozen_pred) {
        return Err(format!("predicate {frozen_pred} already defined"));
    }
    let mut seen = BTreeSet::new();
    for f in frozen {
        if !seen.insert(f.clone()) {
            return Err(format!("duplicate frozen variable {f}"));
        }
        if def.params.iter().any(|p| p.name == *f) {
            return Err(format!(
                "{f} is a parameter of {borrow_pred}, not an existential"
            ));
        }
    }

    let split: Vec<(Vec<Binder>, Asn)> = def.disjuncts.iter().map(split_exists).collect();
    let mut fbinders = Vec::new();
    for f in frozen {
        let b = split
            .iter()
            .flat_map(|(bs, _)| bs.iter())
            .find(|b| b.name == *f)
            .ok_or_else(|| {
                format!("unknown variable name: {f} is not an existential of {borrow_pred}")
            })?;
        if b.proph {
            return Err(format!("cannot freeze prophecy variable {f}"));
        }
        fbinders.push(b.clone());
    }

    let mut disjuncts = Vec::new();
    for (bs, core) in split {
        let kept: Vec<Binder> = bs
            .into_iter()
            .filter(|b| !frozen.contains(&b.name))
            .collect();
        disjuncts.push(if kept.is_empty() {
            core
        } else {
            Asn::exists(kept, core)
        });
    }

    let mut params = def.params.clone();
    params.extend(fbinders.clone());
    let mut ins = def.ins.clone();
    ins.extend(def.params.len()..params.len());
    let mut fdef = PredDef::new(frozen_pred, params, ins);
    fdef.kind = def.kind;
    fdef.disjuncts = disjuncts;
    fdef.expand_on_produce = def.expand_on_produce;
    preds.insert(frozen_pred.to_string(), fdef);

    let mut taken: BTreeSet<String> = def
        .params
        .iter()
        .map(|p| p.name.clone())
        .chain(frozen.iter().cloned())
        .collect();
    let k = pick_name("k", &mut taken);
    let kv = Expr::var(k.clone(), Sort::Lft);
    let pargs: Vec<Expr> = def
        .params
        .iter()
        .map(|b| Expr::var(b.name.clone(), b.sort.clone()))
        .collect();
    let fargs: Vec<Expr> = pargs
        .iter()
        .cloned()
        .chain(
            fbinders
                .iter()
                .map(|b| Expr::var(b.name.clone(), b.sort.clone())),
        )
        .collect();
    let mut universals = vec![Binder::new(k, Sort::Lft)];
    universals.extend(def.params.clone());
    let spec = Spec {
        universals,
        requires: Asn::Borrow {
            pred: borrow_pred.to_string(),
            lft: kv.clone(),
            args: pargs,
        },
        existentials: fbinders,
        ensures: Asn::Borrow {
            pred: frozen_pred.to_string(),
            lft: kv,
            args: fargs,
        },
    };
    Ok(GeneratedLemma {
        name: lemma_name.to_string(),
        spec,
        trusted: true,
    })
}

/// One extraction: which cell of a borrowed structure becomes a borrow of
/// its own, and how the structure's representation decomposes around it.
#[derive(Debug, Clone)]
pub struct ExtractShape {
    /// Name of the generated lemma.
    pub name: String,
    /// Universally quantified variables of the extraction.
    pub foralls: Vec<Binder>,
    /// Pure facts framing the extraction.
    pub frame: Vec<Expr>,
    /// Parent borrow-body predicate.
    pub parent: String,
    /// Parent arguments, excluding the prophecy parameter.
    pub parent_args: Vec<Expr>,
    /// Pointee type of the extracted reference.
    pub child_ty: Ty,
    /// Address of the extracted cell.
    pub child_addr: Expr,
    /// How the child representation re-enters the parent one. Required in
    /// prophetic mode, ignored otherwise.
    pub plug: Option<Plug>,
}

/// `body` as a function of parent representation `a` and child
/// representation `b`.
#[derive(Debug, Clone)]
pub struct Plug {
    pub a: String,
    pub b: String,
    pub body: Expr,
}

/// The proof obligation backing a generated extraction lemma: the framed
/// parent body must decompose into the child ownership and a wand that
/// reforms the parent around any replacement representation.
#[derive(Debug, Clone)]
pub struct WandObligation {
    pub name: String,
    pub universals: Vec<Binder>,
    pub frame: Vec<Expr>,
    pub parent: String,
    pub parent_args: Vec<Expr>,
    pub child_ty: Ty,
    pub child_addr: Expr,
    pub plug: Option<Plug>,
}

/// Generate the extraction lemma for `shape` and the obligation that
/// justifies it. The lemma trades a borrow of the parent for a borrow of
/// the extracted cell; in prophetic mode it also reindexes the prophecies
/// through the plug.
pub fn gen_extract_lemma(
    gen: &BorrowGen,
    preds: &mut PredTable,
    shape: &ExtractShape,
) -> Result<(GeneratedLemma, WandObligation), String> {
    let def = preds
        .get(&shape.parent)
        .cloned()
        .ok_or_else(|| format!("unknown predicate {}", shape.parent))?;
    if def.kind != PredKind::Borrow {
        return Err(format!("predicate {} is not borrow-flagged", shape.parent));
    }
    gen.ensure_own(preds, &Ty::mut_ref(shape.child_ty.clone()))?;
    let child_body = BorrowGen::body_name(&shape.child_ty);
    let rc = gen.repr_sort(preds, &shape.child_ty)?;
    let fc = gen.mode == Mode::Fc;

    let mut taken: BTreeSet<String> = shape.foralls.iter().map(|b| b.name.clone()).collect();
    for e in shape
        .parent_args
        .iter()
        .chain(shape.frame.iter())
        .chain([&shape.child_addr])
    {
        e.collect_vars(&mut taken);
    }
    if let Some(pl) = &shape.plug {
        pl.body.collect_vars(&mut taken);
        for n in [&pl.a, &pl.b] {
            if shape.foralls.iter().any(|b| b.name == *n) {
                return Err(format!("plug variable {n} shadows a universal"));
            }
        }
    }

    let k = pick_name("k", &mut taken);
    let q = pick_name("q", &mut taken);
    let kv = Expr::var(k.clone(), Sort::Lft);
    let qv = Expr::var(q.clone(), Sort::Real);
    let alive = Asn::Alive {
        lft: kv.clone(),
        frac: qv,
    };
    let mut requires: Vec<Asn> = shape.frame.iter().cloned().map(Asn::pure).collect();
    requires.push(alive.clone());
    let mut universals = shape.foralls.clone();
    universals.push(Binder::new(k, Sort::Lft));
    universals.push(Binder::new(q, Sort::Real));

    let (existentials, ensures) = if fc {
        let pidx = prophecy_param(&def)?;
        if shape.parent_args.len() + 1 != def.params.len() {
            return Err(format!(
                "{} expects {} arguments besides the prophecy",
                shape.parent,
                def.params.len() - 1
            ));
        }
        let pl = shape
            .plug
            .as_ref()
            .ok_or("prophetic extraction requires a representation plug")?;
        let rp = def.params[pidx].sort.clone();
        let x = pick_name("x", &mut taken);
        let a = pick_name("a", &mut taken);
        let y = pick_name("y", &mut taken);
        let b = pick_name("b", &mut taken);
        let xv = Expr::var(x.clone(), rp.clone());
        let av = Expr::var(a.clone(), rp.clone());
        let yv = Expr::var(y.clone(), rc.clone());
        let bv = Expr::var(b.clone(), rc.clone());

        let mut full_args = Vec::with_capacity(def.params.len());
        let mut rest = shape.parent_args.iter();
        for j in 0..def.params.len() {
            if j == pidx {
                full_args.push(xv.clone());
            } else {
                full_args.push(rest.next().expect("arity checked").clone());
            }
        }
        requires.push(Asn::Borrow {
            pred: shape.parent.clone(),
            lft: kv.clone(),
            args: full_args,
        });
        requires.push(Asn::VObs {
            pcy: xv.clone(),
            val: av.clone(),
        });
        universals.push(Binder::new(x, rp.clone()));
        universals.push(Binder::new(a, rp));

        let plug_y = pl.body.subst(&Binds::from([
            (pl.a.clone(), av.clone()),
            (pl.b.clone(), yv.clone()),
        ]));
        let plug_b = pl.body.subst(&Binds::from([
            (pl.a.clone(), av.clone()),
            (pl.b.clone(), bv.clone()),
        ]));
        let ensures = Asn::star(vec![
            alive,
            Asn::Borrow {
                pred: child_body,
                lft: kv,
                args: vec![shape.child_addr.clone(), yv.clone()],
            },
            Asn::VObs {
                pcy: yv,
                val: bv,
            },
            Asn::Obs(Expr::eq(xv, plug_y)),
            Asn::Obs(Expr::eq(av, plug_b)),
        ]);
        let existentials = vec![Binder::proph(y, rc.clone()), Binder::new(b, rc.clone())];
        (existentials, ensures)
    } else {
        if shape.parent_args.len() != def.params.len() {
            return Err(format!(
                "{} expects {} arguments",
                shape.parent,
                def.params.len()
            ));
        }
        requires.push(Asn::Borrow {
            pred: shape.parent.clone(),
            lft: kv.clone(),
            args: shape.parent_args.clone(),
        });
        let ensures = Asn::star(vec![
            alive,
            Asn::Borrow {
                pred: child_body,
                lft: kv,
                args: vec![shape.child_addr.clone()],
            },
        ]);
        (Vec::new(), ensures)
    };

    let lemma = GeneratedLemma {
        name: shape.name.clone(),
        spec: Spec {
            universals,
            requires: Asn::star(requires),
            existentials,
            ensures,
        },
        trusted: true,
    };
    let obligation = WandObligation {
        name: format!("{}_obligation", shape.name),
        universals: shape.foralls.clone(),
        frame: shape.frame.clone(),
        parent: shape.parent.clone(),
        parent_args: shape.parent_args.clone(),
        child_ty: shape.child_ty.clone(),
        child_addr: shape.child_addr.clone(),
        plug: shape.plug.clone(),
    };
    Ok((lemma, obligation))
}

/// The parameter position holding the sealed prophecy of a borrow-body
/// predicate: the one every disjunct's controller atom names.
fn prophecy_param(def: &PredDef) -> Result<usize, String> {
    if def.disjuncts.is_empty() {
        return Err(format!("predicate {} has no definition", def.name));
    }
    let mut found = None;
    for d in &def.disjuncts {
        let (_, _, pidx, _) = variant_parts(def, d)?;
        match found {
            None => found = Some(pidx),
            Some(i) if i == pidx => {}
            Some(_) => {
                return Err(format!(
                    "disjuncts of {} disagree on the controller parameter",
                    def.name
                ))
            }
        }
    }
    Ok(found.expect("at least one disjunct"))
}

/// Split one disjunct of a prophecy-indexed borrow body into its kept
/// existentials, its atoms without the controller, the controller's
/// parameter position, and the name of the representation existential the
/// controller carries.
fn variant_parts(def: &PredDef, d: &Asn) -> Result<(Vec<Binder>, Vec<Asn>, usize, String), String> {
    let (binders, core) = split_exists(d);
    let mut atoms = Vec::new();
    flatten_star(&core, &mut atoms);
    let mut ctrl = None;
    for (i, a) in atoms.iter().enumerate() {
        if let Asn::PCtrl { pcy, val } = a {
            if ctrl.is_some() {
                return Err(format!("{} seals more than one controller", def.name));
            }
            let EKind::Var(pn, _) = pcy.kind() else {
                return Err(format!("{} controller is not parameter-indexed", def.name));
            };
            let Some(pidx) = def.params.iter().position(|p| p.name == *pn) else {
                return Err(format!("{} controller is not parameter-indexed", def.name));
            };
            let EKind::Var(an, _) = val.kind() else {
                return Err(format!(
                    "{} controller does not carry a representation existential",
                    def.name
                ));
            };
            if !binders.iter().any(|b| b.name == *an) {
                return Err(format!(
                    "{} controller does not carry a representation existential",
                    def.name
                ));
            }
            if def.params.iter().any(|p| p.name == *an) {
                return Err(format!(
                    "representation existential of {} shadows a parameter",
                    def.name
                ));
            }
            ctrl = Some((i, pidx, an.clone()));
        }
    }
    let Some((i, pidx, an)) = ctrl else {
        return Err(format!("{} does not seal a prophecy controller", def.name));
    };
    atoms.remove(i);
    let kept = binders.into_iter().filter(|b| b.name != an).collect();
    Ok((kept, atoms, pidx, an))
}

fn flatten_star(a: &Asn, out: &mut Vec<Asn>) {
    match a {
        Asn::Emp => {}
        Asn::Star(parts) => parts.iter().for_each(|p| flatten_star(p, out)),
        other => out.push(other.clone()),
    }
}

// --- obligation proving ---

/// Whether the plug is injective in the child representation.
#[derive(Debug, Clone, PartialEq)]
pub enum Injectivity {
    /// The solver established injectivity outright.
    Proved,
    /// No counterexample among all candidate representations up to the
    /// enumeration bound.
    BoundedCheck,
    Failed(String),
}

/// Outcome of proving one extraction obligation.
#[derive(Debug, Clone)]
pub struct WandReport {
    pub name: String,
    pub verified: bool,
    pub injectivity: Option<Injectivity>,
    pub detail: String,
}

/// Prove an extraction obligation: under the frame, every disjunct of the
/// parent body must yield the child's ownership at the extracted address
/// plus a footprint that reforms the parent around any replacement child
/// representation. In prophetic mode the plug equation must hold at the
/// decomposition and the plug must be injective.
pub fn prove_wand_obligation(env: &Env, gen: &BorrowGen, ob: &WandObligation) -> WandReport {
    let injectivity = match wand_injectivity(env, gen, ob) {
        Ok(i) => i,
        Err(m) => {
            return WandReport {
                name: ob.name.clone(),
                verified: false,
                injectivity: None,
                detail: m,
            }
        }
    };
    match prove_wand_steps(env, gen, ob) {
        Ok(()) => {
            let verified = !matches!(injectivity, Some(Injectivity::Failed(_)));
            let detail = match &injectivity {
                None => "parent body decomposes and reforms around the extracted cell".into(),
                Some(Injectivity::Proved) => {
                    "parent body decomposes and reforms; plug injectivity proved".into()
                }
                Some(Injectivity::BoundedCheck) => {
                    "parent body decomposes and reforms; plug injectivity checked on all bounded instantiations"
                        .into()
                }
                Some(Injectivity::Failed(m)) => format!("plug not injective: {m}"),
            };
            WandReport {
                name: ob.name.clone(),
                verified,
                injectivity,
                detail,
            }
        }
        Err(m) => WandReport {
            name: ob.name.clone(),
            verified: false,
            injectivity,
            detail: m,
        },
    }
}

fn wand_injectivity(
    env: &Env,
    gen: &BorrowGen,
    ob: &WandObligation,
) -> Result<Option<Injectivity>, String> {
    if gen.mode == Mode::Ts {
        return Ok(None);
    }
    let def = env.def(&ob.parent)?;
    let pidx = prophecy_param(def)?;
    let rp = def.params[pidx].sort.clone();
    let rc = gen.repr_sort(env.preds, &ob.child_ty)?;
    let pl = ob
        .plug
        .as_ref()
        .ok_or("prophetic extraction requires a representation plug")?;
    Ok(Some(check_injectivity(env, pl, &rp, &rc)))
}

fn prove_wand_steps(env: &Env, gen: &BorrowGen, ob: &WandObligation) -> Result<(), String> {
    let def = env.def(&ob.parent)?;
    let fc = gen.mode == Mode::Fc;
    let pidx = if fc { Some(prophecy_param(def)?) } else { None };
    let pl = if fc { ob.plug.as_ref() } else { None };

    let mut st = SymState::new();
    let mut binds = Binds::new();
    for u in &ob.universals {
        let e = st.fresh_var(&u.name, u.sort.clone());
        binds.insert(u.name.clone(), e);
    }
    if let (Some(pl), Some(i)) = (pl, pidx) {
        let a_hat = st.fresh_var(&pl.a, def.params[i].sort.clone());
        binds.insert(pl.a.clone(), a_hat);
    }
    // One prophecy stands in for the sealed parent controller across the
    // decomposition and the repack.
    let x_hat = pidx.map(|i| st.fresh_var("x", def.params[i].sort.clone()));

    let frame = Asn::star(ob.frame.iter().cloned().map(Asn::pure).collect());
    let framed = produce(env, st, &frame, &binds)?;

    // Each parent disjunct instantiated at the obligation's arguments,
    // with the controller stripped and its representation existential
    // exposed through `repl`.
    let instantiate = |d: &Asn, repl: &Expr, x_hat: &Option<Expr>| -> Result<(Asn, Binds), String> {
        let mut vbinds = binds.clone();
        let (kept, atoms, widx, an) = if fc {
            let (kept, atoms, widx, an) = variant_parts(def, d)?;
            (kept, atoms, Some(widx), Some(an))
        } else {
            let (kept, core) = split_exists(d);
            let mut atoms = Vec::new();
            flatten_star(&core, &mut atoms);
            (kept, atoms, None, None)
        };
        let mut rest = ob.parent_args.iter();
        for (j, prm) in def.params.iter().enumerate() {
            if Some(j) == widx {
                vbinds.insert(prm.name.clone(), x_hat.clone().expect("prophetic"));
            } else {
                let arg = rest
                    .next()
                    .ok_or_else(|| format!("{} argument arity mismatch", def.name))?;
                vbinds.insert(prm.name.clone(), arg.subst(&binds));
            }
        }
        if let Some(an) = an {
            vbinds.insert(an, repl.clone());
        }
        Ok((Asn::exists(kept, Asn::star(atoms)), vbinds))
    };

    let own_child = gen.own_ref(env.preds, &ob.child_ty)?;
    let rc = gen.repr_sort(env.preds, &ob.child_ty)?;
    let cvs = value_sort(&ob.child_ty);
    let b_name = pl.map_or("b".to_string(), |p| p.b.clone());
    let a_hat = pl.map(|p| binds[&p.a].clone());

    // Q(b): the extracted cell and its ownership; in prophetic mode the
    // learned child representation must satisfy the plug equation.
    let mut q_atoms = vec![
        Asn::pts(
            ob.child_addr.clone(),
            ob.child_ty.clone(),
            Expr::var("v", cvs.clone()),
        ),
        Asn::pred(
            own_child,
            vec![
                Expr::var("v", cvs.clone()),
                Expr::var(b_name.clone(), rc.clone()),
            ],
        ),
    ];
    let q_core = Asn::exists(vec![Binder::new("v", cvs.clone())], Asn::star(q_atoms.clone()));
    if let (Some(pl), Some(a_hat)) = (pl, &a_hat) {
        q_atoms.push(Asn::pure(Expr::eq(
            a_hat.clone(),
            pl.body.subst(&Binds::from([(
                pl.b.clone(),
                Expr::var(b_name.clone(), rc.clone()),
            )])),
        )));
    }
    let q_checked = Asn::exists(vec![Binder::new("v", cvs.clone())], Asn::star(q_atoms));
    let q_out = [Binder::new(b_name.clone(), rc.clone())];

    for s0 in framed {
        for d in &def.disjuncts {
            let (body, vbinds) = instantiate(d, &a_hat.clone().unwrap_or_else(Expr::unit), &x_hat)?;
            for s1 in produce(env, s0.clone(), &body, &vbinds)? {
                // Decompose: take the child cell and ownership out of the
                // parent body; the leftover state is the wand footprint.
                for (s2, r) in consume(env, s1, &q_checked, &binds, &q_out) {
                    let _learned = r.map_err(|m| {
                        format!("cannot extract {} ownership at {}: {m}", ob.child_ty, ob.child_addr)
                    })?;
                    // Reform: produce the cell at an arbitrary replacement
                    // representation and consume the parent body back.
                    let mut s2 = s2;
                    let b_new = s2.fresh_var(&b_name, rc.clone());
                    let mut binds2 = binds.clone();
                    binds2.insert(b_name.clone(), b_new.clone());
                    let repl = match (pl, &a_hat) {
                        (Some(pl), Some(_)) => pl.body.subst(&Binds::from([
                            (pl.a.clone(), a_hat.clone().expect("prophetic")),
                            (pl.b.clone(), b_new.clone()),
                        ])),
                        _ => Expr::unit(),
                    };
                    for s3 in produce(env, s2, &q_core, &binds2)? {
                        let mut repacked = false;
                        let mut last = String::new();
                        for dk in &def.disjuncts {
                            let (back, kbinds) = instantiate(dk, &repl, &x_hat)?;
                            let brs = consume(env, s3.clone(), &back, &kbinds, &[]);
                            if brs.iter().all(|(_, r)| r.is_ok()) {
                                repacked = true;
                                break;
                            }
                            if let Some((_, Err(m))) = brs.iter().find(|(_, r)| r.is_err()) {
                                last = m.clone();
                            }
                        }
                        if !repacked {
                            return Err(format!(
                                "cannot reform {} around a replacement representation: {last}",
                                ob.parent
                            ));
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Injectivity of the plug in its child argument: first by entailment,
/// then by exhaustive enumeration of small representations.
fn check_injectivity(env: &Env, pl: &Plug, ra: &Sort, rb: &Sort) -> Injectivity {
    let a0 = Expr::var("a%inj", ra.clone());
    let b1 = Expr::var("b1%inj", rb.clone());
    let b2 = Expr::var("b2%inj", rb.clone());
    let at = |b: &Expr| {
        pl.body.subst(&Binds::from([
            (pl.a.clone(), a0.clone()),
            (pl.b.clone(), b.clone()),
        ]))
    };
    let mut pc = Pc::new();
    pc.assume(Expr::eq(at(&b1), at(&b2)));
    if env.solver.entails(&pc, &Expr::eq(b1, b2)) {
        return Injectivity::Proved;
    }

    let Some(avs) = enum_values(ra) else {
        return Injectivity::Failed(format!("{ra:?} is not enumerable and entailment failed"));
    };
    let Some(bvs) = enum_values(rb) else {
        return Injectivity::Failed(format!("{rb:?} is not enumerable and entailment failed"));
    };
    let ground = |a: &Expr, b: &Expr| {
        pl.body.subst(&Binds::from([
            (pl.a.clone(), a.clone()),
            (pl.b.clone(), b.clone()),
        ]))
    };
    for a in &avs {
        for (i, bi) in bvs.iter().enumerate() {
            for bj in &bvs[i + 1..] {
                if ground(a, bi) == ground(a, bj) {
                    return Injectivity::Failed(format!(
                        "plug collides at a = {a}, b = {bi} and b = {bj}"
                    ));
                }
            }
        }
    }
    Injectivity::BoundedCheck
}

/// All values of an enumerable sort, small enough to sweep exhaustively:
/// integers in a window, sequences up to length three over a three-value
/// alphabet, and options and tuples of enumerable sorts.
fn enum_values(s: &Sort) -> Option<Vec<Expr>> {
    Some(match s {
        Sort::Bool => vec![Expr::bool_(false), Expr::bool_(true)],
        Sort::Int => (-3..=3).map(Expr::int).collect(),
        Sort::Seq(e) => {
            let alpha: Vec<Expr> = enum_values(e)?.into_iter().take(3).collect();
            let mut out = vec![Expr::seq_empty((**e).clone())];
            let mut level = out.clone();
            for _ in 0..3 {
                let mut next = Vec::new();
                for s in &level {
                    for a in &alpha {
                        next.push(Expr::seq_prepend(a.clone(), s.clone()));
                    }
                }
                out.extend(next.iter().cloned());
                level = next;
            }
            out
        }
        Sort::Opt(e) => {
            let mut out = vec![Expr::none((**e).clone())];
            out.extend(enum_values(e)?.into_iter().map(Expr::some));
            out
        }
        Sort::Tuple(ts) => {
            let mut out = vec![Vec::new()];
            for t in ts {
                let vs = enum_values(t)?;
                let mut next = Vec::new();
                for prefix in &out {
                    for v in &vs {
                        let mut p = prefix.clone();
                        p.push(v.clone());
                        next.push(p);
                    }
                }
                if next.len() > 200 {
                    return None;
                }
                out = next;
            }
            out.into_iter().map(Expr::tup).collect()
        }
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assertion::{apply_lemma, gunfold, unfold};
    use crate::config::Options;
    use crate::term::LocRef;
    use crate::solver::Solver;
    use crate::types::{IntTy, TypeTable};

    struct Fix {
        solver: Solver,
        table: TypeTable,
        preds: PredTable,
        opts: Options,
        impls: OwnImpls,
        mode: Mode,
    }

    impl Fix {
        fn new(mode: Mode) -> Fix {
            let opts = Options::with_mode(mode);
            Fix {
                solver: Solver::new(&opts),
                table: TypeTable::default(),
                preds: PredTable::new(),
                opts,
                impls: OwnImpls::new(),
                mode,
            }
        }

        fn gen(&self) -> BorrowGen<'_> {
            BorrowGen {
                mode: self.mode,
                impls: &self.impls,
            }
        }

        fn ensure(&mut self, ty: &Ty) -> String {
            let gen = BorrowGen {
                mode: self.mode,
                impls: &self.impls,
            };
            let mut preds = std::mem::take(&mut self.preds);
            let name = gen.ensure_own(&mut preds, ty).expect("generation");
            self.preds = preds;
            name
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

    fn u32t() -> Ty {
        Ty::Int(IntTy::U32)
    }

    fn lft(name: &str) -> Expr {
        Expr::var(name.to_string() + "%l", Sort::Lft)
    }

    /// A state holding `[k]_1` and freshly produced `own@&mut u32(k, p, r)`.
    fn mutref_state(f: &Fix, k: &Expr, p: &Expr, r: &Expr) -> SymState {
        let env = f.env();
        let st = SymState::new();
        let states = produce(
            &env,
            st,
            &Asn::star(vec![
                Asn::Alive {
                    lft: k.clone(),
                    frac: Expr::real(1, 1),
                },
                Asn::pred(
                    BorrowGen::own_name(&Ty::mut_ref(u32t())),
                    vec![k.clone(), p.clone(), r.clone()],
                ),
            ]),
            &Binds::new(),
        )
        .expect("well-formed");
        assert_eq!(states.len(), 1);
        states.into_iter().next().unwrap()
    }

    #[test]
    fn int_ownership_carries_bounds() {
        let mut f = Fix::new(Mode::Fc);
        let name = f.ensure(&u32t());
        assert_eq!(name, "own@u32");
        let env = f.env();
        let mut st = SymState::new();
        let v = st.fresh_var("v", Sort::Int);
        let r = st.fresh_var("r", Sort::Int);
        let states = produce(
            &env,
            st,
            &Asn::pred("own@u32", vec![v.clone(), r.clone()]),
            &Binds::new(),
        )
        .expect("well-formed");
        assert_eq!(states.len(), 1);
        let s = &states[0];
        assert!(s.entails(&f.solver, &Expr::le(Expr::int(0), v.clone())));
        assert!(s.entails(&f.solver, &Expr::le(v.clone(), Expr::int(u32::MAX as i128))));
        assert!(s.entails(&f.solver, &Expr::eq(r, v)));
        assert!(s.is_resource_empty());
    }

    #[test]
    fn box_ownership_roundtrip() {
        let mut f = Fix::new(Mode::Fc);
        let name = f.ensure(&Ty::boxed(u32t()));
        assert_eq!(name, "own@Box<u32>");
        let env = f.env();
        let mut st = SymState::new();
        let p = ptr("b");
        let r = st.fresh_var("r", Sort::Int);
        let states = produce(
            &env,
            st,
            &Asn::pred(&name, vec![p.clone(), r.clone()]),
            &Binds::new(),
        )
        .expect("well-formed");
        assert_eq!(states.len(), 1);
        // Folded: one entry, no heap yet.
        let s = states.into_iter().next().unwrap();
        assert_eq!(s.preds.entries().len(), 1);
        assert!(s.heap.is_empty());
        let opened = unfold(&env, s, &name, &[p.clone(), r.clone()], &Binds::new())
            .expect("unfoldable");
        assert_eq!(opened.len(), 1);
        assert!(!opened[0].heap.is_empty());
        // Fold back by consuming the atom with an unknown representation.
        let mut s = opened.into_iter().next().unwrap();
        let out = s.fresh_name("r2");
        let brs = consume(
            &env,
            s,
            &Asn::pred(&name, vec![p, Expr::var(out.clone(), Sort::Int)]),
            &Binds::new(),
            &[Binder::new(out.clone(), Sort::Int)],
        );
        let oks: Vec<_> = brs.iter().filter(|(_, r)| r.is_ok()).collect();
        assert_eq!(oks.len(), 1);
        let (s2, rb) = oks[0];
        let learned = &rb.as_ref().unwrap()[&out];
        assert!(f.solver.entails(&s2.pc, &Expr::eq(learned.clone(), r)));
        assert!(s2.is_resource_empty());
    }

    #[test]
    fn option_ownership_splits_on_discriminant() {
        let mut f = Fix::new(Mode::Fc);
        let name = f.ensure(&Ty::option(u32t()));
        let env = f.env();
        let mut st = SymState::new();
        let v = st.fresh_var("v", Sort::opt(Sort::Int));
        let r = st.fresh_var("r", Sort::opt(Sort::Int));
        let states = produce(
            &env,
            st,
            &Asn::pred(&name, vec![v.clone(), r.clone()]),
            &Binds::new(),
        )
        .expect("well-formed");
        let opened = unfold(
            &env,
            states.into_iter().next().unwrap(),
            &name,
            &[v.clone(), r.clone()],
            &Binds::new(),
        )
        .expect("unfoldable");
        assert_eq!(opened.len(), 2);
        let none_state = opened
            .iter()
            .find(|s| s.entails(&f.solver, &Expr::not(Expr::is_some(v.clone()))))
            .expect("a none branch");
        assert!(none_state.entails(
            &f.solver,
            &Expr::eq(r.clone(), Expr::none(Sort::Int))
        ));
        assert!(opened
            .iter()
            .any(|s| s.entails(&f.solver, &Expr::is_some(v.clone()))));
    }

    #[test]
    fn tuple_ownership_relates_components() {
        let mut f = Fix::new(Mode::Fc);
        let ty = Ty::Tuple(vec![u32t(), Ty::Bool]);
        let name = f.ensure(&ty);
        assert_eq!(name, "own@(u32, bool)");
        let env = f.env();
        let st = SymState::new();
        let v = Expr::tup(vec![Expr::int(3), Expr::bool_(true)]);
        let states = produce(
            &env,
            st,
            &Asn::pred(&name, vec![v.clone(), Expr::var("r0", f.gen().repr_sort(&f.preds, &ty).unwrap())]),
            &Binds::from([("r0".to_string(), v.clone())]),
        );
        // The representation of a literal tuple of scalars is itself.
        let mut s = SymState::new();
        let rn = s.fresh_name("r");
        let rsort = f.gen().repr_sort(&f.preds, &ty).unwrap();
        assert_eq!(rsort, Sort::Tuple(vec![Sort::Int, Sort::Bool]));
        let brs = consume(
            &env,
            s,
            &Asn::pred(&name, vec![v.clone(), Expr::var(rn.clone(), rsort.clone())]),
            &Binds::new(),
            &[Binder::new(rn.clone(), rsort)],
        );
        let oks: Vec<_> = brs.iter().filter(|(_, r)| r.is_ok()).collect();
        assert_eq!(oks.len(), 1);
        let learned = &oks[0].1.as_ref().unwrap()[&rn];
        assert!(f.solver.entails(&oks[0].0.pc, &Expr::eq(learned.clone(), v)));
        drop(states);
    }

    #[test]
    fn named_type_requires_registered_impl() {
        let mut f = Fix::new(Mode::Fc);
        let ty = Ty::Named("Thing".into(), vec![]);
        let gen = BorrowGen {
            mode: f.mode,
            impls: &f.impls,
        };
        let mut preds = std::mem::take(&mut f.preds);
        let err = gen.ensure_own(&mut preds, &ty).unwrap_err();
        assert!(err.contains("missing Ownable impl"), "{err}");
    }

    #[test]
    fn registered_impl_must_be_binary() {
        let mut f = Fix::new(Mode::Fc);
        let mut unary = PredDef::new("thing_own", vec![Binder::new("v", Sort::Int)], vec![0]);
        unary.disjuncts = vec![Asn::Emp];
        f.preds.insert("thing_own".into(), unary);
        f.impls.insert("Thing".into(), "thing_own".into());
        let ty = Ty::Named("Thing".into(), vec![]);
        let gen = BorrowGen {
            mode: f.mode,
            impls: &f.impls,
        };
        let mut preds = std::mem::take(&mut f.preds);
        let err = gen.ensure_own(&mut preds, &ty).unwrap_err();
        assert!(err.contains("value and a representation"), "{err}");
    }

    #[test]
    fn nested_mutable_reference_rejected() {
        let mut f = Fix::new(Mode::Fc);
        let ty = Ty::mut_ref(Ty::boxed(Ty::mut_ref(u32t())));
        let gen = BorrowGen {
            mode: f.mode,
            impls: &f.impls,
        };
        let mut preds = std::mem::take(&mut f.preds);
        let err = gen.ensure_own(&mut preds, &ty).unwrap_err();
        assert!(err.contains("top level"), "{err}");
    }

    #[test]
    fn mutref_predicates_have_prophetic_shape() {
        let mut f = Fix::new(Mode::Fc);
        let name = f.ensure(&Ty::mut_ref(u32t()));
        assert_eq!(name, "own@&mut u32");
        let own = &f.preds[&name];
        assert_eq!(own.params.len(), 3);
        assert_eq!(own.ins, vec![0, 1]);
        assert!(own.expand_on_produce);
        let body = &f.preds["mutbody@u32"];
        assert_eq!(body.kind, PredKind::Borrow);
        assert_eq!(body.params.len(), 2);
        assert_eq!(body.ins, vec![0, 1]);
        // The single disjunct seals a controller carrying the inlined
        // representation existential.
        assert_eq!(prophecy_param(body).unwrap(), 1);
    }

    #[test]
    fn mutref_predicates_in_ts_mode_drop_prophecies() {
        let mut f = Fix::new(Mode::Ts);
        let name = f.ensure(&Ty::mut_ref(u32t()));
        let gen = f.gen();
        assert_eq!(
            gen.repr_sort(&f.preds, &Ty::mut_ref(u32t())).unwrap(),
            Sort::unit()
        );
        let body = &f.preds["mutbody@u32"];
        assert_eq!(body.params.len(), 1);
        assert!(prophecy_param(body).is_err());
        let own = &f.preds[&name];
        let mut atoms = Vec::new();
        flatten_star(&own.disjuncts[0], &mut atoms);
        assert!(atoms.iter().all(|a| !matches!(a, Asn::VObs { .. })));
    }

    #[test]
    fn mutref_production_seals_controller() {
        let mut f = Fix::new(Mode::Fc);
        f.ensure(&Ty::mut_ref(u32t()));
        let k = lft("k");
        let p = ptr("p");
        let mut s = SymState::new();
        let r = s.fresh_var("r", Sort::Tuple(vec![Sort::Int, Sort::Int]));
        let s = mutref_state(&f, &k, &p, &r);
        // One guarded entry, no heap, and a prophecy whose controller is
        // sealed: a both-halves update is refused, a close-time one works.
        assert_eq!(s.preds.entries().len(), 1);
        assert!(s.heap.is_empty());
        let x = match Expr::tup_get(r.clone(), 1).kind() {
            _ => {
                let e = f.solver.normalize_under(&s.pc, &Expr::tup_get(r.clone(), 1));
                match e.kind() {
                    EKind::Proph(n, _) => n.clone(),
                    other => panic!("prophecy component, got {other:?}"),
                }
            }
        };
        assert!(s.pcy.update(&x, Expr::int(7)).is_err());
        assert!(s.pcy.update_closed(&x, Expr::int(7)).is_ok());
    }

    #[test]
    fn mutref_consumption_learns_pair() {
        let mut f = Fix::new(Mode::Fc);
        f.ensure(&Ty::mut_ref(u32t()));
        let k = lft("k");
        let p = ptr("p");
        let mut s0 = SymState::new();
        let r = s0.fresh_var("r", Sort::Tuple(vec![Sort::Int, Sort::Int]));
        let mut s = mutref_state(&f, &k, &p, &r);
        let env = f.env();
        let out = s.fresh_name("r2");
        let brs = consume(
            &env,
            s,
            &Asn::pred(
                "own@&mut u32",
                vec![k, p, Expr::var(out.clone(), Sort::Tuple(vec![Sort::Int, Sort::Int]))],
            ),
            &Binds::new(),
            &[Binder::new(out.clone(), Sort::Tuple(vec![Sort::Int, Sort::Int]))],
        );
        let oks: Vec<_> = brs.iter().filter(|(_, r)| r.is_ok()).collect();
        assert_eq!(oks.len(), 1);
        let (s2, rb) = oks[0];
        let learned = rb.as_ref().unwrap()[&out].clone();
        assert!(f.solver.entails(&s2.pc, &Expr::eq(learned, r)));
        assert!(s2.is_resource_empty());
    }

    #[test]
    fn resolution_without_writing_equates_current() {
        let mut f = Fix::new(Mode::Fc);
        f.ensure(&Ty::mut_ref(u32t()));
        let k = lft("k");
        let p = ptr("p");
        let mut s0 = SymState::new();
        let r = s0.fresh_var("r", Sort::Tuple(vec![Sort::Int, Sort::Int]));
        let s = mutref_state(&f, &k, &p, &r);
        let env = f.env();
        let gen = f.gen();
        let brs = mutref_auto_resolve(&env, &gen, s, &u32t(), &k, &p);
        let oks: Vec<_> = brs.iter().filter(|(_, r)| r.is_ok()).collect();
        assert_eq!(oks.len(), 1);
        let s2 = &oks[0].0;
        // The prophesied final representation equals the one at drop time.
        assert!(s2.pcy.entails_observation(
            &f.solver,
            &s2.pc,
            &Expr::eq(Expr::tup_get(r.clone(), 1), Expr::tup_get(r.clone(), 0)),
        ));
    }

    #[test]
    fn dropping_a_written_reference_resolves_to_final_value() {
        let mut f = Fix::new(Mode::Fc);
        f.ensure(&Ty::mut_ref(u32t()));
        let k = lft("k");
        let p = ptr("p");
        let mut s0 = SymState::new();
        let r = s0.fresh_var("r", Sort::Tuple(vec![Sort::Int, Sort::Int]));
        let s = mutref_state(&f, &k, &p, &r);
        let env = f.env();

        // Open the borrow.
        let entry_args = s.preds.entries()[0].args.clone();
        let opened = gunfold(&env, s, "mutbody@u32", &k, &entry_args, &Binds::new())
            .expect("openable");
        assert_eq!(opened.len(), 1);
        let mut s = opened.into_iter().next().unwrap();

        // Store 41 through the reference.
        let w = s.fresh_name("w");
        let take = consume(
            &env,
            s,
            &Asn::pts(p.clone(), u32t(), Expr::var(w.clone(), Sort::Int)),
            &Binds::new(),
            &[Binder::new(w, Sort::Int)],
        );
        let (s, rb) = take.into_iter().next().expect("cell held");
        rb.expect("cell held");
        let s = produce(
            &env,
            s,
            &Asn::pts(p.clone(), u32t(), Expr::int(41)),
            &Binds::new(),
        )
        .expect("write")
        .into_iter()
        .next()
        .expect("write");

        // Drop the reference: close, repoint, resolve.
        let gen = f.gen();
        let brs = mutref_auto_resolve(&env, &gen, s, &u32t(), &k, &p);
        let oks: Vec<_> = brs.iter().filter(|(_, r)| r.is_ok()).collect();
        assert_eq!(oks.len(), 1);
        let s2 = &oks[0].0;
        assert!(s2.pcy.entails_observation(
            &f.solver,
            &s2.pc,
            &Expr::eq(Expr::tup_get(r.clone(), 1), Expr::int(41)),
        ));
        // The written cell stays owned by the reformed borrow.
        assert!(s2.heap.is_empty());
    }

    #[test]
    fn ts_resolution_keeps_resources() {
        let mut f = Fix::new(Mode::Ts);
        f.ensure(&Ty::mut_ref(u32t()));
        let k = lft("k");
        let p = ptr("p");
        let mut s0 = SymState::new();
        let r = s0.fresh_var("r", Sort::unit());
        let s = mutref_state(&f, &k, &p, &r);
        let env = f.env();
        let gen = f.gen();
        let brs = mutref_auto_resolve(&env, &gen, s, &u32t(), &k, &p);
        let oks: Vec<_> = brs.iter().filter(|(_, r)| r.is_ok()).collect();
        assert_eq!(oks.len(), 1);
        assert_eq!(oks[0].0.preds.entries().len(), 1);
    }

    /// `some_borrow(x) = exists y, z. x |-> y * y |-> z`, borrow-flagged.
    fn chain_pred(preds: &mut PredTable) {
        let x = Expr::var("x", Sort::Ptr);
        let y = Expr::var("y", Sort::Ptr);
        let z = Expr::var("z", Sort::Int);
        let mut def = PredDef::new("some_borrow", vec![Binder::new("x", Sort::Ptr)], vec![0]);
        def.kind = PredKind::Borrow;
        def.disjuncts = vec![Asn::exists(
            vec![Binder::new("y", Sort::Ptr), Binder::new("z", Sort::Int)],
            Asn::star(vec![
                Asn::pts(x, Ty::raw_ptr(u32t()), y.clone()),
                Asn::pts(y, u32t(), z),
            ]),
        )];
        preds.insert("some_borrow".into(), def);
    }

    #[test]
    fn freeze_hoists_existentials_into_parameters() {
        let mut f = Fix::new(Mode::Fc);
        chain_pred(&mut f.preds);
        let lemma = gen_freeze_lemma(
            &mut f.preds,
            "some_borrow",
            &["y".to_string()],
            "some_borrow_frozen",
            "freeze_y",
        )
        .expect("freezable");
        assert!(lemma.trusted);
        let frozen = &f.preds["some_borrow_frozen"];
        assert_eq!(frozen.params.len(), 2);
        assert_eq!(frozen.params[1].name, "y");
        assert_eq!(frozen.ins, vec![0, 1]);
        let (bs, _) = split_exists(&frozen.disjuncts[0]);
        assert_eq!(bs.len(), 1);
        assert_eq!(bs[0].name, "z");

        // Applying the lemma swaps the guarded entry for the frozen one.
        let env = f.env();
        let k = lft("k");
        let x = ptr("x");
        let mut st = SymState::new();
        st.preds
            .add_entry("some_borrow", Some(k.clone()), vec![x.clone()]);
        let brs = apply_lemma(
            &env,
            st,
            &lemma.spec,
            &Binds::from([("k".to_string(), k.clone()), ("x".to_string(), x.clone())]),
        );
        let oks: Vec<_> = brs.iter().filter(|(_, r)| r.is_ok()).collect();
        assert_eq!(oks.len(), 1);
        let s = &oks[0].0;
        assert_eq!(s.preds.entries().len(), 1);
        let e = &s.preds.entries()[0];
        assert_eq!(e.name, "some_borrow_frozen");
        assert_eq!(e.args.len(), 2);
        assert_eq!(e.args[0], x);
    }

    #[test]
    fn freeze_of_unknown_existential_rejected() {
        let mut f = Fix::new(Mode::Fc);
        chain_pred(&mut f.preds);
        let err = gen_freeze_lemma(
            &mut f.preds,
            "some_borrow",
            &["nope".to_string()],
            "some_borrow_frozen",
            "freeze_nope",
        )
        .unwrap_err();
        assert!(err.contains("unknown variable name"), "{err}");
    }

    #[test]
    fn freeze_nothing_is_a_renaming() {
        let mut f = Fix::new(Mode::Fc);
        chain_pred(&mut f.preds);
        let lemma = gen_freeze_lemma(
            &mut f.preds,
            "some_borrow",
            &[],
            "some_borrow_alias",
            "freeze_none",
        )
        .expect("freezable");
        let orig = f.preds["some_borrow"].clone();
        let alias = &f.preds["some_borrow_alias"];
        assert_eq!(alias.params, orig.params);
        assert_eq!(alias.disjuncts, orig.disjuncts);
        assert!(lemma.spec.existentials.is_empty());
    }

    /// The identity extraction: the cell guarded by `mutbody@u32` becomes
    /// its own borrow at the same address, with the child representation
    /// standing directly for the parent one.
    fn identity_shape() -> ExtractShape {
        ExtractShape {
            name: "extract_cell".into(),
            foralls: vec![Binder::new("pp", Sort::Ptr)],
            frame: vec![],
            parent: "mutbody@u32".into(),
            parent_args: vec![Expr::var("pp", Sort::Ptr)],
            child_ty: u32t(),
            child_addr: Expr::var("pp", Sort::Ptr),
            plug: Some(Plug {
                a: "a".into(),
                b: "b".into(),
                body: Expr::var("b", Sort::Int),
            }),
        }
    }

    #[test]
    fn extract_lemma_reindexes_prophecies() {
        let mut f = Fix::new(Mode::Fc);
        f.ensure(&Ty::mut_ref(u32t()));
        let gen = BorrowGen {
            mode: f.mode,
            impls: &f.impls,
        };
        let mut preds = std::mem::take(&mut f.preds);
        let (lemma, ob) = gen_extract_lemma(&gen, &mut preds, &identity_shape()).expect("shape");
        f.preds = preds;
        assert!(lemma.trusted);
        assert_eq!(ob.name, "extract_cell_obligation");
        // forall pp, k, q, x, a.
        let names: Vec<_> = lemma.spec.universals.iter().map(|b| b.name.as_str()).collect();
        assert_eq!(names, vec!["pp", "k", "q", "x", "a"]);
        assert_eq!(lemma.spec.existentials.len(), 2);
        assert!(lemma.spec.existentials[0].proph);
        let mut ens = Vec::new();
        flatten_star(&lemma.spec.ensures, &mut ens);
        assert_eq!(
            ens.iter().filter(|a| matches!(a, Asn::Obs(_))).count(),
            2
        );
        assert!(ens.iter().any(|a| matches!(a, Asn::Borrow { pred, .. } if pred == "mutbody@u32")));
        assert!(ens.iter().any(|a| matches!(a, Asn::VObs { .. })));
    }

    #[test]
    fn identity_extraction_obligation_verifies() {
        let mut f = Fix::new(Mode::Fc);
        f.ensure(&Ty::mut_ref(u32t()));
        let gen = BorrowGen {
            mode: f.mode,
            impls: &f.impls,
        };
        let mut preds = std::mem::take(&mut f.preds);
        let (_, ob) = gen_extract_lemma(&gen, &mut preds, &identity_shape()).expect("shape");
        f.preds = preds;
        let env = f.env();
        let gen = f.gen();
        let report = prove_wand_obligation(&env, &gen, &ob);
        assert!(report.verified, "{}", report.detail);
        assert_eq!(report.injectivity, Some(Injectivity::Proved));
    }

    /// A borrow body whose invariant caps the cell value at ten.
    fn capped_parent(preds: &mut PredTable) {
        let p = Expr::var("p", Sort::Ptr);
        let x = Expr::var("x", Sort::Int);
        let v = Expr::var("v", Sort::Int);
        let a = Expr::var("a", Sort::Int);
        let mut def = PredDef::new(
            "capped",
            vec![Binder::new("p", Sort::Ptr), Binder::new("x", Sort::Int)],
            vec![0, 1],
        );
        def.kind = PredKind::Borrow;
        def.disjuncts = vec![Asn::exists(
            vec![Binder::new("v", Sort::Int), Binder::new("a", Sort::Int)],
            Asn::star(vec![
                Asn::pts(p, u32t(), v.clone()),
                Asn::pure(Expr::eq(a.clone(), v.clone())),
                Asn::pure(Expr::le(v, Expr::int(10))),
                Asn::PCtrl { pcy: x, val: a },
            ]),
        )];
        preds.insert("capped".into(), def);
    }

    #[test]
    fn extraction_that_breaks_an_invariant_is_refused() {
        let mut f = Fix::new(Mode::Fc);
        f.ensure(&Ty::mut_ref(u32t()));
        capped_parent(&mut f.preds);
        let shape = ExtractShape {
            name: "extract_capped".into(),
            parent: "capped".into(),
            ..identity_shape()
        };
        let gen = BorrowGen {
            mode: f.mode,
            impls: &f.impls,
        };
        let mut preds = std::mem::take(&mut f.preds);
        let (_, ob) = gen_extract_lemma(&gen, &mut preds, &shape).expect("shape");
        f.preds = preds;
        let env = f.env();
        let gen = f.gen();
        let report = prove_wand_obligation(&env, &gen, &ob);
        assert!(!report.verified);
        assert!(report.detail.contains("reform"), "{}", report.detail);
    }

    /// A borrow body whose representation existential is unconstrained.
    fn loose_parent(preds: &mut PredTable) {
        let p = Expr::var("p", Sort::Ptr);
        let x = Expr::var("x", Sort::Int);
        let v = Expr::var("v", Sort::Int);
        let a = Expr::var("a", Sort::Int);
        let mut def = PredDef::new(
            "loose",
            vec![Binder::new("p", Sort::Ptr), Binder::new("x", Sort::Int)],
            vec![0, 1],
        );
        def.kind = PredKind::Borrow;
        def.disjuncts = vec![Asn::exists(
            vec![Binder::new("v", Sort::Int), Binder::new("a", Sort::Int)],
            Asn::star(vec![
                Asn::pts(p, u32t(), v),
                Asn::PCtrl { pcy: x, val: a },
            ]),
        )];
        preds.insert("loose".into(), def);
    }

    #[test]
    fn constant_plug_fails_injectivity() {
        let mut f = Fix::new(Mode::Fc);
        f.ensure(&Ty::mut_ref(u32t()));
        loose_parent(&mut f.preds);
        let shape = ExtractShape {
            name: "extract_loose".into(),
            parent: "loose".into(),
            plug: Some(Plug {
                a: "a".into(),
                b: "b".into(),
                body: Expr::var("a", Sort::Int),
            }),
            ..identity_shape()
        };
        let gen = BorrowGen {
            mode: f.mode,
            impls: &f.impls,
        };
        let mut preds = std::mem::take(&mut f.preds);
        let (_, ob) = gen_extract_lemma(&gen, &mut preds, &shape).expect("shape");
        f.preds = preds;
        let env = f.env();
        let gen = f.gen();
        let report = prove_wand_obligation(&env, &gen, &ob);
        assert!(!report.verified);
        assert!(matches!(report.injectivity, Some(Injectivity::Failed(_))));
    }

    #[test]
    fn prepend_plug_checked_by_enumeration() {
        let f = Fix::new(Mode::Fc);
        let env = f.env();
        let pl = Plug {
            a: "a".into(),
            b: "b".into(),
            body: Expr::seq_prepend(
                Expr::var("b", Sort::Int),
                Expr::seq_tail(Expr::var("a", Sort::seq(Sort::Int))),
            ),
        };
        let res = check_injectivity(&env, &pl, &Sort::seq(Sort::Int), &Sort::Int);
        assert!(
            matches!(res, Injectivity::Proved | Injectivity::BoundedCheck),
            "{res:?}"
        );
    }

    #[test]
    fn non_enumerable_unproved_plug_is_rejected() {
        let f = Fix::new(Mode::Fc);
        let env = f.env();
        let pl = Plug {
            a: "a".into(),
            b: "b".into(),
            body: Expr::var("a", Sort::Ptr),
        };
        let res = check_injectivity(&env, &pl, &Sort::Ptr, &Sort::Ptr);
        assert!(matches!(res, Injectivity::Failed(_)), "{res:?}");
    }

    #[test]
    fn applied_extraction_then_resolution_chains_observations() {
        let mut f = Fix::new(Mode::Fc);
        f.ensure(&Ty::mut_ref(u32t()));
        let gen = BorrowGen {
            mode: f.mode,
            impls: &f.impls,
        };
        let mut preds = std::mem::take(&mut f.preds);
        let (lemma, _) = gen_extract_lemma(&gen, &mut preds, &identity_shape()).expect("shape");
        f.preds = preds;

        let k = lft("k");
        let p = ptr("p");
        let mut s0 = SymState::new();
        let r = s0.fresh_var("r", Sort::Tuple(vec![Sort::Int, Sort::Int]));
        let s = mutref_state(&f, &k, &p, &r);
        let env = f.env();

        // Trade the reference's borrow for the extracted child borrow.
        let brs = apply_lemma(
            &env,
            s,
            &lemma.spec,
            &Binds::from([("pp".to_string(), p.clone()), ("k".to_string(), k.clone())]),
        );
        let oks: Vec<_> = brs.into_iter().filter(|(_, r)| r.is_ok()).collect();
        assert_eq!(oks.len(), 1);
        let s = oks.into_iter().next().unwrap().0;
        assert_eq!(s.preds.entries().len(), 1);

        // Dropping the child reference resolves its prophecy, and the
        // reindexing observation carries the resolution to the original.
        let gen = f.gen();
        let brs = mutref_auto_resolve(&env, &gen, s, &u32t(), &k, &p);
        let oks: Vec<_> = brs.iter().filter(|(_, r)| r.is_ok()).collect();
        assert_eq!(oks.len(), 1);
        let s2 = &oks[0].0;
        assert!(s2.pcy.entails_observation(
            &f.solver,
            &s2.pc,
            &Expr::eq(Expr::tup_get(r.clone(), 1), Expr::tup_get(r.clone(), 0)),
        ));
    }

    #[test]
    fn ts_extraction_drops_prophecies_and_verifies() {
        let mut f = Fix::new(Mode::Ts);
        f.ensure(&Ty::mut_ref(u32t()));
        let shape = ExtractShape {
            plug: None,
            ..identity_shape()
        };
        let gen = BorrowGen {
            mode: f.mode,
            impls: &f.impls,
        };
        let mut preds = std::mem::take(&mut f.preds);
        let (lemma, ob) = gen_extract_lemma(&gen, &mut preds, &shape).expect("shape");
        f.preds = preds;
        let names: Vec<_> = lemma.spec.universals.iter().map(|b| b.name.as_str()).collect();
        assert_eq!(names, vec!["pp", "k", "q"]);
        assert!(lemma.spec.existentials.is_empty());
        let env = f.env();
        let gen = f.gen();
        let report = prove_wand_obligation(&env, &gen, &ob);
        assert!(report.verified, "{}", report.detail);
        assert_eq!(report.injectivity, None);
    }
    #[test]
    fn probe_box() {
        let mut f = Fix::new(Mode::Fc);
        let name = f.ensure(&Ty::boxed(u32t()));
        let env = f.env();
        let mut st = SymState::new();
        let p = ptr("b");
        let r = st.fresh_var("r", Sort::Int);
        let states = produce(
            &env,
            st,
            &Asn::pred(&name, vec![p.clone(), r.clone()]),
            &Binds::new(),
        )
        .expect("well-formed");
        let s = states.into_iter().next().unwrap();
        let opened = unfold(&env, s, &name, &[p.clone(), r.clone()], &Binds::new())
            .expect("unfoldable");
        let mut s = opened.into_iter().next().unwrap();
        eprintln!("=== opened state ===\n{s}");
        let out = s.fresh_name("r2");
        eprintln!("out name: {out}");
        let brs = consume(
            &env,
            s,
            &Asn::pred(&name, vec![p, Expr::var(out.clone(), Sort::Int)]),
            &Binds::new(),
            &[Binder::new(out.clone(), Sort::Int)],
        );
        for (i, (s2, r)) in brs.iter().enumerate() {
            eprintln!("--- branch {i}: {r:?}");
            eprintln!("{s2}");
        }
        panic!("probe done");
    }
}
