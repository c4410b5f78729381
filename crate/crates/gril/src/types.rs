//! The mini-IR type layer: machine types, user type definitions, and the
//! logic-level representation types used by ownership predicates.
//!
//! Layout is deliberately absent. Struct fields are addressed by name or
//! declaration index, never by byte offset, and `size_of` values stay
//! symbolic (see `term::Expr::SizeOf`).

use std::collections::BTreeMap;
use std::fmt;

/// Machine integer types. `usize` is 64-bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IntTy {
    U8,
    U32,
    U64,
    Usize,
    I32,
}

impl IntTy {
    pub fn min(self) -> i128 {
        match self {
            IntTy::U8 | IntTy::U32 | IntTy::U64 | IntTy::Usize => 0,
            IntTy::I32 => i32::MIN as i128,
        }
    }

    pub fn max(self) -> i128 {
        match self {
            IntTy::U8 => u8::MAX as i128,
            IntTy::U32 => u32::MAX as i128,
            IntTy::U64 | IntTy::Usize => u64::MAX as i128,
            IntTy::I32 => i32::MAX as i128,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            IntTy::U8 => "u8",
            IntTy::U32 => "u32",
            IntTy::U64 => "u64",
            IntTy::Usize => "usize",
            IntTy::I32 => "i32",
        }
    }

    pub fn from_name(s: &str) -> Option<IntTy> {
        Some(match s {
            "u8" => IntTy::U8,
            "u32" => IntTy::U32,
            "u64" => IntTy::U64,
            "usize" => IntTy::Usize,
            "i32" => IntTy::I32,
            _ => return None,
        })
    }
}

/// IR types. References carry no explicit lifetime: a function has at most
/// one lifetime parameter and every `&mut` in its signature uses it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Ty {
    Unit,
    Bool,
    Int(IntTy),
    /// `*mut T`
    RawPtr(Box<Ty>),
    /// `NonNull<T>`
    NonNull(Box<Ty>),
    /// `&mut T` under the function's lifetime
    MutRef(Box<Ty>),
    /// `Box<T>`
    Boxed(Box<Ty>),
    /// `Option<T>`
    Opt(Box<Ty>),
    Tuple(Vec<Ty>),
    /// A generic type parameter, e.g. `T`
    Param(String),
    /// A user-defined struct or enum instance, e.g. `Node<T>`
    Named(String, Vec<Ty>),
}

impl Ty {
    pub fn raw_ptr(t: Ty) -> Ty {
        Ty::RawPtr(Box::new(t))
    }
    pub fn non_null(t: Ty) -> Ty {
        Ty::NonNull(Box::new(t))
    }
    pub fn mut_ref(t: Ty) -> Ty {
        Ty::MutRef(Box::new(t))
    }
    pub fn boxed(t: Ty) -> Ty {
        Ty::Boxed(Box::new(t))
    }
    pub fn option(t: Ty) -> Ty {
        Ty::Opt(Box::new(t))
    }

    /// Zero-sized types have no heap representative.
    pub fn is_zst(&self) -> bool {
        matches!(self, Ty::Unit)
    }

    /// Whether loads of this type copy (as opposed to move-and-deinit).
    pub fn is_copy(&self) -> bool {
        match self {
            Ty::Unit | Ty::Bool | Ty::Int(_) | Ty::RawPtr(_) | Ty::NonNull(_) => true,
            Ty::Opt(t) => t.is_copy(),
            Ty::Tuple(ts) => ts.iter().all(Ty::is_copy),
            Ty::MutRef(_) | Ty::Boxed(_) | Ty::Param(_) | Ty::Named(..) => false,
        }
    }

    /// Pointer-shaped values (represented as location/projection terms).
    pub fn is_pointer(&self) -> bool {
        matches!(self, Ty::RawPtr(_) | Ty::NonNull(_) | Ty::MutRef(_) | Ty::Boxed(_))
    }

    /// The pointee of a pointer-shaped type.
    pub fn pointee(&self) -> Option<&Ty> {
        match self {
            Ty::RawPtr(t) | Ty::NonNull(t) | Ty::MutRef(t) | Ty::Boxed(t) => Some(t),
            _ => None,
        }
    }

    /// Substitute type parameters.
    pub fn subst(&self, map: &BTreeMap<String, Ty>) -> Ty {
        match self {
            Ty::Unit | Ty::Bool | Ty::Int(_) => self.clone(),
            Ty::RawPtr(t) => Ty::raw_ptr(t.subst(map)),
            Ty::NonNull(t) => Ty::non_null(t.subst(map)),
            Ty::MutRef(t) => Ty::mut_ref(t.subst(map)),
            Ty::Boxed(t) => Ty::boxed(t.subst(map)),
            Ty::Opt(t) => Ty::option(t.subst(map)),
            Ty::Tuple(ts) => Ty::Tuple(ts.iter().map(|t| t.subst(map)).collect()),
            Ty::Param(p) => map.get(p).cloned().unwrap_or_else(|| self.clone()),
            Ty::Named(n, args) => {
                Ty::Named(n.clone(), args.iter().map(|t| t.subst(map)).collect())
            }
        }
    }

    /// Collect the type parameters mentioned.
    pub fn params(&self, out: &mut Vec<String>) {
        match self {
            Ty::Param(p) => {
                if !out.contains(p) {
                    out.push(p.clone());
                }
            }
            Ty::RawPtr(t) | Ty::NonNull(t) | Ty::MutRef(t) | Ty::Boxed(t) | Ty::Opt(t) => {
                t.params(out)
            }
            Ty::Tuple(ts) => ts.iter().for_each(|t| t.params(out)),
            Ty::Named(_, args) => args.iter().for_each(|t| t.params(out)),
            _ => {}
        }
    }

    /// Whether the type (transitively) contains a mutable reference.
    pub fn contains_mut_ref(&self) -> bool {
        match self {
            Ty::MutRef(_) => true,
            Ty::RawPtr(t) | Ty::NonNull(t) | Ty::Boxed(t) | Ty::Opt(t) => t.contains_mut_ref(),
            Ty::Tuple(ts) => ts.iter().any(Ty::contains_mut_ref),
            Ty::Named(_, args) => args.iter().any(Ty::contains_mut_ref),
            _ => false,
        }
    }
}

impl fmt::Display for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ty::Unit => write!(f, "()"),
            Ty::Bool => write!(f, "bool"),
            Ty::Int(it) => write!(f, "{}", it.name()),
            Ty::RawPtr(t) => write!(f, "*mut {t}"),
            Ty::NonNull(t) => write!(f, "NonNull<{t}>"),
            Ty::MutRef(t) => write!(f, "&mut {t}"),
            Ty::Boxed(t) => write!(f, "Box<{t}>"),
            Ty::Opt(t) => write!(f, "Option<{t}>"),
            Ty::Tuple(ts) => {
                write!(f, "(")?;
                for (i, t) in ts.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{t}")?;
                }
                write!(f, ")")
            }
            Ty::Param(p) => write!(f, "{p}"),
            Ty::Named(n, args) => {
                write!(f, "{n}")?;
                if !args.is_empty() {
                    write!(f, "<")?;
                    for (i, t) in args.iter().enumerate() {
                        if i > 0 {
                            write!(f, ", ")?;
                        }
                        write!(f, "{t}")?;
                    }
                    write!(f, ">")?;
                }
                Ok(())
            }
        }
    }
}

/// Logic-level representation types, the `ReprTy` of an `Ownable` impl.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LogicTy {
    Int,
    Bool,
    Seq(Box<LogicTy>),
    Tuple(Vec<LogicTy>),
    Opt(Box<LogicTy>),
    /// `T::ReprTy` for an IR type `T`
    ReprOf(Ty),
}

impl LogicTy {
    pub fn subst(&self, map: &BTreeMap<String, Ty>) -> LogicTy {
        match self {
            LogicTy::Int | LogicTy::Bool => self.clone(),
            LogicTy::Seq(l) => LogicTy::Seq(Box::new(l.subst(map))),
            LogicTy::Opt(l) => LogicTy::Opt(Box::new(l.subst(map))),
            LogicTy::Tuple(ls) => LogicTy::Tuple(ls.iter().map(|l| l.subst(map)).collect()),
            LogicTy::ReprOf(t) => LogicTy::ReprOf(t.subst(map)),
        }
    }
}

impl fmt::Display for LogicTy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogicTy::Int => write!(f, "Int"),
            LogicTy::Bool => write!(f, "Bool"),
            LogicTy::Seq(l) => write!(f, "Seq<{l}>"),
            LogicTy::Opt(l) => write!(f, "Option<{l}>"),
            LogicTy::Tuple(ls) => {
                write!(f, "(")?;
                for (i, l) in ls.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{l}")?;
                }
                write!(f, ")")
            }
            LogicTy::ReprOf(t) => write!(f, "{t}::ReprTy"),
        }
    }
}

/// A struct or enum definition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TypeDef {
    Struct {
        name: String,
        params: Vec<String>,
        fields: Vec<(String, Ty)>,
    },
    Enum {
        name: String,
        params: Vec<String>,
        variants: Vec<(String, Vec<(String, Ty)>)>,
    },
}

impl TypeDef {
    pub fn name(&self) -> &str {
        match self {
            TypeDef::Struct { name, .. } | TypeDef::Enum { name, .. } => name,
        }
    }

    pub fn params(&self) -> &[String] {
        match self {
            TypeDef::Struct { params, .. } | TypeDef::Enum { params, .. } => params,
        }
    }
}

/// Table of user type definitions, keyed by name.
#[derive(Debug, Clone, Default)]
pub struct TypeTable {
    pub defs: BTreeMap<String, TypeDef>,
}

impl TypeTable {
    pub fn insert(&mut self, def: TypeDef) {
        self.defs.insert(def.name().to_string(), def);
    }

    /// Field list for a struct type given as a `Ty::Named` instance.
    pub fn fields_of(&self, ty: &Ty) -> Option<Vec<(String, Ty)>> {
        match ty {
            Ty::Named(name, args) => self.struct_fields(name, args),
            _ => None,
        }
    }

    /// Variant list for an enum type given as a `Ty::Named` instance.
    pub fn variants_of(&self, ty: &Ty) -> Option<Vec<(String, Vec<(String, Ty)>)>> {
        match ty {
            Ty::Named(name, args) => self.enum_variants(name, args),
            _ => None,
        }
    }

    /// Field list of a struct type instance, with parameters substituted.
    pub fn struct_fields(&self, name: &str, args: &[Ty]) -> Option<Vec<(String, Ty)>> {
        match self.defs.get(name)? {
            TypeDef::Struct { params, fields, .. } => {
                let map: BTreeMap<String, Ty> =
                    params.iter().cloned().zip(args.iter().cloned()).collect();
                Some(
                    fields
                        .iter()
                        .map(|(f, t)| (f.clone(), t.subst(&map)))
                        .collect(),
                )
            }
            TypeDef::Enum { .. } => None,
        }
    }

    /// Variant list of an enum type instance, with parameters substituted.
    pub fn enum_variants(&self, name: &str, args: &[Ty]) -> Option<Vec<(String, Vec<(String, Ty)>)>> {
        match self.defs.get(name)? {
            TypeDef::Enum {
                params, variants, ..
            } => {
                let map: BTreeMap<String, Ty> =
                    params.iter().cloned().zip(args.iter().cloned()).collect();
                Some(
                    variants
                        .iter()
                        .map(|(v, fields)| {
                            (
                                v.clone(),
                                fields
                                    .iter()
                                    .map(|(f, t)| (f.clone(), t.subst(&map)))
                                    .collect(),
                            )
                        })
                        .collect(),
                )
            }
            TypeDef::Struct { .. } => None,
        }
    }

    /// Index of a named field in a struct type.
    pub fn field_index(&self, name: &str, args: &[Ty], field: &str) -> Option<(usize, Ty)> {
        let fields = self.struct_fields(name, args)?;
        fields
            .iter()
            .position(|(f, _)| f == field)
            .map(|i| (i, fields[i].1.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn int_bounds() {
        assert_eq!(IntTy::U8.max(), 255);
        assert_eq!(IntTy::Usize.max(), u64::MAX as i128);
        assert_eq!(IntTy::I32.min(), -2147483648);
        assert_eq!(IntTy::I32.max(), 2147483647);
    }

    #[test]
    fn copyness() {
        assert!(Ty::Int(IntTy::Usize).is_copy());
        assert!(Ty::option(Ty::non_null(Ty::Param("T".into()))).is_copy());
        assert!(!Ty::boxed(Ty::Int(IntTy::I32)).is_copy());
        assert!(!Ty::mut_ref(Ty::Int(IntTy::I32)).is_copy());
        assert!(!Ty::Param("T".into()).is_copy());
    }

    #[test]
    fn substitution() {
        let mut map = BTreeMap::new();
        map.insert("T".to_string(), Ty::Int(IntTy::I32));
        let t = Ty::Named("Node".into(), vec![Ty::Param("T".into())]);
        assert_eq!(
            t.subst(&map),
            Ty::Named("Node".into(), vec![Ty::Int(IntTy::I32)])
        );
    }

    #[test]
    fn field_lookup_substitutes() {
        let mut table = TypeTable::default();
        table.defs.insert(
            "Node".into(),
            TypeDef::Struct {
                name: "Node".into(),
                params: vec!["T".into()],
                fields: vec![
                    (
                        "next".into(),
                        Ty::option(Ty::non_null(Ty::Named(
                            "Node".into(),
                            vec![Ty::Param("T".into())],
                        ))),
                    ),
                    ("element".into(), Ty::Param("T".into())),
                ],
            },
        );
        let (idx, ty) = table
            .field_index("Node", &[Ty::Int(IntTy::I32)], "element")
            .unwrap();
        assert_eq!(idx, 1);
        assert_eq!(ty, Ty::Int(IntTy::I32));
    }
}
