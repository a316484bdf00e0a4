//! Affine loop-nest IR.
//!
//! A [`LoopNest`] is a perfect nest of counted loops over a straight-line body
//! of (optionally guarded) assignments. Array subscripts and guards are affine
//! in the loop indices and in the carried scalars that flattening introduces.

mod interp;
mod kernels;
mod mem;
mod transform;

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

pub use interp::{reference_exec, ExecError};
pub use kernels::{builtin_kernel, BuiltinKernel, BUILTIN_KERNELS};
pub use mem::{gen_data, ArrayRegion, DataError, Layout, MemImage, DATA_RANGE};
pub use transform::{extract_innermost, flatten, iteration_count, unroll, TransformError};

/// `constant + Σ coeff·name`, terms sorted by name, no zero coefficients.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct AffineExpr {
    pub constant: i64,
    pub terms: Vec<(String, i64)>,
}

impl AffineExpr {
    pub fn constant(c: i64) -> Self {
        AffineExpr { constant: c, terms: Vec::new() }
    }

    pub fn var(name: &str) -> Self {
        AffineExpr::term(name, 1)
    }

    pub fn term(name: &str, coeff: i64) -> Self {
        let mut e = AffineExpr::constant(0);
        e.add_term(name, coeff);
        e
    }

    fn add_term(&mut self, name: &str, coeff: i64) {
        match self.terms.binary_search_by(|(n, _)| n.as_str().cmp(name)) {
            Ok(i) => {
                self.terms[i].1 += coeff;
                if self.terms[i].1 == 0 {
                    self.terms.remove(i);
                }
            }
            Err(i) => {
                if coeff != 0 {
                    self.terms.insert(i, (name.to_string(), coeff));
                }
            }
        }
    }

    pub fn add(&self, other: &AffineExpr) -> AffineExpr {
        let mut out = self.clone();
        out.constant += other.constant;
        for (n, c) in &other.terms {
            out.add_term(n, *c);
        }
        out
    }

    pub fn sub(&self, other: &AffineExpr) -> AffineExpr {
        self.add(&other.scaled(-1))
    }

    pub fn scaled(&self, k: i64) -> AffineExpr {
        if k == 0 {
            return AffineExpr::constant(0);
        }
        AffineExpr { constant: self.constant * k, terms: self.terms.iter().map(|(n, c)| (n.clone(), c * k)).collect() }
    }

    pub fn plus(&self, c: i64) -> AffineExpr {
        let mut out = self.clone();
        out.constant += c;
        out
    }

    pub fn coeff(&self, name: &str) -> i64 {
        self.terms.iter().find(|(n, _)| n == name).map_or(0, |(_, c)| *c)
    }

    pub fn as_constant(&self) -> Option<i64> {
        self.terms.is_empty().then_some(self.constant)
    }

    pub fn vars(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(|(n, _)| n.as_str())
    }

    pub fn mentions(&self, name: &str) -> bool {
        self.terms.iter().any(|(n, _)| n == name)
    }

    /// Replace `name` by `with`.
    pub fn substitute(&self, name: &str, with: &AffineExpr) -> AffineExpr {
        let k = self.coeff(name);
        if k == 0 {
            return self.clone();
        }
        let mut rest = self.clone();
        rest.add_term(name, -k);
        rest.add(&with.scaled(k))
    }

    /// Evaluate with 32-bit wrapping arithmetic, the data-path semantics.
    pub fn eval(&self, lookup: impl Fn(&str) -> Option<i32>) -> Option<i32> {
        let mut acc = self.constant as i32;
        for (n, c) in &self.terms {
            acc = acc.wrapping_add(lookup(n)?.wrapping_mul(*c as i32));
        }
        Some(acc)
    }
}

impl fmt::Display for AffineExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (n, c) in &self.terms {
            let (sign, mag) = if *c < 0 { ("-", -c) } else { ("+", *c) };
            if first {
                if sign == "-" {
                    f.write_str("-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            if mag == 1 {
                write!(f, "{n}")?;
            } else {
                write!(f, "{mag}*{n}")?;
            }
            first = false;
        }
        if first {
            write!(f, "{}", self.constant)
        } else if self.constant > 0 {
            write!(f, " + {}", self.constant)
        } else if self.constant < 0 {
            write!(f, " - {}", -self.constant)
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rel {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Rel {
    pub const ALL: [Rel; 6] = [Rel::Eq, Rel::Ne, Rel::Lt, Rel::Le, Rel::Gt, Rel::Ge];

    pub fn holds(self, a: i32, b: i32) -> bool {
        match self {
            Rel::Eq => a == b,
            Rel::Ne => a != b,
            Rel::Lt => a < b,
            Rel::Le => a <= b,
            Rel::Gt => a > b,
            Rel::Ge => a >= b,
        }
    }

    pub fn negate(self) -> Rel {
        match self {
            Rel::Eq => Rel::Ne,
            Rel::Ne => Rel::Eq,
            Rel::Lt => Rel::Ge,
            Rel::Le => Rel::Gt,
            Rel::Gt => Rel::Le,
            Rel::Ge => Rel::Lt,
        }
    }

    /// Relation with its operands swapped: `a r b` iff `b r.mirror() a`.
    pub fn mirror(self) -> Rel {
        match self {
            Rel::Lt => Rel::Gt,
            Rel::Le => Rel::Ge,
            Rel::Gt => Rel::Lt,
            Rel::Ge => Rel::Le,
            other => other,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Rel::Eq => "==",
            Rel::Ne => "!=",
            Rel::Lt => "<",
            Rel::Le => "<=",
            Rel::Gt => ">",
            Rel::Ge => ">=",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Rel> {
        Rel::ALL.iter().copied().find(|r| r.symbol() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }

    /// Wrapping integer semantics; `None` on division by zero.
    pub fn apply(self, a: i32, b: i32) -> Option<i32> {
        Some(match self {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Mul => a.wrapping_mul(b),
            BinOp::Div => {
                if b == 0 {
                    return None;
                }
                a.wrapping_div(b)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArrayRef {
    pub array: String,
    pub subscript: Vec<AffineExpr>,
}

impl ArrayRef {
    pub fn new(array: &str, subscript: Vec<AffineExpr>) -> Self {
        ArrayRef { array: array.to_string(), subscript }
    }
}

impl fmt::Display for ArrayRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.array)?;
        for s in &self.subscript {
            write!(f, "[{s}]")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Expr {
    Lit(i32),
    /// Loop index or carried scalar.
    Var(String),
    Load(ArrayRef),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_string())
    }

    pub fn load(array: &str, subscript: Vec<AffineExpr>) -> Expr {
        Expr::Load(ArrayRef::new(array, subscript))
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    /// Affine view of this expression, if it has one.
    pub fn to_affine(&self) -> Option<AffineExpr> {
        match self {
            Expr::Lit(v) => Some(AffineExpr::constant(*v as i64)),
            Expr::Var(n) => Some(AffineExpr::var(n)),
            Expr::Load(_) => None,
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.to_affine()?, b.to_affine()?);
                match op {
                    BinOp::Add => Some(a.add(&b)),
                    BinOp::Sub => Some(a.sub(&b)),
                    BinOp::Mul => match (a.as_constant(), b.as_constant()) {
                        (Some(k), _) => Some(b.scaled(k)),
                        (_, Some(k)) => Some(a.scaled(k)),
                        _ => None,
                    },
                    BinOp::Div => None,
                }
            }
        }
    }

    pub fn from_affine(a: &AffineExpr) -> Expr {
        let mut acc: Option<Expr> = None;
        for (n, c) in &a.terms {
            let t = if *c == 1 { Expr::var(n) } else { Expr::bin(BinOp::Mul, Expr::Lit(*c as i32), Expr::var(n)) };
            acc = Some(match acc {
                None => t,
                Some(e) => Expr::bin(BinOp::Add, e, t),
            });
        }
        match acc {
            None => Expr::Lit(a.constant as i32),
            Some(e) if a.constant == 0 => e,
            Some(e) if a.constant < 0 => Expr::bin(BinOp::Sub, e, Expr::Lit((-a.constant) as i32)),
            Some(e) => Expr::bin(BinOp::Add, e, Expr::Lit(a.constant as i32)),
        }
    }

    pub fn for_each_ref<'a>(&'a self, f: &mut impl FnMut(&'a ArrayRef)) {
        match self {
            Expr::Load(r) => f(r),
            Expr::Bin(_, a, b) => {
                a.for_each_ref(f);
                b.for_each_ref(f);
            }
            _ => {}
        }
    }

    pub fn for_each_var<'a>(&'a self, f: &mut impl FnMut(&'a str)) {
        match self {
            Expr::Var(n) => f(n),
            Expr::Load(r) => r.subscript.iter().for_each(|s| s.vars().for_each(&mut *f)),
            Expr::Bin(_, a, b) => {
                a.for_each_var(f);
                b.for_each_var(f);
            }
            Expr::Lit(_) => {}
        }
    }

    /// Rewrite every use of `name` (as a variable or inside subscripts).
    pub fn substitute(&self, name: &str, with: &AffineExpr) -> Expr {
        match self {
            Expr::Lit(v) => Expr::Lit(*v),
            Expr::Var(n) if n == name => Expr::from_affine(with),
            Expr::Var(n) => Expr::Var(n.clone()),
            Expr::Load(r) => Expr::Load(r.substitute(name, with)),
            Expr::Bin(op, a, b) => Expr::bin(*op, a.substitute(name, with), b.substitute(name, with)),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(BinOp::Add | BinOp::Sub, _, _) => 1,
            Expr::Bin(BinOp::Mul | BinOp::Div, _, _) => 2,
            _ => 3,
        }
    }
}

impl ArrayRef {
    pub fn substitute(&self, name: &str, with: &AffineExpr) -> ArrayRef {
        ArrayRef {
            array: self.array.clone(),
            subscript: self.subscript.iter().map(|s| s.substitute(name, with)).collect(),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Lit(v) if *v < 0 => write!(f, "({v})"),
            Expr::Lit(v) => write!(f, "{v}"),
            Expr::Var(n) => f.write_str(n),
            Expr::Load(r) => write!(f, "{r}"),
            Expr::Bin(op, a, b) => {
                let p = self.precedence();
                if a.precedence() < p {
                    write!(f, "({a})")?;
                } else {
                    write!(f, "{a}")?;
                }
                write!(f, " {} ", op.symbol())?;
                // Right operand of a left-associative operator needs parens at equal precedence.
                if b.precedence() <= p && b.precedence() < 3 {
                    write!(f, "({b})")
                } else {
                    write!(f, "{b}")
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Condition {
    pub lhs: AffineExpr,
    pub rel: Rel,
    pub rhs: AffineExpr,
}

impl Condition {
    pub fn new(lhs: AffineExpr, rel: Rel, rhs: AffineExpr) -> Self {
        Condition { lhs, rel, rhs }
    }

    /// `true` when exactly one of `self` and `other` holds for any valuation.
    pub fn is_complement_of(&self, other: &Condition) -> bool {
        let same = self.lhs == other.lhs && self.rhs == other.rhs;
        let swapped = self.lhs == other.rhs && self.rhs == other.lhs;
        (same && self.rel.negate() == other.rel) || (swapped && self.rel.negate() == other.rel.mirror())
    }

    pub fn substitute(&self, name: &str, with: &AffineExpr) -> Condition {
        Condition { lhs: self.lhs.substitute(name, with), rel: self.rel, rhs: self.rhs.substitute(name, with) }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.lhs, self.rel.symbol(), self.rhs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    Array(ArrayRef),
    Scalar(String),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Array(r) => write!(f, "{r}"),
            Target::Scalar(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Statement {
    pub guard: Option<Condition>,
    pub target: Target,
    pub expr: Expr,
}

impl Statement {
    pub fn assign(target: Target, expr: Expr) -> Self {
        Statement { guard: None, target, expr }
    }

    pub fn guarded(guard: Condition, target: Target, expr: Expr) -> Self {
        Statement { guard: Some(guard), target, expr }
    }

    pub fn substitute(&self, name: &str, with: &AffineExpr) -> Statement {
        Statement {
            guard: self.guard.as_ref().map(|g| g.substitute(name, with)),
            target: match &self.target {
                Target::Array(r) => Target::Array(r.substitute(name, with)),
                Target::Scalar(s) => Target::Scalar(s.clone()),
            },
            expr: self.expr.substitute(name, with),
        }
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(g) = &self.guard {
            write!(f, "if {g} : ")?;
        }
        write!(f, "{} = {}", self.target, self.expr)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArrayDecl {
    pub name: String,
    pub dims: Vec<u32>,
    /// Value forced onto the main diagonal by the data generator.
    pub diag: Option<i32>,
}

impl ArrayDecl {
    pub fn new(name: &str, dims: Vec<u32>) -> Self {
        ArrayDecl { name: name.to_string(), dims, diag: None }
    }

    pub fn len(&self) -> u32 {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Loop-carried scalar variable, as introduced by flattening.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScalarDecl {
    pub name: String,
    pub init: i32,
}

/// Counted loop `for name in lower..upper`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LoopDim {
    pub name: String,
    pub lower: AffineExpr,
    pub upper: AffineExpr,
}

impl LoopDim {
    pub fn new(name: &str, lower: AffineExpr, upper: AffineExpr) -> Self {
        LoopDim { name: name.to_string(), lower, upper }
    }

    pub fn counted(name: &str, trip: i64) -> Self {
        LoopDim::new(name, AffineExpr::constant(0), AffineExpr::constant(trip))
    }

    /// Constant trip count, if both bounds are constant.
    pub fn const_trip(&self) -> Option<i64> {
        Some((self.upper.as_constant()? - self.lower.as_constant()?).max(0))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LoopNest {
    pub name: String,
    pub arrays: Vec<ArrayDecl>,
    pub scalars: Vec<ScalarDecl>,
    /// Outermost first.
    pub dims: Vec<LoopDim>,
    pub body: Vec<Statement>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LoopError {
    #[error("name `{0}` declared more than once")]
    DuplicateName(String),
    #[error("array `{0}` is not declared")]
    UndeclaredArray(String),
    #[error("`{0}` is neither a loop index nor a scalar")]
    UndeclaredIndex(String),
    #[error("array `{array}` has rank {declared} but is subscripted with {used} indices")]
    RankMismatch { array: String, declared: usize, used: usize },
    #[error("bound of loop `{dim}` refers to `{name}`, which is not an enclosing loop index")]
    BadBound { dim: String, name: String },
    #[error("array `{0}` has a zero extent")]
    EmptyArray(String),
    #[error("unknown builtin kernel `{0}` (expected gemm, atax, gesummv, mvt or trisolv)")]
    UnknownKernel(String),
    #[error("kernel size must be at least 1")]
    ZeroSize,
}

impl LoopNest {
    pub fn array(&self, name: &str) -> Option<&ArrayDecl> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn is_scalar(&self, name: &str) -> bool {
        self.scalars.iter().any(|s| s.name == name)
    }

    pub fn depth(&self) -> usize {
        self.dims.len()
    }

    /// Arrays written by some statement.
    pub fn written_arrays(&self) -> BTreeSet<&str> {
        self.body
            .iter()
            .filter_map(|s| match &s.target {
                Target::Array(r) => Some(r.array.as_str()),
                Target::Scalar(_) => None,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), LoopError> {
        let mut names = BTreeSet::new();
        for n in self
            .arrays
            .iter()
            .map(|a| &a.name)
            .chain(self.scalars.iter().map(|s| &s.name))
            .chain(self.dims.iter().map(|d| &d.name))
        {
            if !names.insert(n.as_str()) {
                return Err(LoopError::DuplicateName(n.clone()));
            }
        }
        for a in &self.arrays {
            if a.dims.is_empty() || a.dims.contains(&0) {
                return Err(LoopError::EmptyArray(a.name.clone()));
            }
        }
        for (i, d) in self.dims.iter().enumerate() {
            let outer: BTreeSet<&str> = self.dims[..i].iter().map(|d| d.name.as_str()).collect();
            for v in d.lower.vars().chain(d.upper.vars()) {
                if !outer.contains(v) {
                    return Err(LoopError::BadBound { dim: d.name.clone(), name: v.to_string() });
                }
            }
        }
        let known = |n: &str| self.dims.iter().any(|d| d.name == n) || self.is_scalar(n);
        let check_ref = |r: &ArrayRef| -> Result<(), LoopError> {
            let decl = self.array(&r.array).ok_or_else(|| LoopError::UndeclaredArray(r.array.clone()))?;
            if decl.dims.len() != r.subscript.len() {
                return Err(LoopError::RankMismatch {
                    array: r.array.clone(),
                    declared: decl.dims.len(),
                    used: r.subscript.len(),
                });
            }
            for v in r.subscript.iter().flat_map(|s| s.vars()) {
                if !known(v) {
                    return Err(LoopError::UndeclaredIndex(v.to_string()));
                }
            }
            Ok(())
        };
        for s in &self.body {
            if let Some(g) = &s.guard {
                for v in g.lhs.vars().chain(g.rhs.vars()) {
                    if !known(v) {
                        return Err(LoopError::UndeclaredIndex(v.to_string()));
                    }
                }
            }
            match &s.target {
                Target::Array(r) => check_ref(r)?,
                Target::Scalar(n) => {
                    if !self.is_scalar(n) {
                        return Err(LoopError::UndeclaredIndex(n.clone()));
                    }
                }
            }
            let mut err = Ok(());
            s.expr.for_each_ref(&mut |r| {
                if err.is_ok() {
                    err = check_ref(r);
                }
            });
            err?;
            let mut bad = None;
            s.expr.for_each_var(&mut |v| {
                if bad.is_none() && !known(v) {
                    bad = Some(v.to_string());
                }
            });
            if let Some(v) = bad {
                return Err(LoopError::UndeclaredIndex(v));
            }
        }
        Ok(())
    }

    /// Name not used by any array, scalar or loop index, derived from `base`.
    pub fn fresh_name(&self, base: &str) -> String {
        let taken = |n: &str| {
            self.arrays.iter().any(|a| a.name == n) || self.is_scalar(n) || self.dims.iter().any(|d| d.name == n)
        };
        if !taken(base) {
            return base.to_string();
        }
        (0..).map(|i| alloc::format!("{base}{i}")).find(|n| !taken(n)).expect("unbounded search")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_normalizes() {
        let e = AffineExpr::var("j").add(&AffineExpr::term("i", 4)).plus(3);
        assert_eq!(e.terms, alloc::vec![("i".to_string(), 4), ("j".to_string(), 1)]);
        assert_eq!(e.sub(&AffineExpr::var("j")).terms.len(), 1);
        assert_eq!(alloc::format!("{e}"), "4*i + j + 3");
    }

    #[test]
    fn affine_substitute() {
        let e = AffineExpr::term("k", 4).plus(1);
        let s = e.substitute("k", &AffineExpr::term("k", 2).plus(1));
        assert_eq!(s, AffineExpr::term("k", 8).plus(5));
    }

    #[test]
    fn expr_affine_view() {
        let e = Expr::bin(BinOp::Add, Expr::bin(BinOp::Mul, Expr::Lit(3), Expr::var("i")), Expr::Lit(2));
        assert_eq!(e.to_affine(), Some(AffineExpr::term("i", 3).plus(2)));
        let nl = Expr::bin(BinOp::Mul, Expr::var("i"), Expr::var("j"));
        assert_eq!(nl.to_affine(), None);
    }

    #[test]
    fn complement_detection() {
        let a = Condition::new(AffineExpr::var("i"), Rel::Lt, AffineExpr::constant(2));
        let b = Condition::new(AffineExpr::var("i"), Rel::Ge, AffineExpr::constant(2));
        let c = Condition::new(AffineExpr::constant(2), Rel::Gt, AffineExpr::var("i"));
        assert!(a.is_complement_of(&b));
        assert!(c.is_complement_of(&b));
        assert!(!a.is_complement_of(&c));
    }

    #[test]
    fn undeclared_array_rejected() {
        let mut n = builtin_kernel("gemm", 2).unwrap();
        n.body.push(Statement::assign(
            Target::Array(ArrayRef::new("Z", alloc::vec![AffineExpr::var("i")])),
            Expr::Lit(0),
        ));
        assert_eq!(n.validate(), Err(LoopError::UndeclaredArray("Z".into())));
    }

    #[test]
    fn rank_mismatch_rejected() {
        let mut n = builtin_kernel("gemm", 2).unwrap();
        n.body[0].expr = Expr::load("A", alloc::vec![AffineExpr::var("i")]);
        assert!(matches!(n.validate(), Err(LoopError::RankMismatch { .. })));
    }
}
