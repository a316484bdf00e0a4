//! Desk-scale integer versions of the five benchmark kernels.
//!
//! Each kernel is written as one perfect nest. Statements that the original
//! benchmark places outside the innermost loop become guarded statements, so
//! every kernel maps as a single data-flow graph.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use super::{
    AffineExpr, ArrayDecl, ArrayRef, BinOp, Condition, Expr, LoopDim, LoopError, LoopNest, Rel, Statement, Target,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BuiltinKernel {
    Gemm,
    Atax,
    Gesummv,
    Mvt,
    Trisolv,
}

pub const BUILTIN_KERNELS: [BuiltinKernel; 5] =
    [BuiltinKernel::Gemm, BuiltinKernel::Atax, BuiltinKernel::Gesummv, BuiltinKernel::Mvt, BuiltinKernel::Trisolv];

/// Scale factors used by GESUMMV in place of its floating-point alpha/beta.
pub const GESUMMV_ALPHA: i32 = 3;
pub const GESUMMV_BETA: i32 = 2;

impl BuiltinKernel {
    pub fn name(self) -> &'static str {
        match self {
            BuiltinKernel::Gemm => "gemm",
            BuiltinKernel::Atax => "atax",
            BuiltinKernel::Gesummv => "gesummv",
            BuiltinKernel::Mvt => "mvt",
            BuiltinKernel::Trisolv => "trisolv",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        BUILTIN_KERNELS.iter().copied().find(|k| k.name() == name)
    }

    pub fn build(self, n: u32) -> LoopNest {
        match self {
            BuiltinKernel::Gemm => gemm(n),
            BuiltinKernel::Atax => atax(n),
            BuiltinKernel::Gesummv => gesummv(n),
            BuiltinKernel::Mvt => mvt(n),
            BuiltinKernel::Trisolv => trisolv(n),
        }
    }
}

pub fn builtin_kernel(name: &str, size: u32) -> Result<LoopNest, LoopError> {
    let k = BuiltinKernel::from_name(name).ok_or_else(|| LoopError::UnknownKernel(name.to_string()))?;
    if size == 0 {
        return Err(LoopError::ZeroSize);
    }
    Ok(k.build(size))
}

fn v(name: &str) -> AffineExpr {
    AffineExpr::var(name)
}

fn c(k: i64) -> AffineExpr {
    AffineExpr::constant(k)
}

fn at(array: &str, sub: &[&str]) -> ArrayRef {
    ArrayRef::new(array, sub.iter().map(|s| v(s)).collect())
}

fn ld(array: &str, sub: &[&str]) -> Expr {
    Expr::Load(at(array, sub))
}

fn add(a: Expr, b: Expr) -> Expr {
    Expr::bin(BinOp::Add, a, b)
}

fn mul(a: Expr, b: Expr) -> Expr {
    Expr::bin(BinOp::Mul, a, b)
}

fn to(array: &str, sub: &[&str]) -> Target {
    Target::Array(at(array, sub))
}

fn when(lhs: AffineExpr, rel: Rel, rhs: AffineExpr) -> Condition {
    Condition::new(lhs, rel, rhs)
}

fn square(name: &str, n: u32) -> ArrayDecl {
    ArrayDecl::new(name, vec![n, n])
}

fn vector(name: &str, n: u32) -> ArrayDecl {
    ArrayDecl::new(name, vec![n])
}

fn nest(name: &str, arrays: Vec<ArrayDecl>, dims: Vec<LoopDim>, body: Vec<Statement>) -> LoopNest {
    LoopNest { name: name.to_string(), arrays, scalars: Vec::new(), dims, body }
}

/// `C[i][j] += A[i][k] * B[k][j]`
fn gemm(n: u32) -> LoopNest {
    let n64 = n as i64;
    nest(
        "gemm",
        vec![square("C", n), square("A", n), square("B", n)],
        vec![LoopDim::counted("i", n64), LoopDim::counted("j", n64), LoopDim::counted("k", n64)],
        vec![Statement::assign(
            to("C", &["i", "j"]),
            add(ld("C", &["i", "j"]), mul(ld("A", &["i", "k"]), ld("B", &["k", "j"]))),
        )],
    )
}

/// `y = Aᵀ(A·x)`. The phase loop `p` runs the two inner `j` sweeps of the
/// original kernel one after the other inside a single perfect nest.
fn atax(n: u32) -> LoopNest {
    let n64 = n as i64;
    nest(
        "atax",
        vec![square("A", n), vector("x", n), vector("y", n), vector("tmp", n)],
        vec![LoopDim::counted("i", n64), LoopDim::counted("p", 2), LoopDim::counted("j", n64)],
        vec![
            Statement::guarded(when(v("i").add(&v("p")), Rel::Eq, c(0)), to("y", &["j"]), Expr::Lit(0)),
            Statement::guarded(when(v("p").add(&v("j")), Rel::Eq, c(0)), to("tmp", &["i"]), Expr::Lit(0)),
            Statement::guarded(
                when(v("p"), Rel::Eq, c(0)),
                to("tmp", &["i"]),
                add(ld("tmp", &["i"]), mul(ld("A", &["i", "j"]), ld("x", &["j"]))),
            ),
            Statement::guarded(
                when(v("p"), Rel::Eq, c(1)),
                to("y", &["j"]),
                add(ld("y", &["j"]), mul(ld("A", &["i", "j"]), ld("tmp", &["i"]))),
            ),
        ],
    )
}

/// `y = alpha·A·x + beta·B·x` with integer scale factors.
fn gesummv(n: u32) -> LoopNest {
    let n64 = n as i64;
    nest(
        "gesummv",
        vec![square("A", n), square("B", n), vector("x", n), vector("tmp", n), vector("y", n)],
        vec![LoopDim::counted("i", n64), LoopDim::counted("j", n64)],
        vec![
            Statement::guarded(when(v("j"), Rel::Eq, c(0)), to("tmp", &["i"]), Expr::Lit(0)),
            Statement::guarded(when(v("j"), Rel::Eq, c(0)), to("y", &["i"]), Expr::Lit(0)),
            Statement::assign(to("tmp", &["i"]), add(ld("tmp", &["i"]), mul(ld("A", &["i", "j"]), ld("x", &["j"])))),
            Statement::assign(to("y", &["i"]), add(ld("y", &["i"]), mul(ld("B", &["i", "j"]), ld("x", &["j"])))),
            Statement::guarded(
                when(v("j"), Rel::Eq, c(n64 - 1)),
                to("y", &["i"]),
                add(mul(Expr::Lit(GESUMMV_ALPHA), ld("tmp", &["i"])), mul(Expr::Lit(GESUMMV_BETA), ld("y", &["i"]))),
            ),
        ],
    )
}

/// `x1 += A·y1; x2 += Aᵀ·y2`, the two original nests fused.
fn mvt(n: u32) -> LoopNest {
    let n64 = n as i64;
    nest(
        "mvt",
        vec![square("A", n), vector("x1", n), vector("x2", n), vector("y1", n), vector("y2", n)],
        vec![LoopDim::counted("i", n64), LoopDim::counted("j", n64)],
        vec![
            Statement::assign(to("x1", &["i"]), add(ld("x1", &["i"]), mul(ld("A", &["i", "j"]), ld("y1", &["j"])))),
            Statement::assign(to("x2", &["i"]), add(ld("x2", &["i"]), mul(ld("A", &["j", "i"]), ld("y2", &["j"])))),
        ],
    )
}

/// Forward substitution `L·x = b` for unit-diagonal `L`. The inner loop runs
/// `j = 0..=i`; the copy from `b` and the final division happen on the first
/// and last inner iteration respectively.
fn trisolv(n: u32) -> LoopNest {
    let n64 = n as i64;
    let mut l = square("L", n);
    l.diag = Some(1);
    nest(
        "trisolv",
        vec![l, vector("x", n), vector("b", n)],
        vec![LoopDim::counted("i", n64), LoopDim::new("j", c(0), v("i").plus(1))],
        vec![
            Statement::guarded(when(v("j"), Rel::Eq, c(0)), to("x", &["i"]), ld("b", &["i"])),
            Statement::guarded(
                when(v("j"), Rel::Lt, v("i")),
                to("x", &["i"]),
                Expr::bin(BinOp::Sub, ld("x", &["i"]), mul(ld("L", &["i", "j"]), ld("x", &["j"]))),
            ),
            Statement::guarded(
                when(v("j"), Rel::Eq, v("i")),
                to("x", &["i"]),
                Expr::bin(BinOp::Div, ld("x", &["i"]), ld("L", &["i", "i"])),
            ),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loopir::{gen_data, reference_exec};

    #[test]
    fn all_validate() {
        for k in BUILTIN_KERNELS {
            for n in 1..=5 {
                k.build(n).validate().unwrap();
            }
        }
    }

    #[test]
    fn unknown_and_zero() {
        assert_eq!(builtin_kernel("lu", 4), Err(LoopError::UnknownKernel("lu".into())));
        assert_eq!(builtin_kernel("gemm", 0), Err(LoopError::ZeroSize));
    }

    #[test]
    fn gemm_shape() {
        let g = builtin_kernel("gemm", 4).unwrap();
        let names: Vec<_> = g.dims.iter().map(|d| d.name.as_str()).collect();
        assert_eq!(names, ["i", "j", "k"]);
        assert!(g.dims.iter().all(|d| d.const_trip() == Some(4)));
    }

    #[test]
    fn trisolv_shape() {
        let t = builtin_kernel("trisolv", 4).unwrap();
        assert_eq!(t.depth(), 2);
        assert_eq!(t.dims[1].upper, v("i").plus(1));
    }

    fn mat(m: &[i32], n: usize, i: usize, j: usize) -> i64 {
        m[i * n + j] as i64
    }

    #[test]
    fn trisolv_solves_unit_lower_system() {
        let n = 4;
        let t = builtin_kernel("trisolv", n as u32).unwrap();
        for seed in 0..3 {
            let m = gen_data(&t, seed, 256).unwrap();
            let out = reference_exec(&t, &m).unwrap();
            let l = m.array_words("L").unwrap();
            let b = m.array_words("b").unwrap();
            let x = out.array_words("x").unwrap();
            // L·x over the lower triangle reproduces b (exact: unit diagonal).
            for (i, &bi) in b.iter().enumerate().take(n) {
                let s: i64 = (0..=i).map(|j| mat(l, n, i, j) * x[j] as i64).sum();
                assert_eq!(s as i32, bi, "row {i} seed {seed}");
            }
        }
    }

    #[test]
    fn atax_matches_hand_computation() {
        let k = builtin_kernel("atax", 4).unwrap();
        let mut m = gen_data(&k, 0, 256).unwrap();
        let a: [i32; 16] = [1, 2, 0, -1, 3, 0, 1, 1, 0, -2, 2, 0, 1, 1, 1, 1];
        let x = [1, -1, 2, 0];
        m.array_words_mut("A").unwrap().copy_from_slice(&a);
        m.array_words_mut("x").unwrap().copy_from_slice(&x);
        // A·x = [-1, 5, 6, 2]; Aᵀ·(A·x) = [16, -12, 19, 8]
        let out = reference_exec(&k, &m).unwrap();
        assert_eq!(out.array_words("tmp").unwrap(), &[-1, 5, 6, 2]);
        assert_eq!(out.array_words("y").unwrap(), &[16, -12, 19, 8]);
    }

    #[test]
    fn gesummv_matches_formula() {
        let n = 4;
        let k = builtin_kernel("gesummv", n as u32).unwrap();
        let m = gen_data(&k, 5, 256).unwrap();
        let out = reference_exec(&k, &m).unwrap();
        let (a, b, x) = (m.array_words("A").unwrap(), m.array_words("B").unwrap(), m.array_words("x").unwrap());
        for i in 0..n {
            let ax: i64 = (0..n).map(|j| mat(a, n, i, j) * x[j] as i64).sum();
            let bx: i64 = (0..n).map(|j| mat(b, n, i, j) * x[j] as i64).sum();
            let y = GESUMMV_ALPHA as i64 * ax + GESUMMV_BETA as i64 * bx;
            assert_eq!(out.array_words("y").unwrap()[i] as i64, y);
        }
    }

    #[test]
    fn mvt_matches_formula() {
        let n = 3;
        let k = builtin_kernel("mvt", n as u32).unwrap();
        let m = gen_data(&k, 9, 256).unwrap();
        let out = reference_exec(&k, &m).unwrap();
        let a = m.array_words("A").unwrap();
        for i in 0..n {
            let x1 = m.array_words("x1").unwrap()[i] as i64
                + (0..n).map(|j| mat(a, n, i, j) * m.array_words("y1").unwrap()[j] as i64).sum::<i64>();
            let x2 = m.array_words("x2").unwrap()[i] as i64
                + (0..n).map(|j| mat(a, n, j, i) * m.array_words("y2").unwrap()[j] as i64).sum::<i64>();
            assert_eq!(out.array_words("x1").unwrap()[i] as i64, x1);
            assert_eq!(out.array_words("x2").unwrap()[i] as i64, x2);
        }
    }
}
