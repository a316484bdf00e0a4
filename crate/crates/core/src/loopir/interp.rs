//! Sequential reference interpreter: the correctness oracle for every mapping.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{ArrayRef, Expr, LoopNest, MemImage, Statement, Target};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExecError {
    #[error("division by zero at iteration {iteration:?}")]
    DivisionByZero { iteration: Vec<i32> },
    #[error("subscript {index:?} of `{array}` out of bounds at iteration {iteration:?}")]
    OutOfBounds { array: String, index: Vec<i32>, iteration: Vec<i32> },
    #[error("array `{0}` missing from the memory layout")]
    MissingArray(String),
    #[error("unbound variable `{0}`")]
    Unbound(String),
}

struct Env {
    names: Vec<String>,
    vals: Vec<i32>,
    depth: usize,
}

impl Env {
    fn get(&self, name: &str) -> Option<i32> {
        self.names.iter().position(|n| n == name).map(|i| self.vals[i])
    }

    fn set(&mut self, name: &str, v: i32) {
        let i = self.names.iter().position(|n| n == name).expect("declared");
        self.vals[i] = v;
    }

    fn iteration(&self) -> Vec<i32> {
        self.vals[..self.depth].to_vec()
    }
}

/// Execute `nest` in program order over a copy of `mem` and return the
/// final image. Arithmetic wraps at 32 bits; division truncates.
pub fn reference_exec(nest: &LoopNest, mem: &MemImage) -> Result<MemImage, ExecError> {
    for a in &nest.arrays {
        if mem.layout.region(&a.name).is_none() {
            return Err(ExecError::MissingArray(a.name.clone()));
        }
    }
    let mut env = Env {
        names: nest.dims.iter().map(|d| d.name.clone()).chain(nest.scalars.iter().map(|s| s.name.clone())).collect(),
        vals: nest.dims.iter().map(|_| 0).chain(nest.scalars.iter().map(|s| s.init)).collect(),
        depth: nest.dims.len(),
    };
    let mut out = mem.clone();
    run_level(nest, 0, &mut env, &mut out)?;
    Ok(out)
}

fn run_level(nest: &LoopNest, level: usize, env: &mut Env, mem: &mut MemImage) -> Result<(), ExecError> {
    if level == nest.dims.len() {
        for s in &nest.body {
            exec_stmt(s, env, mem)?;
        }
        return Ok(());
    }
    let dim = &nest.dims[level];
    let lookup = |n: &str| env.get(n);
    let lo = dim.lower.eval(lookup).ok_or_else(|| unbound(&dim.lower))?;
    let hi = dim.upper.eval(lookup).ok_or_else(|| unbound(&dim.upper))?;
    let mut i = lo;
    while i < hi {
        env.vals[level] = i;
        run_level(nest, level + 1, env, mem)?;
        i += 1;
    }
    Ok(())
}

fn unbound(e: &super::AffineExpr) -> ExecError {
    ExecError::Unbound(e.vars().next().unwrap_or("?").to_string())
}

fn exec_stmt(s: &Statement, env: &mut Env, mem: &mut MemImage) -> Result<(), ExecError> {
    if let Some(g) = &s.guard {
        let l = g.lhs.eval(|n| env.get(n)).ok_or_else(|| unbound(&g.lhs))?;
        let r = g.rhs.eval(|n| env.get(n)).ok_or_else(|| unbound(&g.rhs))?;
        if !g.rel.holds(l, r) {
            return Ok(());
        }
    }
    let v = eval(&s.expr, env, mem)?;
    match &s.target {
        Target::Scalar(n) => env.set(n, v),
        Target::Array(r) => {
            let idx = subscript(r, env)?;
            mem.write(&r.array, &idx, v).ok_or_else(|| ExecError::OutOfBounds {
                array: r.array.clone(),
                index: idx.clone(),
                iteration: env.iteration(),
            })?;
        }
    }
    Ok(())
}

fn subscript(r: &ArrayRef, env: &Env) -> Result<Vec<i32>, ExecError> {
    r.subscript.iter().map(|s| s.eval(|n| env.get(n)).ok_or_else(|| unbound(s))).collect()
}

fn eval(e: &Expr, env: &Env, mem: &MemImage) -> Result<i32, ExecError> {
    match e {
        Expr::Lit(v) => Ok(*v),
        Expr::Var(n) => env.get(n).ok_or_else(|| ExecError::Unbound(n.clone())),
        Expr::Load(r) => {
            let idx = subscript(r, env)?;
            mem.read(&r.array, &idx).ok_or_else(|| ExecError::OutOfBounds {
                array: r.array.clone(),
                index: idx.clone(),
                iteration: env.iteration(),
            })
        }
        Expr::Bin(op, a, b) => {
            let (a, b) = (eval(a, env, mem)?, eval(b, env, mem)?);
            op.apply(a, b).ok_or_else(|| ExecError::DivisionByZero { iteration: env.iteration() })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loopir::{builtin_kernel, gen_data, AffineExpr, ArrayDecl, BinOp, LoopDim};
    use alloc::vec;

    #[test]
    fn gemm_identity() {
        let n = builtin_kernel("gemm", 2).unwrap();
        let mut m = gen_data(&n, 0, 64).unwrap();
        let eye = [1, 0, 0, 1];
        m.array_words_mut("A").unwrap().copy_from_slice(&eye);
        m.array_words_mut("B").unwrap().copy_from_slice(&eye);
        m.array_words_mut("C").unwrap().fill(0);
        let out = reference_exec(&n, &m).unwrap();
        assert_eq!(out.array_words("C").unwrap(), &eye);
    }

    #[test]
    fn zero_trip_leaves_memory() {
        let mut n = builtin_kernel("gemm", 2).unwrap();
        n.dims[0].upper = AffineExpr::constant(0);
        let m = gen_data(&n, 1, 64).unwrap();
        assert_eq!(reference_exec(&n, &m).unwrap(), m);
    }

    /// Independent matrix multiply over the generated words.
    fn naive_gemm(a: &[i32], b: &[i32], c: &[i32], n: usize) -> Vec<i32> {
        let mut out = c.to_vec();
        for i in 0..n {
            for j in 0..n {
                let mut acc = c[i * n + j];
                for k in 0..n {
                    acc = acc.wrapping_add(a[i * n + k].wrapping_mul(b[k * n + j]));
                }
                out[i * n + j] = acc;
            }
        }
        out
    }

    #[test]
    fn gemm_matches_naive() {
        let n = builtin_kernel("gemm", 4).unwrap();
        let m = gen_data(&n, 7, 256).unwrap();
        let out = reference_exec(&n, &m).unwrap();
        let expect =
            naive_gemm(m.array_words("A").unwrap(), m.array_words("B").unwrap(), m.array_words("C").unwrap(), 4);
        assert_eq!(out.array_words("C").unwrap(), &expect[..]);
    }

    #[test]
    fn division_by_zero_reports_iteration() {
        let n = LoopNest {
            name: "d".into(),
            arrays: vec![ArrayDecl::new("x", vec![3])],
            scalars: vec![],
            dims: vec![LoopDim::counted("i", 3)],
            body: vec![Statement::assign(
                Target::Array(crate::loopir::ArrayRef::new("x", vec![AffineExpr::var("i")])),
                Expr::bin(BinOp::Div, Expr::Lit(6), Expr::var("i")),
            )],
        };
        let m = gen_data(&n, 0, 16).unwrap();
        assert_eq!(reference_exec(&n, &m), Err(ExecError::DivisionByZero { iteration: vec![0] }));
    }

    #[test]
    fn out_of_bounds_subscript() {
        let n = LoopNest {
            name: "o".into(),
            arrays: vec![ArrayDecl::new("x", vec![2])],
            scalars: vec![],
            dims: vec![LoopDim::counted("i", 3)],
            body: vec![Statement::assign(
                Target::Array(crate::loopir::ArrayRef::new("x", vec![AffineExpr::var("i")])),
                Expr::Lit(1),
            )],
        };
        let m = gen_data(&n, 0, 16).unwrap();
        assert!(matches!(reference_exec(&n, &m), Err(ExecError::OutOfBounds { .. })));
    }

    #[test]
    fn touches_only_declared_regions() {
        let n = builtin_kernel("mvt", 4).unwrap();
        let mut m = gen_data(&n, 2, 256).unwrap();
        let end = m.layout.extent() as usize;
        for (k, w) in m.words[end..].iter_mut().enumerate() {
            *w = k as i32 * 3 - 7;
        }
        let out = reference_exec(&n, &m).unwrap();
        assert_eq!(out.words[end..], m.words[end..]);
        for r in &m.layout.regions {
            if !r.output {
                assert_eq!(out.array_words(&r.name), m.array_words(&r.name));
            }
        }
    }
}
