//! Source-level loop transforms: flattening, innermost unrolling and
//! innermost-loop extraction. Every transform preserves the memory effect of
//! the nest under [`super::reference_exec`].

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::{AffineExpr, Condition, Expr, LoopDim, LoopError, LoopNest, Rel, ScalarDecl, Statement, Target};
use crate::loopir::BinOp;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransformError {
    #[error(transparent)]
    Invalid(#[from] LoopError),
    #[error("unroll factor must be positive")]
    ZeroFactor,
    #[error("innermost trip count {trip} is not divisible by unroll factor {factor}")]
    NotDivisible { trip: i64, factor: u32 },
    #[error("innermost loop `{0}` does not have constant bounds")]
    NonConstantInnermost(String),
    #[error("loop `{dim}` has an empty range at outer iteration {at:?}")]
    EmptyInnerRange { dim: String, at: Vec<i32> },
    #[error("loop nest has no dimensions")]
    NoDims,
}

/// Number of body executions of the nest, by enumeration.
pub fn iteration_count(nest: &LoopNest) -> Result<u64, TransformError> {
    let mut total = 0u64;
    walk(nest, &mut Vec::new(), false, &mut |_| total += 1)?;
    Ok(total)
}

/// Visit every iteration vector. With `require_nonempty`, an empty inner range
/// under a live outer iteration is an error.
fn walk(
    nest: &LoopNest,
    prefix: &mut Vec<i32>,
    require_nonempty: bool,
    visit: &mut impl FnMut(&[i32]),
) -> Result<(), TransformError> {
    let level = prefix.len();
    if level == nest.dims.len() {
        visit(prefix);
        return Ok(());
    }
    let dim = &nest.dims[level];
    let lookup = |n: &str| nest.dims[..level].iter().position(|d| d.name == n).map(|i| prefix[i]);
    let lo = dim.lower.eval(lookup).ok_or(LoopError::BadBound { dim: dim.name.clone(), name: "?".into() })?;
    let hi = dim.upper.eval(lookup).ok_or(LoopError::BadBound { dim: dim.name.clone(), name: "?".into() })?;
    if require_nonempty && level > 0 && lo >= hi {
        return Err(TransformError::EmptyInnerRange { dim: dim.name.clone(), at: prefix.clone() });
    }
    for i in lo..hi.max(lo) {
        prefix.push(i);
        walk(nest, prefix, require_nonempty, visit)?;
        prefix.pop();
    }
    Ok(())
}

fn incr(name: &str) -> Expr {
    Expr::bin(BinOp::Add, Expr::var(name), Expr::Lit(1))
}

/// Collapse the nest into a single counted loop over all iterations.
///
/// The original indices become carried scalars. The innermost one is bumped
/// every iteration; when it reaches its upper bound the next-outer index is
/// bumped and the inner one restarts at its lower bound. Bounds that depend
/// on outer indices are compared against a value computed each iteration
/// through a carry scalar, so all wrap decisions see the pre-update indices.
pub fn flatten(nest: &LoopNest) -> Result<LoopNest, TransformError> {
    nest.validate()?;
    if nest.dims.len() < 2 {
        return Ok(nest.clone());
    }
    let mut total = 0u64;
    let mut first: Option<Vec<i32>> = None;
    walk(nest, &mut Vec::new(), true, &mut |it| {
        if first.is_none() {
            first = Some(it.to_vec());
        }
        total += 1;
    })?;
    let first = match first {
        Some(f) => f,
        None => initial_indices(nest),
    };

    let mut out = nest.clone();
    let counter = out.fresh_name("t");
    out.dims.clear();
    for (d, init) in nest.dims.iter().zip(&first) {
        out.scalars.push(ScalarDecl { name: d.name.clone(), init: *init });
    }

    let names: Vec<&str> = nest.dims.iter().map(|d| d.name.as_str()).collect();
    let m = names.len();
    let dynamic = nest.dims[1..].iter().any(|d| d.lower.as_constant().is_none() || d.upper.as_constant().is_none());

    let mut updates = vec![Statement::assign(Target::Scalar(names[m - 1].to_string()), incr(names[m - 1]))];
    if !dynamic {
        for lvl in (1..m).rev() {
            let dim = &nest.dims[lvl];
            let wrapped = Condition::new(AffineExpr::var(names[lvl]), Rel::Eq, dim.upper.clone());
            updates.push(Statement::guarded(
                wrapped.clone(),
                Target::Scalar(names[lvl - 1].to_string()),
                incr(names[lvl - 1]),
            ));
            updates.push(Statement::guarded(
                wrapped,
                Target::Scalar(names[lvl].to_string()),
                Expr::from_affine(&dim.lower),
            ));
        }
    } else {
        let mut carries = vec![String::new(); m];
        for lvl in (1..m).rev() {
            let dim = &nest.dims[lvl];
            let carry = out.fresh_name(&alloc::format!("w_{}", names[lvl]));
            out.scalars.push(ScalarDecl { name: carry.clone(), init: 0 });
            updates.push(Statement::assign(
                Target::Scalar(carry.clone()),
                Expr::from_affine(&AffineExpr::var(names[lvl]).sub(&dim.upper)),
            ));
            updates.push(Statement::guarded(
                Condition::new(AffineExpr::var(&carry), Rel::Eq, AffineExpr::constant(0)),
                Target::Scalar(names[lvl - 1].to_string()),
                incr(names[lvl - 1]),
            ));
            carries[lvl] = carry;
        }
        for lvl in 1..m {
            updates.push(Statement::guarded(
                Condition::new(AffineExpr::var(&carries[lvl]), Rel::Eq, AffineExpr::constant(0)),
                Target::Scalar(names[lvl].to_string()),
                Expr::from_affine(&nest.dims[lvl].lower),
            ));
        }
    }
    out.body.extend(updates);
    out.dims.push(LoopDim::counted(&counter, total as i64));
    out.validate()?;
    Ok(out)
}

/// Lower bounds evaluated outermost-first, for nests with no iterations.
fn initial_indices(nest: &LoopNest) -> Vec<i32> {
    let mut vals: Vec<i32> = Vec::new();
    for (lvl, d) in nest.dims.iter().enumerate() {
        let v = d.lower.eval(|n| nest.dims[..lvl].iter().position(|x| x.name == n).map(|i| vals[i])).unwrap_or(0);
        vals.push(v);
    }
    vals
}

/// Replicate the innermost body `factor` times, dividing its trip count.
pub fn unroll(nest: &LoopNest, factor: u32) -> Result<LoopNest, TransformError> {
    nest.validate()?;
    if factor == 0 {
        return Err(TransformError::ZeroFactor);
    }
    let dim = nest.dims.last().ok_or(TransformError::NoDims)?;
    let (lo, hi) = match (dim.lower.as_constant(), dim.upper.as_constant()) {
        (Some(lo), Some(hi)) => (lo, hi),
        _ => return Err(TransformError::NonConstantInnermost(dim.name.clone())),
    };
    let trip = (hi - lo).max(0);
    if trip % factor as i64 != 0 {
        return Err(TransformError::NotDivisible { trip, factor });
    }
    if factor == 1 {
        return Ok(nest.clone());
    }
    let f = factor as i64;
    let mut out = nest.clone();
    out.body.clear();
    for u in 0..f {
        let with = AffineExpr::term(&dim.name, f).plus(lo + u);
        out.body.extend(nest.body.iter().map(|s| s.substitute(&dim.name, &with)));
    }
    let last = out.dims.last_mut().expect("checked above");
    last.lower = AffineExpr::constant(0);
    last.upper = AffineExpr::constant(trip / f);
    Ok(out)
}

/// Keep only the innermost loop, with every outer index fixed at 0.
pub fn extract_innermost(nest: &LoopNest) -> LoopNest {
    if nest.dims.len() <= 1 {
        return nest.clone();
    }
    let zero = AffineExpr::constant(0);
    let (outer, inner) = nest.dims.split_at(nest.dims.len() - 1);
    let mut dim = inner[0].clone();
    let mut body = nest.body.clone();
    for o in outer {
        dim.lower = dim.lower.substitute(&o.name, &zero);
        dim.upper = dim.upper.substitute(&o.name, &zero);
        body = body.iter().map(|s| s.substitute(&o.name, &zero)).collect();
    }
    LoopNest {
        name: nest.name.clone(),
        arrays: nest.arrays.clone(),
        scalars: nest.scalars.clone(),
        dims: vec![dim],
        body,
    }
}
