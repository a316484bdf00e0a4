//! Line-oriented kernel documents.
//!
//! ```text
//! kernel gemm
//! array C[4][4]
//! array A[4][4]
//! array B[4][4]
//! loop i 0 4
//!   loop j 0 4
//!     loop k 0 4
//!       C[i][j] = C[i][j] + A[i][k] * B[k][j]
//! ```
//!
//! Loops nest by indentation and statements live in the innermost loop.
//! A statement may carry a guard, `if i == 0 : y[i] = 0`. Two declaration
//! forms go beyond plain arrays: `scalar <name> = <int>` declares a
//! loop-carried variable, and a trailing `diag <int>` on an array fixes the
//! generated data on its main diagonal. `#` starts a comment.

use std::path::Path;

use gridmap_core::loopir::{
    builtin_kernel, AffineExpr, ArrayDecl, ArrayRef, BinOp, Condition, Expr, LoopDim, LoopError, LoopNest, Rel,
    ScalarDecl, Statement, Target,
};

#[derive(Debug, thiserror::Error)]
pub enum KernelFileError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error(transparent)]
    Invalid(#[from] LoopError),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad builtin kernel argument `{0}` (expected builtin:NAME:SIZE)")]
    BadBuiltin(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Sym(char),
    Rel(Rel),
}

fn lex(s: &str) -> Result<Vec<Tok>, String> {
    let cs: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < cs.len() {
        let c = cs[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() {
            let st = i;
            while i < cs.len() && cs[i].is_ascii_digit() {
                i += 1;
            }
            let text: String = cs[st..i].iter().collect();
            out.push(Tok::Int(text.parse().map_err(|_| format!("integer `{text}` is too large"))?));
        } else if c.is_alphabetic() || c == '_' {
            let st = i;
            while i < cs.len() && (cs[i].is_alphanumeric() || cs[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(cs[st..i].iter().collect()));
        } else {
            let two: String = cs[i..(i + 2).min(cs.len())].iter().collect();
            if let Some(r) = Rel::from_symbol(&two).filter(|_| two.len() == 2) {
                out.push(Tok::Rel(r));
                i += 2;
            } else if let Some(r) = Rel::from_symbol(&c.to_string()) {
                out.push(Tok::Rel(r));
                i += 1;
            } else if "+-*/()[]=:".contains(c) {
                out.push(Tok::Sym(c));
                i += 1;
            } else {
                return Err(format!("unexpected character `{c}`"));
            }
        }
    }
    Ok(out)
}

struct Cursor {
    toks: Vec<Tok>,
    pos: usize,
}

impl Cursor {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), String> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(format!("expected `{c}`{}", self.found()))
        }
    }

    fn found(&self) -> String {
        match self.peek() {
            None => " at end of line".into(),
            Some(Tok::Ident(s)) => format!(", found `{s}`"),
            Some(Tok::Int(v)) => format!(", found `{v}`"),
            Some(Tok::Sym(c)) => format!(", found `{c}`"),
            Some(Tok::Rel(r)) => format!(", found `{}`", r.symbol()),
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, String> {
        match self.bump() {
            Some(Tok::Ident(s)) => Ok(s),
            _ => {
                self.pos -= 1;
                Err(format!("expected {what}{}", self.found()))
            }
        }
    }

    fn int(&mut self) -> Result<i64, String> {
        let neg = self.eat('-');
        match self.bump() {
            Some(Tok::Int(v)) => Ok(if neg { -v } else { v }),
            _ => {
                self.pos -= 1;
                Err(format!("expected an integer{}", self.found()))
            }
        }
    }

    fn end(&self) -> Result<(), String> {
        match self.peek() {
            None => Ok(()),
            Some(_) => Err(format!("unexpected trailing input{}", self.found())),
        }
    }

    fn expr(&mut self) -> Result<Expr, String> {
        let mut e = self.term()?;
        loop {
            let op = if self.eat('+') {
                BinOp::Add
            } else if self.eat('-') {
                BinOp::Sub
            } else {
                return Ok(e);
            };
            e = Expr::bin(op, e, self.term()?);
        }
    }

    fn term(&mut self) -> Result<Expr, String> {
        let mut e = self.unary()?;
        loop {
            let op = if self.eat('*') {
                BinOp::Mul
            } else if self.eat('/') {
                BinOp::Div
            } else {
                return Ok(e);
            };
            e = Expr::bin(op, e, self.unary()?);
        }
    }

    fn unary(&mut self) -> Result<Expr, String> {
        if self.eat('-') {
            return Ok(match self.unary()? {
                Expr::Lit(v) => Expr::Lit(v.wrapping_neg()),
                e => Expr::bin(BinOp::Sub, Expr::Lit(0), e),
            });
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, String> {
        match self.bump() {
            Some(Tok::Int(v)) => {
                i32::try_from(v).map(Expr::Lit).map_err(|_| format!("literal {v} does not fit in 32 bits"))
            }
            Some(Tok::Ident(name)) => {
                if self.peek() == Some(&Tok::Sym('[')) {
                    Ok(Expr::Load(self.subscripts(&name)?))
                } else {
                    Ok(Expr::Var(name))
                }
            }
            Some(Tok::Sym('(')) => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            _ => {
                self.pos -= 1;
                Err(format!("expected an expression{}", self.found()))
            }
        }
    }

    fn subscripts(&mut self, array: &str) -> Result<ArrayRef, String> {
        let mut subs = Vec::new();
        while self.eat('[') {
            subs.push(self.affine("subscript")?);
            self.expect(']')?;
        }
        Ok(ArrayRef::new(array, subs))
    }

    fn affine(&mut self, what: &str) -> Result<AffineExpr, String> {
        let e = self.expr()?;
        e.to_affine().ok_or_else(|| format!("{what} `{e}` is not affine"))
    }
}

/// Parses and validates a kernel document.
pub fn parse_kernel(text: &str) -> Result<LoopNest, KernelFileError> {
    let mut nest =
        LoopNest { name: String::new(), arrays: Vec::new(), scalars: Vec::new(), dims: Vec::new(), body: Vec::new() };
    let mut indents: Vec<usize> = Vec::new();
    let mut body_indent = None;
    let mut named = false;
    for (no, raw) in text.lines().enumerate() {
        let line = no + 1;
        let err = |msg: String| KernelFileError::Syntax { line, msg };
        let content = raw.split('#').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        let indent = content.len() - content.trim_start().len();
        let mut c = Cursor { toks: lex(content).map_err(err)?, pos: 0 };
        let head = match c.peek() {
            Some(Tok::Ident(s)) => s.clone(),
            _ => String::new(),
        };
        if !named {
            if head != "kernel" {
                return Err(err("document must start with `kernel <name>`".into()));
            }
            c.bump();
            nest.name = c.ident("a kernel name").map_err(err)?;
            c.end().map_err(err)?;
            named = true;
            continue;
        }
        match head.as_str() {
            "kernel" => return Err(err("duplicate `kernel` line".into())),
            "array" | "scalar" if !indents.is_empty() => {
                return Err(err("declarations must come before the first loop".into()))
            }
            "array" => {
                c.bump();
                let name = c.ident("an array name").map_err(err)?;
                let mut decl = ArrayDecl::new(&name, Vec::new());
                while c.eat('[') {
                    let n = c.int().map_err(err)?;
                    let n = u32::try_from(n).map_err(|_| err(format!("array extent {n} is out of range")))?;
                    decl.dims.push(n);
                    c.expect(']').map_err(err)?;
                }
                if decl.dims.is_empty() {
                    return Err(err(format!("array `{name}` needs at least one extent")));
                }
                if c.peek() == Some(&Tok::Ident("diag".into())) {
                    c.bump();
                    let v = c.int().map_err(err)?;
                    decl.diag = Some(i32::try_from(v).map_err(|_| err(format!("diag value {v} is out of range")))?);
                }
                c.end().map_err(err)?;
                nest.arrays.push(decl);
            }
            "scalar" => {
                c.bump();
                let name = c.ident("a scalar name").map_err(err)?;
                c.expect('=').map_err(err)?;
                let v = c.int().map_err(err)?;
                let init = i32::try_from(v).map_err(|_| err(format!("initial value {v} is out of range")))?;
                c.end().map_err(err)?;
                nest.scalars.push(ScalarDecl { name, init });
            }
            "loop" if c.toks.get(1).is_some_and(|t| matches!(t, Tok::Ident(_))) => {
                if body_indent.is_some() {
                    return Err(err("statements must all sit in the innermost loop".into()));
                }
                if indents.last().is_some_and(|&l| indent <= l) {
                    return Err(err("a loop must be indented deeper than its parent".into()));
                }
                c.bump();
                let name = c.ident("a loop index").map_err(err)?;
                let lower = c.affine("lower bound").map_err(err)?;
                let upper = c.affine("upper bound").map_err(err)?;
                c.end().map_err(err)?;
                nest.dims.push(LoopDim::new(&name, lower, upper));
                indents.push(indent);
            }
            _ => {
                let Some(&outer) = indents.last() else {
                    return Err(err("statement outside of any loop".into()));
                };
                match body_indent {
                    None if indent <= outer => return Err(err("statement must be indented inside its loop".into())),
                    Some(b) if b != indent => {
                        return Err(err("statements must all sit in the innermost loop at one indentation".into()))
                    }
                    _ => body_indent = Some(indent),
                }
                nest.body.push(statement(&mut c).map_err(err)?);
            }
        }
    }
    if !named {
        return Err(KernelFileError::Syntax { line: 1, msg: "empty kernel document".into() });
    }
    if nest.dims.is_empty() {
        return Err(KernelFileError::Syntax { line: text.lines().count().max(1), msg: "kernel has no loop".into() });
    }
    nest.validate()?;
    Ok(nest)
}

fn statement(c: &mut Cursor) -> Result<Statement, String> {
    let guard = if c.peek() == Some(&Tok::Ident("if".into())) {
        c.bump();
        let lhs = c.affine("guard operand")?;
        let rel = match c.bump() {
            Some(Tok::Rel(r)) => r,
            _ => {
                c.pos -= 1;
                return Err(format!("expected a relation{}", c.found()));
            }
        };
        let rhs = c.affine("guard operand")?;
        c.expect(':')?;
        Some(Condition::new(lhs, rel, rhs))
    } else {
        None
    };
    let name = c.ident("an assignment target")?;
    let target =
        if c.peek() == Some(&Tok::Sym('[')) { Target::Array(c.subscripts(&name)?) } else { Target::Scalar(name) };
    c.expect('=')?;
    let expr = c.expr()?;
    c.end()?;
    Ok(Statement { guard, target, expr })
}

fn bound(a: &AffineExpr) -> String {
    let s = a.to_string();
    if s.contains(' ') || s.starts_with('-') {
        format!("({s})")
    } else {
        s
    }
}

/// Renders `nest` in the document syntax; [`parse_kernel`] reads it back
/// unchanged.
pub fn print_kernel(nest: &LoopNest) -> String {
    let mut out = format!("kernel {}\n", nest.name);
    for a in &nest.arrays {
        out.push_str("array ");
        out.push_str(&a.name);
        for d in &a.dims {
            out.push_str(&format!("[{d}]"));
        }
        if let Some(v) = a.diag {
            out.push_str(&format!(" diag {v}"));
        }
        out.push('\n');
    }
    for s in &nest.scalars {
        out.push_str(&format!("scalar {} = {}\n", s.name, s.init));
    }
    for (depth, d) in nest.dims.iter().enumerate() {
        out.push_str(&format!("{}loop {} {} {}\n", "  ".repeat(depth), d.name, bound(&d.lower), bound(&d.upper)));
    }
    let pad = "  ".repeat(nest.dims.len());
    for s in &nest.body {
        out.push_str(&format!("{pad}{s}\n"));
    }
    out
}

/// Resolves a `--kernel` argument: `builtin:NAME:SIZE` or a file path.
pub fn load_kernel(spec: &str) -> Result<LoopNest, KernelFileError> {
    if let Some(rest) = spec.strip_prefix("builtin:") {
        let (name, size) = rest.split_once(':').ok_or_else(|| KernelFileError::BadBuiltin(spec.into()))?;
        let size: u32 = size.parse().map_err(|_| KernelFileError::BadBuiltin(spec.into()))?;
        return Ok(builtin_kernel(name, size)?);
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path)
        .map_err(|source| KernelFileError::Io { path: path.display().to_string(), source })?;
    parse_kernel(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use gridmap_core::loopir::{flatten, unroll, BUILTIN_KERNELS};

    const GEMM: &str = "kernel gemm
array C[4][4]
array A[4][4]
array B[4][4]
loop i 0 4
  loop j 0 4
    loop k 0 4
      C[i][j] = C[i][j] + A[i][k] * B[k][j]
";

    #[test]
    fn gemm_text_matches_builtin() {
        let k = parse_kernel(GEMM).unwrap();
        let names: Vec<_> = k.dims.iter().map(|d| d.name.as_str()).collect();
        assert_eq!(names, ["i", "j", "k"]);
        assert_eq!(k, builtin_kernel("gemm", 4).unwrap());
    }

    #[test]
    fn triangular_bound() {
        let k = parse_kernel(
            "kernel t\narray L[4][4] diag 1\narray x[4]\nloop i 0 4\n  loop j 0 i\n    x[i] = x[i] - L[i][j] * x[j]\n",
        )
        .unwrap();
        assert_eq!(k.dims[1].upper, AffineExpr::var("i"));
        assert_eq!(k.arrays[0].diag, Some(1));
    }

    #[test]
    fn bounds_may_be_expressions() {
        let k = parse_kernel("kernel b\narray x[9]\nloop i 1 2 * 4 - 1\n  x[i + 1] = -x[i]\n").unwrap();
        assert_eq!(k.dims[0].lower, AffineExpr::constant(1));
        assert_eq!(k.dims[0].upper, AffineExpr::constant(7));
        assert_eq!(k.body[0].expr, Expr::bin(BinOp::Sub, Expr::Lit(0), Expr::load("x", vec![AffineExpr::var("i")])));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let undeclared = "kernel g\narray x[4]\nloop i 0 4\n  y[i] = 1\n";
        assert!(matches!(parse_kernel(undeclared), Err(KernelFileError::Invalid(LoopError::UndeclaredArray(_)))));
        let rank = "kernel g\narray x[4][4]\nloop i 0 4\n  x[i] = 1\n";
        assert!(matches!(parse_kernel(rank), Err(KernelFileError::Invalid(LoopError::RankMismatch { .. }))));
        let bad = "kernel g\narray x[4]\nloop i 0 4\n  x[i] = (1 +\n";
        assert!(matches!(parse_kernel(bad), Err(KernelFileError::Syntax { line: 4, .. })));
        let nonaffine = "kernel g\narray x[4]\nloop i 0 4\n  x[i * i] = 1\n";
        assert!(matches!(parse_kernel(nonaffine), Err(KernelFileError::Syntax { line: 4, .. })));
        let imperfect = "kernel g\narray x[4]\nloop i 0 4\n  x[i] = 1\n  loop j 0 4\n    x[j] = 2\n";
        assert!(matches!(parse_kernel(imperfect), Err(KernelFileError::Syntax { line: 5, .. })));
        assert!(matches!(parse_kernel("array x[4]\n"), Err(KernelFileError::Syntax { line: 1, .. })));
    }

    #[test]
    fn guards_and_comments() {
        let k = parse_kernel(
            "# leading comment\nkernel g\narray y[4]\nloop i 0 4  # trailing\n  if i >= 2 : y[i] = 1\n  if i < 2 : y[i] = 0\n",
        )
        .unwrap();
        assert_eq!(k.body.len(), 2);
        assert_eq!(k.body[0].guard.as_ref().unwrap().rel, Rel::Ge);
    }

    #[test]
    fn print_parse_round_trip() {
        for b in BUILTIN_KERNELS {
            let n = b.build(4);
            let f = flatten(&n).unwrap();
            let u = unroll(&f, 2).unwrap();
            for nest in [n, f, u] {
                let text = print_kernel(&nest);
                assert_eq!(parse_kernel(&text).unwrap(), nest, "{text}");
            }
        }
    }

    #[test]
    fn builtin_spec() {
        assert_eq!(load_kernel("builtin:mvt:3").unwrap(), builtin_kernel("mvt", 3).unwrap());
        assert!(matches!(load_kernel("builtin:mvt"), Err(KernelFileError::BadBuiltin(_))));
        assert!(matches!(load_kernel("builtin:nope:3"), Err(KernelFileError::Invalid(_))));
    }
}
