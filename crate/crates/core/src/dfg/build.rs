//! Lowering of a loop nest to its per-iteration data-flow graph.
//!
//! Values are tracked symbolically as `node + bias` so constant offsets fold
//! into immediates, comparisons and load/store offsets instead of costing
//! Add nodes. Scalars assigned in the body are read through distance-1 edges
//! from their last producer; array accesses go through a small per-array
//! store buffer that forwards known values and keeps stores in program order.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Dfg, DfgError, NodeId, Opcode, Section};
use crate::loopir::{
    AffineExpr, ArrayRef, BinOp, Condition, Expr, Layout, LoopError, LoopNest, Rel, Statement, Target,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DfgOptions {
    /// Drop `x * 1` stride multiplications from address computation.
    pub fold_unit_strides: bool,
    /// Latency of Load and Store nodes; use the target's SPM latency.
    pub mem_latency: u32,
}

impl Default for DfgOptions {
    fn default() -> Self {
        DfgOptions { fold_unit_strides: false, mem_latency: 1 }
    }
}

pub fn build_dfg(nest: &LoopNest) -> Result<Dfg, DfgError> {
    build_dfg_with(nest, &DfgOptions::default())
}

/// Build the graph of one iteration of `nest`.
///
/// Nests deeper than one level need constant bounds; each level gets a
/// Sel/Add/Cmp counter whose Cmp carries into the next-outer Add.
pub fn build_dfg_with(nest: &LoopNest, opts: &DfgOptions) -> Result<Dfg, DfgError> {
    nest.validate()?;
    let mut b = Builder {
        opts,
        layout: Layout::for_nest(nest),
        dfg: Dfg::new(),
        cse: BTreeMap::new(),
        carries: Vec::new(),
        env: BTreeMap::new(),
        mem: BTreeMap::new(),
        section: Section::Indices,
        roots: BTreeSet::new(),
    };
    b.counters(nest)?;
    let assigned: BTreeSet<&str> = nest
        .body
        .iter()
        .filter_map(|s| match &s.target {
            Target::Scalar(n) => Some(n.as_str()),
            Target::Array(_) => None,
        })
        .collect();
    for (i, s) in nest.scalars.iter().enumerate() {
        let v = if assigned.contains(s.name.as_str()) { Val::Var(Src::Carry(i), s.init) } else { Val::Imm(s.init) };
        b.env.insert(s.name.clone(), v);
    }

    let body = &nest.body;
    let mut i = 0;
    while i < body.len() {
        let s = &body[i];
        if let (Some(g1), Some(next)) = (&s.guard, body.get(i + 1)) {
            if let Some(g2) = &next.guard {
                if g1.is_complement_of(g2) && next.target == s.target {
                    b.fused(s, g1, next)?;
                    i += 2;
                    continue;
                }
            }
        }
        b.statement(s)?;
        i += 1;
    }
    let arrays: Vec<String> = b.mem.keys().cloned().collect();
    for a in &arrays {
        b.flush(a, None);
    }
    b.close_carries(nest, &assigned);
    b.cross_iteration_order();
    let dfg = b.finish();
    dfg.check()?;
    Ok(dfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Src {
    Node(NodeId),
    /// Start-of-iteration value of the i-th scalar, produced last iteration.
    Carry(usize),
}

/// `src + bias`, or a constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Val {
    Imm(i32),
    Var(Src, i32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Opnd {
    Imm(i32),
    Src(Src),
}

/// Symbolic address: `base + offset`, with no base for constant addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Key {
    base: Option<Src>,
    offset: i32,
}

impl Key {
    /// Same base with different offsets can never collide.
    fn may_alias(&self, other: &Key) -> bool {
        self.base != other.base || self.offset == other.offset
    }
}

#[derive(Default)]
struct ArrayState {
    known: Vec<(Key, Val)>,
    pending: Vec<(Key, Val)>,
    loads: Vec<(NodeId, Key)>,
    stores: Vec<(NodeId, Key)>,
}

struct Builder<'a> {
    opts: &'a DfgOptions,
    layout: Layout,
    dfg: Dfg,
    cse: BTreeMap<(Opcode, Vec<Opnd>), NodeId>,
    /// Operand slots fed by a scalar's previous-iteration value.
    carries: Vec<(NodeId, usize, usize)>,
    env: BTreeMap<String, Val>,
    mem: BTreeMap<String, ArrayState>,
    section: Section,
    /// Counter nodes, kept even when no statement reads the index.
    roots: BTreeSet<NodeId>,
}

impl Builder<'_> {
    fn counters(&mut self, nest: &LoopNest) -> Result<(), DfgError> {
        let mut bounds = Vec::new();
        for d in &nest.dims {
            match (d.lower.as_constant(), d.upper.as_constant()) {
                (Some(lo), Some(hi)) => bounds.push((lo as i32, (hi - lo).max(0) as i32)),
                _ => return Err(DfgError::NonRectangular(d.name.clone())),
            }
        }
        let mut carry: Option<NodeId> = None;
        for (d, &(lower, trip)) in nest.dims.iter().zip(&bounds).rev() {
            let g = &mut self.dfg;
            let s = g.add_node(Opcode::Sel, 1, Section::Indices);
            let a = g.add_node(Opcode::Add, 1, Section::Indices);
            let c = g.add_node(Opcode::Cmp(Rel::Eq), 1, Section::Indices);
            g.add_data_edge(c, s, 0, 1);
            g.set_imm(s, 1, 0);
            g.add_data_edge(a, s, 2, 1);
            g.add_data_edge(s, a, 0, 0);
            match carry {
                Some(inner) => {
                    g.add_data_edge(inner, a, 1, 0);
                }
                None => g.set_imm(a, 1, 1),
            }
            g.add_data_edge(a, c, 0, 0);
            g.set_imm(c, 1, trip);
            self.env.insert(d.name.clone(), Val::Var(Src::Node(s), lower));
            self.roots.extend([s, a, c]);
            carry = Some(c);
        }
        Ok(())
    }

    fn node(&mut self, op: Opcode, args: &[Opnd]) -> NodeId {
        let mut args = args.to_vec();
        if op.is_commutative() {
            args.sort();
        }
        let pure = !op.is_memory();
        if pure {
            if let Some(&n) = self.cse.get(&(op, args.clone())) {
                let node = &mut self.dfg.nodes[n];
                if node.section == Section::Compute && matches!(self.section, Section::Indices | Section::Address) {
                    node.section = self.section;
                }
                return n;
            }
        }
        let (lat, section) = if pure { (1, self.section) } else { (self.opts.mem_latency, Section::Memory) };
        let n = self.dfg.add_node(op, lat, section);
        for (k, a) in args.iter().enumerate() {
            match *a {
                Opnd::Imm(v) => self.dfg.set_imm(n, k, v),
                Opnd::Src(Src::Node(m)) => {
                    self.dfg.add_data_edge(m, n, k, 0);
                }
                Opnd::Src(Src::Carry(s)) => self.carries.push((n, k, s)),
            }
        }
        if pure {
            self.cse.insert((op, args), n);
        }
        n
    }

    fn var(&mut self, op: Opcode, args: &[Opnd], bias: i32) -> Val {
        Val::Var(Src::Node(self.node(op, args)), bias)
    }

    /// Operand form of a value, adding the bias explicitly when needed.
    fn opnd(&mut self, v: Val) -> Opnd {
        match v {
            Val::Imm(c) => Opnd::Imm(c),
            Val::Var(s, 0) => Opnd::Src(s),
            Val::Var(s, b) => Opnd::Src(Src::Node(self.node(Opcode::Add, &[Opnd::Src(s), Opnd::Imm(b)]))),
        }
    }

    fn add(&mut self, a: Val, b: Val) -> Val {
        match (a, b) {
            (Val::Imm(x), Val::Imm(y)) => Val::Imm(x.wrapping_add(y)),
            (Val::Var(s, bias), Val::Imm(c)) | (Val::Imm(c), Val::Var(s, bias)) => Val::Var(s, bias.wrapping_add(c)),
            (Val::Var(s1, b1), Val::Var(s2, b2)) => {
                self.var(Opcode::Add, &[Opnd::Src(s1), Opnd::Src(s2)], b1.wrapping_add(b2))
            }
        }
    }

    fn sub(&mut self, a: Val, b: Val) -> Val {
        match (a, b) {
            (Val::Imm(x), Val::Imm(y)) => Val::Imm(x.wrapping_sub(y)),
            (Val::Var(s, bias), Val::Imm(c)) => Val::Var(s, bias.wrapping_sub(c)),
            (Val::Imm(c), Val::Var(s, bias)) => {
                self.var(Opcode::Sub, &[Opnd::Imm(c.wrapping_sub(bias)), Opnd::Src(s)], 0)
            }
            (Val::Var(s1, b1), Val::Var(s2, b2)) if s1 == s2 => Val::Imm(b1.wrapping_sub(b2)),
            (Val::Var(s1, b1), Val::Var(s2, b2)) => {
                self.var(Opcode::Sub, &[Opnd::Src(s1), Opnd::Src(s2)], b1.wrapping_sub(b2))
            }
        }
    }

    fn mul(&mut self, a: Val, b: Val) -> Val {
        match (a, b) {
            (Val::Imm(x), Val::Imm(y)) => Val::Imm(x.wrapping_mul(y)),
            (Val::Var(s, bias), Val::Imm(c)) | (Val::Imm(c), Val::Var(s, bias)) => match c {
                0 => Val::Imm(0),
                1 => Val::Var(s, bias),
                _ => self.var(Opcode::Mul, &[Opnd::Src(s), Opnd::Imm(c)], bias.wrapping_mul(c)),
            },
            (x, y) => {
                let (p, q) = (self.opnd(x), self.opnd(y));
                self.var(Opcode::Mul, &[p, q], 0)
            }
        }
    }

    fn div(&mut self, a: Val, b: Val) -> Result<Val, DfgError> {
        Ok(match (a, b) {
            (_, Val::Imm(0)) => return Err(DfgError::ConstDivByZero),
            (Val::Imm(x), Val::Imm(y)) => Val::Imm(x.wrapping_div(y)),
            (x, Val::Imm(1)) => x,
            (x, y) => {
                let (p, q) = (self.opnd(x), self.opnd(y));
                self.var(Opcode::Div, &[p, q], 0)
            }
        })
    }

    fn cmp(&mut self, rel: Rel, a: Val, b: Val) -> Val {
        match (a, b) {
            (Val::Imm(x), Val::Imm(y)) => Val::Imm(rel.holds(x, y) as i32),
            (Val::Var(s, bias), Val::Imm(c)) => {
                self.var(Opcode::Cmp(rel), &[Opnd::Src(s), Opnd::Imm(c.wrapping_sub(bias))], 0)
            }
            (Val::Imm(c), Val::Var(s, bias)) => {
                self.var(Opcode::Cmp(rel.mirror()), &[Opnd::Src(s), Opnd::Imm(c.wrapping_sub(bias))], 0)
            }
            (Val::Var(s1, b1), Val::Var(s2, b2)) if s1 == s2 => Val::Imm(rel.holds(b1, b2) as i32),
            (Val::Var(s1, b1), Val::Var(s2, b2)) => {
                let rhs = self.opnd(Val::Var(s2, b2.wrapping_sub(b1)));
                self.var(Opcode::Cmp(rel), &[Opnd::Src(s1), rhs], 0)
            }
        }
    }

    fn select(&mut self, c: Val, a: Val, b: Val) -> Val {
        if let Val::Imm(x) = c {
            return if x != 0 { a } else { b };
        }
        if a == b {
            return a;
        }
        // Share one bias between both arms so the Sel itself absorbs it.
        let bias = match (a, b) {
            (Val::Var(_, x), _) | (_, Val::Var(_, x)) => x,
            _ => 0,
        };
        let arm = |this: &mut Self, v: Val| match v {
            Val::Imm(k) => Opnd::Imm(k.wrapping_sub(bias)),
            Val::Var(s, x) => this.opnd(Val::Var(s, x.wrapping_sub(bias))),
        };
        let p = self.opnd(c);
        let (x, y) = (arm(self, a), arm(self, b));
        self.var(Opcode::Sel, &[p, x, y], bias)
    }

    fn lookup(&self, name: &str) -> Result<Val, DfgError> {
        self.env.get(name).copied().ok_or_else(|| LoopError::UndeclaredIndex(name.to_string()).into())
    }

    fn affine(&mut self, e: &AffineExpr) -> Result<Val, DfgError> {
        let mut acc = Val::Imm(e.constant as i32);
        for (v, c) in &e.terms {
            let x = self.lookup(v)?;
            let t = self.mul(x, Val::Imm(*c as i32));
            acc = self.add(acc, t);
        }
        Ok(acc)
    }

    fn condition(&mut self, g: &Condition) -> Result<Val, DfgError> {
        let l = self.affine(&g.lhs)?;
        let r = self.affine(&g.rhs)?;
        Ok(self.cmp(g.rel, l, r))
    }

    fn eval(&mut self, e: &Expr) -> Result<Val, DfgError> {
        Ok(match e {
            Expr::Lit(v) => Val::Imm(*v),
            Expr::Var(n) => self.lookup(n)?,
            Expr::Load(r) => {
                let key = self.address(r)?;
                self.read(&r.array, key)
            }
            Expr::Bin(op, a, b) => {
                let a = self.eval(a)?;
                let b = self.eval(b)?;
                match op {
                    BinOp::Add => self.add(a, b),
                    BinOp::Sub => self.sub(a, b),
                    BinOp::Mul => self.mul(a, b),
                    BinOp::Div => self.div(a, b)?,
                }
            }
        })
    }

    /// Row-major flat address with the array base folded into the offset.
    fn address(&mut self, r: &ArrayRef) -> Result<Key, DfgError> {
        let region = self.layout.region(&r.array).ok_or_else(|| LoopError::UndeclaredArray(r.array.clone()))?;
        let mut flat = AffineExpr::constant(region.base as i64);
        for (sub, stride) in r.subscript.iter().zip(region.strides()) {
            flat = flat.add(&sub.scaled(stride));
        }
        let saved = core::mem::replace(&mut self.section, Section::Address);
        let mut acc = Val::Imm(flat.constant as i32);
        for (v, c) in &flat.terms {
            let x = self.lookup(v)?;
            let t = match x {
                Val::Var(s, bias) if *c == 1 && !self.opts.fold_unit_strides => {
                    self.var(Opcode::Mul, &[Opnd::Src(s), Opnd::Imm(1)], bias)
                }
                _ => self.mul(x, Val::Imm(*c as i32)),
            };
            acc = self.add(acc, t);
        }
        self.section = saved;
        Ok(match acc {
            Val::Imm(k) => Key { base: None, offset: k },
            Val::Var(s, b) => Key { base: Some(s), offset: b },
        })
    }

    fn state(&mut self, array: &str) -> &mut ArrayState {
        self.mem.entry(array.to_string()).or_default()
    }

    fn read(&mut self, array: &str, key: Key) -> Val {
        if let Some((_, v)) = self.state(array).known.iter().find(|(k, _)| *k == key) {
            return *v;
        }
        self.flush(array, Some(key));
        let n = self.mem_node(Opcode::Load, key, None);
        let lat = self.opts.mem_latency;
        let st = self.mem.get_mut(array).expect("state created by flush");
        let stores: Vec<NodeId> = st.stores.iter().filter(|(_, k)| k.may_alias(&key)).map(|(s, _)| *s).collect();
        st.loads.push((n, key));
        st.known.push((key, Val::Var(Src::Node(n), 0)));
        for s in stores {
            self.dfg.add_order_edge(s, n, lat, 0);
        }
        Val::Var(Src::Node(n), 0)
    }

    fn write(&mut self, array: &str, key: Key, v: Val) {
        let st = self.state(array);
        st.known.retain(|(k, _)| !k.may_alias(&key));
        st.known.push((key, v));
        st.pending.retain(|(k, _)| *k != key);
        st.pending.push((key, v));
    }

    /// Emit buffered stores in program order: all of them, or the shortest
    /// prefix covering every store that may alias `key`.
    fn flush(&mut self, array: &str, key: Option<Key>) {
        let st = self.state(array);
        let upto = match key {
            None => st.pending.len(),
            Some(key) => st.pending.iter().rposition(|(k, _)| k.may_alias(&key)).map_or(0, |i| i + 1),
        };
        let emit: Vec<(Key, Val)> = st.pending.drain(..upto).collect();
        for (k, v) in emit {
            let saved = core::mem::replace(&mut self.section, Section::Compute);
            let value = self.opnd(v);
            self.section = saved;
            let n = self.mem_node(Opcode::Store, k, Some(value));
            let st = self.mem.get_mut(array).expect("state exists");
            let after_stores: Vec<NodeId> =
                st.stores.iter().filter(|(_, o)| o.may_alias(&k)).map(|(s, _)| *s).collect();
            let after_loads: Vec<NodeId> = st.loads.iter().filter(|(_, o)| o.may_alias(&k)).map(|(l, _)| *l).collect();
            st.stores.push((n, k));
            for s in after_stores {
                self.dfg.add_order_edge(s, n, 1, 0);
            }
            for l in after_loads {
                self.dfg.add_order_edge(l, n, 0, 0);
            }
        }
    }

    fn mem_node(&mut self, op: Opcode, key: Key, value: Option<Opnd>) -> NodeId {
        let addr = key.base.map_or(Opnd::Imm(0), Opnd::Src);
        let n = match value {
            Some(v) => self.node(op, &[addr, v]),
            None => self.node(op, &[addr]),
        };
        self.dfg.nodes[n].offset = key.offset;
        n
    }

    fn statement(&mut self, s: &Statement) -> Result<(), DfgError> {
        self.section = match s.target {
            Target::Scalar(_) => Section::Indices,
            Target::Array(_) => Section::Compute,
        };
        let cond = match &s.guard {
            None => None,
            Some(g) => match self.condition(g)? {
                Val::Imm(0) => return Ok(()),
                Val::Imm(_) => None,
                c => Some(c),
            },
        };
        match &s.target {
            Target::Scalar(name) => {
                let rhs = self.eval(&s.expr)?;
                let new = match cond {
                    None => rhs,
                    Some(c) => {
                        let old = self.lookup(name)?;
                        self.guarded_update(c, rhs, old)
                    }
                };
                self.env.insert(name.clone(), new);
            }
            Target::Array(r) => {
                let rhs = self.eval(&s.expr)?;
                let key = self.address(r)?;
                let new = match cond {
                    None => rhs,
                    Some(c) => {
                        let old = self.read(&r.array, key);
                        self.select(c, rhs, old)
                    }
                };
                self.write(&r.array, key, new);
            }
        }
        Ok(())
    }

    /// `if g : t = e1` directly followed by `if !g : t = e2`, as one select.
    fn fused(&mut self, first: &Statement, g: &Condition, second: &Statement) -> Result<(), DfgError> {
        self.section = match first.target {
            Target::Scalar(_) => Section::Indices,
            Target::Array(_) => Section::Compute,
        };
        let c = self.condition(g)?;
        let e1 = self.eval(&first.expr)?;
        let e2 = self.eval(&second.expr)?;
        let new = self.select(c, e1, e2);
        match &first.target {
            Target::Scalar(name) => {
                self.env.insert(name.clone(), new);
            }
            Target::Array(r) => {
                let key = self.address(r)?;
                self.write(&r.array, key, new);
            }
        }
        Ok(())
    }

    /// Guarded scalar update; `if g : s = s ± 1` becomes `s ± g`.
    fn guarded_update(&mut self, c: Val, rhs: Val, old: Val) -> Val {
        if let (Val::Var(s1, b1), Val::Var(s2, b2)) = (rhs, old) {
            if s1 == s2 && (b1 == b2.wrapping_add(1) || b1 == b2.wrapping_sub(1)) {
                let op = if b1 == b2.wrapping_add(1) { Opcode::Add } else { Opcode::Sub };
                let p = self.opnd(c);
                return self.var(op, &[Opnd::Src(s1), p], b2);
            }
        }
        self.select(c, rhs, old)
    }

    /// Give every assigned scalar a producer whose output, read one iteration
    /// later, is the scalar minus its initial value (so the implicit 0 before
    /// the first iteration reads as the initial value).
    fn close_carries(&mut self, nest: &LoopNest, assigned: &BTreeSet<&str>) {
        self.section = Section::Indices;
        let mut producer = BTreeMap::new();
        for (i, s) in nest.scalars.iter().enumerate() {
            if !assigned.contains(s.name.as_str()) {
                continue;
            }
            let p = match self.env[&s.name] {
                Val::Var(Src::Node(n), b) if b == s.init => n,
                Val::Var(src, b) => self.node(Opcode::Add, &[Opnd::Src(src), Opnd::Imm(b.wrapping_sub(s.init))]),
                Val::Imm(c) => self.node(Opcode::Const(c.wrapping_sub(s.init)), &[]),
            };
            producer.insert(i, p);
            self.roots.insert(p);
        }
        for (dst, k, s) in core::mem::take(&mut self.carries) {
            self.dfg.add_data_edge(producer[&s], dst, k, 1);
        }
    }

    /// Accesses to a written array in consecutive iterations stay in order.
    fn cross_iteration_order(&mut self) {
        let lat = self.opts.mem_latency;
        let mut edges = Vec::new();
        for st in self.mem.values() {
            if st.stores.is_empty() {
                continue;
            }
            let ops: Vec<(NodeId, Key, bool)> = st
                .loads
                .iter()
                .map(|&(n, k)| (n, k, false))
                .chain(st.stores.iter().map(|&(n, k)| (n, k, true)))
                .collect();
            for &(a, ka, sa) in &ops {
                for &(b, kb, sb) in &ops {
                    if a == b || !(sa || sb) || (ka.base.is_none() && kb.base.is_none() && ka.offset != kb.offset) {
                        continue;
                    }
                    let delay = match (sa, sb) {
                        (true, false) => lat,
                        (true, true) => 1,
                        _ => 0,
                    };
                    edges.push((a, b, delay));
                }
            }
        }
        edges.sort_unstable();
        for (a, b, delay) in edges {
            self.dfg.add_order_edge(a, b, delay, 1);
        }
    }

    /// Drop nodes whose value reaches neither a store nor a loop counter.
    fn finish(self) -> Dfg {
        let g = self.dfg;
        let mut live = vec![false; g.nodes.len()];
        let mut work: Vec<NodeId> =
            g.nodes.iter().filter(|n| n.opcode == Opcode::Store || self.roots.contains(&n.id)).map(|n| n.id).collect();
        let (ins, _) = g.adjacency();
        while let Some(n) = work.pop() {
            if live[n] {
                continue;
            }
            live[n] = true;
            for &e in &ins[n] {
                let e = &g.edges[e];
                if e.is_data() && !live[e.src] {
                    work.push(e.src);
                }
            }
        }
        let mut remap = vec![usize::MAX; g.nodes.len()];
        let mut out = Dfg::new();
        for n in g.nodes.iter().filter(|n| live[n.id]) {
            remap[n.id] = out.nodes.len();
            let mut n = n.clone();
            n.id = out.nodes.len();
            out.nodes.push(n);
        }
        for e in g.edges.iter().filter(|e| live[e.src] && live[e.dst]) {
            let mut e = *e;
            e.id = out.edges.len();
            e.src = remap[e.src];
            e.dst = remap[e.dst];
            out.edges.push(e);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dfg::{dfg_stats, execute, EdgeKind};
    use crate::loopir::{
        builtin_kernel, flatten, gen_data, iteration_count, reference_exec, unroll, ArrayDecl, LoopDim, ScalarDecl,
        BUILTIN_KERNELS,
    };

    fn gemm() -> Dfg {
        build_dfg(&builtin_kernel("gemm", 4).unwrap()).unwrap()
    }

    #[test]
    fn gemm_node_inventory() {
        let g = gemm();
        let s = dfg_stats(&g);
        assert_eq!(s.op_count, 22);
        assert_eq!(s.mem_op_count, 4);
        assert_eq!(s.sections[&Section::Indices], 9);
        assert_eq!(s.sections[&Section::Address], 7);
        assert_eq!(s.sections[&Section::Memory], 4);
        assert_eq!(s.sections[&Section::Compute], 2);
    }

    #[test]
    fn gemm_counter_recurrences() {
        let g = gemm();
        let triples: Vec<_> = g.data_cycles(3).into_iter().filter(|c| c.len() == 3).collect();
        assert_eq!(triples.len(), 3);
        for c in triples {
            let ops: BTreeSet<_> = c.iter().map(|&n| g.nodes[n].opcode.kind()).collect();
            assert_eq!(ops.len(), 3);
            assert!(c.iter().all(|&n| g.nodes[n].section == Section::Indices));
        }
    }

    fn one_loop(body: Vec<Statement>, arrays: Vec<ArrayDecl>) -> LoopNest {
        LoopNest { name: "t".into(), arrays, scalars: vec![], dims: vec![LoopDim::counted("i", 4)], body }
    }

    #[test]
    fn empty_body_is_one_counter() {
        let g = build_dfg(&one_loop(vec![], vec![])).unwrap();
        assert_eq!(g.len(), 3);
        let kinds: BTreeSet<_> = g.nodes.iter().map(|n| n.opcode.kind()).collect();
        assert_eq!(kinds.len(), 3);
        assert_eq!(g.edges.iter().filter(|e| e.distance == 1).count(), 2);
    }

    fn x_at_i() -> Target {
        Target::Array(ArrayRef::new("x", vec![AffineExpr::var("i")]))
    }

    #[test]
    fn if_else_pair_adds_one_select() {
        let arrays = vec![ArrayDecl::new("x", vec![4])];
        let plain = build_dfg(&one_loop(vec![Statement::assign(x_at_i(), Expr::Lit(1))], arrays.clone())).unwrap();
        let g1 = Condition::new(AffineExpr::var("i"), Rel::Lt, AffineExpr::constant(2));
        let g2 = Condition::new(AffineExpr::var("i"), Rel::Ge, AffineExpr::constant(2));
        let pair = one_loop(
            vec![Statement::guarded(g1, x_at_i(), Expr::Lit(1)), Statement::guarded(g2, x_at_i(), Expr::Lit(2))],
            arrays,
        );
        let g = build_dfg(&pair).unwrap();
        let sels = |d: &Dfg| d.nodes.iter().filter(|n| n.opcode == Opcode::Sel).count();
        assert_eq!(sels(&g), sels(&plain) + 1);
        assert!(g.nodes.iter().all(|n| n.opcode != Opcode::Load));
        let m = gen_data(&pair, 0, 64).unwrap();
        assert_eq!(execute(&g, &m, 4).unwrap(), reference_exec(&pair, &m).unwrap());
    }

    #[test]
    fn unroll_doubles_compute() {
        let n = builtin_kernel("gemm", 4).unwrap();
        let base = dfg_stats(&build_dfg(&n).unwrap());
        let un = dfg_stats(&build_dfg(&unroll(&n, 2).unwrap()).unwrap());
        assert_eq!(un.sections[&Section::Compute], 2 * base.sections[&Section::Compute]);
    }

    #[test]
    fn folding_unit_strides_drops_multiplies() {
        let n = builtin_kernel("gemm", 4).unwrap();
        let opts = DfgOptions { fold_unit_strides: true, ..DfgOptions::default() };
        let g = build_dfg_with(&n, &opts).unwrap();
        assert_eq!(g.len(), 20);
        let m = gen_data(&n, 1, 256).unwrap();
        assert_eq!(execute(&g, &m, 64).unwrap(), reference_exec(&n, &m).unwrap());
    }

    #[test]
    fn triangular_needs_flattening() {
        let t = builtin_kernel("trisolv", 4).unwrap();
        assert_eq!(build_dfg(&t), Err(DfgError::NonRectangular("j".into())));
        build_dfg(&flatten(&t).unwrap()).unwrap();
    }

    #[test]
    fn flattened_gemm_size() {
        let f = flatten(&builtin_kernel("gemm", 4).unwrap()).unwrap();
        assert_eq!(build_dfg(&f).unwrap().len(), 23);
    }

    #[test]
    fn memory_latency_sets_order_delay() {
        let opts = DfgOptions { mem_latency: 3, ..DfgOptions::default() };
        let g = build_dfg_with(&builtin_kernel("gemm", 2).unwrap(), &opts).unwrap();
        let store = g.nodes.iter().find(|n| n.opcode == Opcode::Store).unwrap().id;
        assert_eq!(g.nodes[store].latency, 3);
        assert!(g.out_edges(store).any(|e| e.kind == EdgeKind::Order { delay: 3 } && e.distance == 1));
    }

    #[test]
    fn scalar_with_nonzero_init() {
        let n = LoopNest {
            name: "s".into(),
            arrays: vec![ArrayDecl::new("x", vec![4])],
            scalars: vec![ScalarDecl { name: "s".into(), init: 5 }],
            dims: vec![LoopDim::counted("i", 4)],
            body: vec![
                Statement::assign(Target::Scalar("s".into()), Expr::bin(BinOp::Mul, Expr::var("s"), Expr::Lit(2))),
                Statement::assign(x_at_i(), Expr::var("s")),
            ],
        };
        let g = build_dfg(&n).unwrap();
        let m = gen_data(&n, 0, 16).unwrap();
        let out = execute(&g, &m, 4).unwrap();
        assert_eq!(out, reference_exec(&n, &m).unwrap());
        assert_eq!(out.array_words("x").unwrap(), &[10, 20, 40, 80]);
    }

    #[test]
    fn store_forwarding_and_aliasing() {
        // x[i] = 3; x[0] = x[i] + 1; x[i] = x[i] + x[0]
        let x0 = || ArrayRef::new("x", vec![AffineExpr::constant(0)]);
        let xi = || ArrayRef::new("x", vec![AffineExpr::var("i")]);
        let n = one_loop(
            vec![
                Statement::assign(Target::Array(xi()), Expr::Lit(3)),
                Statement::assign(Target::Array(x0()), Expr::bin(BinOp::Add, Expr::Load(xi()), Expr::Lit(1))),
                Statement::assign(Target::Array(xi()), Expr::bin(BinOp::Add, Expr::Load(xi()), Expr::Load(x0()))),
            ],
            vec![ArrayDecl::new("x", vec![4])],
        );
        let g = build_dfg(&n).unwrap();
        for seed in 0..4 {
            let m = gen_data(&n, seed, 16).unwrap();
            assert_eq!(execute(&g, &m, 4).unwrap(), reference_exec(&n, &m).unwrap());
        }
    }

    /// Every address operand is computed from index arithmetic only.
    fn address_chains_clean(g: &Dfg) -> bool {
        let (ins, _) = g.adjacency();
        g.nodes.iter().filter(|n| n.opcode.is_memory()).all(|m| {
            let mut work: Vec<NodeId> =
                ins[m.id].iter().map(|&e| g.edges[e]).filter(|e| e.operand() == Some(0)).map(|e| e.src).collect();
            let mut seen = BTreeSet::new();
            while let Some(n) = work.pop() {
                if !seen.insert(n) {
                    continue;
                }
                if !matches!(g.nodes[n].section, Section::Indices | Section::Address) {
                    return false;
                }
                work.extend(ins[n].iter().map(|&e| g.edges[e]).filter(|e| e.is_data()).map(|e| e.src));
            }
            true
        })
    }

    fn check_kernel(nest: &LoopNest, seed: u64) {
        let g = build_dfg(nest).unwrap();
        assert!(address_chains_clean(&g), "{}", nest.name);
        let m = gen_data(nest, seed, 1024).unwrap();
        let iters = iteration_count(nest).unwrap();
        assert_eq!(execute(&g, &m, iters).unwrap(), reference_exec(nest, &m).unwrap(), "{}", nest.name);
    }

    #[test]
    fn all_kernels_execute_like_the_interpreter() {
        for k in BUILTIN_KERNELS {
            for size in 1..=4 {
                let nest = k.build(size);
                let flat = flatten(&nest).unwrap();
                for seed in 0..3 {
                    if k.name() != "trisolv" {
                        check_kernel(&nest, seed);
                    }
                    check_kernel(&flat, seed);
                    if let Ok(u) = unroll(&flat, 2) {
                        check_kernel(&u, seed);
                    }
                }
            }
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn flattened_kernels_preserve_semantics(k in 0usize..5, size in 1u32..5, seed in proptest::num::u64::ANY, un in proptest::bool::ANY) {
            let mut nest = flatten(&BUILTIN_KERNELS[k].build(size)).unwrap();
            if un {
                if let Ok(u) = unroll(&nest, 2) {
                    nest = u;
                }
            }
            check_kernel(&nest, seed);
        }
    }
}
