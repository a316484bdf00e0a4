//! Data-flow graph of one loop iteration.
//!
//! Nodes are single-cycle word operations (memory operations take the SPM
//! latency). Every operand slot of a node is either an immediate or driven by
//! exactly one data edge. Edges carry an iteration distance; distance-0 edges
//! form a DAG. Order edges carry no value and only sequence memory accesses.

mod build;
mod exec;

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::arch::OpKind;
use crate::loopir::Rel;

pub use build::{build_dfg, build_dfg_with, DfgOptions};
pub use exec::{execute, DfgExecError};

pub type NodeId = usize;
pub type EdgeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Opcode {
    Add,
    Sub,
    Mul,
    Div,
    /// 1 if the relation holds, else 0.
    Cmp(Rel),
    /// `Sel(p, a, b)` is `a` when `p != 0`, else `b`.
    Sel,
    /// Operand 0 is the address; the node's offset is added to it.
    Load,
    /// Operand 0 is the address, operand 1 the value.
    Store,
    Const(i32),
}

impl Opcode {
    pub fn kind(self) -> OpKind {
        match self {
            Opcode::Add => OpKind::Add,
            Opcode::Sub => OpKind::Sub,
            Opcode::Mul => OpKind::Mul,
            Opcode::Div => OpKind::Div,
            Opcode::Cmp(_) => OpKind::Cmp,
            Opcode::Sel => OpKind::Sel,
            Opcode::Load => OpKind::Load,
            Opcode::Store => OpKind::Store,
            Opcode::Const(_) => OpKind::Const,
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Opcode::Const(_) => 0,
            Opcode::Load => 1,
            Opcode::Sel => 3,
            _ => 2,
        }
    }

    pub fn is_memory(self) -> bool {
        matches!(self, Opcode::Load | Opcode::Store)
    }

    pub fn is_commutative(self) -> bool {
        matches!(self, Opcode::Add | Opcode::Mul | Opcode::Cmp(Rel::Eq) | Opcode::Cmp(Rel::Ne))
    }

    /// Value of a non-memory operation; `None` on division by zero.
    pub fn eval(self, args: &[i32]) -> Option<i32> {
        Some(match self {
            Opcode::Add => args[0].wrapping_add(args[1]),
            Opcode::Sub => args[0].wrapping_sub(args[1]),
            Opcode::Mul => args[0].wrapping_mul(args[1]),
            Opcode::Div => {
                if args[1] == 0 {
                    return None;
                }
                args[0].wrapping_div(args[1])
            }
            Opcode::Cmp(r) => r.holds(args[0], args[1]) as i32,
            Opcode::Sel => {
                if args[0] != 0 {
                    args[1]
                } else {
                    args[2]
                }
            }
            Opcode::Const(v) => v,
            Opcode::Load | Opcode::Store => 0,
        })
    }

    /// Mnemonic used by the text dump, e.g. `add`, `cmp.lt`, `const`.
    pub fn mnemonic(self) -> String {
        match self {
            Opcode::Cmp(r) => alloc::format!("cmp.{}", rel_mnemonic(r)),
            other => String::from(other.kind().name()),
        }
    }

    pub fn from_mnemonic(s: &str, value: Option<i32>) -> Option<Opcode> {
        if let Some(r) = s.strip_prefix("cmp.") {
            return Rel::ALL.iter().copied().find(|x| rel_mnemonic(*x) == r).map(Opcode::Cmp);
        }
        Some(match OpKind::from_name(s)? {
            OpKind::Add => Opcode::Add,
            OpKind::Sub => Opcode::Sub,
            OpKind::Mul => Opcode::Mul,
            OpKind::Div => Opcode::Div,
            OpKind::Sel => Opcode::Sel,
            OpKind::Load => Opcode::Load,
            OpKind::Store => Opcode::Store,
            OpKind::Const => Opcode::Const(value?),
            OpKind::Cmp => return None,
        })
    }
}

fn rel_mnemonic(r: Rel) -> &'static str {
    match r {
        Rel::Eq => "eq",
        Rel::Ne => "ne",
        Rel::Lt => "lt",
        Rel::Le => "le",
        Rel::Gt => "gt",
        Rel::Ge => "ge",
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Opcode::Const(v) => write!(f, "const {v}"),
            other => f.write_str(&other.mnemonic()),
        }
    }
}

/// Which part of the iteration a node implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Section {
    Indices,
    Address,
    Memory,
    Compute,
}

impl Section {
    pub const ALL: [Section; 4] = [Section::Indices, Section::Address, Section::Memory, Section::Compute];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DfgNode {
    pub id: NodeId,
    pub opcode: Opcode,
    pub latency: u32,
    pub section: Section,
    /// Immediate per operand slot; `None` where a data edge drives the slot.
    pub imms: Vec<Option<i32>>,
    /// Constant added to the address operand of a Load or Store.
    pub offset: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    /// Carries the source's value into operand slot `operand` of the target.
    Data { operand: u8 },
    /// The target may start no earlier than `delay` cycles after the source.
    Order { delay: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DfgEdge {
    pub id: EdgeId,
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: EdgeKind,
    /// Iteration distance: the target of iteration `q` uses iteration `q - distance`.
    pub distance: u32,
}

impl DfgEdge {
    pub fn is_data(&self) -> bool {
        matches!(self.kind, EdgeKind::Data { .. })
    }

    pub fn operand(&self) -> Option<usize> {
        match self.kind {
            EdgeKind::Data { operand } => Some(operand as usize),
            EdgeKind::Order { .. } => None,
        }
    }
}

/// Where an operand slot gets its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operand {
    Imm(i32),
    Edge(EdgeId),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DfgError {
    #[error(transparent)]
    Loop(#[from] crate::loopir::LoopError),
    #[error("loop `{0}` has non-constant bounds; flatten the nest first")]
    NonRectangular(String),
    #[error("constant division by zero in the loop body")]
    ConstDivByZero,
    #[error("edge {0} refers to a missing node")]
    DanglingEdge(EdgeId),
    #[error("operand {operand} of node {node} has {drivers} drivers")]
    OperandDrivers { node: NodeId, operand: usize, drivers: usize },
    #[error("node {node} has operand {operand} beyond its arity")]
    BadOperand { node: NodeId, operand: usize },
    #[error("store node {0} has consumers")]
    StoreConsumed(NodeId),
    #[error("node {0} has zero latency")]
    ZeroLatency(NodeId),
    #[error("distance-0 edges form a cycle through node {0}")]
    ZeroDistanceCycle(NodeId),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Dfg {
    pub nodes: Vec<DfgNode>,
    pub edges: Vec<DfgEdge>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DfgStats {
    pub op_count: usize,
    pub histogram: BTreeMap<OpKind, usize>,
    pub mem_op_count: usize,
    pub sections: BTreeMap<Section, usize>,
}

/// Operation counts of `dfg`.
pub fn dfg_stats(dfg: &Dfg) -> DfgStats {
    let mut s = DfgStats { op_count: dfg.nodes.len(), ..DfgStats::default() };
    for n in &dfg.nodes {
        *s.histogram.entry(n.opcode.kind()).or_default() += 1;
        *s.sections.entry(n.section).or_default() += 1;
        if n.opcode.is_memory() {
            s.mem_op_count += 1;
        }
    }
    s
}

impl Dfg {
    pub fn new() -> Dfg {
        Dfg::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn add_node(&mut self, opcode: Opcode, latency: u32, section: Section) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(DfgNode { id, opcode, latency, section, imms: vec![Some(0); opcode.arity()], offset: 0 });
        id
    }

    pub fn set_imm(&mut self, node: NodeId, operand: usize, value: i32) {
        self.nodes[node].imms[operand] = Some(value);
    }

    pub fn add_data_edge(&mut self, src: NodeId, dst: NodeId, operand: usize, distance: u32) -> EdgeId {
        if let Some(slot) = self.nodes.get_mut(dst).and_then(|n| n.imms.get_mut(operand)) {
            *slot = None;
        }
        self.push_edge(src, dst, EdgeKind::Data { operand: operand as u8 }, distance)
    }

    pub fn add_order_edge(&mut self, src: NodeId, dst: NodeId, delay: u32, distance: u32) -> EdgeId {
        self.push_edge(src, dst, EdgeKind::Order { delay }, distance)
    }

    fn push_edge(&mut self, src: NodeId, dst: NodeId, kind: EdgeKind, distance: u32) -> EdgeId {
        let id = self.edges.len();
        self.edges.push(DfgEdge { id, src, dst, kind, distance });
        id
    }

    pub fn in_edges(&self, n: NodeId) -> impl Iterator<Item = &DfgEdge> {
        self.edges.iter().filter(move |e| e.dst == n)
    }

    pub fn out_edges(&self, n: NodeId) -> impl Iterator<Item = &DfgEdge> {
        self.edges.iter().filter(move |e| e.src == n)
    }

    /// Incoming and outgoing edge ids per node.
    pub fn adjacency(&self) -> (Vec<Vec<EdgeId>>, Vec<Vec<EdgeId>>) {
        let mut ins = vec![Vec::new(); self.nodes.len()];
        let mut outs = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            ins[e.dst].push(e.id);
            outs[e.src].push(e.id);
        }
        (ins, outs)
    }

    /// Source of each operand slot of `n`.
    pub fn operands(&self, n: NodeId) -> Vec<Operand> {
        let node = &self.nodes[n];
        let mut ops: Vec<Operand> = node.imms.iter().map(|v| Operand::Imm(v.unwrap_or(0))).collect();
        for e in self.in_edges(n) {
            if let Some(k) = e.operand() {
                if k < ops.len() {
                    ops[k] = Operand::Edge(e.id);
                }
            }
        }
        ops
    }

    /// Minimum number of cycles between the source and target start times,
    /// before routing: the producer latency for data edges, the delay for
    /// order edges.
    pub fn edge_delay(&self, e: &DfgEdge) -> u32 {
        match e.kind {
            EdgeKind::Data { .. } => self.nodes[e.src].latency,
            EdgeKind::Order { delay } => delay,
        }
    }

    pub fn check(&self) -> Result<(), DfgError> {
        let mut drivers: Vec<Vec<usize>> = self.nodes.iter().map(|n| vec![0; n.imms.len()]).collect();
        for e in &self.edges {
            if e.src >= self.nodes.len() || e.dst >= self.nodes.len() {
                return Err(DfgError::DanglingEdge(e.id));
            }
            if let Some(k) = e.operand() {
                if k >= drivers[e.dst].len() {
                    return Err(DfgError::BadOperand { node: e.dst, operand: k });
                }
                drivers[e.dst][k] += 1;
                if self.nodes[e.src].opcode == Opcode::Store {
                    return Err(DfgError::StoreConsumed(e.src));
                }
            }
        }
        for n in &self.nodes {
            if n.latency == 0 {
                return Err(DfgError::ZeroLatency(n.id));
            }
            for (k, &d) in drivers[n.id].iter().enumerate() {
                let expected = usize::from(n.imms[k].is_none());
                if d != expected {
                    return Err(DfgError::OperandDrivers { node: n.id, operand: k, drivers: d });
                }
            }
        }
        self.topo_order().map(|_| ())
    }

    /// Topological order of the distance-0 subgraph, lowest id first among
    /// ready nodes.
    pub fn topo_order(&self) -> Result<Vec<NodeId>, DfgError> {
        let mut indeg = vec![0usize; self.nodes.len()];
        let mut succ: Vec<Vec<NodeId>> = vec![Vec::new(); self.nodes.len()];
        for e in self.edges.iter().filter(|e| e.distance == 0) {
            indeg[e.dst] += 1;
            succ[e.src].push(e.dst);
        }
        let mut ready: BinaryHeap<Reverse<NodeId>> =
            (0..self.nodes.len()).filter(|&n| indeg[n] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(Reverse(n)) = ready.pop() {
            order.push(n);
            for &m in &succ[n] {
                indeg[m] -= 1;
                if indeg[m] == 0 {
                    ready.push(Reverse(m));
                }
            }
        }
        if order.len() != self.nodes.len() {
            let stuck = (0..self.nodes.len()).find(|&n| indeg[n] > 0).unwrap_or(0);
            return Err(DfgError::ZeroDistanceCycle(stuck));
        }
        Ok(order)
    }

    /// Elementary cycles over data edges with at most `max_len` nodes, each
    /// reported once starting from its smallest node id.
    pub fn data_cycles(&self, max_len: usize) -> Vec<Vec<NodeId>> {
        let mut succ: Vec<Vec<NodeId>> = vec![Vec::new(); self.nodes.len()];
        for e in self.edges.iter().filter(|e| e.is_data()) {
            if !succ[e.src].contains(&e.dst) {
                succ[e.src].push(e.dst);
            }
        }
        let mut out = Vec::new();
        for start in 0..self.nodes.len() {
            let mut path = vec![start];
            cycles_from(start, &succ, max_len, &mut path, &mut out);
        }
        out
    }
}

fn cycles_from(
    start: NodeId,
    succ: &[Vec<NodeId>],
    max_len: usize,
    path: &mut Vec<NodeId>,
    out: &mut Vec<Vec<NodeId>>,
) {
    let last = *path.last().expect("nonempty path");
    for &n in &succ[last] {
        if n == start {
            out.push(path.clone());
        } else if n > start && !path.contains(&n) && path.len() < max_len {
            path.push(n);
            cycles_from(start, succ, max_len, path, out);
            path.pop();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> Dfg {
        let mut g = Dfg::new();
        let a = g.add_node(Opcode::Add, 1, Section::Compute);
        let b = g.add_node(Opcode::Mul, 1, Section::Compute);
        g.add_data_edge(a, b, 0, 0);
        g
    }

    #[test]
    fn operands_mix_imms_and_edges() {
        let g = chain();
        assert_eq!(g.operands(1), vec![Operand::Edge(0), Operand::Imm(0)]);
        assert_eq!(g.operands(0), vec![Operand::Imm(0), Operand::Imm(0)]);
        g.check().unwrap();
    }

    #[test]
    fn detects_zero_distance_cycle() {
        let mut g = chain();
        g.add_data_edge(1, 0, 0, 0);
        assert!(matches!(g.check(), Err(DfgError::ZeroDistanceCycle(_))));
        g.edges[1].distance = 1;
        g.check().unwrap();
    }

    #[test]
    fn detects_double_driver() {
        let mut g = chain();
        g.add_data_edge(0, 1, 0, 1);
        assert!(matches!(g.check(), Err(DfgError::OperandDrivers { node: 1, operand: 0, drivers: 2 })));
    }

    #[test]
    fn store_has_no_consumers() {
        let mut g = Dfg::new();
        let s = g.add_node(Opcode::Store, 1, Section::Memory);
        let a = g.add_node(Opcode::Add, 1, Section::Compute);
        g.add_data_edge(s, a, 0, 0);
        assert_eq!(g.check(), Err(DfgError::StoreConsumed(s)));
    }

    #[test]
    fn empty_stats() {
        let s = dfg_stats(&Dfg::new());
        assert_eq!(s.op_count, 0);
        assert_eq!(s.mem_op_count, 0);
        assert!(s.histogram.is_empty());
    }

    #[test]
    fn opcode_eval() {
        assert_eq!(Opcode::Sel.eval(&[0, 4, 5]), Some(5));
        assert_eq!(Opcode::Sel.eval(&[-2, 4, 5]), Some(4));
        assert_eq!(Opcode::Cmp(Rel::Lt).eval(&[1, 2]), Some(1));
        assert_eq!(Opcode::Div.eval(&[7, 0]), None);
        assert_eq!(Opcode::Div.eval(&[-7, 2]), Some(-3));
        assert_eq!(Opcode::Add.eval(&[i32::MAX, 1]), Some(i32::MIN));
    }

    #[test]
    fn mnemonic_round_trip() {
        for op in [Opcode::Add, Opcode::Cmp(Rel::Ge), Opcode::Sel, Opcode::Load, Opcode::Store, Opcode::Const(-3)] {
            let v = if let Opcode::Const(v) = op { Some(v) } else { None };
            assert_eq!(Opcode::from_mnemonic(&op.mnemonic(), v), Some(op));
        }
    }

    #[test]
    fn finds_cycles_once() {
        let mut g = Dfg::new();
        for _ in 0..3 {
            g.add_node(Opcode::Add, 1, Section::Indices);
        }
        g.add_data_edge(0, 1, 0, 0);
        g.add_data_edge(1, 2, 0, 0);
        g.add_data_edge(2, 0, 0, 1);
        g.add_data_edge(1, 0, 1, 1);
        let mut c = g.data_cycles(5);
        c.sort();
        assert_eq!(c, vec![vec![0, 1], vec![0, 1, 2]]);
    }
}
