//! Sequential symbolic execution of a data-flow graph, iteration by
//! iteration. Independent of any mapping; used to check graph construction.

use alloc::vec;
use alloc::vec::Vec;

use super::{Dfg, DfgError, NodeId, Opcode, Operand};
use crate::loopir::MemImage;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DfgExecError {
    #[error("division by zero at node {node} in iteration {iteration}")]
    DivisionByZero { node: NodeId, iteration: u64 },
    #[error("node {node} accesses address {address} outside the scratchpad in iteration {iteration}")]
    OutOfBounds { node: NodeId, iteration: u64, address: i64 },
    #[error(transparent)]
    Graph(#[from] DfgError),
}

/// Run `iterations` iterations in topological order over `mem`. Values read
/// across iterations before the first one are 0.
pub fn execute(dfg: &Dfg, mem: &MemImage, iterations: u64) -> Result<MemImage, DfgExecError> {
    let order = dfg.topo_order()?;
    let operands: Vec<Vec<Operand>> = (0..dfg.len()).map(|n| dfg.operands(n)).collect();
    let depth = dfg.edges.iter().map(|e| e.distance as usize).max().unwrap_or(0) + 1;
    let mut hist = vec![vec![0i32; dfg.len()]; depth];
    let mut out = mem.clone();
    let mut args = Vec::with_capacity(3);
    for q in 0..iterations {
        let cur = (q % depth as u64) as usize;
        for &n in &order {
            args.clear();
            for op in &operands[n] {
                args.push(match *op {
                    Operand::Imm(v) => v,
                    Operand::Edge(e) => {
                        let e = &dfg.edges[e];
                        let d = e.distance as u64;
                        if d > q {
                            0
                        } else {
                            hist[((q - d) % depth as u64) as usize][e.src]
                        }
                    }
                });
            }
            let node = &dfg.nodes[n];
            let value = match node.opcode {
                Opcode::Load | Opcode::Store => {
                    let address = args[0] as i64 + node.offset as i64;
                    if address < 0 || address >= out.words.len() as i64 {
                        return Err(DfgExecError::OutOfBounds { node: n, iteration: q, address });
                    }
                    if node.opcode == Opcode::Load {
                        out.words[address as usize]
                    } else {
                        out.words[address as usize] = args[1];
                        0
                    }
                }
                op => op.eval(&args).ok_or(DfgExecError::DivisionByZero { node: n, iteration: q })?,
            };
            hist[cur][n] = value;
        }
    }
    Ok(out)
}
