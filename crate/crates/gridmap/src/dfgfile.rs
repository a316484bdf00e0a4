//! Graphviz export and a line-based dump of data-flow graphs.
//!
//! Dump lines, one per node or edge:
//!
//! ```text
//! node <id> <opcode> [value] lat=<n> sec=<section> [imm<k>=<v>]… [off=<v>]
//! edge <src> <dst> <operand> <distance>
//! order <src> <dst> <delay> <distance>
//! ```
//!
//! `value` appears only for `const`. Edge ids follow the order of the
//! `edge` and `order` lines.

use std::fmt::Write as _;

use gridmap_core::dfg::{Dfg, DfgEdge, DfgError, DfgNode, EdgeKind, Opcode, Section};

#[derive(Debug, thiserror::Error)]
pub enum DumpError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error(transparent)]
    Graph(#[from] DfgError),
}

fn section_name(s: Section) -> &'static str {
    match s {
        Section::Indices => "indices",
        Section::Address => "address",
        Section::Memory => "memory",
        Section::Compute => "compute",
    }
}

fn node_label(n: &DfgNode) -> String {
    let mut s = format!("{}: {}", n.id, n.opcode);
    for (k, v) in n.imms.iter().enumerate() {
        if let Some(v) = v {
            let _ = write!(s, "\\nin{k}={v}");
        }
    }
    if n.offset != 0 {
        let _ = write!(s, "\\noff={}", n.offset);
    }
    s
}

/// Graphviz digraph. Edges crossing iterations are dashed; order edges are
/// grey.
pub fn to_dot(dfg: &Dfg) -> String {
    let mut s = String::from("digraph dfg {\n  node [shape=box];\n");
    for n in &dfg.nodes {
        let _ = writeln!(s, "  n{} [label=\"{}\", group={}];", n.id, node_label(n), section_name(n.section));
    }
    for e in &dfg.edges {
        let mut attrs = Vec::new();
        match e.kind {
            EdgeKind::Data { operand } => attrs.push(format!("label=\"{operand}\"")),
            EdgeKind::Order { delay } => {
                attrs.push(format!("label=\"+{delay}\""));
                attrs.push("color=gray".into());
            }
        }
        if e.distance >= 1 {
            attrs.push("style=dashed".into());
            attrs.push(format!("taillabel=\"d{}\"", e.distance));
        }
        let _ = writeln!(s, "  n{} -> n{} [{}];", e.src, e.dst, attrs.join(", "));
    }
    s.push_str("}\n");
    s
}

pub fn dump(dfg: &Dfg) -> String {
    let mut s = String::new();
    for n in &dfg.nodes {
        let _ = write!(s, "node {} {}", n.id, n.opcode.mnemonic());
        if let Opcode::Const(v) = n.opcode {
            let _ = write!(s, " {v}");
        }
        let _ = write!(s, " lat={} sec={}", n.latency, section_name(n.section));
        for (k, v) in n.imms.iter().enumerate() {
            if let Some(v) = v {
                let _ = write!(s, " imm{k}={v}");
            }
        }
        if n.offset != 0 {
            let _ = write!(s, " off={}", n.offset);
        }
        s.push('\n');
    }
    for e in &dfg.edges {
        let _ = match e.kind {
            EdgeKind::Data { operand } => writeln!(s, "edge {} {} {} {}", e.src, e.dst, operand, e.distance),
            EdgeKind::Order { delay } => writeln!(s, "order {} {} {} {}", e.src, e.dst, delay, e.distance),
        };
    }
    s
}

/// Reads a [`dump`] back and checks the result is a well-formed graph.
pub fn parse_dump(text: &str) -> Result<Dfg, DumpError> {
    let mut g = Dfg::new();
    for (no, raw) in text.lines().enumerate() {
        let line = no + 1;
        let err = |msg: String| DumpError::Syntax { line, msg };
        let words: Vec<&str> = raw.split_whitespace().collect();
        let num = |i: usize| -> Result<i64, DumpError> {
            let w = words.get(i).ok_or_else(|| err("missing field".into()))?;
            w.parse().map_err(|_| err(format!("`{w}` is not a number")))
        };
        match words.first() {
            None => continue,
            Some(&"node") => {
                let id = num(1)? as usize;
                if id != g.nodes.len() {
                    return Err(err(format!("node ids must be consecutive, expected {}", g.nodes.len())));
                }
                let mn = *words.get(2).ok_or_else(|| err("missing opcode".into()))?;
                let mut rest = 3;
                let value = if mn == "const" {
                    rest = 4;
                    Some(num(3)? as i32)
                } else {
                    None
                };
                let opcode = Opcode::from_mnemonic(mn, value).ok_or_else(|| err(format!("unknown opcode `{mn}`")))?;
                let mut node = DfgNode {
                    id,
                    opcode,
                    latency: 1,
                    section: Section::Compute,
                    imms: vec![None; opcode.arity()],
                    offset: 0,
                };
                for w in &words[rest..] {
                    let (k, v) = w.split_once('=').ok_or_else(|| err(format!("expected key=value, found `{w}`")))?;
                    let int = || v.parse::<i64>().map_err(|_| err(format!("`{v}` is not a number")));
                    match k {
                        "lat" => node.latency = int()? as u32,
                        "off" => node.offset = int()? as i32,
                        "sec" => {
                            node.section = Section::ALL
                                .into_iter()
                                .find(|s| section_name(*s) == v)
                                .ok_or_else(|| err(format!("unknown section `{v}`")))?
                        }
                        _ => {
                            let slot = k
                                .strip_prefix("imm")
                                .and_then(|x| x.parse::<usize>().ok())
                                .filter(|&x| x < node.imms.len())
                                .ok_or_else(|| err(format!("unknown attribute `{k}`")))?;
                            node.imms[slot] = Some(int()? as i32);
                        }
                    }
                }
                g.nodes.push(node);
            }
            Some(&kind @ ("edge" | "order")) => {
                if words.len() != 5 {
                    return Err(err(format!("`{kind}` takes four numbers")));
                }
                let (src, dst, x, distance) = (num(1)? as usize, num(2)? as usize, num(3)?, num(4)? as u32);
                let kind = if kind == "edge" {
                    EdgeKind::Data { operand: x as u8 }
                } else {
                    EdgeKind::Order { delay: x as u32 }
                };
                g.edges.push(DfgEdge { id: g.edges.len(), src, dst, kind, distance });
            }
            Some(w) => return Err(err(format!("unknown record `{w}`"))),
        }
    }
    g.check()?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use gridmap_core::dfg::{build_dfg, dfg_stats};
    use gridmap_core::loopir::{flatten, unroll, BUILTIN_KERNELS};

    #[test]
    fn empty_graph() {
        assert_eq!(to_dot(&Dfg::new()), "digraph dfg {\n  node [shape=box];\n}\n");
        assert_eq!(dump(&Dfg::new()), "");
    }

    #[test]
    fn chain_has_one_solid_edge() {
        let mut g = Dfg::new();
        g.add_node(Opcode::Const(5), 1, Section::Compute);
        g.add_node(Opcode::Add, 1, Section::Compute);
        g.set_imm(1, 1, 2);
        g.add_data_edge(0, 1, 0, 0);
        let dot = to_dot(&g);
        assert_eq!(dot.matches("->").count(), 1);
        assert!(!dot.contains("dashed"));
        assert_eq!(dump(&g), "node 0 const 5 lat=1 sec=compute\nnode 1 add lat=1 sec=compute imm1=2\nedge 0 1 0 0\n");
    }

    #[test]
    fn round_trip_builtins() {
        for b in BUILTIN_KERNELS {
            let f = flatten(&b.build(4)).unwrap();
            for nest in [f.clone(), unroll(&f, 2).unwrap()] {
                let g = build_dfg(&nest).unwrap();
                let back = parse_dump(&dump(&g)).unwrap();
                assert_eq!(back, g);
                assert_eq!(dfg_stats(&back), dfg_stats(&g));
            }
        }
    }

    #[test]
    fn malformed_dump() {
        assert!(matches!(parse_dump("node 0 fma"), Err(DumpError::Syntax { line: 1, .. })));
        assert!(matches!(parse_dump("node 1 add"), Err(DumpError::Syntax { .. })));
        assert!(matches!(parse_dump("node 0 add\nedge 0 5 0 0"), Err(DumpError::Graph(_))));
    }
}
