//! Cycle-level execution of a mapped kernel.
//!
//! The mapping is turned into per-slot configuration: each functional unit
//! knows which node it runs and where its operands come from; each register
//! and port knows its input. Values then move one cycle at a time. Output
//! latches, registers and port latches only hold what was written in the
//! previous cycle, so a route that reads a stale or missing value fails
//! loudly instead of producing plausible numbers.
//!
//! Loads read memory as it is at the start of their cycle. A store fired in
//! cycle `c` with latency `L` commits at the end of cycle `c + L − 1`.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::arch::{ArchSpec, Coord, Direction, Resource};
use crate::dfg::{Dfg, NodeId, Opcode, Operand};
use crate::loopir::MemImage;
use crate::mapper::{validate_mapping, Mapping, Violation};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("mapping is invalid ({} violations)", .0.len())]
    Invalid(Vec<Violation>),
    #[error("node {node} in iteration {iteration} found no value on operand {operand}")]
    MissingOperand { node: NodeId, iteration: u64, operand: usize },
    #[error("division by zero at node {node} in iteration {iteration}")]
    DivisionByZero { node: NodeId, iteration: u64 },
    #[error("node {node} accesses address {address} outside the scratchpad in iteration {iteration}")]
    OutOfBounds { node: NodeId, iteration: u64, address: i64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimOptions {
    pub trace: bool,
    /// Visit PEs from the last to the first within a cycle.
    pub reverse_pe_order: bool,
}

/// One operation firing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Firing {
    pub cycle: u64,
    pub pe: Coord,
    pub node: NodeId,
    pub iteration: u64,
    pub value: i32,
}

impl fmt::Display for Firing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={} pe=({},{}) fire={} out={}", self.cycle, self.pe.row, self.pe.col, self.node, self.value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub final_mem: MemImage,
    pub total_cycles: u64,
    pub firings: u64,
    pub pe_utilization: BTreeMap<Coord, f64>,
    /// Iterations completed per cycle.
    pub throughput: f64,
    pub trace: Vec<Firing>,
}

/// Word-by-word comparison of the output arrays of two images.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemComparison {
    pub matches: u64,
    pub mismatches: u64,
    pub first_mismatch: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("memory images have different layouts")]
pub struct LayoutMismatch;

/// Where a resource or operand takes its value from in the current cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Src {
    Latch(usize),
    Reg(usize, u32),
    /// Latched output of a port, visible at the neighbour.
    Port(usize),
    /// Same-cycle value travelling through a port.
    Wire(usize),
}

struct Config {
    /// Per slot: routing resource, its input, and whether it latches.
    steps: Vec<BTreeMap<Resource, (Src, bool)>>,
    /// Per slot and PE: node issued there.
    fu: Vec<Vec<Option<NodeId>>>,
    /// Per node and operand: immediate, or input with iteration distance.
    operands: Vec<Vec<Result<i32, (Src, u32)>>>,
}

fn port_id(arch: &ArchSpec, pe: Coord, dir: Direction) -> usize {
    arch.index_of(pe) * 4 + dir.index()
}

fn configure(dfg: &Dfg, arch: &ArchSpec, m: &Mapping) -> Config {
    let ii = m.ii as usize;
    let mut steps = vec![BTreeMap::new(); ii];
    let mut fu = vec![vec![None; arch.pe_count()]; ii];
    for (&n, p) in &m.place {
        fu[p.time as usize % ii][arch.index_of(p.pe)] = Some(n);
    }
    let mut from_edge = BTreeMap::new();
    for e in dfg.edges.iter().filter(|e| e.is_data()) {
        let src_pe = m.place[&e.src].pe;
        let end = m.place[&e.dst].time + e.distance * m.ii;
        let route = m.routes.get(&e.id).map(Vec::as_slice).unwrap_or(&[]);
        let mut input = Src::Latch(arch.index_of(src_pe));
        for (i, s) in route.iter().enumerate() {
            let latched = route.get(i + 1).map_or(end, |n| n.cycle) != s.cycle;
            steps[s.cycle as usize % ii].entry(s.res).or_insert((input, latched));
            input = match s.res {
                Resource::Register(p, k) => Src::Reg(arch.index_of(p), k),
                Resource::RoutePort(p, d) if latched => Src::Port(port_id(arch, p, d)),
                Resource::RoutePort(p, d) => Src::Wire(port_id(arch, p, d)),
                Resource::Fu(_) => unreachable!("validated routes hold no FU steps"),
            };
        }
        from_edge.insert(e.id, (input, e.distance));
    }
    let operands = (0..dfg.len())
        .map(|n| {
            dfg.operands(n)
                .into_iter()
                .map(|o| match o {
                    Operand::Imm(v) => Ok(v),
                    Operand::Edge(e) => Err(from_edge[&e]),
                })
                .collect()
        })
        .collect();
    Config { steps, fu, operands }
}

struct State {
    latch: Vec<Option<i32>>,
    regs: BTreeMap<(usize, u32), Option<i32>>,
    ports: Vec<Option<i32>>,
}

impl State {
    fn eval(&self, cfg: &BTreeMap<Resource, (Src, bool)>, arch: &ArchSpec, src: Src) -> Option<i32> {
        match src {
            Src::Latch(p) => self.latch[p],
            Src::Reg(p, k) => self.regs.get(&(p, k)).copied().flatten(),
            Src::Port(i) => self.ports[i],
            Src::Wire(i) => {
                let res = Resource::RoutePort(arch.coord_of(i / 4), Direction::ALL[i % 4]);
                let &(input, _) = cfg.get(&res)?;
                self.eval(cfg, arch, input)
            }
        }
    }
}

/// Runs `iterations` iterations of the mapped kernel starting from `mem`.
pub fn simulate(
    dfg: &Dfg,
    arch: &ArchSpec,
    m: &Mapping,
    mem: &MemImage,
    iterations: u64,
    opts: SimOptions,
) -> Result<SimReport, SimError> {
    let violations = validate_mapping(dfg, arch, m);
    if !violations.is_empty() {
        return Err(SimError::Invalid(violations));
    }
    let cfg = configure(dfg, arch, m);
    let ii = m.ii as u64;
    let total = if iterations == 0 { 0 } else { (iterations - 1) * ii + m.depth(dfg) as u64 };
    let npe = arch.pe_count();
    let mut pe_order: Vec<usize> = (0..npe).collect();
    if opts.reverse_pe_order {
        pe_order.reverse();
    }

    let mut out = mem.clone();
    let mut st = State { latch: vec![None; npe], regs: BTreeMap::new(), ports: vec![None; npe * 4] };
    let mut results: BTreeMap<u64, Vec<(usize, i32)>> = BTreeMap::new();
    let mut stores: Vec<(u64, usize, i32)> = Vec::new();
    let mut trace = Vec::new();
    let mut firings = 0u64;
    let mut args = Vec::with_capacity(3);

    for c in 0..total {
        let slot = (c % ii) as usize;
        let routing = &cfg.steps[slot];
        st.latch.iter_mut().for_each(|l| *l = None);
        for (p, v) in results.remove(&c).unwrap_or_default() {
            st.latch[p] = Some(v);
        }

        let mut regs = BTreeMap::new();
        let mut ports = vec![None; npe * 4];
        for (res, &(input, latched)) in routing {
            let v = st.eval(routing, arch, input);
            match *res {
                Resource::Register(p, k) => {
                    regs.insert((arch.index_of(p), k), v);
                }
                Resource::RoutePort(p, d) if latched => ports[port_id(arch, p, d)] = v,
                _ => {}
            }
        }

        for &pi in &pe_order {
            let Some(n) = cfg.fu[slot][pi] else { continue };
            let t = m.place[&n].time as u64;
            if c < t || (c - t) / ii >= iterations {
                continue;
            }
            let q = (c - t) / ii;
            args.clear();
            for (i, o) in cfg.operands[n].iter().enumerate() {
                args.push(match *o {
                    Ok(v) => v,
                    Err((_, d)) if d as u64 > q => 0,
                    Err((src, _)) => st.eval(routing, arch, src).ok_or(SimError::MissingOperand {
                        node: n,
                        iteration: q,
                        operand: i,
                    })?,
                });
            }
            let node = &dfg.nodes[n];
            let value = match node.opcode {
                Opcode::Load | Opcode::Store => {
                    let address = args[0] as i64 + node.offset as i64;
                    if address < 0 || address >= out.words.len() as i64 {
                        return Err(SimError::OutOfBounds { node: n, iteration: q, address });
                    }
                    if node.opcode == Opcode::Load {
                        out.words[address as usize]
                    } else {
                        stores.push((c + node.latency as u64 - 1, address as usize, args[1]));
                        0
                    }
                }
                op => op.eval(&args).ok_or(SimError::DivisionByZero { node: n, iteration: q })?,
            };
            results.entry(c + node.latency as u64).or_default().push((pi, value));
            firings += 1;
            if opts.trace {
                trace.push(Firing { cycle: c, pe: arch.coord_of(pi), node: n, iteration: q, value });
            }
        }

        stores.retain(|&(due, addr, v)| {
            if due == c {
                out.words[addr] = v;
                false
            } else {
                true
            }
        });
        st.regs = regs;
        st.ports = ports;
    }
    Ok(SimReport {
        final_mem: out,
        total_cycles: total,
        firings,
        pe_utilization: utilization(arch, m),
        throughput: if total == 0 { 0.0 } else { iterations as f64 / total as f64 },
        trace,
    })
}

/// Compares the words of output arrays; everything else is ignored.
pub fn compare_mem(actual: &MemImage, reference: &MemImage) -> Result<MemComparison, LayoutMismatch> {
    if actual.layout != reference.layout || actual.words.len() != reference.words.len() {
        return Err(LayoutMismatch);
    }
    let mut cmp = MemComparison::default();
    for r in reference.layout.regions.iter().filter(|r| r.output) {
        for a in r.base..r.base + r.len() {
            if actual.words[a as usize] == reference.words[a as usize] {
                cmp.matches += 1;
            } else {
                cmp.mismatches += 1;
                cmp.first_mismatch.get_or_insert(a);
            }
        }
    }
    Ok(cmp)
}

/// Fraction of configuration slots in which each enabled PE issues an
/// operation.
pub fn utilization(arch: &ArchSpec, m: &Mapping) -> BTreeMap<Coord, f64> {
    let per_pe = m.ops_per_pe();
    arch.enabled_pes().map(|c| (c, per_pe.get(&c).copied().unwrap_or(0) as f64 / m.ii as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dfg::build_dfg;
    use crate::loopir::{flatten, gen_data, iteration_count, reference_exec, unroll, BUILTIN_KERNELS};
    use crate::mapper::{map_backtrack, map_heuristic, Placement, DEFAULT_MAX_II};

    fn end_to_end(arch: &ArchSpec, unroll_by: Option<u32>) {
        for k in BUILTIN_KERNELS {
            let mut nest = flatten(&k.build(4)).unwrap();
            if let Some(f) = unroll_by {
                nest = unroll(&nest, f).unwrap();
            }
            let g = build_dfg(&nest).unwrap();
            let mem = gen_data(&nest, 7, arch.spm.size_words).unwrap();
            let want = reference_exec(&nest, &mem).unwrap();
            let iters = iteration_count(&nest).unwrap();
            let m = map_heuristic(&g, arch, DEFAULT_MAX_II).unwrap();
            let fwd = simulate(&g, arch, &m, &mem, iters, SimOptions::default()).unwrap();
            let cmp = compare_mem(&fwd.final_mem, &want).unwrap();
            assert_eq!((cmp.mismatches, cmp.first_mismatch), (0, None), "{}", k.name());
            assert!(cmp.matches > 0);
            let rev = simulate(&g, arch, &m, &mem, iters, SimOptions { reverse_pe_order: true, ..Default::default() })
                .unwrap();
            assert_eq!(fwd.final_mem, rev.final_mem);
            assert_eq!(fwd.total_cycles, (iters - 1) * m.ii as u64 + m.depth(&g) as u64);
        }
    }

    #[test]
    fn kernels_match_reference_on_mesh() {
        end_to_end(&ArchSpec::mesh(4, 4), None);
        end_to_end(&ArchSpec::mesh(4, 4), Some(2));
    }

    #[test]
    fn kernels_match_reference_on_hycube() {
        end_to_end(&ArchSpec::hycube(4, 4, 3), None);
    }

    #[test]
    fn backtrack_mapping_also_matches() {
        let arch = ArchSpec::mesh(3, 3);
        let nest = flatten(&crate::loopir::builtin_kernel("gemm", 3).unwrap()).unwrap();
        let g = build_dfg(&nest).unwrap();
        let mem = gen_data(&nest, 1, arch.spm.size_words).unwrap();
        let m = map_backtrack(&g, &arch, DEFAULT_MAX_II).unwrap();
        let r = simulate(&g, &arch, &m, &mem, iteration_count(&nest).unwrap(), SimOptions::default()).unwrap();
        assert_eq!(compare_mem(&r.final_mem, &reference_exec(&nest, &mem).unwrap()).unwrap().mismatches, 0);
    }

    #[test]
    fn trace_lines() {
        let mut g = Dfg::new();
        let a = g.add_node(Opcode::Add, 1, crate::dfg::Section::Compute);
        g.set_imm(a, 0, 2);
        g.set_imm(a, 1, 3);
        let arch = ArchSpec::mesh(1, 1);
        let mut m = Mapping::new(1);
        m.place.insert(a, Placement { pe: Coord::new(0, 0), time: 0 });
        let mem = MemImage::zeroed(Default::default(), 1);
        let r = simulate(&g, &arch, &m, &mem, 2, SimOptions { trace: true, ..Default::default() }).unwrap();
        let lines: Vec<_> = r.trace.iter().map(alloc::string::ToString::to_string).collect();
        assert_eq!(lines, ["t=0 pe=(0,0) fire=0 out=5", "t=1 pe=(0,0) fire=0 out=5"]);
        assert_eq!((r.total_cycles, r.firings), (2, 2));
    }

    #[test]
    fn invalid_mapping_is_rejected() {
        let g = build_dfg(&crate::loopir::builtin_kernel("mvt", 2).unwrap()).unwrap();
        let m = Mapping::new(3);
        let mem = MemImage::zeroed(Default::default(), 1);
        assert!(matches!(
            simulate(&g, &ArchSpec::mesh(2, 2), &m, &mem, 1, SimOptions::default()),
            Err(SimError::Invalid(_))
        ));
    }

    #[test]
    fn compare_counts_output_words_only() {
        let nest = crate::loopir::builtin_kernel("mvt", 2).unwrap();
        let mem = gen_data(&nest, 3, 64).unwrap();
        let want = reference_exec(&nest, &mem).unwrap();
        let mut got = want.clone();
        let outputs: u64 = want.layout.regions.iter().filter(|r| r.output).map(|r| r.len() as u64).sum();
        assert_eq!(
            compare_mem(&got, &want).unwrap(),
            MemComparison { matches: outputs, mismatches: 0, first_mismatch: None }
        );
        let out = want.layout.regions.iter().find(|r| r.output).unwrap().base;
        let input = want.layout.regions.iter().find(|r| !r.output).unwrap().base;
        got.words[out as usize] ^= 1;
        got.words[input as usize] ^= 1;
        let c = compare_mem(&got, &want).unwrap();
        assert_eq!((c.mismatches, c.first_mismatch), (1, Some(out)));
        let other = MemImage::zeroed(Default::default(), 64);
        assert_eq!(compare_mem(&other, &want), Err(LayoutMismatch));
    }

    #[test]
    fn zero_iterations_leave_memory() {
        let nest = crate::loopir::builtin_kernel("gemm", 2).unwrap();
        let g = build_dfg(&nest).unwrap();
        let arch = ArchSpec::mesh(3, 3);
        let m = map_heuristic(&g, &arch, DEFAULT_MAX_II).unwrap();
        let mem = gen_data(&nest, 0, 64).unwrap();
        let r = simulate(&g, &arch, &m, &mem, 0, SimOptions::default()).unwrap();
        assert_eq!((r.total_cycles, &r.final_mem), (0, &mem));
    }

    #[test]
    fn utilization_counts_slots() {
        let arch = ArchSpec::mesh(1, 2);
        let mut m = Mapping::new(2);
        m.place.insert(0, Placement { pe: Coord::new(0, 0), time: 0 });
        let u = utilization(&arch, &m);
        assert_eq!(u[&Coord::new(0, 0)], 0.5);
        assert_eq!(u[&Coord::new(0, 1)], 0.0);
    }
}
