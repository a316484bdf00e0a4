//! Independent checker for complete mappings.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use super::occupancy::latched_flags;
use super::{Mapping, RouteStep};
use crate::arch::{ArchSpec, Coord, OpKind, Resource};
use crate::dfg::{Dfg, EdgeId, EdgeKind, NodeId};
use crate::sched::hops_per_cycle;

/// Why a route does not carry its value from producer to consumer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteFault {
    /// Step cycle differs from the cycle the value is available in.
    Cycle { expected: u32, found: u32 },
    /// Step resource is not at the PE currently holding the value.
    WrongPe { expected: Coord },
    /// Port leads off the grid or to a disabled PE.
    NoLink,
    /// Functional units cannot carry routed values.
    FuStep,
    /// Same-cycle traversal without a multi-hop interconnect.
    Bypass,
    /// Too many link traversals in one cycle.
    HopBudget,
    /// Register index beyond the PE's capacity.
    RegisterIndex { capacity: u32 },
    /// Value ends somewhere other than the consumer during its read cycle.
    Destination { pe: Coord, cycle: u32 },
}

/// A broken mapping constraint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    ZeroIi,
    /// II exceeds the configuration memory depth.
    ConfigDepth {
        ii: u32,
        depth: u32,
    },
    Unplaced {
        node: NodeId,
    },
    UnknownNode {
        node: NodeId,
    },
    /// PE missing, disabled, or unable to execute the node's operation.
    Capability {
        node: NodeId,
        pe: Coord,
        op: OpKind,
    },
    /// Two nodes issue on the same functional unit in the same slot.
    FuConflict {
        pe: Coord,
        slot: u32,
        nodes: (NodeId, NodeId),
    },
    /// Two nodes write the same output latch in the same slot.
    OutputConflict {
        pe: Coord,
        slot: u32,
        nodes: (NodeId, NodeId),
    },
    /// Consumer starts before the producer's value can exist.
    Timing {
        edge: EdgeId,
        ready: u64,
        needed: u64,
    },
    /// Memory or ordering dependence violated.
    OrderTiming {
        edge: EdgeId,
        earliest: u64,
        start: u64,
    },
    Route {
        edge: EdgeId,
        step: usize,
        fault: RouteFault,
    },
    /// Route given for an order edge or a non-existent edge.
    StrayRoute {
        edge: EdgeId,
    },
    /// Two different values claim one routing resource in the same slot.
    RouteConflict {
        res: Resource,
        slot: u32,
        edges: (EdgeId, EdgeId),
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ZeroIi => write!(f, "initiation interval is zero"),
            Violation::ConfigDepth { ii, depth } => write!(f, "II {ii} exceeds configuration depth {depth}"),
            Violation::Unplaced { node } => write!(f, "node {node} is not placed"),
            Violation::UnknownNode { node } => write!(f, "placement for unknown node {node}"),
            Violation::Capability { node, pe, op } => {
                write!(f, "node {node} ({}) cannot execute on PE {pe}", op.name())
            }
            Violation::FuConflict { pe, slot, nodes } => {
                write!(f, "FU{pe} slot {slot}: nodes {} and {} overlap", nodes.0, nodes.1)
            }
            Violation::OutputConflict { pe, slot, nodes } => {
                write!(f, "output of PE {pe} slot {slot}: nodes {} and {} overlap", nodes.0, nodes.1)
            }
            Violation::Timing { edge, ready, needed } => {
                write!(f, "edge {edge}: value ready at {ready} but consumed at {needed}")
            }
            Violation::OrderTiming { edge, earliest, start } => {
                write!(f, "edge {edge}: consumer may start at {earliest} but starts at {start}")
            }
            Violation::Route { edge, step, fault } => write!(f, "edge {edge} step {step}: {fault:?}"),
            Violation::StrayRoute { edge } => write!(f, "route given for edge {edge} which carries no value"),
            Violation::RouteConflict { res, slot, edges } => {
                write!(f, "{res} slot {slot}: edges {} and {} carry different values", edges.0, edges.1)
            }
        }
    }
}

struct Claim {
    value: NodeId,
    cycle: u32,
    latched: bool,
    edge: EdgeId,
}

/// Every broken constraint of `m`; empty when the mapping is legal.
pub fn validate_mapping(dfg: &Dfg, arch: &ArchSpec, m: &Mapping) -> Vec<Violation> {
    let mut out = Vec::new();
    if m.ii == 0 {
        out.push(Violation::ZeroIi);
        return out;
    }
    let ii = m.ii;
    let depth = arch.max_ii();
    if ii > depth {
        out.push(Violation::ConfigDepth { ii, depth });
    }
    for &n in m.place.keys() {
        if n >= dfg.len() {
            out.push(Violation::UnknownNode { node: n });
        }
    }

    let mut fu: BTreeMap<(Coord, u32), NodeId> = BTreeMap::new();
    let mut latch: BTreeMap<(Coord, u32), NodeId> = BTreeMap::new();
    for node in &dfg.nodes {
        let Some(p) = m.place.get(&node.id) else {
            out.push(Violation::Unplaced { node: node.id });
            continue;
        };
        let op = node.opcode.kind();
        if !arch.contains(p.pe) || !arch.can_execute(p.pe, op) {
            out.push(Violation::Capability { node: node.id, pe: p.pe, op });
            continue;
        }
        let slot = p.time % ii;
        if let Some(&other) = fu.get(&(p.pe, slot)) {
            out.push(Violation::FuConflict { pe: p.pe, slot, nodes: (other, node.id) });
        } else {
            fu.insert((p.pe, slot), node.id);
        }
        let out_slot = (p.time + node.latency) % ii;
        if let Some(&other) = latch.get(&(p.pe, out_slot)) {
            out.push(Violation::OutputConflict { pe: p.pe, slot: out_slot, nodes: (other, node.id) });
        } else {
            latch.insert((p.pe, out_slot), node.id);
        }
    }

    for &e in m.routes.keys() {
        if dfg.edges.get(e).is_none_or(|x| !x.is_data()) {
            out.push(Violation::StrayRoute { edge: e });
        }
    }

    let empty = Vec::new();
    let mut claims: BTreeMap<(Resource, u32), Claim> = BTreeMap::new();
    for e in &dfg.edges {
        let (Some(ps), Some(pd)) = (m.place.get(&e.src), m.place.get(&e.dst)) else { continue };
        let needed = pd.time as u64 + e.distance as u64 * ii as u64;
        match e.kind {
            EdgeKind::Order { delay } => {
                let earliest = ps.time as u64 + delay as u64;
                if needed < earliest {
                    out.push(Violation::OrderTiming { edge: e.id, earliest, start: needed });
                }
            }
            EdgeKind::Data { .. } => {
                let ready = ps.time as u64 + dfg.nodes[e.src].latency as u64;
                if needed < ready {
                    out.push(Violation::Timing { edge: e.id, ready, needed });
                    continue;
                }
                let steps = m.routes.get(&e.id).unwrap_or(&empty);
                if let Err((step, fault)) = walk(arch, steps, ps.pe, ready as u32, pd.pe, needed as u32) {
                    out.push(Violation::Route { edge: e.id, step, fault });
                    continue;
                }
                for (s, latched) in steps.iter().zip(latched_flags(steps, needed as u32)) {
                    let key = (s.res, s.cycle % ii);
                    let latched = latched || !matches!(s.res, Resource::RoutePort(..));
                    match claims.get(&key) {
                        Some(c) if (c.value, c.cycle, c.latched) != (e.src, s.cycle, latched) => {
                            out.push(Violation::RouteConflict { res: s.res, slot: key.1, edges: (c.edge, e.id) });
                        }
                        Some(_) => {}
                        None => {
                            claims.insert(key, Claim { value: e.src, cycle: s.cycle, latched, edge: e.id });
                        }
                    }
                }
            }
        }
    }
    out
}

/// Follows a route from `(from, start)` and checks it lands at `(to, end)`.
fn walk(
    arch: &ArchSpec,
    steps: &[RouteStep],
    from: Coord,
    start: u32,
    to: Coord,
    end: u32,
) -> Result<(), (usize, RouteFault)> {
    let hpc = hops_per_cycle(arch);
    let bypass = arch.interconnect.bypass_hops() > 0;
    let (mut pe, mut cycle, mut hops) = (from, start, 0u32);
    for (i, s) in steps.iter().enumerate() {
        if s.cycle != cycle {
            return Err((i, RouteFault::Cycle { expected: cycle, found: s.cycle }));
        }
        if s.res.pe() != pe {
            return Err((i, RouteFault::WrongPe { expected: pe }));
        }
        match s.res {
            Resource::Fu(_) => return Err((i, RouteFault::FuStep)),
            Resource::Register(_, k) => {
                if let Some(capacity) = arch.register_capacity(pe) {
                    if k >= capacity {
                        return Err((i, RouteFault::RegisterIndex { capacity }));
                    }
                }
                cycle += 1;
                hops = 0;
            }
            Resource::RoutePort(_, dir) => {
                let Some(q) = arch.neighbor(pe, dir) else { return Err((i, RouteFault::NoLink)) };
                if hops >= hpc {
                    return Err((i, RouteFault::HopBudget));
                }
                pe = q;
                if steps.get(i + 1).map_or(end, |n| n.cycle) == cycle {
                    if !bypass {
                        return Err((i, RouteFault::Bypass));
                    }
                    hops += 1;
                } else {
                    cycle += 1;
                    hops = 0;
                }
            }
        }
    }
    if pe != to || cycle != end {
        return Err((steps.len(), RouteFault::Destination { pe, cycle }));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::Direction;
    use crate::dfg::{Opcode, Section};
    use crate::mapper::Placement;
    use alloc::vec;

    fn pair() -> Dfg {
        let mut g = Dfg::new();
        g.add_node(Opcode::Add, 1, Section::Compute);
        g.add_node(Opcode::Add, 1, Section::Compute);
        g.add_data_edge(0, 1, 0, 0);
        g
    }

    fn at(r: u32, c: u32, t: u32) -> Placement {
        Placement { pe: Coord::new(r, c), time: t }
    }

    fn port(r: u32, c: u32, d: Direction, cycle: u32) -> RouteStep {
        RouteStep { res: Resource::RoutePort(Coord::new(r, c), d), cycle }
    }

    #[test]
    fn neighbour_route_is_valid() {
        let g = pair();
        let arch = ArchSpec::mesh(2, 2);
        let mut m = Mapping::new(1);
        m.place.insert(0, at(0, 0, 0));
        m.place.insert(1, at(0, 1, 2));
        m.routes.insert(0, vec![port(0, 0, Direction::E, 1)]);
        assert_eq!(validate_mapping(&g, &arch, &m), vec![]);
    }

    #[test]
    fn early_consumer_is_one_timing_violation() {
        let g = pair();
        let arch = ArchSpec::mesh(2, 2);
        let mut m = Mapping::new(2);
        m.place.insert(0, at(0, 0, 1));
        m.place.insert(1, at(0, 0, 0));
        let v = validate_mapping(&g, &arch, &m);
        assert_eq!(v, vec![Violation::Timing { edge: 0, ready: 2, needed: 0 }]);
    }

    #[test]
    fn fu_overlap_and_route_faults() {
        let g = pair();
        let arch = ArchSpec::mesh(2, 2);
        let mut m = Mapping::new(2);
        m.place.insert(0, at(0, 0, 0));
        m.place.insert(1, at(0, 0, 2));
        let v = validate_mapping(&g, &arch, &m);
        assert!(v.iter().any(|x| matches!(x, Violation::FuConflict { slot: 0, .. })));
        assert!(v.iter().any(|x| matches!(x, Violation::Route { edge: 0, fault: RouteFault::Destination { .. }, .. })));
    }

    #[test]
    fn bypass_needs_multihop_interconnect() {
        let g = pair();
        let mut m = Mapping::new(1);
        m.place.insert(0, at(0, 0, 0));
        m.place.insert(1, at(0, 2, 1));
        m.routes.insert(0, vec![port(0, 0, Direction::E, 1), port(0, 1, Direction::E, 1)]);
        let mesh = validate_mapping(&g, &ArchSpec::mesh(1, 3), &m);
        assert!(matches!(mesh[0], Violation::Route { fault: RouteFault::Bypass, .. }));
        assert!(validate_mapping(&g, &ArchSpec::hycube(1, 3, 2), &m).is_empty());
        let one_hop = validate_mapping(&g, &ArchSpec::hycube(1, 3, 1), &m);
        assert!(matches!(one_hop[0], Violation::Route { step: 1, fault: RouteFault::HopBudget, .. }));
    }

    #[test]
    fn different_values_conflict_on_a_port() {
        let mut g = pair();
        g.add_node(Opcode::Add, 1, Section::Compute);
        g.add_node(Opcode::Add, 1, Section::Compute);
        g.add_data_edge(2, 3, 0, 0);
        let arch = ArchSpec::mesh(2, 2);
        let mut m = Mapping::new(2);
        m.place.insert(0, at(0, 0, 0));
        m.place.insert(1, at(0, 1, 2));
        m.place.insert(2, at(0, 0, 1));
        m.place.insert(3, at(0, 1, 5));
        m.routes.insert(0, vec![port(0, 0, Direction::E, 1)]);
        m.routes.insert(
            1,
            vec![
                RouteStep { res: Resource::Register(Coord::new(0, 0), 0), cycle: 2 },
                port(0, 0, Direction::E, 3),
                RouteStep { res: Resource::Register(Coord::new(0, 1), 0), cycle: 4 },
            ],
        );
        let v = validate_mapping(&g, &arch, &m);
        assert_eq!(
            v,
            vec![Violation::RouteConflict {
                res: Resource::RoutePort(Coord::new(0, 0), Direction::E),
                slot: 1,
                edges: (0, 1)
            }]
        );
    }

    #[test]
    fn order_edges_and_config_depth() {
        let mut g = pair();
        g.add_order_edge(1, 0, 2, 1);
        let mut arch = ArchSpec::mesh(2, 2);
        let mut m = Mapping::new(2);
        m.place.insert(0, at(0, 0, 0));
        m.place.insert(1, at(0, 0, 1));
        let v = validate_mapping(&g, &arch, &m);
        assert_eq!(v, vec![Violation::OrderTiming { edge: 1, earliest: 3, start: 2 }]);
        arch.default_pe.config_depth = 0;
        let v = validate_mapping(&g, &arch, &m);
        assert!(matches!(v[0], Violation::ConfigDepth { .. }));
    }
}
