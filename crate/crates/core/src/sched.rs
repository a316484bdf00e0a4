//! Initiation-interval lower bounds and the modulo routing resource graph.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::arch::{ArchSpec, Direction, OpKind, Resource};
use crate::dfg::{Dfg, DfgError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchedError {
    #[error(transparent)]
    Graph(#[from] DfgError),
    #[error("no enabled PE can execute `{}`", .0.name())]
    Unmappable(OpKind),
    #[error("initiation interval must be at least 1")]
    ZeroIi,
    #[error("initiation interval {ii} exceeds the configuration depth {depth}")]
    IiTooLarge { ii: u32, depth: u32 },
}

/// Is there a dependence cycle with positive slack `Σ delay − ii·Σ distance`?
fn has_positive_cycle(dfg: &Dfg, ii: u32) -> bool {
    let n = dfg.len();
    let mut dist = vec![0i64; n];
    for _ in 0..=n {
        let mut changed = false;
        for e in &dfg.edges {
            let w = dfg.edge_delay(e) as i64 - ii as i64 * e.distance as i64;
            if dist[e.src] + w > dist[e.dst] {
                dist[e.dst] = dist[e.src] + w;
                changed = true;
            }
        }
        if !changed {
            return false;
        }
    }
    true
}

/// Smallest II that every dependence cycle tolerates; 1 for acyclic graphs.
pub fn rec_mii(dfg: &Dfg) -> Result<u32, SchedError> {
    dfg.topo_order()?;
    let total: u64 = dfg.edges.iter().map(|e| dfg.edge_delay(e) as u64).sum();
    let (mut lo, mut hi) = (1u32, total.clamp(1, u32::MAX as u64) as u32);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if has_positive_cycle(dfg, mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Largest per-class ratio of operations to PEs able to run them.
pub fn res_mii(dfg: &Dfg, arch: &ArchSpec) -> Result<u32, SchedError> {
    let ceil = |a: usize, b: usize| a.div_ceil(b.max(1)) as u32;
    let mut per_kind: BTreeMap<OpKind, usize> = BTreeMap::new();
    for n in &dfg.nodes {
        *per_kind.entry(n.opcode.kind()).or_default() += 1;
    }
    let mut bound = ceil(dfg.len(), arch.enabled_count()).max(1);
    for (&kind, &count) in &per_kind {
        let capable = arch.capable_pes(kind).len();
        if capable == 0 {
            return Err(SchedError::Unmappable(kind));
        }
        bound = bound.max(ceil(count, capable));
    }
    let mem_ops = dfg.nodes.iter().filter(|n| n.opcode.is_memory()).count();
    if mem_ops > 0 {
        let mut ports = arch.capable_pes(OpKind::Load);
        ports.extend(arch.capable_pes(OpKind::Store));
        bound = bound.max(ceil(mem_ops, ports.len()));
    }
    Ok(bound)
}

pub fn min_ii(dfg: &Dfg, arch: &ArchSpec) -> Result<u32, SchedError> {
    Ok(rec_mii(dfg)?.max(res_mii(dfg, arch)?))
}

/// Link traversals a value may make within one cycle.
pub fn hops_per_cycle(arch: &ArchSpec) -> u32 {
    arch.interconnect.bypass_hops().max(1)
}

/// Number of register slots per PE exposed in the graph.
fn exposed_registers(arch: &ArchSpec, pe: crate::arch::Coord) -> u32 {
    arch.register_capacity(pe).unwrap_or(arch.pe_spec(pe).registers)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Slot {
    pub res: Resource,
    pub cycle: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Arc {
    pub from: usize,
    pub to: usize,
    /// Combinational hop within one cycle (multi-hop interconnects only).
    pub same_cycle: bool,
}

/// Resources replicated over `ii` cycles. An arc `a → b` means a value held
/// in slot `a` can be held in slot `b` next, one cycle later (modulo `ii`) or
/// in the same cycle for bypass hops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mrrg {
    pub ii: u32,
    pub slots: Vec<Slot>,
    pub arcs: Vec<Arc>,
    index: BTreeMap<Slot, usize>,
}

impl Mrrg {
    pub fn slot_index(&self, res: Resource, cycle: u32) -> Option<usize> {
        self.index.get(&Slot { res, cycle }).copied()
    }

    pub fn successors(&self, slot: usize) -> impl Iterator<Item = &Arc> {
        self.arcs.iter().filter(move |a| a.from == slot)
    }

    pub fn fu_slots(&self) -> usize {
        self.slots.iter().filter(|s| matches!(s.res, Resource::Fu(_))).count()
    }

    pub fn port_slots(&self) -> usize {
        self.slots.iter().filter(|s| matches!(s.res, Resource::RoutePort(..))).count()
    }

    /// Arcs into or out of a route port.
    pub fn route_arcs(&self) -> usize {
        self.arcs
            .iter()
            .filter(|a| {
                matches!(self.slots[a.from].res, Resource::RoutePort(..))
                    || matches!(self.slots[a.to].res, Resource::RoutePort(..))
            })
            .count()
    }
}

pub fn build_mrrg(arch: &ArchSpec, ii: u32) -> Result<Mrrg, SchedError> {
    if ii == 0 {
        return Err(SchedError::ZeroIi);
    }
    let depth = arch.max_ii();
    if ii > depth {
        return Err(SchedError::IiTooLarge { ii, depth });
    }
    let mut resources = Vec::new();
    for pe in arch.enabled_pes() {
        resources.push(Resource::Fu(pe));
        for (d, _) in arch.adjacent_resources(pe) {
            resources.push(Resource::RoutePort(pe, d));
        }
        for k in 0..exposed_registers(arch, pe) {
            resources.push(Resource::Register(pe, k));
        }
    }
    let mut slots = Vec::new();
    let mut index = BTreeMap::new();
    for cycle in 0..ii {
        for &res in &resources {
            index.insert(Slot { res, cycle }, slots.len());
            slots.push(Slot { res, cycle });
        }
    }
    // Slots that read a value present at `pe` during `cycle`.
    let readers = |pe, cycle: u32| {
        let mut v = vec![Slot { res: Resource::Fu(pe), cycle }];
        for (d, _) in arch.adjacent_resources(pe) {
            v.push(Slot { res: Resource::RoutePort(pe, d), cycle });
        }
        for k in 0..exposed_registers(arch, pe) {
            v.push(Slot { res: Resource::Register(pe, k), cycle });
        }
        v
    };
    let bypass = arch.interconnect.bypass_hops() > 0;
    let mut arcs = Vec::new();
    for (i, s) in slots.iter().enumerate() {
        let next = (s.cycle + 1) % ii;
        let (lands_at, same) = match s.res {
            Resource::Fu(pe) | Resource::Register(pe, _) => (pe, false),
            Resource::RoutePort(pe, d) => (neighbor(arch, pe, d), bypass),
        };
        for t in readers(lands_at, next) {
            arcs.push(Arc { from: i, to: index[&t], same_cycle: false });
        }
        if same {
            for t in readers(lands_at, s.cycle) {
                arcs.push(Arc { from: i, to: index[&t], same_cycle: true });
            }
        }
    }
    Ok(Mrrg { ii, slots, arcs, index })
}

fn neighbor(arch: &ArchSpec, pe: crate::arch::Coord, d: Direction) -> crate::arch::Coord {
    arch.neighbor(pe, d).expect("ports exist only towards enabled neighbours")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::Coord;
    use crate::dfg::{build_dfg, Opcode, Section};
    use crate::loopir::{builtin_kernel, LoopDim, LoopNest};

    fn ring(len: usize, distance: u32) -> Dfg {
        let mut g = Dfg::new();
        for _ in 0..len {
            g.add_node(Opcode::Add, 1, Section::Compute);
        }
        for i in 0..len {
            let d = if i + 1 == len { distance } else { 0 };
            g.add_data_edge(i, (i + 1) % len, 0, d);
        }
        g
    }

    fn chain(len: usize) -> Dfg {
        let mut g = Dfg::new();
        for i in 0..len {
            g.add_node(Opcode::Add, 1, Section::Compute);
            if i > 0 {
                g.add_data_edge(i - 1, i, 0, 0);
            }
        }
        g
    }

    #[test]
    fn counter_triple_rec_mii() {
        let n = LoopNest {
            name: "e".into(),
            arrays: vec![],
            scalars: vec![],
            dims: vec![LoopDim::counted("i", 8)],
            body: vec![],
        };
        assert_eq!(rec_mii(&build_dfg(&n).unwrap()), Ok(3));
        assert_eq!(rec_mii(&ring(3, 1)), Ok(3));
    }

    #[test]
    fn acyclic_rec_mii_is_one() {
        assert_eq!(rec_mii(&chain(5)), Ok(1));
        assert_eq!(rec_mii(&Dfg::new()), Ok(1));
    }

    #[test]
    fn distance_divides_recurrence() {
        assert_eq!(rec_mii(&ring(2, 2)), Ok(1));
        assert_eq!(rec_mii(&ring(5, 2)), Ok(3));
    }

    #[test]
    fn zero_distance_cycle_is_an_error() {
        assert!(matches!(rec_mii(&ring(3, 0)), Err(SchedError::Graph(_))));
    }

    #[test]
    fn res_mii_examples() {
        let gemm = build_dfg(&builtin_kernel("gemm", 4).unwrap()).unwrap();
        assert_eq!(res_mii(&gemm, &ArchSpec::mesh(3, 3)), Ok(3));
        assert_eq!(res_mii(&chain(1), &ArchSpec::mesh(1, 1)), Ok(1));

        let mut g = chain(6);
        for _ in 0..5 {
            g.add_node(Opcode::Load, 1, Section::Memory);
        }
        assert_eq!(res_mii(&g, &ArchSpec::mesh(4, 4)), Ok(2));
    }

    #[test]
    fn unmappable_opcode() {
        let mut arch = ArchSpec::mesh(2, 2);
        arch.default_pe.ops.remove(&OpKind::Div);
        let mut g = chain(1);
        g.add_node(Opcode::Div, 1, Section::Compute);
        assert_eq!(res_mii(&g, &arch), Err(SchedError::Unmappable(OpKind::Div)));
    }

    #[test]
    fn min_ii_examples() {
        let gemm = build_dfg(&builtin_kernel("gemm", 4).unwrap()).unwrap();
        assert_eq!(min_ii(&gemm, &ArchSpec::mesh(3, 3)), Ok(3));
        assert_eq!(min_ii(&chain(4), &ArchSpec::mesh(2, 2)), Ok(1));
        assert_eq!(min_ii(&chain(5), &ArchSpec::mesh(2, 2)), Ok(2));
    }

    #[test]
    fn mrrg_mesh_2x2() {
        let m = build_mrrg(&ArchSpec::mesh(2, 2), 1).unwrap();
        assert_eq!(m.fu_slots(), 4);
        assert_eq!(m.port_slots(), 8);
        assert_eq!(m.slots.len(), 4 * (1 + 2 + 8));
        assert!(m.arcs.iter().all(|a| !a.same_cycle));
    }

    #[test]
    fn mrrg_single_pe() {
        let m = build_mrrg(&ArchSpec::mesh(1, 1), 2).unwrap();
        assert_eq!(m.fu_slots(), 2);
        assert_eq!(m.route_arcs(), 0);
    }

    #[test]
    fn mrrg_hycube_reaches_two_hops_in_one_cycle() {
        let arch = ArchSpec::hycube(1, 3, 3);
        let m = build_mrrg(&arch, 1).unwrap();
        let start = m.slot_index(Resource::RoutePort(Coord::new(0, 0), Direction::E), 0).unwrap();
        let goal = m.slot_index(Resource::Fu(Coord::new(0, 2)), 0).unwrap();
        let mut frontier = vec![start];
        let mut seen = vec![false; m.slots.len()];
        while let Some(s) = frontier.pop() {
            if seen[s] {
                continue;
            }
            seen[s] = true;
            frontier.extend(m.successors(s).filter(|a| a.same_cycle).map(|a| a.to));
        }
        assert!(seen[goal]);
    }

    #[test]
    fn mrrg_rejects_deep_ii() {
        let arch = ArchSpec::mesh(2, 2);
        assert_eq!(build_mrrg(&arch, 61), Err(SchedError::IiTooLarge { ii: 61, depth: 60 }));
        assert_eq!(build_mrrg(&arch, 0), Err(SchedError::ZeroIi));
    }

    proptest::proptest! {
        #[test]
        fn res_mii_monotone_in_nodes(base in 1usize..20, extra in 0usize..10, rows in 1u32..4, cols in 1u32..4) {
            let arch = ArchSpec::mesh(rows, cols);
            let a = res_mii(&chain(base), &arch).unwrap();
            let b = res_mii(&chain(base + extra), &arch).unwrap();
            proptest::prop_assert!(a <= b);
        }

        #[test]
        fn rec_mii_monotone_in_cycles(len in 1usize..8, dist in 1u32..4, extra in 1usize..6) {
            let g = ring(len, dist);
            let mut h = g.clone();
            let first = h.len();
            for i in 0..extra {
                h.add_node(Opcode::Add, 1, Section::Compute);
                let src = if i == 0 { 0 } else { first + i - 1 };
                h.add_data_edge(src, first + i, 1, 0);
            }
            h.add_data_edge(first + extra - 1, 0, 1, 1);
            proptest::prop_assert!(rec_mii(&g).unwrap() <= rec_mii(&h).unwrap());
        }
    }
}
