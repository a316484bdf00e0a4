//! Placement and routing of a data-flow graph onto the array at a fixed
//! initiation interval, plus validation and quality metrics.
//!
//! Timing model: a node placed at `(pe, t)` with latency `L` makes its value
//! available at `pe` during cycle `t + L`. A consumer of edge `e` with
//! distance `d` placed at time `t'` needs the value at its PE during cycle
//! `t' + d·ii` (cycles counted in the producer's iteration frame). In between
//! the value moves through route steps, each naming a resource and the cycle
//! in which it is used:
//!
//! - `Register(p, k)` at `c` holds the value at `p` from `c` into `c + 1`;
//! - `RoutePort(p, dir)` at `c` sends it to the neighbour, arriving in `c + 1`
//!   or, on multi-hop interconnects, still in `c` (bypass). Link traversals
//!   within one cycle are limited by the interconnect's hop budget.
//!
//! A port step is a bypass when the following step (or the consumer) uses the
//! same cycle. Route resources may be shared only by the same value in the
//! same absolute cycle and, for ports, the same mode.

mod anneal;
mod exhaustive;
mod greedy;
mod occupancy;
mod search;
mod validate;

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};

use crate::arch::{ArchSpec, Coord, OpKind, Resource};
use crate::dfg::{Dfg, EdgeId, NodeId};
use crate::sched::SchedError;

pub use anneal::{map_anneal, map_anneal_search, AnnealParams};
pub use exhaustive::{map_exhaustive, ExhaustiveOutcome, DEFAULT_EXHAUSTIVE_BUDGET};
pub use greedy::{map_backtrack, map_backtrack_with, map_greedy_at, map_heuristic, BacktrackParams, GREEDY};
pub use validate::{validate_mapping, RouteFault, Violation};

/// Largest initiation interval the iterative mappers try by default.
pub const DEFAULT_MAX_II: u32 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Placement {
    pub pe: Coord,
    /// Start cycle within the iteration; the configuration slot is `time % ii`.
    pub time: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RouteStep {
    pub res: Resource,
    /// Absolute cycle in the producer's iteration frame.
    pub cycle: u32,
}

/// A placed and routed graph. Equality ignores `wall_time`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mapping {
    pub ii: u32,
    pub place: BTreeMap<NodeId, Placement>,
    /// Route of every data edge; an empty route means the consumer reads the
    /// producer's output directly.
    pub routes: BTreeMap<EdgeId, Vec<RouteStep>>,
    pub wall_time: Duration,
}

impl PartialEq for Mapping {
    fn eq(&self, other: &Self) -> bool {
        self.ii == other.ii && self.place == other.place && self.routes == other.routes
    }
}

impl Eq for Mapping {}

impl Mapping {
    pub fn new(ii: u32) -> Mapping {
        Mapping { ii, place: BTreeMap::new(), routes: BTreeMap::new(), wall_time: Duration::ZERO }
    }

    /// Cycles from the first start to the last result of one iteration.
    pub fn depth(&self, dfg: &Dfg) -> u32 {
        self.place.iter().map(|(&n, p)| p.time + dfg.nodes.get(n).map_or(1, |x| x.latency)).max().unwrap_or(0)
    }

    /// Nodes placed on each PE.
    pub fn ops_per_pe(&self) -> BTreeMap<Coord, usize> {
        let mut m = BTreeMap::new();
        for p in self.place.values() {
            *m.entry(p.pe).or_default() += 1;
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MapFailure {
    #[error("no enabled PE can execute `{}`", .0.name())]
    Capability(OpKind),
    #[error("max II reached ({0}) without a mapping")]
    MaxIiReached(u32),
    #[error("search budget exhausted at II {0}")]
    BudgetExhausted(u32),
    #[error("II {ii} is below the lower bound {min_ii}")]
    BelowMinIi { ii: u32, min_ii: u32 },
    #[error(transparent)]
    Sched(SchedError),
}

impl From<SchedError> for MapFailure {
    fn from(e: SchedError) -> Self {
        match e {
            SchedError::Unmappable(k) => MapFailure::Capability(k),
            other => MapFailure::Sched(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub op_count: usize,
    pub ii: u32,
    /// Enabled PEs hosting no operation (route-only PEs included).
    pub unused_pe: usize,
    pub used_pe: usize,
    pub max_ops_per_pe: usize,
    /// PEs hosting no operation whose ports or registers carry values.
    pub route_only_pe: usize,
    /// Operations per cycle relative to a single-issue processor.
    pub speedup: f64,
    pub wall_time: Duration,
}

/// Table-style metrics of a valid mapping.
pub fn mapping_report(dfg: &Dfg, arch: &ArchSpec, m: &Mapping) -> Result<MapReport, Vec<Violation>> {
    let violations = validate_mapping(dfg, arch, m);
    if !violations.is_empty() {
        return Err(violations);
    }
    let per_pe = m.ops_per_pe();
    let used = per_pe.len();
    let mut routed: Vec<Coord> = m.routes.values().flatten().map(|s| s.res.pe()).collect();
    routed.sort();
    routed.dedup();
    let route_only = routed.iter().filter(|c| !per_pe.contains_key(c)).count();
    Ok(MapReport {
        op_count: dfg.len(),
        ii: m.ii,
        unused_pe: arch.enabled_count() - used,
        used_pe: used,
        max_ops_per_pe: per_pe.values().copied().max().unwrap_or(0),
        route_only_pe: route_only,
        speedup: dfg.len() as f64 / m.ii as f64,
        wall_time: m.wall_time,
    })
}

/// Earliest start of every node ignoring resources and routing.
pub(crate) fn asap(dfg: &Dfg) -> Result<Vec<u32>, SchedError> {
    let order = dfg.topo_order()?;
    let (ins, _) = dfg.adjacency();
    let mut t = vec![0u32; dfg.len()];
    for &n in &order {
        for &e in &ins[n] {
            let e = &dfg.edges[e];
            if e.distance == 0 {
                t[n] = t[n].max(t[e.src] + dfg.edge_delay(e));
            }
        }
    }
    Ok(t)
}

/// Schedule length bound used by the exhaustive and annealing mappers:
/// node start times lie in `[0, horizon)`.
pub fn schedule_horizon(dfg: &Dfg, arch: &ArchSpec, ii: u32) -> Result<u32, SchedError> {
    let a = asap(dfg)?;
    let len = dfg.nodes.iter().map(|n| a[n.id] + n.latency).max().unwrap_or(0);
    Ok(len + ii + arch.rows + arch.cols - 2)
}

/// Longest-path weights `Σ delay − ii·Σ distance` between all node pairs,
/// `None` where no path exists. Requires `ii ≥ rec_mii`.
#[allow(clippy::needless_range_loop)]
pub(crate) fn path_weights(dfg: &Dfg, ii: u32) -> Vec<Vec<Option<i64>>> {
    let n = dfg.len();
    let mut w = vec![vec![None; n]; n];
    for e in &dfg.edges {
        let x = dfg.edge_delay(e) as i64 - ii as i64 * e.distance as i64;
        let cell = &mut w[e.src][e.dst];
        *cell = Some(cell.map_or(x, |c: i64| c.max(x)));
    }
    for k in 0..n {
        for i in 0..n {
            let Some(ik) = w[i][k] else { continue };
            for j in 0..n {
                if let Some(kj) = w[k][j] {
                    let cand = ik + kj;
                    if w[i][j].is_none_or(|c| c < cand) {
                        w[i][j] = Some(cand);
                    }
                }
            }
        }
    }
    w
}

/// Placement order: topological over distance-0 edges, preferring nodes on
/// recurrences, then nodes with long paths below them, then lower ids.
pub(crate) fn placement_order(dfg: &Dfg) -> Result<Vec<NodeId>, SchedError> {
    use alloc::collections::BinaryHeap;
    use core::cmp::Reverse;
    let topo = dfg.topo_order()?;
    let n = dfg.len();
    let (ins, outs) = dfg.adjacency();
    let mut height = vec![0u32; n];
    for &v in topo.iter().rev() {
        for &e in &outs[v] {
            let e = &dfg.edges[e];
            if e.distance == 0 {
                height[v] = height[v].max(height[e.dst] + dfg.edge_delay(e));
            }
        }
    }
    let recurrent = on_cycle(dfg);
    let mut indeg: Vec<usize> =
        (0..n).map(|v| ins[v].iter().filter(|&&e| dfg.edges[e].distance == 0).count()).collect();
    let key = |v: NodeId| (recurrent[v], height[v], Reverse(v));
    let mut ready: BinaryHeap<_> = (0..n).filter(|&v| indeg[v] == 0).map(|v| (key(v), v)).collect();
    let mut order = Vec::with_capacity(n);
    while let Some((_, v)) = ready.pop() {
        order.push(v);
        for &e in &outs[v] {
            let e = &dfg.edges[e];
            if e.distance == 0 {
                indeg[e.dst] -= 1;
                if indeg[e.dst] == 0 {
                    ready.push((key(e.dst), e.dst));
                }
            }
        }
    }
    Ok(order)
}

/// Nodes lying on some dependence cycle.
#[allow(clippy::needless_range_loop)]
fn on_cycle(dfg: &Dfg) -> Vec<bool> {
    let n = dfg.len();
    let mut reach = vec![vec![false; n]; n];
    for e in &dfg.edges {
        reach[e.src][e.dst] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    (0..n).map(|v| reach[v][v]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dfg::{Opcode, Section};

    fn independent(n: usize) -> Dfg {
        let mut g = Dfg::new();
        for _ in 0..n {
            g.add_node(Opcode::Add, 1, Section::Compute);
        }
        g
    }

    #[test]
    fn report_small() {
        let g = independent(4);
        let arch = ArchSpec::mesh(2, 2);
        let mut m = Mapping::new(2);
        for (n, (pe, t)) in [((0, 0), 0), ((0, 0), 1), ((0, 1), 0), ((0, 1), 1)].iter().enumerate() {
            m.place.insert(n, Placement { pe: Coord::new(pe.0, pe.1), time: *t });
        }
        let r = mapping_report(&g, &arch, &m).unwrap();
        assert_eq!((r.unused_pe, r.max_ops_per_pe, r.used_pe), (2, 2, 2));
        assert_eq!(r.speedup, 2.0);
    }

    #[test]
    fn report_rejects_invalid() {
        let g = independent(2);
        let mut m = Mapping::new(1);
        m.place.insert(0, Placement { pe: Coord::new(0, 0), time: 0 });
        m.place.insert(1, Placement { pe: Coord::new(0, 0), time: 0 });
        assert!(mapping_report(&g, &ArchSpec::mesh(2, 2), &m).is_err());
    }

    #[test]
    fn route_only_pe_counts_as_unused() {
        let mut g = independent(2);
        g.add_data_edge(0, 1, 0, 0);
        let arch = ArchSpec::mesh(1, 3);
        let mut m = Mapping::new(1);
        m.place.insert(0, Placement { pe: Coord::new(0, 0), time: 0 });
        m.place.insert(1, Placement { pe: Coord::new(0, 2), time: 3 });
        m.routes.insert(
            0,
            vec![
                RouteStep { res: Resource::RoutePort(Coord::new(0, 0), crate::arch::Direction::E), cycle: 1 },
                RouteStep { res: Resource::RoutePort(Coord::new(0, 1), crate::arch::Direction::E), cycle: 2 },
            ],
        );
        let r = mapping_report(&g, &arch, &m).unwrap();
        assert_eq!((r.route_only_pe, r.unused_pe, r.used_pe), (1, 1, 2));
    }

    #[test]
    fn path_weights_chain() {
        let mut g = independent(3);
        g.add_data_edge(0, 1, 0, 0);
        g.add_data_edge(1, 2, 0, 0);
        g.add_data_edge(2, 0, 0, 1);
        let w = path_weights(&g, 4);
        assert_eq!(w[0][2], Some(2));
        assert_eq!(w[2][1], Some(-2));
        assert_eq!(w[0][0], Some(-1));
    }

    #[test]
    fn order_is_topological() {
        let mut g = independent(4);
        g.add_data_edge(3, 0, 0, 0);
        g.add_data_edge(0, 1, 0, 0);
        let order = placement_order(&g).unwrap();
        let pos = |v| order.iter().position(|&x| x == v).unwrap();
        assert!(pos(3) < pos(0) && pos(0) < pos(1));
    }
}
