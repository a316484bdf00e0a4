//! List-scheduling placer with optional bounded backtracking.

use alloc::vec::Vec;

use super::search::Partial;
use super::{placement_order, MapFailure, Mapping};
use crate::arch::{ArchSpec, Coord};
use crate::dfg::{Dfg, NodeId};
use crate::sched::min_ii;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BacktrackParams {
    /// How many of the most recent placements may be revisited after a
    /// dead end.
    pub window: usize,
    /// Placement attempts allowed per II before moving on.
    pub budget: u64,
}

impl Default for BacktrackParams {
    fn default() -> Self {
        BacktrackParams { window: 5, budget: 20_000 }
    }
}

/// Greedy mapper: every node takes its cheapest feasible slot; the II grows
/// from the lower bound until everything fits or `max_ii` is exceeded.
pub fn map_heuristic(dfg: &Dfg, arch: &ArchSpec, max_ii: u32) -> Result<Mapping, MapFailure> {
    iterate(dfg, arch, max_ii, GREEDY)
}

/// Like [`map_heuristic`] but a dead end may undo recent placements and try
/// their next-best candidates.
pub fn map_backtrack(dfg: &Dfg, arch: &ArchSpec, max_ii: u32) -> Result<Mapping, MapFailure> {
    map_backtrack_with(dfg, arch, max_ii, BacktrackParams::default())
}

pub fn map_backtrack_with(
    dfg: &Dfg,
    arch: &ArchSpec,
    max_ii: u32,
    params: BacktrackParams,
) -> Result<Mapping, MapFailure> {
    iterate(dfg, arch, max_ii, params)
}

/// One attempt at exactly `ii`: `Ok(None)` when the search fails there.
/// A window of 0 gives the plain greedy mapper.
pub fn map_greedy_at(
    dfg: &Dfg,
    arch: &ArchSpec,
    ii: u32,
    params: BacktrackParams,
) -> Result<Option<Mapping>, MapFailure> {
    dfg.check().map_err(|e| MapFailure::Sched(e.into()))?;
    let lb = min_ii(dfg, arch)?;
    if ii < lb {
        return Err(MapFailure::BelowMinIi { ii, min_ii: lb });
    }
    if ii > arch.max_ii() {
        return Ok(None);
    }
    Ok(attempt(dfg, arch, ii, &placement_order(dfg)?, params))
}

/// Parameters that make [`map_greedy_at`] behave like [`map_heuristic`].
pub const GREEDY: BacktrackParams = BacktrackParams { window: 0, budget: u64::MAX };

fn iterate(dfg: &Dfg, arch: &ArchSpec, max_ii: u32, params: BacktrackParams) -> Result<Mapping, MapFailure> {
    dfg.check().map_err(|e| MapFailure::Sched(e.into()))?;
    let lb = min_ii(dfg, arch)?;
    let order = placement_order(dfg)?;
    let cap = max_ii.min(arch.max_ii());
    for ii in lb..=cap {
        if let Some(m) = attempt(dfg, arch, ii, &order, params) {
            return Ok(m);
        }
    }
    Err(MapFailure::MaxIiReached(cap))
}

#[derive(Debug, Clone, Copy)]
struct Cand {
    cost: u32,
    pe: Coord,
    time: u32,
}

/// Feasible slots for `n`, best first. Each PE contributes its earliest
/// start at which all edges to placed nodes can be routed.
fn candidates(p: &mut Partial<'_>, n: NodeId) -> Vec<Cand> {
    let op = p.dfg.nodes[n].opcode.kind();
    let lat = p.latency(n);
    let mut out = Vec::new();
    for pe in p.arch.capable_pes(op) {
        let Some((lo, hi)) = p.window(n, pe) else { continue };
        let load = p.occ.load(pe);
        for t in lo..=hi.min(lo + p.ii - 1) {
            if !p.occ.fu_free(pe, t, lat) {
                continue;
            }
            p.set(n, pe, t);
            let edges = p.pending_edges(n);
            let cost = p.route_all(&edges);
            if cost.is_some() {
                p.unroute(&edges);
            }
            p.unset(n);
            if let Some(c) = cost {
                out.push(Cand { cost: c + 2 * load, pe, time: t });
                break;
            }
        }
    }
    out.sort_by_key(|c| (c.cost, c.pe, c.time));
    out
}

fn attempt(dfg: &Dfg, arch: &ArchSpec, ii: u32, order: &[NodeId], params: BacktrackParams) -> Option<Mapping> {
    let mut p = Partial::new(dfg, arch, ii);
    let mut stack: Vec<(Vec<Cand>, usize)> = Vec::new();
    let (mut depth, mut deepest, mut spent) = (0usize, 0usize, 0u64);
    loop {
        if depth == order.len() {
            return Some(p.to_mapping());
        }
        let n = order[depth];
        if stack.len() == depth {
            let c = candidates(&mut p, n);
            stack.push((c, 0));
        }
        let (cands, next) = stack.last_mut().expect("frame for current depth");
        if let Some(&c) = cands.get(*next) {
            *next += 1;
            spent += 1;
            if spent > params.budget {
                return None;
            }
            p.set(n, c.pe, c.time);
            let edges = p.pending_edges(n);
            if p.route_all(&edges).is_some() {
                depth += 1;
                deepest = deepest.max(depth);
            } else {
                p.unset(n);
            }
        } else {
            stack.pop();
            if depth == 0 || depth - 1 + params.window < deepest {
                return None;
            }
            depth -= 1;
            let m = order[depth];
            let edges = p.pending_edges(m);
            p.unroute(&edges);
            p.unset(m);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dfg::{build_dfg, Opcode, Section};
    use crate::loopir::builtin_kernel;
    use crate::mapper::{validate_mapping, DEFAULT_MAX_II};
    use crate::sched;

    fn chain(n: usize) -> Dfg {
        let mut g = Dfg::new();
        for i in 0..n {
            g.add_node(Opcode::Add, 1, Section::Compute);
            if i > 0 {
                g.add_data_edge(i - 1, i, 0, 0);
            }
        }
        g
    }

    #[test]
    fn chain_maps_at_ii_one() {
        let g = chain(6);
        let arch = ArchSpec::mesh(3, 3);
        let m = map_heuristic(&g, &arch, DEFAULT_MAX_II).unwrap();
        assert_eq!(m.ii, 1);
        assert!(validate_mapping(&g, &arch, &m).is_empty());
        assert_eq!(map_backtrack(&g, &arch, DEFAULT_MAX_II).unwrap(), m);
        assert_eq!(map_greedy_at(&g, &arch, 1, GREEDY).unwrap(), Some(m));
    }

    #[test]
    fn gemm_maps_on_small_grids() {
        let g = build_dfg(&builtin_kernel("gemm", 4).unwrap()).unwrap();
        for arch in [ArchSpec::mesh(3, 3), ArchSpec::mesh(4, 4), ArchSpec::hycube(4, 4, 3)] {
            let m = map_heuristic(&g, &arch, DEFAULT_MAX_II).unwrap();
            assert!(validate_mapping(&g, &arch, &m).is_empty());
            assert!(m.ii >= sched::min_ii(&g, &arch).unwrap());
        }
    }

    #[test]
    fn max_ii_and_capability_failures() {
        let g = chain(10);
        assert_eq!(map_heuristic(&g, &ArchSpec::mesh(1, 1), 5), Err(MapFailure::MaxIiReached(5)));
        assert_eq!(
            map_greedy_at(&g, &ArchSpec::mesh(1, 1), 5, GREEDY),
            Err(MapFailure::BelowMinIi { ii: 5, min_ii: 10 })
        );
        let mut l = Dfg::new();
        l.add_node(Opcode::Load, 1, Section::Memory);
        let mut arch = ArchSpec::mesh(2, 2);
        arch.spm.pes.clear();
        assert!(matches!(map_heuristic(&l, &arch, 4), Err(MapFailure::Capability(_))));
    }

    #[test]
    fn deterministic() {
        let g = build_dfg(&builtin_kernel("mvt", 4).unwrap()).unwrap();
        let arch = ArchSpec::mesh(4, 4);
        let a = map_backtrack(&g, &arch, DEFAULT_MAX_II).unwrap();
        let b = map_backtrack(&g, &arch, DEFAULT_MAX_II).unwrap();
        assert_eq!(a, b);
    }
}
