//! Complete search over placements, start times and routes at a fixed II.
//!
//! Start times are drawn from `[0, horizon)` (see
//! [`schedule_horizon`](super::schedule_horizon)); within that space the
//! search is exact: every route of every edge is enumerated. Registers of one
//! PE are interchangeable, so only the lowest free index is tried.

use alloc::vec;
use alloc::vec::Vec;

use super::search::{Ends, Partial};
use super::{placement_order, schedule_horizon, MapFailure, Mapping, RouteStep};
use crate::arch::{ArchSpec, Coord, Direction, Resource};
use crate::dfg::{Dfg, EdgeId, NodeId};
use crate::sched::{min_ii, SchedError};

pub const DEFAULT_EXHAUSTIVE_BUDGET: u64 = 20_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExhaustiveOutcome {
    Found(Mapping),
    /// No mapping exists at this II within the schedule horizon.
    Infeasible,
    /// The search gave up before deciding.
    BudgetExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Flow {
    Continue,
    Found,
    Abort,
}

struct Search<'a> {
    p: Partial<'a>,
    order: Vec<NodeId>,
    horizon: u32,
    budget: u64,
    found: Option<Mapping>,
}

/// Decides whether `dfg` maps onto `arch` at exactly `ii`. `budget` bounds
/// the number of search steps.
pub fn map_exhaustive(dfg: &Dfg, arch: &ArchSpec, ii: u32, budget: u64) -> Result<ExhaustiveOutcome, MapFailure> {
    if ii == 0 {
        return Err(MapFailure::Sched(SchedError::ZeroIi));
    }
    dfg.check().map_err(|e| MapFailure::Sched(e.into()))?;
    let lb = min_ii(dfg, arch)?;
    if ii < lb || ii > arch.max_ii() {
        return Ok(ExhaustiveOutcome::Infeasible);
    }
    let mut s = Search {
        p: Partial::new(dfg, arch, ii),
        order: placement_order(dfg)?,
        horizon: schedule_horizon(dfg, arch, ii)?,
        budget,
        found: None,
    };
    Ok(match s.place(0) {
        Flow::Found => ExhaustiveOutcome::Found(s.found.take().expect("mapping recorded")),
        Flow::Continue => ExhaustiveOutcome::Infeasible,
        Flow::Abort => ExhaustiveOutcome::BudgetExhausted,
    })
}

impl Search<'_> {
    fn tick(&mut self) -> bool {
        if self.budget == 0 {
            return false;
        }
        self.budget -= 1;
        true
    }

    fn place(&mut self, i: usize) -> Flow {
        if i == self.order.len() {
            self.found = Some(self.p.to_mapping());
            return Flow::Found;
        }
        let n = self.order[i];
        let lat = self.p.latency(n);
        for pe in self.p.arch.capable_pes(self.p.dfg.nodes[n].opcode.kind()) {
            let Some((lo, hi)) = self.p.window(n, pe) else { continue };
            for t in lo..=hi.min(self.horizon.saturating_sub(1)) {
                if !self.tick() {
                    return Flow::Abort;
                }
                if !self.p.occ.fu_free(pe, t, lat) {
                    continue;
                }
                self.p.set(n, pe, t);
                let edges = self.p.pending_edges(n);
                let r = self.route(&edges, 0, i);
                self.p.unset(n);
                if r != Flow::Continue {
                    return r;
                }
            }
        }
        Flow::Continue
    }

    fn route(&mut self, edges: &[EdgeId], j: usize, i: usize) -> Flow {
        let Some(&e) = edges.get(j) else { return self.place(i + 1) };
        let ends = self.p.ends(e).expect("both endpoints placed");
        if ends.end < ends.start {
            return Flow::Continue;
        }
        let mut path = Vec::new();
        let mut seen = vec![ends.from];
        self.extend(edges, j, i, ends, ends.from, ends.start, 0, &mut path, &mut seen)
    }

    /// Enumerates continuations of a partial route currently at `pe` during
    /// `cycle` after `hops` same-cycle traversals. `seen` holds the PEs
    /// visited in this cycle.
    #[allow(clippy::too_many_arguments)]
    fn extend(
        &mut self,
        edges: &[EdgeId],
        j: usize,
        i: usize,
        ends: Ends,
        pe: Coord,
        cycle: u32,
        hops: u32,
        path: &mut Vec<RouteStep>,
        seen: &mut Vec<Coord>,
    ) -> Flow {
        if !self.tick() {
            return Flow::Abort;
        }
        if pe == ends.to && cycle == ends.end {
            self.p.routes.insert(edges[j], path.clone());
            let r = self.route(edges, j + 1, i);
            self.p.routes.remove(&edges[j]);
            return r;
        }
        if !self.p.occ.reachable(pe, cycle, hops, ends.to, ends.end) {
            return Flow::Continue;
        }
        let v = ends.value;
        if cycle < ends.end {
            if let Some((k, _)) = self.p.occ.reg_pick(pe, cycle, v, &[]) {
                let step = RouteStep { res: Resource::Register(pe, k), cycle };
                let r = self.through(edges, j, i, ends, step, true, pe, cycle + 1, 0, path, &mut vec![pe]);
                if r != Flow::Continue {
                    return r;
                }
            }
        }
        if hops >= self.p.occ.hpc {
            return Flow::Continue;
        }
        let mut dirs: Vec<(u32, Direction, Coord)> = Direction::ALL
            .iter()
            .filter_map(|&d| self.p.arch.neighbor(pe, d).map(|q| (q.manhattan(ends.to), d, q)))
            .collect();
        dirs.sort();
        for (_, dir, q) in dirs {
            let step = RouteStep { res: Resource::RoutePort(pe, dir), cycle };
            if cycle < ends.end && self.p.occ.port_cost(pe, dir, cycle, v, true).is_some() {
                let r = self.through(edges, j, i, ends, step, true, q, cycle + 1, 0, path, &mut vec![q]);
                if r != Flow::Continue {
                    return r;
                }
            }
            if self.p.occ.bypass && !seen.contains(&q) && self.p.occ.port_cost(pe, dir, cycle, v, false).is_some() {
                seen.push(q);
                let r = self.through(edges, j, i, ends, step, false, q, cycle, hops + 1, path, seen);
                seen.pop();
                if r != Flow::Continue {
                    return r;
                }
            }
        }
        Flow::Continue
    }

    /// Claims `step`, explores from the resulting state, then releases it.
    #[allow(clippy::too_many_arguments)]
    fn through(
        &mut self,
        edges: &[EdgeId],
        j: usize,
        i: usize,
        ends: Ends,
        step: RouteStep,
        latched: bool,
        pe: Coord,
        cycle: u32,
        hops: u32,
        path: &mut Vec<RouteStep>,
        seen: &mut Vec<Coord>,
    ) -> Flow {
        self.p.occ.commit_step(step, ends.value, latched);
        path.push(step);
        let r = self.extend(edges, j, i, ends, pe, cycle, hops, path, seen);
        path.pop();
        self.p.occ.release_step(step, ends.value, latched);
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dfg::{build_dfg, Opcode, Section};
    use crate::loopir::builtin_kernel;
    use crate::mapper::validate_mapping;

    #[test]
    fn below_lower_bound_is_infeasible() {
        let g = build_dfg(&builtin_kernel("gemm", 4).unwrap()).unwrap();
        let arch = ArchSpec::mesh(3, 3);
        assert_eq!(map_exhaustive(&g, &arch, 2, 1).unwrap(), ExhaustiveOutcome::Infeasible);
    }

    #[test]
    fn two_node_chain_needs_two_pes_at_ii_one() {
        let mut g = Dfg::new();
        g.add_node(Opcode::Add, 1, Section::Compute);
        g.add_node(Opcode::Add, 1, Section::Compute);
        g.add_data_edge(0, 1, 0, 0);
        let arch = ArchSpec::mesh(1, 2);
        let ExhaustiveOutcome::Found(m) = map_exhaustive(&g, &arch, 1, DEFAULT_EXHAUSTIVE_BUDGET).unwrap() else {
            panic!("expected a mapping");
        };
        assert!(validate_mapping(&g, &arch, &m).is_empty());
        assert_ne!(m.place[&0].pe, m.place[&1].pe);
        assert_eq!(
            map_exhaustive(&g, &ArchSpec::mesh(1, 1), 1, DEFAULT_EXHAUSTIVE_BUDGET).unwrap(),
            ExhaustiveOutcome::Infeasible
        );
    }

    #[test]
    fn tiny_budget_is_reported() {
        let mut g = Dfg::new();
        for i in 0..4 {
            g.add_node(Opcode::Add, 1, Section::Compute);
            if i > 0 {
                g.add_data_edge(i - 1, i, 0, 0);
            }
        }
        let arch = ArchSpec::mesh(2, 2);
        assert_eq!(map_exhaustive(&g, &arch, 1, 3).unwrap(), ExhaustiveOutcome::BudgetExhausted);
    }
}
