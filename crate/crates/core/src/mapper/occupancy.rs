//! Modulo reservation tables for a partial mapping and a shortest-path router
//! over them.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;

use super::RouteStep;
use crate::arch::{ArchSpec, Coord, Direction, Resource};
use crate::dfg::NodeId;
use crate::sched::hops_per_cycle;

/// What a routing resource carries in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Use {
    value: NodeId,
    cycle: u32,
    latched: bool,
    count: u32,
}

/// For each port step, whether it is latched into the neighbour (arriving a
/// cycle later) rather than bypassed. Register steps report `true`.
pub(crate) fn latched_flags(steps: &[RouteStep], end: u32) -> Vec<bool> {
    steps.iter().enumerate().map(|(i, s)| steps.get(i + 1).map_or(end, |n| n.cycle) != s.cycle).collect()
}

pub(crate) struct Occupancy<'a> {
    pub arch: &'a ArchSpec,
    pub ii: u32,
    pub hpc: u32,
    pub bypass: bool,
    fu: Vec<Option<NodeId>>,
    latch: Vec<Option<NodeId>>,
    ports: Vec<Option<Use>>,
    regs: Vec<Vec<Option<Use>>>,
    load: Vec<u32>,
}

impl<'a> Occupancy<'a> {
    pub fn new(arch: &'a ArchSpec, ii: u32) -> Self {
        let n = arch.pe_count() * ii as usize;
        Occupancy {
            arch,
            ii,
            hpc: hops_per_cycle(arch),
            bypass: arch.interconnect.bypass_hops() > 0,
            fu: vec![None; n],
            latch: vec![None; n],
            ports: vec![None; n * 4],
            regs: vec![Vec::new(); n],
            load: vec![0; arch.pe_count()],
        }
    }

    fn cell(&self, pe: Coord, cycle: u32) -> usize {
        self.arch.index_of(pe) * self.ii as usize + (cycle % self.ii) as usize
    }

    fn port_cell(&self, pe: Coord, dir: Direction, cycle: u32) -> usize {
        (self.arch.index_of(pe) * 4 + dir.index()) * self.ii as usize + (cycle % self.ii) as usize
    }

    /// Operations placed on `pe`.
    pub fn load(&self, pe: Coord) -> u32 {
        self.load[self.arch.index_of(pe)]
    }

    pub fn fu_free(&self, pe: Coord, time: u32, latency: u32) -> bool {
        self.fu[self.cell(pe, time)].is_none() && self.latch[self.cell(pe, time + latency)].is_none()
    }

    pub fn place(&mut self, node: NodeId, pe: Coord, time: u32, latency: u32) {
        let (a, b) = (self.cell(pe, time), self.cell(pe, time + latency));
        debug_assert!(self.fu[a].is_none() && self.latch[b].is_none());
        self.fu[a] = Some(node);
        self.latch[b] = Some(node);
        self.load[self.arch.index_of(pe)] += 1;
    }

    pub fn unplace(&mut self, pe: Coord, time: u32, latency: u32) {
        let (a, b) = (self.cell(pe, time), self.cell(pe, time + latency));
        self.fu[a] = None;
        self.latch[b] = None;
        self.load[self.arch.index_of(pe)] -= 1;
    }

    /// Cost of sending `value` through a port: 1 if free, 0 if shared, `None`
    /// if taken by something else.
    pub fn port_cost(&self, pe: Coord, dir: Direction, cycle: u32, value: NodeId, latched: bool) -> Option<u32> {
        match self.ports[self.port_cell(pe, dir, cycle)] {
            None => Some(1),
            Some(u) if u.value == value && u.cycle == cycle && u.latched == latched => Some(0),
            Some(_) => None,
        }
    }

    /// Register to hold `value` at `pe` from `cycle` to the next, preferring one
    /// that already does. Returns the index and the cost.
    pub fn reg_pick(&self, pe: Coord, cycle: u32, value: NodeId, avoid: &[u32]) -> Option<(u32, u32)> {
        let pool = &self.regs[self.cell(pe, cycle)];
        if let Some(k) = pool.iter().position(|u| matches!(u, Some(u) if u.value == value && u.cycle == cycle)) {
            return Some((k as u32, 0));
        }
        let cap = self.arch.register_capacity(pe).unwrap_or(u32::MAX);
        (0..cap).find(|k| !avoid.contains(k) && pool.get(*k as usize).is_none_or(|u| u.is_none())).map(|k| (k, 1))
    }

    fn touch(&mut self, step: RouteStep, value: NodeId, latched: bool, add: bool) {
        let slot = match step.res {
            Resource::RoutePort(p, d) => {
                let i = self.port_cell(p, d, step.cycle);
                &mut self.ports[i]
            }
            Resource::Register(p, k) => {
                let i = self.cell(p, step.cycle);
                let pool = &mut self.regs[i];
                if pool.len() <= k as usize {
                    pool.resize(k as usize + 1, None);
                }
                &mut pool[k as usize]
            }
            Resource::Fu(_) => return,
        };
        match (slot.as_mut(), add) {
            (Some(u), true) => u.count += 1,
            (None, true) => *slot = Some(Use { value, cycle: step.cycle, latched, count: 1 }),
            (Some(u), false) => {
                u.count -= 1;
                if u.count == 0 {
                    *slot = None;
                }
            }
            (None, false) => debug_assert!(false, "releasing an unused slot"),
        }
    }

    pub fn commit_step(&mut self, step: RouteStep, value: NodeId, latched: bool) {
        self.touch(step, value, latched, true);
    }

    pub fn release_step(&mut self, step: RouteStep, value: NodeId, latched: bool) {
        self.touch(step, value, latched, false);
    }

    pub fn commit_route(&mut self, value: NodeId, steps: &[RouteStep], end: u32) {
        for (s, l) in steps.iter().zip(latched_flags(steps, end)) {
            self.commit_step(*s, value, l);
        }
    }

    pub fn release_route(&mut self, value: NodeId, steps: &[RouteStep], end: u32) {
        for (s, l) in steps.iter().zip(latched_flags(steps, end)) {
            self.release_step(*s, value, l);
        }
    }

    /// Can a value at `pe` during `cycle`, having made `hops` link traversals
    /// in that cycle, still reach `to` by `end`?
    pub fn reachable(&self, pe: Coord, cycle: u32, hops: u32, to: Coord, end: u32) -> bool {
        let dist = pe.manhattan(to);
        let left = end - cycle;
        if self.bypass {
            dist as u64 <= left as u64 * self.hpc as u64 + (self.hpc - hops) as u64
        } else {
            dist <= left
        }
    }

    /// Cheapest route carrying `value` from `from` during `start` to `to`
    /// during `end`, counting newly claimed slots. Shared slots are free.
    pub fn find_route(
        &self,
        value: NodeId,
        from: Coord,
        start: u32,
        to: Coord,
        end: u32,
    ) -> Option<(Vec<RouteStep>, u32)> {
        if end < start || !self.reachable(from, start, 0, to, end) {
            return None;
        }
        let span = (end - start + 1) as usize;
        let hs = self.hpc as usize + 1;
        let npe = self.arch.pe_count();
        let id = |pe: Coord, c: u32, h: u32| (self.arch.index_of(pe) * span + (c - start) as usize) * hs + h as usize;
        let mut best = vec![u32::MAX; npe * span * hs];
        let mut parent: Vec<Option<(usize, RouteStep)>> = vec![None; npe * span * hs];
        let mut heap = BinaryHeap::new();
        best[id(from, start, 0)] = 0;
        heap.push(Reverse((0u32, start, self.arch.index_of(from), 0u32)));
        let mut goal = None;
        while let Some(Reverse((cost, c, pi, h))) = heap.pop() {
            let pe = self.arch.coord_of(pi);
            let here = id(pe, c, h);
            if cost > best[here] {
                continue;
            }
            if pe == to && c == end {
                goal = Some(here);
                break;
            }
            let mut relax = |heap: &mut BinaryHeap<_>, q: Coord, c2: u32, h2: u32, add: u32, step: RouteStep| {
                if !self.reachable(q, c2, h2, to, end) {
                    return;
                }
                let next = id(q, c2, h2);
                if cost + add < best[next] {
                    best[next] = cost + add;
                    parent[next] = Some((here, step));
                    heap.push(Reverse((cost + add, c2, self.arch.index_of(q), h2)));
                }
            };
            if c < end {
                if let Some((k, add)) = self.reg_pick(pe, c, value, &[]) {
                    let step = RouteStep { res: Resource::Register(pe, k), cycle: c };
                    relax(&mut heap, pe, c + 1, 0, add, step);
                }
            }
            if h >= self.hpc {
                continue;
            }
            for dir in Direction::ALL {
                let Some(q) = self.arch.neighbor(pe, dir) else { continue };
                let step = RouteStep { res: Resource::RoutePort(pe, dir), cycle: c };
                if c < end {
                    if let Some(add) = self.port_cost(pe, dir, c, value, true) {
                        relax(&mut heap, q, c + 1, 0, add, step);
                    }
                }
                if self.bypass {
                    if let Some(add) = self.port_cost(pe, dir, c, value, false) {
                        relax(&mut heap, q, c, h + 1, add, step);
                    }
                }
            }
        }
        let mut at = goal?;
        let cost = best[at];
        let mut steps = Vec::new();
        while let Some((prev, step)) = parent[at] {
            steps.push(step);
            at = prev;
        }
        steps.reverse();
        self.settle(value, &mut steps, end).then_some((steps, cost))
    }

    /// Reassigns register indices so the route does not collide with itself
    /// across iterations and rejects routes reusing a port slot.
    fn settle(&self, value: NodeId, steps: &mut [RouteStep], end: u32) -> bool {
        let flags = latched_flags(steps, end);
        let mut taken: Vec<(usize, u32)> = Vec::new();
        let mut ports: Vec<(usize, u32, bool)> = Vec::new();
        for (s, latched) in steps.iter_mut().zip(flags) {
            match s.res {
                Resource::Register(pe, _) => {
                    let cell = self.cell(pe, s.cycle);
                    let avoid: Vec<u32> = taken.iter().filter(|t| t.0 == cell).map(|t| t.1).collect();
                    let Some((k, _)) = self.reg_pick(pe, s.cycle, value, &avoid) else { return false };
                    if avoid.contains(&k) {
                        return false;
                    }
                    taken.push((cell, k));
                    s.res = Resource::Register(pe, k);
                }
                Resource::RoutePort(pe, d) => {
                    let cell = self.port_cell(pe, d, s.cycle);
                    if ports.iter().any(|p| p.0 == cell && (p.1, p.2) != (s.cycle, latched)) {
                        return false;
                    }
                    ports.push((cell, s.cycle, latched));
                }
                Resource::Fu(_) => return false,
            }
        }
        true
    }
}
