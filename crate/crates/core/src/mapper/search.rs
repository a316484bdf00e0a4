//! Partial-mapping state shared by the constructive mappers.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::occupancy::Occupancy;
use super::{path_weights, Mapping, Placement, RouteStep};
use crate::arch::{ArchSpec, Coord};
use crate::dfg::{Dfg, EdgeId, NodeId};

/// Where an edge's value starts and where it must end up.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Ends {
    pub value: NodeId,
    pub from: Coord,
    pub start: u32,
    pub to: Coord,
    pub end: u32,
}

pub(crate) struct Partial<'a> {
    pub dfg: &'a Dfg,
    pub arch: &'a ArchSpec,
    pub ii: u32,
    pub occ: Occupancy<'a>,
    pub place: Vec<Option<Placement>>,
    pub routes: BTreeMap<EdgeId, Vec<RouteStep>>,
    weights: Vec<Vec<Option<i64>>>,
    ins: Vec<Vec<EdgeId>>,
    outs: Vec<Vec<EdgeId>>,
}

impl<'a> Partial<'a> {
    pub fn new(dfg: &'a Dfg, arch: &'a ArchSpec, ii: u32) -> Self {
        let (ins, outs) = dfg.adjacency();
        Partial {
            dfg,
            arch,
            ii,
            occ: Occupancy::new(arch, ii),
            place: vec![None; dfg.len()],
            routes: BTreeMap::new(),
            weights: path_weights(dfg, ii),
            ins,
            outs,
        }
    }

    pub fn latency(&self, n: NodeId) -> u32 {
        self.dfg.nodes[n].latency
    }

    /// Start times of `n` on `pe` consistent with every placed node, ignoring
    /// resources. `None` if the interval is empty.
    pub fn window(&self, n: NodeId, pe: Coord) -> Option<(u32, u32)> {
        let ii = self.ii as i64;
        let (mut lo, mut hi) = (0i64, i64::MAX);
        for (m, p) in self.place.iter().enumerate() {
            let Some(p) = p else { continue };
            let t = p.time as i64;
            if let Some(w) = self.weights[m][n] {
                lo = lo.max(t + w);
            }
            if let Some(w) = self.weights[n][m] {
                hi = hi.min(t - w);
            }
        }
        let hop = |a: Coord, b: Coord| self.arch.hop_cycles(a.manhattan(b)) as i64;
        for &e in &self.ins[n] {
            let e = &self.dfg.edges[e];
            if let (true, Some(p)) = (e.is_data() && e.src != n, self.place[e.src]) {
                lo = lo.max(p.time as i64 + self.latency(e.src) as i64 + hop(p.pe, pe) - ii * e.distance as i64);
            }
        }
        for &e in &self.outs[n] {
            let e = &self.dfg.edges[e];
            if let (true, Some(p)) = (e.is_data() && e.dst != n, self.place[e.dst]) {
                hi = hi.min(p.time as i64 + ii * e.distance as i64 - self.latency(n) as i64 - hop(pe, p.pe));
            }
        }
        (lo <= hi && hi >= 0).then(|| (lo as u32, hi.min(u32::MAX as i64 / 2) as u32))
    }

    /// Data edges to route once `n` is placed: those whose other endpoint is
    /// already placed, in id order.
    pub fn pending_edges(&self, n: NodeId) -> Vec<EdgeId> {
        let mut v: Vec<EdgeId> = self.ins[n]
            .iter()
            .chain(&self.outs[n])
            .copied()
            .filter(|&e| {
                let e = &self.dfg.edges[e];
                e.is_data() && self.place[e.src].is_some() && self.place[e.dst].is_some()
            })
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn ends(&self, e: EdgeId) -> Option<Ends> {
        let e = &self.dfg.edges[e];
        let (s, d) = (self.place[e.src]?, self.place[e.dst]?);
        Some(Ends {
            value: e.src,
            from: s.pe,
            start: s.time + self.latency(e.src),
            to: d.pe,
            end: d.time + e.distance * self.ii,
        })
    }

    pub fn set(&mut self, n: NodeId, pe: Coord, time: u32) {
        self.occ.place(n, pe, time, self.latency(n));
        self.place[n] = Some(Placement { pe, time });
    }

    pub fn unset(&mut self, n: NodeId) {
        if let Some(p) = self.place[n].take() {
            self.occ.unplace(p.pe, p.time, self.latency(n));
        }
    }

    /// Routes `edges` one after another with the cheapest available paths.
    /// On failure everything routed here is released again.
    pub fn route_all(&mut self, edges: &[EdgeId]) -> Option<u32> {
        let mut total = 0;
        for (i, &e) in edges.iter().enumerate() {
            let ends = self.ends(e)?;
            match self.occ.find_route(ends.value, ends.from, ends.start, ends.to, ends.end) {
                Some((steps, cost)) => {
                    self.occ.commit_route(ends.value, &steps, ends.end);
                    self.routes.insert(e, steps);
                    total += cost;
                }
                None => {
                    self.unroute(&edges[..i]);
                    return None;
                }
            }
        }
        Some(total)
    }

    pub fn unroute(&mut self, edges: &[EdgeId]) {
        for &e in edges {
            if let (Some(steps), Some(ends)) = (self.routes.remove(&e), self.ends(e)) {
                self.occ.release_route(ends.value, &steps, ends.end);
            }
        }
    }

    pub fn to_mapping(&self) -> Mapping {
        let mut m = Mapping::new(self.ii);
        for (n, p) in self.place.iter().enumerate() {
            if let Some(p) = p {
                m.place.insert(n, *p);
            }
        }
        for e in &self.dfg.edges {
            if e.is_data() {
                m.routes.insert(e.id, self.routes.get(&e.id).cloned().unwrap_or_default());
            }
        }
        m
    }
}
