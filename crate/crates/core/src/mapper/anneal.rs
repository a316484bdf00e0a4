//! Simulated-annealing placer. Placements are scored without routing; once a
//! state has no resource or timing conflicts the router is tried on it.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::search::Partial;
use super::{asap, schedule_horizon, MapFailure, Mapping};
use crate::arch::{ArchSpec, Coord};
use crate::dfg::Dfg;
use crate::sched::min_ii;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealParams {
    pub t0: f64,
    /// Multiplicative temperature decay per step.
    pub cooling: f64,
    /// Steps per II; defaults to `50 · nodes · ii`.
    pub iterations: Option<u64>,
}

impl Default for AnnealParams {
    fn default() -> Self {
        AnnealParams { t0: 10.0, cooling: 0.995, iterations: None }
    }
}

const HARD_WEIGHT: f64 = 10.0;

/// Anneals at exactly `ii`. `Ok(None)` when no routable state was reached.
pub fn map_anneal(
    dfg: &Dfg,
    arch: &ArchSpec,
    ii: u32,
    seed: u64,
    params: AnnealParams,
) -> Result<Option<Mapping>, MapFailure> {
    dfg.check().map_err(|e| MapFailure::Sched(e.into()))?;
    let lb = min_ii(dfg, arch)?;
    if ii < lb {
        return Err(MapFailure::BelowMinIi { ii, min_ii: lb });
    }
    if ii > arch.max_ii() {
        return Ok(None);
    }
    let n = dfg.len();
    if n == 0 {
        return Ok(Some(Mapping::new(ii)));
    }
    let horizon = schedule_horizon(dfg, arch, ii)?;
    let caps: Vec<Vec<Coord>> =
        dfg.nodes.iter().map(|x| arch.capable_pes(x.opcode.kind()).into_iter().collect()).collect();
    let start = asap(dfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pe: Vec<Coord> = caps.iter().map(|c| c[rng.gen_range(0..c.len())]).collect();
    let mut time: Vec<u32> = start.iter().map(|&t| (t + rng.gen_range(0..ii)).min(horizon - 1)).collect();

    let score = Scorer { dfg, arch, ii };
    let (mut hard, mut cost) = score.eval(&pe, &time);
    if hard == 0 {
        if let Some(m) = route(dfg, arch, ii, &pe, &time) {
            return Ok(Some(m));
        }
    }
    let iters = params.iterations.unwrap_or(50 * n as u64 * ii as u64);
    let mut temp = params.t0;
    for _ in 0..iters {
        let v = rng.gen_range(0..n);
        let old = (pe[v], time[v]);
        if rng.gen_bool(0.5) {
            pe[v] = caps[v][rng.gen_range(0..caps[v].len())];
        } else {
            time[v] = rng.gen_range(0..horizon);
        }
        let (h, c) = score.eval(&pe, &time);
        let delta = c - cost;
        let accept = delta <= 0.0 || rng.gen::<f64>() < libm::exp(-delta / temp);
        if accept {
            (hard, cost) = (h, c);
            if hard == 0 {
                if let Some(m) = route(dfg, arch, ii, &pe, &time) {
                    return Ok(Some(m));
                }
            }
        } else {
            (pe[v], time[v]) = old;
        }
        temp *= params.cooling;
    }
    Ok(None)
}

/// Anneals at each II from the lower bound up to `max_ii`.
pub fn map_anneal_search(
    dfg: &Dfg,
    arch: &ArchSpec,
    max_ii: u32,
    seed: u64,
    params: AnnealParams,
) -> Result<Mapping, MapFailure> {
    dfg.check().map_err(|e| MapFailure::Sched(e.into()))?;
    let cap = max_ii.min(arch.max_ii());
    for ii in min_ii(dfg, arch)?..=cap {
        if let Some(m) = map_anneal(dfg, arch, ii, seed, params)? {
            return Ok(m);
        }
    }
    Err(MapFailure::MaxIiReached(cap))
}

struct Scorer<'a> {
    dfg: &'a Dfg,
    arch: &'a ArchSpec,
    ii: u32,
}

impl Scorer<'_> {
    /// Number of hard conflicts and the weighted cost.
    fn eval(&self, pe: &[Coord], time: &[u32]) -> (u32, f64) {
        let ii = self.ii as usize;
        let mut fu = vec![0u32; self.arch.pe_count() * ii];
        let mut out = vec![0u32; self.arch.pe_count() * ii];
        let mut hard = 0u32;
        for x in &self.dfg.nodes {
            let base = self.arch.index_of(pe[x.id]) * ii;
            for (table, t) in [(&mut fu, time[x.id]), (&mut out, time[x.id] + x.latency)] {
                let cell = &mut table[base + t as usize % ii];
                hard += (*cell > 0) as u32;
                *cell += 1;
            }
        }
        let mut wire = 0u32;
        for e in &self.dfg.edges {
            let mut need = time[e.src] as i64 + self.dfg.edge_delay(e) as i64;
            if e.is_data() {
                let d = pe[e.src].manhattan(pe[e.dst]);
                need += self.arch.hop_cycles(d) as i64;
                wire += d;
            }
            let have = time[e.dst] as i64 + e.distance as i64 * self.ii as i64;
            hard += (need - have).max(0) as u32;
        }
        (hard, HARD_WEIGHT * hard as f64 + wire as f64)
    }
}

fn route(dfg: &Dfg, arch: &ArchSpec, ii: u32, pe: &[Coord], time: &[u32]) -> Option<Mapping> {
    let mut p = Partial::new(dfg, arch, ii);
    for n in 0..dfg.len() {
        p.set(n, pe[n], time[n]);
    }
    let edges: Vec<_> = dfg.edges.iter().filter(|e| e.is_data()).map(|e| e.id).collect();
    p.route_all(&edges)?;
    Some(p.to_mapping())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dfg::{Opcode, Section};
    use crate::mapper::validate_mapping;

    fn diamond() -> Dfg {
        let mut g = Dfg::new();
        for _ in 0..4 {
            g.add_node(Opcode::Add, 1, Section::Compute);
        }
        g.add_data_edge(0, 1, 0, 0);
        g.add_data_edge(0, 2, 0, 0);
        g.add_data_edge(1, 3, 0, 0);
        g.add_data_edge(2, 3, 1, 0);
        g
    }

    #[test]
    fn finds_valid_and_is_deterministic() {
        let g = diamond();
        let arch = ArchSpec::mesh(2, 2);
        let a = map_anneal_search(&g, &arch, 8, 42, AnnealParams::default()).unwrap();
        assert!(validate_mapping(&g, &arch, &a).is_empty());
        let b = map_anneal_search(&g, &arch, 8, 42, AnnealParams::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn below_min_ii_is_rejected() {
        let g = diamond();
        let arch = ArchSpec::mesh(1, 1);
        assert_eq!(
            map_anneal(&g, &arch, 2, 0, AnnealParams::default()),
            Err(MapFailure::BelowMinIi { ii: 2, min_ii: 4 })
        );
    }
}
