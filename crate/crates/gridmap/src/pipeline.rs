//! Kernel → graph → mapping → simulation, shared by the CLI and the bench.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use gridmap_core::arch::ArchSpec;
use gridmap_core::dfg::{build_dfg_with, Dfg, DfgError, DfgOptions};
use gridmap_core::loopir::{
    flatten, gen_data, iteration_count, reference_exec, unroll, DataError, ExecError, LoopNest, TransformError,
};
use gridmap_core::mapper::{
    map_anneal, map_anneal_search, map_backtrack, map_exhaustive, map_greedy_at, map_heuristic, AnnealParams,
    BacktrackParams, ExhaustiveOutcome, MapFailure, Mapping, DEFAULT_EXHAUSTIVE_BUDGET, GREEDY,
};
use gridmap_core::sched::min_ii;
use gridmap_core::sim::{compare_mem, simulate, MemComparison, SimError, SimOptions, SimReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, clap::ValueEnum)]
pub enum MapperKind {
    Exhaustive,
    Heuristic,
    Backtrack,
    Anneal,
}

impl MapperKind {
    pub const ALL: [MapperKind; 4] =
        [MapperKind::Exhaustive, MapperKind::Heuristic, MapperKind::Backtrack, MapperKind::Anneal];

    pub fn name(self) -> &'static str {
        match self {
            MapperKind::Exhaustive => "exhaustive",
            MapperKind::Heuristic => "heuristic",
            MapperKind::Backtrack => "backtrack",
            MapperKind::Anneal => "anneal",
        }
    }
}

impl fmt::Display for MapperKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MapperKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        MapperKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown mapper `{s}` (expected exhaustive, heuristic, backtrack or anneal)"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Graph(#[from] DfgError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("reference run failed: {0}")]
    Reference(#[from] ExecError),
    #[error("simulation failed: {0}")]
    Sim(#[from] SimError),
}

/// Source-level transforms requested on the command line.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Transforms {
    pub flatten: bool,
    pub unroll: Option<u32>,
}

pub fn transform(nest: &LoopNest, t: Transforms) -> Result<LoopNest, TransformError> {
    let mut n = nest.clone();
    if t.flatten {
        n = flatten(&n)?;
    }
    if let Some(k) = t.unroll {
        n = unroll(&n, k)?;
    }
    Ok(n)
}

/// Builds the graph with memory latencies taken from the target.
pub fn graph_for(nest: &LoopNest, arch: &ArchSpec) -> Result<Dfg, DfgError> {
    build_dfg_with(nest, &DfgOptions { mem_latency: arch.spm.latency, ..DfgOptions::default() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapRequest {
    pub mapper: MapperKind,
    /// Try only this II instead of searching upwards.
    pub ii: Option<u32>,
    pub max_ii: u32,
    pub seed: u64,
}

/// Runs the selected mapper and stamps the mapping with its wall time.
pub fn run_mapper(dfg: &Dfg, arch: &ArchSpec, req: MapRequest) -> Result<Mapping, MapFailure> {
    let start = Instant::now();
    let mut m = match (req.mapper, req.ii) {
        (MapperKind::Heuristic, None) => map_heuristic(dfg, arch, req.max_ii)?,
        (MapperKind::Backtrack, None) => map_backtrack(dfg, arch, req.max_ii)?,
        (MapperKind::Anneal, None) => map_anneal_search(dfg, arch, req.max_ii, req.seed, AnnealParams::default())?,
        (MapperKind::Exhaustive, None) => {
            let cap = req.max_ii.min(arch.max_ii());
            let mut found = None;
            for ii in min_ii(dfg, arch)?..=cap {
                match map_exhaustive(dfg, arch, ii, DEFAULT_EXHAUSTIVE_BUDGET)? {
                    ExhaustiveOutcome::Found(m) => {
                        found = Some(m);
                        break;
                    }
                    ExhaustiveOutcome::Infeasible => {}
                    ExhaustiveOutcome::BudgetExhausted => return Err(MapFailure::BudgetExhausted(ii)),
                }
            }
            found.ok_or(MapFailure::MaxIiReached(cap))?
        }
        (kind, Some(ii)) => {
            let got = match kind {
                MapperKind::Heuristic => map_greedy_at(dfg, arch, ii, GREEDY)?,
                MapperKind::Backtrack => map_greedy_at(dfg, arch, ii, BacktrackParams::default())?,
                MapperKind::Anneal => map_anneal(dfg, arch, ii, req.seed, AnnealParams::default())?,
                MapperKind::Exhaustive => match map_exhaustive(dfg, arch, ii, DEFAULT_EXHAUSTIVE_BUDGET)? {
                    ExhaustiveOutcome::Found(m) => Some(m),
                    ExhaustiveOutcome::Infeasible => None,
                    ExhaustiveOutcome::BudgetExhausted => return Err(MapFailure::BudgetExhausted(ii)),
                },
            };
            got.ok_or(MapFailure::MaxIiReached(ii))?
        }
    };
    m.wall_time = start.elapsed();
    Ok(m)
}

/// Result of running a mapped kernel against the reference interpreter.
#[derive(Debug, Clone)]
pub struct Check {
    pub report: SimReport,
    pub comparison: MemComparison,
}

/// Simulates `m` on generated data and diffs the outputs against the
/// reference interpreter.
pub fn check_mapping(
    nest: &LoopNest,
    dfg: &Dfg,
    arch: &ArchSpec,
    m: &Mapping,
    seed: u64,
    opts: SimOptions,
) -> Result<Check, PipelineError> {
    let mem = gen_data(nest, seed, arch.spm.size_words)?;
    let expected = reference_exec(nest, &mem)?;
    let iters = iteration_count(nest)?;
    let report = simulate(dfg, arch, m, &mem, iters, opts)?;
    let comparison = compare_mem(&report.final_mem, &expected).expect("both images share the kernel layout");
    Ok(Check { report, comparison })
}

#[cfg(test)]
mod tests {
    use super::*;
    use gridmap_core::loopir::builtin_kernel;
    use gridmap_core::mapper::validate_mapping;

    #[test]
    fn mapper_names_round_trip() {
        for k in MapperKind::ALL {
            assert_eq!(k.name().parse::<MapperKind>(), Ok(k));
        }
        assert!("pathfinder".parse::<MapperKind>().is_err());
    }

    #[test]
    fn every_mapper_on_a_small_kernel() {
        let arch = ArchSpec::mesh(3, 3);
        let nest = transform(&builtin_kernel("mvt", 2).unwrap(), Transforms { flatten: true, unroll: None }).unwrap();
        let g = graph_for(&nest, &arch).unwrap();
        for mapper in [MapperKind::Heuristic, MapperKind::Backtrack, MapperKind::Anneal] {
            let m = run_mapper(&g, &arch, MapRequest { mapper, ii: None, max_ii: 60, seed: 1 }).unwrap();
            assert!(validate_mapping(&g, &arch, &m).is_empty());
            let c = check_mapping(&nest, &g, &arch, &m, 3, SimOptions::default()).unwrap();
            assert_eq!(c.comparison.mismatches, 0, "{mapper}");
        }
    }

    #[test]
    fn fixed_ii_requests() {
        let arch = ArchSpec::mesh(4, 4);
        let nest = builtin_kernel("gemm", 4).unwrap();
        let g = graph_for(&nest, &arch).unwrap();
        let lb = min_ii(&g, &arch).unwrap();
        let below = MapRequest { mapper: MapperKind::Heuristic, ii: Some(lb - 1), max_ii: 60, seed: 0 };
        assert!(matches!(run_mapper(&g, &arch, below), Err(MapFailure::BelowMinIi { .. })));
        let free = run_mapper(&g, &arch, MapRequest { mapper: MapperKind::Backtrack, ii: None, ..below }).unwrap();
        let at =
            run_mapper(&g, &arch, MapRequest { mapper: MapperKind::Backtrack, ii: Some(free.ii), ..below }).unwrap();
        assert_eq!(at, free);
        let cap = MapRequest { mapper: MapperKind::Heuristic, ii: None, max_ii: 1, seed: 0 };
        assert_eq!(run_mapper(&g, &arch, cap), Err(MapFailure::MaxIiReached(1)));
    }
}
