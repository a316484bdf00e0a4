//! Benchmark harness: builtin kernels × transforms × targets × mappers, each
//! successful mapping simulated and diffed against the reference run.

use std::fmt::Write as _;

use gridmap_core::arch::ArchSpec;
use gridmap_core::loopir::{BuiltinKernel, BUILTIN_KERNELS};
use gridmap_core::mapper::mapping_report;
use gridmap_core::sim::SimOptions;
use rayon::prelude::*;

use crate::pipeline::{check_mapping, graph_for, run_mapper, transform, MapRequest, MapperKind, Transforms};

pub const CSV_HEADER: [&str; 11] = [
    "kernel",
    "optimization",
    "arch",
    "mapper",
    "ops",
    "ii",
    "unused_pe",
    "max_ops_per_pe",
    "map_ms",
    "mismatches",
    "status",
];

/// Unroll factor of the `flat+unroll` variant.
pub const UNROLL_FACTOR: u32 = 2;

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub size: u32,
    pub kernels: Vec<BuiltinKernel>,
    pub mappers: Vec<MapperKind>,
    pub arches: Vec<(String, ArchSpec)>,
    pub seed: u64,
    pub max_ii: u32,
    pub threads: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            size: 4,
            kernels: BUILTIN_KERNELS.to_vec(),
            mappers: vec![MapperKind::Heuristic],
            arches: reference_arches(),
            seed: 0,
            max_ii: 60,
            threads: None,
        }
    }
}

/// The two shipped targets: a plain 4×4 mesh and a 4×4 HyCube with three
/// hops per cycle.
pub fn reference_arches() -> Vec<(String, ArchSpec)> {
    vec![("mesh4x4".into(), ArchSpec::mesh(4, 4)), ("hycube4x4".into(), ArchSpec::hycube(4, 4, 3))]
}

/// Thread count requested through `GRIDMAP_THREADS`, if set and positive.
pub fn threads_from_env() -> Option<usize> {
    std::env::var("GRIDMAP_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub kernel: String,
    pub optimization: String,
    pub arch: String,
    pub mapper: MapperKind,
    pub ops: usize,
    pub ii: Option<u32>,
    pub unused_pe: Option<usize>,
    pub max_ops_per_pe: Option<usize>,
    pub map_ms: f64,
    pub mismatches: Option<u64>,
    /// `ok`, or `FAILED: <reason>`.
    pub status: String,
}

impl BenchRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }

    fn key(&self) -> (&str, &str, &str, &str) {
        (&self.kernel, &self.optimization, &self.arch, self.mapper.name())
    }
}

#[derive(Debug, Clone, Copy)]
struct Job<'a> {
    kernel: BuiltinKernel,
    opt: &'static str,
    arch: &'a (String, ArchSpec),
    mapper: MapperKind,
}

fn run_job(cfg: &BenchConfig, job: Job<'_>) -> BenchRow {
    let (arch_name, arch) = job.arch;
    let mut row = BenchRow {
        kernel: job.kernel.name().into(),
        optimization: job.opt.into(),
        arch: arch_name.clone(),
        mapper: job.mapper,
        ops: 0,
        ii: None,
        unused_pe: None,
        max_ops_per_pe: None,
        map_ms: 0.0,
        mismatches: None,
        status: String::new(),
    };
    let t = Transforms { flatten: true, unroll: (job.opt == "flat+unroll").then_some(UNROLL_FACTOR) };
    let nest = match transform(&job.kernel.build(cfg.size), t) {
        Ok(n) => n,
        Err(e) => {
            row.status = format!("FAILED: {e}");
            return row;
        }
    };
    let dfg = match graph_for(&nest, arch) {
        Ok(g) => g,
        Err(e) => {
            row.status = format!("FAILED: {e}");
            return row;
        }
    };
    row.ops = dfg.len();
    let req = MapRequest { mapper: job.mapper, ii: None, max_ii: cfg.max_ii, seed: cfg.seed };
    let m = match run_mapper(&dfg, arch, req) {
        Ok(m) => m,
        Err(e) => {
            row.status = format!("FAILED: {e}");
            return row;
        }
    };
    row.map_ms = m.wall_time.as_secs_f64() * 1e3;
    row.ii = Some(m.ii);
    match mapping_report(&dfg, arch, &m) {
        Ok(r) => {
            row.unused_pe = Some(r.unused_pe);
            row.max_ops_per_pe = Some(r.max_ops_per_pe);
        }
        Err(v) => {
            row.status = format!("FAILED: mapper produced {} violations", v.len());
            return row;
        }
    }
    row.status = match check_mapping(&nest, &dfg, arch, &m, cfg.seed, SimOptions::default()) {
        Ok(c) => {
            row.mismatches = Some(c.comparison.mismatches);
            if c.comparison.mismatches == 0 {
                "ok".into()
            } else {
                format!("FAILED: {} output mismatches", c.comparison.mismatches)
            }
        }
        Err(e) => format!("FAILED: {e}"),
    };
    row
}

/// Runs every configured combination; rows come back in canonical order
/// (kernel, optimization, arch, mapper) whatever the completion order.
pub fn run_bench(cfg: &BenchConfig) -> Vec<BenchRow> {
    let mut jobs = Vec::new();
    for &kernel in &cfg.kernels {
        for opt in ["flat", "flat+unroll"] {
            for arch in &cfg.arches {
                for &mapper in &cfg.mappers {
                    jobs.push(Job { kernel, opt, arch, mapper });
                }
            }
        }
    }
    let work = || jobs.par_iter().map(|&j| run_job(cfg, j)).collect::<Vec<_>>();
    let mut rows = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build().expect("thread pool").install(work),
        None => work(),
    };
    rows.sort_by(|a, b| a.key().cmp(&b.key()));
    rows
}

fn opt_cell<T: ToString>(x: Option<T>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

/// CSV rendering. Wall times vary run to run, so `map_ms` is left empty
/// unless `timings` is set; that keeps the default output reproducible.
pub fn rows_to_csv(rows: &[BenchRow], timings: bool) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.kernel.clone(),
            r.optimization.clone(),
            r.arch.clone(),
            r.mapper.name().to_string(),
            r.ops.to_string(),
            opt_cell(r.ii),
            opt_cell(r.unused_pe),
            opt_cell(r.max_ops_per_pe),
            if timings { format!("{:.3}", r.map_ms) } else { String::new() },
            opt_cell(r.mismatches),
            r.status.clone(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV output is UTF-8")
}

/// Aligned text table for the terminal.
pub fn render_table(rows: &[BenchRow]) -> String {
    let cells: Vec<[String; 11]> = rows
        .iter()
        .map(|r| {
            [
                r.kernel.clone(),
                r.optimization.clone(),
                r.arch.clone(),
                r.mapper.name().into(),
                r.ops.to_string(),
                r.ii.map_or_else(|| "FAILED".into(), |v| v.to_string()),
                opt_cell(r.unused_pe),
                opt_cell(r.max_ops_per_pe),
                format!("{:.1}", r.map_ms),
                opt_cell(r.mismatches),
                r.status.clone(),
            ]
        })
        .collect();
    let mut width = CSV_HEADER.map(str::len);
    for c in &cells {
        for (w, s) in width.iter_mut().zip(c) {
            *w = (*w).max(s.len());
        }
    }
    let mut out = String::new();
    let mut line = |c: &[&str]| {
        let parts: Vec<String> = c.iter().zip(width).map(|(s, w)| format!("{s:<w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&CSV_HEADER);
    for c in &cells {
        line(&c.each_ref().map(String::as_str));
    }
    out
}
