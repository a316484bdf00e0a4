//! The `gridmap` command line.
//!
//! Exit codes: 0 on success, 1 on usage or input errors, 2 when mapping
//! fails or a simulation disagrees with the reference run.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use gridmap_core::arch::ArchSpec;
use gridmap_core::dfg::{dfg_stats, Dfg};
use gridmap_core::loopir::{BuiltinKernel, LoopNest};
use gridmap_core::mapper::{mapping_report, Mapping};
use gridmap_core::sched::{min_ii, rec_mii};
use gridmap_core::sim::{SimError, SimOptions};

use crate::archfile::load_arch;
use crate::bench::{render_table, rows_to_csv, run_bench, threads_from_env, BenchConfig};
use crate::dfgfile::{dump, to_dot};
use crate::kernelfile::load_kernel;
use crate::mapfile::{export_mapping_csv, load_mapping, mapping_to_json, sidecar_path};
use crate::pipeline::{
    check_mapping, graph_for, run_mapper, transform, MapRequest, MapperKind, PipelineError, Transforms,
};

#[derive(Debug, Parser)]
#[command(name = "gridmap", version, about = "Map loop kernels onto coarse-grained reconfigurable arrays")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and check an architecture document.
    ArchValidate {
        /// Architecture file (alternatively `--arch`).
        file: Option<PathBuf>,
        #[arg(long)]
        arch: Option<PathBuf>,
    },
    /// Build the data-flow graph of a kernel and print its statistics.
    Dfg {
        #[command(flatten)]
        kernel: KernelArgs,
        /// Target whose SPM latency sets the memory-node latency.
        #[arg(long)]
        arch: Option<PathBuf>,
        /// Write Graphviz output here.
        #[arg(long)]
        dot: Option<PathBuf>,
        /// Write the line-based graph dump here.
        #[arg(long)]
        dump: Option<PathBuf>,
        /// Write `dfg.dot` and `dfg.txt` into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Map a kernel and write the mapping CSV, its JSON sidecar, the DOT
    /// graph and a report.
    Map {
        #[command(flatten)]
        kernel: KernelArgs,
        #[command(flatten)]
        target: TargetArgs,
        #[command(flatten)]
        mapper: MapperArgs,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run a mapping cycle by cycle and compare memory with the reference.
    Simulate {
        #[command(flatten)]
        kernel: KernelArgs,
        #[command(flatten)]
        target: TargetArgs,
        #[command(flatten)]
        mapper: MapperArgs,
        /// Mapping CSV written by `map`; its `.json` sidecar must sit next
        /// to it. Without it the kernel is mapped first.
        #[arg(long)]
        mapping: Option<PathBuf>,
        /// Print one line per operation firing.
        #[arg(long)]
        trace: bool,
        /// Write the trace to `trace.txt` here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the benchmark suite.
    Bench {
        /// Comma-separated builtin kernel names (default: all five).
        #[arg(long, value_delimiter = ',')]
        kernels: Vec<String>,
        /// Comma-separated mappers.
        #[arg(long, value_delimiter = ',', value_enum, default_value = "heuristic")]
        mappers: Vec<MapperKind>,
        #[arg(long, default_value_t = 4)]
        size: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 60)]
        max_ii: u32,
        /// Directory for `bench.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Record wall times in the CSV (makes it run-dependent).
        #[arg(long)]
        timings: bool,
    },
}

#[derive(Debug, Args)]
struct KernelArgs {
    /// Kernel file or `builtin:NAME:SIZE`.
    #[arg(long)]
    kernel: String,
    #[arg(long)]
    flatten: bool,
    #[arg(long)]
    unroll: Option<u32>,
}

#[derive(Debug, Args)]
struct TargetArgs {
    #[arg(long)]
    arch: PathBuf,
    #[arg(long)]
    infinite_registers: bool,
}

#[derive(Debug, Args)]
struct MapperArgs {
    #[arg(long, value_enum, default_value = "heuristic")]
    mapper: MapperKind,
    /// Try this II only.
    #[arg(long)]
    ii: Option<u32>,
    #[arg(long, default_value_t = 60)]
    max_ii: u32,
    /// Seed for annealing and for the generated test data.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug)]
enum Failure {
    /// Bad flags or unreadable inputs.
    Usage(String),
    /// Mapping or simulation did not succeed.
    Run(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Run(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Run(m) => m,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                1
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    match dispatch(cli.cmd, out) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message());
            f.code()
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<(), Failure> {
    match cmd {
        Command::ArchValidate { file, arch } => {
            let path = file.or(arch).ok_or_else(|| usage("an architecture file is required"))?;
            let a = load_arch(&path).map_err(usage)?;
            emit(out, &arch_summary(&a))
        }
        Command::Dfg { kernel, arch, dot, dump: dump_to, out: dir } => {
            let target = match arch {
                Some(p) => load_arch(&p).map_err(usage)?,
                None => ArchSpec::mesh(1, 1),
            };
            let (_, g) = load_graph(&kernel, &target)?;
            if let Some(p) = dot {
                write_file(&p, &to_dot(&g))?;
            }
            if let Some(p) = dump_to {
                write_file(&p, &dump(&g))?;
            }
            if let Some(d) = dir {
                create_dir(&d)?;
                write_file(&d.join("dfg.dot"), &to_dot(&g))?;
                write_file(&d.join("dfg.txt"), &dump(&g))?;
            }
            emit(out, &graph_summary(&g))
        }
        Command::Map { kernel, target, mapper, out: dir } => {
            let arch = load_target(&target)?;
            let (_, g) = load_graph(&kernel, &arch)?;
            let m = map(&g, &arch, &mapper)?;
            let report = mapping_text(&g, &arch, &m);
            create_dir(&dir)?;
            let csv = dir.join("mapping.csv");
            write_file(&csv, &export_mapping_csv(&m))?;
            write_file(&sidecar_path(&csv), &mapping_to_json(&m))?;
            write_file(&dir.join("dfg.dot"), &to_dot(&g))?;
            write_file(&dir.join("report.txt"), &report)?;
            emit(out, &report)
        }
        Command::Simulate { kernel, target, mapper, mapping, trace, out: dir } => {
            let arch = load_target(&target)?;
            let (nest, g) = load_graph(&kernel, &arch)?;
            let m = match mapping {
                Some(p) => load_mapping(&p).map_err(usage)?,
                None => map(&g, &arch, &mapper)?,
            };
            let opts = SimOptions { trace, ..SimOptions::default() };
            let check = check_mapping(&nest, &g, &arch, &m, mapper.seed, opts).map_err(|e| match e {
                PipelineError::Sim(SimError::Invalid(v)) => {
                    let mut s = format!("mapping does not fit this kernel and target ({} violations)", v.len());
                    for x in v.iter().take(5) {
                        let _ = write!(s, "\n  {x}");
                    }
                    Failure::Usage(s)
                }
                PipelineError::Sim(e) => Failure::Run(e.to_string()),
                other => usage(other),
            })?;
            if trace {
                let lines: String = check.report.trace.iter().map(|f| format!("{f}\n")).collect();
                match &dir {
                    Some(d) => {
                        create_dir(d)?;
                        write_file(&d.join("trace.txt"), &lines)?;
                    }
                    None => emit(out, &lines)?,
                }
            }
            let c = &check.comparison;
            emit(
                out,
                &format!(
                    "ii {}\ncycles {}\nfirings {}\nthroughput {:.4}\nmatches {}\nmismatches {}\n",
                    m.ii,
                    check.report.total_cycles,
                    check.report.firings,
                    check.report.throughput,
                    c.matches,
                    c.mismatches
                ),
            )?;
            if c.mismatches > 0 {
                return Err(Failure::Run(format!(
                    "{} output words differ from the reference (first at address {})",
                    c.mismatches,
                    c.first_mismatch.unwrap_or(0)
                )));
            }
            Ok(())
        }
        Command::Bench { kernels, mappers, size, seed, max_ii, out: dir, timings } => {
            let mut cfg =
                BenchConfig { size, seed, max_ii, mappers, threads: threads_from_env(), ..BenchConfig::default() };
            if size == 0 {
                return Err(usage("--size must be at least 1"));
            }
            if !kernels.is_empty() {
                cfg.kernels = kernels
                    .iter()
                    .map(|k| BuiltinKernel::from_name(k).ok_or_else(|| usage(format!("unknown kernel `{k}`"))))
                    .collect::<Result<_, _>>()?;
            }
            let rows = run_bench(&cfg);
            if let Some(d) = dir {
                create_dir(&d)?;
                write_file(&d.join("bench.csv"), &rows_to_csv(&rows, timings))?;
            }
            emit(out, &render_table(&rows))
        }
    }
}

fn emit(out: &mut dyn Write, s: &str) -> Result<(), Failure> {
    out.write_all(s.as_bytes()).map_err(usage)
}

fn write_file(p: &Path, s: &str) -> Result<(), Failure> {
    std::fs::write(p, s).map_err(|e| usage(format!("cannot write {}: {e}", p.display())))
}

fn create_dir(p: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(p).map_err(|e| usage(format!("cannot create {}: {e}", p.display())))
}

fn load_target(t: &TargetArgs) -> Result<ArchSpec, Failure> {
    let mut a = load_arch(&t.arch).map_err(usage)?;
    a.infinite_registers |= t.infinite_registers;
    Ok(a)
}

fn load_graph(k: &KernelArgs, arch: &ArchSpec) -> Result<(LoopNest, Dfg), Failure> {
    let nest = load_kernel(&k.kernel).map_err(usage)?;
    let nest = transform(&nest, Transforms { flatten: k.flatten, unroll: k.unroll }).map_err(usage)?;
    let g = graph_for(&nest, arch).map_err(usage)?;
    Ok((nest, g))
}

fn map(g: &Dfg, arch: &ArchSpec, a: &MapperArgs) -> Result<Mapping, Failure> {
    if a.ii == Some(0) || a.max_ii == 0 {
        return Err(usage("II must be at least 1"));
    }
    let req = MapRequest { mapper: a.mapper, ii: a.ii, max_ii: a.max_ii, seed: a.seed };
    run_mapper(g, arch, req).map_err(|e| Failure::Run(format!("mapping failed: {e}")))
}

fn arch_summary(a: &ArchSpec) -> String {
    let mut s = format!("ok: {}x{} {:?}\n", a.rows, a.cols, a.interconnect);
    let _ = writeln!(s, "enabled_pes {}", a.enabled_count());
    let _ = writeln!(s, "spm_pes {}", a.spm.pes.len());
    let _ = writeln!(s, "max_ii {}", a.max_ii());
    s
}

fn graph_summary(g: &Dfg) -> String {
    let st = dfg_stats(g);
    let mut s = format!("ops {}\nmem_ops {}\n", st.op_count, st.mem_op_count);
    for (k, n) in &st.histogram {
        let _ = writeln!(s, "op.{} {n}", k.name());
    }
    for (sec, n) in &st.sections {
        let _ = writeln!(s, "section.{} {n}", format!("{sec:?}").to_lowercase());
    }
    if let Ok(r) = rec_mii(g) {
        let _ = writeln!(s, "rec_mii {r}");
    }
    s
}

fn mapping_text(g: &Dfg, arch: &ArchSpec, m: &Mapping) -> String {
    let mut s = String::new();
    match mapping_report(g, arch, m) {
        Ok(r) => {
            let _ = writeln!(s, "ops {}", r.op_count);
            let _ = writeln!(s, "ii {}", r.ii);
            if let Ok(lb) = min_ii(g, arch) {
                let _ = writeln!(s, "min_ii {lb}");
            }
            let _ = writeln!(s, "unused_pe {}", r.unused_pe);
            let _ = writeln!(s, "used_pe {}", r.used_pe);
            let _ = writeln!(s, "route_only_pe {}", r.route_only_pe);
            let _ = writeln!(s, "max_ops_per_pe {}", r.max_ops_per_pe);
            let _ = writeln!(s, "speedup {:.3}", r.speedup);
            let _ = writeln!(s, "map_ms {:.3}", r.wall_time.as_secs_f64() * 1e3);
        }
        Err(v) => {
            let _ = writeln!(s, "invalid mapping: {} violations", v.len());
        }
    }
    s
}
