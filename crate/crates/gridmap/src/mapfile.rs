//! Mapping artifacts: a per-slot resource table in CSV and the full mapping
//! as a JSON sidecar.
//!
//! The CSV lists one row per occupied configuration slot:
//! `cycle,row,col,resource,kind,payload`. `cycle` is the slot in `[0, ii)`;
//! `resource` is `FU`, a port `N`/`E`/`S`/`W` or a register `R<i>`; `kind`
//! is `op`, `route` or `hold` respectively. The payload is the node id for
//! `op` rows and the smallest edge id whose value occupies the slot
//! otherwise. The table alone cannot be simulated because it drops absolute
//! cycles and per-edge paths, so the sidecar carries those.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use gridmap_core::arch::{Coord, Direction, Resource};
use gridmap_core::mapper::Mapping;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum MapFileError {
    #[error("mapping CSV line {line}: {msg}")]
    Csv { line: u64, msg: String },
    #[error("mapping JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("mapping CSV disagrees with its sidecar {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SlotResource {
    Fu,
    Port(Direction),
    Reg(u32),
}

impl fmt::Display for SlotResource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotResource::Fu => f.write_str("FU"),
            SlotResource::Port(d) => write!(f, "{d:?}"),
            SlotResource::Reg(k) => write!(f, "R{k}"),
        }
    }
}

impl SlotResource {
    fn parse(s: &str) -> Option<SlotResource> {
        Some(match s {
            "FU" => SlotResource::Fu,
            "N" => SlotResource::Port(Direction::N),
            "E" => SlotResource::Port(Direction::E),
            "S" => SlotResource::Port(Direction::S),
            "W" => SlotResource::Port(Direction::W),
            _ => SlotResource::Reg(s.strip_prefix('R')?.parse().ok()?),
        })
    }

    fn kind(self) -> &'static str {
        match self {
            SlotResource::Fu => "op",
            SlotResource::Port(_) => "route",
            SlotResource::Reg(_) => "hold",
        }
    }
}

/// Occupied slots keyed by `(cycle, pe, resource)`, valued by payload.
pub type SlotTable = BTreeMap<(u32, Coord, SlotResource), usize>;

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    cycle: u32,
    row: u32,
    col: u32,
    resource: String,
    kind: String,
    payload: usize,
}

/// Slot occupancy of `m`; shared slots report their smallest edge id.
pub fn slot_table(m: &Mapping) -> SlotTable {
    let mut t = SlotTable::new();
    let ii = m.ii.max(1);
    for (&n, p) in &m.place {
        t.insert((p.time % ii, p.pe, SlotResource::Fu), n);
    }
    for (&e, steps) in &m.routes {
        for s in steps {
            let (pe, r) = match s.res {
                Resource::Fu(pe) => (pe, SlotResource::Fu),
                Resource::RoutePort(pe, d) => (pe, SlotResource::Port(d)),
                Resource::Register(pe, k) => (pe, SlotResource::Reg(k)),
            };
            t.entry((s.cycle % ii, pe, r)).and_modify(|x| *x = (*x).min(e)).or_insert(e);
        }
    }
    t
}

pub fn export_mapping_csv(m: &Mapping) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    // Writing the header explicitly keeps it present for empty mappings.
    w.write_record(["cycle", "row", "col", "resource", "kind", "payload"]).expect("in-memory write");
    for ((cycle, pe, r), payload) in slot_table(m) {
        w.write_record([
            cycle.to_string(),
            pe.row.to_string(),
            pe.col.to_string(),
            r.to_string(),
            r.kind().to_string(),
            payload.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV output is UTF-8")
}

/// Parses a mapping CSV into its slot table. With `ii` given, cycles must lie
/// in `[0, ii)`.
pub fn parse_mapping_csv(text: &str, ii: Option<u32>) -> Result<SlotTable, MapFileError> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| MapFileError::Csv { line: 1, msg: e.to_string() })?.clone();
    if header.iter().collect::<Vec<_>>() != ["cycle", "row", "col", "resource", "kind", "payload"] {
        return Err(MapFileError::Csv { line: 1, msg: "header must be cycle,row,col,resource,kind,payload".into() });
    }
    let mut t = SlotTable::new();
    for rec in rd.deserialize::<Row>() {
        let row =
            rec.map_err(|e| MapFileError::Csv { line: e.position().map_or(0, |p| p.line()), msg: e.to_string() })?;
        let line = t.len() as u64 + 2;
        let err = |msg: String| MapFileError::Csv { line, msg };
        let res =
            SlotResource::parse(&row.resource).ok_or_else(|| err(format!("unknown resource `{}`", row.resource)))?;
        if row.kind != res.kind() {
            return Err(err(format!("resource {} must have kind `{}`, not `{}`", row.resource, res.kind(), row.kind)));
        }
        if let Some(ii) = ii.filter(|&ii| row.cycle >= ii) {
            return Err(err(format!("cycle {} is outside [0, {ii})", row.cycle)));
        }
        if t.insert((row.cycle, Coord::new(row.row, row.col), res), row.payload).is_some() {
            return Err(err(format!("slot ({}, {}, {}, {}) listed twice", row.cycle, row.row, row.col, res)));
        }
    }
    Ok(t)
}

pub fn mapping_to_json(m: &Mapping) -> String {
    let mut s = serde_json::to_string_pretty(m).expect("mappings always serialize");
    s.push('\n');
    s
}

pub fn mapping_from_json(text: &str) -> Result<Mapping, MapFileError> {
    Ok(serde_json::from_str(text)?)
}

/// Sidecar path for a mapping CSV: same stem, `.json` extension.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn read(path: &Path) -> Result<String, MapFileError> {
    std::fs::read_to_string(path).map_err(|source| MapFileError::Io { path: path.display().to_string(), source })
}

/// Loads a mapping from its CSV and sidecar, rejecting a CSV that does not
/// describe the sidecar's slot occupancy.
pub fn load_mapping(csv_path: &Path) -> Result<Mapping, MapFileError> {
    let side = sidecar_path(csv_path);
    let m = mapping_from_json(&read(&side)?)?;
    let table = parse_mapping_csv(&read(csv_path)?, Some(m.ii))?;
    if table != slot_table(&m) {
        return Err(MapFileError::Mismatch(side.display().to_string()));
    }
    Ok(m)
}
