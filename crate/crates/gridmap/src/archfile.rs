//! JSON architecture documents.
//!
//! ```json
//! {"rows":4,"cols":4,
//!  "interconnect":{"kind":"hycube","hops_per_cycle":3},
//!  "pe":{"ops":["add","mul"],"registers":8,"config_depth":60},
//!  "spm":{"pes":[[0,0],[1,0]],"size_words":4096,"latency":1},
//!  "disabled":[[3,3]],
//!  "overrides":[{"pe":[1,1],"ops":["mul"]}]}
//! ```
//!
//! Only `rows` and `cols` are required. Two extra boolean keys,
//! `allow_interior_spm` and `infinite_registers`, default to false.

use std::collections::BTreeSet;
use std::path::Path;

use gridmap_core::arch::{
    ArchError, ArchSpec, Coord, Interconnect, OpKind, PeSpec, SpmSpec, DEFAULT_CONFIG_DEPTH, DEFAULT_HYCUBE_HOPS,
    DEFAULT_REGISTERS, DEFAULT_SPM_WORDS,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ArchFileError {
    #[error("syntax error at line {line}, column {column}: {msg}")]
    Syntax { line: usize, column: usize, msg: String },
    #[error("{0}")]
    Schema(String),
    #[error(transparent)]
    Invalid(#[from] ArchError),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Doc {
    rows: u32,
    cols: u32,
    #[serde(default)]
    interconnect: LinkDoc,
    #[serde(default)]
    pe: PeDoc,
    #[serde(default)]
    spm: Option<SpmDoc>,
    #[serde(default)]
    disabled: Vec<[u32; 2]>,
    #[serde(default)]
    overrides: Vec<OverrideDoc>,
    #[serde(default, skip_serializing_if = "is_false")]
    allow_interior_spm: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    infinite_registers: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkDoc {
    kind: LinkKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hops_per_cycle: Option<u32>,
}

#[derive(Debug, Default, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum LinkKind {
    #[default]
    Mesh,
    Hycube,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PeDoc {
    #[serde(default)]
    ops: Option<Vec<String>>,
    #[serde(default)]
    registers: Option<u32>,
    #[serde(default)]
    config_depth: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpmDoc {
    #[serde(default)]
    pes: Option<Vec<[u32; 2]>>,
    #[serde(default)]
    size_words: Option<u32>,
    #[serde(default)]
    latency: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OverrideDoc {
    pe: [u32; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ops: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    registers: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_depth: Option<u32>,
}

fn ops_from(names: &[String]) -> Result<BTreeSet<OpKind>, ArchFileError> {
    names
        .iter()
        .map(|n| OpKind::from_name(n).ok_or_else(|| ArchFileError::Schema(format!("unknown operation `{n}`"))))
        .collect()
}

fn ops_to(ops: &BTreeSet<OpKind>) -> Vec<String> {
    ops.iter().map(|k| k.name().to_string()).collect()
}

fn coord(rc: [u32; 2]) -> Coord {
    Coord::new(rc[0], rc[1])
}

fn pair(c: Coord) -> [u32; 2] {
    [c.row, c.col]
}

/// Parses and validates an architecture document.
pub fn parse_arch(text: &str) -> Result<ArchSpec, ArchFileError> {
    let doc: Doc = serde_json::from_str(text).map_err(|e| ArchFileError::Syntax {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    let interconnect = match doc.interconnect.kind {
        LinkKind::Mesh => {
            if doc.interconnect.hops_per_cycle.is_some_and(|h| h != 0) {
                return Err(ArchFileError::Schema("hops_per_cycle applies to hycube interconnects only".into()));
            }
            Interconnect::Mesh
        }
        LinkKind::Hycube => {
            Interconnect::HyCube { hops_per_cycle: doc.interconnect.hops_per_cycle.unwrap_or(DEFAULT_HYCUBE_HOPS) }
        }
    };
    let default_pe = PeSpec {
        ops: match &doc.pe.ops {
            Some(o) => ops_from(o)?,
            None => OpKind::ALL.iter().copied().collect(),
        },
        registers: doc.pe.registers.unwrap_or(DEFAULT_REGISTERS),
        config_depth: doc.pe.config_depth.unwrap_or(DEFAULT_CONFIG_DEPTH),
    };
    let overrides = doc
        .overrides
        .iter()
        .map(|o| {
            let ops = match &o.ops {
                Some(x) => ops_from(x)?,
                None => default_pe.ops.clone(),
            };
            let spec = PeSpec {
                ops,
                registers: o.registers.unwrap_or(default_pe.registers),
                config_depth: o.config_depth.unwrap_or(default_pe.config_depth),
            };
            Ok((coord(o.pe), spec))
        })
        .collect::<Result<Vec<_>, ArchFileError>>()?;
    let left = SpmSpec::left_column(doc.rows);
    let spm = match doc.spm {
        None => left,
        Some(s) => SpmSpec {
            pes: s.pes.map(|p| p.into_iter().map(coord).collect()).unwrap_or(left.pes),
            size_words: s.size_words.unwrap_or(DEFAULT_SPM_WORDS),
            latency: s.latency.unwrap_or(1),
        },
    };
    let arch = ArchSpec {
        rows: doc.rows,
        cols: doc.cols,
        interconnect,
        default_pe,
        overrides,
        disabled: doc.disabled.into_iter().map(coord).collect(),
        spm,
        allow_interior_spm: doc.allow_interior_spm,
        infinite_registers: doc.infinite_registers,
    };
    arch.validate()?;
    Ok(arch)
}

/// Canonical pretty-printed document; [`parse_arch`] reads it back unchanged.
pub fn serialize_arch(arch: &ArchSpec) -> String {
    let d = &arch.default_pe;
    let doc = Doc {
        rows: arch.rows,
        cols: arch.cols,
        interconnect: match arch.interconnect {
            Interconnect::Mesh => LinkDoc { kind: LinkKind::Mesh, hops_per_cycle: None },
            Interconnect::HyCube { hops_per_cycle } => {
                LinkDoc { kind: LinkKind::Hycube, hops_per_cycle: Some(hops_per_cycle) }
            }
        },
        pe: PeDoc { ops: Some(ops_to(&d.ops)), registers: Some(d.registers), config_depth: Some(d.config_depth) },
        spm: Some(SpmDoc {
            pes: Some(arch.spm.pes.iter().copied().map(pair).collect()),
            size_words: Some(arch.spm.size_words),
            latency: Some(arch.spm.latency),
        }),
        disabled: arch.disabled.iter().copied().map(pair).collect(),
        overrides: arch
            .overrides
            .iter()
            .map(|(c, p)| OverrideDoc {
                pe: pair(*c),
                ops: Some(ops_to(&p.ops)),
                registers: (p.registers != d.registers).then_some(p.registers),
                config_depth: (p.config_depth != d.config_depth).then_some(p.config_depth),
            })
            .collect(),
        allow_interior_spm: arch.allow_interior_spm,
        infinite_registers: arch.infinite_registers,
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("architecture documents always serialize");
    s.push('\n');
    s
}

pub fn load_arch(path: &Path) -> Result<ArchSpec, ArchFileError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ArchFileError::Io { path: path.display().to_string(), source })?;
    parse_arch(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_takes_defaults() {
        let a = parse_arch(r#"{"rows":3,"cols":3}"#).unwrap();
        assert_eq!(a, ArchSpec::mesh(3, 3));
        assert_eq!(a.enabled_count(), 9);
    }

    #[test]
    fn left_column_spm_is_echoed() {
        let a = parse_arch(r#"{"rows":4,"cols":4,"spm":{"pes":[[0,0],[1,0],[2,0],[3,0]]}}"#).unwrap();
        assert_eq!(a.spm.pes, (0..4).map(|r| Coord::new(r, 0)).collect::<Vec<_>>());
    }

    #[test]
    fn disabled_spm_pe_is_rejected() {
        let e = parse_arch(r#"{"rows":2,"cols":2,"disabled":[[0,0]],"spm":{"pes":[[0,0]]}}"#).unwrap_err();
        assert!(matches!(e, ArchFileError::Invalid(ArchError::SpmPeDisabled(_))));
    }

    #[test]
    fn syntax_error_reports_position() {
        let e = parse_arch("{\"rows\":2,\n \"cols\":}").unwrap_err();
        assert!(matches!(e, ArchFileError::Syntax { line: 2, .. }), "{e}");
    }

    #[test]
    fn unknown_op_and_field() {
        assert!(matches!(parse_arch(r#"{"rows":1,"cols":1,"pe":{"ops":["fma"]}}"#), Err(ArchFileError::Schema(_))));
        assert!(matches!(parse_arch(r#"{"rows":1,"cols":1,"torus":true}"#), Err(ArchFileError::Syntax { .. })));
    }

    #[test]
    fn override_inherits_unlisted_fields() {
        let a =
            parse_arch(r#"{"rows":3,"cols":3,"pe":{"registers":2},"overrides":[{"pe":[1,1],"ops":["mul"]}]}"#).unwrap();
        let p = a.pe_spec(Coord::new(1, 1));
        assert_eq!(p.registers, 2);
        assert_eq!(p.ops.len(), 1);
        assert!(!a.capable_pes(OpKind::Cmp).contains(&Coord::new(1, 1)));
    }

    #[test]
    fn round_trip() {
        let mut a = ArchSpec::hycube(3, 4, 2);
        a.disabled.insert(Coord::new(2, 3));
        a.overrides.push((
            Coord::new(1, 1),
            PeSpec { ops: [OpKind::Mul].into_iter().collect(), registers: 3, config_depth: 60 },
        ));
        a.spm.latency = 2;
        a.infinite_registers = true;
        assert_eq!(parse_arch(&serialize_arch(&a)).unwrap(), a);
    }
}
