//! Target array description.
//!
//! An [`ArchSpec`] is a rectangular grid of processing elements (PEs). Each PE
//! has one functional unit, a small register file and four output ports to its
//! direct neighbours. A subset of PEs (normally on the border) can reach the
//! scratchpad memory. The description is immutable once validated and is shared by
//! every mapping attempt.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

/// Grid position, row-major with `(0, 0)` in the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Coord {
    pub row: u32,
    pub col: u32,
}

impl Coord {
    pub const fn new(row: u32, col: u32) -> Self {
        Coord { row, col }
    }

    pub fn manhattan(self, other: Coord) -> u32 {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    N,
    E,
    S,
    W,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::N, Direction::E, Direction::S, Direction::W];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::N => Direction::S,
            Direction::E => Direction::W,
            Direction::S => Direction::N,
            Direction::W => Direction::E,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Direction::N => 'N',
            Direction::E => 'E',
            Direction::S => 'S',
            Direction::W => 'W',
        }
    }
}

/// Operation classes a PE can be configured to execute.
///
/// This is the capability vocabulary; the data-flow graph uses the richer
/// [`crate::dfg::Opcode`] which carries comparison relations and constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    Cmp,
    Sel,
    Load,
    Store,
    Const,
}

impl OpKind {
    pub const ALL: [OpKind; 9] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Div,
        OpKind::Cmp,
        OpKind::Sel,
        OpKind::Load,
        OpKind::Store,
        OpKind::Const,
    ];

    pub fn is_memory(self) -> bool {
        matches!(self, OpKind::Load | OpKind::Store)
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::Cmp => "cmp",
            OpKind::Sel => "sel",
            OpKind::Load => "load",
            OpKind::Store => "store",
            OpKind::Const => "const",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.iter().copied().find(|k| k.name().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interconnect {
    /// Nearest-neighbour links, one hop per cycle.
    Mesh,
    /// Nearest-neighbour links that can be chained combinationally for up to
    /// `hops_per_cycle` hops within a single cycle.
    HyCube { hops_per_cycle: u32 },
}

impl Interconnect {
    /// Hops a value may take within one cycle without being latched.
    pub fn bypass_hops(self) -> u32 {
        match self {
            Interconnect::Mesh => 0,
            Interconnect::HyCube { hops_per_cycle } => hops_per_cycle,
        }
    }
}

pub const DEFAULT_REGISTERS: u32 = 8;
pub const DEFAULT_CONFIG_DEPTH: u32 = 60;
pub const DEFAULT_SPM_WORDS: u32 = 4096;
pub const DEFAULT_HYCUBE_HOPS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeSpec {
    pub ops: BTreeSet<OpKind>,
    /// Registers available to hold values between cycles.
    pub registers: u32,
    /// Instruction slots in the configuration memory, i.e. the largest
    /// initiation interval this PE can hold.
    pub config_depth: u32,
}

impl Default for PeSpec {
    fn default() -> Self {
        PeSpec {
            ops: OpKind::ALL.iter().copied().collect(),
            registers: DEFAULT_REGISTERS,
            config_depth: DEFAULT_CONFIG_DEPTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpmSpec {
    /// PEs with a port into the scratchpad, in declaration order.
    pub pes: Vec<Coord>,
    pub size_words: u32,
    /// Cycles from issuing a load to its result, and from a store to its
    /// effect becoming visible.
    pub latency: u32,
}

impl SpmSpec {
    /// Left-column SPM ports, the layout used when a document omits `spm`.
    pub fn left_column(rows: u32) -> Self {
        SpmSpec { pes: (0..rows).map(|r| Coord::new(r, 0)).collect(), size_words: DEFAULT_SPM_WORDS, latency: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub rows: u32,
    pub cols: u32,
    pub interconnect: Interconnect,
    pub default_pe: PeSpec,
    pub overrides: Vec<(Coord, PeSpec)>,
    pub disabled: BTreeSet<Coord>,
    pub spm: SpmSpec,
    /// Permit SPM ports on interior PEs.
    pub allow_interior_spm: bool,
    /// Treat every register file as unbounded.
    pub infinite_registers: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ArchError {
    #[error("grid must have at least one row and one column (got {rows}x{cols})")]
    EmptyGrid { rows: u32, cols: u32 },
    #[error("{what} coordinate {coord} lies outside the {rows}x{cols} grid")]
    OutOfGrid { what: &'static str, coord: Coord, rows: u32, cols: u32 },
    #[error("HyCube interconnect needs at least one hop per cycle")]
    ZeroHops,
    #[error("PE {0} is enabled but has an empty operation set")]
    EmptyOps(Coord),
    #[error("PE {0} has config_depth 0")]
    ZeroConfigDepth(Coord),
    #[error("SPM port list is empty")]
    NoSpmPes,
    #[error("SPM port PE {0} is disabled")]
    SpmPeDisabled(Coord),
    #[error("SPM port PE {0} is not on the grid border (set allow_interior_spm to permit)")]
    InteriorSpm(Coord),
    #[error("SPM port PE {0} listed twice")]
    DuplicateSpm(Coord),
    #[error("SPM size must be positive")]
    ZeroSpmSize,
    #[error("SPM latency must be positive")]
    ZeroSpmLatency,
}

impl ArchSpec {
    /// All-capable mesh with SPM ports on the left column.
    pub fn mesh(rows: u32, cols: u32) -> Self {
        ArchSpec {
            rows,
            cols,
            interconnect: Interconnect::Mesh,
            default_pe: PeSpec::default(),
            overrides: Vec::new(),
            disabled: BTreeSet::new(),
            spm: SpmSpec::left_column(rows),
            allow_interior_spm: false,
            infinite_registers: false,
        }
    }

    pub fn hycube(rows: u32, cols: u32, hops_per_cycle: u32) -> Self {
        ArchSpec { interconnect: Interconnect::HyCube { hops_per_cycle }, ..ArchSpec::mesh(rows, cols) }
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(ArchError::EmptyGrid { rows: self.rows, cols: self.cols });
        }
        if let Interconnect::HyCube { hops_per_cycle: 0 } = self.interconnect {
            return Err(ArchError::ZeroHops);
        }
        for c in &self.disabled {
            self.check_in_grid("disabled", *c)?;
        }
        for (c, _) in &self.overrides {
            self.check_in_grid("override", *c)?;
        }
        for c in self.all_coords() {
            if !self.is_enabled(c) {
                continue;
            }
            let pe = self.pe_spec(c);
            if pe.ops.is_empty() {
                return Err(ArchError::EmptyOps(c));
            }
            if pe.config_depth == 0 {
                return Err(ArchError::ZeroConfigDepth(c));
            }
        }
        if self.spm.pes.is_empty() {
            return Err(ArchError::NoSpmPes);
        }
        if self.spm.size_words == 0 {
            return Err(ArchError::ZeroSpmSize);
        }
        if self.spm.latency == 0 {
            return Err(ArchError::ZeroSpmLatency);
        }
        let mut seen = BTreeSet::new();
        for &c in &self.spm.pes {
            self.check_in_grid("spm", c)?;
            if !seen.insert(c) {
                return Err(ArchError::DuplicateSpm(c));
            }
            if self.disabled.contains(&c) {
                return Err(ArchError::SpmPeDisabled(c));
            }
            if !self.allow_interior_spm && !self.is_border(c) {
                return Err(ArchError::InteriorSpm(c));
            }
        }
        Ok(())
    }

    fn check_in_grid(&self, what: &'static str, coord: Coord) -> Result<(), ArchError> {
        if self.contains(coord) {
            Ok(())
        } else {
            Err(ArchError::OutOfGrid { what, coord, rows: self.rows, cols: self.cols })
        }
    }

    pub fn contains(&self, c: Coord) -> bool {
        c.row < self.rows && c.col < self.cols
    }

    pub fn is_border(&self, c: Coord) -> bool {
        c.row == 0 || c.col == 0 || c.row + 1 == self.rows || c.col + 1 == self.cols
    }

    pub fn is_enabled(&self, c: Coord) -> bool {
        self.contains(c) && !self.disabled.contains(&c)
    }

    pub fn has_spm_port(&self, c: Coord) -> bool {
        self.spm.pes.contains(&c)
    }

    pub fn pe_count(&self) -> usize {
        (self.rows * self.cols) as usize
    }

    /// Dense row-major index of a coordinate.
    pub fn index_of(&self, c: Coord) -> usize {
        (c.row * self.cols + c.col) as usize
    }

    pub fn coord_of(&self, index: usize) -> Coord {
        let index = index as u32;
        Coord::new(index / self.cols, index % self.cols)
    }

    pub fn all_coords(&self) -> impl Iterator<Item = Coord> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| Coord::new(r, c)))
    }

    pub fn enabled_pes(&self) -> impl Iterator<Item = Coord> + '_ {
        self.all_coords().filter(move |c| self.is_enabled(*c))
    }

    pub fn enabled_count(&self) -> usize {
        self.enabled_pes().count()
    }

    /// Effective PE description; the last matching override wins.
    pub fn pe_spec(&self, c: Coord) -> &PeSpec {
        self.overrides.iter().rev().find(|(at, _)| *at == c).map(|(_, pe)| pe).unwrap_or(&self.default_pe)
    }

    /// Register capacity of a PE, `None` when registers are unbounded.
    pub fn register_capacity(&self, c: Coord) -> Option<u32> {
        if self.infinite_registers {
            None
        } else {
            Some(self.pe_spec(c).registers)
        }
    }

    /// Smallest configuration depth across enabled PEs.
    pub fn max_ii(&self) -> u32 {
        self.enabled_pes().map(|c| self.pe_spec(c).config_depth).min().unwrap_or(0)
    }

    pub fn can_execute(&self, c: Coord, op: OpKind) -> bool {
        self.is_enabled(c) && self.pe_spec(c).ops.contains(&op) && (!op.is_memory() || self.has_spm_port(c))
    }

    /// Enabled PEs able to execute `op`. Memory operations are further
    /// restricted to the SPM ports.
    pub fn capable_pes(&self, op: OpKind) -> BTreeSet<Coord> {
        self.enabled_pes().filter(|c| self.can_execute(*c, op)).collect()
    }

    /// Enabled neighbour in direction `dir`, if any.
    pub fn neighbor(&self, pe: Coord, dir: Direction) -> Option<Coord> {
        let (r, c) = (pe.row as i64, pe.col as i64);
        let (nr, nc) = match dir {
            Direction::N => (r - 1, c),
            Direction::E => (r, c + 1),
            Direction::S => (r + 1, c),
            Direction::W => (r, c - 1),
        };
        if nr < 0 || nc < 0 {
            return None;
        }
        let n = Coord::new(nr as u32, nc as u32);
        self.is_enabled(n).then_some(n)
    }

    /// Output ports of `pe` together with the PE each one reaches.
    pub fn adjacent_resources(&self, pe: Coord) -> Vec<(Direction, Coord)> {
        if !self.is_enabled(pe) {
            return Vec::new();
        }
        Direction::ALL.iter().filter_map(|&d| self.neighbor(pe, d).map(|n| (d, n))).collect()
    }

    /// Lower bound on the cycles a value needs to travel `hops` links.
    pub fn hop_cycles(&self, hops: u32) -> u32 {
        match self.interconnect.bypass_hops() {
            0 => hops,
            h => {
                if hops == 0 {
                    0
                } else {
                    (hops - 1) / h
                }
            }
        }
    }
}

/// A schedulable hardware resource. Each is replicated once per cycle of the
/// initiation interval in the modulo routing resource graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Resource {
    Fu(Coord),
    RoutePort(Coord, Direction),
    Register(Coord, u32),
}

impl Resource {
    pub fn pe(self) -> Coord {
        match self {
            Resource::Fu(c) | Resource::RoutePort(c, _) | Resource::Register(c, _) => c,
        }
    }
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Resource::Fu(c) => write!(f, "FU{c}"),
            Resource::RoutePort(c, d) => write!(f, "{}{c}", d.letter()),
            Resource::Register(c, i) => write!(f, "R{i}{c}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mesh_4x4_left_column_spm() {
        let a = ArchSpec::mesh(4, 4);
        a.validate().unwrap();
        assert_eq!(a.enabled_count(), 16);
        assert_eq!(a.spm.pes, alloc::vec![Coord::new(0, 0), Coord::new(1, 0), Coord::new(2, 0), Coord::new(3, 0)]);
    }

    #[test]
    fn disabled_spm_pe_rejected() {
        let mut a = ArchSpec::mesh(4, 4);
        a.disabled.insert(Coord::new(0, 0));
        assert_eq!(a.validate(), Err(ArchError::SpmPeDisabled(Coord::new(0, 0))));
    }

    #[test]
    fn interior_spm_needs_flag() {
        let mut a = ArchSpec::mesh(3, 3);
        a.spm.pes.push(Coord::new(1, 1));
        assert_eq!(a.validate(), Err(ArchError::InteriorSpm(Coord::new(1, 1))));
        a.allow_interior_spm = true;
        a.validate().unwrap();
    }

    #[test]
    fn out_of_grid_override() {
        let mut a = ArchSpec::mesh(2, 2);
        a.overrides.push((Coord::new(2, 0), PeSpec::default()));
        assert!(matches!(a.validate(), Err(ArchError::OutOfGrid { .. })));
    }

    #[test]
    fn capable_pes_uniform_add() {
        let a = ArchSpec::mesh(4, 4);
        assert_eq!(a.capable_pes(OpKind::Add).len(), 16);
    }

    #[test]
    fn capable_pes_load_is_spm_column() {
        let a = ArchSpec::mesh(4, 4);
        let got: Vec<_> = a.capable_pes(OpKind::Load).into_iter().collect();
        assert_eq!(got, (0..4).map(|r| Coord::new(r, 0)).collect::<Vec<_>>());
    }

    #[test]
    fn capable_pes_respects_override() {
        let mut a = ArchSpec::mesh(4, 4);
        let mul_only = PeSpec { ops: [OpKind::Mul].into_iter().collect(), ..PeSpec::default() };
        a.overrides.push((Coord::new(1, 1), mul_only));
        a.validate().unwrap();
        // Oracle: enumerate every coordinate and consult the effective op set.
        let expected: BTreeSet<Coord> = a.all_coords().filter(|&c| c != Coord::new(1, 1)).collect();
        assert_eq!(a.capable_pes(OpKind::Cmp), expected);
        assert_eq!(a.capable_pes(OpKind::Mul).len(), 16);
    }

    #[test]
    fn neighbor_counts() {
        let a = ArchSpec::mesh(4, 4);
        assert_eq!(a.adjacent_resources(Coord::new(0, 0)).len(), 2);
        let b = ArchSpec::mesh(3, 3);
        assert_eq!(b.adjacent_resources(Coord::new(1, 1)).len(), 4);
        let mut c = ArchSpec::mesh(3, 3);
        c.spm.pes = alloc::vec![Coord::new(0, 0)];
        c.disabled.insert(Coord::new(2, 0));
        c.validate().unwrap();
        let n = c.adjacent_resources(Coord::new(1, 0));
        assert_eq!(n, alloc::vec![(Direction::N, Coord::new(0, 0)), (Direction::E, Coord::new(1, 1))]);
    }

    #[test]
    fn hop_cycles_bounds() {
        let m = ArchSpec::mesh(4, 4);
        assert_eq!(m.hop_cycles(3), 3);
        let h = ArchSpec::hycube(4, 4, 3);
        assert_eq!(h.hop_cycles(0), 0);
        assert_eq!(h.hop_cycles(3), 0);
        assert_eq!(h.hop_cycles(4), 1);
    }

    proptest::proptest! {
        #[test]
        fn adjacency_is_symmetric(rows in 1u32..5, cols in 1u32..5, mask in proptest::collection::vec(proptest::bool::ANY, 16)) {
            let mut a = ArchSpec::mesh(rows, cols);
            for (i, off) in mask.iter().enumerate() {
                let c = Coord::new(i as u32 / 4, i as u32 % 4);
                if *off && a.contains(c) && c.col != 0 {
                    a.disabled.insert(c);
                }
            }
            for p in a.enabled_pes() {
                for (d, q) in a.adjacent_resources(p) {
                    proptest::prop_assert_eq!(a.neighbor(q, d.opposite()), Some(p));
                }
            }
        }

        #[test]
        fn capability_subset_of_enabled(rows in 1u32..5, cols in 1u32..5) {
            let a = ArchSpec::mesh(rows, cols);
            for op in OpKind::ALL {
                for c in a.capable_pes(op) {
                    proptest::prop_assert!(a.is_enabled(c));
                    if op.is_memory() {
                        proptest::prop_assert!(a.spm.pes.contains(&c));
                    }
                }
            }
        }
    }
}
