use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LoopNest;

/// Inclusive range of generated test values.
pub const DATA_RANGE: (i32, i32) = (-16, 16);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayRegion {
    pub name: String,
    pub base: u32,
    /// Row-major extents.
    pub dims: Vec<u32>,
    /// Written by the kernel; only these regions are compared after a run.
    pub output: bool,
}

impl ArrayRegion {
    pub fn len(&self) -> u32 {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, addr: u32) -> bool {
        addr >= self.base && addr < self.base + self.len()
    }

    /// Row-major stride of every dimension.
    pub fn strides(&self) -> Vec<i64> {
        let mut strides = vec![1i64; self.dims.len()];
        for d in (0..self.dims.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * self.dims[d + 1] as i64;
        }
        strides
    }

    /// Flat address of an element, `None` if any subscript is out of range.
    pub fn address(&self, index: &[i32]) -> Option<u32> {
        if index.len() != self.dims.len() {
            return None;
        }
        let mut off = 0u32;
        for (i, (&x, &ext)) in index.iter().zip(&self.dims).enumerate() {
            if x < 0 || x as u32 >= ext {
                return None;
            }
            off += x as u32 * self.strides()[i] as u32;
        }
        Some(self.base + off)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Layout {
    pub regions: Vec<ArrayRegion>,
}

impl Layout {
    /// Contiguous row-major regions in declaration order starting at 0.
    pub fn for_nest(nest: &LoopNest) -> Layout {
        let written = nest.written_arrays();
        let mut base = 0;
        let regions = nest
            .arrays
            .iter()
            .map(|a| {
                let r = ArrayRegion {
                    name: a.name.clone(),
                    base,
                    dims: a.dims.clone(),
                    output: written.contains(a.name.as_str()),
                };
                base += a.len();
                r
            })
            .collect();
        Layout { regions }
    }

    pub fn region(&self, name: &str) -> Option<&ArrayRegion> {
        self.regions.iter().find(|r| r.name == name)
    }

    /// One past the last used address.
    pub fn extent(&self) -> u32 {
        self.regions.iter().map(|r| r.base + r.len()).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemImage {
    pub words: Vec<i32>,
    pub layout: Layout,
}

impl MemImage {
    pub fn zeroed(layout: Layout, size_words: u32) -> MemImage {
        MemImage { words: vec![0; size_words as usize], layout }
    }

    pub fn read(&self, array: &str, index: &[i32]) -> Option<i32> {
        let addr = self.layout.region(array)?.address(index)?;
        self.words.get(addr as usize).copied()
    }

    pub fn write(&mut self, array: &str, index: &[i32], value: i32) -> Option<()> {
        let addr = self.layout.region(array)?.address(index)?;
        *self.words.get_mut(addr as usize)? = value;
        Some(())
    }

    /// Words of one array in row-major order.
    pub fn array_words(&self, array: &str) -> Option<&[i32]> {
        let r = self.layout.region(array)?;
        self.words.get(r.base as usize..(r.base + r.len()) as usize)
    }

    pub fn array_words_mut(&mut self, array: &str) -> Option<&mut [i32]> {
        let r = self.layout.region(array)?.clone();
        self.words.get_mut(r.base as usize..(r.base + r.len()) as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DataError {
    #[error("arrays need {needed} words but the scratchpad holds {capacity}")]
    CapacityExceeded { needed: u32, capacity: u32 },
}

/// Deterministic test image for `nest`: every array element drawn uniformly
/// from [`DATA_RANGE`], arrays with a `diag` attribute get that value on their
/// main diagonal.
pub fn gen_data(nest: &LoopNest, seed: u64, size_words: u32) -> Result<MemImage, DataError> {
    let layout = Layout::for_nest(nest);
    let needed = layout.extent();
    if needed > size_words {
        return Err(DataError::CapacityExceeded { needed, capacity: size_words });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mem = MemImage::zeroed(layout, size_words);
    for decl in &nest.arrays {
        let region = mem.layout.region(&decl.name).expect("layout covers every array").clone();
        let words = &mut mem.words[region.base as usize..(region.base + region.len()) as usize];
        for w in words.iter_mut() {
            *w = rng.gen_range(DATA_RANGE.0..=DATA_RANGE.1);
        }
        if let Some(d) = decl.diag {
            let n = region.dims.iter().copied().min().unwrap_or(0);
            let strides = region.strides();
            let diag_stride: i64 = strides.iter().sum();
            for i in 0..n as i64 {
                words[(i * diag_stride) as usize] = d;
            }
        }
    }
    Ok(mem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loopir::builtin_kernel;
    use crate::loopir::{ArrayDecl, LoopDim};

    #[test]
    fn deterministic() {
        let n = builtin_kernel("gemm", 4).unwrap();
        assert_eq!(gen_data(&n, 7, 1024), gen_data(&n, 7, 1024));
        assert_ne!(gen_data(&n, 7, 1024), gen_data(&n, 8, 1024));
    }

    #[test]
    fn values_in_range() {
        let n = builtin_kernel("atax", 4).unwrap();
        let m = gen_data(&n, 3, 1024).unwrap();
        let used = m.layout.extent() as usize;
        assert!(m.words[..used].iter().all(|w| (-16..=16).contains(w)));
        assert!(m.words[used..].iter().all(|w| *w == 0));
    }

    #[test]
    fn layout_bases() {
        let n = LoopNest {
            name: "t".into(),
            arrays: vec![ArrayDecl::new("A", vec![4, 4]), ArrayDecl::new("x", vec![4])],
            scalars: vec![],
            dims: vec![LoopDim::counted("i", 4)],
            body: vec![],
        };
        let m = gen_data(&n, 0, 64).unwrap();
        assert_eq!(m.layout.region("A").unwrap().base, 0);
        assert_eq!(m.layout.region("x").unwrap().base, 16);
    }

    #[test]
    fn trisolv_unit_diagonal() {
        let n = builtin_kernel("trisolv", 4).unwrap();
        for seed in 0..5 {
            let m = gen_data(&n, seed, 1024).unwrap();
            for i in 0..4 {
                assert_eq!(m.read("L", &[i, i]), Some(1));
            }
        }
    }

    #[test]
    fn capacity_exceeded() {
        let n = builtin_kernel("gemm", 4).unwrap();
        assert_eq!(gen_data(&n, 0, 40), Err(DataError::CapacityExceeded { needed: 48, capacity: 40 }));
    }
}
