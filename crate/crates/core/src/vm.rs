//! Synthetic virtual memory: first-touch page allocation, a radix page table
//! whose nodes live in physical memory, the split paging-structure caches, and
//! the page walker.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{LINE_SHIFT, PAGE_2M_SHIFT, PAGE_4K_SHIFT};

/// Index bits per radix level.
const RADIX_BITS: u32 = 9;
const PTE_BYTES: u64 = 8;

// Disjoint physical regions: 4KB frames from 4GB, 2MB frames from 64GB,
// page-table nodes from 1TB.
const FRAME_4K_BASE: u64 = (4 << 30) >> PAGE_4K_SHIFT;
const FRAME_2M_BASE: u64 = (64 << 30) >> PAGE_2M_SHIFT;
const NODE_FRAME_BASE: u64 = (1 << 40) >> PAGE_4K_SHIFT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PageSize {
    Size4K,
    Size2M,
}

impl PageSize {
    pub fn shift(self) -> u32 {
        match self {
            PageSize::Size4K => PAGE_4K_SHIFT,
            PageSize::Size2M => PAGE_2M_SHIFT,
        }
    }

    pub fn bytes(self) -> u64 {
        1 << self.shift()
    }

    pub fn vpn(self, vaddr: u64) -> u64 {
        vaddr >> self.shift()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PageMapping {
    pub page_size: PageSize,
    pub vpn: u64,
    pub ppn: u64,
}

impl PageMapping {
    pub fn paddr(&self, vaddr: u64) -> u64 {
        let shift = self.page_size.shift();
        (self.ppn << shift) | (vaddr & ((1 << shift) - 1))
    }

    pub fn contains(&self, vaddr: u64) -> bool {
        self.page_size.vpn(vaddr) == self.vpn
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmConfig {
    pub levels: u32,
    pub large_page_fraction: f64,
    /// PSC capacities from the root's level downwards (one per non-leaf level).
    pub psc_sizes: Vec<usize>,
    pub seed: u64,
}

impl Default for VmConfig {
    fn default() -> Self {
        Self {
            levels: 5,
            large_page_fraction: 0.0,
            psc_sizes: vec![1, 2, 8, 32],
            seed: 0x5eed,
        }
    }
}

impl VmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=5).contains(&self.levels) {
            return Err(Error::config("vm.levels must be in 2..=5"));
        }
        if !(0.0..=1.0).contains(&self.large_page_fraction) {
            return Err(Error::config("vm.large_page_fraction must be in [0, 1]"));
        }
        if self.psc_sizes.len() != self.levels as usize - 1 {
            return Err(Error::config(format!(
                "vm.psc_sizes needs {} entries (one per non-leaf level)",
                self.levels - 1
            )));
        }
        Ok(())
    }

    pub fn vaddr_bits(&self) -> u32 {
        PAGE_4K_SHIFT + RADIX_BITS * self.levels
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// First level (1 = 4KB leaf) whose entry lies at `level` of the radix tree.
fn level_shift(level: u32) -> u32 {
    PAGE_4K_SHIFT + RADIX_BITS * (level - 1)
}

#[derive(Debug, Clone)]
pub struct PageTable {
    levels: u32,
    large_page_fraction: f64,
    seed: u64,
    region_sizes: HashMap<u64, PageSize>,
    small: HashMap<u64, u64>,
    large: HashMap<u64, u64>,
    nodes: HashMap<(u32, u64), u64>,
    next_4k: u64,
    next_2m: u64,
    next_node: u64,
}

impl PageTable {
    pub fn new(cfg: &VmConfig) -> Self {
        Self {
            levels: cfg.levels,
            large_page_fraction: cfg.large_page_fraction,
            seed: cfg.seed,
            region_sizes: HashMap::new(),
            small: HashMap::new(),
            large: HashMap::new(),
            nodes: HashMap::new(),
            next_4k: FRAME_4K_BASE,
            next_2m: FRAME_2M_BASE,
            next_node: NODE_FRAME_BASE,
        }
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    /// Page size backing the 2MB-aligned region containing `vaddr`.
    fn region_size(&mut self, vaddr: u64) -> PageSize {
        let region = vaddr >> PAGE_2M_SHIFT;
        let (fraction, seed) = (self.large_page_fraction, self.seed);
        *self.region_sizes.entry(region).or_insert_with(|| {
            let h = splitmix64(seed ^ splitmix64(region));
            let u = (h >> 11) as f64 / (1u64 << 53) as f64;
            if u < fraction {
                PageSize::Size2M
            } else {
                PageSize::Size4K
            }
        })
    }

    /// Mapping for `vaddr`, allocated on first touch and stable afterwards.
    pub fn translate(&mut self, vaddr: u64) -> PageMapping {
        let page_size = self.region_size(vaddr);
        let vpn = page_size.vpn(vaddr);
        let ppn = match page_size {
            PageSize::Size4K => *self.small.entry(vpn).or_insert_with(|| {
                self.next_4k += 1;
                self.next_4k - 1
            }),
            PageSize::Size2M => *self.large.entry(vpn).or_insert_with(|| {
                self.next_2m += 1;
                self.next_2m - 1
            }),
        };
        PageMapping { page_size, vpn, ppn }
    }

    /// Existing mapping for `vaddr`, without allocating.
    pub fn peek(&self, vaddr: u64) -> Option<PageMapping> {
        match self.region_sizes.get(&(vaddr >> PAGE_2M_SHIFT))? {
            PageSize::Size4K => {
                let vpn = PageSize::Size4K.vpn(vaddr);
                self.small.get(&vpn).map(|&ppn| PageMapping {
                    page_size: PageSize::Size4K,
                    vpn,
                    ppn,
                })
            }
            PageSize::Size2M => {
                let vpn = PageSize::Size2M.vpn(vaddr);
                self.large.get(&vpn).map(|&ppn| PageMapping {
                    page_size: PageSize::Size2M,
                    vpn,
                    ppn,
                })
            }
        }
    }

    /// Number of distinct pages mapped so far, per size.
    pub fn mapped_pages(&self) -> (usize, usize) {
        (self.small.len(), self.large.len())
    }

    /// Physical line address of the entry read at `level` while walking `vaddr`.
    fn entry_line(&mut self, vaddr: u64, level: u32) -> u64 {
        let prefix = vaddr >> level_shift(level + 1);
        let next_node = &mut self.next_node;
        let frame = *self.nodes.entry((level, prefix)).or_insert_with(|| {
            *next_node += 1;
            *next_node - 1
        });
        let index = (vaddr >> level_shift(level)) & ((1 << RADIX_BITS) - 1);
        ((frame << PAGE_4K_SHIFT) + index * PTE_BYTES) >> LINE_SHIFT
    }

    /// Walks the radix table for `vaddr` starting at cycle `start`.
    ///
    /// `read(line, at)` performs one physical read issued at cycle `at` and
    /// returns the cycle its data is available. Reads are dependent, so each
    /// one issues when the previous returns.
    pub fn walk(
        &mut self,
        vaddr: u64,
        psc: &mut PscSet,
        start: u64,
        mut read: impl FnMut(u64, u64) -> u64,
    ) -> WalkResult {
        let mapping = self.translate(vaddr);
        let leaf_level = match mapping.page_size {
            PageSize::Size4K => 1,
            PageSize::Size2M => 2,
        };
        // Parallel PSC probe: one cycle regardless of outcome.
        let first_level = match psc.probe(vaddr) {
            Some(hit) if hit > leaf_level => hit - 1,
            _ => self.levels,
        };
        let mut now = start + 1;
        let mut memory_refs = Vec::with_capacity(first_level as usize);
        for level in (leaf_level..=first_level).rev() {
            let line = self.entry_line(vaddr, level);
            memory_refs.push(line);
            now = read(line, now).max(now);
            if level > leaf_level {
                psc.install(vaddr, level);
            }
        }
        WalkResult {
            mapping,
            latency_cycles: now - start,
            memory_refs,
            levels_walked: self.levels + 1 - leaf_level,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkResult {
    pub mapping: PageMapping,
    pub latency_cycles: u64,
    /// Physical line addresses read by the walk, root side first.
    pub memory_refs: Vec<u64>,
    /// Radix levels a walk without PSC help would have read.
    pub levels_walked: u32,
}

#[derive(Debug, Clone)]
struct PscLevel {
    capacity: usize,
    /// (tag, lru stamp)
    entries: Vec<(u64, u64)>,
}

/// Split paging-structure caches, one per non-leaf radix level. Each caches
/// the entry at its level that points to the next-lower node.
#[derive(Debug, Clone)]
pub struct PscSet {
    levels: u32,
    caches: Vec<PscLevel>,
    clock: u64,
}

impl PscSet {
    /// `sizes[0]` is the root level's capacity.
    pub fn new(levels: u32, sizes: &[usize]) -> Self {
        assert_eq!(sizes.len(), levels as usize - 1);
        Self {
            levels,
            caches: sizes
                .iter()
                .map(|&capacity| PscLevel {
                    capacity,
                    entries: Vec::with_capacity(capacity),
                })
                .collect(),
            clock: 0,
        }
    }

    pub fn disabled(levels: u32) -> Self {
        Self::new(levels, &vec![0; levels as usize - 1])
    }

    fn slot(&self, level: u32) -> usize {
        (self.levels - level) as usize
    }

    fn tag(vaddr: u64, level: u32) -> u64 {
        vaddr >> level_shift(level)
    }

    /// Deepest level whose cached entry covers `vaddr`, touching it.
    pub fn probe(&mut self, vaddr: u64) -> Option<u32> {
        self.clock += 1;
        for level in 2..=self.levels {
            let tag = Self::tag(vaddr, level);
            let slot = self.slot(level);
            if let Some(e) = self.caches[slot].entries.iter_mut().find(|e| e.0 == tag) {
                e.1 = self.clock;
                return Some(level);
            }
        }
        None
    }

    pub fn install(&mut self, vaddr: u64, level: u32) {
        self.clock += 1;
        let tag = Self::tag(vaddr, level);
        let clock = self.clock;
        let slot = self.slot(level);
        let cache = &mut self.caches[slot];
        if cache.capacity == 0 {
            return;
        }
        if let Some(e) = cache.entries.iter_mut().find(|e| e.0 == tag) {
            e.1 = clock;
        } else if cache.entries.len() < cache.capacity {
            cache.entries.push((tag, clock));
        } else {
            let victim = cache
                .entries
                .iter_mut()
                .min_by_key(|e| e.1)
                .expect("non-empty");
            *victim = (tag, clock);
        }
    }

    /// Valid entries per level, root first.
    pub fn occupancy(&self) -> Vec<usize> {
        self.caches.iter().map(|c| c.entries.len()).collect()
    }
}
