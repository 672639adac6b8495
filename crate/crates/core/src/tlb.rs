//! TLB hierarchy: iTLB/dTLB, the shared sTLB with its MSHR (carrying the
//! cross-bit), and the translation prefetch buffer (tPB) that holds
//! translations fetched by walks of L1I page-crossing prefetches.
//!
//! Fill routing on walk completion:
//!
//! * cb = 1 (L1I page-cross prefetch) with a tPB: tPB + iTLB, never the sTLB.
//! * otherwise: sTLB + the requester's first-level TLB.
//!
//! A tPB hit (demand or prefetch) moves the entry into the sTLB and
//! invalidates the tPB copy, so a vpn is never valid in both.

use serde::{Deserialize, Serialize};

use crate::cache::AccessClass;
use crate::error::{Error, Result};
use crate::hierarchy::{Level, MemoryHierarchy, Request};
use crate::mshr::{Mshr, MshrEntry};
use crate::vm::{PageMapping, PageSize, PageTable, PscSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlbConfig {
    pub entries: usize,
    pub ways: usize,
    pub latency: u64,
    pub mshr: usize,
}

impl TlbConfig {
    pub const fn new(entries: usize, ways: usize, latency: u64, mshr: usize) -> Self {
        Self {
            entries,
            ways,
            latency,
            mshr,
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if self.entries == 0 || self.ways == 0 || self.mshr == 0 || !self.entries.is_multiple_of(self.ways) {
            return Err(Error::config(format!(
                "{name}: entries must be a non-zero multiple of ways, mshr >= 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TpbOrganization {
    Disabled,
    Standalone { entries: usize, ways: usize },
    /// Extra sets appended to the sTLB, with the sTLB's associativity.
    IntegratedInStlb { extra_sets: usize },
}

impl TpbOrganization {
    pub fn validate(&self, stlb: &TlbConfig) -> Result<()> {
        match *self {
            TpbOrganization::Disabled => Ok(()),
            TpbOrganization::Standalone { entries, ways } => {
                if !(8..=128).contains(&entries) || ways == 0 || entries % ways != 0 {
                    return Err(Error::config(
                        "tpb: standalone entries must be in 8..=128 and a multiple of ways",
                    ));
                }
                Ok(())
            }
            TpbOrganization::IntegratedInStlb { extra_sets } => {
                if extra_sets != 4 && extra_sets != 8 {
                    return Err(Error::config("tpb: integrated extra_sets must be 4 or 8"));
                }
                if stlb.ways == 0 {
                    return Err(Error::config("tpb: sTLB ways must be >= 1"));
                }
                Ok(())
            }
        }
    }

    /// (sets, ways, extra probe latency) or `None` when disabled.
    pub fn geometry(&self, stlb: &TlbConfig) -> Option<(usize, usize, u64)> {
        match *self {
            TpbOrganization::Disabled => None,
            TpbOrganization::Standalone { entries, ways } => Some((entries / ways, ways, 1)),
            TpbOrganization::IntegratedInStlb { extra_sets } => Some((extra_sets, stlb.ways, 0)),
        }
    }

    pub fn entries(&self, stlb: &TlbConfig) -> usize {
        self.geometry(stlb).map_or(0, |(s, w, _)| s * w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TlbEntry {
    pub vpn: u64,
    pub ppn: u64,
    pub page_size: PageSize,
    pub attr: u8,
    pub lru_stamp: u64,
}

impl TlbEntry {
    pub fn from_mapping(m: &PageMapping) -> Self {
        Self {
            vpn: m.vpn,
            ppn: m.ppn,
            page_size: m.page_size,
            attr: DEFAULT_ATTR,
            lru_stamp: 0,
        }
    }

    pub fn mapping(&self) -> PageMapping {
        PageMapping {
            page_size: self.page_size,
            vpn: self.vpn,
            ppn: self.ppn,
        }
    }
}

/// present | writable | user
const DEFAULT_ATTR: u8 = 0b111;

/// Set-associative translation array with LRU replacement. Lookups probe the
/// 4KB indexing and then the 2MB indexing.
#[derive(Debug, Clone)]
pub struct TlbArray {
    sets: usize,
    ways: usize,
    slots: Vec<Option<TlbEntry>>,
    clock: u64,
}

impl TlbArray {
    pub fn new(sets: usize, ways: usize) -> Self {
        assert!(sets > 0 && ways > 0);
        Self {
            sets,
            ways,
            slots: vec![None; sets * ways],
            clock: 0,
        }
    }

    pub fn from_config(cfg: &TlbConfig) -> Self {
        Self::new(cfg.entries / cfg.ways, cfg.ways)
    }

    pub fn capacity(&self) -> usize {
        self.sets * self.ways
    }

    fn set_range(&self, vpn: u64) -> std::ops::Range<usize> {
        let set = (vpn % self.sets as u64) as usize;
        set * self.ways..(set + 1) * self.ways
    }

    fn position(&self, page_size: PageSize, vpn: u64) -> Option<usize> {
        self.set_range(vpn).find(|&i| {
            matches!(self.slots[i], Some(e) if e.vpn == vpn && e.page_size == page_size)
        })
    }

    fn position_for(&self, vaddr: u64) -> Option<usize> {
        [PageSize::Size4K, PageSize::Size2M]
            .into_iter()
            .find_map(|size| self.position(size, size.vpn(vaddr)))
    }

    /// Hit test with LRU update.
    pub fn lookup(&mut self, vaddr: u64) -> Option<TlbEntry> {
        let i = self.position_for(vaddr)?;
        self.clock += 1;
        let e = self.slots[i].as_mut().unwrap();
        e.lru_stamp = self.clock;
        Some(*e)
    }

    pub fn peek(&self, vaddr: u64) -> Option<TlbEntry> {
        self.position_for(vaddr).and_then(|i| self.slots[i])
    }

    pub fn contains(&self, page_size: PageSize, vpn: u64) -> bool {
        self.position(page_size, vpn).is_some()
    }

    /// Inserts (or refreshes) `entry`, returning the evicted entry if any.
    pub fn insert(&mut self, mut entry: TlbEntry) -> Option<TlbEntry> {
        self.clock += 1;
        entry.lru_stamp = self.clock;
        if let Some(i) = self.position(entry.page_size, entry.vpn) {
            self.slots[i] = Some(entry);
            return None;
        }
        let range = self.set_range(entry.vpn);
        let slot = range
            .clone()
            .find(|&i| self.slots[i].is_none())
            .unwrap_or_else(|| {
                range
                    .min_by_key(|&i| (self.slots[i].unwrap().lru_stamp, i))
                    .unwrap()
            });
        self.slots[slot].replace(entry)
    }

    pub fn invalidate(&mut self, page_size: PageSize, vpn: u64) -> Option<TlbEntry> {
        let i = self.position(page_size, vpn)?;
        self.slots[i].take()
    }

    pub fn len(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> impl Iterator<Item = &TlbEntry> {
        self.slots.iter().flatten()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Requester {
    DemandIFetch,
    DemandData,
    L1IPrefetch,
}

impl Requester {
    pub fn is_instruction(self) -> bool {
        self != Requester::DemandData
    }

    pub fn is_prefetch(self) -> bool {
        self == Requester::L1IPrefetch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TlbLookup {
    Hit(TlbEntry),
    Miss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StlbMshrMeta {
    /// Set only for translations requested by L1I page-crossing prefetches.
    pub cb: bool,
    pub mapping: PageMapping,
    /// Requesters merged into this walk after it started.
    pub waiters: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Translation {
    Resolved { mapping: PageMapping, ready: u64 },
    Dropped,
}

impl Translation {
    pub fn ready(&self) -> Option<u64> {
        match self {
            Translation::Resolved { ready, .. } => Some(*ready),
            Translation::Dropped => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StructCounters {
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
    pub miss_latency_sum: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TlbCounters {
    pub itlb: StructCounters,
    pub dtlb: StructCounters,
    pub stlb: StructCounters,
    pub tpb: StructCounters,
    /// Demand lookups that missed the sTLB and, when present, the tPB.
    pub stlb_effective_misses: u64,
    pub demand_walks: u64,
    pub prefetch_walks: u64,
    pub walk_refs: u64,
    pub walk_latency_sum: u64,
    pub tpb_hits_demand: u64,
    pub tpb_hits_prefetch: u64,
    pub tpb_fills: u64,
    /// Contract violations: tPB fills attempted for walks with cb = 0.
    pub tpb_fills_cb0: u64,
    pub free_translations: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlbHierarchyConfig {
    pub itlb: TlbConfig,
    pub dtlb: TlbConfig,
    pub stlb: TlbConfig,
    pub tpb: TpbOrganization,
}

impl Default for TlbHierarchyConfig {
    fn default() -> Self {
        Self {
            itlb: TlbConfig::new(64, 4, 1, 8),
            dtlb: TlbConfig::new(64, 4, 1, 8),
            stlb: TlbConfig::new(1536, 12, 8, 16),
            tpb: TpbOrganization::Disabled,
        }
    }
}

impl TlbHierarchyConfig {
    pub fn validate(&self) -> Result<()> {
        self.itlb.validate("tlb.itlb")?;
        self.dtlb.validate("tlb.dtlb")?;
        self.stlb.validate("tlb.stlb")?;
        self.tpb.validate(&self.stlb)
    }
}

/// Mutable state a page walk needs besides the TLBs themselves.
pub struct WalkContext<'a> {
    pub page_table: &'a mut PageTable,
    pub psc: &'a mut PscSet,
    pub memory: &'a mut MemoryHierarchy,
}

type PageKey = (PageSize, u64);

#[derive(Debug, Clone)]
pub struct TlbHierarchy {
    cfg: TlbHierarchyConfig,
    pub itlb: TlbArray,
    pub dtlb: TlbArray,
    pub stlb: TlbArray,
    pub tpb: Option<TlbArray>,
    tpb_probe_latency: u64,
    pub itlb_mshr: Mshr<PageKey, PageMapping>,
    pub dtlb_mshr: Mshr<PageKey, PageMapping>,
    pub stlb_mshr: Mshr<PageKey, StlbMshrMeta>,
    /// Page-crossing prefetches that miss the sTLB are served at sTLB-hit
    /// latency without a walk.
    pub free_translation: bool,
    pub counters: TlbCounters,
}

impl TlbHierarchy {
    pub fn new(cfg: &TlbHierarchyConfig) -> Result<Self> {
        cfg.validate()?;
        let (tpb, tpb_probe_latency) = match cfg.tpb.geometry(&cfg.stlb) {
            Some((sets, ways, lat)) => (Some(TlbArray::new(sets, ways)), lat),
            None => (None, 0),
        };
        Ok(Self {
            cfg: *cfg,
            itlb: TlbArray::from_config(&cfg.itlb),
            dtlb: TlbArray::from_config(&cfg.dtlb),
            stlb: TlbArray::from_config(&cfg.stlb),
            tpb,
            tpb_probe_latency,
            itlb_mshr: Mshr::new(cfg.itlb.mshr),
            dtlb_mshr: Mshr::new(cfg.dtlb.mshr),
            stlb_mshr: Mshr::new(cfg.stlb.mshr),
            free_translation: false,
            counters: TlbCounters::default(),
        })
    }

    pub fn config(&self) -> &TlbHierarchyConfig {
        &self.cfg
    }

    /// Probes one first- or second-level structure, updating LRU on a hit.
    pub fn tlb_lookup(&mut self, level: TlbLevel, vaddr: u64) -> TlbLookup {
        let array = match level {
            TlbLevel::Itlb => &mut self.itlb,
            TlbLevel::Dtlb => &mut self.dtlb,
            TlbLevel::Stlb => &mut self.stlb,
        };
        match array.lookup(vaddr) {
            Some(e) => TlbLookup::Hit(e),
            None => TlbLookup::Miss,
        }
    }

    /// Probes the tPB after an instruction-side sTLB miss. A hit moves the
    /// entry into the sTLB and invalidates it in the tPB.
    pub fn tpb_lookup(&mut self, vaddr: u64, requester: Requester) -> TlbLookup {
        let Some(tpb) = self.tpb.as_mut() else {
            return TlbLookup::Miss;
        };
        self.counters.tpb.accesses += 1;
        let Some(entry) = tpb.lookup(vaddr) else {
            self.counters.tpb.misses += 1;
            return TlbLookup::Miss;
        };
        tpb.invalidate(entry.page_size, entry.vpn);
        self.stlb.insert(entry);
        self.counters.tpb.hits += 1;
        if requester.is_prefetch() {
            self.counters.tpb_hits_prefetch += 1;
        } else {
            self.counters.tpb_hits_demand += 1;
        }
        TlbLookup::Hit(entry)
    }

    /// Stores a translation fetched by a page-crossing prefetch walk in the
    /// tPB (and the iTLB). The sTLB is left untouched.
    pub fn tpb_fill(&mut self, entry: TlbEntry, cb: bool) {
        if !cb {
            debug_assert!(cb, "tPB fill for a walk without the cross-bit");
            self.counters.tpb_fills_cb0 += 1;
            return;
        }
        self.itlb.insert(entry);
        self.tpb_insert(entry);
    }

    fn tpb_insert(&mut self, entry: TlbEntry) {
        if self.stlb.contains(entry.page_size, entry.vpn) {
            return;
        }
        if let Some(tpb) = self.tpb.as_mut() {
            tpb.insert(entry);
            self.counters.tpb_fills += 1;
        }
    }

    fn stlb_fill(&mut self, entry: TlbEntry) {
        if let Some(tpb) = self.tpb.as_mut() {
            tpb.invalidate(entry.page_size, entry.vpn);
        }
        self.stlb.insert(entry);
    }

    fn complete_walk(&mut self, e: MshrEntry<PageKey, StlbMshrMeta>) {
        let entry = TlbEntry::from_mapping(&e.meta.mapping);
        if e.meta.cb && self.tpb.is_some() {
            self.tpb_insert(entry);
        } else {
            self.stlb_fill(entry);
        }
    }

    /// Retires walks and first-level fills that have completed by `now`.
    pub fn advance(&mut self, now: u64) {
        while let Some(e) = self.stlb_mshr.pop_due(now) {
            self.complete_walk(e);
        }
        while let Some(e) = self.itlb_mshr.pop_due(now) {
            self.itlb.insert(TlbEntry::from_mapping(&e.meta));
        }
        while let Some(e) = self.dtlb_mshr.pop_due(now) {
            self.dtlb.insert(TlbEntry::from_mapping(&e.meta));
        }
    }

    pub fn drain(&mut self) {
        while let Some(e) = self.stlb_mshr.pop_earliest() {
            self.complete_walk(e);
        }
        while let Some(e) = self.itlb_mshr.pop_earliest() {
            self.itlb.insert(TlbEntry::from_mapping(&e.meta));
        }
        while let Some(e) = self.dtlb_mshr.pop_earliest() {
            self.dtlb.insert(TlbEntry::from_mapping(&e.meta));
        }
    }

    /// Translates `vaddr` for `requester` starting at cycle `at`.
    ///
    /// Charges the first-level TLB, then the sTLB, then (instruction side)
    /// the tPB, then a page walk, merging into in-flight misses at each
    /// level. Prefetch requests that find a full MSHR are dropped; demand
    /// requests wait for the oldest entry to complete.
    pub fn resolve(
        &mut self,
        vaddr: u64,
        requester: Requester,
        page_cross: bool,
        at: u64,
        ctx: &mut WalkContext<'_>,
    ) -> Translation {
        // The simulator knows the mapping up front; timing is charged below.
        let mapping = ctx.page_table.translate(vaddr);
        let key = (mapping.page_size, mapping.vpn);
        let instr = requester.is_instruction();
        let prefetch = requester.is_prefetch();
        let l1_lat = if instr {
            self.cfg.itlb.latency
        } else {
            self.cfg.dtlb.latency
        };

        let hit = if instr {
            self.counters.itlb.accesses += 1;
            self.itlb.lookup(vaddr)
        } else {
            self.counters.dtlb.accesses += 1;
            self.dtlb.lookup(vaddr)
        };
        if hit.is_some() {
            self.l1_counters(instr).hits += 1;
            return Translation::Resolved {
                mapping,
                ready: at + l1_lat,
            };
        }
        self.l1_counters(instr).misses += 1;

        if let Some(e) = self.l1_mshr(instr).find(key) {
            let ready = e.completion.max(at + l1_lat);
            self.l1_mshr(instr).record_merge();
            self.l1_counters(instr).miss_latency_sum += ready - at;
            return Translation::Resolved { mapping, ready };
        }
        let mut start = at;
        if self.l1_mshr(instr).is_full() {
            if prefetch {
                self.l1_mshr(instr).record_drop();
                self.counters.dropped += 1;
                return Translation::Dropped;
            }
            let mshr = self.l1_mshr(instr);
            mshr.stats.stalls += 1;
            let freed = mshr.pop_earliest().expect("full MSHR has entries");
            start = start.max(freed.completion);
            let entry = TlbEntry::from_mapping(&freed.meta);
            if instr {
                self.itlb.insert(entry);
            } else {
                self.dtlb.insert(entry);
            }
        }

        let t_stlb = start + l1_lat;
        let Some(ready) = self.resolve_stlb(vaddr, key, mapping, requester, page_cross, t_stlb, ctx)
        else {
            self.l1_mshr(instr).record_drop();
            self.counters.dropped += 1;
            return Translation::Dropped;
        };
        self.l1_counters(instr).miss_latency_sum += ready - at;
        self.l1_mshr(instr).allocate(key, ready, mapping);
        Translation::Resolved { mapping, ready }
    }

    #[allow(clippy::too_many_arguments)]
    fn resolve_stlb(
        &mut self,
        vaddr: u64,
        key: PageKey,
        mapping: PageMapping,
        requester: Requester,
        page_cross: bool,
        at: u64,
        ctx: &mut WalkContext<'_>,
    ) -> Option<u64> {
        let stlb_lat = self.cfg.stlb.latency;
        self.counters.stlb.accesses += 1;
        if self.stlb.lookup(vaddr).is_some() {
            self.counters.stlb.hits += 1;
            return Some(at + stlb_lat);
        }
        self.counters.stlb.misses += 1;
        let mut t = at + stlb_lat;

        if requester.is_instruction() && self.tpb.is_some() {
            t += self.tpb_probe_latency;
            if let TlbLookup::Hit(_) = self.tpb_lookup(vaddr, requester) {
                self.counters.stlb.miss_latency_sum += t - at;
                return Some(t);
            }
        }
        if !requester.is_prefetch() {
            self.counters.stlb_effective_misses += 1;
        }

        let cb = requester.is_prefetch() && page_cross;
        if cb && self.free_translation {
            self.counters.free_translations += 1;
            return Some(at + stlb_lat);
        }

        if let Some(e) = self.stlb_mshr.find_mut(key) {
            e.meta.waiters += 1;
            let ready = e.completion.max(t);
            self.stlb_mshr.record_merge();
            self.counters.stlb.miss_latency_sum += ready - at;
            return Some(ready);
        }
        if self.stlb_mshr.is_full() {
            if requester.is_prefetch() {
                self.stlb_mshr.record_drop();
                return None;
            }
            self.stlb_mshr.stats.stalls += 1;
            let freed = self.stlb_mshr.pop_earliest().expect("full MSHR has entries");
            t = t.max(freed.completion);
            self.complete_walk(freed);
        }

        let memory = &mut *ctx.memory;
        let walk = ctx.page_table.walk(vaddr, ctx.psc, t, |line, issue| {
            memory
                .access(Level::L2C, line, Request::demand(AccessClass::Translation), issue)
                .ready()
                .expect("translation reads are never dropped")
        });
        debug_assert_eq!(walk.mapping, mapping);
        if requester.is_prefetch() {
            self.counters.prefetch_walks += 1;
        } else {
            self.counters.demand_walks += 1;
        }
        self.counters.walk_refs += walk.memory_refs.len() as u64;
        self.counters.walk_latency_sum += walk.latency_cycles;
        let ready = t + walk.latency_cycles;
        self.counters.stlb.miss_latency_sum += ready - at;
        self.stlb_mshr.allocate(
            key,
            ready,
            StlbMshrMeta {
                cb,
                mapping,
                waiters: 0,
            },
        );
        Some(ready)
    }

    fn l1_counters(&mut self, instr: bool) -> &mut StructCounters {
        if instr {
            &mut self.counters.itlb
        } else {
            &mut self.counters.dtlb
        }
    }

    fn l1_mshr(&mut self, instr: bool) -> &mut Mshr<PageKey, PageMapping> {
        if instr {
            &mut self.itlb_mshr
        } else {
            &mut self.dtlb_mshr
        }
    }

    /// No vpn is valid in both the tPB and the sTLB.
    pub fn is_exclusive(&self) -> bool {
        self.tpb.as_ref().is_none_or(|tpb| {
            tpb.entries()
                .all(|e| !self.stlb.contains(e.page_size, e.vpn))
        })
    }

    /// Sorted (page size, vpn, ppn) triples held by the sTLB.
    pub fn stlb_snapshot(&self) -> Vec<(PageSize, u64, u64)> {
        let mut v: Vec<_> = self
            .stlb
            .entries()
            .map(|e| (e.page_size, e.vpn, e.ppn))
            .collect();
        v.sort();
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TlbLevel {
    Itlb,
    Dtlb,
    Stlb,
}
