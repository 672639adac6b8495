//! The L1I/L1D -> L2C -> LLC -> memory path with MSHRs at every level and
//! pb propagation down to the L2C.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::cache::{AccessClass, Cache, CacheConfig, FillMeta, Lookup};
use crate::error::Result;
use crate::repl::TiprpConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    L1I,
    L1D,
    L2C,
    Llc,
}

/// Idealized L2C handling of prefetched code lines: instead of being
/// installed they wait in an unbounded side buffer until an L2C miss asks
/// for them, at which point they are installed as if they had hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdealL2c {
    Off,
    /// Only lines fetched by page-crossing prefetches.
    PageCross,
    /// Every line fetched by an L1I prefetch.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Request {
    pub class: AccessClass,
    pub pb: bool,
    pub page_cross: bool,
}

impl Request {
    pub fn demand(class: AccessClass) -> Self {
        Self {
            class,
            pb: false,
            page_cross: false,
        }
    }

    pub fn prefetch_code(page_cross: bool) -> Self {
        Self {
            class: AccessClass::PrefetchCode,
            pb: true,
            page_cross,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessResult {
    Hit { ready: u64 },
    MissStarted { ready: u64 },
    MergedInFlight { ready: u64 },
    Dropped,
}

impl AccessResult {
    pub fn ready(self) -> Option<u64> {
        match self {
            AccessResult::Hit { ready }
            | AccessResult::MissStarted { ready }
            | AccessResult::MergedInFlight { ready } => Some(ready),
            AccessResult::Dropped => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyConfig {
    pub l1i: CacheConfig,
    pub l1d: CacheConfig,
    pub l2c: CacheConfig,
    pub llc: CacheConfig,
    pub memory_latency: u64,
    /// Whether prefetched code lines are installed in the LLC on their way up.
    pub fill_llc: bool,
    pub ideal_l2c: IdealL2c,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self {
            l1i: CacheConfig::new(32 << 10, 8, 4, 8),
            l1d: CacheConfig::new(48 << 10, 12, 5, 16),
            l2c: CacheConfig::new(1 << 20, 16, 10, 32),
            llc: CacheConfig::new(1441792, 11, 36, 64),
            memory_latency: 100,
            fill_llc: true,
            ideal_l2c: IdealL2c::Off,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MemoryHierarchy {
    pub l1i: Cache,
    pub l1d: Cache,
    pub l2c: Cache,
    pub llc: Cache,
    pub memory_latency: u64,
    fill_llc: bool,
    ideal: IdealL2c,
    side_buffer: HashSet<u64>,
    pub side_buffer_hits: u64,
}

impl MemoryHierarchy {
    pub fn new(cfg: &HierarchyConfig, tiprp: &TiprpConfig) -> Result<Self> {
        Ok(Self {
            l1i: Cache::new("l1i", &cfg.l1i, tiprp)?,
            l1d: Cache::new("l1d", &cfg.l1d, tiprp)?,
            l2c: Cache::new("l2c", &cfg.l2c, tiprp)?,
            llc: Cache::new("llc", &cfg.llc, tiprp)?,
            memory_latency: cfg.memory_latency,
            fill_llc: cfg.fill_llc,
            ideal: cfg.ideal_l2c,
            side_buffer: HashSet::new(),
            side_buffer_hits: 0,
        })
    }

    pub fn cache(&self, level: Level) -> &Cache {
        match level {
            Level::L1I => &self.l1i,
            Level::L1D => &self.l1d,
            Level::L2C => &self.l2c,
            Level::Llc => &self.llc,
        }
    }

    pub fn cache_mut(&mut self, level: Level) -> &mut Cache {
        match level {
            Level::L1I => &mut self.l1i,
            Level::L1D => &mut self.l1d,
            Level::L2C => &mut self.l2c,
            Level::Llc => &mut self.llc,
        }
    }

    /// Latency of a miss at `level` that goes all the way to memory.
    pub fn full_path_latency(&self, level: Level) -> u64 {
        let below = match level {
            Level::L1I | Level::L1D => self.full_path_latency(Level::L2C),
            Level::L2C => self.full_path_latency(Level::Llc),
            Level::Llc => self.memory_latency,
        };
        self.cache(level).latency() + below
    }

    /// Retires every fill that has completed by `now`, lowest level first.
    pub fn advance(&mut self, now: u64) {
        for level in [Level::Llc, Level::L2C, Level::L1D, Level::L1I] {
            while let Some(e) = self.cache_mut(level).mshr.pop_due(now) {
                self.install(level, e.key, e.meta);
            }
        }
    }

    /// Completes everything still in flight.
    pub fn drain(&mut self) {
        for level in [Level::Llc, Level::L2C, Level::L1D, Level::L1I] {
            while let Some(e) = self.cache_mut(level).mshr.pop_earliest() {
                self.install(level, e.key, e.meta);
            }
        }
    }

    fn install(&mut self, level: Level, line: u64, meta: FillMeta) {
        if level == Level::L2C && meta.pb {
            let divert = match self.ideal {
                IdealL2c::Off => false,
                IdealL2c::PageCross => meta.page_cross,
                IdealL2c::All => true,
            };
            if divert {
                self.side_buffer.insert(line);
                return;
            }
        }
        if level == Level::Llc && meta.pb && !self.fill_llc {
            return;
        }
        let credit = meta.credit && !meta.demand;
        self.cache_mut(level).install_with(line, meta.pb, credit);
    }

    /// A demand reached an L1I line (or fill) supplied by a prefetch that hit
    /// in the L2C: that L2C hit is counted as a demand hit now.
    fn claim_credit(&mut self, line: u64) {
        if self.l2c.store.credit(line) {
            self.l2c.counters.credited_hits += 1;
        }
    }

    /// Sends `req` for physical line `line` to `level` at cycle `at`.
    pub fn access(&mut self, level: Level, line: u64, req: Request, at: u64) -> AccessResult {
        let lat = self.cache(level).latency();
        let claims = level == Level::L1I && !req.class.is_prefetch();
        match self.cache_mut(level).lookup(line, req.class) {
            Lookup::Hit => {
                if claims && self.l1i.store.take_credit(line) {
                    self.claim_credit(line);
                }
                return AccessResult::Hit { ready: at + lat };
            }
            Lookup::InFlight { completion } => {
                if claims {
                    let owed = self
                        .l1i
                        .mshr
                        .find_mut(line)
                        .map(|e| std::mem::take(&mut e.meta.credit))
                        .unwrap_or(false);
                    if owed {
                        self.claim_credit(line);
                    }
                }
                let ready = completion.max(at + lat);
                self.cache_mut(level).counters.miss_latency_sum += ready - at;
                return AccessResult::MergedInFlight { ready };
            }
            Lookup::Miss => {}
        }

        if level == Level::L2C && self.side_buffer.remove(&line) {
            // Magic install: the line is served as an L2C hit.
            self.side_buffer_hits += 1;
            let l2c = &mut self.l2c;
            l2c.counters.misses -= 1;
            l2c.counters.hits += 1;
            if !req.class.is_prefetch() {
                l2c.counters.demand_misses -= 1;
                l2c.counters.demand_hits += 1;
            }
            l2c.install(line, true);
            if req.class.is_prefetch() {
                l2c.store.touch(line);
            } else {
                l2c.store.access(line);
            }
            return AccessResult::Hit { ready: at + lat };
        }

        let mut start = at;
        if self.cache(level).mshr.is_full() {
            if req.class.is_prefetch() {
                self.cache_mut(level).mshr.record_drop();
                return AccessResult::Dropped;
            }
            let cache = self.cache_mut(level);
            cache.mshr.stats.stalls += 1;
            let freed = cache.mshr.pop_earliest().expect("full MSHR has entries");
            start = start.max(freed.completion);
            self.install(level, freed.key, freed.meta);
        }

        let (ready, credit) = match level {
            Level::L1I | Level::L1D => {
                let r = self.access(Level::L2C, line, req, start + lat);
                let credit = level == Level::L1I
                    && req.class.is_prefetch()
                    && matches!(r, AccessResult::Hit { .. });
                (r.ready(), credit)
            }
            Level::L2C => (self.access(Level::Llc, line, req, start + lat).ready(), false),
            Level::Llc => (Some(start + lat + self.memory_latency), false),
        };
        let cache = self.cache_mut(level);
        let Some(ready) = ready else {
            cache.mshr.record_drop();
            return AccessResult::Dropped;
        };
        cache.counters.miss_latency_sum += ready - at;
        cache.mshr.allocate(
            line,
            ready,
            FillMeta {
                pb: req.pb,
                page_cross: req.page_cross,
                demand: !req.class.is_prefetch(),
                credit,
            },
        );
        AccessResult::MissStarted { ready }
    }

    pub fn side_buffer_len(&self) -> usize {
        self.side_buffer.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::ReplacementId;
    use crate::repl::Policy;

    fn hierarchy() -> MemoryHierarchy {
        MemoryHierarchy::new(&HierarchyConfig::default(), &TiprpConfig::default()).unwrap()
    }

    #[test]
    fn cold_demand_pays_full_path() {
        let mut h = hierarchy();
        let r = h.access(Level::L1I, 0x1000, Request::demand(AccessClass::DemandCode), 0);
        assert_eq!(r, AccessResult::MissStarted { ready: 4 + 10 + 36 + 100 });
        assert_eq!(h.full_path_latency(Level::L1I), 150);
        h.advance(150);
        assert!(h.l1i.store.contains(0x1000));
        assert!(!h.l2c.store.line(0x1000).unwrap().pb);
        let r = h.access(Level::L1I, 0x1000, Request::demand(AccessClass::DemandCode), 200);
        assert_eq!(r, AccessResult::Hit { ready: 204 });
    }

    #[test]
    fn prefetch_fill_sets_pb_in_l2c() {
        let mut h = hierarchy();
        h.access(Level::L1I, 0x2000, Request::prefetch_code(false), 0);
        h.advance(1000);
        assert!(h.l2c.store.line(0x2000).unwrap().pb);
        assert!(h.llc.store.contains(0x2000));
    }

    #[test]
    fn demand_merges_with_prefetch_in_flight() {
        let mut h = hierarchy();
        h.access(Level::L1I, 0x3000, Request::prefetch_code(false), 0);
        let r = h.access(Level::L1I, 0x3000, Request::demand(AccessClass::DemandCode), 20);
        assert_eq!(r, AccessResult::MergedInFlight { ready: 150 });
        assert_eq!(h.l2c.counters.accesses, 1);
        assert_eq!(h.llc.counters.accesses, 1);
        h.advance(150);
        assert!(h.l2c.store.line(0x3000).unwrap().pb);
    }

    #[test]
    fn prefetch_hit_in_l2c_counts_once_a_demand_claims_it() {
        let mut h = hierarchy();
        h.access(Level::L2C, 0x500, Request::demand(AccessClass::DemandCode), 0);
        h.access(Level::L2C, 0x501, Request::demand(AccessClass::DemandCode), 0);
        h.advance(200);
        h.access(Level::L1I, 0x500, Request::prefetch_code(false), 200);
        h.access(Level::L1I, 0x501, Request::prefetch_code(false), 200);
        assert_eq!(h.l2c.store.line(0x500).unwrap().uses, 0);

        // Claimed while still in flight.
        h.access(Level::L1I, 0x501, Request::demand(AccessClass::DemandCode), 205);
        assert_eq!(h.l2c.store.line(0x501).unwrap().uses, 1);
        h.advance(300);
        assert!(!h.l1i.store.line(0x501).unwrap().credit);

        // Claimed on the first L1I hit only.
        h.access(Level::L1I, 0x500, Request::demand(AccessClass::DemandCode), 300);
        h.access(Level::L1I, 0x500, Request::demand(AccessClass::DemandCode), 301);
        assert_eq!(h.l2c.store.line(0x500).unwrap().uses, 1);
        assert_eq!(h.l2c.counters.credited_hits, 2);
    }

    #[test]
    fn unclaimed_prefetch_hits_are_not_uses() {
        let mut h = hierarchy();
        h.access(Level::L1I, 0x600, Request::prefetch_code(false), 0);
        h.advance(200);
        h.l1i.store.invalidate(0x600);
        h.access(Level::L1I, 0x600, Request::prefetch_code(false), 200);
        h.advance(300);
        assert_eq!(h.l2c.store.line(0x600).unwrap().uses, 0);
        assert_eq!(h.l2c.counters.hits, 1);
    }

    #[test]
    fn full_mshr_drops_prefetch_and_stalls_demand() {
        let mut h = hierarchy();
        for i in 0..8 {
            assert!(h.access(Level::L1I, i, Request::prefetch_code(false), 0).ready().is_some());
        }
        assert_eq!(h.access(Level::L1I, 100, Request::prefetch_code(false), 0), AccessResult::Dropped);
        let r = h.access(Level::L1I, 101, Request::demand(AccessClass::DemandCode), 0);
        // Waits for the first fill to free a slot.
        assert_eq!(r.ready(), Some(150 + 150));
        assert_eq!(h.l1i.mshr.stats.stalls, 1);
        assert!(h.l1i.mshr.occupancy() <= 8);
    }

    #[test]
    fn bypassed_line_refetched_from_llc() {
        let cfg = HierarchyConfig {
            l2c: CacheConfig {
                replacement: ReplacementId::Fixed(Policy::Bip),
                ..CacheConfig::new(1 << 20, 16, 10, 32)
            },
            ..HierarchyConfig::default()
        };
        let mut h = MemoryHierarchy::new(&cfg, &TiprpConfig::default()).unwrap();
        h.access(Level::L1I, 0x40, Request::prefetch_code(false), 0);
        h.advance(200);
        assert!(!h.l2c.store.contains(0x40));
        let r = h.access(Level::L2C, 0x40, Request::demand(AccessClass::DemandCode), 300);
        assert!(matches!(r, AccessResult::MissStarted { ready: 346 }));
    }

    #[test]
    fn ideal_all_serves_from_side_buffer() {
        let cfg = HierarchyConfig {
            ideal_l2c: IdealL2c::All,
            ..HierarchyConfig::default()
        };
        let mut h = MemoryHierarchy::new(&cfg, &TiprpConfig::default()).unwrap();
        h.access(Level::L1I, 0x80, Request::prefetch_code(false), 0);
        h.advance(200);
        assert!(!h.l2c.store.contains(0x80));
        assert_eq!(h.side_buffer_len(), 1);
        let r = h.access(Level::L2C, 0x80, Request::demand(AccessClass::DemandCode), 300);
        assert_eq!(r, AccessResult::Hit { ready: 310 });
        assert!(h.l2c.store.contains(0x80));
        assert_eq!(h.l2c.counters.lost_prefetch_misses, 0);
    }

    #[test]
    fn ideal_page_cross_only_diverts_page_cross() {
        let cfg = HierarchyConfig {
            ideal_l2c: IdealL2c::PageCross,
            ..HierarchyConfig::default()
        };
        let mut h = MemoryHierarchy::new(&cfg, &TiprpConfig::default()).unwrap();
        h.access(Level::L1I, 0x80, Request::prefetch_code(false), 0);
        h.access(Level::L1I, 0x81, Request::prefetch_code(true), 0);
        h.advance(200);
        assert!(h.l2c.store.contains(0x80));
        assert!(!h.l2c.store.contains(0x81));
    }
}
