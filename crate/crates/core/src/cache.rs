//! Set-associative caches. [`TagStore`] is the untimed array plus replacement
//! state; [`Cache`] adds the MSHR file and per-level counters.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mshr::Mshr;
use crate::repl::{FillVerdict, Policy, TiprpConfig, TiprpState, TrainEvent};
use crate::{LINE_SIZE, LINE_SHIFT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheLine {
    /// Full line address; the set index bits are kept for simplicity.
    pub tag: u64,
    pub valid: bool,
    /// Installed by an L1I prefetch fill.
    pub pb: bool,
    pub rrpv: u8,
    pub lru_stamp: u64,
    /// Hits served since installation.
    pub uses: u32,
    /// Filled by a prefetch that hit in the next level; the first demand hit
    /// here is owed to that level as a demand hit.
    pub credit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReplacementId {
    Fixed(Policy),
    Tiprp,
}

impl ReplacementId {
    pub fn parse(s: &str) -> Option<Self> {
        if s == "tiprp" {
            Some(ReplacementId::Tiprp)
        } else {
            Policy::parse(s).map(ReplacementId::Fixed)
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ReplacementId::Fixed(p) => p.name(),
            ReplacementId::Tiprp => "tiprp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheConfig {
    pub size_bytes: u64,
    pub ways: usize,
    pub latency: u64,
    pub mshr_entries: usize,
    pub replacement: ReplacementId,
}

impl CacheConfig {
    pub fn new(size_bytes: u64, ways: usize, latency: u64, mshr_entries: usize) -> Self {
        Self {
            size_bytes,
            ways,
            latency,
            mshr_entries,
            replacement: ReplacementId::Fixed(Policy::Lru),
        }
    }

    pub fn sets(&self) -> usize {
        (self.size_bytes / (self.ways as u64 * LINE_SIZE)) as usize
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let fail = |m: String| Err(Error::config(format!("{name}: {m}")));
        if self.ways == 0 || self.mshr_entries == 0 {
            return fail("ways and mshr entries must be >= 1".into());
        }
        if self.size_bytes == 0 || !self.size_bytes.is_multiple_of(self.ways as u64 * LINE_SIZE) {
            return fail(format!(
                "size {} is not a multiple of ways x {LINE_SIZE}",
                self.size_bytes
            ));
        }
        if !self.sets().is_power_of_two() {
            return fail(format!("{} sets is not a power of two", self.sets()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Replacer {
    Fixed(Policy),
    Tiprp(Box<TiprpState>),
}

/// Buckets of hits served by pb=1 lines over their residency: 0, 1-8, 9-128, >128.
pub type ReuseHistogram = [u64; 4];

pub fn reuse_bucket(uses: u32) -> usize {
    match uses {
        0 => 0,
        1..=8 => 1,
        9..=128 => 2,
        _ => 3,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillOutcome {
    Inserted { way: usize, evicted: Option<CacheLine> },
    Bypassed,
    AlreadyPresent,
}

#[derive(Debug, Clone)]
pub struct TagStore {
    sets: usize,
    ways: usize,
    lines: Vec<CacheLine>,
    replacer: Replacer,
    clock: u64,
    /// Follower-set selections (pip, npip, bip), TIPRP only.
    pub selections: [u64; 3],
    /// pb=1 lines whose residency ended, bucketed by uses.
    pub reuse: ReuseHistogram,
}

impl TagStore {
    pub fn new(sets: usize, ways: usize, replacement: ReplacementId, tiprp: &TiprpConfig) -> Result<Self> {
        let replacer = match replacement {
            ReplacementId::Fixed(p) => Replacer::Fixed(p),
            ReplacementId::Tiprp => Replacer::Tiprp(Box::new(TiprpState::new(tiprp, sets)?)),
        };
        Ok(Self {
            sets,
            ways,
            lines: vec![CacheLine::default(); sets * ways],
            replacer,
            clock: 0,
            selections: [0; 3],
            reuse: [0; 4],
        })
    }

    pub fn sets(&self) -> usize {
        self.sets
    }

    pub fn ways(&self) -> usize {
        self.ways
    }

    pub fn set_index(&self, line: u64) -> usize {
        (line as usize) & (self.sets - 1)
    }

    pub fn set(&self, index: usize) -> &[CacheLine] {
        &self.lines[index * self.ways..(index + 1) * self.ways]
    }

    fn set_mut(&mut self, index: usize) -> &mut [CacheLine] {
        &mut self.lines[index * self.ways..(index + 1) * self.ways]
    }

    pub fn tiprp(&self) -> Option<&TiprpState> {
        match &self.replacer {
            Replacer::Tiprp(s) => Some(s),
            Replacer::Fixed(_) => None,
        }
    }

    pub fn tiprp_mut(&mut self) -> Option<&mut TiprpState> {
        match &mut self.replacer {
            Replacer::Tiprp(s) => Some(s),
            Replacer::Fixed(_) => None,
        }
    }

    /// Policy in force for `set` right now.
    pub fn policy_for(&self, set: usize) -> Policy {
        match &self.replacer {
            Replacer::Fixed(p) => *p,
            Replacer::Tiprp(s) => s.select(set),
        }
    }

    pub fn find(&self, line: u64) -> Option<usize> {
        let set = self.set_index(line);
        self.set(set).iter().position(|l| l.valid && l.tag == line)
    }

    pub fn contains(&self, line: u64) -> bool {
        self.find(line).is_some()
    }

    pub fn line(&self, line: u64) -> Option<&CacheLine> {
        let way = self.find(line)?;
        Some(&self.set(self.set_index(line))[way])
    }

    fn note_selection(&mut self, set: usize) {
        if let Replacer::Tiprp(s) = &self.replacer {
            if s.role(set) == crate::repl::SetRole::Follower {
                let idx = match s.follower_policy() {
                    Policy::Pip => 0,
                    Policy::Npip => 1,
                    _ => 2,
                };
                self.selections[idx] += 1;
            }
        }
    }

    /// Looks `line` up; on a hit applies promotion and hit training.
    pub fn access(&mut self, line: u64) -> bool {
        let set = self.set_index(line);
        self.note_selection(set);
        let Some(way) = self.find(line) else {
            return false;
        };
        self.clock += 1;
        let (policy, clock) = (self.policy_for(set), self.clock);
        let l = &mut self.set_mut(set)[way];
        policy.on_hit(l, clock);
        l.uses = l.uses.saturating_add(1);
        let pb = l.pb;
        if let Replacer::Tiprp(s) = &mut self.replacer {
            s.train(set, TrainEvent::Hit, pb);
        }
        true
    }

    /// Promotes `line` without counting a use or training; for prefetch hits.
    pub fn touch(&mut self, line: u64) -> bool {
        let set = self.set_index(line);
        self.note_selection(set);
        let Some(way) = self.find(line) else {
            return false;
        };
        self.clock += 1;
        let (policy, clock) = (self.policy_for(set), self.clock);
        policy.on_hit(&mut self.set_mut(set)[way], clock);
        true
    }

    /// Counts a deferred demand hit on `line` without touching recency.
    pub fn credit(&mut self, line: u64) -> bool {
        let set = self.set_index(line);
        let Some(way) = self.find(line) else {
            return false;
        };
        let l = &mut self.set_mut(set)[way];
        l.uses = l.uses.saturating_add(1);
        let pb = l.pb;
        if let Replacer::Tiprp(s) = &mut self.replacer {
            s.train(set, TrainEvent::Hit, pb);
        }
        true
    }

    /// Drops `line` without eviction side effects.
    pub fn invalidate(&mut self, line: u64) -> bool {
        let set = self.set_index(line);
        match self.find(line) {
            Some(way) => {
                self.set_mut(set)[way] = CacheLine::default();
                true
            }
            None => false,
        }
    }

    pub fn set_credit(&mut self, line: u64, credit: bool) {
        let set = self.set_index(line);
        if let Some(way) = self.find(line) {
            self.set_mut(set)[way].credit = credit;
        }
    }

    /// Clears and returns the credit flag of `line`.
    pub fn take_credit(&mut self, line: u64) -> bool {
        let set = self.set_index(line);
        match self.find(line) {
            Some(way) => std::mem::take(&mut self.set_mut(set)[way].credit),
            None => false,
        }
    }

    /// Installs `line` under the set's current policy.
    pub fn fill(&mut self, line: u64, pb: bool) -> FillOutcome {
        if self.find(line).is_some() {
            return FillOutcome::AlreadyPresent;
        }
        let set = self.set_index(line);
        let policy = self.policy_for(set);
        let rrpv = match policy.on_fill(pb) {
            FillVerdict::Bypass => return FillOutcome::Bypassed,
            FillVerdict::Insert { rrpv } => rrpv,
        };
        self.clock += 1;
        let clock = self.clock;
        let ways = self.set_mut(set);
        let (way, evicted) = match ways.iter().position(|l| !l.valid) {
            Some(w) => (w, None),
            None => {
                let w = policy.victim(ways);
                (w, Some(ways[w]))
            }
        };
        ways[way] = CacheLine {
            tag: line,
            valid: true,
            pb,
            rrpv,
            lru_stamp: clock,
            uses: 0,
            credit: false,
        };
        if let Some(victim) = evicted {
            if victim.pb {
                self.reuse[reuse_bucket(victim.uses)] += 1;
            }
            if let Replacer::Tiprp(s) = &mut self.replacer {
                s.train(set, TrainEvent::Eviction, victim.pb);
            }
        }
        FillOutcome::Inserted { way, evicted }
    }

    /// Reuse buckets of the pb=1 lines still resident.
    pub fn resident_reuse(&self) -> ReuseHistogram {
        let mut h = [0; 4];
        for l in self.lines.iter().filter(|l| l.valid && l.pb) {
            h[reuse_bucket(l.uses)] += 1;
        }
        h
    }

    pub fn valid_lines(&self) -> impl Iterator<Item = &CacheLine> {
        self.lines.iter().filter(|l| l.valid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccessClass {
    DemandCode,
    DemandData,
    PrefetchCode,
    Translation,
    Writeback,
}

impl AccessClass {
    pub fn is_prefetch(self) -> bool {
        self == AccessClass::PrefetchCode
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FillMeta {
    pub pb: bool,
    pub page_cross: bool,
    pub demand: bool,
    /// A prefetch served by a next-level hit, not yet claimed by a demand.
    pub credit: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheCounters {
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
    pub miss_latency_sum: u64,
    pub demand_accesses: u64,
    pub demand_hits: u64,
    pub demand_misses: u64,
    pub pb_fills: u64,
    pub bypasses: u64,
    /// Misses to lines that were prefetched in and lost before any reuse.
    pub lost_prefetch_misses: u64,
    /// Prefetch hits later claimed by a demand at the level above.
    pub credited_hits: u64,
}

#[derive(Debug, Clone)]
pub struct Cache {
    pub name: &'static str,
    pub cfg: CacheConfig,
    pub store: TagStore,
    pub mshr: Mshr<u64, FillMeta>,
    pub counters: CacheCounters,
    lost_prefetches: HashSet<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookup {
    Hit,
    InFlight { completion: u64 },
    Miss,
}

impl Cache {
    pub fn new(name: &'static str, cfg: &CacheConfig, tiprp: &TiprpConfig) -> Result<Self> {
        cfg.validate(name)?;
        Ok(Self {
            name,
            store: TagStore::new(cfg.sets(), cfg.ways, cfg.replacement, tiprp)?,
            mshr: Mshr::new(cfg.mshr_entries),
            cfg: cfg.clone(),
            counters: CacheCounters::default(),
            lost_prefetches: HashSet::new(),
        })
    }

    pub fn latency(&self) -> u64 {
        self.cfg.latency
    }

    /// Probe without side effects: resident or in flight.
    pub fn holds(&self, line: u64) -> bool {
        self.store.contains(line) || self.mshr.find(line).is_some()
    }

    /// Tag lookup plus MSHR search; merges into an in-flight entry.
    pub fn lookup(&mut self, line: u64, class: AccessClass) -> Lookup {
        let demand = !class.is_prefetch();
        self.counters.accesses += 1;
        if demand {
            self.counters.demand_accesses += 1;
        }
        let hit = if demand {
            self.store.access(line)
        } else {
            self.store.touch(line)
        };
        if hit {
            self.counters.hits += 1;
            if demand {
                self.counters.demand_hits += 1;
            }
            return Lookup::Hit;
        }
        self.counters.misses += 1;
        if demand {
            self.counters.demand_misses += 1;
        }
        if let Some(e) = self.mshr.find_mut(line) {
            e.meta.demand |= demand;
            let completion = e.completion;
            self.mshr.record_merge();
            return Lookup::InFlight { completion };
        }
        if self.lost_prefetches.remove(&line) {
            self.counters.lost_prefetch_misses += 1;
        }
        Lookup::Miss
    }

    /// Installs a completed fill.
    pub fn install(&mut self, line: u64, pb: bool) -> FillOutcome {
        self.install_with(line, pb, false)
    }

    pub fn install_with(&mut self, line: u64, pb: bool, credit: bool) -> FillOutcome {
        let out = self.store.fill(line, pb);
        if credit && matches!(out, FillOutcome::Inserted { .. }) {
            self.store.set_credit(line, true);
        }
        match out {
            FillOutcome::Inserted { evicted, .. } => {
                if pb {
                    self.counters.pb_fills += 1;
                }
                if let Some(v) = evicted {
                    if v.pb && v.uses == 0 {
                        self.lost_prefetches.insert(v.tag);
                    }
                }
            }
            FillOutcome::Bypassed => {
                self.counters.bypasses += 1;
                if pb {
                    self.lost_prefetches.insert(line);
                }
            }
            FillOutcome::AlreadyPresent => {}
        }
        out
    }

    pub fn line_address(paddr: u64) -> u64 {
        paddr >> LINE_SHIFT
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(sets: usize, ways: usize, policy: Policy) -> TagStore {
        TagStore::new(sets, ways, ReplacementId::Fixed(policy), &TiprpConfig::default()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(CacheConfig::new(32 << 10, 8, 4, 8).validate("l1i").is_ok());
        assert!(CacheConfig::new(1441792, 11, 36, 64).validate("llc").is_ok());
        assert_eq!(CacheConfig::new(1441792, 11, 36, 64).sets(), 2048);
        assert!(CacheConfig::new(48 << 10, 12, 5, 16).validate("l1d").is_ok());
        assert!(CacheConfig::new(3 * 64 * 8, 8, 4, 8).validate("odd").is_err());
        assert!(CacheConfig::new(1000, 8, 4, 8).validate("bad").is_err());
    }

    #[test]
    fn invalid_way_used_before_eviction() {
        let mut s = store(1, 4, Policy::Lru);
        for line in 0..4 {
            assert!(matches!(s.fill(line, false), FillOutcome::Inserted { evicted: None, .. }));
        }
        match s.fill(4, false) {
            FillOutcome::Inserted { way: 0, evicted: Some(v) } => assert_eq!(v.tag, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hits_count_uses_and_histogram() {
        let mut s = store(1, 1, Policy::Srrip);
        s.fill(7, true);
        for _ in 0..9 {
            assert!(s.access(7));
        }
        assert_eq!(s.resident_reuse(), [0, 0, 1, 0]);
        s.fill(8, true);
        assert_eq!(s.reuse, [0, 0, 1, 0]);
        assert_eq!(s.resident_reuse(), [1, 0, 0, 0]);
    }

    #[test]
    fn bip_bypass_then_miss() {
        let cfg = CacheConfig {
            replacement: ReplacementId::Fixed(Policy::Bip),
            ..CacheConfig::new(64 * 4, 4, 10, 4)
        };
        let mut c = Cache::new("l2c", &cfg, &TiprpConfig::default()).unwrap();
        assert_eq!(c.install(3, true), FillOutcome::Bypassed);
        assert_eq!(c.lookup(3, AccessClass::DemandCode), Lookup::Miss);
        assert_eq!(c.counters.lost_prefetch_misses, 1);
    }

    #[test]
    fn lookup_merges_in_flight() {
        let cfg = CacheConfig::new(64 * 4, 4, 10, 4);
        let mut c = Cache::new("l2c", &cfg, &TiprpConfig::default()).unwrap();
        c.mshr.allocate(5, 100, FillMeta { pb: true, page_cross: false, demand: false, credit: false });
        assert_eq!(c.lookup(5, AccessClass::DemandCode), Lookup::InFlight { completion: 100 });
        assert!(c.mshr.find(5).unwrap().meta.demand);
        assert!(c.mshr.find(5).unwrap().meta.pb);
    }
}
