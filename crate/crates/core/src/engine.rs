//! Serial, single-issue fetch timing over a trace.
//!
//! Each new instruction line costs one cycle. A line that is not resident
//! in the L1I costs the cycles until it arrives (the rest of the path is
//! charged in full); a resident line additionally pays any translation time
//! beyond an iTLB hit. Loads and stores charge `alpha` times their latency
//! beyond a dTLB + L1D hit. Prefetches are issued at the demand's cycle and
//! overlap with everything else.

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::cache::{AccessClass, CacheCounters};
use crate::config::{SimConfig, TraceSource, KEYS};
use crate::error::{Error, Result};
use crate::hierarchy::{AccessResult, Level, MemoryHierarchy, Request};
use crate::mshr::MshrStats;
use crate::prefetch::{PageCrossMode, PrefetchCounters, PrefetchRequest, Prefetcher};
use crate::stats::{per_kilo, ratio, storage_overhead, DemandStats, StatsReport, StructureStats};
use crate::tlb::{
    Requester, StructCounters, TlbCounters, TlbHierarchy, Translation, WalkContext,
};
use crate::trace::{generate_trace, read_trace, AccessKind, TraceRecord};
use crate::vm::{PageTable, PscSet};
use crate::LINE_SHIFT;

/// Upper bound on instruction records scanned per lookahead slot.
const WINDOW_SCAN_FACTOR: usize = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IssueCounters {
    pub issued: u64,
    pub dropped_translation: u64,
    pub dropped_cache: u64,
}

trait Delta {
    fn delta(&self, earlier: &Self) -> Self;
}

impl Delta for u64 {
    fn delta(&self, earlier: &Self) -> Self {
        self - earlier
    }
}

impl<const N: usize> Delta for [u64; N] {
    fn delta(&self, earlier: &Self) -> Self {
        std::array::from_fn(|i| self[i] - earlier[i])
    }
}

macro_rules! impl_delta {
    ($($t:ty { $($f:ident),* $(,)? })*) => {$(
        impl Delta for $t {
            fn delta(&self, earlier: &Self) -> Self {
                Self { $($f: self.$f.delta(&earlier.$f)),* }
            }
        }
    )*};
}

impl_delta! {
    StructCounters { accesses, hits, misses, miss_latency_sum }
    TlbCounters {
        itlb, dtlb, stlb, tpb, stlb_effective_misses, demand_walks, prefetch_walks,
        walk_refs, walk_latency_sum, tpb_hits_demand, tpb_hits_prefetch, tpb_fills,
        tpb_fills_cb0, free_translations, dropped,
    }
    CacheCounters {
        accesses, hits, misses, miss_latency_sum, demand_accesses, demand_hits,
        demand_misses, pb_fills, bypasses, lost_prefetch_misses, credited_hits,
    }
    PrefetchCounters {
        candidates, duplicates, resident, discarded_page_cross, emitted,
        emitted_page_cross, wrong,
    }
    IssueCounters { issued, dropped_translation, dropped_cache }
    Snapshot {
        records, instructions, cycles, tlb, l1i, l1d, l2c, llc, l2c_reuse,
        selections, prefetch, issue, side_buffer_hits,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Snapshot {
    records: u64,
    instructions: u64,
    cycles: u64,
    tlb: TlbCounters,
    l1i: CacheCounters,
    l1d: CacheCounters,
    l2c: CacheCounters,
    llc: CacheCounters,
    l2c_reuse: [u64; 4],
    selections: [u64; 3],
    prefetch: PrefetchCounters,
    issue: IssueCounters,
    side_buffer_hits: u64,
}

/// One simulation instance: all mutable model state plus the cycle counter.
pub struct Simulator {
    cfg: SimConfig,
    pub page_table: PageTable,
    pub psc: PscSet,
    pub tlbs: TlbHierarchy,
    pub memory: MemoryHierarchy,
    pub prefetcher: Prefetcher,
    pub issue: IssueCounters,
    now: u64,
    records: u64,
    instructions: u64,
    last_line: Option<u64>,
    window: Vec<u64>,
    window_seen: HashSet<u64>,
}

impl Simulator {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let mut tlbs = TlbHierarchy::new(&cfg.tlb)?;
        tlbs.free_translation =
            cfg.prefetch.enabled && cfg.prefetch.mode == PageCrossMode::FreeTranslation;
        Ok(Self {
            cfg: cfg.clone(),
            page_table: PageTable::new(&cfg.vm),
            psc: PscSet::new(cfg.vm.levels, &cfg.vm.psc_sizes),
            tlbs,
            memory: MemoryHierarchy::new(&cfg.caches, &cfg.tiprp)?,
            prefetcher: Prefetcher::new(&cfg.prefetch),
            issue: IssueCounters::default(),
            now: 0,
            records: 0,
            instructions: 0,
            last_line: None,
            window: Vec::new(),
            window_seen: HashSet::new(),
        })
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// Simulates `trace[idx]`; later records feed the prefetch lookahead.
    pub fn step(&mut self, trace: &[TraceRecord], idx: usize) {
        let rec = trace[idx];
        self.records += 1;
        self.tlbs.advance(self.now);
        self.memory.advance(self.now);
        match rec.kind {
            AccessKind::IFetch => self.fetch(trace, idx),
            AccessKind::Load | AccessKind::Store => self.data(rec.vaddr),
        }
    }

    fn fetch(&mut self, trace: &[TraceRecord], idx: usize) {
        let vaddr = trace[idx].vaddr;
        let line = vaddr >> LINE_SHIFT;
        self.instructions += 1;
        if self.last_line == Some(line) {
            return;
        }
        self.last_line = Some(line);
        let now = self.now;

        let Translation::Resolved { mapping, ready: t_ready } =
            self.translate(vaddr, Requester::DemandIFetch, false, now)
        else {
            unreachable!("demand translations are never dropped");
        };
        let pline = mapping.paddr(vaddr) >> LINE_SHIFT;
        let access = self
            .memory
            .access(Level::L1I, pline, Request::demand(AccessClass::DemandCode), t_ready);
        let cost = match access {
            AccessResult::Hit { .. } => {
                1 + t_ready.saturating_sub(now + self.cfg.tlb.itlb.latency)
            }
            other => {
                let ready = other.ready().expect("demand accesses are never dropped");
                (ready - now).max(1)
            }
        };

        self.fill_window(trace, idx, line);
        let window = std::mem::take(&mut self.window);
        let Self {
            page_table,
            memory,
            prefetcher,
            ..
        } = self;
        let requests = prefetcher.emit(&window, vaddr, mapping.page_size, now, |l| {
            let v = l << LINE_SHIFT;
            page_table
                .peek(v)
                .is_some_and(|m| memory.l1i.holds(m.paddr(v) >> LINE_SHIFT))
        });
        self.window = window;
        for req in requests {
            self.issue_prefetch(&req);
        }

        self.now += cost;
    }

    fn data(&mut self, vaddr: u64) {
        let now = self.now;
        let Translation::Resolved { mapping, ready } =
            self.translate(vaddr, Requester::DemandData, false, now)
        else {
            unreachable!("demand translations are never dropped");
        };
        let pline = mapping.paddr(vaddr) >> LINE_SHIFT;
        let done = self
            .memory
            .access(Level::L1D, pline, Request::demand(AccessClass::DemandData), ready)
            .ready()
            .expect("demand accesses are never dropped");
        let hit_path = self.cfg.tlb.dtlb.latency + self.cfg.caches.l1d.latency;
        let excess = (done - now).saturating_sub(hit_path);
        self.now += (self.cfg.engine.alpha * excess as f64).floor() as u64;
    }

    fn translate(&mut self, vaddr: u64, who: Requester, page_cross: bool, at: u64) -> Translation {
        let mut ctx = WalkContext {
            page_table: &mut self.page_table,
            psc: &mut self.psc,
            memory: &mut self.memory,
        };
        self.tlbs.resolve(vaddr, who, page_cross, at, &mut ctx)
    }

    /// Translates and fetches a prefetch target into the L1I (and below).
    /// Returns the cycle the line arrives, or `None` if it was dropped.
    pub fn issue_prefetch(&mut self, req: &PrefetchRequest) -> Option<u64> {
        let t = self.translate(
            req.line_vaddr,
            Requester::L1IPrefetch,
            req.is_page_cross,
            req.issue_cycle,
        );
        let Translation::Resolved { mapping, ready } = t else {
            self.issue.dropped_translation += 1;
            return None;
        };
        let pline = mapping.paddr(req.line_vaddr) >> LINE_SHIFT;
        match self
            .memory
            .access(Level::L1I, pline, Request::prefetch_code(req.is_page_cross), ready)
            .ready()
        {
            Some(done) => {
                self.issue.issued += 1;
                Some(done)
            }
            None => {
                self.issue.dropped_cache += 1;
                None
            }
        }
    }

    /// Next distinct instruction lines after `trace[idx]`.
    fn fill_window(&mut self, trace: &[TraceRecord], idx: usize, current: u64) {
        self.window.clear();
        let want = self.cfg.prefetch.lookahead_lines;
        if want == 0 || !self.cfg.prefetch.enabled {
            return;
        }
        self.window_seen.clear();
        self.window_seen.insert(current);
        let mut scanned = 0;
        for rec in &trace[idx + 1..] {
            if rec.kind != AccessKind::IFetch {
                continue;
            }
            scanned += 1;
            let l = rec.vaddr >> LINE_SHIFT;
            if self.window_seen.insert(l) {
                self.window.push(l);
                if self.window.len() == want {
                    break;
                }
            }
            if scanned >= want * WINDOW_SCAN_FACTOR {
                break;
            }
        }
    }

    fn snapshot(&self) -> Snapshot {
        let m = &self.memory;
        Snapshot {
            records: self.records,
            instructions: self.instructions,
            cycles: self.now,
            tlb: self.tlbs.counters,
            l1i: m.l1i.counters,
            l1d: m.l1d.counters,
            l2c: m.l2c.counters,
            llc: m.llc.counters,
            l2c_reuse: m.l2c.store.reuse,
            selections: m.l2c.store.selections,
            prefetch: self.prefetcher.counters,
            issue: self.issue,
            side_buffer_hits: m.side_buffer_hits,
        }
    }

    /// Completes everything in flight.
    pub fn drain(&mut self) {
        self.tlbs.drain();
        self.memory.drain();
    }

    pub fn mshr_stats(&self) -> [MshrStats; 7] {
        let m = &self.memory;
        [
            self.tlbs.itlb_mshr.stats,
            self.tlbs.dtlb_mshr.stats,
            self.tlbs.stlb_mshr.stats,
            m.l1i.mshr.stats,
            m.l1d.mshr.stats,
            m.l2c.mshr.stats,
            m.llc.mshr.stats,
        ]
    }
}

fn build_report(cfg: &SimConfig, d: &Snapshot, sim: &Simulator, resident_reuse: [u64; 4]) -> StatsReport {
    let instr = d.instructions;
    let tlb = |c: &StructCounters| StructureStats::new(c.accesses, c.hits, c.misses, c.miss_latency_sum, instr);
    let cache = |c: &CacheCounters| StructureStats::new(c.accesses, c.hits, c.misses, c.miss_latency_sum, instr);
    let demand = |c: &CacheCounters| DemandStats {
        accesses: c.demand_accesses,
        hits: c.demand_hits,
        misses: c.demand_misses,
        mpki: per_kilo(c.demand_misses, instr),
    };
    let t = &d.tlb;
    let tiprp = sim.memory.l2c.store.tiprp();
    StatsReport {
        records: d.records,
        instructions: instr,
        cycles: d.cycles,
        ipc_proxy: ratio(instr, d.cycles),
        itlb: tlb(&t.itlb),
        dtlb: tlb(&t.dtlb),
        stlb: tlb(&t.stlb),
        tpb: tlb(&t.tpb),
        l1i: cache(&d.l1i),
        l1d: cache(&d.l1d),
        l2c: cache(&d.l2c),
        llc: cache(&d.llc),
        l1i_demand: demand(&d.l1i),
        l2c_demand: demand(&d.l2c),
        stlb_effective_misses: t.stlb_effective_misses,
        stlb_effective_mpki: per_kilo(t.stlb_effective_misses, instr),
        demand_walks: t.demand_walks,
        prefetch_walks: t.prefetch_walks,
        walk_memory_refs: t.walk_refs,
        avg_walk_latency: ratio(t.walk_latency_sum, t.demand_walks + t.prefetch_walks),
        tpb_hits_demand: t.tpb_hits_demand,
        tpb_hits_prefetch: t.tpb_hits_prefetch,
        tpb_hit_rate: ratio(t.tpb.hits, t.tpb.accesses),
        tpb_fills: t.tpb_fills,
        free_translations: t.free_translations,
        prefetches_emitted: d.prefetch.emitted,
        prefetches_page_cross: d.prefetch.emitted_page_cross,
        prefetches_discarded_page_cross: d.prefetch.discarded_page_cross,
        prefetches_dropped: d.issue.dropped_translation + d.issue.dropped_cache,
        prefetches_wrong: d.prefetch.wrong,
        l2c_pb_fills: d.l2c.pb_fills,
        l2c_bypasses: d.l2c.bypasses,
        l2c_lost_prefetch_misses: d.l2c.lost_prefetch_misses,
        l2c_credited_hits: d.l2c.credited_hits,
        side_buffer_hits: d.side_buffer_hits,
        reuse_histogram: std::array::from_fn(|i| d.l2c_reuse[i] + resident_reuse[i]),
        policy_selection: d.selections,
        psel1: tiprp.map_or(0, |s| s.psel1),
        psel2: tiprp.map_or(0, |s| s.psel2),
        storage: storage_overhead(cfg),
        mshr: sim.mshr_stats(),
    }
}

/// Loads or generates the configured trace.
pub fn load_trace(cfg: &SimConfig) -> Result<Vec<TraceRecord>> {
    match &cfg.trace {
        Some(TraceSource::File(p)) => read_trace(p),
        Some(TraceSource::Generated(spec)) => generate_trace(spec),
        None => Err(Error::config("no trace configured (set trace.path)")),
    }
}

pub fn run(cfg: &SimConfig) -> Result<StatsReport> {
    cfg.validate()?;
    run_records(cfg, &load_trace(cfg)?)
}

/// Warms up on the first `warmup_records`, then measures the next
/// `measure_records`. Records beyond that only feed the lookahead window.
pub fn run_records(cfg: &SimConfig, trace: &[TraceRecord]) -> Result<StatsReport> {
    cfg.validate()?;
    let warmup = cfg.engine.warmup_records as usize;
    let total = warmup + cfg.engine.measure_records as usize;
    if trace.len() < total {
        return Err(Error::config(format!(
            "trace has {} records but warmup + measure needs {total}",
            trace.len()
        )));
    }
    let mut sim = Simulator::new(cfg)?;
    for i in 0..warmup {
        sim.step(trace, i);
    }
    let start = sim.snapshot();
    for i in warmup..total {
        sim.step(trace, i);
    }
    let delta = sim.snapshot().delta(&start);
    let resident = sim.memory.l2c.store.resident_reuse();
    sim.drain();
    Ok(build_report(cfg, &delta, &sim, resident))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub base: StatsReport,
    pub variant: StatsReport,
    /// cycles(base) / cycles(variant)
    pub speedup: f64,
}

impl Comparison {
    pub fn new(base: StatsReport, variant: StatsReport) -> Self {
        let speedup = ratio(base.cycles, variant.cycles);
        Self {
            base,
            variant,
            speedup,
        }
    }
}

pub fn compare(base: &SimConfig, variant: &SimConfig) -> Result<Comparison> {
    if base.trace != variant.trace {
        return Err(Error::config("compared configs reference different traces"));
    }
    base.validate()?;
    variant.validate()?;
    compare_records(base, variant, &load_trace(base)?)
}

pub fn compare_records(base: &SimConfig, variant: &SimConfig, trace: &[TraceRecord]) -> Result<Comparison> {
    let mut out = parallel_map(&[base, variant], |c| run_records(c, trace)).into_iter();
    let b = out.next().unwrap()?;
    let v = out.next().unwrap()?;
    Ok(Comparison::new(b, v))
}

/// Per-value configs for a sweep; errors name the valid keys.
pub fn sweep_configs(cfg: &SimConfig, key: &str, values: &[String]) -> Result<Vec<SimConfig>> {
    if !KEYS.contains(&key) {
        return Err(Error::config(format!(
            "unknown sweep key `{key}`; valid keys: {}",
            KEYS.join(", ")
        )));
    }
    values
        .iter()
        .map(|v| {
            let mut c = cfg.clone();
            c.set(key, v)
                .map_err(|m| Error::config(format!("{key} = {v}: {m}")))?;
            c.validate()?;
            Ok(c)
        })
        .collect()
}

pub fn sweep(cfg: &SimConfig, key: &str, values: &[String]) -> Result<Vec<(String, StatsReport)>> {
    let configs = sweep_configs(cfg, key, values)?;
    if configs.is_empty() {
        return Ok(Vec::new());
    }
    let trace = load_trace(cfg)?;
    sweep_records(key, values, &configs, &trace)
}

fn sweep_records(
    _key: &str,
    values: &[String],
    configs: &[SimConfig],
    trace: &[TraceRecord],
) -> Result<Vec<(String, StatsReport)>> {
    parallel_map(configs, |c| run_records(c, trace))
        .into_iter()
        .zip(values)
        .map(|(r, v)| r.map(|r| (v.clone(), r)))
        .collect()
}

/// Sweep over an in-memory trace.
pub fn sweep_with_trace(
    cfg: &SimConfig,
    key: &str,
    values: &[String],
    trace: &[TraceRecord],
) -> Result<Vec<(String, StatsReport)>> {
    let configs = sweep_configs(cfg, key, values)?;
    sweep_records(key, values, &configs, trace)
}

/// Geometric mean; 1.0 for an empty slice.
pub fn geomean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 1.0;
    }
    (values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp()
}

/// Worker count: `IPCAT_THREADS` if set, else the available parallelism.
pub fn thread_budget() -> usize {
    std::env::var("IPCAT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Maps `f` over `items` on up to [`thread_budget`] threads, preserving order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = thread_budget().min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every item mapped"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::TraceRecord;

    fn quiet() -> SimConfig {
        let mut c = SimConfig::default();
        c.prefetch.enabled = false;
        c.engine.warmup_records = 0;
        c
    }

    #[test]
    fn single_cold_line_pays_full_path() {
        let mut cfg = quiet();
        cfg.engine.measure_records = 1;
        let r = run_records(&cfg, &[TraceRecord::ifetch(0x40_0000)]).unwrap();
        // iTLB + sTLB + walk, then the L1I miss path to memory
        let walk = 1 + 5 * 146;
        assert_eq!(r.cycles, 1 + 8 + walk + 150);
        assert!(r.cycles >= 150);
        assert_eq!(r.l1i.misses, 1);
    }

    #[test]
    fn resident_loop_costs_one_cycle_per_line() {
        let mut cfg = quiet();
        let body: Vec<TraceRecord> = (0..8).map(|i| TraceRecord::ifetch(0x40_0000 + i * 64)).collect();
        let trace: Vec<TraceRecord> = body.iter().cycle().take(8 * 50).copied().collect();
        cfg.engine.warmup_records = 8 * 10;
        cfg.engine.measure_records = 8 * 40;
        let r = run_records(&cfg, &trace).unwrap();
        assert_eq!(r.cycles, 8 * 40);
        assert_eq!(r.instructions, 8 * 40);
        assert_eq!(r.l1i.misses, 0);
    }

    #[test]
    fn same_line_repeats_are_free() {
        let mut cfg = quiet();
        cfg.engine.warmup_records = 1;
        cfg.engine.measure_records = 3;
        let t = [0x40_0000u64, 0x40_0000, 0x40_0010, 0x40_0020].map(TraceRecord::ifetch);
        let r = run_records(&cfg, &t).unwrap();
        assert_eq!(r.cycles, 0);
        assert_eq!(r.instructions, 3);
    }

    #[test]
    fn short_trace_is_config_error() {
        let cfg = quiet();
        let e = run_records(&cfg, &[TraceRecord::ifetch(0)]).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn data_charges_alpha_of_excess() {
        let mut cfg = quiet();
        cfg.engine.measure_records = 1;
        let r = run_records(&cfg, &[TraceRecord::new(AccessKind::Load, 1 << 40)]).unwrap();
        // dTLB + sTLB + walk + L1D path (5 + 10 + 36 + 100) minus the 6-cycle hit path
        let total: u64 = 1 + 8 + (1 + 5 * 146) + 151;
        assert_eq!(r.cycles, (total - 6) / 4);
    }

    #[test]
    fn geomean_of_suite() {
        assert!((geomean(&[1.0, 1.0, 8.0]) - 2.0).abs() < 1e-12);
        assert_eq!(geomean(&[]), 1.0);
    }

    #[test]
    fn parallel_map_keeps_order() {
        let v: Vec<u64> = (0..50).collect();
        assert_eq!(parallel_map(&v, |x| x * 2), v.iter().map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn sweep_rejects_unknown_key_and_accepts_empty() {
        let cfg = quiet();
        let e = sweep_configs(&cfg, "tpb.size", &["8".into()]).unwrap_err();
        assert!(e.to_string().contains("tpb.entries"));
        assert!(sweep(&cfg, "tpb.entries", &[]).unwrap().is_empty());
    }

    #[test]
    fn compare_rejects_different_traces() {
        let mut a = quiet();
        let mut b = quiet();
        a.trace = Some(TraceSource::File("a.ipct".into()));
        b.trace = Some(TraceSource::File("b.ipct".into()));
        assert!(matches!(compare(&a, &b), Err(Error::Config(_))));
    }
}
