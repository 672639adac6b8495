//! The statistics report: a flat JSON object or one CSV row, columns in a
//! fixed documented order (see [`StatsReport::columns`]).

use serde::ser::{Serialize, SerializeMap, Serializer};
use serde_json::{Map, Value};

use crate::config::SimConfig;
use crate::mshr::MshrStats;

/// Physical page number width for a 52-bit physical address space.
pub const PPN_BITS: u32 = 40;
pub const ATTR_BITS: u32 = 8;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StructureStats {
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
    /// Misses per thousand measured instructions.
    pub mpki: f64,
    /// Mean over misses of the cycles from lookup to data.
    pub avg_miss_latency: f64,
}

impl StructureStats {
    pub fn new(accesses: u64, hits: u64, misses: u64, miss_latency_sum: u64, instructions: u64) -> Self {
        Self {
            accesses,
            hits,
            misses,
            mpki: per_kilo(misses, instructions),
            avg_miss_latency: ratio(miss_latency_sum, misses),
        }
    }
}

pub fn per_kilo(events: u64, instructions: u64) -> f64 {
    ratio(events * 1000, instructions)
}

pub fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Demand-only view of a cache (L1I prefetches excluded).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DemandStats {
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
    pub mpki: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StorageBreakdown {
    pub tpb_entries: u64,
    pub tpb_entry_bits: u64,
    pub tpb_bits: u64,
    pub cb_bits: u64,
    pub psel_bits: u64,
    pub total_bits: u64,
}

/// Bits of a tPB entry: vpn, ppn, attributes, valid, page size, LRU state.
pub fn tpb_entry_bits(vaddr_bits: u32, ways: usize) -> u64 {
    let vpn = vaddr_bits - crate::PAGE_4K_SHIFT;
    let lru = (ways.max(1) as u64).next_power_of_two().trailing_zeros();
    (vpn + PPN_BITS + ATTR_BITS + 1 + 1 + lru) as u64
}

/// Hardware added on top of the baseline: the tPB array, one cb bit per sTLB
/// MSHR entry and the two PSEL counters.
pub fn storage_overhead(cfg: &SimConfig) -> StorageBreakdown {
    let org = cfg.tpb.organization();
    let (entries, ways) = match org.geometry(&cfg.tlb.stlb) {
        Some((sets, ways, _)) => ((sets * ways) as u64, ways),
        None => (0, 1),
    };
    let entry_bits = if entries == 0 {
        0
    } else {
        tpb_entry_bits(cfg.vm.vaddr_bits(), ways)
    };
    let tpb_bits = entries * entry_bits;
    let cb_bits = cfg.tlb.stlb.mshr as u64;
    let psel_bits = 2 * cfg.tiprp.psel_bits as u64;
    StorageBreakdown {
        tpb_entries: entries,
        tpb_entry_bits: entry_bits,
        tpb_bits,
        cb_bits,
        psel_bits,
        total_bits: tpb_bits + cb_bits + psel_bits,
    }
}

pub const MSHR_NAMES: [&str; 7] = ["itlb", "dtlb", "stlb", "l1i", "l1d", "l2c", "llc"];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StatsReport {
    pub records: u64,
    pub instructions: u64,
    pub cycles: u64,
    pub ipc_proxy: f64,
    pub itlb: StructureStats,
    pub dtlb: StructureStats,
    pub stlb: StructureStats,
    pub tpb: StructureStats,
    pub l1i: StructureStats,
    pub l1d: StructureStats,
    pub l2c: StructureStats,
    pub llc: StructureStats,
    pub l1i_demand: DemandStats,
    pub l2c_demand: DemandStats,
    pub stlb_effective_misses: u64,
    pub stlb_effective_mpki: f64,
    pub demand_walks: u64,
    pub prefetch_walks: u64,
    pub walk_memory_refs: u64,
    pub avg_walk_latency: f64,
    pub tpb_hits_demand: u64,
    pub tpb_hits_prefetch: u64,
    pub tpb_hit_rate: f64,
    pub tpb_fills: u64,
    pub free_translations: u64,
    pub prefetches_emitted: u64,
    pub prefetches_page_cross: u64,
    pub prefetches_discarded_page_cross: u64,
    pub prefetches_dropped: u64,
    pub prefetches_wrong: u64,
    pub l2c_pb_fills: u64,
    pub l2c_bypasses: u64,
    pub l2c_lost_prefetch_misses: u64,
    pub l2c_credited_hits: u64,
    pub side_buffer_hits: u64,
    /// pb=1 L2C lines by demand hits served: 0, 1-8, 9-128, >128.
    pub reuse_histogram: [u64; 4],
    /// Follower-set accesses by selected policy: PIP, NPIP, BIP.
    pub policy_selection: [u64; 3],
    pub psel1: u32,
    pub psel2: u32,
    pub storage: StorageBreakdown,
    /// Whole-run MSHR counters (warmup included), in [`MSHR_NAMES`] order.
    pub mshr: [MshrStats; 7],
}

impl StatsReport {
    /// Flat `(column, value)` pairs in their documented order.
    pub fn columns(&self) -> Vec<(String, Value)> {
        let mut c: Vec<(String, Value)> = Vec::with_capacity(160);
        let mut push = |k: &str, v: Value| c.push((k.to_string(), v));
        push("records", self.records.into());
        push("instructions", self.instructions.into());
        push("cycles", self.cycles.into());
        push("ipc_proxy", self.ipc_proxy.into());
        for (name, s) in [
            ("itlb", &self.itlb),
            ("dtlb", &self.dtlb),
            ("stlb", &self.stlb),
            ("tpb", &self.tpb),
            ("l1i", &self.l1i),
            ("l1d", &self.l1d),
            ("l2c", &self.l2c),
            ("llc", &self.llc),
        ] {
            push(&format!("{name}_accesses"), s.accesses.into());
            push(&format!("{name}_hits"), s.hits.into());
            push(&format!("{name}_misses"), s.misses.into());
            push(&format!("{name}_mpki"), s.mpki.into());
            push(&format!("{name}_avg_miss_latency"), s.avg_miss_latency.into());
        }
        for (name, s) in [("l1i_demand", &self.l1i_demand), ("l2c_demand", &self.l2c_demand)] {
            push(&format!("{name}_accesses"), s.accesses.into());
            push(&format!("{name}_hits"), s.hits.into());
            push(&format!("{name}_misses"), s.misses.into());
            push(&format!("{name}_mpki"), s.mpki.into());
        }
        push("stlb_effective_misses", self.stlb_effective_misses.into());
        push("stlb_effective_mpki", self.stlb_effective_mpki.into());
        push("demand_walks", self.demand_walks.into());
        push("prefetch_walks", self.prefetch_walks.into());
        push("walk_memory_refs", self.walk_memory_refs.into());
        push("avg_walk_latency", self.avg_walk_latency.into());
        push("tpb_hits_demand", self.tpb_hits_demand.into());
        push("tpb_hits_prefetch", self.tpb_hits_prefetch.into());
        push("tpb_hit_rate", self.tpb_hit_rate.into());
        push("tpb_fills", self.tpb_fills.into());
        push("free_translations", self.free_translations.into());
        push("prefetches_emitted", self.prefetches_emitted.into());
        push("prefetches_page_cross", self.prefetches_page_cross.into());
        push("prefetches_discarded_page_cross", self.prefetches_discarded_page_cross.into());
        push("prefetches_dropped", self.prefetches_dropped.into());
        push("prefetches_wrong", self.prefetches_wrong.into());
        push("l2c_pb_fills", self.l2c_pb_fills.into());
        push("l2c_bypasses", self.l2c_bypasses.into());
        push("l2c_lost_prefetch_misses", self.l2c_lost_prefetch_misses.into());
        push("l2c_credited_hits", self.l2c_credited_hits.into());
        push("side_buffer_hits", self.side_buffer_hits.into());
        for (suffix, v) in ["0", "1_8", "9_128", "gt_128"].iter().zip(self.reuse_histogram) {
            push(&format!("prefetched_line_reuse_histogram_{suffix}"), v.into());
        }
        for (suffix, v) in ["pip", "npip", "bip"].iter().zip(self.policy_selection) {
            push(&format!("policy_selection_histogram_{suffix}"), v.into());
        }
        push("psel1", self.psel1.into());
        push("psel2", self.psel2.into());
        push("storage_tpb_entry_bits", self.storage.tpb_entry_bits.into());
        push("storage_tpb_bits", self.storage.tpb_bits.into());
        push("storage_cb_bits", self.storage.cb_bits.into());
        push("storage_psel_bits", self.storage.psel_bits.into());
        push("storage_overhead_bits", self.storage.total_bits.into());
        for (name, m) in MSHR_NAMES.iter().zip(&self.mshr) {
            push(&format!("{name}_mshr_allocations"), m.alloc_requests.into());
            push(&format!("{name}_mshr_completions"), m.completions.into());
            push(&format!("{name}_mshr_drops"), m.drops.into());
            push(&format!("{name}_mshr_merges"), m.merges.into());
            push(&format!("{name}_mshr_stalls"), m.stalls.into());
        }
        c
    }

    pub fn to_json_value(&self) -> Value {
        Value::Object(self.columns().into_iter().collect::<Map<_, _>>())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("report serializes")
    }

    pub fn csv_header() -> String {
        StatsReport::default()
            .columns()
            .into_iter()
            .map(|(k, _)| k)
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn csv_row(&self) -> String {
        self.columns()
            .into_iter()
            .map(|(_, v)| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl Serialize for StatsReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let cols = self.columns();
        let mut m = s.serialize_map(Some(cols.len()))?;
        for (k, v) in &cols {
            m.serialize_entry(k, v)?;
        }
        m.end()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;

    #[test]
    fn storage_defaults() {
        let cfg = SimConfig::parse("tpb.organization = standalone\nl2c.replacement = tiprp\n").unwrap();
        let s = storage_overhead(&cfg);
        assert_eq!(s.cb_bits, 16);
        assert_eq!(s.psel_bits, 20);
        assert_eq!(s.tpb_entry_bits, 45 + 40 + 8 + 1 + 1 + 6);
        assert_eq!(s.tpb_bits, 64 * 101);
        assert_eq!(s.total_bits, 6464 + 36);
    }

    #[test]
    fn integrated_storage_uses_stlb_ways() {
        let cfg = SimConfig::parse("tpb.organization = integrated\ntpb.extra_sets = 8\n").unwrap();
        let s = storage_overhead(&cfg);
        assert_eq!(s.tpb_entries, 96);
        assert_eq!(s.tpb_entry_bits, 45 + 40 + 8 + 1 + 1 + 4);
    }

    #[test]
    fn csv_header_matches_row_width() {
        let r = StatsReport::default();
        assert_eq!(
            StatsReport::csv_header().split(',').count(),
            r.csv_row().split(',').count()
        );
        let json = r.to_json_value();
        for key in ["cycles", "tpb_hit_rate", "prefetched_line_reuse_histogram_0", "storage_overhead_bits"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn mpki_and_latency() {
        let s = StructureStats::new(100, 90, 10, 500, 2000);
        assert_eq!(s.mpki, 5.0);
        assert_eq!(s.avg_miss_latency, 50.0);
        assert_eq!(StructureStats::new(0, 0, 0, 0, 0).mpki, 0.0);
    }
}
