//! L1I prefetch engine: a fetch-directed lookahead window over the trace's
//! own future plus a next-N-line streamer, with three page-cross modes.

use std::collections::{HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vm::PageSize;
use crate::LINE_SHIFT;

/// Requests remembered for duplicate suppression (FTQ lifetime).
pub const FTQ_ENTRIES: usize = 128;
/// Farthest a wrong prefetch lands from the intended line, in lines.
pub const MAX_WRONG_DISTANCE: u64 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PageCrossMode {
    NoPageCross,
    PermitPageCross,
    /// Page-cross prefetches that miss the sTLB translate at sTLB-hit cost.
    FreeTranslation,
}

impl PageCrossMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "nopagecross" => Some(Self::NoPageCross),
            "permitpagecross" => Some(Self::PermitPageCross),
            "freetranslation" => Some(Self::FreeTranslation),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::NoPageCross => "no-page-cross",
            Self::PermitPageCross => "permit-page-cross",
            Self::FreeTranslation => "free-translation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefetchConfig {
    pub enabled: bool,
    pub lookahead_lines: usize,
    pub next_n: usize,
    pub mode: PageCrossMode,
    /// Probability that a request is replaced by a wrong line.
    pub inaccuracy: f64,
    pub seed: u64,
}

impl Default for PrefetchConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            lookahead_lines: 32,
            next_n: 4,
            mode: PageCrossMode::PermitPageCross,
            inaccuracy: 0.0,
            seed: 1,
        }
    }
}

impl PrefetchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.inaccuracy) {
            return Err(Error::config("prefetch.inaccuracy must be in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrefetchRequest {
    /// Virtual address of the first byte of the target line.
    pub line_vaddr: u64,
    pub trigger_vaddr: u64,
    pub is_page_cross: bool,
    pub issue_cycle: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PrefetchCounters {
    pub candidates: u64,
    pub duplicates: u64,
    pub resident: u64,
    pub discarded_page_cross: u64,
    pub emitted: u64,
    pub emitted_page_cross: u64,
    pub wrong: u64,
}

#[derive(Debug, Clone)]
pub struct Prefetcher {
    cfg: PrefetchConfig,
    recent: VecDeque<u64>,
    recent_set: HashSet<u64>,
    rng: ChaCha8Rng,
    pub counters: PrefetchCounters,
}

impl Prefetcher {
    pub fn new(cfg: &PrefetchConfig) -> Self {
        Self {
            cfg: cfg.clone(),
            recent: VecDeque::with_capacity(FTQ_ENTRIES),
            recent_set: HashSet::new(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            counters: PrefetchCounters::default(),
        }
    }

    pub fn config(&self) -> &PrefetchConfig {
        &self.cfg
    }

    fn remember(&mut self, line: u64) {
        if self.recent.len() == FTQ_ENTRIES {
            let old = self.recent.pop_front().unwrap();
            self.recent_set.remove(&old);
        }
        self.recent.push_back(line);
        self.recent_set.insert(line);
    }

    /// Builds the requests triggered by the demand fetch of `current`.
    ///
    /// `window` holds upcoming distinct instruction line numbers (vaddr >> 6)
    /// in trace order; `trigger_page` is the page size `current` is mapped
    /// with; `is_resident(line)` reports whether a line is already in (or on
    /// its way to) the L1I.
    pub fn emit(
        &mut self,
        window: &[u64],
        current: u64,
        trigger_page: PageSize,
        issue_cycle: u64,
        mut is_resident: impl FnMut(u64) -> bool,
    ) -> Vec<PrefetchRequest> {
        if !self.cfg.enabled {
            return Vec::new();
        }
        let current_line = current >> LINE_SHIFT;
        let trigger_page_no = trigger_page.vpn(current);
        let lookahead = &window[..window.len().min(self.cfg.lookahead_lines)];
        let stream = (1..=self.cfg.next_n as u64).map(|k| current_line + k);
        let mut out = Vec::new();
        for target in lookahead.iter().copied().chain(stream) {
            self.counters.candidates += 1;
            let mut line = target;
            if self.cfg.inaccuracy > 0.0 && self.rng.gen::<f64>() < self.cfg.inaccuracy {
                line = target + self.rng.gen_range(1..=MAX_WRONG_DISTANCE);
                self.counters.wrong += 1;
            }
            if line == current_line || self.recent_set.contains(&line) {
                self.counters.duplicates += 1;
                continue;
            }
            let line_vaddr = line << LINE_SHIFT;
            let is_page_cross = trigger_page.vpn(line_vaddr) != trigger_page_no;
            if is_page_cross && self.cfg.mode == PageCrossMode::NoPageCross {
                self.counters.discarded_page_cross += 1;
                continue;
            }
            self.remember(line);
            if is_resident(line) {
                self.counters.resident += 1;
                continue;
            }
            self.counters.emitted += 1;
            if is_page_cross {
                self.counters.emitted_page_cross += 1;
            }
            out.push(PrefetchRequest {
                line_vaddr,
                trigger_vaddr: current,
                is_page_cross,
                issue_cycle,
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prefetcher(lookahead: usize, next_n: usize, mode: PageCrossMode) -> Prefetcher {
        Prefetcher::new(&PrefetchConfig {
            lookahead_lines: lookahead,
            next_n,
            mode,
            ..PrefetchConfig::default()
        })
    }

    #[test]
    fn next_line_across_page_boundary() {
        let mut p = prefetcher(0, 1, PageCrossMode::PermitPageCross);
        let last_line = 0x40_0fc0;
        let reqs = p.emit(&[], last_line, PageSize::Size4K, 7, |_| false);
        assert_eq!(reqs.len(), 1);
        assert_eq!(reqs[0].line_vaddr, 0x40_1000);
        assert!(reqs[0].is_page_cross);
        assert_eq!(reqs[0].issue_cycle, 7);
        assert_eq!(reqs[0].trigger_vaddr, last_line);
    }

    #[test]
    fn no_page_cross_discards() {
        let mut p = prefetcher(0, 1, PageCrossMode::NoPageCross);
        assert!(p.emit(&[], 0x40_0fc0, PageSize::Size4K, 0, |_| false).is_empty());
        assert_eq!(p.counters.discarded_page_cross, 1);
    }

    #[test]
    fn large_page_trigger_keeps_request_in_page() {
        let mut p = prefetcher(0, 1, PageCrossMode::NoPageCross);
        let reqs = p.emit(&[], 0x40_0fc0, PageSize::Size2M, 0, |_| false);
        assert_eq!(reqs.len(), 1);
        assert!(!reqs[0].is_page_cross);
    }

    #[test]
    fn resident_window_is_filtered() {
        let mut p = prefetcher(4, 0, PageCrossMode::PermitPageCross);
        let window = [0x10001, 0x10002, 0x10003, 0x10004];
        let reqs = p.emit(&window, 0x10000 << 6, PageSize::Size4K, 0, |_| true);
        assert!(reqs.is_empty());
        assert_eq!(p.counters.resident, 4);
    }

    #[test]
    fn duplicates_suppressed_within_ftq_lifetime() {
        let mut p = prefetcher(4, 4, PageCrossMode::PermitPageCross);
        let window = [0x10001, 0x10002, 0x10003, 0x10004];
        let first = p.emit(&window, 0x10000 << 6, PageSize::Size4K, 0, |_| false);
        assert_eq!(first.len(), 4);
        let second = p.emit(&[0x10002, 0x10003, 0x10004, 0x10005], 0x10001 << 6, PageSize::Size4K, 1, |_| false);
        assert_eq!(second.len(), 1);
        assert_eq!(second[0].line_vaddr, 0x10005 << 6);
    }

    #[test]
    fn ftq_forgets_old_requests() {
        let mut p = prefetcher(0, 1, PageCrossMode::PermitPageCross);
        let first = p.emit(&[], 0, PageSize::Size4K, 0, |_| false);
        assert_eq!(first.len(), 1);
        for k in 1..=FTQ_ENTRIES as u64 {
            p.emit(&[], (1000 + k) << 6, PageSize::Size4K, 0, |_| false);
        }
        assert_eq!(p.emit(&[], 0, PageSize::Size4K, 0, |_| false).len(), 1);
    }

    #[test]
    fn window_truncated_to_lookahead() {
        let mut p = prefetcher(2, 0, PageCrossMode::PermitPageCross);
        let reqs = p.emit(&[5, 6, 7, 8], 0, PageSize::Size4K, 0, |_| false);
        assert_eq!(reqs.len(), 2);
    }

    #[test]
    fn inaccuracy_moves_targets() {
        let mut p = Prefetcher::new(&PrefetchConfig {
            lookahead_lines: 0,
            next_n: 1,
            inaccuracy: 1.0,
            ..PrefetchConfig::default()
        });
        let reqs = p.emit(&[], 0x1000 << 6, PageSize::Size4K, 0, |_| false);
        assert_eq!(reqs.len(), 1);
        let line = reqs[0].line_vaddr >> 6;
        assert!(line > 0x1001 && line <= 0x1001 + MAX_WRONG_DISTANCE);
    }

    #[test]
    fn disabled_emits_nothing() {
        let mut p = Prefetcher::new(&PrefetchConfig {
            enabled: false,
            ..PrefetchConfig::default()
        });
        assert!(p.emit(&[1, 2, 3], 0, PageSize::Size4K, 0, |_| false).is_empty());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [
            PageCrossMode::NoPageCross,
            PageCrossMode::PermitPageCross,
            PageCrossMode::FreeTranslation,
        ] {
            assert_eq!(PageCrossMode::parse(m.name()), Some(m));
        }
        assert!(PageCrossMode::parse("sideways").is_none());
    }
}
