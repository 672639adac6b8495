//! Trace-driven model of the instruction-fetch memory path: TLBs, page
//! walks, a four-level cache hierarchy, an FDIP-style L1I prefetcher, the
//! translation prefetch buffer (tPB) and the TIPRP L2C replacement policy.

pub mod cache;
pub mod config;
pub mod engine;
pub mod error;
pub mod hierarchy;
pub mod mshr;
pub mod prefetch;
pub mod repl;
pub mod scenario;
pub mod stats;
pub mod tlb;
pub mod trace;
pub mod vm;

pub use config::SimConfig;
pub use engine::{compare, run, run_records, sweep};
pub use error::{Error, Result};
pub use stats::StatsReport;

pub const LINE_SHIFT: u32 = 6;
pub const LINE_SIZE: u64 = 1 << LINE_SHIFT;
pub const PAGE_4K_SHIFT: u32 = 12;
pub const PAGE_2M_SHIFT: u32 = 21;
