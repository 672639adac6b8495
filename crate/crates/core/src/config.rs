//! Simulation configuration and its flat `section.key = value` text format.
//!
//! ```text
//! # every key is optional; omitted keys keep their defaults
//! cache.l2c = {1MB, 16, 10cc, 32 mshr}
//! l2c.replacement = tiprp
//! tpb.organization = standalone
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cache::{CacheConfig, ReplacementId};
use crate::error::{Error, Result};
use crate::hierarchy::{HierarchyConfig, IdealL2c};
use crate::prefetch::{PageCrossMode, PrefetchConfig};
use crate::repl::{BipTraining, TiprpConfig, TrainingMode};
use crate::tlb::{TlbConfig, TlbHierarchyConfig, TpbOrganization};
use crate::trace::TraceGenSpec;
use crate::vm::VmConfig;

/// Every key accepted by [`SimConfig::set`].
pub const KEYS: &[&str] = &[
    "trace.path",
    "vm.levels",
    "vm.large_page_fraction",
    "vm.psc_sizes",
    "vm.seed",
    "tlb.itlb",
    "tlb.dtlb",
    "tlb.stlb",
    "tpb.organization",
    "tpb.entries",
    "tpb.ways",
    "tpb.extra_sets",
    "cache.l1i",
    "cache.l1d",
    "cache.l2c",
    "cache.llc",
    "memory.latency",
    "l2c.replacement",
    "llc.replacement",
    "tiprp.t1",
    "tiprp.t2",
    "tiprp.psel_bits",
    "tiprp.leaders",
    "tiprp.training",
    "tiprp.bip_training",
    "prefetch.enabled",
    "prefetch.lookahead",
    "prefetch.next_n",
    "prefetch.mode",
    "prefetch.inaccuracy",
    "prefetch.fill_llc",
    "prefetch.seed",
    "engine.warmup",
    "engine.measure",
    "engine.alpha",
    "engine.ideal_l2c",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TraceSource {
    File(PathBuf),
    Generated(TraceGenSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TpbKind {
    None,
    Standalone,
    Integrated,
}

/// tPB knobs kept independently so sweeps over one of them do not depend on
/// the order keys are set in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TpbSettings {
    pub kind: TpbKind,
    pub entries: usize,
    /// `None` means fully associative.
    pub ways: Option<usize>,
    pub extra_sets: usize,
}

impl Default for TpbSettings {
    fn default() -> Self {
        Self {
            kind: TpbKind::None,
            entries: 64,
            ways: None,
            extra_sets: 4,
        }
    }
}

impl TpbSettings {
    pub fn organization(&self) -> TpbOrganization {
        match self.kind {
            TpbKind::None => TpbOrganization::Disabled,
            TpbKind::Standalone => TpbOrganization::Standalone {
                entries: self.entries,
                ways: self.ways.unwrap_or(self.entries),
            },
            TpbKind::Integrated => TpbOrganization::IntegratedInStlb {
                extra_sets: self.extra_sets,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub warmup_records: u64,
    pub measure_records: u64,
    /// Fraction of a load/store miss latency that is not overlapped.
    pub alpha: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            warmup_records: 50_000,
            measure_records: 100_000,
            alpha: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct SimConfig {
    pub trace: Option<TraceSource>,
    pub vm: VmConfig,
    pub tlb: TlbHierarchyConfig,
    pub tpb: TpbSettings,
    pub caches: HierarchyConfig,
    pub tiprp: TiprpConfig,
    pub prefetch: PrefetchConfig,
    pub engine: EngineConfig,
}


impl SimConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(TraceSource::File(p)) = &mut cfg.trace {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Parses config text over the defaults. Syntax errors and bad values
    /// carry their 1-based line number; cross-field checks run afterwards.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::ConfigLine {
                    line,
                    message: format!("expected `key = value`, got `{content}`"),
                });
            };
            self.set(key.trim(), value.trim())
                .map_err(|message| Error::ConfigLine { line, message })?;
        }
        Ok(())
    }

    /// Sets one key. The error string names the problem but not the line.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value;
        match key {
            "trace.path" => self.trace = Some(TraceSource::File(PathBuf::from(unquote(v)))),
            "vm.levels" => self.vm.levels = num(v)?,
            "vm.large_page_fraction" => self.vm.large_page_fraction = float(v)?,
            "vm.psc_sizes" => self.vm.psc_sizes = list(v)?,
            "vm.seed" => self.vm.seed = num(v)?,
            "tlb.itlb" => self.tlb.itlb = tlb(v)?,
            "tlb.dtlb" => self.tlb.dtlb = tlb(v)?,
            "tlb.stlb" => self.tlb.stlb = tlb(v)?,
            "tpb.organization" => {
                self.tpb.kind = match v {
                    "none" | "off" => TpbKind::None,
                    "standalone" => TpbKind::Standalone,
                    "integrated" => TpbKind::Integrated,
                    _ => return Err(format!("unknown tpb organization `{v}` (none|standalone|integrated)")),
                }
            }
            "tpb.entries" => self.tpb.entries = num(v)?,
            "tpb.ways" => {
                self.tpb.ways = match v {
                    "full" => None,
                    _ => Some(num(v)?),
                }
            }
            "tpb.extra_sets" => self.tpb.extra_sets = num(v)?,
            "cache.l1i" => self.caches.l1i = cache(v, &self.caches.l1i)?,
            "cache.l1d" => self.caches.l1d = cache(v, &self.caches.l1d)?,
            "cache.l2c" => self.caches.l2c = cache(v, &self.caches.l2c)?,
            "cache.llc" => self.caches.llc = cache(v, &self.caches.llc)?,
            "memory.latency" => self.caches.memory_latency = num(v)?,
            "l2c.replacement" => self.caches.l2c.replacement = replacement(v)?,
            "llc.replacement" => self.caches.llc.replacement = replacement(v)?,
            "tiprp.t1" => self.tiprp.t1 = num(v)?,
            "tiprp.t2" => self.tiprp.t2 = num(v)?,
            "tiprp.psel_bits" => self.tiprp.psel_bits = num(v)?,
            "tiprp.leaders" => {
                let l: Vec<usize> = list(v)?;
                self.tiprp.leaders = l
                    .try_into()
                    .map_err(|_| "tiprp.leaders needs three counts [pip, npip, bip]".to_string())?;
            }
            "tiprp.training" => {
                self.tiprp.training = match v {
                    "asymmetric" => TrainingMode::Asymmetric,
                    "all-events" | "all" => TrainingMode::AllEvents,
                    _ => return Err(format!("unknown training mode `{v}` (asymmetric|all-events)")),
                }
            }
            "tiprp.bip_training" => {
                self.tiprp.bip_training = match v {
                    "mirror" => BipTraining::Mirror,
                    "same-as-npip" => BipTraining::SameAsNpip,
                    _ => return Err(format!("unknown bip training `{v}` (mirror|same-as-npip)")),
                }
            }
            "prefetch.enabled" => self.prefetch.enabled = boolean(v)?,
            "prefetch.lookahead" => self.prefetch.lookahead_lines = num(v)?,
            "prefetch.next_n" => self.prefetch.next_n = num(v)?,
            "prefetch.mode" => {
                self.prefetch.mode = PageCrossMode::parse(v).ok_or_else(|| {
                    format!("unknown prefetch mode `{v}` (no-page-cross|permit-page-cross|free-translation)")
                })?
            }
            "prefetch.inaccuracy" => self.prefetch.inaccuracy = float(v)?,
            "prefetch.fill_llc" => self.caches.fill_llc = boolean(v)?,
            "prefetch.seed" => self.prefetch.seed = num(v)?,
            "engine.warmup" => self.engine.warmup_records = num(v)?,
            "engine.measure" => self.engine.measure_records = num(v)?,
            "engine.alpha" => self.engine.alpha = float(v)?,
            "engine.ideal_l2c" => {
                self.caches.ideal_l2c = match v {
                    "off" | "none" => IdealL2c::Off,
                    "page-cross" | "pgc" => IdealL2c::PageCross,
                    "all" => IdealL2c::All,
                    _ => return Err(format!("unknown ideal_l2c `{v}` (off|page-cross|all)")),
                }
            }
            _ => return Err(format!("unknown key `{key}`")),
        }
        self.tlb.tpb = self.tpb.organization();
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.vm.validate()?;
        self.tlb.validate()?;
        for (name, c) in [
            ("cache.l1i", &self.caches.l1i),
            ("cache.l1d", &self.caches.l1d),
            ("cache.l2c", &self.caches.l2c),
            ("cache.llc", &self.caches.llc),
        ] {
            c.validate(name)?;
        }
        self.tiprp.validate()?;
        self.prefetch.validate()?;
        if self.engine.measure_records == 0 {
            return Err(Error::config("engine.measure must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.engine.alpha) {
            return Err(Error::config("engine.alpha must be in [0, 1]"));
        }
        Ok(())
    }

    /// Renders every key with its current value, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let t = |c: &TlbConfig| format!("{{{}, {}, {}, {}}}", c.entries, c.ways, c.latency, c.mshr);
        let c = |c: &CacheConfig| {
            format!("{{{}B, {}, {}cc, {} mshr}}", c.size_bytes, c.ways, c.latency, c.mshr_entries)
        };
        let l = |v: &[usize]| {
            format!(
                "[{}]",
                v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
            )
        };
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        if let Some(TraceSource::File(p)) = &self.trace {
            kv("trace.path", p.display().to_string());
        }
        kv("vm.levels", self.vm.levels.to_string());
        kv("vm.large_page_fraction", self.vm.large_page_fraction.to_string());
        kv("vm.psc_sizes", l(&self.vm.psc_sizes));
        kv("vm.seed", self.vm.seed.to_string());
        kv("tlb.itlb", t(&self.tlb.itlb));
        kv("tlb.dtlb", t(&self.tlb.dtlb));
        kv("tlb.stlb", t(&self.tlb.stlb));
        kv(
            "tpb.organization",
            match self.tpb.kind {
                TpbKind::None => "none",
                TpbKind::Standalone => "standalone",
                TpbKind::Integrated => "integrated",
            }
            .into(),
        );
        kv("tpb.entries", self.tpb.entries.to_string());
        kv("tpb.ways", self.tpb.ways.map_or("full".into(), |w| w.to_string()));
        kv("tpb.extra_sets", self.tpb.extra_sets.to_string());
        kv("cache.l1i", c(&self.caches.l1i));
        kv("cache.l1d", c(&self.caches.l1d));
        kv("cache.l2c", c(&self.caches.l2c));
        kv("cache.llc", c(&self.caches.llc));
        kv("memory.latency", self.caches.memory_latency.to_string());
        kv("l2c.replacement", self.caches.l2c.replacement.name().into());
        kv("llc.replacement", self.caches.llc.replacement.name().into());
        kv("tiprp.t1", self.tiprp.t1.to_string());
        kv("tiprp.t2", self.tiprp.t2.to_string());
        kv("tiprp.psel_bits", self.tiprp.psel_bits.to_string());
        kv("tiprp.leaders", l(&self.tiprp.leaders));
        kv(
            "tiprp.training",
            match self.tiprp.training {
                TrainingMode::Asymmetric => "asymmetric",
                TrainingMode::AllEvents => "all-events",
            }
            .into(),
        );
        kv(
            "tiprp.bip_training",
            match self.tiprp.bip_training {
                BipTraining::Mirror => "mirror",
                BipTraining::SameAsNpip => "same-as-npip",
            }
            .into(),
        );
        kv("prefetch.enabled", self.prefetch.enabled.to_string());
        kv("prefetch.lookahead", self.prefetch.lookahead_lines.to_string());
        kv("prefetch.next_n", self.prefetch.next_n.to_string());
        kv("prefetch.mode", self.prefetch.mode.name().into());
        kv("prefetch.inaccuracy", self.prefetch.inaccuracy.to_string());
        kv("prefetch.fill_llc", self.caches.fill_llc.to_string());
        kv("prefetch.seed", self.prefetch.seed.to_string());
        kv("engine.warmup", self.engine.warmup_records.to_string());
        kv("engine.measure", self.engine.measure_records.to_string());
        kv("engine.alpha", self.engine.alpha.to_string());
        kv(
            "engine.ideal_l2c",
            match self.caches.ideal_l2c {
                IdealL2c::Off => "off",
                IdealL2c::PageCross => "page-cross",
                IdealL2c::All => "all",
            }
            .into(),
        );
        out
    }
}

fn unquote(v: &str) -> &str {
    v.trim_matches('"')
}

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.replace('_', "")
        .parse()
        .map_err(|_| format!("expected an integer, got `{v}`"))
}

fn float(v: &str) -> std::result::Result<f64, String> {
    v.parse().map_err(|_| format!("expected a number, got `{v}`"))
}

fn boolean(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn list<T: std::str::FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    let inner = v
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| format!("expected a list like [1, 2], got `{v}`"))?;
    inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(num)
        .collect()
}

/// Splits `{a, b, c}` into fields, each optionally `name: value`.
fn fields(v: &str) -> std::result::Result<Vec<(Option<&str>, &str)>, String> {
    let inner = v
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .ok_or_else(|| format!("expected a braced tuple like {{64, 4, 1, 8}}, got `{v}`"))?;
    Ok(inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|f| match f.split_once(':') {
            Some((k, x)) => (Some(k.trim()), x.trim()),
            None => (None, f),
        })
        .collect())
}

/// Leading integer of a token such as `4cc` or `8 mshr`.
fn count(tok: &str) -> std::result::Result<u64, String> {
    let digits: String = tok.chars().take_while(|c| c.is_ascii_digit()).collect();
    let rest = tok[digits.len()..].trim();
    if digits.is_empty() || !rest.chars().all(|c| c.is_ascii_alphabetic()) {
        return Err(format!("expected a count, got `{tok}`"));
    }
    digits.parse().map_err(|_| format!("count out of range: `{tok}`"))
}

/// Byte size such as `32KB`, `1.375MB` or `4096`.
pub fn parse_size(tok: &str) -> std::result::Result<u64, String> {
    let t = tok.trim();
    let split = t
        .find(|c: char| !(c.is_ascii_digit() || c == '.'))
        .unwrap_or(t.len());
    let (n, unit) = t.split_at(split);
    let n: f64 = n.parse().map_err(|_| format!("expected a size, got `{tok}`"))?;
    let mult = match unit.trim().to_ascii_uppercase().as_str() {
        "" | "B" => 1u64,
        "KB" | "K" | "KIB" => 1 << 10,
        "MB" | "M" | "MIB" => 1 << 20,
        "GB" | "G" | "GIB" => 1 << 30,
        _ => return Err(format!("unknown size unit in `{tok}`")),
    };
    let bytes = n * mult as f64;
    if bytes.fract() != 0.0 || bytes < 0.0 {
        return Err(format!("size `{tok}` is not a whole number of bytes"));
    }
    Ok(bytes as u64)
}

fn tlb(v: &str) -> std::result::Result<TlbConfig, String> {
    let f = fields(v)?;
    let mut out = [None; 4];
    for (i, (name, val)) in f.iter().enumerate() {
        let slot = match name {
            None if i < 4 => i,
            None => return Err("tlb tuple takes 4 fields: {entries, ways, lat, mshr}".into()),
            Some("entries") => 0,
            Some("ways") => 1,
            Some("lat" | "latency") => 2,
            Some("mshr") => 3,
            Some(other) => return Err(format!("unknown tlb field `{other}`")),
        };
        out[slot] = Some(count(val)?);
    }
    match out {
        [Some(e), Some(w), Some(l), Some(m)] => Ok(TlbConfig::new(e as usize, w as usize, l, m as usize)),
        _ => Err("tlb tuple needs entries, ways, lat and mshr".into()),
    }
}

fn cache(v: &str, current: &CacheConfig) -> std::result::Result<CacheConfig, String> {
    let f = fields(v)?;
    let mut c = current.clone();
    let mut seen = [false; 4];
    for (i, (name, val)) in f.iter().enumerate() {
        let slot = match name {
            None if i < 4 => i,
            None => return Err("cache tuple takes 4 fields: {size, ways, lat, mshr}".into()),
            Some("size") => 0,
            Some("ways") => 1,
            Some("lat" | "latency") => 2,
            Some("mshr") => 3,
            Some(other) => return Err(format!("unknown cache field `{other}`")),
        };
        match slot {
            0 => c.size_bytes = parse_size(val)?,
            1 => c.ways = count(val)? as usize,
            2 => c.latency = count(val)?,
            _ => c.mshr_entries = count(val)? as usize,
        }
        seen[slot] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err("cache tuple needs size, ways, lat and mshr".into());
    }
    Ok(c)
}

fn replacement(v: &str) -> std::result::Result<ReplacementId, String> {
    ReplacementId::parse(&v.to_ascii_lowercase())
        .ok_or_else(|| format!("unknown replacement policy `{v}` (lru|srrip|pip|npip|bip|tiprp)"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repl::Policy;

    #[test]
    fn empty_text_is_the_baseline() {
        let cfg = SimConfig::parse("# nothing\n\n").unwrap();
        assert_eq!(cfg, SimConfig::default());
    }

    #[test]
    fn table_one_tuples_parse() {
        let text = "cache.l1i = {32KB, 8, 4cc, 8 mshr}\n\
                    cache.llc = {1.375MB, 11, 36cc, 64}\n\
                    tlb.stlb = {1536, 12, 8, 16}\n\
                    tlb.itlb = {entries: 64, ways: 4, lat: 1, mshr: 8}\n";
        let cfg = SimConfig::parse(text).unwrap();
        assert_eq!(cfg.caches.l1i.size_bytes, 32768);
        assert_eq!(cfg.caches.llc.size_bytes, 1441792);
        assert_eq!(cfg.caches.llc.sets(), 2048);
        assert_eq!(cfg.tlb.stlb, TlbConfig::new(1536, 12, 8, 16));
        assert_eq!(cfg.tlb.itlb, TlbConfig::new(64, 4, 1, 8));
    }

    #[test]
    fn tpb_keys_are_order_independent() {
        let a = SimConfig::parse("tpb.entries = 16\ntpb.organization = standalone\n").unwrap();
        let b = SimConfig::parse("tpb.organization = standalone\ntpb.entries = 16\n").unwrap();
        assert_eq!(a.tlb.tpb, TpbOrganization::Standalone { entries: 16, ways: 16 });
        assert_eq!(a, b);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = SimConfig::parse("vm.levels = 5\nthis is not a pair\n").unwrap_err();
        assert!(matches!(err, Error::ConfigLine { line: 2, .. }), "{err}");
        assert!(err.to_string().contains('2'));
    }

    #[test]
    fn unknown_key_rejected() {
        let err = SimConfig::parse("\n\ncache.l0 = {1KB, 1, 1, 1}\n").unwrap_err();
        assert!(matches!(err, Error::ConfigLine { line: 3, .. }));
    }

    #[test]
    fn semantic_errors_are_config_errors() {
        assert!(matches!(
            SimConfig::parse("cache.l2c = {1000B, 16, 10, 32}").unwrap_err(),
            Error::Config(_)
        ));
        assert!(matches!(
            SimConfig::parse("engine.measure = 0").unwrap_err(),
            Error::Config(_)
        ));
    }

    #[test]
    fn replacement_and_modes() {
        let cfg = SimConfig::parse(
            "l2c.replacement = tiprp\nllc.replacement = srrip\nprefetch.mode = no-page-cross\nengine.ideal_l2c = page-cross\n",
        )
        .unwrap();
        assert_eq!(cfg.caches.l2c.replacement, ReplacementId::Tiprp);
        assert_eq!(cfg.caches.llc.replacement, ReplacementId::Fixed(Policy::Srrip));
        assert_eq!(cfg.prefetch.mode, PageCrossMode::NoPageCross);
        assert_eq!(cfg.caches.ideal_l2c, IdealL2c::PageCross);
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = SimConfig::parse("tpb.organization = integrated\ntpb.extra_sets = 8\nl2c.replacement = tiprp\n").unwrap();
        cfg.vm.large_page_fraction = 0.25;
        assert_eq!(SimConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn every_key_is_settable_from_rendered_text() {
        let text = SimConfig::default().to_text();
        let keys: Vec<&str> = text.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        for k in &keys {
            assert!(KEYS.contains(k), "{k}");
        }
        assert_eq!(keys.len(), KEYS.len() - 1); // no trace.path by default
    }

    #[test]
    fn sizes() {
        assert_eq!(parse_size("48KB"), Ok(49152));
        assert_eq!(parse_size("1MB"), Ok(1 << 20));
        assert_eq!(parse_size("64"), Ok(64));
        assert!(parse_size("1.3B").is_err());
        assert!(parse_size("3 parsecs").is_err());
    }
}
