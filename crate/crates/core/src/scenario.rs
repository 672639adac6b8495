//! Named experiment presets. Each is a config overlay applied on top of the
//! base configuration, so `ipcat scenario <name>` always compares the base
//! against base + overlay.

use crate::config::SimConfig;
use crate::engine::{compare_records, Comparison};
use crate::error::{Error, Result};
use crate::trace::TraceRecord;

pub const SCENARIOS: &[(&str, &str)] = &[
    ("baseline", ""),
    ("no-page-cross", "prefetch.mode = no-page-cross\n"),
    ("permit-page-cross", "prefetch.mode = permit-page-cross\n"),
    ("free-translation", "prefetch.mode = free-translation\n"),
    ("ideal-l2c-pgc", "engine.ideal_l2c = page-cross\n"),
    ("ideal-l2c-all", "engine.ideal_l2c = all\n"),
    ("ipcat", "tpb.organization = standalone\nl2c.replacement = tiprp\n"),
    ("tiprp-only", "l2c.replacement = tiprp\n"),
    ("tpb-only", "tpb.organization = standalone\n"),
];

pub fn names() -> Vec<&'static str> {
    SCENARIOS.iter().map(|(n, _)| *n).collect()
}

pub fn overlay(name: &str) -> Result<&'static str> {
    SCENARIOS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, o)| *o)
        .ok_or_else(|| {
            Error::config(format!(
                "unknown scenario `{name}`; available: {}",
                names().join(", ")
            ))
        })
}

/// `base` with the named overlay applied.
pub fn apply(base: &SimConfig, name: &str) -> Result<SimConfig> {
    let mut cfg = base.clone();
    cfg.apply_text(overlay(name)?)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Runs `base` and `base` + overlay on the same trace.
pub fn run_scenario(base: &SimConfig, name: &str, trace: &[TraceRecord]) -> Result<Comparison> {
    let variant = apply(base, name)?;
    compare_records(base, &variant, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::ReplacementId;
    use crate::prefetch::PageCrossMode;
    use crate::tlb::TpbOrganization;

    #[test]
    fn every_overlay_parses() {
        for name in names() {
            apply(&SimConfig::default(), name).unwrap();
        }
    }

    #[test]
    fn ipcat_enables_both_mechanisms() {
        let c = apply(&SimConfig::default(), "ipcat").unwrap();
        assert_eq!(c.caches.l2c.replacement, ReplacementId::Tiprp);
        assert_eq!(c.tlb.tpb, TpbOrganization::Standalone { entries: 64, ways: 64 });
        assert_eq!(apply(&SimConfig::default(), "baseline").unwrap(), SimConfig::default());
        assert_eq!(
            apply(&SimConfig::default(), "free-translation").unwrap().prefetch.mode,
            PageCrossMode::FreeTranslation
        );
    }

    #[test]
    fn unknown_name_lists_presets() {
        let e = overlay("warp-drive").unwrap_err().to_string();
        assert!(e.contains("tpb-only") && e.contains("ideal-l2c-all"));
    }
}
