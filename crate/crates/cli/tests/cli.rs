use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ipcat_core::StatsReport;

fn ipcat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ipcat"))
        .args(args)
        .output()
        .expect("spawn ipcat")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_trace(dir: &Path, name: &str, length: u64) -> PathBuf {
    let out = dir.join(name);
    let o = ipcat(&["gen", "--length", &length.to_string(), "--seed", "5", "-o", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const SHORT: &str = "engine.warmup = 1000\nengine.measure = 4000\n";

#[test]
fn gen_is_reproducible_and_needs_a_length() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen_trace(dir.path(), "a.ipct", 3000);
    let b = gen_trace(dir.path(), "b.ipct", 3000);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let text = dir.path().join("t.txt");
    let o = ipcat(&["gen", "--length", "10", "--text", "-o", path(&text)]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(&text).unwrap().lines().filter(|l| !l.starts_with('#')).count(), 10);

    let o = ipcat(&["gen", "-o", path(&dir.path().join("c.ipct"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn default_config_reports_every_field() {
    let dir = tempfile::tempdir().unwrap();
    let trace = gen_trace(dir.path(), "t.ipct", 150_000);
    let cfg = write_config(dir.path(), "empty.cfg", "# defaults only\n");
    let o = ipcat(&["run", path(&cfg), path(&trace), "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    for col in StatsReport::csv_header().split(',') {
        assert!(v.get(col).is_some(), "missing {col}");
    }
    assert_eq!(v["records"], 100_000);
}

#[test]
fn csv_output_has_a_matching_header() {
    let dir = tempfile::tempdir().unwrap();
    let trace = gen_trace(dir.path(), "t.ipct", 5000);
    let cfg = write_config(dir.path(), "c.cfg", SHORT);
    let o = ipcat(&["run", path(&cfg), path(&trace), "--csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<_> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
}

#[test]
fn tiprp_records_policy_selections() {
    let dir = tempfile::tempdir().unwrap();
    let trace = gen_trace(dir.path(), "t.ipct", 5000);
    let cfg = write_config(dir.path(), "c.cfg", &format!("{SHORT}l2c.replacement = tiprp\n"));
    let o = ipcat(&["run", path(&cfg), path(&trace)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let total: u64 = ["pip", "npip", "bip"]
        .iter()
        .map(|p| v[format!("policy_selection_histogram_{p}")].as_u64().unwrap())
        .sum();
    assert!(total > 0);
}

#[test]
fn malformed_config_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let trace = gen_trace(dir.path(), "t.ipct", 100);
    let cfg = write_config(dir.path(), "bad.cfg", "# ok\nengine.warmup = 0\nthis is not a setting\n");
    let o = ipcat(&["run", path(&cfg), path(&trace)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), "unknown.cfg", "cache.l9 = 4\n");
    let o = ipcat(&["run", path(&cfg), path(&trace)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn short_trace_is_a_semantic_error() {
    let dir = tempfile::tempdir().unwrap();
    let trace = gen_trace(dir.path(), "t.ipct", 100);
    let cfg = write_config(dir.path(), "empty.cfg", "");
    let o = ipcat(&["run", path(&cfg), path(&trace)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_trace_exits_2_with_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.cfg", SHORT);
    let missing = dir.path().join("nowhere.ipct");
    let o = ipcat(&["run", path(&cfg), path(&missing)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.ipct"), "{}", stderr(&o));

    let o = ipcat(&["run", path(&dir.path().join("none.cfg")), path(&missing)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("none.cfg"));
}

#[test]
fn baseline_scenario_has_unit_speedup() {
    let dir = tempfile::tempdir().unwrap();
    let trace = gen_trace(dir.path(), "t.ipct", 5000);
    let cfg = write_config(dir.path(), "c.cfg", SHORT);
    let o = ipcat(&["scenario", "baseline", path(&trace), "--config", path(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<Vec<&str>> = out.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(&rows[0][..2], ["name", "speedup"]);
    assert_eq!(&rows[2][..2], ["baseline", "1"]);
}

#[test]
fn unknown_scenario_lists_presets() {
    let dir = tempfile::tempdir().unwrap();
    let trace = gen_trace(dir.path(), "t.ipct", 100);
    let o = ipcat(&["scenario", "warp", path(&trace)]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    for name in ["no-page-cross", "free-translation", "ideal-l2c-all", "ipcat", "tpb-only"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn sweep_keeps_input_order() {
    let dir = tempfile::tempdir().unwrap();
    let trace = gen_trace(dir.path(), "t.ipct", 5000);
    let cfg = write_config(dir.path(), "c.cfg", &format!("{SHORT}tpb.organization = standalone\n"));
    let o = ipcat(&[
        "sweep",
        path(&cfg),
        path(&trace),
        "--param",
        "tpb.entries",
        "--values",
        "128,8,32",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let firsts: Vec<_> = out.lines().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(firsts, ["value", "128", "8", "32"]);

    let o = ipcat(&["sweep", path(&cfg), path(&trace), "--param", "tpb.size", "--values", "8"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn compare_prints_both_rows() {
    let dir = tempfile::tempdir().unwrap();
    let trace = gen_trace(dir.path(), "t.ipct", 5000);
    let base = write_config(dir.path(), "b.cfg", SHORT);
    let variant = write_config(dir.path(), "v.cfg", &format!("{SHORT}prefetch.mode = no-page-cross\n"));
    let o = ipcat(&["compare", path(&base), path(&variant), path(&trace)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<_> = out.lines().collect();
    assert_eq!(rows.len(), 3);
    let speedup: f64 = rows[2].split(',').nth(1).unwrap().parse().unwrap();
    assert!(speedup > 0.0);
    assert!(stderr(&o).contains("speedup"));
}
