//! End-to-end tests of the binary: exit codes, output documents, and
//! determinism of the machine formats.

use std::path::PathBuf;
use std::process::{Command, Output};

use derdispatch::feeder::save_feeder;
use derdispatch::fixtures;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_derdispatch"))
}

fn fixture(name: &str) -> PathBuf {
    fixtures::fixtures_dir().join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path_str(p: &std::path::Path) -> String {
    p.to_str().expect("utf-8 path").to_string()
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

#[test]
fn validate_accepts_bundled_fixtures() {
    for name in ["feeder2.json", "feeder13.json", "feeder123.json"] {
        let out = run(&["validate", &path_str(&fixture(name))]);
        assert_eq!(out.status.code(), Some(0), "{name}: {}", stderr(&out));
        assert!(stdout(&out).starts_with("ok:"), "{name}");
    }
}

#[test]
fn validate_missing_file_exits_2() {
    let out = run(&["validate", "/nonexistent/feeder.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validate_garbage_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{ not json").unwrap();
    let out = run(&["validate", &path_str(&path)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validate_cyclic_feeder_exits_1_and_names_the_cycle() {
    let mut model = fixtures::two_bus();
    let extra = model.lines[0].clone();
    model.lines.push(extra);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cyclic.json");
    save_feeder(&model, &path).unwrap();

    let out = run(&["validate", &path_str(&path)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("closes a cycle"), "{}", stderr(&out));
}

// ---------------------------------------------------------------------------
// assemble
// ---------------------------------------------------------------------------

#[test]
fn assemble_two_bus_dumps_unit_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dump.json");
    let out = run(&["assemble", &path_str(&fixture("feeder2.json")), "--out", &path_str(&path)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(doc["n_nodes"], 1);
    let m = doc["matrices"]["m"].as_array().unwrap();
    assert_eq!(m.len(), 1);
    assert_eq!(m[0].as_array().unwrap().len(), 1);
}

#[test]
fn assemble_manifest_names_every_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dump.json");
    let out = run(&["assemble", &path_str(&fixture("feeder13.json")), "--out", &path_str(&path)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let manifest = doc["manifest"].as_array().unwrap();
    let matrices = doc["matrices"].as_object().unwrap();
    assert_eq!(manifest.len(), matrices.len());
    for entry in manifest {
        let name = entry["name"].as_str().unwrap();
        let rows = entry["rows"].as_u64().unwrap() as usize;
        assert_eq!(matrices[name].as_array().unwrap().len(), rows, "{name}");
    }
}

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

#[test]
fn dispatch_vv_emits_a_setpoint_per_der() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sol.json");
    let out = run(&[
        "dispatch",
        &path_str(&fixture("feeder13.json")),
        "--scenario",
        "vv",
        "--out",
        &path_str(&path),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let commands = doc["commands"].as_array().unwrap();
    assert_eq!(commands.len(), 19);
    for c in commands {
        assert!(c["v_set"].is_number(), "{c}");
        assert!(c.get("q").is_none(), "{c}");
    }
}

#[test]
fn dispatch_unknown_scenario_exits_1() {
    let out = run(&["dispatch", &path_str(&fixture("feeder13.json")), "--scenario", "bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("unknown scenario"));
}

#[test]
fn dispatch_map_with_unknown_der_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("map.json");
    std::fs::write(&map, r#"{"no_such_der": "pv"}"#).unwrap();
    let out = run(&[
        "dispatch",
        &path_str(&fixture("feeder13.json")),
        "--scenario",
        &format!("map={}", path_str(&map)),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("no_such_der"));
}

#[test]
fn dispatch_map_reassigns_modes() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("map.json");
    std::fs::write(&map, r#"{"d1": "vv"}"#).unwrap();
    let sol = dir.path().join("sol.json");
    let out = run(&[
        "dispatch",
        &path_str(&fixture("feeder2.json")),
        "--scenario",
        &format!("map={}", path_str(&map)),
        "--out",
        &path_str(&sol),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&sol).unwrap()).unwrap();
    assert_eq!(doc["commands"][0]["mode"], "VV");
    assert!(doc["commands"][0]["v_set"].is_number());
}

#[test]
fn dispatch_impossible_band_exits_3_with_tag() {
    let out = run(&[
        "dispatch",
        &path_str(&fixture("feeder13.json")),
        "--scenario",
        "vv",
        "--v-min",
        "1.2",
        "--v-max",
        "1.3",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("voltage-band"), "{}", stderr(&out));
}

#[test]
fn dispatch_machine_output_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for path in [&a, &b] {
        let out = run(&[
            "dispatch",
            &path_str(&fixture("feeder13.json")),
            "--scenario",
            "mixed",
            "--out",
            &path_str(path),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn dispatch_timing_flag_adds_solve_time() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sol.json");
    let base = ["dispatch".to_string(), path_str(&fixture("feeder2.json"))];

    let out = run(&[&base[0], &base[1], "--out", &path_str(&path)]);
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!(doc.get("solve_time").is_none());

    let out = run(&[&base[0], &base[1], "--timing", "--out", &path_str(&path)]);
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!(doc["solve_time"].is_number());
}

#[test]
fn dispatch_csv_lists_every_command() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sol.csv");
    let out = run(&[
        "dispatch",
        &path_str(&fixture("feeder13.json")),
        "--scenario",
        "pq",
        "--format",
        "csv",
        "--out",
        &path_str(&path),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("scenario,der,bus,phase,mode,v_set,q"));
    assert_eq!(lines.count(), 19);
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

#[test]
fn bench_thirteen_bus_passes_check() {
    let out = run(&["bench", &path_str(&fixture("feeder13.json")), "--check"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let table = stdout(&out);
    for scenario in ["pq", "pv", "vv", "mixed"] {
        assert!(table.contains(scenario), "{table}");
    }
}

#[test]
fn bench_123_bus_passes_check_within_budget() {
    let out = run(&["bench", &path_str(&fixture("feeder123.json")), "--check", "--timing"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("solve (s)"));
}

#[test]
fn bench_band_violation_exits_5() {
    // Loading the two-bus feeder far beyond its rating sinks the voltage to
    // a region where the linear prediction is genuinely off by more than the
    // accepted band; the widened band flag keeps the program feasible.
    let mut model = fixtures::two_bus();
    model.loads[0].p *= 60.0;
    model.loads[0].q *= 60.0;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("overload.json");
    save_feeder(&model, &path).unwrap();

    let out = run(&["bench", &path_str(&path), "--check", "--v-min", "0.6"]);
    assert_eq!(out.status.code(), Some(5), "{}", stderr(&out));
    assert!(stderr(&out).contains("band violation"), "{}", stderr(&out));
    assert!(stderr(&out).contains("max voltage error"), "{}", stderr(&out));
}

#[test]
fn bench_machine_output_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for path in [&a, &b] {
        let out =
            run(&["bench", &path_str(&fixture("feeder13.json")), "--out", &path_str(path)]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn bench_csv_emits_per_element_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.csv");
    let out = run(&[
        "bench",
        &path_str(&fixture("feeder2.json")),
        "--format",
        "csv",
        "--out",
        &path_str(&path),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("metric,scenario,element,error\n"));
    // One voltage row and one reactive row per scenario on the 2-bus feeder.
    assert_eq!(text.lines().count(), 1 + 4 * 2);
}
