use std::path::Path;
use std::process::{Command, Output};

use concept_slider::cli::{exit, files};
use concept_slider::edit::read_trace;
use concept_slider::plot::decode_png;
use serde_json::Value;

fn acs(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acs"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("ACS_SEED")
        .output()
        .unwrap()
}

fn last_json(bytes: &[u8]) -> Value {
    let text = String::from_utf8_lossy(bytes);
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

#[test]
fn unknown_subcommand_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let o = acs(dir.path(), &["bogus"]);
    assert_eq!(o.status.code(), Some(exit::USAGE));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("Usage:"));
    assert_eq!(last_json(&o.stderr)["code"], exit::USAGE);
}

#[test]
fn gen_data_then_fit_axis_recovers_the_axis() {
    let dir = tempfile::tempdir().unwrap();
    assert!(acs(dir.path(), &["gen-data"]).status.success());
    assert!(dir.path().join("features/stage10_neutral.acsf").is_file());
    let o = acs(dir.path(), &["fit-axis"]);
    assert!(o.status.success());
    let s = last_json(&o.stdout);
    assert!(s["min_ground_truth_agreement"].as_f64().unwrap() >= 0.99, "{s}");
    assert!(dir.path().join(files::AXIS).is_file());
}

#[test]
fn corrupted_axis_aborts_report_with_format_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join(files::AXIS), "{\"version\": 1, \"stages\": [").unwrap();
    let o = acs(dir.path(), &["report"]);
    assert_eq!(o.status.code(), Some(exit::FORMAT));
    assert_eq!(last_json(&o.stderr)["error"], "format");
    assert!(!dir.path().join(files::REPORT).exists());
}

#[test]
fn config_errors_and_missing_files_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = acs(dir.path(), &["--set", "edit.nope=1", "edit"]);
    assert_eq!(o.status.code(), Some(exit::CONFIG));
    let o = acs(dir.path(), &["--set", "paths.adapter=/no/such/adapter.json", "edit"]);
    assert_eq!(o.status.code(), Some(exit::MISSING));
    assert!(last_json(&o.stderr)["message"].as_str().unwrap().contains("/no/such/adapter.json"));
    let o = acs(dir.path(), &["--config", "/no/such/run.json", "gen-data"]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn env_seed_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_acs"))
        .args(["--out", dir.path().to_str().unwrap(), "--set", "seed=3", "gen-data"])
        .env("ACS_SEED", "11")
        .output()
        .unwrap();
    assert!(o.status.success());
    let cfg: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join(files::CONFIG)).unwrap()).unwrap();
    assert_eq!(cfg["seed"], 11);
    assert_eq!(cfg["edit"]["seed"], 11);
}

#[test]
fn repeated_edits_write_identical_traces() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--set", "edit.total_steps=250", "edit", "--alpha", "0.5"];
    assert!(acs(a.path(), &args).status.success());
    assert!(acs(b.path(), &args).status.success());
    let ta = std::fs::read(a.path().join(files::TRACE)).unwrap();
    assert!(!ta.is_empty());
    assert_eq!(ta, std::fs::read(b.path().join(files::TRACE)).unwrap());
    assert_eq!(read_trace(a.path().join(files::TRACE)).unwrap().len(), 250);
    for f in [files::SCENE_EDITED, files::EVENTS, files::TRACE_PLOT, files::FRAME_FINAL] {
        assert!(a.path().join(f).is_file(), "{f}");
    }
}

/// Axis-mode edit at alpha 0 on mirrored class means ends near the midpoint
/// `((mu_p + mu_n) / 2) . b_c` of the readout stage.
#[test]
fn symmetric_edit_at_zero_lands_near_midpoint() {
    let dir = tempfile::tempdir().unwrap();
    let o = acs(
        dir.path(),
        &["--set", "data.base_mean_scale=0", "--set", "edit.target_mode=\"axis\"", "edit", "--alpha", "0"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = last_json(&o.stdout);
    let cfg: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(files::CONFIG)).unwrap()).unwrap();
    assert_eq!(cfg["data"]["base_mean_scale"], 0.0);
    let (start, end) = (s["initial_coord"].as_f64().unwrap(), s["final_coord"].as_f64().unwrap());
    // Zero base mean puts the midpoint at the origin up to sampling noise.
    assert!(end.abs() < 0.1 && end.abs() < 0.2 * start.abs(), "{start} -> {end}");
}

#[test]
fn sweep_writes_a_strip() {
    let dir = tempfile::tempdir().unwrap();
    let o = acs(dir.path(), &["--set", "edit.total_steps=20", "--set", "edit.frame_size=16", "edit", "--sweep", "-1,0,1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (w, h, _) = decode_png(&std::fs::read(dir.path().join(files::SWEEP_STRIP)).unwrap()).unwrap();
    assert_eq!((w, h), (3 * 16 + 2, 16));
    let s: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join(files::SWEEP_SUMMARY)).unwrap()).unwrap();
    assert_eq!(s["final_coords"].as_array().unwrap().len(), 3);
    assert!(dir.path().join("sweep/alpha_02").join(files::TRACE).is_file());
}
