use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_syncfin"))
}

fn docs(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs").join(name);
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn report_validator() -> jsonschema::Validator {
    let mut schema = docs("report.schema.json");
    schema["properties"]["config"] = docs("scenario.schema.json");
    jsonschema::validator_for(&schema).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = bin().args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

const FORENSIC_TRIGGER: &str = r#"{"schema_version":1,"n":7,"f":2,"delta":1,"gst":"on_attack_success","slots":120,
"protocol":"syncfin","strategy":{"name":"forensic_trigger"},"tx_schedule":{"interval":1,"until":100},"clients":2,"seed":0}"#;

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", &FORENSIC_TRIGGER.replace(r#""n":7"#, r#""n":6"#));
    let (code, _, err) = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 3);
    assert!(err.contains("n: n must equal 3f+1"), "{err}");

    let cfg = write(dir.path(), "typo.json", &FORENSIC_TRIGGER.replace("forensic_trigger", "forensic"));
    assert_eq!(run(&["run", "--config", cfg.to_str().unwrap()]).0, 3);
}

#[test]
fn violation_report_evidence_and_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "ft.json", FORENSIC_TRIGGER);
    let out = dir.path().join("out");
    let (code, stdout, _) = run(&["run", "--config", cfg.to_str().unwrap(), "--seed", "4", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 2, "{stdout}");
    assert!(stdout.contains("accused=5,6,7"));

    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report-4.json")).unwrap()).unwrap();
    let validator = report_validator();
    let errors: Vec<String> = validator.iter_errors(&report).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");

    let evidence = out.join("evidence-4.json");
    let (code, stdout, _) = run(&["forensic", "--evidence", evidence.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(stdout.contains("accused: [5,6,7]"));
    let verdict: Value = serde_json::from_str(&std::fs::read_to_string(out.join("verdict.json")).unwrap()).unwrap();
    assert_eq!(verdict["accused"], serde_json::json!([5, 6, 7]));

    let truncated = write(dir.path(), "cut.json", &std::fs::read_to_string(&evidence).unwrap()[..200]);
    let (code, _, err) = run(&["forensic", "--evidence", truncated.to_str().unwrap()]);
    assert_eq!(code, 3);
    assert!(err.contains("EOF"), "{err}");

    // same chain on both sides
    let mut ev: Value = serde_json::from_str(&std::fs::read_to_string(&evidence).unwrap()).unwrap();
    for key in ["ledgers", "tips", "chains"] {
        ev[key][1] = ev[key][0].clone();
    }
    let same = write(dir.path(), "same.json", &ev.to_string());
    let (code, _, err) = run(&["forensic", "--evidence", same.to_str().unwrap()]);
    assert_eq!(code, 6);
    assert!(err.contains("no conflict"), "{err}");
}

#[test]
fn passive_report_validates_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let (code, _, _) = run(&["run", "--seed", "7", "--out", out.to_str().unwrap()]);
        assert_eq!(code, 0);
    }
    let ra = std::fs::read(a.join("report-7.json")).unwrap();
    assert_eq!(ra, std::fs::read(b.join("report-7.json")).unwrap());
    let report: Value = serde_json::from_slice(&ra).unwrap();
    assert!(report_validator().is_valid(&report));
    assert_eq!(report["liveness"]["flagged"], 0);
}

#[test]
fn worlds_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w");
    let (code, stdout, _) = run(&["worlds", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{stdout}");
    assert_eq!(stdout.matches("indistinguishable=true violation=true").count(), 5);
    assert!(out.join("worlds.json").exists() && out.join("world-5.json").exists());

    let f0 = r#"{"schema_version":1,"n":1,"f":0,"delta":1,"gst":10,"slots":20,"protocol":"majority_sync",
"strategy":{"name":"passive"},"tx_schedule":{"interval":1,"until":10},"clients":2,"seed":0}"#;
    let cfg = write(dir.path(), "f0.json", f0);
    let (code, _, err) = run(&["worlds", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 3);
    assert!(err.contains("no adversary"), "{err}");
}

#[test]
fn scenario_schema_accepts_default_config() {
    let schema = jsonschema::validator_for(&docs("scenario.schema.json")).unwrap();
    let cfg = serde_json::to_value(syncfin_core::ScenarioConfig::default()).unwrap();
    assert!(schema.is_valid(&cfg));
}
