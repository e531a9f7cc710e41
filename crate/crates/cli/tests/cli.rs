use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dwsec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dwsec"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn preset_doc(name: &str) -> Value {
    let o = dwsec(&["preset", "show", name]);
    assert_eq!(code(&o), 0);
    serde_json::from_slice(&o.stdout).unwrap()
}

fn write_json(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

fn csv_column(text: &str, col: &str) -> Vec<String> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == col).unwrap();
    lines
        .map(|l| l.split(',').nth(idx).unwrap().to_string())
        .collect()
}

#[test]
fn preset_list_names_all_presets() {
    let o = dwsec(&["preset", "list"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    for name in ["fig4", "fig5", "fig6", "fig7", "table1"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing");
    }
}

#[test]
fn fig5_trace_shows_phi_11_above_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let scen = write_json(dir.path(), "fig5.json", &preset_doc("fig5"));
    let out = dir.path().join("trace.csv");
    let o = dwsec(&["simulate", &scen, "--out", out.to_str().unwrap()]);
    // The undetected-then-uncompensated attack drives the cart off the track.
    assert_eq!(code(&o), 3);
    let text = std::fs::read_to_string(&out).unwrap();
    let ks = csv_column(&text, "k");
    let phi = csv_column(&text, "phi_11");
    let hit = ks
        .iter()
        .zip(&phi)
        .filter(|(k, _)| k.parse::<u64>().unwrap() >= 2)
        .any(|(_, p)| p.parse::<f64>().is_ok_and(|v| v >= 7e-4));
    assert!(hit);
}

#[test]
fn attack_free_run_rarely_alarms() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc = preset_doc("fig5");
    doc["attack"] = Value::Null;
    doc["horizon"] = 2000.into();
    let scen = write_json(dir.path(), "clean.json", &doc);
    let out = dir.path().join("trace.csv");
    let o = dwsec(&["simulate", &scen, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let eps = csv_column(&std::fs::read_to_string(&out).unwrap(), "eps");
    let scored: Vec<&String> = eps.iter().filter(|e| !e.is_empty()).collect();
    let healthy = scored.iter().filter(|e| e.as_str() == "1").count();
    assert!(
        healthy as f64 >= 0.95 * scored.len() as f64,
        "{healthy}/{}",
        scored.len()
    );
}

#[test]
fn seed_override_changes_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc = preset_doc("fig7");
    doc["horizon"] = 50.into();
    let scen = write_json(dir.path(), "s.json", &doc);
    let a = dwsec(&["simulate", &scen]);
    let b = dwsec(&["simulate", &scen]);
    let c = dwsec(&["simulate", &scen, "--seed", "99"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc = preset_doc("fig7");
    doc["horizon"] = 0.into();
    let scen = write_json(dir.path(), "h0.json", &doc);
    let o = dwsec(&["simulate", &scen]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("horizon"));

    let mut doc = preset_doc("fig7");
    doc["detector"]["thresh_new_2"] = "high".into();
    let scen = write_json(dir.path(), "bad.json", &doc);
    let o = dwsec(&["simulate", &scen]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("detector.thresh_new_2"));

    let o = dwsec(&[
        "simulate",
        dir.path().join("missing.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn analyze_reports() {
    let v: Value = serde_json::from_slice(&dwsec(&["analyze", "theorem2"]).stdout).unwrap();
    let norms = v["cross_norm"]["value"].as_array().unwrap();
    assert!((norms[0].as_f64().unwrap() - 5.1179e-4).abs() < 5e-8);
    assert!((norms[1].as_f64().unwrap() - 1.5381e-4).abs() < 5e-8);

    let v: Value =
        serde_json::from_slice(&dwsec(&["analyze", "complexity", "4", "2"]).stdout).unwrap();
    assert!((v["complexity_ratio"]["value"].as_f64().unwrap() - 0.1667).abs() < 1e-4);

    let v: Value =
        serde_json::from_slice(&dwsec(&["analyze", "theorem3", "--t0", "4", "--t1", "137"]).stdout)
            .unwrap();
    assert_eq!(v["verdict"]["value"], "violated");
    assert_eq!(v["reference_constants"]["value"]["observed_ratio"], 34.25);

    let v: Value = serde_json::from_slice(&dwsec(&["analyze", "residual-trace"]).stdout).unwrap();
    assert!((v["residual_trace"]["value"].as_f64().unwrap() / 2.566e-5 - 1.0).abs() < 0.01);

    for kind in ["limitation1", "limitation3"] {
        let o = dwsec(&["analyze", kind]);
        assert_eq!(code(&o), 0, "{kind}");
    }
    assert_eq!(code(&dwsec(&["analyze", "bogus"])), 2);
    assert_eq!(code(&dwsec(&["analyze", "complexity", "0", "2"])), 2);
}

#[test]
fn analyze_accepts_model_documents() {
    let dir = tempfile::tempdir().unwrap();
    let lmi = dwsec(&["export-lmi", "--hbar", "0"]);
    assert_eq!(code(&lmi), 0);
    let scen = preset_doc("fig7");
    let model = write_json(dir.path(), "model.json", &scen["model"]);
    let o = dwsec(&["analyze", "residual-trace", "--model", &model]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["residual_trace"]["value"].as_f64().unwrap() / 2.566e-5 - 1.0).abs() < 0.01);
}

#[test]
fn export_lmi_document() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lmi.json");
    let o = dwsec(&["export-lmi", "--hbar", "4", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["hbar"], 4);
    let a0 = v["a0"].as_array().unwrap();
    assert_eq!(a0.len(), 8);
    assert!(a0.iter().all(|r| r.as_array().unwrap().len() == 8));
    for key in ["a1", "gamma0", "e", "e_c", "sigma_n", "sigma_v", "c"] {
        assert!(v.get(key).is_some(), "{key}");
    }

    assert_eq!(code(&dwsec(&["export-lmi", "--hbar", "-1"])), 2);

    let mut model = preset_doc("fig7")["model"].clone();
    model.as_object_mut().unwrap().remove("k_gain");
    let path = write_json(dir.path(), "nogains.json", &model);
    assert_eq!(
        code(&dwsec(&["export-lmi", "--hbar", "4", "--model", &path])),
        2
    );
}

#[test]
fn montecarlo_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc = preset_doc("fig7");
    doc["attack"] = Value::Null;
    doc["horizon"] = 1050.into();
    let scen = write_json(dir.path(), "mc.json", &doc);
    assert_eq!(code(&dwsec(&["montecarlo", &scen, "--replicas", "1"])), 2);
    let out = dir.path().join("mc.json.out");
    let o = dwsec(&[
        "montecarlo",
        &scen,
        "--replicas",
        "12",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["replicas"]["value"], 12);
    assert_eq!(v["failures"]["value"], 0);
    assert!(v["cross"]["std_error"].is_array());
    assert!(v["max_abs_z"]["value"].as_f64().unwrap() < 5.0);
}

#[test]
fn preset_runs_report_checks() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let o = dwsec(&[
        "preset",
        "run",
        "table1",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().all(|l| l.starts_with("PASS")));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(v["checks"]["value"].as_array().unwrap().len() >= 5);

    let o = dwsec(&["preset", "run", "fig7"]);
    assert_eq!(code(&o), 0);
    assert_eq!(code(&dwsec(&["preset", "run", "fig9"])), 2);
}
