use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn remedy(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_remedy"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn remedy")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = remedy(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn config(name: &str) -> String {
    configs().join(format!("{name}.toml")).display().to_string()
}

/// Writes a small config so the pipeline runs quickly.
fn quick_config(dir: &Path) -> String {
    let base = fs::read_to_string(configs().join("default.toml")).unwrap();
    let mut cfg: toml::Table = toml::from_str(&base).unwrap();
    let mut forest = cfg["dml"]["forest"].as_table().unwrap().clone();
    forest.insert("n_bags".into(), 6.into());
    forest.insert("trees_per_bag".into(), 4.into());
    cfg.get_mut("dml").unwrap().as_table_mut().unwrap().insert("forest".into(), forest.into());
    let path = dir.join("quick.toml");
    fs::write(&path, toml::to_string(&cfg).unwrap()).unwrap();
    path.display().to_string()
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = quick_config(d);

    let msg = ok(d, &["simulate", "--config", &cfg, "--out", "events.jsonl", "--truth", "truth.jsonl", "--n", "3000"]);
    assert!(msg.contains("3000 events"));
    assert_eq!(fs::read_to_string(d.join("events.jsonl")).unwrap().lines().count(), 3000);

    let train: serde_json::Value =
        serde_json::from_str(&ok(d, &["train", "--config", &cfg, "--data", "events.jsonl", "--out", "model.bin"])).unwrap();
    assert_eq!(train["final_stage"], "forest");
    assert_eq!(train["n"], 3000);
    let linear: serde_json::Value = serde_json::from_str(&ok(
        d,
        &["train", "--config", &cfg, "--data", "events.jsonl", "--out", "linear.bin", "--final-stage", "linear"],
    ))
    .unwrap();
    assert_eq!(linear["final_stage"], "linear");
    assert!(linear["condition_number"].as_f64().unwrap() >= 1.0);

    let eval: serde_json::Value =
        serde_json::from_str(&ok(d, &["eval", "--model", "model.bin", "--data", "events.jsonl"])).unwrap();
    for key in ["psi", "naive_effect", "adjusted_effect"] {
        assert!(eval[key].is_f64(), "{key}");
    }

    let table = ok(
        d,
        &["compare", "--config", &cfg, "--model", "model.bin", "--n", "2000", "--out", "report.json", "--table", "table.txt", "--plot", "hist.csv"],
    );
    assert!(table.contains("oracle") && table.contains("engine"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["policies"].as_array().unwrap().len(), 6);
    assert!(fs::read_to_string(d.join("hist.csv")).unwrap().starts_with("series,bin_low,bin_high,count"));

    let cf: serde_json::Value = serde_json::from_str(&ok(
        d,
        &["counterfactual", "--model", "model.bin", "--data", "events.jsonl", "--truth", "truth.jsonl"],
    ))
    .unwrap();
    assert!(cf["switch_to_redeploy"]["true_saving"].is_f64());

    fs::write(
        d.join("signals.json"),
        r#"{"vm_count":2,"has_important_workload":false,"network_ok":true,"error_code":"hw_failure","repeat_count":12,"uncorrectable_tag":false,"hardware_type":3,"session_type":1}"#,
    )
    .unwrap();
    for i in 0..2 {
        let decision: serde_json::Value = serde_json::from_str(&ok(
            d,
            &[
                "recommend",
                "--model",
                "model.bin",
                "--signals",
                "signals.json",
                "--decision-config",
                &config("decision"),
                "--node-id",
                "node-7",
                "--event-id",
                &format!("ev{i}"),
            ],
        ))
        .unwrap();
        assert_eq!(decision["source"], "RepeatOverride");
    }
    let log = fs::read_to_string(d.join("action_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(log.lines().nth(1).unwrap().contains("\"event_id\":\"ev1\""));

    let text = ok(d, &["interpret", "--model", "model.bin", "--data", "events.jsonl", "--depth", "2", "--cate-feature", "vm_count", "--bins", "4"]);
    assert!(text.starts_with("if "));
    assert!(text.contains("bin_center,mean_tau,count"));

    let ab: serde_json::Value = serde_json::from_str(&ok(
        d,
        &["abtest", "--config", &cfg, "--experiment", "rollout", "--groups", "legacy:0.5,engine:0.5", "--n", "2000", "--model", "model.bin"],
    ))
    .unwrap();
    let names: Vec<&str> = ab["policies"].as_array().unwrap().iter().map(|p| p["policy"].as_str().unwrap()).collect();
    assert_eq!(names, ["legacy", "engine"]);

    let events = fs::read_to_string(d.join("events.jsonl")).unwrap();
    let lines: Vec<&str> = events.lines().collect();
    fs::write(d.join("recent.jsonl"), lines[..2000].join("\n")).unwrap();
    fs::write(d.join("holdout.jsonl"), lines[2000..].join("\n")).unwrap();
    let upd: serde_json::Value = serde_json::from_str(&ok(
        d,
        &["update", "--current", "model.bin", "--recent", "recent.jsonl", "--holdout", "holdout.jsonl", "--out", "next.bin", "--config", &cfg],
    ))
    .unwrap();
    assert!(upd["psi_current"].is_f64() && upd["psi_candidate"].is_f64());
    assert!(d.join("next.bin").exists());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("bad.toml"), "[dml]\nfoldz = 2\n").unwrap();
    let out = remedy(d, &["simulate", "--config", "bad.toml", "--out", "e.jsonl", "--truth", "t.jsonl", "--n", "10"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("foldz"));

    let out = remedy(d, &["abtest", "--config", &config("default"), "--experiment", "x", "--groups", "legacy", "--n", "10"]);
    assert_eq!(out.status.code(), Some(2));

    ok(d, &["simulate", "--config", &config("default"), "--out", "e.jsonl", "--truth", "t.jsonl", "--n", "20"]);
    let out = remedy(d, &["train", "--config", &config("default"), "--data", "e.jsonl", "--out", "m.bin"]);
    assert_eq!(out.status.code(), Some(3), "too few rows is a data error");

    fs::write(d.join("broken.jsonl"), "{\"event_id\": 1}\n").unwrap();
    let out = remedy(d, &["train", "--config", &config("default"), "--data", "broken.jsonl", "--out", "m.bin"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":1:"));

    fs::write(d.join("junk.bin"), b"RMDYMDL\0\x01\x00\x00\x00garbage").unwrap();
    let out = remedy(d, &["eval", "--model", "junk.bin", "--data", "e.jsonl"]);
    assert_eq!(out.status.code(), Some(4));
}
