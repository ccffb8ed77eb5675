use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn swarmlead(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swarmlead"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn short_config(dir: &Path, order: &str) -> std::path::PathBuf {
    let schedule: Vec<Value> = ["line", "ring", "star", "clique"]
        .iter()
        .map(|t| json!({"topology": {"kind": t, "n_agents": 10}, "dwell": 0.5}))
        .chain([json!({
            "topology": {"kind": "random_connected", "n_agents": 10, "edge_probability": 0.3, "seed": 1},
            "dwell": 0.5
        })])
        .collect();
    let mut cfg = json!({
        "order": order,
        "dimension": 3,
        "n_agents": 10,
        "topology_schedule": schedule,
        "selection_period": 0.05,
        "sending_period": 0.5,
        "duration": 1.0,
        "strategy": "local",
        "seed": 3,
    });
    if order == "second" {
        cfg["allow_infeasible"] = json!(true);
    }
    let path = dir.join(format!("{order}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}\n{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
    })
}

#[test]
fn run_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "first");
    let out = swarmlead(&["run", cfg.to_str().unwrap(), "-o", "res"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    assert_eq!(summary["strategy"], "local");
    assert_eq!(summary["switches_per_quarter"].as_array().unwrap().len(), 4);
    let csv = std::fs::read_to_string(dir.path().join("res/trace.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,leader,metric,topology,u_r_1,u_r_2,u_r_3");
    assert_eq!(lines.count(), 1000);
    let leaders: Vec<usize> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(leaders.iter().all(|&l| (1..=10).contains(&l)));
    let file: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("res/summary.json")).unwrap()).unwrap();
    assert_eq!(file["avg_metric"], summary["avg_metric"]);
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "first");
    let run = |seed: &str, out: &str| {
        let o = swarmlead(&["run", cfg.to_str().unwrap(), "-o", out, "--seed", seed], dir.path());
        assert!(o.status.success());
        std::fs::read_to_string(dir.path().join(out).join("trace.csv")).unwrap()
    };
    assert_eq!(run("11", "a"), run("11", "b"));
    assert_ne!(run("11", "a"), run("12", "c"));
}

#[test]
fn compare_writes_one_set_per_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "first");
    let out = swarmlead(&["compare", cfg.to_str().unwrap(), "-o", "cmp"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = stdout_json(&out);
    assert!(report.is_object());
    for s in ["constant", "local", "global", "random"] {
        assert!(dir.path().join(format!("cmp/trace_{s}.csv")).exists());
        assert!(dir.path().join(format!("cmp/summary_{s}.json")).exists());
    }
    assert!(dir.path().join("cmp/comparison.json").exists());
}

#[test]
fn second_order_run_warns_when_uncertified() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "second");
    let out = swarmlead(&["run", cfg.to_str().unwrap(), "-o", "so"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn survey_prints_every_leader() {
    let dir = tempfile::tempdir().unwrap();
    let out = swarmlead(&["survey", "canonical"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1 + 6 * 10);

    let specs = dir.path().join("topos.json");
    std::fs::write(&specs, r#"[{"kind": "ring", "n_agents": 5}, {"kind": "star", "n_agents": 4}]"#).unwrap();
    let out = swarmlead(&["survey", specs.to_str().unwrap(), "-o", "s.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 5 + 4);
}

#[test]
fn verify_reports_all_checks() {
    let dir = tempfile::tempdir().unwrap();
    for order in ["first", "second"] {
        let cfg = short_config(dir.path(), order);
        let out = swarmlead(&["verify", cfg.to_str().unwrap()], dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
        let report = stdout_json(&out);
        assert_eq!(report["passed"], true);
        assert!(report["checks"].as_u64().unwrap() > 60);
    }
}

#[test]
fn bad_inputs_exit_nonzero_with_an_error_object() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"order": "first", "dimension": 3}"#).unwrap();
    let missing = dir.path().join("missing.json");
    let invalid = short_config(dir.path(), "first");
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&invalid).unwrap()).unwrap();
    v["initial_leader"] = json!(11);
    std::fs::write(&invalid, v.to_string()).unwrap();

    for path in [&bad, &missing, &invalid] {
        let out = swarmlead(&["run", path.to_str().unwrap()], dir.path());
        assert!(!out.status.success());
        let err: Value = serde_json::from_slice(&out.stderr).unwrap();
        assert!(err["error"].is_string() && err["message"].is_string(), "{err}");
    }
    assert!(!dir.path().join("out").exists());
}
