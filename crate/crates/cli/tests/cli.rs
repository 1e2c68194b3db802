use std::path::Path;
use std::process::{Command, Output};

fn kgplan(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgplan"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn kgplan")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = kgplan(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().expect("stderr line");
    serde_json::from_str(last).unwrap_or_else(|e| panic!("not JSON ({e}): {stderr}"))
}

fn small_env(dir: &Path) {
    ok(
        dir,
        &[
            "gen-env", "--k", "2", "--depth", "3", "--goals", "4", "--seed", "1", "--out",
            "env.json",
        ],
    );
}

#[test]
fn end_to_end() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    small_env(dir);
    ok(
        dir,
        &[
            "explore",
            "--env",
            "env.json",
            "--task",
            "t0",
            "--task",
            "t1",
            "--out",
            "traj.jsonl",
        ],
    );
    let built: serde_json::Value = serde_json::from_str(&ok(
        dir,
        &[
            "build-kg",
            "--trajectories",
            "traj.jsonl",
            "--out",
            "kg.json",
        ],
    ))
    .unwrap();
    assert!(built["states"].as_u64().unwrap() >= 4);
    ok(
        dir,
        &[
            "mine-groups",
            "--graph",
            "kg.json",
            "--delta-f",
            "2",
            "--out",
            "rules.json",
        ],
    );
    assert!(dir.join("rules.json.graph.json").exists());
    ok(
        dir,
        &[
            "init-train",
            "--env",
            "env.json",
            "--eval",
            "1",
            "--epochs",
            "2",
            "--width",
            "4",
            "--dim",
            "64",
            "--out",
            "m0.json",
        ],
    );
    let rounds = ok(
        dir,
        &[
            "self-train",
            "--env",
            "env.json",
            "--model",
            "m0.json",
            "--rounds",
            "2",
            "--iters",
            "10",
            "--out-dir",
            "st",
        ],
    );
    assert_eq!(rounds.lines().count(), 2);
    for f in [
        "rounds.csv",
        "model.json",
        "model_round1.json",
        "samples_round2.jsonl",
    ] {
        assert!(dir.join("st").join(f).exists(), "{f}");
    }
    ok(
        dir,
        &[
            "extract",
            "--graph",
            "rules.json.graph.json",
            "--env",
            "env.json",
            "--task",
            "t0",
            "--model",
            "st/model.json",
            "--out",
            "plans.json",
        ],
    );
    let plans: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("plans.json")).unwrap()).unwrap();
    let first = &plans["plans"][0];
    assert_eq!(first["rank"], 1);
    assert_eq!(first["states"][0], "s0");
    assert_eq!(
        first["states"].as_array().unwrap().len(),
        first["actions"].as_array().unwrap().len() + 1
    );
}

#[test]
fn fresh_self_train_warms_up() {
    let d = tempfile::tempdir().unwrap();
    small_env(d.path());
    ok(
        d.path(),
        &[
            "self-train",
            "--env",
            "env.json",
            "--rounds",
            "1",
            "--iters",
            "10",
            "--width",
            "4",
            "--dim",
            "64",
            "--out-dir",
            "st",
        ],
    );
    let csv = std::fs::read_to_string(d.path().join("st/rounds.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "round,loss,success_rate,margin,samples"
    );
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn replays_identically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        small_env(dir);
        ok(
            dir,
            &[
                "explore",
                "--env",
                "env.json",
                "--task",
                "all",
                "--p-flip",
                "0.3",
                "--seed",
                "9",
                "--out",
                "traj.jsonl",
            ],
        );
        ok(
            dir,
            &[
                "extract",
                "--env",
                "env.json",
                "--task",
                "t2",
                "--noise",
                "0.3",
                "--seed",
                "2",
                "--out",
                "plans.json",
            ],
        );
    }
    for f in ["env.json", "traj.jsonl", "plans.json"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn environment_is_not_a_graph() {
    let d = tempfile::tempdir().unwrap();
    small_env(d.path());
    let out = kgplan(
        d.path(),
        &["verify", "--graph", "env.json", "--out", "v.csv"],
    );
    assert!(!out.status.success());
    assert_eq!(error_json(&out)["error"], "format");
}

#[test]
fn schema_mismatch_exits_4() {
    let d = tempfile::tempdir().unwrap();
    small_env(d.path());
    ok(
        d.path(),
        &[
            "explore", "--env", "env.json", "--task", "all", "--out", "t.jsonl",
        ],
    );
    ok(
        d.path(),
        &["build-kg", "--trajectories", "t.jsonl", "--out", "kg.json"],
    );
    let kg = std::fs::read_to_string(d.path().join("kg.json")).unwrap();
    let mut doc: serde_json::Value = serde_json::from_str(&kg).unwrap();
    doc["schema_version"] = 2.into();
    std::fs::write(d.path().join("kg.json"), doc.to_string()).unwrap();
    let out = kgplan(
        d.path(),
        &["verify", "--graph", "kg.json", "--out", "v.csv"],
    );
    assert_eq!(out.status.code(), Some(4));
    let e = error_json(&out);
    assert_eq!(e["error"], "schema_mismatch");
    assert_eq!(e["exit_code"], 4);
}

#[test]
fn missing_file_exits_3() {
    let d = tempfile::tempdir().unwrap();
    let out = kgplan(
        d.path(),
        &[
            "refine-train",
            "--model",
            "nope.json",
            "--samples",
            "s.jsonl",
            "--out",
            "m.json",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"], "io");
}

#[test]
fn usage_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let out = kgplan(d.path(), &["extract", "--graph", "g.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "usage");
    let out = kgplan(d.path(), &["gen-env", "--k", "1", "--out", "e.json"]);
    assert_eq!(out.status.code(), Some(6));
    assert!(kgplan(d.path(), &["--help"]).status.success());
}

#[test]
fn config_file_fills_unset_flags() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(
        d.path().join("cfg.json"),
        r#"{"gen-env": {"k": 2, "depth": 2, "goals": 2, "seed": 4}, "bench": {"instances": 99}}"#,
    )
    .unwrap();
    ok(
        d.path(),
        &[
            "--config", "cfg.json", "gen-env", "--depth", "3", "--out", "env.json",
        ],
    );
    let env: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("env.json")).unwrap()).unwrap();
    assert_eq!(env["config"]["branching"], 2);
    assert_eq!(env["config"]["depth"], 3);
    assert_eq!(env["config"]["seed"], 4);
    assert_eq!(env["tasks"].as_array().unwrap().len(), 2);
}

#[test]
fn single_cell_bench() {
    let d = tempfile::tempdir().unwrap();
    let table = ok(
        d.path(),
        &[
            "bench",
            "--axis",
            "exploration_c",
            "--values",
            "10",
            "--instances",
            "1",
            "--qf",
            "exact",
            "--out",
            "b.csv",
        ],
    );
    assert!(table.contains("cells"));
    let csv = std::fs::read_to_string(d.path().join("b.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "axis,value,instance,seed,success,margin,latency_ms,schema_version"
    );
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("exploration_c,10,0,0,1"));
}
