use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn bin(dir: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_scene-ground"));
    cmd.current_dir(dir)
        .env_remove("SCENEGPT_API_KEY")
        .env_remove("SCENEGPT_API_URL")
        .env_remove("RUST_LOG");
    cmd
}

fn run(args: &[&str]) -> Output {
    let dir = tempfile::tempdir().unwrap();
    bin(dir.path()).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json_out(o: &Output) -> Value {
    serde_json::from_str(stdout(o).trim()).unwrap_or_else(|e| panic!("not JSON ({e}): {}", stdout(o)))
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_vase_mirror() {
    let o = run(&["validate", path(&fixture("vase_mirror.json"))]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "2 nodes, 0 issues");
}

#[test]
fn validate_duplicate_ids() {
    let o = run(&["validate", path(&fixture("duplicate_ids.json"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("duplicate id 3"));
}

#[test]
fn validate_missing_file() {
    let o = run(&["validate", "/definitely/not/here.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot read"));
    let o = run(&["--format", "json", "validate", "/definitely/not/here.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(json_out(&o)["error"]["kind"], "io");
}

#[test]
fn describe_relations() {
    let o = run(&["describe", path(&fixture("couch_pillow.json")), "--relations"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).lines().any(|l| l == "27 OnTopOf 28"));

    let o = run(&["--format", "json", "describe", path(&fixture("couch_pillow.json")), "--relations"]);
    let v = json_out(&o);
    let edges = v["relations"].as_array().unwrap();
    assert!(edges
        .iter()
        .any(|e| e["subject"] == 27 && e["relation"] == "OnTopOf" && e["object"] == 28));
}

#[test]
fn describe_single_node_has_no_relations() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("one.json");
    std::fs::write(
        &scene,
        r#"[{"id": 1, "bbox_extent": [1,1,1], "bbox_center": [0,0,0.5], "object_tag": "box"}]"#,
    )
    .unwrap();
    let o = bin(dir.path())
        .args(["--format", "json", "describe", path(&scene), "--relations"])
        .output()
        .unwrap();
    assert_eq!(json_out(&o)["relations"].as_array().unwrap().len(), 0);
}

#[test]
fn ask_oracle_on_top_of() {
    let o = run(&[
        "ask",
        path(&fixture("couch_pillow.json")),
        "is the pillow on top of the white couch",
        "--backend",
        "oracle",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.contains("grounded: yes"));
    assert!(out.contains("\"answer\":\"yes\""));

    let o = run(&[
        "--format",
        "json",
        "ask",
        path(&fixture("couch_pillow.json")),
        "is the pillow on top of the white couch",
        "--backend",
        "oracle",
    ]);
    let v = json_out(&o);
    assert_eq!(v["grounded"], true);
    assert_eq!(v["response"]["final_object_id"], 27);
    assert_eq!(v["response"]["final_answer"], "yes");
    assert_eq!(v["category"], "OnTopOf");
}

#[test]
fn ask_mock_garbage_is_unparseable() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("mock.json");
    std::fs::write(&script, r#"["I am not sure what you mean."]"#).unwrap();
    for format in ["text", "json"] {
        let o = bin(dir.path())
            .args([
                "--format",
                format,
                "ask",
                path(&fixture("vase_mirror.json")),
                "where is the vase",
                "--backend",
                "mock",
                "--mock-script",
                path(&script),
            ])
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(3));
        if format == "json" {
            assert_eq!(json_out(&o)["error"]["kind"], "unparseable");
        }
    }
}

#[test]
fn ask_mock_with_unknown_id_is_ungrounded() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("mock.json");
    let answer = "STEP1 - q\nSTEP2 - relevant_objects: [42]\nSTEP3 - r\nSTEP4 - Final Answer: the lamp {\"object_tag\": \"lamp\", \"object_id\": 42}\nSTEP5 - e";
    std::fs::write(&script, serde_json::to_string(&vec![answer]).unwrap()).unwrap();
    let o = bin(dir.path())
        .args([
            "ask",
            path(&fixture("vase_mirror.json")),
            "where is the lamp",
            "--backend",
            "mock",
            "--mock-script",
            path(&script),
        ])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("UnknownId"));
}

#[test]
fn ask_live_without_key() {
    for format in ["text", "json"] {
        let o = run(&[
            "--format",
            format,
            "ask",
            path(&fixture("vase_mirror.json")),
            "where is the vase",
            "--backend",
            "live",
        ]);
        assert_eq!(o.status.code(), Some(2));
        if format == "json" {
            assert_eq!(json_out(&o)["error"]["kind"], "auth_missing");
        } else {
            assert!(String::from_utf8_lossy(&o.stderr).contains("SCENEGPT_API_KEY"));
        }
    }
}

fn repl(input: &str, extra: &[&str]) -> Output {
    let dir = tempfile::tempdir().unwrap();
    let mut child = bin(dir.path())
        .args(extra)
        .arg("repl")
        .arg(fixture("vase_mirror.json"))
        .args(["--backend", "oracle"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

#[test]
fn repl_quit_immediately() {
    let before = std::fs::read(fixture("vase_mirror.json")).unwrap();
    let o = repl(":quit\n", &[]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read(fixture("vase_mirror.json")).unwrap(), before);
}

#[test]
fn repl_queries_are_independent() {
    let o = repl(
        "Which is bigger, the vase (id: 0) or the mirror (id: 5)?\nwhere is the lamp (id: 77)\nWhich is bigger, the vase (id: 0) or the mirror (id: 5)?\n:quit\n",
        &["--format", "json"],
    );
    assert_eq!(o.status.code(), Some(0));
    let lines: Vec<Value> = stdout(&o)
        .lines()
        .map(|l| serde_json::from_str(l).expect("each line is JSON"))
        .collect();
    assert_eq!(lines.len(), 4);
    // Same question, same prompt, same answer: no state carried over.
    assert_eq!(lines[0], lines[2]);
    assert_eq!(lines[0]["response"]["final_object_id"], 0);
    assert_eq!(lines[1]["grounded"], false);
    assert!(!lines[1]["issues"].as_array().unwrap().is_empty());
    assert_eq!(lines[3]["questions"], 3);
}

#[test]
fn repl_toggles_oracle() {
    let o = repl(":oracle off\n:oracle on\n:quit\n", &[]);
    let out = stdout(&o);
    assert!(out.contains("backend: configured"));
    assert!(out.contains("backend: oracle"));
}

#[test]
fn compact_generated_scene() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("big.json");
    let o = bin(dir.path())
        .args(["generate", "--seed", "5", "--nodes", "150", "--out", path(&scene)])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let o = bin(dir.path())
        .args(["--format", "json", "--budget", "4000", "compact", path(&scene), "--query", "where is the vase"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let v = json_out(&o);
    assert!(v["before"].as_u64().unwrap() > 4000);
    assert!(v["after"].as_u64().unwrap() <= 4000);
    assert!(!v["actions"].as_array().unwrap().is_empty());

    let o = bin(dir.path()).args(["compact", path(&scene)]).output().unwrap();
    let out = stdout(&o);
    assert!(out.contains("before: "));
    assert!(out.contains("after: "));
}

#[test]
fn compact_infeasible_budget() {
    let o = run(&["--budget", "10", "compact", path(&fixture("vase_mirror.json"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("infeasible"));
    let o = run(&["--format", "json", "--budget", "10", "compact", path(&fixture("vase_mirror.json"))]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(json_out(&o)["error"]["kind"], "budget_infeasible");
}

#[test]
fn eval_oracle_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report");
    let o = bin(dir.path())
        .args(["--format", "json", "eval", "--backend", "oracle", "--scenes", "5", "--seed", "1", "--out", path(&out)])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let v = json_out(&o);
    for cat in ["OnTopOf", "RelativePosition", "SizeCompare", "Containment"] {
        let c = &v["per_category"][cat];
        assert!(c["total"].as_u64().unwrap() > 0, "{cat}");
        assert_eq!(c["correct"], c["total"], "{cat}");
    }
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let records = std::fs::read_to_string(out.join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count() as u64, report["overall"]["total"].as_u64().unwrap());
    for line in records.lines() {
        serde_json::from_str::<Value>(line).unwrap();
    }
    assert!(std::fs::read_to_string(out.join("report.txt")).unwrap().contains("overall"));
}

#[test]
fn eval_live_without_key() {
    let o = run(&["eval", "--backend", "live", "--scenes", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_and_precedence() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("scene-ground.json"), r#"{"budget": 10}"#).unwrap();
    let scene = fixture("vase_mirror.json");
    let o = bin(dir.path()).args(["compact", path(&scene)]).output().unwrap();
    assert_eq!(o.status.code(), Some(1), "default config file is read");
    let o = bin(dir.path())
        .args(["--budget", "16000", "compact", path(&scene)])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "flag beats file");

    std::fs::write(dir.path().join("bad.json"), r#"{"llm": {"api_key": "sk-nope"}}"#).unwrap();
    let o = bin(dir.path())
        .args(["--format", "json", "--config", "bad.json", "validate", path(&scene)])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(json_out(&o)["error"]["kind"], "config");
}

#[test]
fn usage_error_in_json_mode() {
    let o = run(&["--format", "json", "ask"]);
    assert_ne!(o.status.code(), Some(0));
    json_out(&o);
}

#[test]
fn generate_is_deterministic() {
    let a = run(&["generate", "--seed", "9", "--nodes", "6"]);
    let b = run(&["generate", "--seed", "9", "--nodes", "6"]);
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 6);
}
