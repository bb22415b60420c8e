use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/synthetic_fixture.toml");

fn orchard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orchard")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Three manual rows, 100 trees in total.
fn hundred_tree_graph(dir: &Path) -> PathBuf {
    let rows: Vec<Vec<[f64; 2]>> = [34usize, 33, 33]
        .iter()
        .enumerate()
        .map(|(r, &n)| (0..n).map(|t| [t as f64 * 3.0, r as f64 * 4.0]).collect())
        .collect();
    let manual = dir.join("rows.json");
    std::fs::write(&manual, serde_json::to_string(&rows).unwrap()).unwrap();
    let graph = dir.join("graph.json");
    let o = orchard(&["graph", "--manual", p(&manual), "--output", p(&graph)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    graph
}

#[test]
fn generate_writes_cloud_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = dir.path().join("map.ply");
    let truth = dir.path().join("truth.json");
    let o = orchard(&["generate", "--seed", "3", "--output", p(&cloud), "--truth", p(&truth)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(&cloud).unwrap().starts_with("ply"));
    assert_eq!(read_json(&truth)["trees"].as_array().unwrap().len(), 30);
}

#[test]
fn missing_input_is_an_io_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.json");
    let o = orchard(&["detect", "--input", p(&dir.path().join("nope.xyz")), "--output", p(&out)]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("load"));
}

#[test]
fn unknown_config_key_is_a_config_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "output_dir = \"x\"\nwindow_sise = 3\n").unwrap();
    let o = orchard(&["pipeline", "--config", p(&cfg)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn off_graph_goal_exits_with_planning_code() {
    let dir = tempfile::tempdir().unwrap();
    let graph = hundred_tree_graph(dir.path());
    let o = orchard(&["plan", "--graph", p(&graph), "--goal", "500,500,0"]);
    assert_eq!(code(&o), 5);
    assert!(String::from_utf8_lossy(&o.stderr).contains("off the graph"));
}

#[test]
fn batch_of_ten_random_goals() {
    let dir = tempfile::tempdir().unwrap();
    let graph = hundred_tree_graph(dir.path());
    let out = dir.path().join("batch.json");
    let o = orchard(&["plan", "--graph", p(&graph), "--batch", "10", "--seed", "42", "--output", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&out);
    assert_eq!(v["successes"], 10);
    assert!(v["median_ms"].as_f64().unwrap() < 10.0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("median"));

    // same seed, same goals
    let again = dir.path().join("again.json");
    orchard(&["plan", "--graph", p(&graph), "--batch", "10", "--seed", "42", "--output", p(&again)]);
    let goals = |v: &Value| v["results"].as_array().unwrap().iter().map(|r| r["goal"].clone()).collect::<Vec<_>>();
    assert_eq!(goals(&v), goals(&read_json(&again)));
}

#[test]
fn reversed_goal_plans_through_a_u_turn() {
    let dir = tempfile::tempdir().unwrap();
    let graph = hundred_tree_graph(dir.path());
    let g = read_json(&graph);
    let nodes = g["nodes"].as_array().unwrap();
    let lane0: Vec<&Value> = nodes.iter().filter(|n| n["lane"] == 0 && n["kind"] == "tree_access").collect();
    let start = lane0[5];
    let goal = nodes
        .iter()
        .filter(|n| n["kind"] == "tree_access" && n["lane"] != 0)
        .min_by(|a, b| {
            let d = |n: &Value| (n["x"].as_f64().unwrap() - start["x"].as_f64().unwrap()).hypot(n["y"].as_f64().unwrap() - start["y"].as_f64().unwrap());
            d(a).total_cmp(&d(b))
        })
        .unwrap();
    let pose = |n: &Value| format!("{},{},{}", n["x"], n["y"], n["heading"].as_f64().unwrap().to_degrees());
    let out = dir.path().join("path.json");
    let o = orchard(&["plan", "--graph", p(&graph), "--start", &pose(start), "--goal", &pose(goal), "--output", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let kinds = read_json(&out)["kinds"].clone();
    assert!(kinds.as_array().unwrap().iter().any(|k| k == "uturn"), "{kinds}");
}

#[test]
fn pipeline_then_eval_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = orchard(&["pipeline", "--config", FIXTURE, "--output-dir", p(&run)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("30 trees") && stdout.contains("strongly connected: true"), "{stdout}");

    let eval = dir.path().join("eval.json");
    let o = orchard(&[
        "eval",
        "--predictions",
        p(&run.join("detections.json")),
        "--truth",
        p(&run.join("truth.json")),
        "--output",
        p(&eval),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&eval);
    assert!(v["recall"].as_f64().unwrap() >= 0.9 && v["precision"].as_f64().unwrap() >= 0.9);

    let rows = dir.path().join("rows.json");
    let o = orchard(&["rows", "--detections", p(&run.join("detections.json")), "--output", p(&rows)]);
    assert_eq!(code(&o), 0);
    let v = read_json(&rows);
    assert_eq!(v["rows"].as_array().unwrap().len(), 3);
    assert!(v["unassigned"].as_array().unwrap().is_empty());
}
