use std::path::Path;
use std::process::{Command, Output};

const DATA: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data");

fn gpgl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpgl"))
        .args(args)
        .env("GPGL_DATA_DIR", DATA)
        .env("GPGL_JOBS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> serde_json::Value {
    let out = gpgl(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    serde_json::from_str(stdout.trim()).unwrap_or_else(|e| panic!("{e}: {stdout}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn stats_reports_mutag_shape() {
    let v = ok(&["stats", "--dataset", "MUTAG"]);
    assert_eq!(v["num_graphs"], 188);
    assert_eq!(v["num_classes"], 2);
    assert_eq!(v["feature_dim"], 7);
}

#[test]
fn layout_output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["layout", "--dataset", "MUTAG", "--limit", "12", "--seed", "3", "--out", s(out)]);
    }
    for file in ["layouts.jsonl", "summary.json"] {
        let x = std::fs::read(a.join(file)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, std::fs::read(b.join(file)).unwrap(), "{file}");
    }
    let lines = std::fs::read_to_string(a.join("layouts.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 12);
}

#[test]
fn render_svg_reproduces_the_layout() {
    let dir = tempfile::tempdir().unwrap();
    let (layouts, svgs) = (dir.path().join("l"), dir.path().join("svg"));
    ok(&["layout", "--dataset", "MUTAG", "--limit", "3", "--out", s(&layouts)]);
    ok(&["render", "--dataset", "MUTAG", "--graphs", "2", "--out", s(&svgs)]);

    let text = std::fs::read_to_string(layouts.join("layouts.jsonl")).unwrap();
    let entry: serde_json::Value = serde_json::from_str(text.lines().nth(2).unwrap()).unwrap();
    let cells: Vec<[i64; 2]> = serde_json::from_value(entry["cells"].clone()).unwrap();

    let svg = std::fs::read_to_string(svgs.join("graph2_seed0.svg")).unwrap();
    let attr = |tag: &str, name: &str| -> i64 {
        let key = format!("{name}=\"");
        let start = tag.find(&key).unwrap() + key.len();
        tag[start..].split('"').next().unwrap().parse().unwrap()
    };
    let mut parsed = vec![None; cells.len()];
    for tag in svg.split("<rect ").skip(1) {
        let v = attr(tag, "data-vertex") as usize;
        parsed[v] = Some([attr(tag, "data-x"), attr(tag, "data-y")]);
    }
    let parsed: Vec<[i64; 2]> = parsed.into_iter().map(Option::unwrap).collect();
    assert_eq!(parsed, cells);
}

#[test]
fn export_then_train_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (tensors, run) = (dir.path().join("t"), dir.path().join("run"));
    let v = ok(&["export", "--dataset", "MUTAG", "--limit", "30", "--k", "2", "--window", "16", "--out", s(&tensors)]);
    assert_eq!(v["count"], 60);
    // Label one-hots cover the labels seen in the first 30 graphs only.
    assert_eq!(v["shape"][0], 16);
    assert_eq!(v["shape"][1], 16);
    let v = ok(&[
        "train", "--tensors", s(&tensors), "--out", s(&run), "--channels", "4,4,4", "--fc", "8,8", "--epochs", "2",
        "--folds", "3", "--lr", "1e-3", "--checkpoints",
    ]);
    assert!(v["mean_graph_accuracy"].as_f64().unwrap() >= 0.0);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["cv"]["folds"].as_array().unwrap().len(), 3);
    let curves = std::fs::read_to_string(run.join("curves.jsonl")).unwrap();
    assert!(curves.lines().count() >= 3);
    for f in 0..3 {
        assert!(run.join(format!("fold{f}.ckpt")).is_file());
    }
}

#[test]
fn failures_are_json_on_stderr() {
    let out = gpgl(&["stats", "--dataset", "NO_SUCH_SET"]);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["error"].as_str().unwrap().contains("NO_SUCH_SET"));

    let out = gpgl(&["layout", "--dataset", "MUTAG", "--alpha", "-1", "--out", "/tmp/unused"]);
    assert!(!out.status.success());
    assert!(serde_json::from_slice::<serde_json::Value>(&out.stderr).unwrap()["error"].is_string());

    let out = gpgl(&["layout", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(serde_json::from_slice::<serde_json::Value>(&out.stderr).unwrap()["error"].is_string());
}
