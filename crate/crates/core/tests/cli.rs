use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lcnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcnn"))
        .args(args)
        .output()
        .expect("spawn lcnn")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn count_defaults() {
    let o = lcnn(&["count"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for needle in ["68608", "77026", "paper: 83.89K", "paper: 590.21K"] {
        assert!(text.contains(needle), "missing {needle}: {text}");
    }
}

#[test]
fn synth_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = lcnn(&["synth", "--seed", "1", "--subjects", "3", "--out", p(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ta = tree(&a);
    assert_eq!(ta.len(), 3 * 2 + 2);
    assert_eq!(ta, tree(&b));
}

#[test]
fn usage_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lcnn(&["count", "--bogus"]).status.code(), Some(2));
    assert_eq!(lcnn(&["frobnicate"]).status.code(), Some(2));

    let missing = dir.path().join("nope.csv");
    let o = lcnn(&["train", "--data", p(&missing), "--out", p(dir.path())]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.csv"));

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[segmentation]\nwindow = 64\n[model]\nwindow = 128\n").unwrap();
    let o = lcnn(&["train", "--data", p(&missing), "--out", p(dir.path()), "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));

    let o = lcnn(&["eval", "--data", p(&missing), "--alpha-sweep", "0.1:0.9"]);
    assert_eq!(o.status.code(), Some(2));
}

/// Small synthetic set trained for one epoch: exercises train, eval and
/// infer end to end through the binary.
#[test]
fn train_eval_infer_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let o = lcnn(&["synth", "--seed", "2", "--subjects", "5", "--out", p(&data)]);
    assert!(o.status.success());
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 2\n[train]\nepochs = 1\n").unwrap();
    let manifest = data.join("manifest.csv");
    // wide stride keeps the patch count small
    let o = lcnn(&["train", "--data", p(&manifest), "--out", p(&run), "--config", p(&cfg), "--stride", "512"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for k in 0..5 {
        assert!(run.join(format!("fold{k}.lcnn")).exists());
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["seed"], 2);
    assert_eq!(report["config"]["train"]["epochs"], 1);
    assert_eq!(report["config"]["segmentation"]["stride"], 512);
    assert_eq!(report["folds"].as_array().unwrap().len(), 5);

    let eval_dir = dir.path().join("eval");
    let o = lcnn(&[
        "eval",
        "--data",
        p(&manifest),
        "--checkpoint",
        p(&run),
        "--stride",
        "512",
        "--alpha-sweep",
        "0.1:0.9:0.1",
        "--out",
        p(&eval_dir),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("pooled"));
    let sweep = fs::read_to_string(eval_dir.join("alpha_sweep.csv")).unwrap();
    let rows: Vec<&str> = sweep.lines().skip(1).collect();
    assert_eq!(rows.len(), 9);
    let pd: Vec<usize> = rows.iter().map(|r| r.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(pd.windows(2).all(|w| w[1] <= w[0]), "{pd:?}");
    assert!(eval_dir.join("eval.json").exists());

    let o = lcnn(&[
        "infer",
        "--checkpoint",
        p(&run.join("fold0.lcnn")),
        p(&data.join("PD001.dwt")),
        p(&data.join("HC001.dwt")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<serde_json::Value> = stdout(&o)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0]["config"].is_object());
    assert_eq!(lines[1]["subject_id"], "PD001");
    for k in ["loading", "processing", "model", "total"] {
        assert!(lines[2]["timings"][k].is_number());
    }

    let o = lcnn(&["infer", "--checkpoint", p(&run.join("fold0.lcnn")), "--window", "64", p(&data.join("PD001.dwt"))]);
    assert_eq!(o.status.code(), Some(2));
}
