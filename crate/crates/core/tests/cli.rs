mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ifutsvm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ifutsvm")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = ifutsvm(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap().trim().to_string()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const FOUR_POINTS: &str = "0,0,pos\n0,1,pos\n5,0,neg\n5,1,neg\n";

const TINY_GRID: &str = r#"
[grid]
c1 = [0.1, 1.0]
c3 = [1.0]
cu = [0.5]
epsilon = [0.3]
width = [1.0, 2.0]
"#;

#[test]
fn train_then_eval_on_four_points() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("four.csv"), FOUR_POINTS).unwrap();
    fs::write(dir.join("train.toml"), "seed = 3\n[train]\ndataset = \"four.csv\"\nmodel = \"utsvm\"\n").unwrap();
    let model = ok(dir, &["train", "--config", "train.toml", "--out", "m1"]);
    assert!(model.ends_with("model.bin"), "stdout carries only the model path: {model}");
    ok(dir, &["train", "--config", "train.toml", "--out", "m2"]);
    assert_eq!(fs::read(dir.join("m1/model.bin")).unwrap(), fs::read(dir.join("m2/model.bin")).unwrap());

    let log = json(&dir.join("m1/train_log.json"));
    assert_eq!(log["dual"]["converged"], serde_json::json!([true, true]));

    fs::write(dir.join("eval.toml"), "[eval]\nmodel = \"m1/model.bin\"\ndataset = \"four.csv\"\n").unwrap();
    let report = ok(dir, &["eval", "--config", "eval.toml", "--out", "e"]);
    assert_eq!(json(&dir.join(&report))["metrics"]["accuracy"], Value::from(1.0));
}

/// Each two-point class has both members on its radius, so every fuzzy score
/// is zero and IFUTSVM-ID has nothing to fit; all-ones scores fit fine.
#[test]
fn four_points_zero_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("four.csv"), FOUR_POINTS).unwrap();
    fs::write(dir.join("t.toml"), "seed = 3\nout = \"o\"\n[train]\ndataset = \"four.csv\"\n").unwrap();
    let out = ifutsvm(dir, &["train", "--config", "t.toml"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("degenerate"));
    fs::write(
        dir.join("u.toml"),
        "seed = 3\nout = \"o\"\n[params]\nuniform_scores = true\n[train]\ndataset = \"four.csv\"\n",
    )
    .unwrap();
    ok(dir, &["train", "--config", "u.toml"]);
    let log = json(&dir.join("o/train_log.json"));
    assert_eq!(log["plan"]["balanced"], Value::Bool(true));
}

#[test]
fn json_models_and_dumps() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("blobs.csv"), common::to_csv(&common::blobs(4, 6, 20, 2, 2.5, 1.0))).unwrap();
    fs::write(
        dir.join("t.toml"),
        "seed = 1\n[params]\nwidth = 1.5\n[train]\ndataset = \"blobs.csv\"\nformat = \"json\"\n",
    )
    .unwrap();
    let model = ok(dir, &["train", "--config", "t.toml", "--out", "o", "--dump-plan", "--dump-scores"]);
    assert!(model.ends_with("model.json"));
    let scores = fs::read_to_string(dir.join("o/scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 27);
    let plan = fs::read_to_string(dir.join("o/plan.csv")).unwrap();
    assert_eq!(plan.lines().filter(|l| l.starts_with("x2_star")).count(), 6);
    assert_eq!(plan.lines().filter(|l| l.starts_with("universum_star")).count(), 3);
    fs::write(dir.join("e.toml"), "[eval]\nmodel = \"o/model.json\"\ndataset = \"blobs.csv\"\n").unwrap();
    ok(dir, &["eval", "--config", "e.toml", "--out", "e"]);
}

#[test]
fn exit_codes_by_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("missing.toml"), "seed = 1\nout = \"o\"\n[train]\ndataset = \"nope.csv\"\n").unwrap();
    let out = ifutsvm(dir, &["train", "--config", "missing.toml"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(out.stdout.is_empty());

    fs::write(dir.join("bad.csv"), "1,2,pos\n1,x,neg\n").unwrap();
    fs::write(dir.join("bad.toml"), "seed = 1\nout = \"o\"\n[train]\ndataset = \"bad.csv\"\n").unwrap();
    assert_eq!(ifutsvm(dir, &["train", "--config", "bad.toml"]).status.code(), Some(2));

    fs::write(dir.join("noseed.toml"), "out = \"o\"\n[train]\ndataset = \"bad.csv\"\n").unwrap();
    assert_eq!(ifutsvm(dir, &["train", "--config", "noseed.toml"]).status.code(), Some(4));

    // One positive: too few minority samples to train.
    fs::write(dir.join("one.csv"), "0,0,pos\n5,0,neg\n5,1,neg\n").unwrap();
    fs::write(dir.join("one.toml"), "seed = 1\nout = \"o\"\n[train]\ndataset = \"one.csv\"\n").unwrap();
    assert_eq!(ifutsvm(dir, &["train", "--config", "one.toml"]).status.code(), Some(2));
}

fn write_toys(dir: &Path) {
    fs::write(dir.join("a.csv"), common::to_csv(&common::blobs(11, 10, 30, 2, 3.0, 1.0))).unwrap();
    fs::write(dir.join("b.csv"), common::to_csv(&common::blobs(12, 10, 40, 2, 1.0, 1.0))).unwrap();
}

#[test]
fn benchmark_two_by_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_toys(dir);
    fs::write(
        dir.join("b.toml"),
        format!("seed = 5\ndatasets = [\"a.csv\", \"b.csv\"]\nmodels = [\"utsvm\", \"ifutsvm-id\"]\nfolds = 3\n{TINY_GRID}"),
    )
    .unwrap();
    let report = json(&dir.join(ok(dir, &["benchmark", "--config", "b.toml", "--out", "r"])));
    let agg = &report["aggregate"];
    let ranks = agg["rank_table"]["ranks"].as_array().unwrap();
    assert_eq!(ranks.len(), 2);
    for row in ranks {
        let sum: f64 = row.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
        assert_eq!(sum, 3.0);
    }
    assert!(agg["statistics"].is_object());
    for ds in report["datasets"].as_array().unwrap() {
        for m in ds["models"].as_array().unwrap() {
            let hp = &m["result"]["hyperparams"];
            assert!(hp["c1"].is_number() && hp["seed"].is_number(), "result traceable to its hyperparameters");
        }
    }
    let csv = fs::read_to_string(dir.join("r/accuracy.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(dir.join("r/ranks.csv").is_file() && dir.join("r/timings.json").is_file());
    assert_eq!(fs::read_dir(dir.join("r/cv")).unwrap().count(), 4);
}

#[test]
fn single_model_benchmark_omits_statistics() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_toys(dir);
    fs::write(
        dir.join("b.toml"),
        format!("seed = 5\ndatasets = [\"a.csv\", \"b.csv\"]\nfolds = 3\n{TINY_GRID}"),
    )
    .unwrap();
    let report = json(&dir.join(ok(dir, &["benchmark", "--config", "b.toml", "--out", "r"])));
    assert!(report["aggregate"]["statistics"].is_null());
    assert!(report["aggregate"]["notice"].as_str().unwrap().contains("fewer than two models"));
}

#[test]
fn unreadable_dataset_is_recorded_and_skipped() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_toys(dir);
    fs::write(dir.join("broken.csv"), "1,2,pos\n").unwrap();
    fs::write(
        dir.join("b.toml"),
        format!("seed = 5\ndatasets = [\"a.csv\", \"broken.csv\"]\nmodels = [\"utsvm\", \"ifutsvm-id\"]\nfolds = 3\n{TINY_GRID}"),
    )
    .unwrap();
    let report = json(&dir.join(ok(dir, &["benchmark", "--config", "b.toml", "--out", "r"])));
    assert!(report["datasets"][1]["error"].is_string());
    assert_eq!(report["aggregate"]["datasets"], serde_json::json!(["a"]));
}

fn model_accuracies(ds: &Value) -> Vec<f64> {
    ds["models"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["result"]["accuracy"].as_f64().unwrap())
        .collect()
}

#[test]
fn noise_study_levels_and_streams() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_toys(dir);
    let base = format!("datasets = [\"a.csv\"]\nmodels = [\"utsvm\", \"ifutsvm-id\"]\nfolds = 3\nnoise_levels = [0.0, 0.05, 0.1, 0.15, 0.2]\n{TINY_GRID}");
    fs::write(dir.join("n.toml"), &base).unwrap();
    let noise = json(&dir.join(ok(dir, &["noise-study", "--config", "n.toml", "--seed", "8", "--out", "n8"])));
    let bench = json(&dir.join(ok(dir, &["benchmark", "--config", "n.toml", "--seed", "8", "--out", "b8"])));
    let levels = noise["datasets"][0]["levels"].as_array().unwrap();
    assert_eq!(levels.len(), 5);
    assert_eq!(model_accuracies(&levels[0]["result"]), model_accuracies(&bench["datasets"][0]));
    assert!(levels[0]["flipped"].as_array().unwrap().is_empty());

    let csv = fs::read_to_string(dir.join("n8/noise_accuracy.csv")).unwrap();
    let noisy_rows = csv.lines().filter(|l| l.starts_with("a,0.")).count();
    assert_eq!(noisy_rows, 4, "four nonzero levels, one row each with every model's column");

    let other = json(&dir.join(ok(dir, &["noise-study", "--config", "n.toml", "--seed", "9", "--out", "n9"])));
    for l in 1..5 {
        let a = &levels[l]["flipped"];
        let b = &other["datasets"][0]["levels"][l]["flipped"];
        assert!(!a.as_array().unwrap().is_empty());
        assert_ne!(a, b, "level {l}: seeds 8 and 9 flip the same samples");
    }
}

#[test]
fn aggregate_bypass() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("m.csv"), "dataset,A,B,C\nx,90,80,70\ny,60,80,70\nz,91,91,50\n").unwrap();
    fs::write(dir.join("a.toml"), "f_critical = 6.94\n[aggregate]\nmatrix = \"m.csv\"\n").unwrap();
    let report = json(&dir.join(ok(dir, &["aggregate", "--config", "a.toml", "--out", "o"])));
    let agg = &report["aggregate"];
    assert_eq!(agg["rank_table"]["average_ranks"], serde_json::json!([5.5 / 3.0, 1.5, 8.0 / 3.0]));
    assert_eq!(agg["statistics"]["q_alpha"], Value::from(2.343));
}
