use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "layers=2",
    "dim=8",
    "heads=2",
    "ffn_dim=16",
    "span_layers=1,2",
    "direction_layers=1,2",
    "head_dim=8",
    "lr=0.003",
];

fn quartet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quartet"))
        .args(args)
        .env_remove("QUARTET_TRAIN")
        .env_remove("QUARTET_DEV")
        .env_remove("QUARTET_TEST")
        .env_remove("QUARTET_OUT")
        .env_remove("QUARTET_CHECKPOINT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = quartet(args);
    assert!(
        out.status.success(),
        "quartet {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn with_tiny<'a>(mut args: Vec<&'a str>, epochs: &'a str) -> Vec<&'a str> {
    for kv in TINY {
        args.push("--set");
        args.push(kv);
    }
    args.push("--set");
    args.push(epochs);
    args
}

fn synth(dir: &Path, passages: &str) {
    ok(&["--out", dir.to_str().unwrap(), "synth", "--passages", passages]);
}

fn passage_ids(path: &Path) -> HashSet<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["passage_id"].as_str().unwrap().to_string()
        })
        .collect()
}

fn loss_curve(path: &Path) -> Vec<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn synth_is_deterministic_with_disjoint_passages() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path(), "30");
    synth(b.path(), "30");
    for name in ["train.jsonl", "dev.jsonl", "test.jsonl"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap()
        );
    }
    let train = passage_ids(&a.path().join("train.jsonl"));
    let dev = passage_ids(&a.path().join("dev.jsonl"));
    let test = passage_ids(&a.path().join("test.jsonl"));
    assert!(!train.is_empty() && !dev.is_empty() && !test.is_empty());
    assert!(train.is_disjoint(&dev));
    assert!(train.is_disjoint(&test));
    assert!(dev.is_disjoint(&test));
}

#[test]
fn train_eval_and_reload_agree() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, "20");
    let train = data.join("train.jsonl");
    let test = data.join("test.jsonl");
    let out = dir.path().join("run");
    let ck = out.join("checkpoint.json");

    let args = with_tiny(
        vec!["--data", train.to_str().unwrap(), "--out", out.to_str().unwrap(), "train"],
        "epochs=4",
    );
    ok(&args);
    let curve = loss_curve(&out.join("loss_curve.tsv"));
    assert_eq!(curve.len(), 4);
    assert!(curve[3] < curve[0], "loss did not fall: {curve:?}");

    let eval_dir = |name: &str| {
        let d = dir.path().join(name);
        ok(&[
            "--data",
            test.to_str().unwrap(),
            "--checkpoint",
            ck.to_str().unwrap(),
            "--out",
            d.to_str().unwrap(),
            "eval",
        ]);
        d
    };
    let first = eval_dir("eval1");
    let second = eval_dir("eval2");
    for name in ["metrics.tsv", "predictions.jsonl", "report.txt"] {
        assert_eq!(
            fs::read(first.join(name)).unwrap(),
            fs::read(second.join(name)).unwrap(),
            "{name} differs between runs"
        );
    }
    for name in ["positions_i.png", "confusion_d_e_overall.png"] {
        assert!(first.join(name).exists());
    }

    let rep = dir.path().join("rescored");
    ok(&[
        "--data",
        test.to_str().unwrap(),
        "--out",
        rep.to_str().unwrap(),
        "report",
        "--predictions",
        first.join("predictions.jsonl").to_str().unwrap(),
        "--name",
        "quartet",
    ]);
    assert_eq!(
        fs::read(first.join("metrics.tsv")).unwrap(),
        fs::read(rep.join("metrics.tsv")).unwrap()
    );

    let probe = quartet(&[
        "--data",
        test.to_str().unwrap(),
        "--checkpoint",
        ck.to_str().unwrap(),
        "probe",
        "--question",
        "nope",
        "--text",
        "   ",
        "--position",
        "1",
    ]);
    assert!(!probe.status.success());
}

#[test]
fn probe_reports_before_and_after() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, "10");
    let train = data.join("train.jsonl");
    let out = dir.path().join("run");
    ok(&with_tiny(
        vec!["--data", train.to_str().unwrap(), "--out", out.to_str().unwrap(), "train"],
        "epochs=1",
    ));
    let first = fs::read_to_string(&train).unwrap();
    let line = first.lines().next().unwrap();
    let v: serde_json::Value = serde_json::from_str(line).unwrap();
    let id = v["id"].as_str().unwrap().to_string();
    let ck = out.join("checkpoint.json");
    let args = |text: &'static str| {
        vec![
            "--data".to_string(),
            train.to_str().unwrap().to_string(),
            "--checkpoint".to_string(),
            ck.to_str().unwrap().to_string(),
            "probe".to_string(),
            "--question".to_string(),
            id.clone(),
            "--text".to_string(),
            text.to_string(),
            "--position".to_string(),
            "1".to_string(),
        ]
    };
    let good: Vec<String> = args("the weather is calm");
    let out = ok(&good.iter().map(String::as_str).collect::<Vec<_>>());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("before:") && text.contains("after:"), "{text}");
    let empty: Vec<String> = args("  ");
    let bad = quartet(&empty.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("empty"));
}

#[test]
fn nonpositive_learning_rate_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for lr in ["lr=0", "lr=-0.1"] {
        let out = quartet(&["--out", dir.path().to_str().unwrap(), "--set", lr, "train"]);
        assert!(!out.status.success());
        assert!(String::from_utf8_lossy(&out.stderr).contains("learning rate"));
    }
}

#[test]
fn majority_eval_from_training_split() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, "20");
    let out = dir.path().join("maj");
    let run = ok(&[
        "--model",
        "majority",
        "--data",
        data.join("test.jsonl").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "eval",
        "--train",
        data.join("train.jsonl").to_str().unwrap(),
    ]);
    let text = String::from_utf8_lossy(&run.stdout);
    assert!(text.contains("acc_expl"), "{text}");
    let preds = fs::read_to_string(out.join("predictions.jsonl")).unwrap();
    let distinct: HashSet<String> = preds
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["pred"].to_string())
        .collect();
    assert_eq!(distinct.len(), 1, "majority should emit one constant explanation");
}
