use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use costtao::dataset::{self, Dataset, RadioClass, Sample};
use costtao::export;
use costtao::sha256_hex;
use costtao::tree::{DecisionNode, Node, ObliqueTree};

fn costtao(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_costtao"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = costtao(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(p).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

fn simulate(dir: &Path, seed: &str) -> PathBuf {
    ok(&["simulate", "--seed", seed, "--out-dir", s(dir)]);
    dir.join("trace.csv")
}

/// Zigbee exactly when hn < 3.5, with costs on both sides of the 200 bps threshold.
fn hop_dataset() -> Dataset {
    let samples = (0..40)
        .map(|i| {
            let hn = (1 + i % 5) as f64;
            let y = if hn < 3.5 { RadioClass::Zigbee } else { RadioClass::Lora };
            Sample::new(
                vec![hn, -110.0 - i as f64 * 0.3, 0.5 + (i % 7) as f64 / 20.0, 1.0 + (i % 3) as f64],
                y,
                [50.0, 900.0][i % 2],
            )
            .unwrap()
        })
        .collect();
    Dataset::new(samples).unwrap()
}

fn hop_stump(w0: f64) -> ObliqueTree {
    ObliqueTree::new(
        vec![
            Node::Decision(DecisionNode {
                w: vec![1.0, 0.0, 0.0, 0.0],
                w0,
                left: 1,
                right: 2,
            }),
            Node::Leaf(RadioClass::Zigbee),
            Node::Leaf(RadioClass::Lora),
        ],
        0,
        0.0,
        None,
    )
    .unwrap()
}

#[test]
fn simulate_is_byte_stable_and_manifested() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    simulate(a.path(), "7");
    simulate(b.path(), "7");
    for f in ["trace.csv", "dataset.csv", "replay.csv", "cdf.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.path().join("manifest_simulate.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 7);
    let outputs = m["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 4);
    for o in outputs {
        let bytes = fs::read(o["path"].as_str().unwrap()).unwrap();
        assert_eq!(o["sha256"], sha256_hex(&bytes));
    }
    // Oracle replays at ratio 1; every selector stays within (0, 1].
    for row in csv_rows(&a.path().join("replay.csv")) {
        let ratio: f64 = row[2].parse().unwrap();
        assert!(ratio > 0.0 && ratio <= 1.0, "{row:?}");
        if row[0] == "oracle" {
            assert_eq!(ratio, 1.0);
        }
    }
}

#[test]
fn train_is_deterministic_and_honours_fixed_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let traces = simulate(dir.path(), "3");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&[
            "train",
            "--traces",
            s(&traces),
            "--depth",
            "2",
            "--sweep-lambdas",
            "0,0.01",
            "--seed",
            "4",
            "--out-dir",
            s(out),
        ]);
    }
    assert_eq!(fs::read(a.join("model.json")).unwrap(), fs::read(b.join("model.json")).unwrap());
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
    assert_eq!(csv_rows(&a.join("lambda_sweep.csv")).len(), 2);

    let c = dir.path().join("c");
    let stdout = ok(&[
        "train",
        "--traces",
        s(&traces),
        "--depth",
        "2",
        "--lambda",
        "0",
        "--init",
        "cart",
        "--out-dir",
        s(&c),
    ]);
    assert!(stdout.contains("pass  0"));
    let sweep = csv_rows(&c.join("lambda_sweep.csv"));
    assert_eq!(sweep.len(), 1);
    assert_eq!(sweep[0][0], "0");
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(c.join("manifest_train.json")).unwrap()).unwrap();
    assert_eq!(m["lambda"], 0.0);
    let history: Vec<f64> = serde_json::from_value(m["history"].clone()).unwrap();
    assert!(history.windows(2).all(|w| w[1] <= w[0]));
    let tree = ObliqueTree::load(c.join("model.json")).unwrap();
    assert_eq!(tree.lambda(), 0.0);
    assert!(tree.scaler().is_some());

    // Trained model beats the majority baseline on the held-out split.
    let metrics = csv_rows(&c.join("metrics.csv"));
    let test_cwa: f64 = metrics.iter().find(|r| r[0] == "tao" && r[2] == "test").unwrap()[3]
        .parse()
        .unwrap();
    let base_cwa: f64 = metrics.iter().find(|r| r[0] == "majority").unwrap()[3].parse().unwrap();
    assert!(test_cwa > base_cwa, "{test_cwa} vs {base_cwa}");
}

#[test]
fn eval_perfect_stub_and_kfold_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("hops.csv");
    hop_dataset().save(&data).unwrap();
    let model = dir.path().join("stub.json");
    hop_stump(-3.5).save(&model).unwrap();
    let out = dir.path().join("eval");
    let stdout = ok(&[
        "eval",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--kfold",
        "5",
        "--out-dir",
        s(&out),
    ]);
    assert!(stdout.contains("CWA 100.0000"), "{stdout}");
    let bd = csv_rows(&out.join("breakdown.csv"));
    assert_eq!(&bd[0][1..6], ["0", "0", "0", "0", "0"]);
    let kfold = csv_rows(&out.join("kfold.csv"));
    assert_eq!(kfold.len(), 6);
    assert_eq!(kfold.iter().filter(|r| r[2] == "test").count(), 1);
}

#[test]
fn eval_breakdown_partitions_the_errors() {
    let dir = tempfile::tempdir().unwrap();
    let ds = hop_dataset();
    let data = dir.path().join("hops.csv");
    ds.save(&data).unwrap();
    // Threshold one hop too high: every hn = 4 sample is misrouted to Zigbee.
    let model = dir.path().join("off.json");
    let stump = hop_stump(-4.5);
    stump.save(&model).unwrap();
    let out = dir.path().join("eval");
    ok(&["eval", "--model", s(&model), "--data", s(&data), "--out-dir", s(&out)]);
    let row: Vec<f64> = csv_rows(&out.join("breakdown.csv"))[0].iter().map(|v| v.parse().unwrap()).collect();
    let wrong: Vec<&Sample> = ds.samples().iter().filter(|x| stump.predict(&x.x).unwrap() != x.y).collect();
    assert_eq!(row[1] + row[2], wrong.len() as f64);
    assert_eq!(row[1], wrong.iter().filter(|x| x.c > 200.0).count() as f64);
    assert_eq!(row[3] + row[4], row[5]);
    assert_eq!(row[5], wrong.iter().map(|x| x.c).sum::<f64>());
}

#[test]
fn sweep_covers_every_interval_and_selector() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("stub.json");
    hop_stump(-3.5).save(&model).unwrap();
    ok(&["sweep", "--seed", "2", "--model", s(&model), "--out-dir", s(dir.path())]);
    let rows = csv_rows(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 6 * 5);
    for interval in ["5", "3", "2", "1.5", "1.4", "1.3"] {
        assert_eq!(rows.iter().filter(|r| r[0] == interval).count(), 5, "{interval}");
    }
}

#[test]
fn exported_program_matches_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let traces = simulate(dir.path(), "5");
    let out = dir.path().join("m");
    ok(&[
        "train",
        "--traces",
        s(&traces),
        "--depth",
        "3",
        "--lambda",
        "0.01",
        "--out-dir",
        s(&out),
    ]);
    let stdout = ok(&["export", "--model", s(&out.join("model.json")), "--out-dir", s(&out)]);
    let program = fs::read_to_string(out.join("program.txt")).unwrap();
    assert_eq!(stdout, program);
    let tree = ObliqueTree::load(out.join("model.json")).unwrap();
    assert!(program.contains(&format!("model_hash: {}", tree.hash())));
    let records = dataset::load_traces(&traces).unwrap();
    for r in &records {
        let x = r.x.to_array();
        assert_eq!(export::interpret(&program, &x).unwrap(), tree.predict(&x).unwrap());
    }
    assert_eq!(csv_rows(&out.join("report.csv")).len(), tree.num_decisions());
}

#[test]
fn stability_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let traces = simulate(dir.path(), "9");
    let stdout = ok(&[
        "stability",
        "--traces",
        s(&traces),
        "--depth",
        "2",
        "--lambda",
        "0.01",
        "--out-dir",
        s(dir.path()),
    ]);
    assert!(stdout.contains("skeleton preserved"));
    assert_eq!(csv_rows(&dir.path().join("stability.csv")).len(), 3);
    assert!(dir.path().join("rules.txt").exists());
    assert!(dir.path().join("similarity.csv").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    // Usage errors.
    assert_eq!(costtao(&["train"]).status.code(), Some(2));
    assert_eq!(costtao(&["simulate", "--bogus"]).status.code(), Some(2));
    // Bad configuration.
    let data = dir.path().join("hops.csv");
    hop_dataset().save(&data).unwrap();
    assert_eq!(
        costtao(&["train", "--data", s(&data), "--split", "0.5,0.2,0.2", "--out-dir", d])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(costtao(&["sweep", "--intervals", "0", "--out-dir", d]).status.code(), Some(2));
    // Data errors.
    let missing = dir.path().join("nope.csv");
    assert_eq!(costtao(&["train", "--data", s(&missing), "--out-dir", d]).status.code(), Some(3));
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "hn,rssi,prr,rnp,label,cost\n1,-100,0.9,1.2,Z,-5\n").unwrap();
    assert_eq!(costtao(&["train", "--data", s(&bad), "--out-dir", d]).status.code(), Some(3));
    let model = dir.path().join("broken.json");
    fs::write(&model, "{\"not\": \"a tree\"}").unwrap();
    assert_eq!(costtao(&["export", "--model", s(&model), "--out-dir", d]).status.code(), Some(3));
}
