use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_s2m2ecg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = bin(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn record_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".s2m2"))
        .collect();
    names.sort();
    names
}

#[test]
fn gen_data_writes_seeded_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&["gen-data", "--classes", "4", "--per-class", "100", "--seed", "7", "--out", p(dir)]);
    }
    let files = record_files(&a);
    assert_eq!(files.len(), 400);
    assert_eq!(files, record_files(&b));
    let manifest = fs::read(a.join("manifest.csv")).unwrap();
    assert_eq!(manifest, fs::read(b.join("manifest.csv")).unwrap());
    for f in files.iter().step_by(37) {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin(&["gen-data", "--classes", "1", "--per-class", "5", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(bin(&["no-such-command"]).status.code(), Some(2));

    let data = tmp.path().join("d");
    ok(&["gen-data", "--classes", "2", "--per-class", "5", "--length", "1000", "--out", p(&data)]);
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "depth = 1\nmystery_knob = 3\n").unwrap();
    let out = bin(&["train", "--data", p(&data), "--config", p(&cfg), "--out", p(&tmp.path().join("m.bin"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mystery_knob"));

    let out = bin(&["eval", "--model", p(&tmp.path().join("missing.bin")), "--data", p(&data)]);
    assert_eq!(out.status.code(), Some(1));
}

const SMALL: &str = "depth = 1\ndim = 8\nstate_n = 2\nhead_dim = 4\nepochs = 1\nbatch_size = 4\n";

#[test]
fn train_eval_infer_bench_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let (raw, clean) = (tmp.path().join("raw"), tmp.path().join("clean"));
    ok(&["gen-data", "--classes", "3", "--per-class", "8", "--length", "1000", "--out", p(&raw)]);
    ok(&["preprocess", "--in", p(&raw), "--out", p(&clean)]);
    let cfg = tmp.path().join("small.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let model = tmp.path().join("m.bin");
    ok(&["train", "--data", p(&clean), "--config", p(&cfg), "--out", p(&model)]);
    assert!(model.exists());

    let report = ok(&["eval", "--model", p(&model), "--data", p(&clean)]);
    assert!(report.contains("acc=") && report.contains("f1="), "{report}");

    let rec = clean.join(&record_files(&clean)[0]);
    let text = ok(&["infer", "--model", p(&model), "--record", p(&rec)]);
    let probs: Vec<f64> = text
        .lines()
        .filter(|l| l.starts_with("class="))
        .map(|l| l.rsplit("p=").next().unwrap().trim().parse().unwrap())
        .collect();
    assert_eq!(probs.len(), 3);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-5, "{text}");

    let bench = ok(&["bench", "--model", p(&model), "--repeats", "5", "--warmup", "1"]);
    assert!(bench.contains("mean_ms="), "{bench}");
}

#[test]
fn ablate_writes_one_row_per_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    ok(&["gen-data", "--classes", "2", "--per-class", "8", "--length", "1000", "--out", p(&data)]);
    let (cfg, grid, csv) = (tmp.path().join("c"), tmp.path().join("g"), tmp.path().join("out.csv"));
    fs::write(&cfg, SMALL).unwrap();
    fs::write(&grid, "p = 50, 25\nbidirectional = on, off\n").unwrap();
    ok(&["ablate", "--data", p(&data), "--grid", p(&grid), "--config", p(&cfg), "--out", p(&csv)]);
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "p,s,depth,dim,bidir,multi_branch,fusion,acc,f1,auc,params,train_s");
    assert_eq!(lines.len(), 5);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 12));
}
