//! End-to-end behaviour of the `das` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn das(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_das")).args(args).output().expect("run das")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_SYNTH: &str = "n_source_labeled = 240\nn_source_unlabeled = 40\nn_target_unlabeled = 200\nn_target_test = 100\nmin_len = 6\nmax_len = 14\nshift = 0.5\n";

const SMALL_TRAIN: &str = "variant = DAS\nepochs = 3\nbatch_size = 20\nhidden = 12\nembedding_dim = 8\nn_dev = 40\nlearning_rate = 0.005\nlambda1 = 5\n";

fn synth(dir: &Path) -> PathBuf {
    let cfg = dir.join("synth.txt");
    std::fs::write(&cfg, SMALL_SYNTH).unwrap();
    let data = dir.join("data");
    let out = das(&["synth", "--config", s(&cfg), "--out", s(&data), "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    data
}

fn train(dir: &Path, data: &Path, out: &str, config: &str) -> (Output, PathBuf) {
    let cfg = dir.join(format!("{out}.txt"));
    std::fs::write(&cfg, config).unwrap();
    let out_dir = dir.join(out);
    let o = das(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&out_dir),
        "--source",
        s(&data.join("source_labeled.jsonl")),
        "--source-unlabeled",
        s(&data.join("source_unlabeled.jsonl")),
        "--target",
        s(&data.join("target_unlabeled.jsonl")),
        "--target-test",
        s(&data.join("target_test.jsonl")),
    ]);
    (o, out_dir)
}

#[test]
fn synth_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = synth(dir.path());
    let other = TempDir::new().unwrap();
    let b = synth(other.path());
    for f in das::synth::SYNTH_FILES {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn train_evaluate_and_analyze() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path());
    let (o, out) = train(dir.path(), &data, "run", SMALL_TRAIN);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["checkpoint.bin", "vocab.txt", "history.csv", "report.json", "config.txt"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let history = std::fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["bootstrap_skipped_epochs"], serde_json::json!([1]));
    let echoed = report["config"].as_str().unwrap();
    assert_eq!(das::trainer::TrainConfig::parse(echoed).unwrap().to_config_string(), echoed);

    let ckpt = out.join("checkpoint.bin");
    let eval_dir = dir.path().join("eval");
    let e = das(&["evaluate", "--checkpoint", s(&ckpt), "--test", s(&data.join("target_test.jsonl")), "--out", s(&eval_dir)]);
    assert!(e.status.success(), "{}", String::from_utf8_lossy(&e.stderr));
    let stdout = String::from_utf8_lossy(&e.stdout).to_string();
    let json: das::eval::EvalReport = serde_json::from_slice(&std::fs::read(eval_dir.join("eval.json")).unwrap()).unwrap();
    assert!(stdout.contains(&format!("accuracy = {}", json.accuracy)));
    assert!(stdout.contains(&format!("macro_f1 = {}", json.macro_f1)));
    assert_eq!(report["test"]["accuracy"].as_f64().unwrap(), json.accuracy);

    let f_dir = dir.path().join("filters");
    let a = das(&["analyze-filters", "--checkpoint", s(&ckpt), "--corpus", s(&data.join("target_test.jsonl")), "--out", s(&f_dir)]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let rep: das::eval::FilterReport = serde_json::from_slice(&std::fs::read(f_dir.join("filters.json")).unwrap()).unwrap();
    assert_eq!(rep.classes.len(), 3);
    for c in &rep.classes {
        assert_eq!(c.filters.len(), 10);
        assert!(c.filters.iter().all(|f| f.top.len() <= 5 && !f.top.is_empty()));
    }
    let one = das(&["analyze-filters", "--checkpoint", s(&ckpt), "--corpus", s(&data.join("target_test.jsonl")), "--k-filters", "1"]);
    assert!(one.status.success());
    let text = String::from_utf8_lossy(&one.stdout);
    assert_eq!(text.matches("== ").count(), 3);
    assert_eq!(text.matches("filter ").count(), 3);
    let too_many = das(&["analyze-filters", "--checkpoint", s(&ckpt), "--corpus", s(&data.join("target_test.jsonl")), "--k-filters", "13"]);
    assert_eq!(too_many.status.code(), Some(1));

    // vocabulary that does not belong to the checkpoint
    let bad_vocab = dir.path().join("vocab.txt");
    std::fs::write(&bad_vocab, "<pad>\n<unk>\nfoo\n").unwrap();
    let m = das(&["evaluate", "--checkpoint", s(&ckpt), "--vocab", s(&bad_vocab), "--test", s(&data.join("target_test.jsonl"))]);
    assert_eq!(m.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&m.stderr).contains("does not match"));

    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let e = das(&["evaluate", "--checkpoint", s(&ckpt), "--test", s(&empty)]);
    assert_eq!(e.status.code(), Some(2));

    let garbage = dir.path().join("garbage.bin");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    std::fs::copy(out.join("vocab.txt"), dir.path().join("vocab.txt")).unwrap();
    let g = das(&["analyze-filters", "--checkpoint", s(&garbage), "--corpus", s(&data.join("target_test.jsonl"))]);
    assert!(!g.status.success());
}

#[test]
fn naive_variant_writes_one_history_row_per_epoch() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path());
    let cfg = SMALL_TRAIN.replace("variant = DAS", "variant = NaiveNN").replace("epochs = 3", "epochs = 4");
    let (o, out) = train(dir.path(), &data, "naive", &cfg);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let history = std::fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 5);
    for line in history.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(&cols[2..6], ["0", "0", "0", "0"]);
    }
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let o = das(&["train", "--out", s(&dir.path().join("o")), "--source", s(&missing), "--target", s(&missing)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.jsonl"));

    let bad_cfg = dir.path().join("bad.txt");
    std::fs::write(&bad_cfg, "alpha = 2\n").unwrap();
    let o = das(&["train", "--config", s(&bad_cfg), "--out", "x", "--source", s(&missing), "--target", s(&missing)]);
    assert_eq!(o.status.code(), Some(1));

    let o = das(&["train", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gradcheck_passes_and_detects_faults() {
    let ok = das(&["gradcheck"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stdout));
    let text = String::from_utf8_lossy(&ok.stdout);
    for name in ["L ", "J ", "Gamma", "Omega", "MMD", "total"] {
        assert!(text.contains(name), "{name} missing from {text}");
    }
    assert_eq!(text.lines().count(), 6);
    let bad = das(&["gradcheck", "--inject-fault"]);
    assert_eq!(bad.status.code(), Some(3));
}
