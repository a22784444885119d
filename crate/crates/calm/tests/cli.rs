use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use calm::checkpoint::Checkpoint;
use calm::core::trainer::{TrainConfig, Trainer};
use calm::dataset::load_dataset;

fn calm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_calm"))
        .args(args)
        .env_remove("CALM_REPORT_DIR")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = calm(args);
    assert!(out.status.success(), "calm {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn p(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }
}

/// Small corpus, short training run and index.
fn trained() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let f = Fixture { _dir: dir, root };
    ok(&["gen-data", "--out", s(&f.root), "--items-per-cluster", "100", "--test-per-cluster", "2"]);
    ok(&[
        "train", "--dataset", &f.p("train.jsonl"), "--checkpoint", &f.p("m.ckpt"), "--report-dir", &f.p("reports"),
        "--steps", "30", "--pretrain-steps", "20", "--k", "3",
    ]);
    ok(&["index", "--checkpoint", &f.p("m.ckpt"), "--dataset", &f.p("train.jsonl"), "--out", &f.p("train.idx")]);
    f
}

#[test]
fn gen_data_defaults_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let stdout = ok(&["gen-data", "--out", s(&a), "--seed", "7"]);
    assert!(stdout.contains("900"));
    ok(&["gen-data", "--out", s(&b), "--seed", "7"]);
    let train = std::fs::read_to_string(a.join("train.jsonl")).unwrap();
    assert_eq!(train.lines().count(), 900);
    for file in ["train.jsonl", "test.jsonl", "spec.json"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn single_cluster_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = calm(&["gen-data", "--out", s(dir.path()), "--clusters", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("2 clusters"));
}

#[test]
fn missing_dataset_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.jsonl");
    let out = calm(&["train", "--dataset", s(&missing), "--checkpoint", s(&dir.path().join("m.ckpt"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));
    assert!(!dir.path().join("m.ckpt").exists());
}

#[test]
fn zero_steps_saves_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&["gen-data", "--out", s(root), "--items-per-cluster", "10", "--test-per-cluster", "0"]);
    let ckpt = root.join("m.ckpt");
    ok(&[
        "train", "--dataset", s(&root.join("train.jsonl")), "--checkpoint", s(&ckpt), "--steps", "0", "--seed", "4",
        "--report-dir", s(&root.join("r")),
    ]);
    let data = load_dataset(&root.join("train.jsonl")).unwrap();
    let cfg = TrainConfig { seed: 4, ..TrainConfig::default() };
    let ck = Checkpoint::load(&ckpt).unwrap();
    assert_eq!(ck.params, Trainer::initial_params(&data, &cfg).unwrap());
    assert_eq!(ck.step, 0);
    assert_eq!(
        std::fs::read_to_string(root.join("r/stats.csv")).unwrap(),
        "step,l_calm,l_tts_proxy,l_total\n"
    );
}

#[test]
fn report_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&["gen-data", "--out", s(root), "--items-per-cluster", "10", "--test-per-cluster", "0"]);
    let out = Command::new(env!("CARGO_BIN_EXE_calm"))
        .args(["train", "--dataset", s(&root.join("train.jsonl")), "--checkpoint", s(&root.join("m.ckpt")), "--steps", "0"])
        .env("CALM_REPORT_DIR", root.join("env-reports"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(root.join("env-reports/stats.csv").is_file());
}

#[test]
fn train_writes_stats_and_runs_the_gradient_check() {
    let f = trained();
    let stats = std::fs::read_to_string(f.path("reports/stats.csv")).unwrap();
    assert_eq!(stats.lines().count(), 31);
    let out = calm(&[
        "train", "--dataset", &f.p("train.jsonl"), "--checkpoint", &f.p("g.ckpt"), "--report-dir", &f.p("g"),
        "--steps", "1", "--pretrain-steps", "5", "--k", "3", "--grad-check",
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("gradient check passed"));
}

#[test]
fn retrieve_self_match_at_n_one() {
    let f = trained();
    let data = load_dataset(&f.path("train.jsonl")).unwrap();
    let id = &data[5].id;
    let stdout = ok(&[
        "retrieve", "--checkpoint", &f.p("m.ckpt"), "--index", &f.p("train.idx"), "--queries", &f.p("train.jsonl"),
        "--id", id, "--n", "1", "--out", &f.p("summary.json"),
    ]);
    let line = stdout.lines().next().unwrap();
    let (got, sim) = line.split_once('\t').unwrap();
    assert_eq!(got, id);
    assert!((sim.parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(f.path("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["weights"], serde_json::json!([1.0]));

    let stdout = ok(&[
        "retrieve", "--checkpoint", &f.p("m.ckpt"), "--index", &f.p("train.idx"), "--queries", &f.p("train.jsonl"),
        "--id", id, "--n", "4", "--exclude-self",
    ]);
    assert_eq!(stdout.lines().count(), 4);
    assert!(stdout.lines().all(|l| !l.starts_with(&format!("{id}\t"))));
}

#[test]
fn eval_and_sweep_reports() {
    let f = trained();
    let stdout = ok(&[
        "eval", "--checkpoint", &f.p("m.ckpt"), "--index", &f.p("train.idx"), "--dataset", &f.p("train.jsonl"),
        "--test", &f.p("test.jsonl"), "--n", "5", "--report-dir", &f.p("reports"),
    ]);
    assert!(stdout.contains("calm") && stdout.contains("semantic_control"));
    let precision = std::fs::read_to_string(f.path("reports/precision.csv")).unwrap();
    assert!(precision.starts_with("query_id,N,N_plus,precision\n"));
    assert_eq!(precision.lines().count(), 13);
    assert!(f.path("reports/precision_control.csv").is_file());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f.path("reports/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["n"], 5);

    ok(&[
        "sweep", "--checkpoint", &f.p("m.ckpt"), "--index", &f.p("train.idx"), "--test", &f.p("test.jsonl"),
        "--n-values", "1,5,20,75,150,300,600", "--report-dir", &f.p("reports"), "--threads", "3",
    ]);
    let sweep = std::fs::read_to_string(f.path("reports/sweep.csv")).unwrap();
    let rows: Vec<&str> = sweep.lines().skip(1).collect();
    assert_eq!(rows.len(), 7);
    assert!(rows[6].starts_with("600,"));
}

#[test]
fn oversized_n_is_rejected() {
    let f = trained();
    let out = calm(&[
        "sweep", "--checkpoint", &f.p("m.ckpt"), "--index", &f.p("train.idx"), "--test", &f.p("test.jsonl"),
        "--n-values", "1,5,600,1000", "--report-dir", &f.p("reports"),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fingerprint_mismatch_names_both() {
    let f = trained();
    ok(&[
        "train", "--dataset", &f.p("train.jsonl"), "--checkpoint", &f.p("other.ckpt"), "--report-dir", &f.p("o"),
        "--steps", "0", "--seed", "9",
    ]);
    let out = calm(&[
        "eval", "--checkpoint", &f.p("other.ckpt"), "--index", &f.p("train.idx"), "--dataset", &f.p("train.jsonl"),
        "--test", &f.p("test.jsonl"), "--report-dir", &f.p("o"),
    ]);
    assert_eq!(out.status.code(), Some(4));
    let msg = String::from_utf8_lossy(&out.stderr);
    let fp = |p: &str| calm::checkpoint::fingerprint_hex(&Checkpoint::load(&f.path(p)).unwrap().fingerprint());
    assert!(msg.contains(&fp("m.ckpt")) && msg.contains(&fp("other.ckpt")), "{msg}");
}

#[test]
fn commands_do_not_touch_their_inputs() {
    let f = trained();
    let inputs = ["train.jsonl", "test.jsonl", "m.ckpt", "train.idx"];
    let before: Vec<Vec<u8>> = inputs.iter().map(|n| std::fs::read(f.path(n)).unwrap()).collect();
    ok(&[
        "eval", "--checkpoint", &f.p("m.ckpt"), "--index", &f.p("train.idx"), "--dataset", &f.p("train.jsonl"),
        "--test", &f.p("test.jsonl"), "--report-dir", &f.p("reports"),
    ]);
    ok(&[
        "retrieve", "--checkpoint", &f.p("m.ckpt"), "--index", &f.p("train.idx"), "--queries", &f.p("test.jsonl"),
        "--id", &load_dataset(&f.path("test.jsonl")).unwrap()[0].id,
    ]);
    let after: Vec<Vec<u8>> = inputs.iter().map(|n| std::fs::read(f.path(n)).unwrap()).collect();
    assert_eq!(before, after);
}

#[test]
fn config_file_with_flag_overrides() {
    let f = trained();
    let cfg = serde_json::json!({
        "paths": {
            "checkpoint": f.p("m.ckpt"),
            "index": f.p("train.idx"),
            "test_dataset": f.p("test.jsonl"),
            "report_dir": f.p("cfg-reports"),
        },
        "n_values": [1, 2, 3],
    });
    std::fs::write(f.path("run.json"), cfg.to_string()).unwrap();
    ok(&["sweep", "--config", &f.p("run.json")]);
    assert_eq!(std::fs::read_to_string(f.path("cfg-reports/sweep.csv")).unwrap().lines().count(), 4);
    ok(&["sweep", "--config", &f.p("run.json"), "--n-values", "1,4"]);
    assert_eq!(std::fs::read_to_string(f.path("cfg-reports/sweep.csv")).unwrap().lines().count(), 3);

    std::fs::write(f.path("bad.json"), r#"{"unknown": 1}"#).unwrap();
    assert_eq!(calm(&["sweep", "--config", &f.p("bad.json")]).status.code(), Some(2));
}
