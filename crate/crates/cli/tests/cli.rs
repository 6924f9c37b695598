use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[data]
num_identities = 8
train_identities = 6
per_id_per_modality = 4
height = 24
width = 12

[model]
stage_channels = [4, 6, 8, 10]
blocks_per_stage = 1
part_dim = 5
discriminator_hidden = 7

[train]
epochs_per_side = 2
batches_per_epoch = 2
pk = { p = 3, k = 2 }
"#;

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
        Self { dir }
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_xmreid"))
            .args(args)
            .env("XMREID_OUT", self.dir.path())
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let o = self.run(args);
        assert!(
            o.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        String::from_utf8(o.stdout).unwrap()
    }

    fn gen(&self, out: &str, seed: &str) {
        self.ok(&["gen", "--config", self.cfg(), "--seed", seed, "--out", out]);
    }

    fn cfg(&self) -> &'static str {
        // Leaked once per test; keeps call sites short.
        Box::leak(self.path("tiny.toml").to_string_lossy().into_owned().into_boxed_str())
    }

    fn s(&self, p: &str) -> &'static str {
        Box::leak(self.path(p).to_string_lossy().into_owned().into_boxed_str())
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn gen_is_deterministic_and_counts_rows() {
    let e = Env::new();
    e.gen("a", "1");
    e.gen("b", "1");
    let a = fs::read(e.path("a/manifest.csv")).unwrap();
    assert_eq!(a, fs::read(e.path("b/manifest.csv")).unwrap());
    assert_eq!(fs::read(e.path("a/images/000005.bin")).unwrap(), fs::read(e.path("b/images/000005.bin")).unwrap());
    let rows = String::from_utf8(a).unwrap().lines().count() - 1;
    assert_eq!(rows, 8 * 4 * 2);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(e.path("a/run.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "gen");
    assert_eq!(m["seed"], 1);
}

#[test]
fn gen_ids_flag_sets_row_count() {
    let e = Env::new();
    e.ok(&["gen", "--ids", "12", "--per-id", "2", "--height", "16", "--width", "8", "--out", "d"]);
    let rows = fs::read_to_string(e.path("d/manifest.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows, 12 * 2 * 2);
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let e = Env::new();
    let o = e.run(&["gen", "--ids", "10"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--out"));
}

#[test]
fn invalid_config_exits_with_config_code() {
    let e = Env::new();
    let o = e.run(&["gen", "--ids", "2", "--out", "d"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    fs::write(e.path("bad.toml"), "[train]\nnot_a_key = 1\n").unwrap();
    let o = e.run(&["gen", "--config", e.s("bad.toml"), "--out", "d"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn ablation_flag_controls_logged_terms() {
    let e = Env::new();
    e.gen("data", "0");
    let data = e.s("data");
    e.ok(&["train", "--config", e.cfg(), "--data", data, "--out", "base", "--ablation", "baseline"]);
    let h = header(&e.path("base/log.csv"));
    assert!(!h.contains("adv_"), "{h}");

    e.ok(&["train", "--config", e.cfg(), "--data", data, "--out", "sw", "--ablation", "shallow+weighting"]);
    let h = header(&e.path("sw/log.csv"));
    for c in ["adv_1", "adv_2", "adv_3", "adv_4"] {
        assert!(h.contains(c), "{h}");
    }
    assert!(!h.contains("adv_f"));

    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(e.path("sw/run.json")).unwrap()).unwrap();
    for out in m["outputs"].as_array().unwrap() {
        assert!(e.path("sw").join(out.as_str().unwrap()).exists(), "{out}");
    }
    assert_eq!(m["config"]["train"]["ablation"], "shallow+weighting");
}

#[test]
fn unknown_ablation_is_a_usage_error() {
    let e = Env::new();
    e.gen("data", "0");
    let o = e.run(&["train", "--data", e.s("data"), "--out", "x", "--ablation", "deep"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let e = Env::new();
    e.gen("data", "0");
    let data = e.s("data");
    let args = |out: &'static str| ["train", "--config", e.cfg(), "--data", data, "--out", out, "--ablation", "shallow+weighting"];
    e.ok(&args("full"));
    let mut first = args("split").to_vec();
    first.extend(["--stop-after", "3"]);
    let out = e.ok(&first);
    assert!(out.contains("--resume"));
    assert!(!e.path("split/eval.json").exists());
    e.ok(&["train", "--data", data, "--out", "split", "--resume"]);
    for f in ["model.xmr", "log.csv", "eval.json"] {
        assert_eq!(
            fs::read(e.path("full").join(f)).unwrap(),
            fs::read(e.path("split").join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn training_and_eval_are_bit_reproducible() {
    let e = Env::new();
    e.gen("data", "3");
    let data = e.s("data");
    for out in ["r1", "r2"] {
        e.ok(&["train", "--config", e.cfg(), "--data", data, "--out", out, "--seed", "5"]);
    }
    for f in ["model.xmr", "state.xmr", "log.csv", "eval.json"] {
        assert_eq!(fs::read(e.path("r1").join(f)).unwrap(), fs::read(e.path("r2").join(f)).unwrap(), "{f}");
    }
    e.ok(&["eval", "--checkpoint", e.s("r1"), "--data", data, "--out", "e1"]);
    e.ok(&["eval", "--checkpoint", e.s("r1/model.xmr"), "--data", data, "--out", "e2"]);
    let a = fs::read_to_string(e.path("e1/eval.json")).unwrap();
    assert_eq!(a, fs::read_to_string(e.path("e2/eval.json")).unwrap());

    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    let obj = v.as_object().unwrap();
    for k in ["rank1", "rank10", "mAP", "probe_accuracy", "layer_correlations", "num_probes", "gallery_size"] {
        assert!(obj.contains_key(k), "missing {k}");
    }
    for k in ["rank1", "rank10", "mAP", "probe_accuracy"] {
        let x = v[k].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&x), "{k} = {x}");
    }
    let corr = v["layer_correlations"].as_array().unwrap();
    assert_eq!(corr.len(), 4);
    assert!(corr.iter().all(|c| (-1.0..=1.0).contains(&c.as_f64().unwrap())));
    assert!(e.path("e1/ranks.csv").exists());
}

#[test]
fn eval_rejects_incompatible_dataset() {
    let e = Env::new();
    e.gen("data", "0");
    e.ok(&["train", "--config", e.cfg(), "--data", e.s("data"), "--out", "run", "--epochs", "1"]);
    e.ok(&["gen", "--ids", "8", "--train-ids", "6", "--per-id", "2", "--height", "16", "--width", "8", "--out", "other"]);
    let o = e.run(&["eval", "--checkpoint", e.s("run"), "--data", e.s("other")]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("24x12"));
}

#[test]
fn sweep_validates_part_counts_before_training() {
    let e = Env::new();
    e.gen("data", "0");
    let o = e.run(&["sweep-partitions", "--config", e.cfg(), "--data", e.s("data"), "--out", "sw", "--parts", "1,5"]);
    assert_eq!(code(&o), 3);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("[1, 3]"), "{err}");
    assert!(!e.path("sw/n1").exists());

    let out = e.ok(&["sweep-partitions", "--config", e.cfg(), "--data", e.s("data"), "--out", "sw", "--parts", "1,3", "--epochs", "1"]);
    assert_eq!(out.lines().count(), 3);
    let csv = fs::read_to_string(e.path("sw/sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "n,rank1,mAP");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,") && lines[2].starts_with("3,"));
    assert!(!header(&e.path("sw/n3/log.csv")).contains("adv_"));
}

#[test]
fn gradcheck_lists_every_op() {
    let e = Env::new();
    let out = e.ok(&["gradcheck", "--cases", "3"]);
    let csv = fs::read_to_string(e.path("gradcheck/gradcheck.csv")).unwrap();
    let ops = csv.lines().count() - 1;
    assert!(ops >= 20, "{ops}");
    assert_eq!(out.lines().filter(|l| l.ends_with(" ok")).count(), ops);
}

#[test]
fn probe_reports_accuracy_per_tap() {
    let e = Env::new();
    e.gen("data", "0");
    e.ok(&["train", "--config", e.cfg(), "--data", e.s("data"), "--out", "run", "--epochs", "1"]);
    e.ok(&["probe", "--checkpoint", e.s("run"), "--data", e.s("data"), "--tap", "2", "--out", "p"]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(e.path("p/probe.json")).unwrap()).unwrap();
    assert_eq!(v["tap"], "2");
    assert!((0.0..=1.0).contains(&v["accuracy"].as_f64().unwrap()));
    let o = e.run(&["probe", "--checkpoint", e.s("run"), "--data", e.s("data"), "--tap", "7"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn divergence_exits_with_numeric_code() {
    let e = Env::new();
    e.gen("data", "0");
    let o = e.run(&[
        "train", "--config", e.cfg(), "--data", e.s("data"), "--out", "nan", "--ablation", "baseline", "--unified-lr", "1e12",
    ]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("epoch"), "{err}");
    assert!(e.path("nan/log.csv").exists());
}
