use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const TINY: &str = r#"{
  "format_version": 1,
  "data": { "height": 32, "width": 32 },
  "model": { "height": 32, "width": 32 },
  "train": { "epochs": 2, "checkpoint_every": 1 },
  "gradexp": { "seen_scenes": 3, "config": { "trials": 3, "steps": 2, "pretrain_epochs": 1 } }
}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pairedseg"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Env {
    tmp: TempDir,
    config: PathBuf,
}

impl Env {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let config = tmp.path().join("tiny.json");
        fs::write(&config, TINY).unwrap();
        Self { tmp, config }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.tmp.path().join(name)
    }

    fn cmd(&self, args: &[&str], out: &str) -> Output {
        let o = self.path(out);
        let mut all = vec!["--config", s(&self.config), "--out", s(&o)];
        all.extend_from_slice(args);
        run(&all)
    }

    fn ok(&self, args: &[&str], out: &str) -> PathBuf {
        let o = self.cmd(args, out);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        self.path(out)
    }

    fn data(&self, name: &str) -> PathBuf {
        self.ok(&["gen-data", "--count", "14", "--seed", "5"], name)
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn gen_data_is_reproducible_and_partitioned() {
    let env = Env::new();
    let a = env.data("a");
    let b = env.data("b");
    assert_eq!(tree(&a), tree(&b));
    let m = json(&a.join("manifest.json"));
    let entries = m["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 14);
    let ids: HashSet<u64> = entries.iter().map(|e| e["id"].as_u64().unwrap()).collect();
    assert_eq!(ids.len(), 14);
    let splits: HashSet<&str> = entries.iter().map(|e| e["split"].as_str().unwrap()).collect();
    assert!(splits.iter().all(|s| *s == "train" || *s == "test"));
    assert_eq!(m["seed"], 5);
    assert_eq!(json(&a.join("run.json"))["config_hash"], m["config_hash"]);
}

#[test]
fn non_empty_output_needs_force() {
    let env = Env::new();
    env.data("d");
    let again = env.cmd(&["gen-data", "--count", "14", "--seed", "5"], "d");
    assert!(!again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    env.ok(&["gen-data", "--count", "14", "--seed", "5", "--force"], "d");
}

#[test]
fn config_is_strict() {
    let env = Env::new();
    let bad = env.path("bad.json");
    fs::write(&bad, r#"{ "format_version": 1, "trian": {} }"#).unwrap();
    let o = run(&["--config", s(&bad), "--out", s(&env.path("x")), "gen-data"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("trian"));
    fs::write(&bad, r#"{ "format_version": 7 }"#).unwrap();
    let o = run(&["--config", s(&bad), "--out", s(&env.path("y")), "gen-data"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("format_version"));
}

#[test]
fn train_eval_roundtrip() {
    let env = Env::new();
    let data = env.data("data");
    let d = s(&data);
    let full = env.ok(&["train", "--data", d, "--mode", "paired_full"], "full");
    let rerun = env.ok(&["train", "--data", d, "--mode", "paired_full"], "full2");
    assert_eq!(tree(&full), tree(&rerun));
    let summary = json(&full.join("run.json"));
    assert_eq!(summary["result"]["mode"], "paired_full");
    assert_eq!(summary["result"]["injection"], "clip");
    assert!(summary["result"]["final"]["fcl"].is_number());
    assert!(full.join("checkpoints/epoch_0002.ckpt").exists());
    assert_eq!(
        fs::read(full.join("checkpoints/epoch_0002.ckpt")).unwrap(),
        fs::read(full.join("model.ckpt")).unwrap()
    );
    let csv = fs::read_to_string(full.join("log.csv")).unwrap();
    assert!(csv.starts_with("epoch,ce_adverse,ce_clear,fcl,ocl,lambda_f,lambda_o,total\n"));

    let adv = env.ok(&["train", "--data", d, "--mode", "adverse_only"], "adv");
    let summary = json(&adv.join("run.json"));
    assert_eq!(summary["result"]["mode"], "adverse_only");
    assert_eq!(summary["result"]["injection"], "off");
    assert!(summary["result"]["final"]["ce_clear"].is_null());

    let ckpt = full.join("model.ckpt");
    let clear = env.ok(&["eval", "--checkpoint", s(&ckpt), "--data", d, "--clear"], "eval_c");
    let degraded = env.ok(&["eval", "--checkpoint", s(&ckpt), "--data", d, "--degraded"], "eval_d");
    let (rc, rd) = (json(&clear.join("eval.json")), json(&degraded.join("eval.json")));
    assert_eq!(rc["split"], "clear");
    assert_eq!(rd["split"], "adverse");
    assert_eq!(rc["per_class_iou"].as_array().unwrap().len(), 10);
    assert!(fs::read_to_string(clear.join("eval.txt")).unwrap().contains("mIoU"));
    // the paired_full config came from the training run, so the checkpoint loads
    assert_eq!(json(&clear.join("run.json"))["config"]["train"]["mode"], "paired_full");

    // the tiny config resolves to paired_full, whose injection parameters
    // the adverse_only checkpoint lacks
    let wrong = env.cmd(
        &["eval", "--checkpoint", s(&adv.join("model.ckpt")), "--data", d],
        "eval_wrong",
    );
    assert!(!wrong.status.success());
    assert!(String::from_utf8_lossy(&wrong.stderr).contains("tensors"));
}

#[test]
fn oracle_eval_scores_one() {
    let env = Env::new();
    let data = env.data("data");
    let e = env.ok(&["eval", "--oracle", "--data", s(&data), "--split", "train"], "oracle");
    let r = json(&e.join("eval.json"));
    assert_eq!(r["miou"], 1.0);
    assert_eq!(r["per_class_iou"].as_array().unwrap().len(), 10);
    let missing = env.cmd(&["eval", "--data", s(&data)], "nockpt");
    assert!(!missing.status.success());
}

#[test]
fn grad_exp_contract() {
    let env = Env::new();
    // enough scenes that the test split can supply a probe subset
    let data = env.ok(&["gen-data", "--count", "30", "--seed", "5"], "data");
    let d = s(&data);
    let g = env.ok(&["grad-exp", "--data", d, "--trials", "4"], "g");
    let r = json(&g.join("gradexp.json"));
    assert_eq!(r["trials"], 4);
    assert_eq!(r["gd"].as_array().unwrap().len(), 4);
    assert_eq!(r["gc"].as_array().unwrap().len(), 4);
    assert!(r["mean_gd"].is_number() && r["mean_gc"].is_number());
    let overlap = env.cmd(&["grad-exp", "--data", d, "--novel", "train"], "g2");
    assert!(!overlap.status.success());
    assert!(String::from_utf8_lossy(&overlap.stderr).contains("both"));
}

#[test]
fn ablation_axes() {
    let env = Env::new();
    let data = env.data("data");
    let d = s(&data);
    for (axis, names) in [
        ("scheduler_ocl", vec!["linear", "sigmoid", "step"]),
        ("clip_variant", vec!["13CLIP", "4CLIP", "MultiCLIP"]),
    ] {
        let out = env.ok(&["ablate", "--data", d, "--axis", axis], axis);
        let r = json(&out.join("ablate.json"));
        let rows = r["rows"].as_array().unwrap();
        let mut got: Vec<&str> = rows.iter().map(|x| x["variant"].as_str().unwrap()).collect();
        got.sort_unstable();
        assert_eq!(got, names);
        assert!(rows.iter().all(|x| x["seed"] == rows[0]["seed"] && x["epochs"] == rows[0]["epochs"]));
        let mious: Vec<f64> = rows.iter().map(|x| x["miou"].as_f64().unwrap()).collect();
        assert!(mious.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(rows[0]["rank"], 1);
    }
    assert!(!env.cmd(&["ablate", "--data", d, "--axis", "depth"], "bad").status.success());
}

#[test]
fn experiment_writes_verdicts() {
    let env = Env::new();
    let spec = env.path("spec.json");
    fs::write(
        &spec,
        r#"{
          "name": "tiny",
          "data": { "height": 32, "width": 32, "train_pairs": 6, "test_pairs": 3 },
          "seeds": [0, 1, 2],
          "epochs": 1,
          "gradexp": { "seen_scenes": 3, "config": { "trials": 2, "steps": 1, "pretrain_epochs": 1 } }
        }"#,
    )
    .unwrap();
    let out = env.path("exp");
    let o = run(&["--out", s(&out), "experiment", "--spec", s(&spec), "--only", "gradient_priority"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("gradient_priority"), "{stdout}");
    let v = json(&out.join("verdict_gradient_priority.json"));
    assert_eq!(v["pass"].as_bool().unwrap(), o.status.success());
    assert!(v["means"]["mean_gc"].is_number());
    assert!(out.join("gradexp_swapped.json").exists());
    assert!(!out.join("verdict_paired_vs_adverse.json").exists());
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../experiments");
    let mut seen = 0;
    for e in fs::read_dir(&root).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "json") {
            let text = fs::read_to_string(&p).unwrap();
            let v: Value = serde_json::from_str(&text).unwrap();
            if v.get("format_version").is_some() {
                pairedseg_cli::RunConfig::parse(&text, &p).unwrap();
            } else {
                pairedseg::experiments::ExperimentSpec::from_json_file(&p).unwrap();
            }
            seen += 1;
        }
    }
    assert!(seen >= 2);
}
