use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use pairedseg::dataset::{load_split, prepare_out_dir, write_dataset, DataSplit, Manifest};
use pairedseg::experiments::{
    exp_clear_non_regression, exp_composition_recovery, exp_gradient_priority, exp_paired_vs_adverse, run_modes,
    ExperimentSpec,
};
use pairedseg::losses::{LossSchedule, ScheduleKind, TrainMode};
use pairedseg::metrics::Split;
use pairedseg::segmodel::{InjectionMode, SegModel};
use pairedseg::trainer::{
    self, evaluate_with, gradient_experiment, log_csv, prepare, GradExpConfig, ModelPredictor, OraclePredictor,
    PromptChoice, Roles, Setup,
};
use pairedseg::tapegrad::checkpoint;

use crate::{CliError, Global, Result, RunConfig};

pub const RUN_SUMMARY: &str = "run.json";
pub const MODEL_FILE: &str = "model.ckpt";

fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Output directory of one command; records a digest of every file written.
struct Outputs {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl Outputs {
    fn create(global: &Global, cfg: &RunConfig) -> Result<Self> {
        let dir = global
            .out
            .clone()
            .or_else(|| cfg.out.clone())
            .ok_or_else(|| CliError::Usage("no output directory: pass --out or set `out` in the config".into()))?;
        prepare_out_dir(&dir, global.force)?;
        Ok(Self {
            dir,
            files: BTreeMap::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        self.files.insert(name.to_string(), sha256(bytes));
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(pairedseg::Error::from)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes `run.json` and returns the output directory.
    fn finish(mut self, command: &str, cfg: &RunConfig, result: Value) -> Result<PathBuf> {
        let summary = json!({
            "command": command,
            "format_version": cfg.format_version,
            "seed": cfg.train.seed,
            "config_hash": cfg.hash(),
            "config": cfg,
            "outputs": self.files,
            "result": result,
        });
        self.files.clear();
        self.write_json(RUN_SUMMARY, &summary)?;
        Ok(self.dir)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads the config and applies `--seed`.
pub fn resolve_config(global: &Global) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(global.config.as_deref())?;
    if let Some(seed) = global.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

pub fn parse_mode(s: &str) -> Result<TrainMode> {
    s.parse().map_err(|_| {
        CliError::Usage(format!(
            "unknown mode `{s}` (expected adverse_only, paired or paired_full)"
        ))
    })
}

pub fn parse_split(s: &str) -> Result<DataSplit> {
    s.parse()
        .map_err(|_| CliError::Usage(format!("unknown split `{s}` (expected train or test)")))
}

fn setup(cfg: &RunConfig) -> Result<Setup> {
    Ok(Setup::new(cfg.model.clone(), cfg.train.clone(), cfg.embedding.clone())?)
}

/// Writes `count` paired samples and a manifest.
pub fn gen_data(global: &Global, count: Option<usize>) -> Result<PathBuf> {
    let cfg = resolve_config(global)?;
    let count = count.unwrap_or(cfg.data.train_pairs + cfg.data.test_pairs);
    if count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let mut out = Outputs::create(global, &cfg)?;
    let manifest = write_dataset(&out.dir, &cfg.data, cfg.train.seed, count, &cfg.hash())?;
    let text = fs::read(out.dir.join(pairedseg::dataset::MANIFEST)).map_err(|e| io_err(&out.dir, e))?;
    out.files.insert(pairedseg::dataset::MANIFEST.into(), sha256(&text));
    let result = json!({
        "count": count,
        "train": manifest.ids(DataSplit::Train).len(),
        "test": manifest.ids(DataSplit::Test).len(),
    });
    out.finish("gen-data", &cfg, result)
}

fn manifest_hash(data: &Path) -> Result<String> {
    let path = data.join(pairedseg::dataset::MANIFEST);
    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
    // parse to validate before trusting the digest
    Manifest::read(data)?;
    Ok(sha256(&bytes))
}

/// Trains on the train split of `data`.
pub fn train(global: &Global, data: &Path, mode: Option<TrainMode>) -> Result<PathBuf> {
    let mut cfg = resolve_config(global)?;
    if let Some(m) = mode {
        cfg.train.mode = m;
    }
    let data_hash = manifest_hash(data)?;
    let setup = setup(&cfg)?;
    let samples = prepare(&setup, &load_split(data, DataSplit::Train)?)?;
    let mut out = Outputs::create(global, &cfg)?;
    let ckpt_dir = out.dir.join("checkpoints");
    let outcome = trainer::train(&setup, &samples, Some(&ckpt_dir))?;
    if cfg.train.checkpoint_every > 0 {
        for e in (1..=cfg.train.epochs).filter(|e| e % cfg.train.checkpoint_every == 0) {
            let name = format!("checkpoints/epoch_{e:04}.ckpt");
            let bytes = fs::read(out.dir.join(&name)).map_err(|err| io_err(&out.dir.join(&name), err))?;
            out.files.insert(name, sha256(&bytes));
        }
    }
    out.write(MODEL_FILE, &checkpoint::encode(outcome.store.named_values()))?;
    out.write("log.csv", log_csv(&outcome.log).as_bytes())?;
    let last = outcome.log.last().expect("at least one epoch").report;
    let result = json!({
        "mode": cfg.train.mode,
        "injection": setup.model.injection,
        "epochs": cfg.train.epochs,
        "train_samples": samples.len(),
        "data_manifest": data_hash,
        "batch_digest": outcome.batch_digest,
        "final": last,
    });
    out.finish("train", &cfg, result)
}

/// Condition evaluated by `eval`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Condition {
    Clear,
    Degraded,
}

pub struct EvalArgs<'a> {
    pub checkpoint: Option<&'a Path>,
    pub data: &'a Path,
    pub split: DataSplit,
    pub condition: Condition,
    /// Score the ground-truth predictor instead of a model.
    pub oracle: bool,
}

/// Config for `eval`: `--config` if given, else the `run.json` written by
/// `train` next to the checkpoint, else the defaults.
fn eval_config(global: &Global, checkpoint: Option<&Path>) -> Result<RunConfig> {
    if global.config.is_some() {
        return resolve_config(global);
    }
    let sibling = checkpoint.and_then(Path::parent).map(|d| d.join(RUN_SUMMARY));
    match sibling {
        Some(path) if path.exists() => {
            let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            let v: Value = serde_json::from_str(&text).map_err(|e| CliError::Config {
                path: path.clone(),
                msg: e.to_string(),
            })?;
            let inner = v.get("config").ok_or_else(|| CliError::Config {
                path: path.clone(),
                msg: "no `config` entry".into(),
            })?;
            let mut cfg = RunConfig::parse(&inner.to_string(), &path)?;
            if let Some(seed) = global.seed {
                cfg.train.seed = seed;
            }
            Ok(cfg)
        }
        _ => resolve_config(global),
    }
}

pub fn eval(global: &Global, args: &EvalArgs) -> Result<PathBuf> {
    let cfg = eval_config(global, args.checkpoint)?;
    let setup = setup(&cfg)?;
    let samples = prepare(&setup, &load_split(args.data, args.split)?)?;
    let split = match args.condition {
        Condition::Clear => Split::Clear,
        Condition::Degraded => Split::Adverse,
    };
    let class_count = cfg.model.class_count;
    let exclude = cfg.eval.exclude_background.then_some(0);
    let report = if args.oracle {
        evaluate_with(&OraclePredictor, &samples, split, class_count, exclude)?
    } else {
        let path = args
            .checkpoint
            .ok_or_else(|| CliError::Usage("--checkpoint is required unless --oracle is set".into()))?;
        let (model, mut store) = SegModel::init(setup.model.clone(), 0)?;
        checkpoint::load_into(path, &mut store).map_err(pairedseg::Error::from)?;
        let p = ModelPredictor {
            model: &model,
            store: &store,
            setup: &setup,
        };
        evaluate_with(&p, &samples, split, class_count, exclude)?
    };
    let mut out = Outputs::create(global, &cfg)?;
    out.write_json("eval.json", &report)?;
    out.write("eval.txt", report.table().as_bytes())?;
    let result = json!({
        "split": args.split.name(),
        "condition": split.name(),
        "oracle": args.oracle,
        "samples": samples.len(),
        "miou": report.miou,
        "data_manifest": manifest_hash(args.data)?,
    });
    out.finish("eval", &cfg, result)
}

pub struct GradExpArgs<'a> {
    pub data: &'a Path,
    pub trials: Option<usize>,
    /// Split supplying the novel scenes.
    pub novel: DataSplit,
    pub swapped: bool,
}

/// Gradient-priority experiment on a generated dataset.
///
/// The last `seen_scenes` training scenes are the seen set, the other
/// training scenes the pretraining pool, and `--novel` names the split
/// holding the novel scenes.
pub fn grad_exp(global: &Global, args: &GradExpArgs) -> Result<PathBuf> {
    let mut cfg = resolve_config(global)?;
    if let Some(t) = args.trials {
        cfg.gradexp.config.trials = t;
    }
    if args.swapped {
        cfg.gradexp.config.roles = Roles::Swapped;
    }
    cfg.train.mode = cfg.gradexp.mode;
    cfg.train.epochs = cfg.gradexp.config.pretrain_epochs.max(1);
    let setup = setup(&cfg)?;
    let train_set = prepare(&setup, &load_split(args.data, DataSplit::Train)?)?;
    let seen_count = cfg.gradexp.seen_scenes;
    if seen_count >= train_set.len() {
        return Err(CliError::Usage(format!(
            "{seen_count} seen scenes leave no pretraining pool out of {} training scenes",
            train_set.len()
        )));
    }
    let (pool, seen) = train_set.split_at(train_set.len() - seen_count);
    let novel = match args.novel {
        DataSplit::Train => train_set.clone(),
        DataSplit::Test => prepare(&setup, &load_split(args.data, DataSplit::Test)?)?,
    };
    let gcfg = GradExpConfig {
        seed: cfg.train.seed,
        ..cfg.gradexp.config.clone()
    };
    let report = gradient_experiment(&setup, pool, seen, &novel, &gcfg)?;
    let mut out = Outputs::create(global, &cfg)?;
    out.write_json("gradexp.json", &report)?;
    let result = json!({
        "trials": report.trials,
        "mean_gd": report.mean_gd,
        "mean_gc": report.mean_gc,
        "data_manifest": manifest_hash(args.data)?,
    });
    out.finish("grad-exp", &cfg, result)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    SchedulerFcl,
    SchedulerOcl,
    ClipVariant,
}

impl Axis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "scheduler_fcl" => Ok(Axis::SchedulerFcl),
            "scheduler_ocl" => Ok(Axis::SchedulerOcl),
            "clip_variant" => Ok(Axis::ClipVariant),
            _ => Err(CliError::Usage(format!(
                "unknown axis `{s}` (expected scheduler_fcl, scheduler_ocl or clip_variant)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::SchedulerFcl => "scheduler_fcl",
            Axis::SchedulerOcl => "scheduler_ocl",
            Axis::ClipVariant => "clip_variant",
        }
    }

    /// Variant names and the config each one trains with. Only the axis
    /// setting differs between variants.
    pub fn variants(self, base: &RunConfig) -> Vec<(String, RunConfig)> {
        let mut base = base.clone();
        base.train.mode = TrainMode::PairedFull;
        let epochs = base.train.epochs;
        match self {
            Axis::SchedulerFcl | Axis::SchedulerOcl => ScheduleKind::ALL
                .iter()
                .map(|&kind| {
                    let mut c = base.clone();
                    if self == Axis::SchedulerFcl {
                        c.train.fcl = Some(LossSchedule::for_epochs(kind, c.train.lambda_f, epochs));
                    } else {
                        c.train.ocl = Some(LossSchedule::for_epochs(kind, c.train.lambda_o, epochs));
                    }
                    (kind.name().to_string(), c)
                })
                .collect(),
            Axis::ClipVariant => [
                ("4CLIP", PromptChoice::Default4, InjectionMode::Clip),
                ("13CLIP", PromptChoice::Default13, InjectionMode::Clip),
                ("MultiCLIP", PromptChoice::Default13, InjectionMode::Multiclip),
            ]
            .into_iter()
            .map(|(name, prompts, injection)| {
                let mut c = base.clone();
                c.embedding.prompts = prompts;
                c.train.injection = Some(injection);
                (name.to_string(), c)
            })
            .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub rank: usize,
    pub variant: String,
    pub miou: f64,
    pub seed: u64,
    pub epochs: usize,
}

/// Trains one run per variant on `axis` and ranks them by adverse test mIoU.
pub fn ablate(global: &Global, data: &Path, axis: Axis) -> Result<PathBuf> {
    let cfg = resolve_config(global)?;
    let train_raw = load_split(data, DataSplit::Train)?;
    let test_raw = load_split(data, DataSplit::Test)?;
    let mut rows = Vec::new();
    for (variant, vcfg) in axis.variants(&cfg) {
        let setup = setup(&vcfg)?;
        let outcome = trainer::train(&setup, &prepare(&setup, &train_raw)?, None)?;
        let test = prepare(&setup, &test_raw)?;
        let p = ModelPredictor {
            model: &outcome.model,
            store: &outcome.store,
            setup: &setup,
        };
        let exclude = vcfg.eval.exclude_background.then_some(0);
        let report = evaluate_with(&p, &test, Split::Adverse, vcfg.model.class_count, exclude)?;
        rows.push(AblationRow {
            rank: 0,
            variant,
            miou: report.miou,
            seed: vcfg.train.seed,
            epochs: vcfg.train.epochs,
        });
    }
    // stable sort keeps declaration order on ties
    rows.sort_by(|a, b| b.miou.total_cmp(&a.miou));
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    let mut table = format!("{:<5} {:<10} {:>8}\n", "rank", "variant", "mIoU");
    for r in &rows {
        let _ = writeln!(table, "{:<5} {:<10} {:>8.2}", r.rank, r.variant, 100.0 * r.miou);
    }
    let mut out = Outputs::create(global, &cfg)?;
    out.write_json("ablate.json", &json!({ "axis": axis.name(), "rows": rows }))?;
    out.write("ablate.txt", table.as_bytes())?;
    let result = json!({
        "axis": axis.name(),
        "best": rows[0].variant,
        "data_manifest": manifest_hash(data)?,
    });
    out.finish("ablate", &cfg, result)
}

/// Experiments runnable through [`experiment`].
pub const EXPERIMENTS: [&str; 4] = [
    "paired_vs_adverse",
    "clear_non_regression",
    "composition_recovery",
    "gradient_priority",
];

/// Runs canned experiments from a spec file and writes one verdict JSON
/// per experiment. Returns the output directory and whether all passed.
pub fn experiment(global: &Global, spec_path: &Path, only: &[String]) -> Result<(PathBuf, bool)> {
    let spec = ExperimentSpec::from_json_file(spec_path)?;
    if let Some(bad) = only.iter().find(|n| !EXPERIMENTS.contains(&n.as_str())) {
        return Err(CliError::Usage(format!("unknown experiment `{bad}`")));
    }
    let wanted = |n: &str| only.is_empty() || only.iter().any(|o| o == n);
    let cfg = RunConfig::default();
    let mut out = Outputs::create(global, &cfg)?;
    let mut verdicts = Vec::new();
    if EXPERIMENTS[..3].iter().any(|n| wanted(n)) {
        let matrix = run_modes(&spec)?;
        out.write_json("modes.json", &matrix)?;
        if wanted("paired_vs_adverse") {
            verdicts.push(exp_paired_vs_adverse(&spec, &matrix)?);
        }
        if wanted("clear_non_regression") {
            verdicts.push(exp_clear_non_regression(&spec, &matrix)?);
        }
        if wanted("composition_recovery") {
            verdicts.push(exp_composition_recovery(&spec, &matrix)?);
        }
    }
    if wanted("gradient_priority") {
        let g = exp_gradient_priority(&spec)?;
        out.write_json("gradexp.json", &g.standard)?;
        out.write_json("gradexp_swapped.json", &g.swapped)?;
        verdicts.push(g.verdict);
    }
    for v in &verdicts {
        out.write_json(&format!("verdict_{}.json", v.experiment), v)?;
    }
    let all = verdicts.iter().all(|v| v.pass);
    let result = json!({
        "spec": spec,
        "verdicts": verdicts.iter().map(|v| (v.experiment.clone(), v.pass)).collect::<BTreeMap<_, _>>(),
    });
    Ok((out.finish("experiment", &cfg, result)?, all))
}

/// One human-readable line per verdict file in `dir`.
pub fn verdict_lines(dir: &Path) -> Result<Vec<String>> {
    let mut lines = Vec::new();
    for name in EXPERIMENTS {
        let path = dir.join(format!("verdict_{name}.json"));
        if let Ok(text) = fs::read_to_string(&path) {
            let v: pairedseg::experiments::Verdict = serde_json::from_str(&text).map_err(|e| CliError::Config {
                path: path.clone(),
                msg: e.to_string(),
            })?;
            lines.push(v.line());
        }
    }
    Ok(lines)
}
