//! Canned end-to-end experiments with machine-readable verdicts.
//!
//! The mode comparison, the clear-split check and composition recovery all
//! read the same set of training runs, so [`run_modes`] is executed once and
//! its [`ModeMatrix`] handed to each verdict function.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{generate_benchmark, DataConfig};
use crate::error::{invalid, Error, Result};
use crate::losses::TrainMode;
use crate::metrics::Split;
use crate::rng;
use crate::segmodel::{InjectionMode, ModelConfig, SegModel};
use crate::trainer::{
    composition_errors, evaluate, gradient_experiment, prepare, train, EmbeddingConfig, GradExpConfig, GradExpReport,
    Roles, Setup, TrainConfig,
};
use crate::weathersim::{WeatherComposition, RAIN};

pub const MIN_SEEDS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub data: DataConfig,
    /// Each seed drives data generation, initialization and batch order.
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub modes: Vec<TrainMode>,
    /// Minimum mean adverse-split mIoU gap between consecutive modes.
    pub margin: f64,
    /// Allowed clear-split mIoU drop of `paired_full` against `adverse_only`.
    pub clear_tolerance: f64,
    /// Upper bound on the mean composition L1 error.
    pub l1_threshold: f64,
    pub model: ModelConfig,
    /// Template for every run; mode, seed and epochs are overridden.
    pub train: TrainConfig,
    pub embedding: EmbeddingConfig,
    pub gradexp: GradExpExperiment,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "desk".into(),
            data: DataConfig::default(),
            seeds: vec![0, 1, 2],
            epochs: 40,
            modes: TrainMode::ALL.to_vec(),
            margin: 0.005,
            clear_tolerance: 0.01,
            l1_threshold: 0.3,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            embedding: EmbeddingConfig::default(),
            gradexp: GradExpExperiment::default(),
        }
    }
}

/// Scene roles and settings of the gradient-priority experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradExpExperiment {
    /// Mode used for pretraining on the pool.
    pub mode: TrainMode,
    /// Training scenes held out of pretraining to form the seen set.
    pub seen_scenes: usize,
    pub config: GradExpConfig,
}

impl Default for GradExpExperiment {
    fn default() -> Self {
        Self {
            mode: TrainMode::Paired,
            seen_scenes: 16,
            config: GradExpConfig::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let mut distinct = self.seeds.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < MIN_SEEDS || distinct.len() != self.seeds.len() {
            return Err(invalid!("an experiment needs at least {MIN_SEEDS} distinct seeds"));
        }
        if self.epochs == 0 {
            return Err(invalid!("epochs must be at least 1"));
        }
        if self.modes.is_empty() {
            return Err(invalid!("no modes to compare"));
        }
        if self.gradexp.config.trials == 0 {
            return Err(invalid!("the gradient experiment needs at least one trial"));
        }
        Ok(())
    }

    fn setup(&self, mode: TrainMode, seed: u64, epochs: usize) -> Result<Setup> {
        let mut train = self.train.clone();
        train.mode = mode;
        train.seed = seed;
        train.epochs = epochs;
        let mut model = self.model.clone();
        model.height = self.data.height;
        model.width = self.data.width;
        model.class_count = self.data.class_count;
        Setup::new(model, train, self.embedding.clone())
    }
}

/// Outcome of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeRun {
    pub seed: u64,
    pub mode: TrainMode,
    pub adverse_miou: f64,
    pub clear_miou: f64,
    pub final_loss: f64,
    pub batch_digest: String,
}

/// Composition recovery of one `paired_full` run on the test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositionRun {
    pub seed: u64,
    pub trained_l1: f64,
    pub untrained_l1: f64,
    /// Whether rain dominates `v` for a noiseless pure-rain embedding.
    pub pure_rain_argmax: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeMatrix {
    pub runs: Vec<ModeRun>,
    pub composition: Vec<CompositionRun>,
}

impl ModeMatrix {
    fn values(&self, mode: TrainMode, f: impl Fn(&ModeRun) -> f64) -> Vec<f64> {
        self.runs.iter().filter(|r| r.mode == mode).map(f).collect()
    }
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |best, i| if v[i] > v[best] { i } else { best })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Trains every mode at every seed and evaluates it on both test splits.
pub fn run_modes(spec: &ExperimentSpec) -> Result<ModeMatrix> {
    spec.validate()?;
    let mut matrix = ModeMatrix {
        runs: Vec::new(),
        composition: Vec::new(),
    };
    for &seed in &spec.seeds {
        let bench = generate_benchmark(&spec.data, seed)?;
        for &mode in &spec.modes {
            let setup = spec.setup(mode, seed, spec.epochs)?;
            let train_set = prepare(&setup, &bench.train)?;
            let test_set = prepare(&setup, &bench.test)?;
            let out = train(&setup, &train_set, None)?;
            let adverse = evaluate(&out.model, &out.store, &setup, &test_set, Split::Adverse)?;
            let clear = evaluate(&out.model, &out.store, &setup, &test_set, Split::Clear)?;
            matrix.runs.push(ModeRun {
                seed,
                mode,
                adverse_miou: adverse.miou,
                clear_miou: clear.miou,
                final_loss: out.log.last().map_or(f64::NAN, |l| l.report.total),
                batch_digest: out.batch_digest,
            });
            if mode == TrainMode::PairedFull && setup.model.injection == InjectionMode::Clip {
                let (_, init) = SegModel::init(setup.model.clone(), rng::derive(seed, "init"))?;
                let rain = setup
                    .embedder
                    .embed_image_oracle(&WeatherComposition::pure(RAIN), 0.0, 0);
                let v = out.model.composition(&out.store, &rain, &setup.prompts)?;
                matrix.composition.push(CompositionRun {
                    seed,
                    trained_l1: mean(&composition_errors(&out.model, &out.store, &setup, &test_set)?),
                    untrained_l1: mean(&composition_errors(&out.model, &init, &setup, &test_set)?),
                    pure_rain_argmax: argmax(&setup.prompts.effect_weights(&v)?) == RAIN,
                });
            }
        }
    }
    Ok(matrix)
}

/// Machine-readable outcome of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub experiment: String,
    pub pass: bool,
    pub predicate: String,
    pub seeds: Vec<u64>,
    pub means: BTreeMap<String, f64>,
    pub per_seed: BTreeMap<String, Vec<f64>>,
    /// Reference values from the original full-scale study, for context only.
    pub reference: BTreeMap<String, f64>,
}

impl Verdict {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("verdicts always serialize")
    }

    pub fn line(&self) -> String {
        let means: Vec<String> = self.means.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
        format!(
            "{} {}: {} [{}]",
            if self.pass { "PASS" } else { "FAIL" },
            self.experiment,
            self.predicate,
            means.join(", ")
        )
    }
}

fn require_modes(m: &ModeMatrix, spec: &ExperimentSpec, modes: &[TrainMode]) -> Result<()> {
    for &mode in modes {
        if m.values(mode, |r| r.adverse_miou).len() != spec.seeds.len() {
            return Err(invalid!("missing {} runs for every seed", mode.name()));
        }
    }
    // runs compared at one seed must have consumed the same batches
    for &seed in &spec.seeds {
        let mut digests = m.runs.iter().filter(|r| r.seed == seed).map(|r| &r.batch_digest);
        if let Some(first) = digests.next() {
            if digests.any(|d| d != first) {
                return Err(invalid!("runs at seed {seed} consumed different batch orders"));
            }
        }
    }
    Ok(())
}

fn mode_tables(
    m: &ModeMatrix,
    modes: &[TrainMode],
    f: impl Fn(&ModeRun) -> f64 + Copy,
) -> (BTreeMap<String, f64>, BTreeMap<String, Vec<f64>>) {
    let per_seed: BTreeMap<String, Vec<f64>> = modes.iter().map(|&md| (md.name().to_string(), m.values(md, f))).collect();
    let means = per_seed.iter().map(|(k, v)| (k.clone(), mean(v))).collect();
    (means, per_seed)
}

/// Adverse-split ordering `adverse_only < paired < paired_full`, each mean
/// gap at least `spec.margin`.
pub fn exp_paired_vs_adverse(spec: &ExperimentSpec, m: &ModeMatrix) -> Result<Verdict> {
    let modes = TrainMode::ALL;
    require_modes(m, spec, &modes)?;
    let (means, per_seed) = mode_tables(m, &modes, |r| r.adverse_miou);
    let [a, p, f] = modes.map(|md| means[md.name()]);
    Ok(Verdict {
        experiment: "paired_vs_adverse".into(),
        pass: p - a >= spec.margin && f - p >= spec.margin,
        predicate: format!(
            "adverse mIoU adverse_only < paired < paired_full, gaps >= {}",
            spec.margin
        ),
        seeds: spec.seeds.clone(),
        means,
        per_seed,
        reference: BTreeMap::from([
            ("adverse_only".into(), 43.32),
            ("paired".into(), 45.24),
            ("paired_full".into(), 51.31),
        ]),
    })
}

/// Clear-split mIoU of `paired_full` no worse than `adverse_only` minus the
/// tolerance.
pub fn exp_clear_non_regression(spec: &ExperimentSpec, m: &ModeMatrix) -> Result<Verdict> {
    let modes = [TrainMode::AdverseOnly, TrainMode::PairedFull];
    require_modes(m, spec, &modes)?;
    let (means, per_seed) = mode_tables(m, &modes, |r| r.clear_miou);
    let (a, f) = (means["adverse_only"], means["paired_full"]);
    Ok(Verdict {
        experiment: "clear_non_regression".into(),
        pass: f >= a - spec.clear_tolerance,
        predicate: format!("clear mIoU paired_full >= adverse_only - {}", spec.clear_tolerance),
        seeds: spec.seeds.clone(),
        means,
        per_seed,
        reference: BTreeMap::from([("adverse_only".into(), 52.96), ("paired_full".into(), 55.04)]),
    })
}

/// Mean composition L1 error below the threshold and below the untrained model.
pub fn exp_composition_recovery(spec: &ExperimentSpec, m: &ModeMatrix) -> Result<Verdict> {
    if m.composition.len() != spec.seeds.len() {
        return Err(invalid!("composition recovery needs a clip-injected paired_full run per seed"));
    }
    let trained: Vec<f64> = m.composition.iter().map(|c| c.trained_l1).collect();
    let untrained: Vec<f64> = m.composition.iter().map(|c| c.untrained_l1).collect();
    let rain: Vec<f64> = m.composition.iter().map(|c| f64::from(u8::from(c.pure_rain_argmax))).collect();
    let (t, u) = (mean(&trained), mean(&untrained));
    Ok(Verdict {
        experiment: "composition_recovery".into(),
        pass: t < spec.l1_threshold && t < u,
        predicate: format!("mean L1(v, v_true) < {} and < untrained", spec.l1_threshold),
        seeds: spec.seeds.clone(),
        means: BTreeMap::from([
            ("trained_l1".into(), t),
            ("untrained_l1".into(), u),
            ("pure_rain_argmax".into(), mean(&rain)),
        ]),
        per_seed: BTreeMap::from([
            ("trained_l1".into(), trained),
            ("untrained_l1".into(), untrained),
            ("pure_rain_argmax".into(), rain),
        ]),
        reference: BTreeMap::new(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientPriority {
    pub standard: GradExpReport,
    pub swapped: GradExpReport,
    pub verdict: Verdict,
}

/// Runs the gradient experiment at the first seed, plus the role-swapped
/// control. The verdict is on the standard roles: `mean_gc > mean_gd`.
///
/// Scene roles: the last `seen_scenes` training scenes form the seen set,
/// the remaining training scenes the pretraining pool, and the test scenes
/// the novel set.
pub fn exp_gradient_priority(spec: &ExperimentSpec) -> Result<GradientPriority> {
    spec.validate()?;
    let seed = spec.seeds[0];
    let ge = &spec.gradexp;
    let bench = generate_benchmark(&spec.data, seed)?;
    let setup = spec.setup(ge.mode, seed, ge.config.pretrain_epochs.max(1))?;
    let train_set = prepare(&setup, &bench.train)?;
    if ge.seen_scenes >= train_set.len() {
        return Err(invalid!(
            "{} seen scenes leave no pretraining pool out of {}",
            ge.seen_scenes,
            train_set.len()
        ));
    }
    let (pool, seen) = train_set.split_at(train_set.len() - ge.seen_scenes);
    let novel = prepare(&setup, &bench.test)?;
    let run = |roles| {
        let cfg = GradExpConfig {
            roles,
            ..ge.config.clone()
        };
        gradient_experiment(&setup, pool, seen, &novel, &cfg)
    };
    let standard = run(Roles::Standard)?;
    let swapped = run(Roles::Swapped)?;
    let verdict = Verdict {
        experiment: "gradient_priority".into(),
        pass: standard.mean_gc > standard.mean_gd,
        predicate: format!("mean ||G_c|| > mean ||G_d|| over {} trials", standard.trials),
        seeds: vec![seed],
        means: BTreeMap::from([
            ("mean_gd".into(), standard.mean_gd),
            ("mean_gc".into(), standard.mean_gc),
            ("swapped_mean_gd".into(), swapped.mean_gd),
            ("swapped_mean_gc".into(), swapped.mean_gc),
        ]),
        per_seed: BTreeMap::from([("gd".into(), standard.gd.clone()), ("gc".into(), standard.gc.clone())]),
        reference: BTreeMap::from([
            ("mean_gd".into(), standard.reference.mean_gd),
            ("mean_gc".into(), standard.reference.mean_gc),
        ]),
    };
    Ok(GradientPriority {
        standard,
        swapped,
        verdict,
    })
}
