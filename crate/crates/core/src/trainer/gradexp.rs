use std::collections::HashSet;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use tapegrad::{Adam, Graph, ParamStore};

use super::{batch_ce, grad_norm, train, Setup, TrainSample};
use crate::error::{invalid, Result};
use crate::rng;
use crate::segmodel::SegModel;

/// Qualitative reference means, recorded next to results but never expected.
pub const REFERENCE_GD: f64 = 40.26;
pub const REFERENCE_GC: f64 = 58.21;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Roles {
    /// `G_d` on adverse versions of the fine-tuned scenes, `G_c` on clear
    /// novel scenes.
    Standard,
    /// Control: `G_d` on adverse novel scenes, `G_c` on the clear
    /// fine-tuned scenes.
    Swapped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradExpConfig {
    pub trials: usize,
    /// Scenes fine-tuned on (and measured) per trial.
    pub subset: usize,
    /// Optimizer steps of brief clear-image training per trial.
    pub steps: usize,
    pub lr: f64,
    /// Epochs of ordinary training on the pool before the trials.
    pub pretrain_epochs: usize,
    pub roles: Roles,
    pub seed: u64,
}

impl Default for GradExpConfig {
    fn default() -> Self {
        Self {
            trials: 20,
            subset: 2,
            steps: 10,
            lr: 1e-3,
            pretrain_epochs: 10,
            roles: Roles::Standard,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMeans {
    pub mean_gd: f64,
    pub mean_gc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradExpReport {
    pub trials: usize,
    pub roles: Roles,
    pub mean_gd: f64,
    pub mean_gc: f64,
    pub gd: Vec<f64>,
    pub gc: Vec<f64>,
    pub reference: ReferenceMeans,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Measures how strongly the model wants to update on adverse versions of
/// scenes it was just trained on versus clear scenes it has never seen.
///
/// The model is first trained on `pool` for `pretrain_epochs`. Each trial
/// then copies it, takes `steps` Adam steps on the clear images of a seeded
/// subset of `scenes_a`, and records gradient norms of the mean
/// cross-entropy on the two probe sets.
pub fn gradient_experiment(
    setup: &Setup,
    pool: &[TrainSample],
    scenes_a: &[TrainSample],
    scenes_b: &[TrainSample],
    cfg: &GradExpConfig,
) -> Result<GradExpReport> {
    if cfg.trials == 0 {
        return Err(invalid!("the gradient experiment needs at least one trial"));
    }
    let ids_a: HashSet<u64> = scenes_a.iter().map(|s| s.id).collect();
    if let Some(s) = scenes_b.iter().find(|s| ids_a.contains(&s.id)) {
        return Err(invalid!("scene {} appears in both the seen and the novel set", s.id));
    }
    if cfg.subset == 0 || scenes_a.len() < cfg.subset || scenes_b.len() < cfg.subset {
        return Err(invalid!(
            "each scene set needs at least {} scenes (have {} and {})",
            cfg.subset.max(1),
            scenes_a.len(),
            scenes_b.len()
        ));
    }
    let (model, base) = if pool.is_empty() || cfg.pretrain_epochs == 0 {
        SegModel::init(setup.model.clone(), rng::derive(setup.train.seed, "init"))?
    } else {
        let mut pre = setup.clone();
        pre.train.epochs = cfg.pretrain_epochs;
        let out = train(&pre, pool, None)?;
        (out.model, out.store)
    };
    let adam = Adam::default();
    let (mut gd, mut gc) = (Vec::with_capacity(cfg.trials), Vec::with_capacity(cfg.trials));
    for t in 0..cfg.trials {
        let mut r = rng::stream(cfg.seed, &format!("gradexp/trial/{t}"));
        let seen: Vec<&TrainSample> = sample(&mut r, scenes_a.len(), cfg.subset)
            .into_iter()
            .map(|i| &scenes_a[i])
            .collect();
        let novel: Vec<&TrainSample> = sample(&mut r, scenes_b.len(), cfg.subset)
            .into_iter()
            .map(|i| &scenes_b[i])
            .collect();
        let mut store: ParamStore = base.clone();
        for _ in 0..cfg.steps {
            let mut g = Graph::new();
            let loss = batch_ce(&mut g, &model, &store, setup, &seen, true)?;
            let grads = g.backward(loss)?;
            store.accumulate(&grads);
            adam.step(&mut store, cfg.lr)?;
        }
        let (d_set, c_set) = match cfg.roles {
            Roles::Standard => (&seen, &novel),
            Roles::Swapped => (&novel, &seen),
        };
        gd.push(grad_norm(&store, |g, s| batch_ce(g, &model, s, setup, d_set, false))?);
        gc.push(grad_norm(&store, |g, s| batch_ce(g, &model, s, setup, c_set, true))?);
    }
    Ok(GradExpReport {
        trials: cfg.trials,
        roles: cfg.roles,
        mean_gd: mean(&gd),
        mean_gc: mean(&gc),
        gd,
        gc,
        reference: ReferenceMeans {
            mean_gd: REFERENCE_GD,
            mean_gc: REFERENCE_GC,
        },
    })
}
