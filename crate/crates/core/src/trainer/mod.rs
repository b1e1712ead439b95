//! Paired training, evaluation and the gradient-norm experiment.

mod config;
mod eval;
mod gradexp;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};
use tapegrad::{checkpoint, Adam, Graph, ParamStore, Tensor, Var};

use crate::error::{invalid, Error, Result};
use crate::image::LabelMap;
use crate::losses::{alignment, total_loss, Branch, LossReport};
use crate::rng;
use crate::segmodel::{Conditioning, SegModel};
use crate::weathersim::{PairedSample, WeatherComposition};

pub use config::{EmbeddingConfig, PromptChoice, Provider, Setup, TrainConfig};
pub use eval::{composition_errors, evaluate, evaluate_with, ModelPredictor, OraclePredictor, Predictor};
pub use gradexp::{gradient_experiment, GradExpConfig, GradExpReport, Roles, REFERENCE_GC, REFERENCE_GD};

/// A paired sample prepared for the network: CHW tensors plus the image
/// embeddings of both branches.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub id: u64,
    pub clear: Tensor,
    pub adverse: Tensor,
    pub labels: LabelMap,
    pub composition: WeatherComposition,
    pub emb_clear: Vec<f64>,
    pub emb_adverse: Vec<f64>,
}

impl TrainSample {
    pub fn image(&self, clear: bool) -> &Tensor {
        if clear {
            &self.clear
        } else {
            &self.adverse
        }
    }

    pub fn embedding(&self, clear: bool) -> &[f64] {
        if clear {
            &self.emb_clear
        } else {
            &self.emb_adverse
        }
    }
}

/// Converts generated samples, computing image embeddings per `setup`.
pub fn prepare(setup: &Setup, samples: &[(u64, PairedSample)]) -> Result<Vec<TrainSample>> {
    let e = &setup.embedder;
    let noise = setup.embedding.noise;
    samples
        .iter()
        .map(|(id, s)| {
            let (emb_clear, emb_adverse) = match setup.embedding.provider {
                Provider::Oracle => (
                    e.embed_image_oracle(&WeatherComposition::clear(), noise, rng::derive(*id, "clear")),
                    e.embed_image_oracle(&s.composition, noise, rng::derive(*id, "adverse")),
                ),
                Provider::Pixels => (e.embed_image_pixels(s.clear())?, e.embed_image_pixels(&s.adverse)?),
            };
            Ok(TrainSample {
                id: *id,
                clear: s.clear().to_chw(),
                adverse: s.adverse.to_chw(),
                labels: s.labels().clone(),
                composition: s.composition,
                emb_clear,
                emb_adverse,
            })
        })
        .collect()
}

/// Loss values for one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub report: LossReport,
}

pub const LOG_HEADER: &str = "epoch,ce_adverse,ce_clear,fcl,ocl,lambda_f,lambda_o,total";

/// CSV training log; absent terms are empty fields.
pub fn log_csv(log: &[EpochLog]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = format!("{LOG_HEADER}\n");
    for e in log {
        let r = &e.report;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            e.epoch,
            r.ce_adverse,
            opt(r.ce_clear),
            opt(r.fcl),
            opt(r.ocl),
            r.lambda_f,
            r.lambda_o,
            r.total
        );
    }
    out
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: SegModel,
    pub store: ParamStore,
    pub log: Vec<EpochLog>,
    /// SHA-256 of the sample order consumed, epoch by epoch.
    pub batch_digest: String,
}

/// Per-epoch visiting order of `n` samples; depends only on the seed.
pub fn epoch_orders(seed: u64, n: usize, epochs: usize) -> Vec<Vec<usize>> {
    let mut r = rng::stream(seed, "batch-order");
    let mut order: Vec<usize> = (0..n).collect();
    (0..epochs)
        .map(|_| {
            order.shuffle(&mut r);
            order.clone()
        })
        .collect()
}

/// Forward pass of one branch with its conditioning.
pub(crate) fn branch_forward(
    g: &mut Graph,
    model: &SegModel,
    store: &ParamStore,
    setup: &Setup,
    image: &Tensor,
    embedding: &[f64],
) -> Result<(Branch, Option<Conditioning>)> {
    let cond = model.condition(g, store, embedding, &setup.prompts)?;
    let x = g.constant(image.clone());
    let out = model.forward(g, store, x, cond.as_ref())?;
    Ok((
        Branch {
            logits: out.logits,
            features: out.features(),
        },
        cond,
    ))
}

/// Training objective of one sample: the mode's loss plus the alignment
/// term on every branch that computed composition weights.
pub(crate) fn sample_objective(
    g: &mut Graph,
    model: &SegModel,
    store: &ParamStore,
    setup: &Setup,
    sample: &TrainSample,
    lambda_f: f64,
    lambda_o: f64,
) -> Result<(Var, LossReport)> {
    let mode = setup.train.mode;
    let (adverse, cond_d) = branch_forward(g, model, store, setup, &sample.adverse, &sample.emb_adverse)?;
    let (clear, cond_c) = if mode.uses_clear() {
        let (b, c) = branch_forward(g, model, store, setup, &sample.clear, &sample.emb_clear)?;
        (Some(b), c)
    } else {
        (None, None)
    };
    let (mut objective, mut report) = total_loss(
        g,
        mode,
        adverse,
        clear,
        &sample.labels,
        lambda_f,
        lambda_o,
        setup.train.ocl_target,
    )?;
    let weight = setup.train.align_weight;
    let mut align = None;
    for cond in [cond_d, cond_c].into_iter().flatten() {
        if let Some(w_bar) = cond.w_bar {
            let a = alignment(g, w_bar, cond.i_clip)?;
            *align.get_or_insert(0.0) += g.value(a).item();
            if weight > 0.0 {
                let t = g.scale(a, weight);
                objective = g.add(objective, t)?;
            }
        }
    }
    report.align = align;
    Ok((objective, report))
}

fn check_data(setup: &Setup, data: &[TrainSample]) -> Result<()> {
    if data.is_empty() {
        return Err(invalid!("training set is empty"));
    }
    let expect = [3, setup.model.height, setup.model.width];
    for s in data {
        for img in [&s.clear, &s.adverse] {
            if img.shape() != expect {
                return Err(invalid!(
                    "scene {} has shape {:?}, the model expects {expect:?}",
                    s.id,
                    img.shape()
                ));
            }
        }
        if let Some(&l) = s.labels.data().iter().find(|&&l| usize::from(l) >= setup.model.class_count) {
            return Err(invalid!(
                "scene {} has label {l}, the model has {} classes",
                s.id,
                setup.model.class_count
            ));
        }
    }
    Ok(())
}

/// One optimizer step on `batch`, averaging the objective over samples.
pub(crate) fn train_step(
    model: &SegModel,
    store: &mut ParamStore,
    setup: &Setup,
    batch: &[&TrainSample],
    lambda_f: f64,
    lambda_o: f64,
    lr: f64,
) -> Result<Vec<LossReport>> {
    let mut g = Graph::new();
    let mut objective = None;
    let mut reports = Vec::with_capacity(batch.len());
    for s in batch {
        let (o, r) = sample_objective(&mut g, model, store, setup, s, lambda_f, lambda_o)?;
        objective = Some(match objective {
            None => o,
            Some(acc) => g.add(acc, o)?,
        });
        reports.push(r);
    }
    let objective = objective.ok_or_else(|| invalid!("empty batch"))?;
    let objective = g.scale(objective, 1.0 / batch.len() as f64);
    let grads = g.backward(objective)?;
    store.accumulate(&grads);
    Adam::default().step(store, lr)?;
    Ok(reports)
}

/// Trains a fresh model on `data`.
///
/// Batches are drawn from a seeded shuffle each epoch, so the run is a pure
/// function of `(setup, data)`. With `checkpoint_dir` set and a nonzero
/// cadence, `epoch_NNNN.ckpt` files are written as training proceeds.
pub fn train(setup: &Setup, data: &[TrainSample], checkpoint_dir: Option<&Path>) -> Result<TrainOutcome> {
    check_data(setup, data)?;
    let cfg = &setup.train;
    let (model, mut store) = SegModel::init(setup.model.clone(), rng::derive(cfg.seed, "init"))?;
    let (fcl_s, ocl_s) = (cfg.fcl_schedule(), cfg.ocl_schedule());
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut digest = Sha256::new();
    for (epoch, order) in epoch_orders(cfg.seed, data.len(), cfg.epochs).into_iter().enumerate() {
        let (lf, lo) = (fcl_s.weight_at(epoch as f64), ocl_s.weight_at(epoch as f64));
        for &i in &order {
            digest.update(data[i].id.to_le_bytes());
        }
        let mut reports = Vec::with_capacity(data.len());
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &data[i]).collect();
            reports.extend(train_step(&model, &mut store, setup, &batch, lf, lo, cfg.lr)?);
        }
        let mut report = LossReport::mean(&reports).expect("nonempty epoch");
        report.lambda_f = lf;
        report.lambda_o = lo;
        report.total = report.decomposed_total();
        log.push(EpochLog { epoch, report });
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                checkpoint::save(dir.join(format!("epoch_{:04}.ckpt", epoch + 1)), &store)?;
            }
        }
    }
    Ok(TrainOutcome {
        model,
        store,
        log,
        batch_digest: hex::encode(digest.finalize()),
    })
}

/// `‖∇θ loss‖₂` over every parameter the loss reaches; `store` is untouched.
pub fn grad_norm<F>(store: &ParamStore, loss_fn: F) -> Result<f64>
where
    F: FnOnce(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, store)?;
    let grads = g.backward(loss)?;
    let sq: f64 = grads
        .param_grads()
        .filter_map(|(_, grad)| grad)
        .flat_map(|grad| grad.iter())
        .map(|v| v * v)
        .sum();
    Ok(sq.sqrt())
}

/// Mean segmentation cross-entropy over the chosen branch of `samples`.
pub fn batch_ce(
    g: &mut Graph,
    model: &SegModel,
    store: &ParamStore,
    setup: &Setup,
    samples: &[&TrainSample],
    clear: bool,
) -> Result<Var> {
    let mut acc = None;
    for s in samples {
        let (b, _) = branch_forward(g, model, store, setup, s.image(clear), s.embedding(clear))?;
        let ce = crate::losses::ce_seg(g, b.logits, &s.labels)?;
        acc = Some(match acc {
            None => ce,
            Some(a) => g.add(a, ce)?,
        });
    }
    let acc = acc.ok_or_else(|| invalid!("no samples"))?;
    Ok(g.scale(acc, 1.0 / samples.len() as f64))
}
