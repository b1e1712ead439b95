//! Segmentation cross-entropy, the clear/adverse consistency losses and
//! their epoch schedules.

mod schedule;

use serde::{Deserialize, Serialize};
use tapegrad::{Graph, Tensor, Var};

use crate::error::{invalid, Result};
use crate::image::LabelMap;

pub use schedule::{schedule_weight, LossSchedule, ScheduleKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    AdverseOnly,
    Paired,
    PairedFull,
}

impl TrainMode {
    pub const ALL: [TrainMode; 3] = [TrainMode::AdverseOnly, TrainMode::Paired, TrainMode::PairedFull];

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::AdverseOnly => "adverse_only",
            TrainMode::Paired => "paired",
            TrainMode::PairedFull => "paired_full",
        }
    }

    pub fn uses_clear(self) -> bool {
        self != TrainMode::AdverseOnly
    }
}

impl std::str::FromStr for TrainMode {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid!("unknown training mode {s:?}"))
    }
}

/// Form of the output-consistency targets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OclTarget {
    /// The other branch's detached class distribution.
    #[default]
    Soft,
    /// One-hot argmax of the other branch's detached logits.
    Hard,
}

fn plane_shape(g: &Graph, logits: Var) -> Result<(usize, usize, usize)> {
    match *g.shape(logits) {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(invalid!("expected C×H×W logits, got {s:?}")),
    }
}

/// Mean over pixels of `−log softmax(logits)[label]`.
pub fn ce_seg(g: &mut Graph, logits: Var, labels: &LabelMap) -> Result<Var> {
    let (c, h, w) = plane_shape(g, logits)?;
    if (labels.height(), labels.width()) != (h, w) {
        return Err(invalid!(
            "ce_seg: labels are {}×{}, logits {h}×{w}",
            labels.height(),
            labels.width()
        ));
    }
    let plane = h * w;
    let mut onehot = vec![0.0; c * plane];
    for (i, &l) in labels.data().iter().enumerate() {
        let l = usize::from(l);
        if l >= c {
            return Err(invalid!("ce_seg: label {l} is not below class count {c}"));
        }
        onehot[l * plane + i] = 1.0;
    }
    let lp = g.log_softmax(logits, 0)?;
    let t = g.constant(Tensor::new(vec![c, h, w], onehot)?);
    let picked = g.mul(lp, t)?;
    let s = g.sum(picked);
    Ok(g.scale(s, -1.0 / plane as f64))
}

/// `1 − cos(a, b)` over the flattened tensors.
pub fn fcl(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(invalid!("fcl: feature shapes {:?} and {:?} differ", g.shape(a), g.shape(b)));
    }
    let na = g.l2_norm(a);
    let nb = g.l2_norm(b);
    if g.value(na).item() == 0.0 || g.value(nb).item() == 0.0 {
        return Err(invalid!("fcl: zero-norm features"));
    }
    let dot = g.dot(a, b)?;
    let denom = g.mul(na, nb)?;
    let cos = g.div(dot, denom)?;
    let neg = g.scale(cos, -1.0);
    Ok(g.add_scalar(neg, 1.0))
}

fn target(g: &mut Graph, logits: Var, kind: OclTarget) -> Result<Var> {
    let fixed = g.detach(logits);
    match kind {
        OclTarget::Soft => Ok(g.softmax(fixed, 0)?),
        OclTarget::Hard => {
            let t = g.value(fixed);
            let plane = t.len() / t.shape()[0];
            let mut onehot = vec![0.0; t.len()];
            for (i, k) in t.argmax_axis0().into_iter().enumerate() {
                onehot[k * plane + i] = 1.0;
            }
            let onehot = Tensor::new(t.shape().to_vec(), onehot)?;
            Ok(g.constant(onehot))
        }
    }
}

/// Mean over pixels of `−Σ_c q_c log p_c` with `p = softmax(live)` and `q`
/// derived from `other` with gradient blocked.
pub fn ocl_term(g: &mut Graph, live: Var, other: Var, kind: OclTarget) -> Result<Var> {
    if g.shape(live) != g.shape(other) {
        return Err(invalid!("ocl: logits shapes {:?} and {:?} differ", g.shape(live), g.shape(other)));
    }
    let (_, h, w) = plane_shape(g, live)?;
    let q = target(g, other, kind)?;
    let lp = g.log_softmax(live, 0)?;
    let prod = g.mul(q, lp)?;
    let s = g.sum(prod);
    Ok(g.scale(s, -1.0 / (h * w) as f64))
}

/// `ℒ_d + ℒ_c`: each branch against the other's detached prediction.
pub fn ocl(g: &mut Graph, logits_d: Var, logits_c: Var, kind: OclTarget) -> Result<Var> {
    let d = ocl_term(g, logits_d, logits_c, kind)?;
    let c = ocl_term(g, logits_c, logits_d, kind)?;
    Ok(g.add(d, c)?)
}

/// `1 − cos(W̄, Ī)`: ties the composition-weighted text embedding to the
/// image embedding it was derived from.
pub fn alignment(g: &mut Graph, w_bar: Var, i_clip: Var) -> Result<Var> {
    fcl(g, w_bar, i_clip)
}

/// One branch of a forward pass, as seen by the loss.
#[derive(Clone, Copy, Debug)]
pub struct Branch {
    pub logits: Var,
    pub features: Var,
}

/// Scalar loss values for one sample, batch or epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub ce_adverse: f64,
    pub ce_clear: Option<f64>,
    pub fcl: Option<f64>,
    pub ocl: Option<f64>,
    pub lambda_f: f64,
    pub lambda_o: f64,
    pub total: f64,
    /// Embedding-alignment loss, optimized alongside `total` but not part of it.
    pub align: Option<f64>,
}

impl LossReport {
    /// `ce_adverse + ce_clear + λ_F·fcl + λ_O·ocl`, absent terms counting 0.
    pub fn decomposed_total(&self) -> f64 {
        self.ce_adverse
            + self.ce_clear.unwrap_or(0.0)
            + self.lambda_f * self.fcl.unwrap_or(0.0)
            + self.lambda_o * self.ocl.unwrap_or(0.0)
    }

    /// Element-wise mean of several reports.
    pub fn mean(reports: &[LossReport]) -> Option<LossReport> {
        let n = reports.len() as f64;
        let first = reports.first()?;
        let avg = |f: &dyn Fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let avg_opt = |f: &dyn Fn(&LossReport) -> Option<f64>| -> Option<f64> {
            let vals: Option<Vec<f64>> = reports.iter().map(f).collect();
            vals.map(|v| v.iter().sum::<f64>() / n)
        };
        let mut r = LossReport {
            ce_adverse: avg(&|r| r.ce_adverse),
            ce_clear: avg_opt(&|r| r.ce_clear),
            fcl: avg_opt(&|r| r.fcl),
            ocl: avg_opt(&|r| r.ocl),
            lambda_f: first.lambda_f,
            lambda_o: first.lambda_o,
            total: 0.0,
            align: avg_opt(&|r| r.align),
        };
        r.total = r.decomposed_total();
        Some(r)
    }
}

/// Builds the training objective for one sample.
///
/// The returned variable is the quantity to differentiate; terms whose
/// weight is zero are reported but left out of the graph.
pub fn total_loss(
    g: &mut Graph,
    mode: TrainMode,
    adverse: Branch,
    clear: Option<Branch>,
    labels: &LabelMap,
    lambda_f: f64,
    lambda_o: f64,
    ocl_target: OclTarget,
) -> Result<(Var, LossReport)> {
    let ce_d = ce_seg(g, adverse.logits, labels)?;
    let mut report = LossReport {
        ce_adverse: g.value(ce_d).item(),
        ..LossReport::default()
    };
    let mut total = ce_d;
    if mode.uses_clear() {
        let clear = clear.ok_or_else(|| invalid!("{} mode needs the clear branch", mode.name()))?;
        let ce_c = ce_seg(g, clear.logits, labels)?;
        report.ce_clear = Some(g.value(ce_c).item());
        total = g.add(total, ce_c)?;
        if mode == TrainMode::PairedFull {
            let f = fcl(g, clear.features, adverse.features)?;
            let o = ocl(g, adverse.logits, clear.logits, ocl_target)?;
            report.fcl = Some(g.value(f).item());
            report.ocl = Some(g.value(o).item());
            report.lambda_f = lambda_f;
            report.lambda_o = lambda_o;
            if lambda_f != 0.0 {
                let t = g.scale(f, lambda_f);
                total = g.add(total, t)?;
            }
            if lambda_o != 0.0 {
                let t = g.scale(o, lambda_o);
                total = g.add(total, t)?;
            }
        }
    }
    report.total = report.decomposed_total();
    Ok((total, report))
}

/// Losses covered by [`finite_diff_check_loss`].
pub const CHECKED_LOSSES: [&str; 4] = ["ce_seg", "fcl", "ocl_d", "ocl_c"];

/// Central-difference gradient check of a loss on seeded `3×2×4` inputs.
///
/// The OCL terms are checked against their live branch with the detached
/// target held fixed, which is the function backpropagation differentiates.
/// Targets are drawn peaked so no gradient entry sits near zero, where the
/// relative error is ill-conditioned.
pub fn finite_diff_check_loss(name: &str, seed: u64) -> Result<f64> {
    use rand::Rng;
    let mut r = crate::rng::stream(seed, "loss-gradcheck");
    let shape = [3, 2, 4];
    let uniform = |r: &mut rand_chacha::ChaCha8Rng| -> Result<Tensor> {
        Ok(Tensor::new(shape.to_vec(), (0..24).map(|_| r.gen_range(-1.0..1.0)).collect())?)
    };
    let a = uniform(&mut r)?;
    let b = uniform(&mut r)?;
    let classes: Vec<usize> = (0..8).map(|_| r.gen_range(0..3)).collect();
    let mut peaked = vec![-3.0; 24];
    for (i, &k) in classes.iter().enumerate() {
        peaked[k * 8 + i] = 3.0;
    }
    let peaked = Tensor::new(shape.to_vec(), peaked)?;
    let lift = |op: &'static str| {
        move |e: crate::error::Error| tapegrad::AutodiffError::InvalidArgument { op, msg: e.to_string() }
    };
    let check_ocl = |live: Tensor| {
        tapegrad::check_gradients(&[live], |g, v| {
            let t = g.constant(peaked.clone());
            ocl_term(g, v[0], t, OclTarget::Soft).map_err(lift("ocl"))
        })
    };
    let err = match name {
        "ce_seg" => {
            let y = LabelMap::new(2, 4, classes.iter().map(|&k| k as u8).collect())?;
            tapegrad::check_gradients(&[a], |g, v| ce_seg(g, v[0], &y).map_err(lift("ce_seg")))?
        }
        "fcl" => tapegrad::check_gradients(&[a, b], |g, v| fcl(g, v[0], v[1]).map_err(lift("fcl")))?,
        "ocl_d" => check_ocl(a)?,
        "ocl_c" => check_ocl(b)?,
        _ => return Err(invalid!("no gradient check registered for loss {name:?}")),
    };
    Ok(err)
}
