use tapegrad::{Graph, ParamStore};

use super::{branch_forward, Setup, TrainSample};
use crate::embedding::composition_error;
use crate::error::{invalid, Result};
use crate::metrics::{iou, ConfusionMatrix, EvalReport, Split};
use crate::segmodel::SegModel;
use crate::weathersim::CLASS_NAMES;

/// Produces a per-pixel class map for one branch of a sample.
pub trait Predictor {
    fn predict(&self, sample: &TrainSample, clear: bool) -> Result<Vec<usize>>;
}

pub struct ModelPredictor<'a> {
    pub model: &'a SegModel,
    pub store: &'a ParamStore,
    pub setup: &'a Setup,
}

impl Predictor for ModelPredictor<'_> {
    fn predict(&self, sample: &TrainSample, clear: bool) -> Result<Vec<usize>> {
        let mut g = Graph::inference();
        let (b, _) = branch_forward(
            &mut g,
            self.model,
            self.store,
            self.setup,
            sample.image(clear),
            sample.embedding(clear),
        )?;
        Ok(g.value(b.logits).argmax_axis0())
    }
}

/// Returns the ground truth; useful for checking the evaluation path.
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn predict(&self, sample: &TrainSample, _clear: bool) -> Result<Vec<usize>> {
        Ok(sample.labels.data().iter().map(|&l| usize::from(l)).collect())
    }
}

pub fn evaluate_with(
    predictor: &dyn Predictor,
    samples: &[TrainSample],
    split: Split,
    class_count: usize,
    exclude: Option<usize>,
) -> Result<EvalReport> {
    if class_count > CLASS_NAMES.len() {
        return Err(invalid!("class count {class_count} exceeds the registry"));
    }
    let mut cm = ConfusionMatrix::new(class_count);
    for s in samples {
        let pred = predictor.predict(s, split == Split::Clear)?;
        cm.accumulate(&pred, s.labels.data())?;
    }
    iou(&cm, split, &CLASS_NAMES[..class_count], exclude)
}

pub fn evaluate(
    model: &SegModel,
    store: &ParamStore,
    setup: &Setup,
    samples: &[TrainSample],
    split: Split,
) -> Result<EvalReport> {
    let p = ModelPredictor { model, store, setup };
    evaluate_with(&p, samples, split, model.config().class_count, None)
}

/// `‖v_eff − v_true‖₁` per sample, from the adverse-image embeddings.
pub fn composition_errors(
    model: &SegModel,
    store: &ParamStore,
    setup: &Setup,
    samples: &[TrainSample],
) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| {
            let v = model.composition(store, &s.emb_adverse, &setup.prompts)?;
            composition_error(&setup.prompts, &v, &s.composition)
        })
        .collect()
}
