//! Confusion matrices, IoU and clear/adverse gap statistics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Clear,
    Adverse,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Clear => "clear",
            Split::Adverse => "adverse",
        }
    }
}

/// `counts[gt][pred]` over `C` classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one image's worth of pixels.
    pub fn accumulate<P, G>(&mut self, pred: &[P], gt: &[G]) -> Result<()>
    where
        P: Copy + Into<usize>,
        G: Copy + Into<usize>,
    {
        if pred.len() != gt.len() {
            return Err(invalid!("prediction has {} pixels, ground truth {}", pred.len(), gt.len()));
        }
        let c = self.classes;
        if let Some(bad) = pred
            .iter()
            .map(|&p| p.into())
            .chain(gt.iter().map(|&g| g.into()))
            .find(|&l| l >= c)
        {
            return Err(invalid!("label {bad} is not below class count {c}"));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            self.counts[g.into() * c + p.into()] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(invalid!("cannot merge {}-class and {}-class matrices", self.classes, other.classes));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }
}

/// Per-class IoU (absent when a class has zero union) and their mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub class_names: Vec<String>,
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub pixels: u64,
    /// Class left out of the mean, if any.
    pub excluded: Option<usize>,
}

/// IoU report; `exclude` drops one class (e.g. background) from the mean.
pub fn iou(cm: &ConfusionMatrix, split: Split, class_names: &[&str], exclude: Option<usize>) -> Result<EvalReport> {
    let c = cm.classes();
    if class_names.len() != c {
        return Err(invalid!("{} class names for a {c}-class matrix", class_names.len()));
    }
    let pixels = cm.total();
    if pixels == 0 {
        return Err(invalid!("confusion matrix is empty"));
    }
    let per_class: Vec<Option<f64>> = (0..c)
        .map(|k| {
            let tp = cm.get(k, k);
            let fn_: u64 = (0..c).map(|p| cm.get(k, p)).sum::<u64>() - tp;
            let fp: u64 = (0..c).map(|g| cm.get(g, k)).sum::<u64>() - tp;
            let union = tp + fp + fn_;
            (union > 0).then(|| tp as f64 / union as f64)
        })
        .collect();
    let present: Vec<f64> = per_class
        .iter()
        .enumerate()
        .filter(|(k, _)| Some(*k) != exclude)
        .filter_map(|(_, v)| *v)
        .collect();
    if present.is_empty() {
        return Err(invalid!("no class has a nonzero union"));
    }
    Ok(EvalReport {
        split,
        class_names: class_names.iter().map(|s| s.to_string()).collect(),
        miou: present.iter().sum::<f64>() / present.len() as f64,
        per_class_iou: per_class,
        pixels,
        excluded: exclude,
    })
}

/// `(b − a) / a`.
pub fn relative_improvement(a: f64, b: f64) -> f64 {
    (b - a) / a
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub clear_miou: f64,
    pub adverse_miou: f64,
    /// `clear − adverse`.
    pub absolute: f64,
}

pub fn gap_report(clear: &EvalReport, adverse: &EvalReport) -> Result<Gap> {
    if clear.class_names != adverse.class_names {
        return Err(invalid!(
            "reports use different class registries ({} vs {} classes)",
            clear.class_names.len(),
            adverse.class_names.len()
        ));
    }
    Ok(Gap {
        clear_miou: clear.miou,
        adverse_miou: adverse.miou,
        absolute: clear.miou - adverse.miou,
    })
}

impl EvalReport {
    /// Aligned text table, one column per class then the mean, in percent.
    pub fn table(&self) -> String {
        let width = self.class_names.iter().map(|n| n.len()).max().unwrap_or(0).max(6);
        let mut head = format!("{:<8}", "split");
        let mut row = format!("{:<8}", self.split.name());
        for (k, (name, v)) in self.class_names.iter().zip(&self.per_class_iou).enumerate() {
            let _ = write!(head, " {name:>width$}");
            let cell = match v {
                Some(v) if Some(k) != self.excluded => format!("{:.2}", 100.0 * v),
                Some(v) => format!("({:.2})", 100.0 * v),
                None => "-".to_string(),
            };
            let _ = write!(row, " {cell:>width$}");
        }
        let _ = write!(head, " {:>width$}", "mIoU");
        let _ = write!(row, " {:>width$.2}", 100.0 * self.miou);
        format!("{head}\n{row}\n")
    }
}
