use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tapegrad::{checkpoint, Tensor};

use super::Embedder;
use crate::error::{invalid, Error, Result};
use crate::weathersim::{EFFECTS, K};

/// A prompt and its mixture over the effect registry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEntry", into = "RawEntry")]
pub struct PromptEntry {
    pub prompt: String,
    pub effects: [f64; K],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    prompt: String,
    effects: BTreeMap<String, f64>,
}

impl TryFrom<RawEntry> for PromptEntry {
    type Error = Error;

    fn try_from(raw: RawEntry) -> Result<Self> {
        let mut effects = [0.0; K];
        for (name, w) in raw.effects {
            let k = EFFECTS
                .iter()
                .position(|e| *e == name)
                .ok_or_else(|| invalid!("prompt {:?}: unknown effect {name:?}", raw.prompt))?;
            effects[k] = w;
        }
        PromptEntry::new(raw.prompt, effects)
    }
}

impl From<PromptEntry> for RawEntry {
    fn from(e: PromptEntry) -> Self {
        let effects = EFFECTS
            .iter()
            .zip(e.effects)
            .filter(|(_, w)| *w != 0.0)
            .map(|(n, w)| (n.to_string(), w))
            .collect();
        RawEntry {
            prompt: e.prompt,
            effects,
        }
    }
}

impl PromptEntry {
    pub fn new(prompt: impl Into<String>, effects: [f64; K]) -> Result<Self> {
        let prompt = prompt.into();
        let sum: f64 = effects.iter().sum();
        if effects.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(invalid!("prompt {prompt:?}: effect weights {effects:?} are not a distribution"));
        }
        Ok(Self { prompt, effects })
    }
}

/// Ordered list of prompts available to the injection layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Registry {
    entries: Vec<PromptEntry>,
}

fn entry(prompt: &str, effects: [f64; K]) -> PromptEntry {
    PromptEntry::new(prompt, effects).expect("built-in prompt weights are valid")
}

impl Registry {
    pub fn new(entries: Vec<PromptEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(invalid!("prompt registry is empty"));
        }
        for (i, e) in entries.iter().enumerate() {
            if entries[..i].iter().any(|o| o.prompt == e.prompt) {
                return Err(invalid!("duplicate prompt {:?}", e.prompt));
            }
        }
        Ok(Self { entries })
    }

    /// The thirteen-prompt default set.
    pub fn default_13() -> Self {
        Self {
            entries: vec![
                entry("rain", [1.0, 0.0, 0.0, 0.0]),
                entry("heavy rain", [1.0, 0.0, 0.0, 0.0]),
                entry("drizzle", [0.5, 0.0, 0.0, 0.5]),
                entry("snow", [0.0, 1.0, 0.0, 0.0]),
                entry("heavy snow", [0.0, 1.0, 0.0, 0.0]),
                entry("sleet", [0.5, 0.5, 0.0, 0.0]),
                entry("fog", [0.0, 0.0, 1.0, 0.0]),
                entry("haze", [0.0, 0.0, 1.0, 0.0]),
                entry("mist", [0.0, 0.0, 1.0, 0.0]),
                entry("rain and fog", [0.5, 0.0, 0.5, 0.0]),
                entry("snow and fog", [0.0, 0.5, 0.5, 0.0]),
                entry("overcast", [0.0, 0.0, 0.3, 0.7]),
                entry("clear", [0.0, 0.0, 0.0, 1.0]),
            ],
        }
    }

    /// One prompt per registry effect.
    pub fn default_4() -> Self {
        Self {
            entries: (0..K)
                .map(|k| {
                    let mut w = [0.0; K];
                    w[k] = 1.0;
                    entry(EFFECTS[k], w)
                })
                .collect(),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: Vec<PromptEntry> =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        Self::new(entries).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PromptEntry] {
        &self.entries
    }

    pub fn get(&self, prompt: &str) -> Option<&PromptEntry> {
        self.entries.iter().find(|e| e.prompt == prompt)
    }
}

/// Embedded prompts: `N` unit rows of dimension `D` plus their effect map.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptSet {
    prompts: Vec<String>,
    dim: usize,
    vectors: Vec<f64>,
    effect_map: Vec<[f64; K]>,
}

impl PromptSet {
    pub(super) fn build(embedder: &Embedder, registry: &Registry) -> Self {
        let mut vectors = Vec::with_capacity(registry.len() * embedder.dim());
        for e in registry.entries() {
            vectors.extend(embedder.embed_entry(e));
        }
        Self {
            prompts: registry.entries().iter().map(|e| e.prompt.clone()).collect(),
            dim: embedder.dim(),
            vectors,
            effect_map: registry.entries().iter().map(|e| e.effects).collect(),
        }
    }

    /// Replaces the synthetic vectors with precomputed ones stored in a
    /// checkpoint container, one `[D]` entry per prompt name.
    pub fn load_vectors(&mut self, path: &Path) -> Result<()> {
        let entries = checkpoint::read(path)?;
        let mut vectors = vec![0.0; self.vectors.len()];
        for (n, prompt) in self.prompts.iter().enumerate() {
            let (_, t) = entries
                .iter()
                .find(|(name, _)| name == prompt)
                .ok_or_else(|| Error::format(path, format!("no vector for prompt {prompt:?}")))?;
            if t.shape() != [self.dim] {
                return Err(Error::format(
                    path,
                    format!("vector for {prompt:?} has shape {:?}, expected [{}]", t.shape(), self.dim),
                ));
            }
            let row = super::normalize(t.data().to_vec());
            vectors[n * self.dim..(n + 1) * self.dim].copy_from_slice(&row);
        }
        self.vectors = vectors;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.vectors[n * self.dim..(n + 1) * self.dim]
    }

    /// The `N × D` prompt matrix.
    pub fn matrix(&self) -> Tensor {
        Tensor::new(vec![self.len(), self.dim], self.vectors.clone()).expect("consistent sizes")
    }

    pub fn effect_map(&self) -> &[[f64; K]] {
        &self.effect_map
    }

    /// Folds per-prompt weights `v` (length `N`) onto the effect registry.
    pub fn effect_weights(&self, v: &[f64]) -> Result<[f64; K]> {
        if v.len() != self.len() {
            return Err(invalid!("expected {} prompt weights, got {}", self.len(), v.len()));
        }
        let mut out = [0.0; K];
        for (w, map) in v.iter().zip(&self.effect_map) {
            out.iter_mut().zip(map).for_each(|(o, m)| *o += w * m);
        }
        Ok(out)
    }
}
