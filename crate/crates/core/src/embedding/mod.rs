//! Synthetic joint image/text embedding space.
//!
//! Every registered weather effect owns one direction of an orthonormal
//! seeded basis. Text prompts are built from those directions according to
//! their effect weights, and the oracle image embedder encodes a sample's
//! true composition in the same basis, so a composition can be read back
//! from an image embedding.

mod prompts;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::image::Image;
use crate::rng;
use crate::weathersim::{WeatherComposition, EFFECTS, K};

pub use prompts::{PromptEntry, PromptSet, Registry};

pub const DEFAULT_DIM: usize = 64;

/// Side of the square thumbnail the pixel embedder projects.
pub const THUMB: usize = 16;

/// Weight of the prompt-specific perturbation added to single-effect
/// variants such as "heavy rain".
const VARIANT_JITTER: f64 = 0.25;

pub fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn gaussian(seed: u64, name: &str, n: usize) -> Vec<f64> {
    let mut r = rng::stream(seed, name);
    (0..n).map(|_| r.sample(StandardNormal)).collect()
}

fn one_hot(w: &[f64; K]) -> Option<usize> {
    let mut active = (0..K).filter(|&k| w[k] != 0.0);
    match (active.next(), active.next()) {
        (Some(k), None) => Some(k),
        _ => None,
    }
}

fn hash_str(s: &str) -> u64 {
    s.bytes().fold(rng::mix(0x51), |acc, b| rng::mix(acc ^ u64::from(b)))
}

/// Seeded embedding space of dimension `dim`.
#[derive(Clone, Debug)]
pub struct Embedder {
    dim: usize,
    seed: u64,
    basis: Vec<Vec<f64>>,
}

impl Embedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim < K {
            return Err(invalid!("embedding dimension {dim} is below the effect count {K}"));
        }
        // Gram-Schmidt over seeded Gaussian draws.
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(K);
        for (k, name) in EFFECTS.iter().enumerate() {
            let mut v = gaussian(seed, &format!("basis/{k}/{name}"), dim);
            for b in &basis {
                let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
            basis.push(normalize(v));
        }
        Ok(Self { dim, seed, basis })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Direction of registry effect `k`.
    pub fn basis(&self, k: usize) -> &[f64] {
        &self.basis[k]
    }

    /// `normalize(Σ_k w_k · basis_k)`.
    /// A one-hot mixture returns the basis vector itself.
    pub fn mix(&self, weights: &[f64; K]) -> Vec<f64> {
        if let Some(k) = one_hot(weights) {
            return self.basis[k].clone();
        }
        let mut v = vec![0.0; self.dim];
        for (w, b) in weights.iter().zip(&self.basis) {
            v.iter_mut().zip(b).for_each(|(x, y)| *x += w * y);
        }
        normalize(v)
    }

    /// Embeds a registry entry. Canonical effect names map to their basis
    /// direction, other single-effect prompts get a prompt-seeded
    /// perturbation of it, and mixtures map to the normalized weighted sum.
    pub fn embed_entry(&self, entry: &PromptEntry) -> Vec<f64> {
        let w = entry.effects;
        let active: Vec<usize> = (0..K).filter(|&k| w[k] > 0.0).collect();
        if let [k] = active[..] {
            if entry.prompt == EFFECTS[k] {
                return self.basis[k].clone();
            }
            let g = normalize(gaussian(
                self.seed ^ hash_str(&entry.prompt),
                "prompt-jitter",
                self.dim,
            ));
            let v = self.basis[k]
                .iter()
                .zip(&g)
                .map(|(b, j)| b + VARIANT_JITTER * j)
                .collect();
            return normalize(v);
        }
        self.mix(&w)
    }

    /// Embeds a prompt registered in `registry`.
    pub fn embed_text(&self, registry: &Registry, prompt: &str) -> Result<Vec<f64>> {
        let entry = registry
            .get(prompt)
            .ok_or_else(|| invalid!("prompt {prompt:?} is not registered"))?;
        Ok(self.embed_entry(entry))
    }

    /// Oracle image embedding: the true composition expressed in the effect
    /// basis, plus `noise` times a seeded unit vector, normalized.
    pub fn embed_image_oracle(&self, composition: &WeatherComposition, noise: f64, seed: u64) -> Vec<f64> {
        if noise == 0.0 {
            return self.mix(composition.weights());
        }
        let mut v = vec![0.0; self.dim];
        for (w, b) in composition.weights().iter().zip(&self.basis) {
            v.iter_mut().zip(b).for_each(|(x, y)| *x += w * y);
        }
        let g = normalize(gaussian(self.seed ^ rng::mix(seed), "image-noise", self.dim));
        v.iter_mut().zip(&g).for_each(|(x, y)| *x += noise * y);
        normalize(v)
    }

    /// Pixel embedding: a fixed random projection of a centred 16×16 RGB
    /// thumbnail, normalized.
    pub fn embed_image_pixels(&self, image: &Image) -> Result<Vec<f64>> {
        let thumb = thumbnail(image)?;
        let proj = gaussian(self.seed, "pixel-projection", self.dim * thumb.len());
        let v = proj
            .chunks_exact(thumb.len())
            .map(|row| row.iter().zip(&thumb).map(|(a, b)| a * b).sum())
            .collect();
        Ok(normalize(v))
    }

    /// Prompt matrix (`N × D`, row-major) for a registry.
    pub fn prompt_set(&self, registry: &Registry) -> PromptSet {
        PromptSet::build(self, registry)
    }
}

/// Box-filtered 16×16 thumbnail with 0.5 subtracted, HWC order.
fn thumbnail(image: &Image) -> Result<Vec<f64>> {
    let (h, w) = (image.height(), image.width());
    if h < THUMB || w < THUMB {
        return Err(invalid!("image {h}×{w} is smaller than the {THUMB}×{THUMB} thumbnail"));
    }
    let mut out = Vec::with_capacity(THUMB * THUMB * 3);
    for ty in 0..THUMB {
        let (y0, y1) = (ty * h / THUMB, (ty + 1) * h / THUMB);
        for tx in 0..THUMB {
            let (x0, x1) = (tx * w / THUMB, (tx + 1) * w / THUMB);
            let mut acc = [0.0; 3];
            for y in y0..y1 {
                for x in x0..x1 {
                    acc.iter_mut().zip(image.pixel(y, x)).for_each(|(a, p)| *a += p);
                }
            }
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            out.extend(acc.iter().map(|a| a / n - 0.5));
        }
    }
    Ok(out)
}

/// `Σ_k |v_eff,k − v_true,k|` where `v_eff` folds per-prompt weights onto the
/// effect registry through the prompt set's effect map.
pub fn composition_error(prompts: &PromptSet, v: &[f64], truth: &WeatherComposition) -> Result<f64> {
    let eff = prompts.effect_weights(v)?;
    Ok(eff.iter().zip(truth.weights()).map(|(a, b)| (a - b).abs()).sum())
}
