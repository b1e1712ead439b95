//! Weather-composition conditioning and the cross-attention layers that
//! inject it into encoder features.

use tapegrad::{Graph, ParamId, ParamStore, Tensor, Var};

use crate::error::{invalid, Result};

/// Conditioning derived from an image embedding and the prompt matrix.
#[derive(Clone, Copy, Debug)]
pub struct Conditioning {
    /// Prompt weights `1 × N` on the simplex (single-token mode only).
    pub v: Option<Var>,
    /// `vᵀ·T`, the composition-weighted text embedding (`1 × D`).
    pub w_bar: Option<Var>,
    /// Image embedding as a `1 × D` constant.
    pub i_clip: Var,
    /// Conditioning tokens, `m × 2D`.
    pub tokens: Var,
}

/// Parameters of the composition MLP `f_θ: D → N`.
#[derive(Clone, Debug)]
pub struct CompositionMlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

fn embed_row(g: &mut Graph, i_clip: &[f64], dim: usize) -> Result<Var> {
    if i_clip.len() != dim {
        return Err(invalid!("image embedding has {} entries, expected {dim}", i_clip.len()));
    }
    Ok(g.constant(Tensor::new(vec![1, dim], i_clip.to_vec())?))
}

fn check_prompts(g: &Graph, prompts: Var, dim: usize) -> Result<usize> {
    match *g.shape(prompts) {
        [n, d] if d == dim && n > 0 => Ok(n),
        ref s => Err(invalid!("prompt matrix has shape {s:?}, expected N × {dim}")),
    }
}

/// `v = softmax(f_θ(Ī))`, `W̄ = Tᵀv`, and the single token `W̃ = W̄ ⊕ Ī`.
pub fn compute_injection(
    g: &mut Graph,
    store: &ParamStore,
    mlp: &CompositionMlp,
    i_clip: &[f64],
    prompts: Var,
) -> Result<Conditioning> {
    let dim = i_clip.len();
    let n = check_prompts(g, prompts, dim)?;
    let i = embed_row(g, i_clip, dim)?;
    let w1 = g.param(store, mlp.w1);
    let b1 = g.param(store, mlp.b1);
    let w2 = g.param(store, mlp.w2);
    let b2 = g.param(store, mlp.b2);
    if g.shape(w1)[0] != dim || g.shape(w2)[1] != n {
        return Err(invalid!(
            "composition MLP maps {:?} → {:?}, inputs are D = {dim}, N = {n}",
            g.shape(w1),
            g.shape(w2)
        ));
    }
    let h = g.matmul(i, w1)?;
    let h = g.bias_add(h, b1, 1)?;
    let h = g.relu(h);
    let logits = g.matmul(h, w2)?;
    let logits = g.bias_add(logits, b2, 1)?;
    let v = g.softmax(logits, 1)?;
    let w_bar = g.matmul(v, prompts)?;
    let tokens = g.concat(&[w_bar, i], 1)?;
    Ok(Conditioning {
        v: Some(v),
        w_bar: Some(w_bar),
        i_clip: i,
        tokens,
    })
}

/// One token per prompt: row `n` is `T_n ⊕ Ī`.
pub fn compute_injection_multiclip(g: &mut Graph, i_clip: &[f64], prompts: Var) -> Result<Conditioning> {
    let dim = i_clip.len();
    let n = check_prompts(g, prompts, dim)?;
    let i = embed_row(g, i_clip, dim)?;
    let repeated = g.constant(Tensor::new(vec![n, dim], i_clip.repeat(n))?);
    let tokens = g.concat(&[prompts, repeated], 1)?;
    Ok(Conditioning {
        v: None,
        w_bar: None,
        i_clip: i,
        tokens,
    })
}

/// Multi-head cross-attention from spatial positions (queries) to
/// conditioning tokens (keys and values), added residually.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub wq: Vec<ParamId>,
    pub wk: Vec<ParamId>,
    pub wv: Vec<ParamId>,
    /// `heads·head_dim × C`, zero at initialization.
    pub wo: ParamId,
}

impl CrossAttention {
    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var, tokens: Var) -> Result<Var> {
        let (c, h, w) = match *g.shape(x) {
            [c, h, w] => (c, h, w),
            ref s => return Err(invalid!("cross-attention expects C×H×W features, got {s:?}")),
        };
        let flat = g.reshape(x, &[c, h * w])?;
        let queries_in = g.transpose(flat)?;
        let mut heads = Vec::with_capacity(self.wq.len());
        for ((&wq, &wk), &wv) in self.wq.iter().zip(&self.wk).zip(&self.wv) {
            let wq = g.param(store, wq);
            let wk = g.param(store, wk);
            let wv = g.param(store, wv);
            let head_dim = g.shape(wq)[1];
            let q = g.matmul(queries_in, wq)?;
            let k = g.matmul(tokens, wk)?;
            let v = g.matmul(tokens, wv)?;
            let kt = g.transpose(k)?;
            let scores = g.matmul(q, kt)?;
            let scores = g.scale(scores, 1.0 / (head_dim as f64).sqrt());
            let attn = g.softmax(scores, 1)?;
            heads.push(g.matmul(attn, v)?);
        }
        let joined = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat(&heads, 1)?
        };
        let wo = g.param(store, self.wo);
        let out = g.matmul(joined, wo)?;
        let out = g.transpose(out)?;
        let out = g.reshape(out, &[c, h, w])?;
        Ok(g.add(x, out)?)
    }
}
