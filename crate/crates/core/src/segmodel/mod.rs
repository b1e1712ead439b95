//! Encoder/decoder segmentation network with optional weather conditioning.

mod injection;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use tapegrad::{Graph, ParamId, ParamStore, Tensor, Var};

use crate::embedding::PromptSet;
use crate::error::{invalid, Result};
use crate::image::Image;
use crate::rng;

pub use injection::{
    compute_injection, compute_injection_multiclip, CompositionMlp, Conditioning, CrossAttention,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionMode {
    Off,
    Clip,
    Multiclip,
}

impl InjectionMode {
    pub fn enabled(self) -> bool {
        self != InjectionMode::Off
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub channels: Vec<usize>,
    pub class_count: usize,
    pub injection: InjectionMode,
    pub embed_dim: usize,
    pub prompt_count: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub mlp_hidden: usize,
    pub decoder_channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: vec![8, 16, 32],
            class_count: 10,
            injection: InjectionMode::Off,
            embed_dim: crate::embedding::DEFAULT_DIM,
            prompt_count: 13,
            heads: 2,
            head_dim: 8,
            mlp_hidden: 32,
            decoder_channels: 32,
            height: 64,
            width: 64,
        }
    }
}

impl ModelConfig {
    pub fn stages(&self) -> usize {
        self.channels.len()
    }

    /// Downsampling factor of the decoder's internal logits.
    pub fn decoder_factor(&self) -> usize {
        1 << (self.stages() - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.stages();
        if s < 2 {
            return Err(invalid!("the model needs at least 2 stages, got {s}"));
        }
        if self.channels.windows(2).any(|w| w[0] >= w[1]) || self.channels[0] == 0 {
            return Err(invalid!("stage channels must be positive and strictly increasing: {:?}", self.channels));
        }
        let f = 1 << s;
        if self.height == 0 || self.width == 0 || self.height % f != 0 || self.width % f != 0 {
            return Err(invalid!("image size {}×{} is not divisible by 2^{s}", self.height, self.width));
        }
        if !(2..=256).contains(&self.class_count) {
            return Err(invalid!("class count {} out of range", self.class_count));
        }
        if self.injection.enabled()
            && [self.embed_dim, self.prompt_count, self.heads, self.head_dim, self.mlp_hidden].contains(&0)
        {
            return Err(invalid!("injection sizes must be positive"));
        }
        if self.decoder_channels == 0 {
            return Err(invalid!("decoder channels must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

impl Conv {
    fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var, stride: usize) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        Ok(g.conv3x3(x, w, b, stride)?)
    }
}

#[derive(Clone, Debug)]
struct Stage {
    conv1: Conv,
    conv2: Conv,
    inject: Option<CrossAttention>,
    down: Conv,
}

/// Outputs of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// Post-downsampling output of every encoder stage.
    pub stages: Vec<Var>,
    /// Decoder logits at the reduced resolution.
    pub logits_low: Var,
    /// Logits at input resolution, `C × H × W`.
    pub logits: Var,
}

impl Forward {
    /// Final encoder stage output, the feature used for consistency losses.
    pub fn features(&self) -> Var {
        *self.stages.last().expect("at least two stages")
    }
}

/// Parameter layout of the network. Values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct SegModel {
    config: ModelConfig,
    stages: Vec<Stage>,
    mlp: Option<CompositionMlp>,
    fuse: Conv,
    head: Conv,
}

/// Each parameter draws from a stream keyed by its name, so the same name
/// gets the same values whatever else the model contains.
fn init(store: &mut ParamStore, seed: u64, name: &str, shape: &[usize], std: f64) -> Result<ParamId> {
    let n: usize = shape.iter().product();
    let data = if std == 0.0 {
        vec![0.0; n]
    } else {
        let mut r = rng::stream(seed, name);
        (0..n).map(|_| std * r.sample::<f64, _>(StandardNormal)).collect()
    };
    Ok(store.insert(name, Tensor::new(shape.to_vec(), data)?)?)
}

fn conv(store: &mut ParamStore, seed: u64, name: &str, cin: usize, cout: usize) -> Result<Conv> {
    let std = (2.0 / (cin * 9) as f64).sqrt();
    Ok(Conv {
        w: init(store, seed, &format!("{name}.w"), &[cout, cin, 3, 3], std)?,
        b: init(store, seed, &format!("{name}.b"), &[cout], 0.0)?,
    })
}

impl SegModel {
    /// Registers freshly initialized parameters in `store`.
    pub fn build(config: ModelConfig, seed: u64, store: &mut ParamStore) -> Result<Self> {
        config.validate()?;
        let token_dim = 2 * config.embed_dim;
        let mut stages = Vec::with_capacity(config.stages());
        let mut cin = 3;
        for (s, &c) in config.channels.iter().enumerate() {
            let inject = if config.injection.enabled() {
                let proj = |store: &mut ParamStore, kind: &str, rows: usize| -> Result<Vec<ParamId>> {
                    (0..config.heads)
                        .map(|h| {
                            let name = format!("inj{s}.{kind}{h}");
                            init(store, seed, &name, &[rows, config.head_dim], (1.0 / rows as f64).sqrt())
                        })
                        .collect()
                };
                Some(CrossAttention {
                    wq: proj(store, "q", c)?,
                    wk: proj(store, "k", token_dim)?,
                    wv: proj(store, "v", token_dim)?,
                    wo: init(store, seed, &format!("inj{s}.out"), &[config.heads * config.head_dim, c], 0.0)?,
                })
            } else {
                None
            };
            stages.push(Stage {
                conv1: conv(store, seed, &format!("enc{s}.conv1"), cin, c)?,
                conv2: conv(store, seed, &format!("enc{s}.conv2"), c, c)?,
                inject,
                down: conv(store, seed, &format!("enc{s}.down"), c, c)?,
            });
            cin = c;
        }
        let mlp = if config.injection == InjectionMode::Clip {
            let (d, h, n) = (config.embed_dim, config.mlp_hidden, config.prompt_count);
            Some(CompositionMlp {
                w1: init(store, seed, "mlp.w1", &[d, h], (2.0 / d as f64).sqrt())?,
                b1: init(store, seed, "mlp.b1", &[h], 0.0)?,
                w2: init(store, seed, "mlp.w2", &[h, n], (1.0 / h as f64).sqrt())?,
                b2: init(store, seed, "mlp.b2", &[n], 0.0)?,
            })
        } else {
            None
        };
        let s = config.stages();
        let fused_in = config.channels[s - 1] + config.channels[s - 2];
        let fuse = conv(store, seed, "dec.fuse", fused_in, config.decoder_channels)?;
        let head = conv(store, seed, "dec.head", config.decoder_channels, config.class_count)?;
        Ok(Self {
            config,
            stages,
            mlp,
            fuse,
            head,
        })
    }

    /// Builds a model into a new store.
    pub fn init(config: ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let model = Self::build(config, seed, &mut store)?;
        Ok((model, store))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mlp(&self) -> Option<&CompositionMlp> {
        self.mlp.as_ref()
    }

    /// Parameters of the composition MLP, if any.
    pub fn mlp_params(&self) -> Vec<ParamId> {
        self.mlp
            .iter()
            .flat_map(|m| [m.w1, m.b1, m.w2, m.b2])
            .collect()
    }

    /// Conditioning for one image embedding, or `None` with injection off.
    pub fn condition(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        i_clip: &[f64],
        prompts: &PromptSet,
    ) -> Result<Option<Conditioning>> {
        let t = match self.config.injection {
            InjectionMode::Off => return Ok(None),
            _ => {
                if prompts.len() != self.config.prompt_count || prompts.dim() != self.config.embed_dim {
                    return Err(invalid!(
                        "prompt set is {}×{}, model expects {}×{}",
                        prompts.len(),
                        prompts.dim(),
                        self.config.prompt_count,
                        self.config.embed_dim
                    ));
                }
                g.constant(prompts.matrix())
            }
        };
        let c = match &self.mlp {
            Some(mlp) => compute_injection(g, store, mlp, i_clip, t)?,
            None => compute_injection_multiclip(g, i_clip, t)?,
        };
        Ok(Some(c))
    }

    /// Encoder stages; each output is taken after the stride-2 convolution.
    pub fn encode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        image: Var,
        cond: Option<&Conditioning>,
    ) -> Result<Vec<Var>> {
        let expect = [3, self.config.height, self.config.width];
        if g.shape(image) != expect {
            return Err(invalid!("input has shape {:?}, model expects {expect:?}", g.shape(image)));
        }
        if self.config.injection.enabled() && cond.is_none() {
            return Err(invalid!("injection is enabled but no conditioning was supplied"));
        }
        let mut x = image;
        let mut outs = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            x = stage.conv1.apply(g, store, x, 1)?;
            x = g.relu(x);
            x = stage.conv2.apply(g, store, x, 1)?;
            x = g.relu(x);
            if let (Some(attn), Some(c)) = (&stage.inject, cond) {
                x = attn.apply(g, store, x, c.tokens)?;
            }
            x = stage.down.apply(g, store, x, 2)?;
            x = g.relu(x);
            outs.push(x);
        }
        Ok(outs)
    }

    /// Returns `(low-resolution logits, full-resolution logits)`.
    pub fn decode(&self, g: &mut Graph, store: &ParamStore, stages: &[Var]) -> Result<(Var, Var)> {
        let s = self.config.stages();
        if stages.len() != s {
            return Err(invalid!("decoder expects {s} stage features, got {}", stages.len()));
        }
        let (last, skip) = (stages[s - 1], stages[s - 2]);
        let up = g.upsample(last, 2)?;
        if g.shape(up)[1..] != g.shape(skip)[1..] {
            return Err(invalid!(
                "decoder feature shapes {:?} and {:?} do not align",
                g.shape(last),
                g.shape(skip)
            ));
        }
        let x = g.concat(&[up, skip], 0)?;
        let x = self.fuse.apply(g, store, x, 1)?;
        let x = g.relu(x);
        let low = self.head.apply(g, store, x, 1)?;
        let full = g.upsample(low, self.config.decoder_factor())?;
        Ok((low, full))
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        image: Var,
        cond: Option<&Conditioning>,
    ) -> Result<Forward> {
        let stages = self.encode(g, store, image, cond)?;
        let (logits_low, logits) = self.decode(g, store, &stages)?;
        Ok(Forward {
            stages,
            logits_low,
            logits,
        })
    }

    /// Inference pass returning full-resolution logits.
    pub fn predict(
        &self,
        store: &ParamStore,
        image: &Image,
        i_clip: Option<&[f64]>,
        prompts: Option<&PromptSet>,
    ) -> Result<Tensor> {
        let mut g = Graph::inference();
        let cond = match (self.config.injection.enabled(), i_clip, prompts) {
            (false, ..) => None,
            (true, Some(i), Some(p)) => self.condition(&mut g, store, i, p)?,
            (true, ..) => return Err(invalid!("injection needs an image embedding and prompts")),
        };
        let x = g.constant(image.to_chw());
        let out = self.forward(&mut g, store, x, cond.as_ref())?;
        Ok(g.value(out.logits).clone())
    }

    /// Prompt weights `v` for an image embedding (single-token mode only).
    pub fn composition(&self, store: &ParamStore, i_clip: &[f64], prompts: &PromptSet) -> Result<Vec<f64>> {
        if self.mlp.is_none() {
            return Err(invalid!("composition weights exist only in single-token injection mode"));
        }
        let mut g = Graph::inference();
        let c = self.condition(&mut g, store, i_clip, prompts)?.expect("injection enabled");
        Ok(g.value(c.v.expect("single-token mode")).data().to_vec())
    }
}

#[cfg(test)]
mod tests;
