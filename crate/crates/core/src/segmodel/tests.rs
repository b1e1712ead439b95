use approx::assert_abs_diff_eq;
use tapegrad::{Adam, Graph, ParamStore, Tensor};

use super::*;
use crate::embedding::{Embedder, Registry};
use crate::weathersim::{gen_scene, WeatherComposition};

fn config(injection: InjectionMode) -> ModelConfig {
    ModelConfig {
        injection,
        ..ModelConfig::default()
    }
}

fn setup(injection: InjectionMode) -> (SegModel, ParamStore, PromptSet, Vec<f64>, Image) {
    let (model, store) = SegModel::init(config(injection), 5).unwrap();
    let e = Embedder::new(64, 0).unwrap();
    let prompts = e.prompt_set(&Registry::default_13());
    let comp = WeatherComposition::new([0.5, 0.0, 0.3, 0.2]).unwrap();
    let i_clip = e.embed_image_oracle(&comp, 0.02, 1);
    let image = gen_scene(3, 64, 64, 10).unwrap().clear;
    (model, store, prompts, i_clip, image)
}

#[test]
fn shapes() {
    let (model, store, ..) = setup(InjectionMode::Off);
    let mut g = Graph::new();
    let x = g.constant(gen_scene(0, 64, 64, 10).unwrap().clear.to_chw());
    let out = model.forward(&mut g, &store, x, None).unwrap();
    let sizes: Vec<_> = out.stages.iter().map(|&s| g.shape(s).to_vec()).collect();
    assert_eq!(sizes, [vec![8, 32, 32], vec![16, 16, 16], vec![32, 8, 8]]);
    assert_eq!(g.shape(out.logits_low), [10, 16, 16]);
    assert_eq!(g.shape(out.logits), [10, 64, 64]);
    let bad = g.constant(Tensor::zeros(&[3, 32, 64]));
    assert!(model.forward(&mut g, &store, bad, None).is_err());
}

#[test]
fn config_validation() {
    let mut c = ModelConfig::default();
    c.height = 60;
    assert!(c.validate().is_err());
    let mut c = ModelConfig::default();
    c.channels = vec![8, 8, 16];
    assert!(c.validate().is_err());
    let c: ModelConfig = serde_json::from_str(r#"{"injection":"multiclip"}"#).unwrap();
    assert_eq!(c.injection, InjectionMode::Multiclip);
    assert!(serde_json::from_str::<ModelConfig>(r#"{"layers":3}"#).is_err());
}

#[test]
fn zero_init_injection_is_identity() {
    let (off, off_store, prompts, i_clip, image) = setup(InjectionMode::Off);
    let base = off.predict(&off_store, &image, None, None).unwrap();
    for mode in [InjectionMode::Clip, InjectionMode::Multiclip] {
        let (m, store, ..) = setup(mode);
        let out = m.predict(&store, &image, Some(&i_clip), Some(&prompts)).unwrap();
        assert_eq!(out, base, "{mode:?}");
        assert!(m.predict(&store, &image, None, None).is_err());
    }
}

#[test]
fn prediction_is_deterministic_and_normalizable() {
    let (m, store, prompts, i_clip, image) = setup(InjectionMode::Clip);
    let a = m.predict(&store, &image, Some(&i_clip), Some(&prompts)).unwrap();
    assert_eq!(a, m.predict(&store, &image, Some(&i_clip), Some(&prompts)).unwrap());
    let mut g = Graph::inference();
    let x = g.constant(a);
    let p = g.softmax(x, 0).unwrap();
    let p = g.value(p);
    let plane = 64 * 64;
    for i in (0..plane).step_by(97) {
        let s: f64 = (0..10).map(|c| p.data()[c * plane + i]).sum();
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
    }
}

#[test]
fn composition_on_simplex() {
    let (m, store, prompts, i_clip, _) = setup(InjectionMode::Clip);
    let v = m.composition(&store, &i_clip, &prompts).unwrap();
    assert_eq!(v.len(), 13);
    assert!(v.iter().all(|&x| x >= 0.0));
    assert_abs_diff_eq!(v.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
}

#[test]
fn injection_math() {
    let (m, mut store, prompts, i_clip, _) = setup(InjectionMode::Clip);
    let mlp = m.mlp().unwrap().clone();
    // equal MLP outputs give uniform weights
    store.value_mut(mlp.w2).data_mut().fill(0.0);
    let mut g = Graph::inference();
    let t = g.constant(prompts.matrix());
    let c = compute_injection(&mut g, &store, &mlp, &i_clip, t).unwrap();
    for &x in g.value(c.v.unwrap()).data() {
        assert_abs_diff_eq!(x, 1.0 / 13.0, epsilon = 1e-15);
    }
    assert_eq!(g.shape(c.tokens), [1, 128]);
    assert_eq!(&g.value(c.tokens).data()[64..], &i_clip[..]);
    // a dominant first logit selects the first prompt
    store.value_mut(mlp.b2).data_mut()[0] = 1e3;
    let mut g = Graph::inference();
    let t = g.constant(prompts.matrix());
    let c = compute_injection(&mut g, &store, &mlp, &i_clip, t).unwrap();
    assert_eq!(g.value(c.w_bar.unwrap()).data(), prompts.row(0));
    let short = vec![0.0; 10];
    assert!(compute_injection(&mut g, &store, &mlp, &short, t).is_err());
}

#[test]
fn multiclip_tokens() {
    let (_, _, prompts, i_clip, _) = setup(InjectionMode::Multiclip);
    let mut g = Graph::inference();
    let t = g.constant(prompts.matrix());
    let c = compute_injection_multiclip(&mut g, &i_clip, t).unwrap();
    assert!(c.v.is_none());
    assert_eq!(g.shape(c.tokens), [13, 128]);
    for (n, row) in g.value(c.tokens).data().chunks(128).enumerate() {
        assert_eq!(&row[..64], prompts.row(n));
        assert_eq!(&row[64..], &i_clip[..]);
    }
}

#[test]
fn cross_attention_contract() {
    let (m, mut store, prompts, i_clip, _) = setup(InjectionMode::Clip);
    let attn = m.stages[1].inject.clone().unwrap();
    let feats = Tensor::new(vec![16, 4, 4], (0..256).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let mut g = Graph::inference();
    let c = m.condition(&mut g, &store, &i_clip, &prompts).unwrap().unwrap();
    let x = g.constant(feats.clone());
    let y = attn.apply(&mut g, &store, x, c.tokens).unwrap();
    assert_eq!(g.value(y), &feats);
    // one token: every position receives the same offset
    store
        .value_mut(attn.wo)
        .data_mut()
        .iter_mut()
        .enumerate()
        .for_each(|(i, v)| *v = (i as f64 * 0.11).cos());
    let mut g = Graph::inference();
    let c = m.condition(&mut g, &store, &i_clip, &prompts).unwrap().unwrap();
    let x = g.constant(feats.clone());
    let y = attn.apply(&mut g, &store, x, c.tokens).unwrap();
    assert_eq!(g.shape(y), [16, 4, 4]);
    let y = g.value(y).data();
    for ch in 0..16 {
        let d0 = y[ch * 16] - feats.data()[ch * 16];
        for p in 1..16 {
            assert_abs_diff_eq!(y[ch * 16 + p] - feats.data()[ch * 16 + p], d0, epsilon = 1e-12);
        }
    }
    let mut g = Graph::inference();
    let c = m.condition(&mut g, &store, &i_clip, &prompts).unwrap().unwrap();
    let flat = g.constant(Tensor::zeros(&[16, 16]));
    assert!(attn.apply(&mut g, &store, flat, c.tokens).is_err());
}

#[test]
fn gradient_reaches_composition_mlp() {
    let (m, mut store, prompts, i_clip, image) = setup(InjectionMode::Clip);
    let labels: Vec<f64> = (0..10 * 64 * 64).map(|i| ((i * 7919) % 13) as f64 / 13.0).collect();
    let target = Tensor::new(vec![10, 64, 64], labels).unwrap();
    let adam = Adam::default();
    let mut mlp_grad = 0.0;
    for _ in 0..2 {
        let mut g = Graph::new();
        let c = m.condition(&mut g, &store, &i_clip, &prompts).unwrap();
        let x = g.constant(image.to_chw());
        let out = m.forward(&mut g, &store, x, c.as_ref()).unwrap();
        let lp = g.log_softmax(out.logits, 0).unwrap();
        let t = g.constant(target.clone());
        let prod = g.mul(lp, t).unwrap();
        let loss = g.mean(prod);
        let loss = g.scale(loss, -1.0);
        let grads = g.backward(loss).unwrap();
        store.accumulate(&grads);
        mlp_grad = m
            .mlp_params()
            .iter()
            .map(|&id| store.grad(id).unwrap().iter().map(|v| v * v).sum::<f64>())
            .sum();
        adam.step(&mut store, 1e-3).unwrap();
    }
    assert!(mlp_grad > 0.0);
}

#[test]
fn bilinear_of_constant_is_constant() {
    let mut g = Graph::inference();
    let x = g.constant(Tensor::full(&[2, 4, 4], 0.7));
    let y = g.upsample(x, 4).unwrap();
    assert!(g.value(y).data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
}

#[test]
fn same_names_same_values() {
    let (off, off_store, ..) = setup(InjectionMode::Off);
    let (_, clip_store, ..) = setup(InjectionMode::Clip);
    assert!(clip_store.len() > off_store.len());
    for (name, value) in off_store.named_values() {
        assert_eq!(clip_store.value(clip_store.id(name).unwrap()), value, "{name}");
    }
    drop(off);
}
