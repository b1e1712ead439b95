//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so every line is printed even
//! when an earlier criterion fails. Set `ACCEPTANCE_STRICT=1` to exit non-zero
//! on any failure. Criteria 8–11 train the full desk-scale
//! experiment and take tens of minutes on one core.

use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use pairedseg::dataset::{generate_sample, write_dataset, DataConfig};
use pairedseg::embedding::{Embedder, Registry};
use pairedseg::experiments::{
    exp_clear_non_regression, exp_composition_recovery, exp_gradient_priority, exp_paired_vs_adverse, run_modes,
    ExperimentSpec, ModeMatrix,
};
use pairedseg::image::{Image, LabelMap};
use pairedseg::losses::{
    ce_seg, fcl, finite_diff_check_loss, ocl, ocl_term, schedule_weight, LossSchedule, OclTarget, ScheduleKind,
    TrainMode, CHECKED_LOSSES,
};
use pairedseg::metrics::{iou, ConfusionMatrix, Split};
use pairedseg::segmodel::{compute_injection, compute_injection_multiclip, InjectionMode, ModelConfig, SegModel};
use pairedseg::trainer::{
    evaluate, gradient_experiment, prepare, train, EmbeddingConfig, GradExpConfig, Setup, TrainConfig,
};
use pairedseg::weathersim::{
    apply_fog, apply_rain, apply_snow, compose_weather, gen_scene, FogParams, RainField, SnowField,
    WeatherComposition,
};
use pairedseg::tapegrad::gradcheck::{finite_diff_check, PRIMITIVES};
use pairedseg::tapegrad::{checkpoint, Graph, Tensor};

type Outcome = Result<String, String>;

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn spec_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../experiments/desk.json")
}

// 1
fn autodiff_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for seed in 0..3 {
        for op in PRIMITIVES {
            let e = finite_diff_check(op, seed).map_err(|e| e.to_string())?;
            check(e < 1e-4, format!("{op} seed {seed}: relative error {e:e}"))?;
            worst = worst.max(e);
            count += 1;
        }
        for name in CHECKED_LOSSES {
            let e = finite_diff_check_loss(name, seed).map_err(|e| e.to_string())?;
            check(e < 1e-4, format!("{name} seed {seed}: relative error {e:e}"))?;
            worst = worst.max(e);
            count += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, format!("took {secs:.1}s"))?;
    Ok(format!("{count} checks, worst relative error {worst:.2e}, {secs:.1}s"))
}

fn uniform(h: usize, w: usize, v: f64) -> Image {
    Image::filled(h, w, [v; 3])
}

fn random_image(r: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    Image::new(h, w, (0..h * w * 3).map(|_| r.gen::<f64>()).collect()).unwrap()
}

// 2
fn image_formation() -> Outcome {
    let (h, w) = (16, 16);
    let rain = RainField {
        mask: vec![0.2; h * w],
        streaks: uniform(h, w, 1.0),
    };
    let out = apply_rain(&uniform(h, w, 0.5), &rain).map_err(|e| e.to_string())?;
    check(out.data().iter().all(|&v| (v - 0.6).abs() < 1e-12), "rain hand case is not 0.6")?;
    let snow = SnowField {
        mask: vec![0.5; h * w],
        aberration: uniform(h, w, 1.0),
    };
    let out = apply_snow(&uniform(h, w, 0.0), &snow).map_err(|e| e.to_string())?;
    check(out.data().iter().all(|&v| (v - 0.5).abs() < 1e-12), "snow hand case is not 0.5")?;
    let fog = FogParams::new(0.1, [1.0; 3]).unwrap();
    let out = apply_fog(&uniform(h, w, 0.8), &vec![10.0; h * w], &fog).map_err(|e| e.to_string())?;
    let fog_val = out.data()[0];
    check(
        out.data().iter().all(|&v| (v - 0.926424).abs() < 1e-6),
        format!("fog hand case gave {fog_val}"),
    )?;

    let mut r = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let j = random_image(&mut r, h, w);
        let layer = random_image(&mut r, h, w);
        let mask: Vec<f64> = (0..h * w).map(|_| r.gen()).collect();
        let rain = RainField {
            mask: mask.clone(),
            streaks: layer.clone(),
        };
        let snow = SnowField {
            mask: mask.clone(),
            aberration: layer.clone(),
        };
        for out in [apply_rain(&j, &rain), apply_snow(&j, &snow)] {
            let out = out.map_err(|e| e.to_string())?;
            for ((&o, &a), &b) in out.data().iter().zip(j.data()).zip(layer.data()) {
                check(
                    o >= a.min(b) - 1e-12 && o <= a.max(b) + 1e-12,
                    format!("case {case}: particle output outside convex hull"),
                )?;
            }
        }
        let depth: Vec<f64> = (0..h * w).map(|_| r.gen_range(0.0..100.0)).collect();
        let air = [r.gen(), r.gen(), r.gen()];
        let mut prev: Option<Image> = None;
        for beta in [0.0, 0.01, 0.05, 0.1, 0.3] {
            let out = apply_fog(&j, &depth, &FogParams::new(beta, air).unwrap()).map_err(|e| e.to_string())?;
            for (i, &o) in out.data().iter().enumerate() {
                let (a, l) = (j.data()[i], air[i % 3]);
                check(
                    o >= a.min(l) - 1e-12 && o <= a.max(l) + 1e-12,
                    format!("case {case}: fog output outside [J, L]"),
                )?;
                if let Some(p) = &prev {
                    check(
                        (o - l).abs() <= (p.data()[i] - l).abs() + 1e-12,
                        format!("case {case}: fog not monotone in beta"),
                    )?;
                }
            }
            prev = Some(out);
        }
        let far = apply_fog(&j, &vec![50.0; h * w], &FogParams::new(1.0, air).unwrap()).map_err(|e| e.to_string())?;
        for (i, &o) in far.data().iter().enumerate() {
            check((o - air[i % 3]).abs() < 1e-6, format!("case {case}: fog limit not reached"))?;
        }
    }
    Ok(format!("hand cases 0.6 / 0.5 / {fog_val:.6}; 100 random fields within bounds"))
}

// 3
fn pairing_invariant() -> Outcome {
    let start = Instant::now();
    let cfg = DataConfig::default();
    for id in 0..1000u64 {
        let s = generate_sample(&cfg, 7, id).map_err(|e| e.to_string())?;
        let scene = gen_scene(s.scene.seed, cfg.height, cfg.width, cfg.class_count).map_err(|e| e.to_string())?;
        check(s.labels() == &scene.labels, format!("sample {id}: labels differ from its scene"))?;
        check(s.adverse.same_shape(s.clear()), format!("sample {id}: shapes differ"))?;
        let clear = compose_weather(scene, WeatherComposition::clear(), id).map_err(|e| e.to_string())?;
        check(
            clear.adverse.data() == clear.clear().data(),
            format!("sample {id}: clear composition changed the image"),
        )?;
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, format!("took {secs:.1}s"))?;
    Ok(format!("1000 samples, {secs:.1}s"))
}

fn scalar(g: &Graph, v: pairedseg::tapegrad::Var) -> f64 {
    g.value(v).item()
}

// 4
fn loss_identities() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let mut g = Graph::new();
    for _ in 0..50 {
        let a: Vec<f64> = (0..24).map(|_| r.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..24).map(|_| r.gen_range(-1.0..1.0)).collect();
        let c = r.gen_range(0.01..100.0);
        let va = g.constant(Tensor::new(vec![2, 3, 4], a.clone()).unwrap());
        let vb = g.constant(Tensor::new(vec![2, 3, 4], b).unwrap());
        let vc = g.constant(Tensor::new(vec![2, 3, 4], a.iter().map(|x| c * x).collect()).unwrap());
        let same = fcl(&mut g, va, va).map_err(|e| e.to_string())?;
        let ab = fcl(&mut g, va, vb).map_err(|e| e.to_string())?;
        let ba = fcl(&mut g, vb, va).map_err(|e| e.to_string())?;
        let scaled = fcl(&mut g, va, vc).map_err(|e| e.to_string())?;
        check(scalar(&g, same).abs() < 1e-12, "FCL(a, a) != 0")?;
        check((0.0..=2.0).contains(&scalar(&g, ab)), "FCL outside [0, 2]")?;
        check((scalar(&g, ab) - scalar(&g, ba)).abs() < 1e-12, "FCL not symmetric")?;
        check(scalar(&g, scaled).abs() < 1e-12, "FCL not scale invariant")?;
        let ld: Vec<f64> = (0..24).map(|_| r.gen_range(-3.0..3.0)).collect();
        let lc: Vec<f64> = (0..24).map(|_| r.gen_range(-3.0..3.0)).collect();
        let d = g.constant(Tensor::new(vec![3, 2, 4], ld).unwrap());
        let cl = g.constant(Tensor::new(vec![3, 2, 4], lc).unwrap());
        let dc = ocl(&mut g, d, cl, OclTarget::Soft).map_err(|e| e.to_string())?;
        let cd = ocl(&mut g, cl, d, OclTarget::Soft).map_err(|e| e.to_string())?;
        check((scalar(&g, dc) - scalar(&g, cd)).abs() < 1e-12, "OCL not symmetric")?;
    }

    // detach: the adverse term sends no gradient into the clear logits
    let mut g = Graph::new();
    let d = g.input(Tensor::new(vec![2, 1, 2], vec![0.3, -0.2, 0.1, 0.5]).unwrap());
    let c = g.input(Tensor::new(vec![2, 1, 2], vec![-0.4, 0.9, 0.2, 0.0]).unwrap());
    let term = ocl_term(&mut g, d, c, OclTarget::Soft).map_err(|e| e.to_string())?;
    let grads = g.backward(term).map_err(|e| e.to_string())?;
    check(
        grads.get(c).map_or(true, |gc| gc.iter().all(|&v| v == 0.0)),
        "gradient leaked through the detached target",
    )?;
    check(
        grads.get(d).is_some_and(|gd| gd.iter().any(|&v| v != 0.0)),
        "live branch received no gradient",
    )?;

    let mut g = Graph::new();
    let zeros = g.constant(Tensor::zeros(&[2, 1, 1]));
    let labels = LabelMap::new(1, 1, vec![1]).unwrap();
    let ce = ce_seg(&mut g, zeros, &labels).map_err(|e| e.to_string())?;
    let o = ocl(&mut g, zeros, zeros, OclTarget::Soft).map_err(|e| e.to_string())?;
    let ln2 = std::f64::consts::LN_2;
    check((scalar(&g, ce) - ln2).abs() < 1e-9, format!("uniform CE = {}", scalar(&g, ce)))?;
    check((scalar(&g, o) - 2.0 * ln2).abs() < 1e-9, format!("uniform OCL = {}", scalar(&g, o)))?;
    Ok(format!(
        "CE {:.9}, OCL {:.9}, FCL/OCL properties on 50 random cases",
        scalar(&g, ce),
        scalar(&g, o)
    ))
}

// 5
fn scheduler_contract() -> Outcome {
    let sched = |kind, weight, t0, ramp, k| LossSchedule {
        kind,
        weight,
        t0,
        ramp,
        k,
    };
    let step = sched(ScheduleKind::Step, 1.0, 10.0, (0.0, 10.0), 1.0);
    check(schedule_weight(&step, 9) == 0.0 && schedule_weight(&step, 10) == 1.0, "step threshold")?;
    let lin = sched(ScheduleKind::Linear, 2.0, 5.0, (0.0, 10.0), 1.0);
    check(schedule_weight(&lin, 5) == 1.0, "linear midpoint")?;
    check(schedule_weight(&lin, 0) == 0.0 && schedule_weight(&lin, 10) == 2.0, "linear endpoints")?;
    let sig = sched(ScheduleKind::Sigmoid, 0.8, 12.0, (0.0, 10.0), 0.5);
    check(schedule_weight(&sig, 12) == 0.4, "sigmoid midpoint")?;
    for kind in ScheduleKind::ALL {
        let s = LossSchedule::for_epochs(kind, 0.5, 40);
        let mut prev = f64::NEG_INFINITY;
        let mut t = 0.0;
        while t <= 3.0 * s.t0 {
            let w = s.weight_at(t);
            check(w >= prev && (0.0..=0.5).contains(&w), format!("{} not monotone at {t}", kind.name()))?;
            prev = w;
            t += 0.1;
        }
    }
    Ok("endpoints, midpoints and monotonicity over [0, 3·t0]".into())
}

// 6
fn injection_identity() -> Outcome {
    let embedder = Embedder::new(64, 0).map_err(|e| e.to_string())?;
    let prompts = embedder.prompt_set(&Registry::default_13());
    let image = gen_scene(11, 64, 64, 10).map_err(|e| e.to_string())?.clear;
    let build = |injection| {
        SegModel::init(
            ModelConfig {
                injection,
                ..ModelConfig::default()
            },
            3,
        )
    };
    let (off, mut off_store) = build(InjectionMode::Off).map_err(|e| e.to_string())?;
    let mut r = ChaCha8Rng::seed_from_u64(6);
    for mode in [InjectionMode::Clip, InjectionMode::Multiclip] {
        let (m, store) = build(mode).map_err(|e| e.to_string())?;
        // share backbone weights so only the injection path differs
        for id in off_store.ids().collect::<Vec<_>>() {
            let src = store.id(off_store.name(id)).map_err(|e| e.to_string())?;
            *off_store.value_mut(id) = store.value(src).clone();
        }
        let base = off.predict(&off_store, &image, None, None).map_err(|e| e.to_string())?;
        for case in 0..3 {
            let comp = pairedseg::weathersim::sample_composition(&mut r);
            let i_clip = embedder.embed_image_oracle(&comp, 0.02, case);
            let out = m
                .predict(&store, &image, Some(&i_clip), Some(&prompts))
                .map_err(|e| e.to_string())?;
            check(out == base, format!("{mode:?}: forward differs from injection off"))?;
        }
    }
    let (m, store) = build(InjectionMode::Clip).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let comp = pairedseg::weathersim::sample_composition(&mut r);
        let i_clip = embedder.embed_image_oracle(&comp, 0.02, case);
        let mut g = Graph::inference();
        let t = g.constant(prompts.matrix());
        let c = compute_injection(&mut g, &store, m.mlp().unwrap(), &i_clip, t).map_err(|e| e.to_string())?;
        let v = g.value(c.v.unwrap());
        check(v.data().iter().all(|&x| x >= 0.0), "negative simplex weight")?;
        worst = worst.max((v.data().iter().sum::<f64>() - 1.0).abs());
    }
    check(worst < 1e-9, format!("v sums off by {worst:e}"))?;
    let i_clip = embedder.embed_image_oracle(&WeatherComposition::pure(0), 0.0, 0);
    let mut g = Graph::inference();
    let t = g.constant(prompts.matrix());
    let c = compute_injection_multiclip(&mut g, &i_clip, t).map_err(|e| e.to_string())?;
    check(g.shape(c.tokens) == [13, 128], "MultiCLIP token shape")?;
    for (n, row) in g.value(c.tokens).data().chunks(128).enumerate() {
        check(row[..64] == *prompts.row(n) && row[64..] == i_clip[..], "MultiCLIP token layout")?;
    }
    Ok(format!("clip and multiclip bit-identical to off; |Σv − 1| ≤ {worst:.1e}; 13 tokens of [T_n ; I]"))
}

fn brute_force_miou(pred: &[u8], gt: &[u8], c: usize) -> f64 {
    let mut total = 0.0;
    let mut present = 0;
    for k in 0..c as u8 {
        let p: Vec<usize> = (0..pred.len()).filter(|&i| pred[i] == k).collect();
        let t: Vec<usize> = (0..gt.len()).filter(|&i| gt[i] == k).collect();
        let inter = p.iter().filter(|i| t.contains(i)).count();
        let union = p.len() + t.len() - inter;
        if union > 0 {
            total += inter as f64 / union as f64;
            present += 1;
        }
    }
    total / present as f64
}

// 7
fn miou_oracle() -> Outcome {
    let names = ["a", "b", "c"];
    let report = |pred: &[u8], gt: &[u8]| {
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(pred, gt).unwrap();
        iou(&cm, Split::Adverse, &names, None).unwrap().miou
    };
    let mut cm = ConfusionMatrix::new(2);
    cm.accumulate(&[0u8, 1, 1, 1], &[0u8, 0, 1, 1]).map_err(|e| e.to_string())?;
    let worked = iou(&cm, Split::Adverse, &names[..2], None).map_err(|e| e.to_string())?.miou;
    check((worked - 7.0 / 12.0).abs() < 1e-12, format!("worked example gave {worked}"))?;
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let cases = 20_000;
    for _ in 0..cases {
        let pred: Vec<u8> = (0..9).map(|_| r.gen_range(0..3)).collect();
        let gt: Vec<u8> = (0..9).map(|_| r.gen_range(0..3)).collect();
        let (a, b) = (report(&pred, &gt), brute_force_miou(&pred, &gt, 3));
        check((a - b).abs() < 1e-12, format!("{pred:?} vs {gt:?}: {a} != {b}"))?;
    }
    let digits = |mut x: usize| -> Vec<u8> {
        (0..4)
            .map(|_| {
                let d = (x % 3) as u8;
                x /= 3;
                d
            })
            .collect()
    };
    for p in 0..81 {
        for t in 0..81 {
            let (pred, gt) = (digits(p), digits(t));
            let (a, b) = (report(&pred, &gt), brute_force_miou(&pred, &gt, 3));
            check((a - b).abs() < 1e-12, format!("{pred:?} vs {gt:?}: {a} != {b}"))?;
        }
    }
    Ok(format!("2×2 example = 7/12; all 6561 2×2 pairs and {cases} random 3×3 grids match brute force"))
}

fn load_spec() -> Result<ExperimentSpec, String> {
    ExperimentSpec::from_json_file(&spec_path()).map_err(|e| e.to_string())
}

// 12
fn reproducibility() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = DataConfig {
        height: 32,
        width: 32,
        ..DataConfig::default()
    };
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let root = tmp.path().join(run);
        write_dataset(&root, &cfg, 12, 10, "hash").map_err(|e| e.to_string())?;
        let mut files: Vec<(String, Vec<u8>)> = Vec::new();
        let mut stack = vec![root.clone()];
        while let Some(d) = stack.pop() {
            for e in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
                let p = e.map_err(|e| e.to_string())?.path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    let rel = p.strip_prefix(&root).unwrap().display().to_string();
                    files.push((rel, std::fs::read(&p).map_err(|e| e.to_string())?));
                }
            }
        }
        files.sort();
        trees.push(files);
    }
    check(trees[0] == trees[1], "datasets differ")?;

    let model = ModelConfig {
        height: 32,
        width: 32,
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        mode: TrainMode::PairedFull,
        epochs: 2,
        seed: 12,
        ..TrainConfig::default()
    };
    let setup = Setup::new(model, train_cfg, EmbeddingConfig::default()).map_err(|e| e.to_string())?;
    let bench = pairedseg::dataset::generate_benchmark(
        &DataConfig {
            train_pairs: 6,
            test_pairs: 4,
            ..cfg
        },
        12,
    )
    .map_err(|e| e.to_string())?;
    let data = prepare(&setup, &bench.train).map_err(|e| e.to_string())?;
    let test = prepare(&setup, &bench.test).map_err(|e| e.to_string())?;
    let mut artifacts = Vec::new();
    for _ in 0..2 {
        let out = train(&setup, &data, None).map_err(|e| e.to_string())?;
        let ckpt = checkpoint::encode(out.store.named_values());
        let report = evaluate(&out.model, &out.store, &setup, &test, Split::Adverse).map_err(|e| e.to_string())?;
        let cfg = GradExpConfig {
            trials: 2,
            steps: 2,
            pretrain_epochs: 0,
            ..GradExpConfig::default()
        };
        let (a, b) = data.split_at(3);
        let ge = gradient_experiment(&setup, &[], a, b, &cfg).map_err(|e| e.to_string())?;
        artifacts.push((
            ckpt,
            serde_json::to_string(&report).unwrap(),
            serde_json::to_string(&ge).unwrap(),
        ));
    }
    check(artifacts[0].0 == artifacts[1].0, "checkpoints differ")?;
    check(artifacts[0].1 == artifacts[1].1, "eval reports differ")?;
    check(artifacts[0].2 == artifacts[1].2, "gradient reports differ")?;
    Ok("dataset files, checkpoints, eval and gradient reports byte-identical across reruns".into())
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("PASS {name}: {detail} ({secs:.1}s)");
            true
        }
        Err(why) => {
            println!("FAIL {name}: {why} ({secs:.1}s)");
            false
        }
    }
}

fn verdict_outcome(v: Result<pairedseg::experiments::Verdict, pairedseg::Error>) -> Outcome {
    let v = v.map_err(|e| e.to_string())?;
    let line = v.line();
    if v.pass {
        Ok(line)
    } else {
        Err(line)
    }
}

fn main() -> ExitCode {
    let fast: [(&str, fn() -> Outcome); 8] = [
        ("1 autodiff correctness", autodiff_correctness),
        ("2 image formation", image_formation),
        ("3 pairing invariant", pairing_invariant),
        ("4 loss identities", loss_identities),
        ("5 scheduler contract", scheduler_contract),
        ("6 injection identity", injection_identity),
        ("7 mIoU oracle", miou_oracle),
        ("12 reproducibility", reproducibility),
    ];
    let mut ok = 0;
    let mut total = 0;
    for (name, f) in fast {
        total += 1;
        ok += usize::from(run(name, f));
    }

    let spec = load_spec();
    let matrix: Result<ModeMatrix, String> = spec
        .clone()
        .and_then(|s| run_modes(&s).map_err(|e| e.to_string()));
    let with = |f: fn(&ExperimentSpec, &ModeMatrix) -> Result<_, pairedseg::Error>| -> Outcome {
        match (&spec, &matrix) {
            (Ok(s), Ok(m)) => verdict_outcome(f(s, m)),
            (Err(e), _) | (_, Err(e)) => Err(e.clone()),
        }
    };
    total += 4;
    ok += usize::from(run("8 paired vs adverse-only ordering", || with(exp_paired_vs_adverse)));
    ok += usize::from(run("9 clear-split non-regression", || with(exp_clear_non_regression)));
    ok += usize::from(run("10 composition recovery", || with(exp_composition_recovery)));
    ok += usize::from(run("11 gradient priority", || {
        let s = spec.clone()?;
        let g = exp_gradient_priority(&s).map_err(|e| e.to_string())?;
        let control = format!(
            "; swapped control G_d={:.4} G_c={:.4}",
            g.swapped.mean_gd, g.swapped.mean_gc
        );
        verdict_outcome(Ok(g.verdict)).map(|l| l + &control).map_err(|l| l + &control)
    }));
    println!("acceptance: {ok}/{total} criteria passed");
    // a failing exit stops `cargo test` before later targets run, so it is opt-in
    let strict = std::env::var_os("ACCEPTANCE_STRICT").is_some_and(|v| v == "1");
    if ok == total || !strict {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
