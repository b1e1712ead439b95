//! Central-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AutodiffError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Finite-difference step.
pub const STEP: f64 = 1e-5;

/// Every primitive accepted by [`finite_diff_check`].
pub const PRIMITIVES: &[&str] = &[
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "add_scalar",
    "bias_add",
    "matmul",
    "transpose",
    "conv3x3",
    "conv3x3_s2",
    "upsample2x",
    "upsample4x",
    "relu",
    "softmax",
    "log_softmax",
    "log",
    "exp",
    "sum",
    "mean",
    "concat",
    "l2_norm",
    "dot",
    "reshape",
];

/// Largest relative error `|analytic − numeric| / max(1e-8, |numeric|)` over
/// every entry of every input, where `build` maps the input leaves to a scalar.
pub fn check_gradients<F>(inputs: &[Tensor], build: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            grads
                .get(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.len()])
        })
        .collect();

    let eval = |probe: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = probe.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let orig = input.data()[j];
            probe[i].data_mut()[j] = orig + STEP;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = orig - STEP;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let err = (analytic[i][j] - numeric).abs() / numeric.abs().max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

struct Sampler(ChaCha8Rng);

impl Sampler {
    fn uniform(&mut self, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.0.gen_range(-1.0..1.0)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    /// Uniform(−1, 1) redrawn until every entry satisfies `keep`.
    fn uniform_where(&mut self, shape: &[usize], keep: impl Fn(f64) -> bool) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| loop {
                let v = self.0.gen_range(-1.0..1.0);
                if keep(v) {
                    break v;
                }
            })
            .collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    /// Weights with magnitude in [0.5, 1.5] and random sign, used to project an
    /// op's output onto a scalar without creating near-zero gradients.
    fn weights(&mut self, n: usize) -> Tensor {
        let data = (0..n)
            .map(|_| {
                let m = self.0.gen_range(0.5..1.5);
                if self.0.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect();
        Tensor::from_vec(data)
    }
}

/// Projects `out` onto a scalar with fixed random weights.
fn project(g: &mut Graph, out: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.clone());
    g.dot(out, w)
}

/// Runs [`check_gradients`] for one registered primitive on seeded inputs.
pub fn finite_diff_check(op_name: &str, seed: u64) -> Result<f64> {
    let mut s = Sampler(ChaCha8Rng::seed_from_u64(seed));
    type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;
    let (inputs, out_len, op): (Vec<Tensor>, usize, Build) = match op_name {
        "add" => (
            vec![s.uniform(&[3, 4]), s.uniform(&[3, 4])],
            12,
            Box::new(|g, v| g.add(v[0], v[1])),
        ),
        "sub" => (
            vec![s.uniform(&[3, 4]), s.uniform(&[3, 4])],
            12,
            Box::new(|g, v| g.sub(v[0], v[1])),
        ),
        "mul" => (
            vec![s.uniform(&[3, 4]), s.uniform(&[3, 4])],
            12,
            Box::new(|g, v| g.mul(v[0], v[1])),
        ),
        "div" => (
            vec![s.uniform(&[3, 4]), s.uniform_where(&[3, 4], |v| v.abs() > 0.3)],
            12,
            Box::new(|g, v| g.div(v[0], v[1])),
        ),
        "scale" => (vec![s.uniform(&[3, 4])], 12, Box::new(|g, v| Ok(g.scale(v[0], 1.7)))),
        "add_scalar" => (
            vec![s.uniform(&[3, 4])],
            12,
            Box::new(|g, v| Ok(g.add_scalar(v[0], -0.4))),
        ),
        "bias_add" => (
            vec![s.uniform(&[2, 3, 4]), s.uniform(&[3])],
            24,
            Box::new(|g, v| g.bias_add(v[0], v[1], 1)),
        ),
        "matmul" => (
            vec![s.uniform(&[3, 4]), s.uniform(&[4, 2])],
            6,
            Box::new(|g, v| g.matmul(v[0], v[1])),
        ),
        "transpose" => (vec![s.uniform(&[3, 4])], 12, Box::new(|g, v| g.transpose(v[0]))),
        "conv3x3" => (
            vec![s.uniform(&[2, 4, 4]), s.uniform(&[3, 2, 3, 3]), s.uniform(&[3])],
            48,
            Box::new(|g, v| g.conv3x3(v[0], v[1], v[2], 1)),
        ),
        "conv3x3_s2" => (
            vec![s.uniform(&[2, 4, 4]), s.uniform(&[3, 2, 3, 3]), s.uniform(&[3])],
            12,
            Box::new(|g, v| g.conv3x3(v[0], v[1], v[2], 2)),
        ),
        "upsample2x" => (
            vec![s.uniform(&[2, 3, 3])],
            72,
            Box::new(|g, v| g.upsample(v[0], 2)),
        ),
        "upsample4x" => (
            vec![s.uniform(&[1, 3, 2])],
            96,
            Box::new(|g, v| g.upsample(v[0], 4)),
        ),
        "relu" => (
            vec![s.uniform_where(&[3, 4], |v| v.abs() >= 1e-3)],
            12,
            Box::new(|g, v| Ok(g.relu(v[0]))),
        ),
        "softmax" => (
            vec![s.uniform(&[3, 2, 2])],
            12,
            Box::new(|g, v| g.softmax(v[0], 0)),
        ),
        "log_softmax" => (
            vec![s.uniform(&[2, 3, 2])],
            12,
            Box::new(|g, v| g.log_softmax(v[0], 1)),
        ),
        "log" => (
            vec![s.uniform_where(&[3, 4], |v| v.abs() > 0.2)],
            12,
            Box::new(|g, v| {
                // ln(|x|) through x², keeping the argument positive
                let sq = g.mul(v[0], v[0])?;
                Ok(g.ln(sq))
            }),
        ),
        "exp" => (vec![s.uniform(&[3, 4])], 12, Box::new(|g, v| Ok(g.exp(v[0])))),
        "sum" => (vec![s.uniform(&[3, 4])], 1, Box::new(|g, v| Ok(g.sum(v[0])))),
        "mean" => (vec![s.uniform(&[3, 4])], 1, Box::new(|g, v| Ok(g.mean(v[0])))),
        "concat" => (
            vec![s.uniform(&[2, 2, 3]), s.uniform(&[2, 1, 3])],
            18,
            Box::new(|g, v| g.concat(&[v[0], v[1]], 1)),
        ),
        "l2_norm" => (vec![s.uniform(&[3, 4])], 1, Box::new(|g, v| Ok(g.l2_norm(v[0])))),
        "dot" => (
            vec![s.uniform(&[3, 4]), s.uniform(&[3, 4])],
            1,
            Box::new(|g, v| g.dot(v[0], v[1])),
        ),
        "reshape" => (
            vec![s.uniform(&[3, 4])],
            12,
            Box::new(|g, v| g.reshape(v[0], &[2, 6])),
        ),
        other => return Err(AutodiffError::UnknownOp(other.to_string())),
    };
    let weights = s.weights(out_len);
    check_gradients(&inputs, move |g, v| {
        let out = op(g, v)?;
        project(g, out, &weights)
    })
}
