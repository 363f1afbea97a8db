//! Finite-difference checks for every tape operator and for composed
//! network pieces, at 64-bit precision.
//!
//! Each case reduces the op output to a scalar through a random weighting
//! so that ops whose plain sum is constant (softmax, batch norm) still get
//! a non-trivial gradient.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::gradcheck::{check, DEFAULT_STEP};
use crate::autodiff::nn::{lstm_cell, LstmWeights};
use crate::autodiff::{AutodiffError, BatchNormMode, Graph, Tensor, Var};
use crate::model::{pose_loss, temporal_aggregate, Bound, HierarchyPlan, Model, ModelConfig, ModelError};

/// Pass threshold on the max relative error.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradRow {
    pub name: String,
    pub cases: usize,
    pub max_rel_err: f64,
}

impl GradRow {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var, AutodiffError>;

struct Case {
    inputs: Vec<Tensor<f64>>,
    build: Box<Build>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Values bounded away from zero, for ops with a kink there.
fn off_zero(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data)
}

/// `sum(out * w)` for a fixed random `w`.
fn weighted(g: &mut Graph<f64>, out: Var, w: &Tensor<f64>) -> Result<Var, AutodiffError> {
    let w = g.constant(w.clone().reshaped(g.shape(out).to_vec()));
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

fn case<F>(inputs: Vec<Tensor<f64>>, out_len: usize, rng: &mut ChaCha8Rng, f: F) -> Case
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, AutodiffError> + 'static,
{
    let w = uniform(rng, vec![out_len], -1.0, 1.0);
    Case {
        inputs,
        build: Box::new(move |g, v| {
            let out = f(g, v)?;
            weighted(g, out, &w)
        }),
    }
}

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(1..=4)
}

/// One random case of the named primitive.
fn op_case(name: &str, rng: &mut ChaCha8Rng) -> Case {
    let (m, k, n) = (dim(rng), dim(rng), dim(rng));
    match name {
        "matmul" => {
            let (a, b) = (uniform(rng, vec![m, k], -1.0, 1.0), uniform(rng, vec![k, n], -1.0, 1.0));
            case(vec![a, b], m * n, rng, |g, v| g.matmul(v[0], v[1]))
        }
        "batch_matmul" => {
            let bs = dim(rng);
            let (a, b) = (uniform(rng, vec![bs, m, k], -1.0, 1.0), uniform(rng, vec![bs, k, n], -1.0, 1.0));
            case(vec![a, b], bs * m * n, rng, |g, v| g.batch_matmul(v[0], v[1]))
        }
        "add" | "sub" | "mul" => {
            let (a, b) = (uniform(rng, vec![m, n], -1.0, 1.0), uniform(rng, vec![m, n], -1.0, 1.0));
            let op = name.to_string();
            case(vec![a, b], m * n, rng, move |g, v| match op.as_str() {
                "add" => g.add(v[0], v[1]),
                "sub" => g.sub(v[0], v[1]),
                _ => g.mul(v[0], v[1]),
            })
        }
        "add_bias" => {
            let (x, b) = (uniform(rng, vec![m, k, n], -1.0, 1.0), uniform(rng, vec![n], -1.0, 1.0));
            case(vec![x, b], m * k * n, rng, |g, v| g.add_bias(v[0], v[1]))
        }
        "scale" => {
            let f = rng.gen_range(-2.0..2.0);
            case(vec![uniform(rng, vec![m, n], -1.0, 1.0)], m * n, rng, move |g, v| Ok(g.scale(v[0], f)))
        }
        "relu" => case(vec![off_zero(rng, vec![m, n])], m * n, rng, |g, v| Ok(g.relu(v[0]))),
        "sigmoid" => case(vec![uniform(rng, vec![m, n], -3.0, 3.0)], m * n, rng, |g, v| Ok(g.sigmoid(v[0]))),
        "tanh" => case(vec![uniform(rng, vec![m, n], -2.0, 2.0)], m * n, rng, |g, v| Ok(g.tanh(v[0]))),
        "softmax" => {
            let axis = rng.gen_range(0..3);
            let x = uniform(rng, vec![m, k + 1, n], -2.0, 2.0);
            case(vec![x], m * (k + 1) * n, rng, move |g, v| g.softmax(v[0], axis))
        }
        "concat" => {
            let parts: Vec<Tensor<f64>> = (0..rng.gen_range(1..=3))
                .map(|_| {
                    let w = dim(rng);
                    uniform(rng, vec![m, k, w], -1.0, 1.0)
                })
                .collect();
            let total: usize = parts.iter().map(Tensor::numel).sum();
            case(parts, total, rng, |g, v| g.concat(v))
        }
        "reshape" => case(vec![uniform(rng, vec![m, k * n], -1.0, 1.0)], m * k * n, rng, move |g, v| {
            g.reshape(v[0], vec![m * k, n])
        }),
        "narrow" => {
            let cols = k + 2;
            let start = rng.gen_range(0..cols);
            let len = rng.gen_range(1..=cols - start);
            case(vec![uniform(rng, vec![m, cols], -1.0, 1.0)], m * len, rng, move |g, v| g.narrow(v[0], start, len))
        }
        "gather_rows" => {
            let index: Vec<usize> = (0..rng.gen_range(1..=6)).map(|_| rng.gen_range(0..m)).collect();
            let out = index.len() * n;
            case(vec![uniform(rng, vec![m, n], -1.0, 1.0)], out, rng, move |g, v| g.gather_rows(v[0], &index))
        }
        "max_axis1" => {
            // Distinct values with gaps far wider than the FD step.
            let mut vals: Vec<f64> = (0..m * k * n).map(|i| i as f64 * 0.1 + rng.gen_range(0.0..0.01)).collect();
            vals.shuffle(rng);
            case(vec![Tensor::new(vec![m, k, n], vals)], m * n, rng, |g, v| g.max_axis1(v[0]))
        }
        "row_norm" => case(vec![off_zero(rng, vec![m, n])], m, rng, |g, v| Ok(g.row_norm(v[0]))),
        "row_sum_squares" => {
            case(vec![uniform(rng, vec![m, n], -1.0, 1.0)], m, rng, |g, v| Ok(g.row_sum_squares(v[0])))
        }
        "sum" => case(vec![uniform(rng, vec![m, n], -1.0, 1.0)], 1, rng, |g, v| Ok(g.sum(v[0]))),
        "mean" => case(vec![uniform(rng, vec![m, n], -1.0, 1.0)], 1, rng, |g, v| Ok(g.mean(v[0]))),
        "sum_squares" => case(vec![uniform(rng, vec![m, n], -1.0, 1.0)], 1, rng, |g, v| Ok(g.sum_squares(v[0]))),
        "batch_norm_train" => {
            let rows = m + 2;
            let x = uniform(rng, vec![rows, n], -1.0, 1.0);
            let (gm, bt) = (uniform(rng, vec![n], 0.5, 1.5), uniform(rng, vec![n], -0.5, 0.5));
            case(vec![x, gm, bt], rows * n, rng, |g, v| {
                Ok(g.batch_norm(v[0], v[1], v[2], BatchNormMode::Train { eps: 1e-5 })?.0)
            })
        }
        "batch_norm_eval" => {
            let x = uniform(rng, vec![m, n], -1.0, 1.0);
            let (gm, bt) = (uniform(rng, vec![n], 0.5, 1.5), uniform(rng, vec![n], -0.5, 0.5));
            let mean: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let var: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..2.0)).collect();
            case(vec![x, gm, bt], m * n, rng, move |g, v| {
                Ok(g.batch_norm(v[0], v[1], v[2], BatchNormMode::Eval { mean: &mean, var: &var, eps: 1e-5 })?.0)
            })
        }
        other => unreachable!("unknown op {other}"),
    }
}

pub const OPS: &[&str] = &[
    "matmul",
    "batch_matmul",
    "add",
    "sub",
    "mul",
    "add_bias",
    "scale",
    "relu",
    "sigmoid",
    "tanh",
    "softmax",
    "concat",
    "reshape",
    "narrow",
    "gather_rows",
    "max_axis1",
    "row_norm",
    "row_sum_squares",
    "sum",
    "mean",
    "sum_squares",
    "batch_norm_train",
    "batch_norm_eval",
];

fn lstm_case(rng: &mut ChaCha8Rng, steps: usize) -> Case {
    let (b, d, h) = (2, 3, 4);
    let inputs = vec![
        uniform(rng, vec![b, steps * d], -1.0, 1.0),
        uniform(rng, vec![d, 4 * h], -0.5, 0.5),
        uniform(rng, vec![h, 4 * h], -0.5, 0.5),
        uniform(rng, vec![4 * h], -0.5, 0.5),
    ];
    case(inputs, b * steps * h, rng, move |g, v| {
        let w = LstmWeights { w: v[1], u: v[2], b: v[3] };
        let mut hs = g.constant(Tensor::zeros(vec![b, h]));
        let mut cs = g.constant(Tensor::zeros(vec![b, h]));
        let mut outs = Vec::with_capacity(steps);
        for t in 0..steps {
            let x_t = g.narrow(v[0], t * d, d)?;
            (hs, cs) = lstm_cell(g, x_t, hs, cs, &w)?;
            outs.push(hs);
        }
        g.concat(&outs)
    })
}

fn aggregate_case(rng: &mut ChaCha8Rng) -> Case {
    let (groups, k, d) = (dim(rng), dim(rng) + 1, dim(rng));
    let inputs = vec![
        uniform(rng, vec![groups * k, d], -1.0, 1.0),
        uniform(rng, vec![d, 1], -1.0, 1.0),
        uniform(rng, vec![1], -1.0, 1.0),
    ];
    case(inputs, groups * d, rng, move |g, v| Ok(temporal_aggregate(g, v[0], v[1], v[2], k)?.0))
}

fn model_error(e: ModelError) -> AutodiffError {
    match e {
        ModelError::Autodiff(e) => e,
        other => AutodiffError::Invalid(other.to_string()),
    }
}

/// Toy network used by the composed checks.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        n_points: 32,
        stage_points: vec![16, 8, 4],
        stage_dims: vec![4, 8, 16],
        k: 4,
        regressor_hidden: 8,
        ..ModelConfig::standard()
    }
}

fn random_plans(rng: &mut ChaCha8Rng, cfg: &ModelConfig, batch: usize) -> Vec<HierarchyPlan> {
    (0..batch)
        .map(|_| {
            let mut pts: Vec<[f64; 3]> = (0..cfg.n_points).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
            pts.sort_by(|a, b| a[2].total_cmp(&b[2]));
            HierarchyPlan::build(&pts, cfg).expect("toy plan")
        })
        .collect()
}

/// Composed check over a model's parameters. `part` picks the piece:
/// first stage, regressor, or the whole network plus loss.
fn model_case(rng: &mut ChaCha8Rng, part: &'static str) -> Case {
    let cfg = toy_config();
    let model = Model::<f64>::new(cfg.clone(), rng.gen()).expect("toy config");
    let plans = random_plans(rng, &cfg, 2);
    let mut inputs: Vec<Tensor<f64>> = model.params().iter().map(|(_, t)| t.clone()).collect();
    // Nudge BN affine terms off their init so their gradients are generic.
    for (t, (name, _)) in inputs.iter_mut().zip(model.params().iter()) {
        if name.ends_with(".gamma") || name.ends_with(".beta") {
            t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.2..0.2));
        }
    }
    let pooled = uniform(rng, vec![2, cfg.pooled_dim()], -1.0, 1.0);
    let targets: Vec<[f64; 6]> = (0..2).map(|_| [(); 6].map(|_| rng.gen_range(-1.0..1.0))).collect();
    let out_len = match part {
        "stage" => 2 * cfg.stage_points[0] * cfg.stage_dims[0],
        "regressor" => 12,
        _ => 1,
    };
    if part == "regressor" {
        inputs.push(pooled);
    }
    case(inputs, out_len, rng, move |g, v| {
        let bound = Bound::from_vars(v[..model.params().len()].to_vec());
        let refs: Vec<&HierarchyPlan> = plans.iter().collect();
        match part {
            "stage" => {
                let mut stats = Vec::new();
                let out = model.hierarchy_stage(g, &bound, 0, &refs, None, true, &mut stats).map_err(model_error)?;
                Ok(out.features)
            }
            "regressor" => model.regress(g, &bound, v[v.len() - 1]).map_err(model_error),
            _ => {
                let out = model.forward(g, &bound, &refs, true).map_err(model_error)?;
                pose_loss(g, out.pose, &targets, bound.vars(), model.config())
            }
        }
    })
}

fn run_cases(name: &str, cases: Vec<Case>) -> Result<GradRow, AutodiffError> {
    let n = cases.len();
    let mut worst = 0.0f64;
    for c in cases {
        let r = check(&c.inputs, DEFAULT_STEP, |g, v| (c.build)(g, v))?;
        worst = worst.max(r.max_rel_err);
    }
    Ok(GradRow { name: name.to_string(), cases: n, max_rel_err: worst })
}

/// Runs `cases` random cases per primitive and per composed check
/// (temporal aggregation, 16-step LSTM, first stage, regressor). The full
/// toy network with loss gets a quarter as many.
pub fn run_suite(cases: usize, seed: u64) -> Result<Vec<GradRow>, AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &op in OPS {
        let cs = (0..cases).map(|_| op_case(op, &mut rng)).collect();
        rows.push(run_cases(op, cs)?);
    }
    let few = (cases / 4).max(1);
    rows.push(run_cases("temporal_aggregate", (0..cases).map(|_| aggregate_case(&mut rng)).collect())?);
    rows.push(run_cases("lstm_16_steps", (0..cases).map(|_| lstm_case(&mut rng, 16)).collect())?);
    rows.push(run_cases("stage", (0..cases).map(|_| model_case(&mut rng, "stage")).collect())?);
    rows.push(run_cases("regressor", (0..cases).map(|_| model_case(&mut rng, "regressor")).collect())?);
    rows.push(run_cases("model_loss", (0..few).map(|_| model_case(&mut rng, "model")).collect())?);
    Ok(rows)
}

pub fn render_table(rows: &[GradRow]) -> String {
    let mut out = format!("{:<20} {:>6} {:>12}  status\n", "check", "cases", "max_rel_err");
    for r in rows {
        out.push_str(&format!(
            "{:<20} {:>6} {:>12.3e}  {}\n",
            r.name,
            r.cases,
            r.max_rel_err,
            if r.passed() { "ok" } else { "FAIL" }
        ));
    }
    out
}
