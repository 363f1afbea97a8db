use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{Graph, Real};
use crate::model::{pose_loss, Aggregation, HierarchyPlan, Model, ModelConfig, ModelError, TargetNorm, TemporalHead};

use super::metrics::{rotation_error_deg, translation_error, EvalReport, RotationMetric, WindowError};
use super::{Optimizer, RunConfig, Sample, TrainError};

pub const LOSS_CSV_HEADER: &str = "epoch,mean_loss,median_trans,median_rot";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    pub mean_loss: f64,
    /// NaN when the epoch was not evaluated.
    pub median_trans: f64,
    pub median_rot: f64,
}

impl EpochRecord {
    pub fn csv(&self) -> String {
        format!("{},{:?},{:?},{:?}", self.epoch, self.mean_loss, self.median_trans, self.median_rot)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: Model<T>,
    /// Snapshot with the lowest validation T+R (lowest epoch loss when no
    /// evaluation ran).
    pub best: Model<T>,
    pub best_epoch: usize,
    pub curve: Vec<EpochRecord>,
}

/// `[p (normalized), euler]` regression targets.
pub fn targets_for(samples: &[&Sample], norm: &TargetNorm) -> Vec<[f64; 6]> {
    samples
        .iter()
        .map(|s| {
            let p = norm.normalize(s.label.p);
            let q = s.label.q_euler;
            [p[0], p[1], p[2], q[0], q[1], q[2]]
        })
        .collect()
}

/// Eval-mode per-window errors, each window forwarded on its own.
pub fn evaluate<T: Real>(
    model: &Model<T>,
    samples: &[Sample],
    metric: RotationMetric,
) -> Result<EvalReport, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::Data("cannot evaluate an empty window set".into()));
    }
    let errors = samples
        .par_iter()
        .map(|s| {
            let pred = model.predict(&[&s.plan])?[0];
            Ok(WindowError {
                window_id: s.window_id,
                trans_err: translation_error(pred.p_hat, s.label.p),
                rot_err: rotation_error_deg(pred.q_hat, s.label.q_quat, metric),
            })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    EvalReport::from_errors(errors)
}

/// Runs `cfg.epochs` epochs of minibatch training. The model's target
/// normalization is fitted to `train_set` first. `val_set` (or the training
/// set when empty) is evaluated every `cfg.eval_every` epochs. Training is
/// sequential; given the same inputs and config the loss curve and weights
/// are bit-identical.
pub fn train<T: Real>(
    mut model: Model<T>,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &RunConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::Data("training set is empty".into()));
    }
    let labels: Vec<[f64; 3]> = train_set.iter().map(|s| s.label.p).collect();
    model.target_norm = TargetNorm::fit(&labels);
    let eval_set = if val_set.is_empty() { train_set } else { val_set };

    let mut opt = Optimizer::new(cfg.optim, model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0, model.clone());

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let lr = cfg.optim.lr_at(epoch);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let loss = train_step(&mut model, &mut opt, &batch, lr, &cfg.model).map_err(|e| match e {
                TrainError::Model(ModelError::NonFinite { stage }) => {
                    TrainError::NonFiniteLoss { epoch: epoch + 1, batch: b, detail: format!("non-finite {stage}") }
                }
                TrainError::NonFiniteLoss { detail, .. } => {
                    TrainError::NonFiniteLoss { epoch: epoch + 1, batch: b, detail }
                }
                other => other,
            })?;
            total += loss * batch.len() as f64;
        }
        let mean_loss = total / train_set.len() as f64;
        let evaluated = cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs);
        let (mt, mr, score) = if evaluated {
            let r = evaluate(&model, eval_set, RotationMetric::Geodesic)?;
            (r.median_trans_err, r.median_rot_err, r.t_plus_r)
        } else {
            (f64::NAN, f64::NAN, f64::NAN)
        };
        let score = if cfg.eval_every > 0 { score } else { mean_loss };
        if score < best.0 {
            best = (score, epoch + 1, model.clone());
        }
        let rec = EpochRecord { epoch: epoch + 1, mean_loss, median_trans: mt, median_rot: mr };
        on_epoch(&rec);
        curve.push(rec);
    }
    let (_, best_epoch, best) = best;
    Ok(TrainOutcome { model, best, best_epoch, curve })
}

/// One forward/backward/update on a batch; returns the batch loss.
fn train_step<T: Real>(
    model: &mut Model<T>,
    opt: &mut Optimizer<T>,
    batch: &[&Sample],
    lr: f64,
    cfg: &ModelConfig,
) -> Result<f64, TrainError> {
    let plans: Vec<&HierarchyPlan> = batch.iter().map(|s| &s.plan).collect();
    let targets = targets_for(batch, &model.target_norm);
    let mut g = Graph::new();
    let bound = model.params().bind(&mut g);
    let out = model.forward(&mut g, &bound, &plans, true)?;
    let loss = pose_loss(&mut g, out.pose, &targets, bound.vars(), cfg)?;
    let value = g.data(loss)[0].to_f64_lossy();
    if !value.is_finite() {
        return Err(TrainError::NonFiniteLoss { epoch: 0, batch: 0, detail: format!("loss = {value}") });
    }
    g.backward(loss)?;
    let grads = bound.grads(&g);
    opt.step(model.params_mut(), &grads, lr);
    model.apply_batch_stats(&out.bn_stats);
    Ok(value)
}

/// The six head/aggregation combinations, from plain max-pooled
/// hierarchy to Bi-LSTM with temporal aggregation.
pub fn ablation_matrix(base: &ModelConfig) -> Vec<(String, ModelConfig)> {
    let heads = [(TemporalHead::None, "hs"), (TemporalHead::Lstm, "lstm"), (TemporalHead::BiLstm, "bilstm")];
    let aggs = [(Aggregation::Max, "max"), (Aggregation::Temporal, "temporal")];
    let mut out = Vec::with_capacity(6);
    for (head, hn) in heads {
        for (agg, an) in aggs {
            let cfg = ModelConfig { head, aggregation: agg, ..base.clone() };
            out.push((format!("{}_{hn}_{an}", out.len() + 1), cfg));
        }
    }
    out
}
