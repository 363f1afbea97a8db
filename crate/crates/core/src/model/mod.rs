//! The point-based pose network.
//!
//! A forward pass runs `s_num` hierarchy stages over precomputed
//! [`HierarchyPlan`]s, each stage being
//!
//! ```text
//! gather [rel coords | member feats | centroid feats] -> linear pre-projection
//!   -> local residual extractor -> aggregation over K -> global residual extractor
//! ```
//!
//! followed by a recurrent head with attention pooling over the final
//! stage's time-ordered points and a two-layer regressor emitting
//! `[p_x, p_y, p_z, roll, pitch, yaw]`.

pub mod checkpoint;
mod config;
mod params;
mod plan;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::nn::{apply_batch_norm, linear, lstm_step_projected, rnn_step_projected, RunningStats};
use crate::autodiff::{AutodiffError, BatchStats, Graph, Real, Tensor, Var};
use crate::point_ops::{random_cloud, BenchRow, PointOpsError};

pub use config::{Aggregation, CellKind, LossKind, ModelConfig, TemporalHead, STANDARD_DIMS, TINY_DIMS};
pub use params::{Bound, ParamId, ParamStore};
pub use plan::{HierarchyPlan, StagePlan};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Points(#[from] PointOpsError),
    #[error("non-finite activations in {stage}")]
    NonFinite { stage: String },
    #[error("batch: {0}")]
    Batch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy)]
pub struct LinearIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct BnIds {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running: usize,
}

/// Bottleneck residual block `f(x + BN(MLP2(f(BN(MLP1(x))))))`.
#[derive(Debug, Clone, Copy)]
pub struct ExtractorIds {
    pub mlp1: LinearIds,
    pub bn1: BnIds,
    pub mlp2: LinearIds,
    pub bn2: BnIds,
}

#[derive(Debug, Clone, Copy)]
pub struct StageIds {
    pub d_in: usize,
    pub d: usize,
    pub pre_proj: LinearIds,
    pub local: ExtractorIds,
    pub aggregation: Option<LinearIds>,
    pub global: ExtractorIds,
}

#[derive(Debug, Clone, Copy)]
pub struct DirectionIds {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub out: LinearIds,
}

#[derive(Debug, Clone, Copy)]
pub struct HeadIds {
    pub forward: DirectionIds,
    pub backward: Option<DirectionIds>,
    pub attention: LinearIds,
}

/// Affine map between metric translations and regression targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetNorm {
    pub p_mean: [f64; 3],
    pub p_scale: f64,
}

impl Default for TargetNorm {
    fn default() -> Self {
        Self { p_mean: [0.0; 3], p_scale: 1.0 }
    }
}

impl TargetNorm {
    /// Centres on the mean translation and scales the largest absolute
    /// deviation to 1.
    pub fn fit(translations: &[[f64; 3]]) -> Self {
        if translations.is_empty() {
            return Self::default();
        }
        let n = translations.len() as f64;
        let mut mean = [0.0; 3];
        for p in translations {
            for a in 0..3 {
                mean[a] += p[a] / n;
            }
        }
        let spread =
            translations.iter().flat_map(|p| (0..3).map(move |a| (p[a] - mean[a]).abs())).fold(0.0f64, f64::max);
        Self { p_mean: mean, p_scale: if spread > 1e-12 { spread } else { 1.0 } }
    }

    pub fn normalize(&self, p: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| (p[a] - self.p_mean[a]) / self.p_scale)
    }

    pub fn denormalize(&self, p: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| p[a] * self.p_scale + self.p_mean[a])
    }
}

/// Regressed pose in metric units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosePrediction {
    pub p_hat: [f64; 3],
    /// Z-Y-X Euler angles `[roll, pitch, yaw]`, radians.
    pub q_hat: [f64; 3],
}

/// Outputs of one stage for the whole batch.
#[derive(Debug, Clone, Copy)]
pub struct StageOutput {
    /// `[B * N_stage, D_stage]`
    pub features: Var,
    /// `[B * N_stage, 1, K]` softmax weights for temporal aggregation.
    pub attention: Option<Var>,
}

#[derive(Debug)]
pub struct ForwardOutput<T> {
    /// `[B, 6]` in normalized target space.
    pub pose: Var,
    pub stages: Vec<StageOutput>,
    /// `[B, 1, N_last]` attention over the final stage's points.
    pub head_attention: Option<Var>,
    /// Training-mode batch statistics keyed by running-stat slot.
    pub bn_stats: Vec<(usize, BatchStats<T>)>,
}

struct Builder<T> {
    params: ParamStore<T>,
    running: Vec<(String, RunningStats<T>)>,
    rng: ChaCha8Rng,
}

impl<T: Real> Builder<T> {
    fn uniform(&mut self, shape: Vec<usize>, bound: f64) -> Tensor<T> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64_lossy(self.rng.gen_range(-bound..=bound))).collect();
        Tensor::new(shape, data)
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> LinearIds {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = self.uniform(vec![fan_in, fan_out], bound);
        let b = self.uniform(vec![fan_out], bound);
        LinearIds { w: self.params.add(format!("{name}.weight"), w), b: self.params.add(format!("{name}.bias"), b) }
    }

    fn bn(&mut self, name: &str, channels: usize) -> BnIds {
        let gamma = self.params.add(format!("{name}.gamma"), Tensor::full(vec![channels], T::one()));
        let beta = self.params.add(format!("{name}.beta"), Tensor::zeros(vec![channels]));
        self.running.push((name.to_string(), RunningStats::new(channels)));
        BnIds { gamma, beta, running: self.running.len() - 1 }
    }

    fn extractor(&mut self, name: &str, d: usize) -> ExtractorIds {
        let mid = d / 2;
        ExtractorIds {
            mlp1: self.linear(&format!("{name}.mlp1"), d, mid),
            bn1: self.bn(&format!("{name}.bn1"), mid),
            mlp2: self.linear(&format!("{name}.mlp2"), mid, d),
            bn2: self.bn(&format!("{name}.bn2"), d),
        }
    }

    fn direction(&mut self, name: &str, d_in: usize, hidden: usize, gates: usize) -> DirectionIds {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_ih = self.uniform(vec![d_in, gates * hidden], bound);
        let w_hh = self.uniform(vec![hidden, gates * hidden], bound);
        let bias = self.uniform(vec![gates * hidden], bound);
        DirectionIds {
            w_ih: self.params.add(format!("{name}.w_ih"), w_ih),
            w_hh: self.params.add(format!("{name}.w_hh"), w_hh),
            bias: self.params.add(format!("{name}.bias"), bias),
            out: self.linear(&format!("{name}.out"), hidden, hidden),
        }
    }
}

/// The full network with its trainable parameters and batch-norm state.
#[derive(Debug, Clone)]
pub struct Model<T> {
    cfg: ModelConfig,
    params: ParamStore<T>,
    running: Vec<(String, RunningStats<T>)>,
    stages: Vec<StageIds>,
    head: Option<HeadIds>,
    reg_hidden: LinearIds,
    reg_out: LinearIds,
    pub target_norm: TargetNorm,
}

impl<T: Real> Model<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut b =
            Builder { params: ParamStore::default(), running: Vec::new(), rng: ChaCha8Rng::seed_from_u64(seed) };
        let mut stages = Vec::with_capacity(cfg.s_num());
        let mut d_prev = 0;
        for (s, &d) in cfg.stage_dims.iter().enumerate() {
            let name = format!("stage{s}");
            let d_in = 2 * d_prev + 3;
            let pre_proj = b.linear(&format!("{name}.pre_proj"), d_in, d);
            let local = b.extractor(&format!("{name}.local"), d);
            let aggregation = match cfg.aggregation {
                Aggregation::Temporal => Some(b.linear(&format!("{name}.aggregation"), d, 1)),
                Aggregation::Max => None,
            };
            let global = b.extractor(&format!("{name}.global"), d);
            stages.push(StageIds { d_in, d, pre_proj, local, aggregation, global });
            d_prev = d;
        }
        let gates = match cfg.cell {
            CellKind::Lstm => 4,
            CellKind::Rnn => 1,
        };
        let hidden = cfg.lstm_hidden();
        let head = match cfg.head {
            TemporalHead::None => None,
            TemporalHead::Lstm => Some(HeadIds {
                forward: b.direction("head.forward", d_prev, hidden, gates),
                backward: None,
                attention: b.linear("head.attention", hidden, 1),
            }),
            TemporalHead::BiLstm => Some(HeadIds {
                forward: b.direction("head.forward", d_prev, hidden, gates),
                backward: Some(b.direction("head.backward", d_prev, hidden, gates)),
                attention: b.linear("head.attention", 2 * hidden, 1),
            }),
        };
        let reg_hidden = b.linear("regressor.hidden", cfg.pooled_dim(), cfg.regressor_hidden);
        let reg_out = b.linear("regressor.out", cfg.regressor_hidden, 6);
        Ok(Self {
            cfg,
            params: b.params,
            running: b.running,
            stages,
            head,
            reg_hidden,
            reg_out,
            target_norm: TargetNorm::default(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[(String, RunningStats<T>)] {
        &self.running
    }

    pub fn running_stats_mut(&mut self) -> &mut [(String, RunningStats<T>)] {
        &mut self.running
    }

    pub fn stage_ids(&self) -> &[StageIds] {
        &self.stages
    }

    pub fn head_ids(&self) -> Option<&HeadIds> {
        self.head.as_ref()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.total()
    }

    /// Folds training-mode batch statistics into the running averages.
    pub fn apply_batch_stats(&mut self, stats: &[(usize, BatchStats<T>)]) {
        for (slot, s) in stats {
            self.running[*slot].1.update(s);
        }
    }

    pub fn plan(&self, cloud: &[[f64; 3]]) -> Result<HierarchyPlan> {
        Ok(HierarchyPlan::build(cloud, &self.cfg)?)
    }

    fn check_plans(&self, plans: &[&HierarchyPlan]) -> Result<()> {
        if plans.is_empty() {
            return Err(ModelError::Batch("empty batch".into()));
        }
        for p in plans {
            let ok = p.n_points == self.cfg.n_points
                && p.stages.len() == self.cfg.s_num()
                && p.stages.iter().zip(&self.cfg.stage_points).all(|(s, &n)| s.n_out == n && s.k == self.cfg.k);
            if !ok {
                return Err(ModelError::Batch("grouping plan does not match the model config".into()));
            }
        }
        Ok(())
    }

    fn finite(g: &Graph<T>, v: Var, stage: &str) -> Result<()> {
        if g.value(v).all_finite() {
            Ok(())
        } else {
            Err(ModelError::NonFinite { stage: stage.to_string() })
        }
    }

    fn batch_norm(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        ids: &BnIds,
        x: Var,
        training: bool,
        stats: &mut Vec<(usize, BatchStats<T>)>,
    ) -> Result<Var> {
        let (y, s) =
            apply_batch_norm(g, x, bound.var(ids.gamma), bound.var(ids.beta), &self.running[ids.running].1, training)?;
        if let Some(s) = s {
            stats.push((ids.running, s));
        }
        Ok(y)
    }

    fn linear(&self, g: &mut Graph<T>, bound: &Bound, ids: &LinearIds, x: Var) -> Result<Var> {
        Ok(linear(g, x, bound.var(ids.w), bound.var(ids.b))?)
    }

    /// Residual bottleneck extractor over `[rows, D]`.
    pub fn extract(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        ids: &ExtractorIds,
        x: Var,
        training: bool,
        stats: &mut Vec<(usize, BatchStats<T>)>,
    ) -> Result<Var> {
        let h = self.linear(g, bound, &ids.mlp1, x)?;
        let h = self.batch_norm(g, bound, &ids.bn1, h, training, stats)?;
        let h = g.relu(h);
        let o = self.linear(g, bound, &ids.mlp2, h)?;
        let o = self.batch_norm(g, bound, &ids.bn2, o, training, stats)?;
        let s = g.add(x, o)?;
        Ok(g.relu(s))
    }

    /// One hierarchy stage for a batch. `prev` holds the previous stage's
    /// `[B * N_in, D_in]` features and is `None` for the first stage.
    pub fn hierarchy_stage(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        stage: usize,
        plans: &[&HierarchyPlan],
        prev: Option<Var>,
        training: bool,
        stats: &mut Vec<(usize, BatchStats<T>)>,
    ) -> Result<StageOutput> {
        let ids = &self.stages[stage];
        let first = &plans[0].stages[stage];
        let (n_in, n_out, k) = (first.n_in, first.n_out, first.k);
        let rows = plans.len() * n_out * k;

        let mut coords = Vec::with_capacity(rows * 3);
        for p in plans {
            for r in &p.stages[stage].rel_coords {
                coords.extend(r.iter().map(|&v| T::from_f64_lossy(v)));
            }
        }
        let coords = g.constant(Tensor::new(vec![rows, 3], coords));
        let x = match prev {
            None => self.linear(g, bound, &ids.pre_proj, coords)?,
            Some(f) => {
                let mut members = Vec::with_capacity(rows);
                let mut centres = Vec::with_capacity(rows);
                for (bi, p) in plans.iter().enumerate() {
                    let sp = &p.stages[stage];
                    members.extend(sp.member_idx.iter().map(|&m| bi * n_in + m));
                    for &c in &sp.centroid_idx {
                        centres.extend(std::iter::repeat_n(bi * n_in + c, k));
                    }
                }
                // Same as projecting [coords | f[member] | f[centre]], but the
                // feature blocks are projected before the K-fold gather.
                let w = bound.var(ids.pre_proj.w);
                let d_prev = (ids.d_in - 3) / 2;
                let w_xyz = g.gather_rows(w, &[0, 1, 2])?;
                let w_mem = g.gather_rows(w, &(3..3 + d_prev).collect::<Vec<_>>())?;
                let w_cen = g.gather_rows(w, &(3 + d_prev..3 + 2 * d_prev).collect::<Vec<_>>())?;
                let pm = g.matmul(f, w_mem)?;
                let pc = g.matmul(f, w_cen)?;
                let pm = g.gather_rows(pm, &members)?;
                let pc = g.gather_rows(pc, &centres)?;
                let px = g.matmul(coords, w_xyz)?;
                let sum = g.add(px, pm)?;
                let sum = g.add(sum, pc)?;
                g.add_bias(sum, bound.var(ids.pre_proj.b))?
            }
        };
        let f_local = self.extract(g, bound, &ids.local, x, training, stats)?;
        let groups = plans.len() * n_out;
        let (f_aggre, attention) = match ids.aggregation {
            Some(agg) => {
                let (out, a) = temporal_aggregate(g, f_local, bound.var(agg.w), bound.var(agg.b), k)?;
                (out, Some(a))
            }
            None => {
                let f3 = g.reshape(f_local, vec![groups, k, ids.d])?;
                (g.max_axis1(f3)?, None)
            }
        };
        let features = self.extract(g, bound, &ids.global, f_aggre, training, stats)?;
        Self::finite(g, features, &format!("stage {}", stage + 1))?;
        Ok(StageOutput { features, attention })
    }

    fn run_direction(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        ids: &DirectionIds,
        feats: Var,
        batch: usize,
        steps: usize,
        reverse: bool,
    ) -> Result<Var> {
        let hidden = self.cfg.lstm_hidden();
        let width = match self.cfg.cell {
            CellKind::Lstm => 4 * hidden,
            CellKind::Rnn => hidden,
        };
        let xw = linear(g, feats, bound.var(ids.w_ih), bound.var(ids.bias))?;
        let xw = g.reshape(xw, vec![batch, steps * width])?;
        let u = bound.var(ids.w_hh);
        let mut h = g.constant(Tensor::zeros(vec![batch, hidden]));
        let mut c = g.constant(Tensor::zeros(vec![batch, hidden]));
        let mut outputs = vec![h; steps];
        for step in 0..steps {
            let t = if reverse { steps - 1 - step } else { step };
            let xw_t = g.narrow(xw, t * width, width)?;
            match self.cfg.cell {
                CellKind::Lstm => (h, c) = lstm_step_projected(g, xw_t, h, c, u)?,
                CellKind::Rnn => h = rnn_step_projected(g, xw_t, h, u)?,
            }
            outputs[t] = h;
        }
        let stacked = g.concat(&outputs)?;
        let stacked = g.reshape(stacked, vec![batch * steps, hidden])?;
        self.linear(g, bound, &ids.out, stacked)
    }

    /// Per-step outputs `[B * T, D]` of the recurrent head, the forward
    /// direction's in the leading columns. Fails if the model has no head.
    pub fn recurrent_outputs(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        feats: Var,
        batch: usize,
        steps: usize,
    ) -> Result<Var> {
        let head = self.head.as_ref().ok_or_else(|| ModelError::Config("model has no recurrent head".into()))?;
        let mut y = self.run_direction(g, bound, &head.forward, feats, batch, steps, false)?;
        if let Some(bw) = &head.backward {
            let y_rev = self.run_direction(g, bound, bw, feats, batch, steps, true)?;
            y = g.concat(&[y, y_rev])?;
        }
        Ok(y)
    }

    /// Recurrent head with attention pooling over `[B * T, D]` time-ordered
    /// features. Returns the pooled `[B, D_pooled]` vector and, when a
    /// recurrent head is configured, the `[B, 1, T]` attention weights.
    pub fn a_bi_lstm(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        feats: Var,
        batch: usize,
        steps: usize,
    ) -> Result<(Var, Option<Var>)> {
        if steps == 0 {
            return Err(ModelError::Batch("recurrent head needs at least one timestep".into()));
        }
        let Some(head) = &self.head else {
            let d = g.shape(feats)[1];
            let f3 = g.reshape(feats, vec![batch, steps, d])?;
            return Ok((g.max_axis1(f3)?, None));
        };
        let y = self.recurrent_outputs(g, bound, feats, batch, steps)?;
        let (pooled, attention) =
            temporal_aggregate(g, y, bound.var(head.attention.w), bound.var(head.attention.b), steps)?;
        Self::finite(g, pooled, "recurrent head")?;
        Ok((pooled, Some(attention)))
    }

    /// Hidden ReLU layer then a linear map to `[B, 6]`.
    pub fn regress(&self, g: &mut Graph<T>, bound: &Bound, pooled: Var) -> Result<Var> {
        let h = self.linear(g, bound, &self.reg_hidden, pooled)?;
        let h = g.relu(h);
        let out = self.linear(g, bound, &self.reg_out, h)?;
        Self::finite(g, out, "regressor")?;
        Ok(out)
    }

    pub fn forward(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        plans: &[&HierarchyPlan],
        training: bool,
    ) -> Result<ForwardOutput<T>> {
        self.check_plans(plans)?;
        let mut bn_stats = Vec::new();
        let mut stages = Vec::with_capacity(self.stages.len());
        let mut prev = None;
        for s in 0..self.stages.len() {
            let out = self.hierarchy_stage(g, bound, s, plans, prev, training, &mut bn_stats)?;
            prev = Some(out.features);
            stages.push(out);
        }
        let feats = prev.expect("at least one stage");
        let steps = plans[0].final_points();
        let (pooled, head_attention) = self.a_bi_lstm(g, bound, feats, plans.len(), steps)?;
        let pose = self.regress(g, bound, pooled)?;
        Ok(ForwardOutput { pose, stages, head_attention, bn_stats })
    }

    /// Eval-mode predictions in metric units.
    pub fn predict(&self, plans: &[&HierarchyPlan]) -> Result<Vec<PosePrediction>> {
        let mut g = Graph::no_grad();
        let bound = self.params.bind(&mut g);
        let out = self.forward(&mut g, &bound, plans, false)?;
        Ok(g.data(out.pose)
            .chunks(6)
            .map(|r| {
                let v: Vec<f64> = r.iter().map(|x| x.to_f64_lossy()).collect();
                PosePrediction { p_hat: self.target_norm.denormalize([v[0], v[1], v[2]]), q_hat: [v[3], v[4], v[5]] }
            })
            .collect())
    }

    /// Attention weights of the recurrent head over the final stage's
    /// points, in time order.
    pub fn extract_attention_trace(&self, cloud: &[[f64; 3]]) -> Result<Vec<f64>> {
        let plan = self.plan(cloud)?;
        self.attention_trace_for_plan(&plan)
    }

    pub fn attention_trace_for_plan(&self, plan: &HierarchyPlan) -> Result<Vec<f64>> {
        let mut g = Graph::no_grad();
        let bound = self.params.bind(&mut g);
        let out = self.forward(&mut g, &bound, &[plan], false)?;
        let a = out.head_attention.ok_or_else(|| ModelError::Config("model has no attention head".into()))?;
        Ok(g.value(a).to_f64_vec())
    }
}

/// Softmax attention over groups of `k` consecutive rows of `f_local`
/// (`[G * k, D]` or `[G, k, D]`). Returns `[G, D]` and the `[G, 1, k]`
/// weights.
pub fn temporal_aggregate<T: Real>(
    g: &mut Graph<T>,
    f_local: Var,
    w: Var,
    b: Var,
    k: usize,
) -> std::result::Result<(Var, Var), AutodiffError> {
    let d = g.value(f_local).last_dim();
    let rows = g.value(f_local).numel() / d;
    if k == 0 || !rows.is_multiple_of(k) {
        return Err(AutodiffError::Invalid(format!("{rows} rows do not split into groups of {k}")));
    }
    let groups = rows / k;
    let flat = g.reshape(f_local, vec![rows, d])?;
    let scores = linear(g, flat, w, b)?;
    let scores = g.reshape(scores, vec![groups, 1, k])?;
    let attention = g.softmax(scores, 2)?;
    let f3 = g.reshape(flat, vec![groups, k, d])?;
    let pooled = g.batch_matmul(attention, f3)?;
    Ok((g.reshape(pooled, vec![groups, d])?, attention))
}

/// `alpha * mean ||p_hat - p|| + beta * mean ||q_hat - q|| + lambda * sum w^2`
/// over a `[B, 6]` prediction. `targets` rows are `[p (normalized), euler]`.
pub fn pose_loss<T: Real>(
    g: &mut Graph<T>,
    pose: Var,
    targets: &[[f64; 6]],
    weights: &[Var],
    cfg: &ModelConfig,
) -> std::result::Result<Var, AutodiffError> {
    let flat: Vec<f64> = targets.iter().flatten().copied().collect();
    let target = g.constant(Tensor::from_f64(vec![targets.len(), 6], &flat));
    let diff = g.sub(pose, target)?;
    let dp = g.narrow(diff, 0, 3)?;
    let dq = g.narrow(diff, 3, 3)?;
    let (tp, tq) = match cfg.loss {
        LossKind::Norm => (g.row_norm(dp), g.row_norm(dq)),
        LossKind::Squared => (g.row_sum_squares(dp), g.row_sum_squares(dq)),
    };
    let tp = g.mean(tp);
    let tq = g.mean(tq);
    let tp = g.scale(tp, T::from_f64_lossy(cfg.alpha));
    let tq = g.scale(tq, T::from_f64_lossy(cfg.beta));
    let mut total = g.add(tp, tq)?;
    if cfg.lambda > 0.0 && !weights.is_empty() {
        let mut reg = g.sum_squares(weights[0]);
        for &w in &weights[1..] {
            let s = g.sum_squares(w);
            reg = g.add(reg, s)?;
        }
        let reg = g.scale(reg, T::from_f64_lossy(cfg.lambda));
        total = g.add(total, reg)?;
    }
    Ok(total)
}

/// Exact count of trainable scalars, including batch-norm gamma/beta.
pub fn count_parameters(cfg: &ModelConfig) -> Result<usize> {
    Ok(Model::<f32>::new(cfg.clone(), 0)?.parameter_count())
}

/// Single-window eval-mode latency of `cfg`: grouping plan (FPS + KNN +
/// standardization over every stage), network forward, and their sum.
pub fn bench_forward(cfg: &ModelConfig, reps: usize, seed: u64) -> Result<Vec<BenchRow>> {
    let model = Model::<f32>::new(cfg.clone(), seed)?;
    let reps = reps.max(1);
    let (mut plan_us, mut net_us, mut total_us) = (Vec::new(), Vec::new(), Vec::new());
    for rep in 0..reps {
        let cloud = random_cloud(cfg.n_points, seed.wrapping_add(rep as u64));
        let t0 = Instant::now();
        let plan = model.plan(&cloud)?;
        let t1 = Instant::now();
        std::hint::black_box(model.predict(&[&plan])?);
        let t2 = Instant::now();
        plan_us.push((t1 - t0).as_secs_f64() * 1e6);
        net_us.push((t2 - t1).as_secs_f64() * 1e6);
        total_us.push((t2 - t0).as_secs_f64() * 1e6);
    }
    let (n, n_out, k) = (cfg.n_points, cfg.stage_points[0], cfg.k);
    Ok(vec![
        BenchRow::from_samples("grouping", n, n_out, k, plan_us),
        BenchRow::from_samples("network", n, n_out, k, net_us),
        BenchRow::from_samples("forward", n, n_out, k, total_us),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_norm_round_trip() {
        let n = TargetNorm::fit(&[[1.0, 2.0, 3.0], [3.0, 2.0, 1.0]]);
        assert_eq!(n.p_mean, [2.0, 2.0, 2.0]);
        assert_eq!(n.p_scale, 1.0);
        assert_eq!(n.denormalize(n.normalize([0.5, 0.25, 4.0])), [0.5, 0.25, 4.0]);
    }

    #[test]
    fn parameter_names_are_unique_and_ordered() {
        let m = Model::<f32>::new(ModelConfig::tiny(), 1).unwrap();
        let names: Vec<_> = m.params().iter().map(|(n, _)| n.to_string()).collect();
        assert_eq!(names[0], "stage0.pre_proj.weight");
        assert_eq!(names.last().unwrap(), "regressor.out.bias");
    }
}
