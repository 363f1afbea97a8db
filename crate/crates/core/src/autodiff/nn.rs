//! Layer helpers composed from graph primitives.

use super::graph::{AutodiffError, BatchNormMode, BatchStats, Graph, Var};
use super::tensor::{Real, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// `x W + b` for `x: [rows, in]`, `W: [in, out]`, `b: [out]`.
pub fn linear<T: Real>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
    let y = g.matmul(x, w)?;
    g.add_bias(y, b)
}

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Weight kept on the old running value at each update.
    pub momentum: T,
    pub eps: T,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            momentum: T::from_f64_lossy(BN_MOMENTUM),
            eps: T::from_f64_lossy(BN_EPS),
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Folds batch statistics into the running averages. The running
    /// variance uses the unbiased batch estimate.
    pub fn update(&mut self, stats: &BatchStats<T>) {
        let m = self.momentum;
        let one = T::one();
        let n = T::from_usize(stats.rows).expect("count");
        let correction = if stats.rows > 1 { n / (n - one) } else { one };
        for (r, &b) in self.mean.iter_mut().zip(&stats.mean) {
            *r = m * *r + (one - m) * b;
        }
        for (r, &b) in self.var.iter_mut().zip(&stats.var) {
            *r = (m * *r + (one - m) * b * correction).max(T::zero());
        }
    }
}

/// Batch-norm parameters together with their running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running: RunningStats<T>,
}

impl<T: Real> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(vec![channels], T::one()),
            beta: Tensor::zeros(vec![channels]),
            running: RunningStats::new(channels),
        }
    }
}

/// Applies batch norm with the state's own gamma/beta as graph leaves and
/// returns `(output, gamma, beta)`. Running stats are updated in place when
/// training.
pub fn batch_norm<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    state: &mut BatchNormState<T>,
    training: bool,
) -> Result<(Var, Var, Var), AutodiffError> {
    let gamma = g.param(&state.gamma);
    let beta = g.param(&state.beta);
    let (out, stats) = apply_batch_norm(g, x, gamma, beta, &state.running, training)?;
    if let Some(stats) = stats {
        state.running.update(&stats);
    }
    Ok((out, gamma, beta))
}

/// Batch norm with externally bound gamma/beta. Running stats are read in
/// eval mode and left untouched in training mode.
pub fn apply_batch_norm<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    running: &RunningStats<T>,
    training: bool,
) -> Result<(Var, Option<BatchStats<T>>), AutodiffError> {
    let mode = if training {
        BatchNormMode::Train { eps: running.eps }
    } else {
        BatchNormMode::Eval { mean: &running.mean, var: &running.var, eps: running.eps }
    };
    g.batch_norm(x, gamma, beta, mode)
}

/// Direction-specific LSTM weights. Gate column order is input, forget,
/// candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    /// `[D_in, 4H]`
    pub w: Var,
    /// `[H, 4H]`
    pub u: Var,
    /// `[4H]`
    pub b: Var,
}

/// One LSTM step for `x_t: [B, D_in]`, `h_prev, c_prev: [B, H]`.
pub fn lstm_cell<T: Real>(
    g: &mut Graph<T>,
    x_t: Var,
    h_prev: Var,
    c_prev: Var,
    weights: &LstmWeights,
) -> Result<(Var, Var), AutodiffError> {
    let xw = linear(g, x_t, weights.w, weights.b)?;
    lstm_step_projected(g, xw, h_prev, c_prev, weights.u)
}

/// LSTM step whose input projection `x_t W + b` was computed up front.
pub fn lstm_step_projected<T: Real>(
    g: &mut Graph<T>,
    xw_t: Var,
    h_prev: Var,
    c_prev: Var,
    u: Var,
) -> Result<(Var, Var), AutodiffError> {
    let h = g.shape(h_prev)[1];
    if g.shape(xw_t).last() != Some(&(4 * h)) {
        return Err(AutodiffError::Shape {
            op: "lstm_cell",
            lhs: g.shape(xw_t).to_vec(),
            rhs: g.shape(h_prev).to_vec(),
        });
    }
    let hu = g.matmul(h_prev, u)?;
    let z = g.add(xw_t, hu)?;
    let zi = g.narrow(z, 0, h)?;
    let zf = g.narrow(z, h, h)?;
    let zg = g.narrow(z, 2 * h, h)?;
    let zo = g.narrow(z, 3 * h, h)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let cand = g.tanh(zg);
    let o = g.sigmoid(zo);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h_t = g.mul(o, tc)?;
    Ok((h_t, c))
}

/// Elman step `tanh(x_t W + b + h_prev U)` with the projection precomputed.
pub fn rnn_step_projected<T: Real>(g: &mut Graph<T>, xw_t: Var, h_prev: Var, u: Var) -> Result<Var, AutodiffError> {
    let hu = g.matmul(h_prev, u)?;
    let z = g.add(xw_t, hu)?;
    Ok(g.tanh(z))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_zero_hidden_state() {
        let mut g = Graph::<f64>::new();
        let (b, d, h) = (2, 3, 4);
        let x = g.constant(Tensor::full(vec![b, d], 0.7));
        let h0 = g.constant(Tensor::full(vec![b, h], 0.3));
        let c0 = g.constant(Tensor::zeros(vec![b, h]));
        let w = LstmWeights {
            w: g.constant(Tensor::zeros(vec![d, 4 * h])),
            u: g.constant(Tensor::zeros(vec![h, 4 * h])),
            b: g.constant(Tensor::zeros(vec![4 * h])),
        };
        let (ht, _) = lstm_cell(&mut g, x, h0, c0, &w).unwrap();
        assert!(g.data(ht).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut g = Graph::<f64>::new();
        let (b, d, h) = (1, 2, 3);
        let x = g.constant(Tensor::full(vec![b, d], 1.0));
        let h0 = g.constant(Tensor::zeros(vec![b, h]));
        let c0 = g.constant(Tensor::new(vec![b, h], vec![0.5, -1.0, 2.0]));
        let mut bias = vec![0.0; 4 * h];
        bias[h..2 * h].iter_mut().for_each(|v| *v = 50.0);
        bias[..h].iter_mut().for_each(|v| *v = -50.0);
        let w = LstmWeights {
            w: g.constant(Tensor::zeros(vec![d, 4 * h])),
            u: g.constant(Tensor::zeros(vec![h, 4 * h])),
            b: g.constant(Tensor::new(vec![4 * h], bias)),
        };
        let (_, ct) = lstm_cell(&mut g, x, h0, c0, &w).unwrap();
        for (a, b) in g.data(ct).iter().zip([0.5, -1.0, 2.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn training_batch_norm_standardizes_and_updates_running_stats() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..40).map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.0).collect();
        let x = g.constant(Tensor::new(vec![20, 2], data));
        let mut state = BatchNormState::new(2);
        let (y, _, _) = batch_norm(&mut g, x, &mut state, true).unwrap();
        let out = g.data(y);
        for ch in 0..2 {
            let col: Vec<f64> = out.iter().skip(ch).step_by(2).copied().collect();
            let mean = col.iter().sum::<f64>() / 20.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 20.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
        assert!(state.running.mean.iter().any(|&m| m != 0.0));
        assert!(state.running.var.iter().all(|&v| v >= 0.0));
    }
}
