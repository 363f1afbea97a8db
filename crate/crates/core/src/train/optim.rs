use std::fmt;
use std::str::FromStr;

use crate::autodiff::Real;
use crate::model::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl FromStr for OptimizerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "adam" => Ok(Self::Adam),
            "sgd" => Ok(Self::Sgd),
            _ => Err(format!("unknown optimizer `{s}` (expected adam|sgd)")),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Adam => "adam",
            Self::Sgd => "sgd",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// SGD momentum; 0 gives the plain update.
    pub momentum: f64,
    /// Multiply the rate by `decay_factor` every `decay_every` epochs
    /// (0 disables decay).
    pub decay_every: usize,
    pub decay_factor: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum: 0.0,
            decay_every: 40,
            decay_factor: 0.5,
        }
    }
}

impl OptimConfig {
    /// Learning rate for a zero-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.decay_every == 0 {
            self.lr
        } else {
            self.lr * self.decay_factor.powi((epoch / self.decay_every) as i32)
        }
    }
}

/// Per-parameter optimizer state.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    cfg: OptimConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    steps: u64,
}

impl<T: Real> Optimizer<T> {
    pub fn new(cfg: OptimConfig, params: &ParamStore<T>) -> Self {
        let zeros = |_: (&str, &crate::autodiff::Tensor<T>)| Vec::new();
        let m: Vec<Vec<T>> = params.iter().map(zeros).collect();
        Self { cfg, v: m.clone(), m, steps: 0 }
    }

    pub fn config(&self) -> &OptimConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update with rate `lr`. `grads` is aligned with the
    /// store's parameter order.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Vec<T>], lr: f64) {
        self.steps += 1;
        let c = &self.cfg;
        let lr_t = T::from_f64_lossy(lr);
        match c.kind {
            OptimizerKind::Sgd => {
                let mu = T::from_f64_lossy(c.momentum);
                for ((p, g), buf) in params.tensors_mut().iter_mut().zip(grads).zip(&mut self.m) {
                    if c.momentum == 0.0 {
                        for (w, &gi) in p.data_mut().iter_mut().zip(g) {
                            *w -= lr_t * gi;
                        }
                        continue;
                    }
                    if buf.is_empty() {
                        *buf = vec![T::zero(); g.len()];
                    }
                    for ((w, &gi), b) in p.data_mut().iter_mut().zip(g).zip(buf.iter_mut()) {
                        *b = mu * *b + gi;
                        *w -= lr_t * *b;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
                let one = T::one();
                let bc1 = T::from_f64_lossy(1.0 - c.beta1.powi(self.steps as i32));
                let bc2 = T::from_f64_lossy(1.0 - c.beta2.powi(self.steps as i32));
                let eps = T::from_f64_lossy(c.eps);
                for (((p, g), m), v) in params.tensors_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    if m.is_empty() {
                        *m = vec![T::zero(); g.len()];
                        *v = vec![T::zero(); g.len()];
                    }
                    for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = b1 * *mi + (one - b1) * gi;
                        *vi = b2 * *vi + (one - b2) * gi * gi;
                        let m_hat = *mi / bc1;
                        let v_hat = *vi / bc2;
                        *w -= lr_t * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}
