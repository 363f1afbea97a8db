use std::fmt;
use std::str::FromStr;

use crate::kv::{join_list, KvError, KvMap};

use super::ModelError;

/// How a group's `K` member features are reduced to one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Softmax attention over the time-ordered members.
    Temporal,
    /// Elementwise max.
    Max,
}

/// What consumes the last stage's time-ordered features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemporalHead {
    /// Max pooling over points, no recurrence.
    None,
    /// Forward-only recurrence with attention pooling.
    Lstm,
    /// Forward and reverse recurrences, concatenated, with attention pooling.
    BiLstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Lstm,
    /// Plain `tanh` recurrence.
    Rnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Euclidean norm of the translation and rotation residuals.
    Norm,
    /// Squared norm.
    Squared,
}

macro_rules! str_enum {
    ($ty:ty { $($variant:path => $name:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(format!("unknown value `{other}`")),
                }
            }
        }
    };
}

str_enum!(Aggregation { Aggregation::Temporal => "temporal", Aggregation::Max => "max" });
str_enum!(TemporalHead { TemporalHead::None => "none", TemporalHead::Lstm => "lstm", TemporalHead::BiLstm => "bilstm" });
str_enum!(CellKind { CellKind::Lstm => "lstm", CellKind::Rnn => "rnn" });
str_enum!(LossKind { LossKind::Norm => "norm", LossKind::Squared => "squared" });

/// Architecture hyperparameters and loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_points: usize,
    pub stage_points: Vec<usize>,
    pub stage_dims: Vec<usize>,
    pub k: usize,
    pub regressor_hidden: usize,
    pub aggregation: Aggregation,
    pub head: TemporalHead,
    pub cell: CellKind,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub loss: LossKind,
}

pub const STANDARD_DIMS: [usize; 3] = [64, 128, 256];
pub const TINY_DIMS: [usize; 3] = [16, 32, 64];

impl Default for ModelConfig {
    fn default() -> Self {
        Self::standard()
    }
}

impl ModelConfig {
    pub fn standard() -> Self {
        Self {
            n_points: 1024,
            stage_points: vec![512, 256, 128],
            stage_dims: STANDARD_DIMS.to_vec(),
            k: 24,
            regressor_hidden: 128,
            aggregation: Aggregation::Temporal,
            head: TemporalHead::BiLstm,
            cell: CellKind::Lstm,
            alpha: 0.5,
            beta: 0.5,
            lambda: 1e-5,
            loss: LossKind::Norm,
        }
    }

    pub fn tiny() -> Self {
        Self { stage_dims: TINY_DIMS.to_vec(), ..Self::standard() }
    }

    pub fn s_num(&self) -> usize {
        self.stage_dims.len()
    }

    pub fn final_dim(&self) -> usize {
        *self.stage_dims.last().expect("validated config has stages")
    }

    /// Hidden width of each recurrent direction.
    pub fn lstm_hidden(&self) -> usize {
        self.final_dim() / 2
    }

    /// Width of the vector handed to the regressor.
    pub fn pooled_dim(&self) -> usize {
        match self.head {
            TemporalHead::None | TemporalHead::BiLstm => self.final_dim(),
            TemporalHead::Lstm => self.lstm_hidden(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.stage_dims.is_empty() {
            return bad("at least one stage is required".into());
        }
        if self.stage_points.len() != self.stage_dims.len() {
            return bad(format!(
                "stage_points has {} entries but stage_dims has {}",
                self.stage_points.len(),
                self.stage_dims.len()
            ));
        }
        if self.stage_points.windows(2).any(|w| w[1] >= w[0]) {
            return bad(format!("stage_points {:?} must be strictly decreasing", self.stage_points));
        }
        if self.stage_points[0] > self.n_points {
            return bad(format!("first stage keeps {} of {} points", self.stage_points[0], self.n_points));
        }
        if self.stage_points.contains(&0) {
            return bad("stage point counts must be positive".into());
        }
        if self.k == 0 || self.k > self.n_points {
            return bad(format!("k = {} must be in 1..={}", self.k, self.n_points));
        }
        for i in 0..self.stage_points.len() {
            let available = if i == 0 { self.n_points } else { self.stage_points[i - 1] };
            if self.k > available {
                return bad(format!("k = {} exceeds the {available} points entering stage {}", self.k, i + 1));
            }
        }
        if self.stage_dims.iter().any(|&d| d < 2 || d % 2 != 0) {
            return bad(format!("stage_dims {:?} must be even and >= 2", self.stage_dims));
        }
        if self.regressor_hidden == 0 {
            return bad("regressor_hidden must be positive".into());
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.lambda < 0.0 {
            return bad("loss coefficients must be non-negative".into());
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n_points", self.n_points.to_string()),
            ("stage_points", join_list(&self.stage_points)),
            ("stage_dims", join_list(&self.stage_dims)),
            ("k", self.k.to_string()),
            ("regressor_hidden", self.regressor_hidden.to_string()),
            ("aggregation", self.aggregation.to_string()),
            ("head", self.head.to_string()),
            ("cell", self.cell.to_string()),
            ("alpha", format!("{:?}", self.alpha)),
            ("beta", format!("{:?}", self.beta)),
            ("lambda", format!("{:?}", self.lambda)),
            ("loss", self.loss.to_string()),
        ]
    }

    /// Reads model keys from `kv`, leaving others in place. `stage_dims`
    /// also accepts the presets `standard` and `tiny`.
    pub fn apply_kv(&mut self, kv: &mut KvMap) -> Result<(), KvError> {
        kv.take_into("n_points", &mut self.n_points)?;
        kv.take_list("stage_points", &mut self.stage_points)?;
        match kv.take_str("stage_dims").as_deref() {
            None => {}
            Some("standard") => self.stage_dims = STANDARD_DIMS.to_vec(),
            Some("tiny") => self.stage_dims = TINY_DIMS.to_vec(),
            Some(other) => {
                self.stage_dims = crate::kv::parse_list(other).map_err(|reason| KvError::Value {
                    key: "stage_dims".into(),
                    value: other.into(),
                    reason,
                })?
            }
        }
        kv.take_into("k", &mut self.k)?;
        kv.take_into("regressor_hidden", &mut self.regressor_hidden)?;
        kv.take_into("aggregation", &mut self.aggregation)?;
        kv.take_into("head", &mut self.head)?;
        kv.take_into("cell", &mut self.cell)?;
        kv.take_into("alpha", &mut self.alpha)?;
        kv.take_into("beta", &mut self.beta)?;
        kv.take_into("lambda", &mut self.lambda)?;
        kv.take_into("loss", &mut self.loss)?;
        Ok(())
    }

    pub fn from_kv_text(text: &str) -> Result<Self, ModelError> {
        let mut kv = KvMap::parse(text).map_err(|e| ModelError::Config(e.to_string()))?;
        let mut cfg = Self::standard();
        cfg.apply_kv(&mut kv).map_err(|e| ModelError::Config(e.to_string()))?;
        kv.finish().map_err(|e| ModelError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
