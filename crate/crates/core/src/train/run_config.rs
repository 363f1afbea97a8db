use crate::kv::{render, KvMap};
use crate::model::ModelConfig;

use super::{OptimConfig, SplitSpec, TrainError};

/// Everything a training run depends on. Text form is flat `key = value`
/// covering every model and optimizer field; unknown keys are errors.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds weight init and batch shuffling.
    pub seed: u64,
    /// Seeds per-window event sampling.
    pub sample_seed: u64,
    pub shuffle: bool,
    pub split: SplitSpec,
    /// Evaluate every this many epochs (0 = never).
    pub eval_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::standard(),
            optim: OptimConfig::default(),
            epochs: 100,
            batch_size: 32,
            seed: 0,
            sample_seed: 0,
            shuffle: true,
            split: SplitSpec::default(),
            eval_every: 1,
        }
    }
}

impl RunConfig {
    pub fn from_kv_text(text: &str) -> Result<Self, TrainError> {
        let mut kv = KvMap::parse(text)?;
        let mut c = Self::default();
        c.model.apply_kv(&mut kv)?;
        let o = &mut c.optim;
        kv.take_into("optimizer", &mut o.kind)?;
        kv.take_into("lr", &mut o.lr)?;
        kv.take_into("beta1", &mut o.beta1)?;
        kv.take_into("beta2", &mut o.beta2)?;
        kv.take_into("eps", &mut o.eps)?;
        kv.take_into("momentum", &mut o.momentum)?;
        kv.take_into("decay_every", &mut o.decay_every)?;
        kv.take_into("decay_factor", &mut o.decay_factor)?;
        kv.take_into("epochs", &mut c.epochs)?;
        kv.take_into("batch_size", &mut c.batch_size)?;
        kv.take_into("seed", &mut c.seed)?;
        kv.take_into("sample_seed", &mut c.sample_seed)?;
        kv.take_into("shuffle", &mut c.shuffle)?;
        kv.take_into("split", &mut c.split.mode)?;
        kv.take_into("train_fraction", &mut c.split.train_fraction)?;
        kv.take_into("split_seed", &mut c.split.seed)?;
        kv.take_into("eval_every", &mut c.eval_every)?;
        kv.finish()?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        let o = &self.optim;
        if !(o.lr >= 0.0 && o.lr.is_finite()) {
            return Err(TrainError::Config(format!("lr must be finite and >= 0, got {}", o.lr)));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(TrainError::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        if o.eps <= 0.0 || o.momentum < 0.0 || o.decay_factor <= 0.0 {
            return Err(TrainError::Config("eps and decay_factor must be positive, momentum >= 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(TrainError::Config("train_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let mut p = self.model.to_pairs();
        let o = &self.optim;
        p.extend([
            ("optimizer", o.kind.to_string()),
            ("lr", format!("{:?}", o.lr)),
            ("beta1", format!("{:?}", o.beta1)),
            ("beta2", format!("{:?}", o.beta2)),
            ("eps", format!("{:?}", o.eps)),
            ("momentum", format!("{:?}", o.momentum)),
            ("decay_every", o.decay_every.to_string()),
            ("decay_factor", format!("{:?}", o.decay_factor)),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("sample_seed", self.sample_seed.to_string()),
            ("shuffle", self.shuffle.to_string()),
            ("split", self.split.mode.to_string()),
            ("train_fraction", format!("{:?}", self.split.train_fraction)),
            ("split_seed", self.split.seed.to_string()),
            ("eval_every", self.eval_every.to_string()),
        ]);
        p
    }

    pub fn render(&self) -> String {
        render(&self.to_pairs())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Aggregation, TemporalHead};

    #[test]
    fn rendered_config_parses_back() {
        let mut c = RunConfig::default();
        c.model = ModelConfig::tiny();
        c.model.head = TemporalHead::Lstm;
        c.model.aggregation = Aggregation::Max;
        c.optim.lr = 3e-4;
        c.shuffle = false;
        assert_eq!(RunConfig::from_kv_text(&c.render()).unwrap(), c);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let e = RunConfig::from_kv_text("epochs = 3\nlearning_rate = 0.1\n").unwrap_err();
        assert!(e.to_string().contains("learning_rate"));
    }
}
