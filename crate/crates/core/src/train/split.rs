//! Train/test partitions over window indices.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Seeded shuffle, then cut.
    Random,
    /// Chronological cut: every training window precedes every test window.
    Novel,
}

impl FromStr for SplitMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "random" => Ok(Self::Random),
            "novel" => Ok(Self::Novel),
            _ => Err(format!("unknown split mode `{s}` (expected random|novel)")),
        }
    }
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Random => "random",
            Self::Novel => "novel",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { mode: SplitMode::Novel, train_fraction: 0.7, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits `m` windows, assumed to be in chronological order. The training
/// side gets `floor(train_fraction * m)` windows, clamped so both sides are
/// non-empty. Both index lists come back sorted.
pub fn make_split(m: usize, spec: &SplitSpec) -> Result<Split, TrainError> {
    if m < 2 {
        return Err(TrainError::Data(format!("need at least 2 windows to split, got {m}")));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(TrainError::Config(format!("train_fraction must lie in (0, 1), got {}", spec.train_fraction)));
    }
    let cut = ((spec.train_fraction * m as f64).floor() as usize).clamp(1, m - 1);
    let mut order: Vec<usize> = (0..m).collect();
    if spec.mode == SplitMode::Random {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    }
    let mut train = order[..cut].to_vec();
    let mut test = order[cut..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}
