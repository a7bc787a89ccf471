use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub test_frac: f64,
    pub eval_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.70,
            test_frac: 0.15,
            eval_frac: 0.15,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("train_frac", self.train_frac),
            ("test_frac", self.test_frac),
            ("eval_frac", self.eval_frac),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::config(field, format!("must lie in (0, 1), got {v}")));
            }
        }
        let total = self.train_frac + self.test_frac + self.eval_frac;
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config("train_frac", format!("fractions sum to {total}, not 1")));
        }
        Ok(())
    }
}

/// Disjoint, exhaustive, ascending index sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Seeded uniform shuffle; test and eval sizes are `round(n * frac)`, the
/// remainder goes to training.
pub fn split(n: usize, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let n_test = (n as f64 * spec.test_frac).round() as usize;
    let n_eval = (n as f64 * spec.eval_frac).round() as usize;
    let n_train = n.saturating_sub(n_test + n_eval);
    if n_train == 0 || n_test == 0 || n_eval == 0 {
        return Err(Error::contract(format!(
            "split of {n} points leaves an empty part (train {n_train}, test {n_test}, eval {n_eval})"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..n_train + n_test].to_vec();
    let mut eval = idx[n_train + n_test..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    eval.sort_unstable();
    Ok(Split { train, test, eval })
}
