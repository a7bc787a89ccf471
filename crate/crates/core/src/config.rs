//! Training configuration and its flat `key = value` file format.

use std::fmt::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gnnops::OperatorKind;
use crate::model::ModelConfig;
use crate::pipeline::SplitSpec;

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub operator: OperatorKind,
    pub lambda: f64,
    pub k: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub n_scales: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub use_posenc: bool,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub patience: usize,
    pub seed: u64,
    pub train_frac: f64,
    pub test_frac: f64,
    pub eval_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            operator: OperatorKind::Sage,
            lambda: 0.5,
            k: 5,
            embed_dim: 64,
            hidden_dim: 64,
            n_layers: 2,
            n_scales: 16,
            sigma_min: 0.01,
            sigma_max: 1.0,
            use_posenc: true,
            batch_size: 512,
            epochs: 200,
            lr: 1e-3,
            patience: 20,
            seed: 0,
            train_frac: 0.70,
            test_frac: 0.15,
            eval_frac: 0.15,
        }
    }
}

/// Keys accepted in config files, in canonical order.
pub const KEYS: [&str; 18] = [
    "operator",
    "lambda",
    "k",
    "embed_dim",
    "hidden_dim",
    "n_layers",
    "n_scales",
    "sigma_min",
    "sigma_max",
    "use_posenc",
    "batch_size",
    "epochs",
    "lr",
    "patience",
    "seed",
    "train_frac",
    "test_frac",
    "eval_frac",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "operator" => self.operator = v.parse()?,
            "lambda" => self.lambda = parse(key, v)?,
            "k" => self.k = parse(key, v)?,
            "embed_dim" => self.embed_dim = parse(key, v)?,
            "hidden_dim" => self.hidden_dim = parse(key, v)?,
            "n_layers" => self.n_layers = parse(key, v)?,
            "n_scales" => self.n_scales = parse(key, v)?,
            "sigma_min" => self.sigma_min = parse(key, v)?,
            "sigma_max" => self.sigma_max = parse(key, v)?,
            "use_posenc" => self.use_posenc = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "train_frac" => self.train_frac = parse(key, v)?,
            "test_frac" => self.test_frac = parse(key, v)?,
            "eval_frac" => self.eval_frac = parse(key, v)?,
            other => return Err(Error::config(other, "unknown key")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "operator" => self.operator.to_string(),
            "lambda" => self.lambda.to_string(),
            "k" => self.k.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "hidden_dim" => self.hidden_dim.to_string(),
            "n_layers" => self.n_layers.to_string(),
            "n_scales" => self.n_scales.to_string(),
            "sigma_min" => self.sigma_min.to_string(),
            "sigma_max" => self.sigma_max.to_string(),
            "use_posenc" => self.use_posenc.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "lr" => self.lr.to_string(),
            "patience" => self.patience.to_string(),
            "seed" => self.seed.to_string(),
            "train_frac" => self.train_frac.to_string(),
            "test_frac" => self.test_frac.to_string(),
            "eval_frac" => self.eval_frac.to_string(),
            _ => return None,
        })
    }

    /// Applies every `key = value` line of `text`; `#` starts a comment.
    pub fn merge_kv(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(line, format!("line {}: expected `key = value`", lineno + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.merge_kv(&text)
    }

    /// Canonical `key = value` rendering, one line per key.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            writeln!(out, "{key} = {}", self.get(key).expect("known key")).expect("write to string");
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of [`to_kv`](Self::to_kv).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_kv().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config("lambda", format!("must lie in [0, 1], got {}", self.lambda)));
        }
        for (field, v) in [
            ("k", self.k),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("n_layers", self.n_layers),
            ("n_scales", self.n_scales),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("patience", self.patience),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size", "must be at least 2"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", format!("must be positive, got {}", self.lr)));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max && self.sigma_max.is_finite()) {
            return Err(Error::config(
                "sigma_min",
                format!("need 0 < sigma_min < sigma_max, got {} and {}", self.sigma_min, self.sigma_max),
            ));
        }
        self.split_spec().validate()
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_frac: self.train_frac,
            test_frac: self.test_frac,
            eval_frac: self.eval_frac,
            seed: self.seed,
        }
    }

    pub fn model_config(&self, n_features: usize) -> ModelConfig {
        ModelConfig {
            operator: self.operator,
            n_features,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            n_layers: self.n_layers,
            n_scales: self.n_scales,
            sigma_min: self.sigma_min,
            sigma_max: self.sigma_max,
            lambda: self.lambda,
            use_posenc: self.use_posenc,
        }
    }

    /// Comment header stamped on every output file.
    pub fn header(&self) -> String {
        format!("pegnn {TOOLKIT_VERSION} config={} seed={}", self.hash(), self.seed)
    }
}
