//! Flat `key = value` run configuration.
//!
//! Values are applied in order defaults → file → command-line overrides. Every
//! key is checked against the schema below; unknown keys are an error.
//!
//! | key                          | default    |
//! |------------------------------|------------|
//! | `seed`                       | 0          |
//! | `data.num_identities`        | 50         |
//! | `data.samples_per_identity`  | 20         |
//! | `data.input_dim`             | 32         |
//! | `data.nuisance_dim`          | 8          |
//! | `data.nuisance_scale`        | 1.0        |
//! | `data.noise_std`             | 0.05       |
//! | `data.nuisance_seed`         | derived    |
//! | `data.pose_seed`             | derived    |
//! | `model.hidden_dims`          | 128,64     |
//! | `model.activation`           | relu       |
//! | `model.head`                 | arccos     |
//! | `train.epochs`               | 30         |
//! | `train.batch_pairs`          | 32         |
//! | `train.eval_every`           | 1          |
//! | `loss.beta`                  | 0.5        |
//! | `adam.lr0`                   | 0.001      |
//! | `adam.beta1`                 | 0.9        |
//! | `adam.beta2`                 | 0.999      |
//! | `adam.eps`                   | 1e-8       |
//! | `eval.thresholds`            | 1,2,…,30   |
//! | `ablate.seeds`               | 3          |
//! | `ablate.test_samples_per_identity` | 10   |
//! | `threads`                    | all cores  |

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::data::SyntheticConfig;
use crate::error::{Error, Result};
use crate::evaluation;
use crate::losses::LossConfig;
use crate::seed;
use crate::trainer::TrainConfig;

pub const KEYS: &[&str] = &[
    "seed",
    "data.num_identities",
    "data.samples_per_identity",
    "data.input_dim",
    "data.nuisance_dim",
    "data.nuisance_scale",
    "data.noise_std",
    "data.nuisance_seed",
    "data.pose_seed",
    "model.hidden_dims",
    "model.activation",
    "model.head",
    "train.epochs",
    "train.batch_pairs",
    "train.eval_every",
    "loss.beta",
    "adam.lr0",
    "adam.beta1",
    "adam.beta2",
    "adam.eps",
    "eval.thresholds",
    "ablate.seeds",
    "ablate.test_samples_per_identity",
    "threads",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: SyntheticConfig,
    pub train: TrainConfig,
    pub thresholds_deg: Vec<f64>,
    pub ablate_seeds: usize,
    pub ablate_test_samples_per_identity: usize,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 0,
            data: SyntheticConfig::default(),
            train: TrainConfig::default(),
            thresholds_deg: evaluation::default_thresholds(),
            ablate_seeds: 3,
            ablate_test_samples_per_identity: 10,
            threads: None,
        };
        cfg.sync_seeds();
        cfg
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("{origin}:{}: expected 'key = value', got '{line}'", n + 1))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("invalid value '{value}' for key '{key}'")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl RunConfig {
    /// Builds a configuration from defaults, then `file` (if any), then
    /// `overrides` in order.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut merged: BTreeMap<String, String> = BTreeMap::new();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (k, v) in parse_pairs(&text, &path.display().to_string())? {
                merged.insert(k, v);
            }
        }
        for (k, v) in overrides {
            merged.insert(k.clone(), v.clone());
        }
        let mut cfg = Self::default();
        // `seed` first so explicit sub-seeds are not overwritten by derivation
        if let Some(v) = merged.get("seed") {
            cfg.set("seed", v)?;
        }
        for (k, v) in &merged {
            if k != "seed" {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn sync_seeds(&mut self) {
        self.data.seed = seed::derive_seed(self.seed, "data");
        self.train.seed = self.seed;
    }

    /// Same configuration with a different master seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.sync_seeds();
        c
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => {
                self.seed = parse(key, value)?;
                self.sync_seeds();
            }
            "data.num_identities" => self.data.num_identities = parse(key, value)?,
            "data.samples_per_identity" => self.data.samples_per_identity = parse(key, value)?,
            "data.input_dim" => self.data.input_dim = parse(key, value)?,
            "data.nuisance_dim" => self.data.nuisance_dim = parse(key, value)?,
            "data.nuisance_scale" => self.data.nuisance_scale = parse(key, value)?,
            "data.noise_std" => self.data.noise_std = parse(key, value)?,
            "data.nuisance_seed" => self.data.nuisance_seed = Some(parse(key, value)?),
            "data.pose_seed" => self.data.pose_seed = Some(parse(key, value)?),
            "model.hidden_dims" => self.train.backbone.hidden_dims = parse_list(key, value)?,
            "model.activation" => self.train.backbone.activation = value.parse()?,
            "model.head" => self.train.head = value.parse()?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.batch_pairs" => self.train.batch_pairs = parse(key, value)?,
            "train.eval_every" => self.train.eval_every = parse(key, value)?,
            "loss.beta" => self.train.loss = LossConfig::new(parse(key, value)?)?,
            "adam.lr0" => self.train.adam.lr0 = parse(key, value)?,
            "adam.beta1" => self.train.adam.beta1 = parse(key, value)?,
            "adam.beta2" => self.train.adam.beta2 = parse(key, value)?,
            "adam.eps" => self.train.adam.eps = parse(key, value)?,
            "eval.thresholds" => self.thresholds_deg = parse_list(key, value)?,
            "ablate.seeds" => self.ablate_seeds = parse(key, value)?,
            "ablate.test_samples_per_identity" => self.ablate_test_samples_per_identity = parse(key, value)?,
            "threads" => self.threads = Some(parse(key, value)?),
            other => return Err(Error::InvalidConfig(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        let mut train = self.train.clone();
        train.backbone.input_dim = self.data.input_dim;
        train.validate()?;
        train.adam_config(1).validate()?;
        if self.thresholds_deg.is_empty() || self.thresholds_deg.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
            return Err(Error::InvalidConfig("eval.thresholds must be a non-empty ascending list".into()));
        }
        if self.ablate_seeds == 0 {
            return Err(Error::InvalidConfig("ablate.seeds must be >= 1".into()));
        }
        if self.ablate_test_samples_per_identity == 0 {
            return Err(Error::InvalidConfig("ablate.test_samples_per_identity must be >= 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("threads must be >= 1".into()));
        }
        Ok(())
    }

    /// Training configuration for a dataset of feature width `input_dim`.
    pub fn train_config(&self, input_dim: usize) -> TrainConfig {
        let mut t = self.train.clone();
        t.backbone.input_dim = input_dim;
        t
    }

    /// Fresh poses and noise for the same identities (same nuisance vectors).
    pub fn in_distribution_test(&self) -> SyntheticConfig {
        SyntheticConfig {
            samples_per_identity: self.ablate_test_samples_per_identity,
            nuisance_seed: Some(self.data.nuisance_seed.unwrap_or_else(|| seed::derive_seed(self.data.seed, "nuisance"))),
            pose_seed: Some(seed::derive_seed(self.seed, "test-pose")),
            ..self.data.clone()
        }
    }

    /// Fresh poses, noise, and nuisance vectors under the same feature map.
    pub fn nuisance_shifted_test(&self) -> SyntheticConfig {
        SyntheticConfig {
            samples_per_identity: self.ablate_test_samples_per_identity,
            nuisance_seed: Some(seed::derive_seed(self.seed, "test-nuisance")),
            pose_seed: Some(seed::derive_seed(self.seed, "test-shifted-pose")),
            ..self.data.clone()
        }
    }
}
