//! Run configuration: flat `key = value` text with `#` comments.
//!
//! The same text form is echoed into every model container, so a trained
//! model always carries the split seed, train fraction and preprocessing it
//! was built with.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::cnn::CnnTrainConfig;
use crate::dataset::{FeatureMode, SplitSpec};
use crate::hog::HogConfig;
use crate::knn::DEFAULT_K;
use crate::svm::SvmTrainConfig;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("configuration key `{0}` cannot be overridden here")]
    Locked(String),
}

/// Input representation for the KNN and SVM classifiers. The CNN always
/// consumes raw pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Hog,
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub image_size: usize,
    pub features: FeatureKind,
    pub hog: HogConfig,
    pub train_fraction: f64,
    pub seed: u64,
    pub k: usize,
    pub svm: SvmTrainConfig,
    pub cnn: CnnTrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            image_size: 64,
            features: FeatureKind::Hog,
            hog: HogConfig::default(),
            train_fraction: 0.8,
            seed: 1,
            k: DEFAULT_K,
            svm: SvmTrainConfig::default(),
            cnn: CnnTrainConfig::default(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "image_size",
    "features",
    "train_fraction",
    "seed",
    "k",
    "svm_lambda",
    "svm_epochs",
    "svm_lr0",
    "epochs",
    "batch",
    "lr",
    "momentum",
    "conv_channels",
    "fc_hidden",
    "hog_cell",
    "hog_block",
    "hog_stride",
    "hog_bins",
    "hog_clip",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn bad(key: &str, value: &str, reason: &str) -> ConfigError {
    ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: reason.into(),
    }
}

impl RunConfig {
    pub fn split(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
            seed: self.seed,
        }
    }

    pub fn feature_mode(&self) -> FeatureMode {
        match self.features {
            FeatureKind::Hog => FeatureMode::Hog(self.hog),
            FeatureKind::Raw => FeatureMode::RawPixels,
        }
    }

    pub fn svm_config(&self) -> SvmTrainConfig {
        SvmTrainConfig {
            seed: self.seed,
            ..self.svm
        }
    }

    pub fn cnn_config(&self) -> CnnTrainConfig {
        CnnTrainConfig {
            seed: self.seed,
            ..self.cnn.clone()
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let positive = |v: usize| {
            if v == 0 {
                Err(bad(key, value, "must be positive"))
            } else {
                Ok(v)
            }
        };
        match key {
            "image_size" => self.image_size = positive(parse(key, value)?)?,
            "features" => {
                self.features = match value {
                    "hog" => FeatureKind::Hog,
                    "raw" => FeatureKind::Raw,
                    _ => return Err(bad(key, value, "expected `hog` or `raw`")),
                }
            }
            "train_fraction" => {
                let f: f64 = parse(key, value)?;
                if !(f > 0.0 && f < 1.0) {
                    return Err(bad(key, value, "must lie strictly between 0 and 1"));
                }
                self.train_fraction = f;
            }
            "seed" => self.seed = parse(key, value)?,
            "k" => self.k = positive(parse(key, value)?)?,
            "svm_lambda" => self.svm.lambda = parse(key, value)?,
            "svm_epochs" => self.svm.epochs = positive(parse(key, value)?)?,
            "svm_lr0" => self.svm.lr0 = parse(key, value)?,
            "epochs" => self.cnn.epochs = positive(parse(key, value)?)?,
            "batch" => self.cnn.batch = positive(parse(key, value)?)?,
            "lr" => self.cnn.lr = parse(key, value)?,
            "momentum" => self.cnn.momentum = parse(key, value)?,
            "conv_channels" => {
                let chans = value
                    .split(',')
                    .map(|c| parse::<usize>(key, c.trim()).and_then(positive))
                    .collect::<Result<Vec<_>, _>>()?;
                self.cnn.conv_channels = chans;
            }
            "fc_hidden" => self.cnn.fc_hidden = positive(parse(key, value)?)?,
            "hog_cell" => self.hog.cell_size = parse(key, value)?,
            "hog_block" => self.hog.block_size = parse(key, value)?,
            "hog_stride" => self.hog.block_stride = parse(key, value)?,
            "hog_bins" => self.hog.bins = parse(key, value)?,
            "hog_clip" => self.hog.clip = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        match key {
            "image_size" => self.image_size.to_string(),
            "features" => match self.features {
                FeatureKind::Hog => "hog".into(),
                FeatureKind::Raw => "raw".into(),
            },
            "train_fraction" => self.train_fraction.to_string(),
            "seed" => self.seed.to_string(),
            "k" => self.k.to_string(),
            "svm_lambda" => self.svm.lambda.to_string(),
            "svm_epochs" => self.svm.epochs.to_string(),
            "svm_lr0" => self.svm.lr0.to_string(),
            "epochs" => self.cnn.epochs.to_string(),
            "batch" => self.cnn.batch.to_string(),
            "lr" => self.cnn.lr.to_string(),
            "momentum" => self.cnn.momentum.to_string(),
            "conv_channels" => self
                .cnn
                .conv_channels
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(","),
            "fc_hidden" => self.cnn.fc_hidden.to_string(),
            "hog_cell" => self.hog.cell_size.to_string(),
            "hog_block" => self.hog.block_size.to_string(),
            "hog_stride" => self.hog.block_stride.to_string(),
            "hog_bins" => self.hog.bins.to_string(),
            "hog_clip" => self.hog.clip.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: n + 1,
                text: raw.to_string(),
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Every key in canonical order, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            writeln!(out, "{key} = {}", self.get(key)).expect("writing to a String");
        }
        out
    }
}
