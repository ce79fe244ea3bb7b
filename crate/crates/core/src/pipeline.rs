//! End-to-end wiring: images to features, split, train, classify, score.

use std::collections::HashSet;

use thiserror::Error;

use crate::cnn::{cnn_train_observed, CnnError, EpochLog};
use crate::config::{ConfigError, RunConfig};
use crate::container::{Model, ModelKind};
use crate::dataset::{
    featurize, split_train_test, Dataset, DatasetError, FeatureMode, Label, LabeledImage,
};
use crate::hog::FeatureVector;
use crate::knn::{knn_fit, KnnError};
use crate::metrics::{evaluate, ConfusionMatrix, MetricReport};
use crate::svm::{svm_train, SvmError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("model does not fit the data: {0}")]
    Mismatch(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("test-set leakage: {0}")]
    Leakage(String),
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

/// The CNN sees pixels; KNN and SVM see whatever `features` selects.
pub fn feature_mode_for(kind: ModelKind, cfg: &RunConfig) -> FeatureMode {
    match kind {
        ModelKind::Cnn => FeatureMode::RawPixels,
        _ => cfg.feature_mode(),
    }
}

/// Checks everything about `cfg` that can be checked before touching data.
pub fn validate_config(cfg: &RunConfig, kind: ModelKind) -> Result<(), PipelineError> {
    let conf = |e: String| PipelineError::Config(e);
    if kind != ModelKind::Cnn {
        if let FeatureMode::Hog(h) = cfg.feature_mode() {
            h.descriptor_len(cfg.image_size, cfg.image_size)
                .map_err(|e| conf(e.to_string()))?;
        }
    }
    match kind {
        ModelKind::Knn => {}
        ModelKind::Svm => cfg
            .svm_config()
            .validate()
            .map_err(|e| conf(e.to_string()))?,
        ModelKind::Cnn => {
            let c = cfg.cnn_config();
            c.validate().map_err(|e| conf(e.to_string()))?;
            c.architecture(cfg.image_size)
                .validate()
                .map_err(|e| conf(e.to_string()))?;
        }
    }
    Ok(())
}

/// Featurizes `images` for `kind` and splits with the configured seed.
pub fn prepare(
    images: &[LabeledImage],
    cfg: &RunConfig,
    kind: ModelKind,
) -> Result<(Dataset, Dataset), PipelineError> {
    let ds = featurize(images, &feature_mode_for(kind, cfg))?;
    let (train, test) = split_train_test(&ds, cfg.split());
    check_disjoint(&train, &test)?;
    Ok((train, test))
}

pub fn check_disjoint(train: &Dataset, test: &Dataset) -> Result<(), PipelineError> {
    let seen: HashSet<&str> = train.ids().collect();
    match test.ids().find(|id| seen.contains(id)) {
        Some(id) => Err(PipelineError::Leakage(format!(
            "`{id}` is in both the training and the test split"
        ))),
        None => Ok(()),
    }
}

fn training_error(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Training(e.to_string())
}

/// Trains `kind` on `train`. CNN epochs are reported through `on_epoch`.
pub fn train_model(
    kind: ModelKind,
    train: &Dataset,
    cfg: &RunConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Model, PipelineError> {
    validate_config(cfg, kind)?;
    Ok(match kind {
        ModelKind::Knn => Model::Knn(knn_fit(train, cfg.k).map_err(|e| match e {
            KnnError::KTooLarge { .. } | KnnError::ZeroK => PipelineError::Config(e.to_string()),
            other => training_error(other),
        })?),
        ModelKind::Svm => Model::Svm(svm_train(train, &cfg.svm_config()).map_err(training_error)?),
        ModelKind::Cnn => {
            let (m, _) = cnn_train_observed(train, &cfg.cnn_config(), |e, _| on_epoch(e))
                .map_err(training_error)?;
            Model::Cnn(m)
        }
    })
}

pub fn predict(model: &Model, x: &FeatureVector) -> Result<Label, PipelineError> {
    let mismatch = |e: String| PipelineError::Mismatch(e);
    match model {
        Model::Knn(m) => m.predict(x).map_err(|e| match e {
            KnnError::DimMismatch { .. } => mismatch(e.to_string()),
            other => training_error(other),
        }),
        Model::Svm(m) => m.predict(x).map_err(|e| match e {
            SvmError::DimMismatch { .. } => mismatch(e.to_string()),
            other => training_error(other),
        }),
        Model::Cnn(m) => m.predict_features(x).map_err(|e| match e {
            CnnError::DimMismatch { .. } | CnnError::SizeMismatch(_) => mismatch(e.to_string()),
            other => training_error(other),
        }),
    }
}

/// Checks that `model` can consume the features `cfg` produces.
pub fn check_compatible(model: &Model, cfg: &RunConfig) -> Result<(), PipelineError> {
    let expected = match model {
        Model::Knn(m) => m.feature_dim(),
        Model::Svm(m) => m.dim(),
        Model::Cnn(m) => {
            if m.input_size() != cfg.image_size {
                return Err(PipelineError::Mismatch(format!(
                    "CNN was trained on {0}x{0} images, run is configured for {1}x{1}",
                    m.input_size(),
                    cfg.image_size
                )));
            }
            return Ok(());
        }
    };
    let got = match feature_mode_for(model.kind(), cfg) {
        FeatureMode::RawPixels => cfg.image_size * cfg.image_size,
        FeatureMode::Hog(h) => h
            .descriptor_len(cfg.image_size, cfg.image_size)
            .map_err(|e| PipelineError::Mismatch(e.to_string()))?,
    };
    if got != expected {
        return Err(PipelineError::Mismatch(format!(
            "model expects {expected}-dimensional features, run produces {got} ({}x{} images)",
            cfg.image_size, cfg.image_size
        )));
    }
    Ok(())
}

pub fn predict_all(model: &Model, ds: &Dataset) -> Result<Vec<Label>, PipelineError> {
    ds.samples()
        .iter()
        .map(|s| predict(model, &s.features))
        .collect()
}

/// Confusion matrix and metric report of `model` on `test`.
pub fn score(
    model: &Model,
    test: &Dataset,
) -> Result<(ConfusionMatrix, MetricReport), PipelineError> {
    let preds = predict_all(model, test)?;
    let truth: Vec<Label> = test.samples().iter().map(|s| s.label).collect();
    let ids: Vec<&str> = test.ids().collect();
    evaluate(&ids, &preds, &truth).map_err(|e| PipelineError::Mismatch(e.to_string()))
}

pub fn channels_label(channels: &[usize]) -> String {
    channels
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join("-")
}

/// Hyper-parameter summary for a CSV row (no commas).
pub fn params_string(kind: ModelKind, cfg: &RunConfig) -> String {
    let features = match cfg.features {
        crate::config::FeatureKind::Hog => "hog",
        crate::config::FeatureKind::Raw => "raw",
    };
    match kind {
        ModelKind::Knn => format!("k={};features={features}", cfg.k),
        ModelKind::Svm => format!(
            "lambda={};epochs={};lr0={};features={features}",
            cfg.svm.lambda, cfg.svm.epochs, cfg.svm.lr0
        ),
        ModelKind::Cnn => cnn_params(&cfg.cnn.conv_channels, cfg.cnn.epochs),
    }
}

pub fn cnn_params(channels: &[usize], epochs: usize) -> String {
    format!(
        "depth={};epochs={epochs};channels={}",
        channels.len(),
        channels_label(channels)
    )
}

/// Channel widths for a `depth`-stage network derived from `base`: truncated
/// when shorter, extended by doubling the last width when longer.
pub fn channels_for_depth(base: &[usize], depth: usize) -> Vec<usize> {
    let mut out: Vec<usize> = base.iter().copied().take(depth).collect();
    while out.len() < depth {
        let next = out.last().map_or(8, |&c| c * 2);
        out.push(next);
    }
    out
}
