use rand::seq::SliceRandom;

use super::{Architecture, CnnError, CnnGradients, CnnModel};
use crate::dataset::Dataset;
use crate::rng::{stream_rng, STREAM_CNN_INIT, STREAM_CNN_SHUFFLE};

/// Training stops once the mean epoch loss has moved by less than this...
pub const EARLY_STOP_TOLERANCE: f64 = 1e-5;
/// ...for this many consecutive epochs.
pub const EARLY_STOP_PATIENCE: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct CnnTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    pub conv_channels: Vec<usize>,
    pub fc_hidden: usize,
}

impl Default for CnnTrainConfig {
    fn default() -> Self {
        CnnTrainConfig {
            epochs: 80,
            batch: 32,
            lr: 0.01,
            momentum: 0.9,
            seed: 0,
            conv_channels: vec![8, 16, 32],
            fc_hidden: 128,
        }
    }
}

impl CnnTrainConfig {
    pub fn validate(&self) -> Result<(), CnnError> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(CnnError::InvalidConfig(
                "epochs and batch must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CnnError::InvalidConfig(format!(
                "lr {} must be positive",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(CnnError::InvalidConfig(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        if !(2..=4).contains(&self.conv_channels.len()) {
            return Err(CnnError::InvalidConfig(format!(
                "{} conv stages requested, supported depths are 2 to 4",
                self.conv_channels.len()
            )));
        }
        Ok(())
    }

    pub fn architecture(&self, input_size: usize) -> Architecture {
        Architecture {
            input_size,
            conv_channels: self.conv_channels.clone(),
            fc_hidden: self.fc_hidden,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// 1-based
    pub epoch: usize,
    pub mean_loss: f64,
    /// fraction of training samples classified correctly during the epoch's
    /// forward passes (before each batch update)
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub early_stopped: bool,
}

fn square_side(dim: usize) -> Option<usize> {
    let s = (dim as f64).sqrt().round() as usize;
    (s * s == dim).then_some(s)
}

/// Minibatch SGD with momentum on softmax cross-entropy. `ds` must hold
/// raw-pixel features of square images.
pub fn cnn_train(ds: &Dataset, cfg: &CnnTrainConfig) -> Result<(CnnModel, TrainingLog), CnnError> {
    cnn_train_observed(ds, cfg, |_, _| {})
}

/// [`cnn_train`] that also hands every finished epoch and the model after it
/// to `observe`. The step size is constant, so the state after epoch `e` is
/// exactly what a run configured for `e` epochs would return.
pub fn cnn_train_observed<F>(
    ds: &Dataset,
    cfg: &CnnTrainConfig,
    mut observe: F,
) -> Result<(CnnModel, TrainingLog), CnnError>
where
    F: FnMut(&EpochLog, &CnnModel),
{
    cfg.validate()?;
    if !ds.has_both_classes() {
        return Err(CnnError::SingleClassDataset);
    }
    let side = square_side(ds.feature_dim()).ok_or_else(|| {
        CnnError::SizeMismatch(format!(
            "feature dim {} is not a square image",
            ds.feature_dim()
        ))
    })?;
    let mut init_rng = stream_rng(cfg.seed, STREAM_CNN_INIT);
    let mut model = CnnModel::he_init(cfg.architecture(side), &mut init_rng)?;
    let mut shuffle_rng = stream_rng(cfg.seed, STREAM_CNN_SHUFFLE);

    let samples = ds.samples();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut grads = CnnGradients::zeros_like(&model);
    let mut velocity = CnnGradients::zeros_like(&model);
    let mut log = TrainingLog::default();
    let mut calm_epochs = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch) {
            grads.zero();
            let inputs: Vec<&[f64]> = batch
                .iter()
                .map(|&i| samples[i].features.values())
                .collect();
            let targets: Vec<usize> = batch.iter().map(|&i| samples[i].label.index()).collect();
            let probs = model.batch_gradients(&inputs, &targets, &mut grads)?;
            for (p, &i) in probs.iter().zip(batch) {
                loss_sum += super::cross_entropy(p, samples[i].label.index())?;
                if super::label_from_probs(p) == samples[i].label {
                    correct += 1;
                }
            }
            let scale = cfg.lr / batch.len() as f64;
            for ((p, v), g) in model
                .params_mut()
                .into_iter()
                .zip(&mut velocity.tensors)
                .zip(&grads.tensors)
            {
                for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                    *vi = cfg.momentum * *vi - scale * gi;
                    *pi += *vi;
                }
            }
        }
        let entry = EpochLog {
            epoch,
            mean_loss: loss_sum / samples.len() as f64,
            accuracy: correct as f64 / samples.len() as f64,
        };
        if let Some(prev) = log.epochs.last() {
            if (entry.mean_loss - prev.mean_loss).abs() < EARLY_STOP_TOLERANCE {
                calm_epochs += 1;
            } else {
                calm_epochs = 0;
            }
        }
        log.epochs.push(entry);
        observe(&entry, &model);
        if calm_epochs >= EARLY_STOP_PATIENCE {
            log.early_stopped = true;
            break;
        }
    }
    Ok((model, log))
}
