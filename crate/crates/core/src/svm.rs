//! Linear soft-margin SVM trained in the primal.
//!
//! The objective is `(lambda/2)|w|^2 + (1/N) sum_i max(0, 1 - y_i (w.x_i + b))`
//! with the bias left unregularized. Each epoch takes one full subgradient
//! step with rate `lr0 / (1 + epoch)`; per-sample terms are accumulated in a
//! seeded shuffled order. Training starts from `w = 0, b = 0`.

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::codec::{ByteReader, ByteWriter, CodecError};
use crate::dataset::{Dataset, Label};
use crate::hog::FeatureVector;
use crate::rng::{stream_rng, STREAM_SVM};

#[derive(Debug, Error, PartialEq)]
pub enum SvmError {
    #[error("training set must contain both classes")]
    SingleClassDataset,
    #[error("query has dimension {got}, model expects {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("invalid SVM configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    w: Vec<f64>,
    b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmTrainConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub lr0: f64,
    pub seed: u64,
}

impl Default for SvmTrainConfig {
    fn default() -> Self {
        SvmTrainConfig {
            lambda: 1e-3,
            epochs: 200,
            lr0: 10.0,
            seed: 0,
        }
    }
}

impl SvmTrainConfig {
    pub fn validate(&self) -> Result<(), SvmError> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(SvmError::InvalidConfig(format!(
                "lambda {} must be positive",
                self.lambda
            )));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(SvmError::InvalidConfig(format!(
                "lr0 {} must be positive",
                self.lr0
            )));
        }
        if self.epochs == 0 {
            return Err(SvmError::InvalidConfig("epochs must be positive".into()));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl SvmModel {
    pub fn new(w: Vec<f64>, b: f64) -> Self {
        SvmModel { w, b }
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn bias(&self) -> f64 {
        self.b
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// `w.x + b`
    pub fn decision(&self, x: &FeatureVector) -> Result<f64, SvmError> {
        if x.dim() != self.w.len() {
            return Err(SvmError::DimMismatch {
                expected: self.w.len(),
                got: x.dim(),
            });
        }
        Ok(dot(&self.w, x.values()) + self.b)
    }

    /// Drone when the decision value is `>= 0` (the boundary counts as Drone).
    pub fn predict(&self, x: &FeatureVector) -> Result<Label, SvmError> {
        Ok(Label::from_sign(self.decision(x)?))
    }

    pub fn objective(&self, ds: &Dataset, lambda: f64) -> f64 {
        let hinge: f64 = ds
            .samples()
            .iter()
            .map(|s| (1.0 - s.label.sign() * (dot(&self.w, s.features.values()) + self.b)).max(0.0))
            .sum();
        0.5 * lambda * dot(&self.w, &self.w) + hinge / ds.len() as f64
    }

    pub fn write_payload(&self, w: &mut ByteWriter) {
        w.u64(self.w.len() as u64);
        w.f64(self.b);
        w.f64s(&self.w);
    }

    pub fn read_payload(r: &mut ByteReader<'_>) -> Result<Self, CodecError> {
        let dim = r.usize()?;
        let b = r.f64()?;
        let w = r.f64s(dim)?;
        Ok(SvmModel { w, b })
    }
}

pub fn svm_decision(m: &SvmModel, x: &FeatureVector) -> Result<f64, SvmError> {
    m.decision(x)
}

pub fn svm_predict(m: &SvmModel, x: &FeatureVector) -> Result<Label, SvmError> {
    m.predict(x)
}

pub fn svm_train(ds: &Dataset, cfg: &SvmTrainConfig) -> Result<SvmModel, SvmError> {
    svm_train_logged(ds, cfg).map(|(m, _)| m)
}

/// Trains and also returns the objective before the first step and after
/// every epoch (`epochs + 1` values).
pub fn svm_train_logged(
    ds: &Dataset,
    cfg: &SvmTrainConfig,
) -> Result<(SvmModel, Vec<f64>), SvmError> {
    cfg.validate()?;
    if !ds.has_both_classes() {
        return Err(SvmError::SingleClassDataset);
    }
    let n = ds.len();
    let dim = ds.feature_dim();
    let samples = ds.samples();
    let mut model = SvmModel {
        w: vec![0.0; dim],
        b: 0.0,
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(cfg.seed, STREAM_SVM);
    let mut grad_w = vec![0.0; dim];
    let mut log = Vec::with_capacity(cfg.epochs + 1);
    log.push(model.objective(ds, cfg.lambda));

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for &i in &order {
            let s = &samples[i];
            let y = s.label.sign();
            let x = s.features.values();
            if y * (dot(&model.w, x) + model.b) < 1.0 {
                for (g, &xi) in grad_w.iter_mut().zip(x) {
                    *g -= y * xi;
                }
                grad_b -= y;
            }
        }
        let lr = cfg.lr0 / (1.0 + epoch as f64);
        let inv_n = 1.0 / n as f64;
        for (w, g) in model.w.iter_mut().zip(&grad_w) {
            *w -= lr * (cfg.lambda * *w + g * inv_n);
        }
        model.b -= lr * grad_b * inv_n;
        log.push(model.objective(ds, cfg.lambda));
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::LabeledSample;

    fn ds(rows: &[(f64, f64, Label)]) -> Dataset {
        Dataset::new(
            rows.iter()
                .enumerate()
                .map(|(i, &(a, b, label))| LabeledSample {
                    id: format!("p{i}"),
                    features: FeatureVector::new(vec![a, b]),
                    label,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn decision_values() {
        let m = SvmModel::new(vec![1.0, 0.0], 0.0);
        assert_eq!(m.decision(&vec![2.0, 0.0].into()).unwrap(), 2.0);
        let z = SvmModel::new(vec![0.0, 0.0], 0.0);
        assert_eq!(z.decision(&vec![3.0, -7.0].into()).unwrap(), 0.0);
        let on = SvmModel::new(vec![1.0, 1.0], -1.0);
        assert_eq!(on.decision(&vec![0.5, 0.5].into()).unwrap(), 0.0);
        assert_eq!(on.predict(&vec![0.5, 0.5].into()).unwrap(), Label::Drone);
        assert_eq!(m.predict(&vec![-0.5, 0.0].into()).unwrap(), Label::Bird);
        assert_eq!(
            m.decision(&vec![1.0].into()),
            Err(SvmError::DimMismatch {
                expected: 2,
                got: 1
            })
        );
    }

    #[test]
    fn symmetric_pair() {
        let d = ds(&[(-1.0, 0.0, Label::Bird), (1.0, 0.0, Label::Drone)]);
        let m = svm_train(&d, &SvmTrainConfig::default()).unwrap();
        assert!(m.weights()[1].abs() < 1e-6);
        assert!(m.weights()[0] > 0.0);
        assert!(m.bias().abs() < 1e-9);
        for s in d.samples() {
            assert_eq!(m.predict(&s.features).unwrap(), s.label);
        }
        assert_eq!(m.predict(&vec![0.5, 0.0].into()).unwrap(), Label::Drone);
    }

    #[test]
    fn single_class_rejected() {
        let d = ds(&[(0.0, 0.0, Label::Bird), (1.0, 0.0, Label::Bird)]);
        assert_eq!(
            svm_train(&d, &SvmTrainConfig::default()),
            Err(SvmError::SingleClassDataset)
        );
    }

    #[test]
    fn duplicated_samples_give_same_model() {
        let rows = [
            (0.3, 1.2, Label::Drone),
            (1.5, 0.1, Label::Drone),
            (-0.7, -0.2, Label::Bird),
            (0.2, -1.4, Label::Bird),
            (0.9, 0.4, Label::Bird),
        ];
        let doubled: Vec<_> = rows.iter().chain(rows.iter()).copied().collect();
        let cfg = SvmTrainConfig {
            seed: 9,
            ..Default::default()
        };
        let a = svm_train(&ds(&rows), &cfg).unwrap();
        let b = svm_train(&ds(&doubled), &cfg).unwrap();
        for x in [[0.0, 0.0], [1.0, -2.0], [3.0, 0.5]] {
            let x: FeatureVector = x.to_vec().into();
            assert!((a.decision(&x).unwrap() - b.decision(&x).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn payload_round_trip() {
        let m = SvmModel::new(vec![0.25, -1.5, 3.0], -0.125);
        let mut w = ByteWriter::default();
        m.write_payload(&mut w);
        let bytes = w.into_bytes();
        let mut r = ByteReader::new(&bytes);
        assert_eq!(SvmModel::read_payload(&mut r).unwrap(), m);
        r.finish().unwrap();
    }

    #[test]
    fn invalid_config() {
        let d = ds(&[(-1.0, 0.0, Label::Bird), (1.0, 0.0, Label::Drone)]);
        let cfg = SvmTrainConfig {
            lambda: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            svm_train(&d, &cfg),
            Err(SvmError::InvalidConfig(_))
        ));
    }
}
