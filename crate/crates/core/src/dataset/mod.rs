//! Labeled samples, directory-per-class ingestion and stratified splitting.

pub mod synthetic;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::hog::{hog_descriptor, FeatureVector, HogConfig, HogError};
use crate::imagecore::{decode_image, preprocess, GrayTensor, ImageError};
use crate::rng::{stream_rng, STREAM_SPLIT};

pub use synthetic::{generate_synthetic, render_sample, write_corpus, SyntheticSample};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("class folder `{0}` contains no decodable images")]
    EmptyClass(PathBuf),
    #[error("missing class folder `{0}`")]
    MissingClassDir(PathBuf),
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: ImageError },
    #[error("{id}: {source}")]
    Feature { id: String, source: HogError },
    #[error("I/O error on `{path}`: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

/// Binary class label. Drone is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Drone,
    Bird,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Drone, Label::Bird];

    /// `+1` for Drone, `-1` for Bird.
    pub fn sign(self) -> f64 {
        match self {
            Label::Drone => 1.0,
            Label::Bird => -1.0,
        }
    }

    pub fn from_sign(s: f64) -> Self {
        if s >= 0.0 {
            Label::Drone
        } else {
            Label::Bird
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Drone => Label::Bird,
            Label::Bird => Label::Drone,
        }
    }

    /// Class index used by the CNN output layer.
    pub fn index(self) -> usize {
        match self {
            Label::Drone => 0,
            Label::Bird => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Drone),
            1 => Some(Label::Bird),
            _ => None,
        }
    }

    pub fn dir_name(self) -> &'static str {
        match self {
            Label::Drone => "drone",
            Label::Bird => "bird",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "drone" => Some(Label::Drone),
            "bird" => Some(Label::Bird),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    pub features: FeatureVector,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureMode {
    RawPixels,
    Hog(HogConfig),
}

impl FeatureMode {
    pub fn featurize(&self, t: &GrayTensor) -> Result<FeatureVector, HogError> {
        match self {
            FeatureMode::RawPixels => Ok(FeatureVector::new(t.values().to_vec())),
            FeatureMode::Hog(cfg) => hog_descriptor(t, cfg),
        }
    }
}

/// A preprocessed image with its label, before featurization.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub id: String,
    pub label: Label,
    pub tensor: GrayTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<LabeledSample>,
    feature_dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<LabeledSample>) -> Result<Self, DatasetError> {
        let feature_dim = samples.first().map(|s| s.features.dim()).unwrap_or(0);
        for s in &samples {
            if s.features.dim() != feature_dim {
                return Err(DatasetError::Invalid(format!(
                    "sample {} has dim {}, expected {feature_dim}",
                    s.id,
                    s.features.dim()
                )));
            }
            if s.features.dim() == 0 || !s.features.is_finite() {
                return Err(DatasetError::Invalid(format!(
                    "sample {} has empty or non-finite features",
                    s.id
                )));
            }
        }
        Ok(Dataset {
            samples,
            feature_dim,
        })
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<LabeledSample> {
        self.samples
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    pub fn has_both_classes(&self) -> bool {
        Label::ALL.iter().all(|&l| self.count(l) > 0)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.samples.iter().map(|s| s.id.as_str())
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            feature_dim: self.feature_dim,
        }
    }
}

/// Per-class train fraction and shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Result<Self, DatasetError> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(DatasetError::Invalid(format!(
                "train_fraction {train_fraction} outside (0, 1)"
            )));
        }
        Ok(SplitSpec {
            train_fraction,
            seed,
        })
    }

    pub fn train_count(&self, class_count: usize) -> usize {
        (self.train_fraction * class_count as f64).floor() as usize
    }
}

/// Stratified split: each class is shuffled with its own PCG32 stream and the
/// first `floor(fraction * count)` indices go to training. Both halves keep
/// the input order.
pub fn split_train_test(ds: &Dataset, spec: SplitSpec) -> (Dataset, Dataset) {
    let mut in_train = vec![false; ds.len()];
    for label in Label::ALL {
        let mut idx: Vec<usize> = ds
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == label)
            .map(|(i, _)| i)
            .collect();
        let mut rng = stream_rng(spec.seed, STREAM_SPLIT | label.index() as u64);
        idx.shuffle(&mut rng);
        for &i in &idx[..spec.train_count(idx.len())] {
            in_train[i] = true;
        }
    }
    let (train, test): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| in_train[i]);
    (ds.subset(&train), ds.subset(&test))
}

fn is_supported_file(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "pnm"))
            .unwrap_or(false)
}

/// Decodes and preprocesses every image under `<root>/drone` and
/// `<root>/bird`, ordered by class then file name.
pub fn load_images(root: &Path, image_size: usize) -> Result<Vec<LabeledImage>, DatasetError> {
    let mut out = Vec::new();
    for label in Label::ALL {
        let dir = root.join(label.dir_name());
        if !dir.is_dir() {
            return Err(DatasetError::MissingClassDir(dir));
        }
        let io_err = |source| DatasetError::Io {
            path: dir.clone(),
            source,
        };
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()
            .map_err(io_err)?;
        files.retain(|p| is_supported_file(p));
        files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
        if files.is_empty() {
            return Err(DatasetError::EmptyClass(dir));
        }
        for path in files {
            let bytes = fs::read(&path).map_err(|source| DatasetError::Io {
                path: path.clone(),
                source,
            })?;
            let tensor = decode_image(&bytes)
                .and_then(|img| preprocess(&img, image_size))
                .map_err(|source| DatasetError::Image {
                    path: path.clone(),
                    source,
                })?;
            let name = path
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default();
            out.push(LabeledImage {
                id: format!("{}/{name}", label.dir_name()),
                label,
                tensor,
            });
        }
    }
    Ok(out)
}

pub fn featurize(images: &[LabeledImage], mode: &FeatureMode) -> Result<Dataset, DatasetError> {
    let samples = images
        .iter()
        .map(|im| {
            let features = mode
                .featurize(&im.tensor)
                .map_err(|source| DatasetError::Feature {
                    id: im.id.clone(),
                    source,
                })?;
            Ok(LabeledSample {
                id: im.id.clone(),
                features,
                label: im.label,
            })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    Dataset::new(samples)
}

pub fn load_directory(
    root: &Path,
    image_size: usize,
    mode: &FeatureMode,
) -> Result<Dataset, DatasetError> {
    featurize(&load_images(root, image_size)?, mode)
}
