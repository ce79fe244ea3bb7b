//! Drone-vs-bird image classification from scratch: netpbm I/O and
//! preprocessing, HOG features, k-nearest-neighbour and linear SVM
//! classifiers, a small CNN with hand-written backpropagation, evaluation
//! metrics, and the pipeline behind the `avdb` command-line tool.

pub mod bench;
pub mod cli;
pub mod cnn;
pub mod codec;
pub mod config;
pub mod container;
pub mod dataset;
pub mod hog;
pub mod imagecore;
pub mod knn;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod svm;

pub use dataset::{Dataset, FeatureMode, Label, LabeledSample, SplitSpec};
pub use hog::{FeatureVector, HogConfig};
pub use imagecore::{GrayTensor, Image};
