//! Small convolutional network: a stack of (3x3 conv, ReLU, 2x2 max-pool)
//! stages, a ReLU hidden dense layer and a two-way softmax output. Output
//! index 0 is Drone, 1 is Bird.

mod batch;
pub mod gradcheck;
pub mod layers;
mod train;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::codec::{ByteReader, ByteWriter, CodecError};
use crate::dataset::Label;
use crate::hog::FeatureVector;
use crate::imagecore::GrayTensor;

pub use layers::{
    conv2d_backward, conv2d_forward, cross_entropy, fc_backward, fc_forward, maxpool2x2,
    maxpool2x2_backward, relu, relu_backward, softmax, ConvLayer, FcLayer, Tensor3,
};
pub use train::{
    cnn_train, cnn_train_observed, CnnTrainConfig, EpochLog, TrainingLog, EARLY_STOP_PATIENCE,
    EARLY_STOP_TOLERANCE,
};

pub const KERNEL_SIZE: usize = 3;
pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum CnnError {
    #[error("expected {expected} input channels, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("max-pool needs even dimensions, got {height}x{width}")]
    OddDims { height: usize, width: usize },
    #[error("expected input of dimension {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("target {target} out of range for {classes} classes")]
    BadTarget { target: usize, classes: usize },
    #[error("training set must contain both classes")]
    SingleClassDataset,
    #[error("invalid CNN configuration: {0}")]
    InvalidConfig(String),
}

/// Network geometry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input_size: usize,
    pub conv_channels: Vec<usize>,
    pub fc_hidden: usize,
}

impl Architecture {
    pub fn validate(&self) -> Result<(), CnnError> {
        let depth = self.conv_channels.len();
        if depth == 0 {
            return Err(CnnError::InvalidConfig(
                "at least one conv stage is required".into(),
            ));
        }
        if self.conv_channels.contains(&0) || self.fc_hidden == 0 {
            return Err(CnnError::InvalidConfig(
                "channel counts and fc_hidden must be positive".into(),
            ));
        }
        let factor = 1usize << depth;
        if self.input_size == 0 || !self.input_size.is_multiple_of(factor) {
            return Err(CnnError::InvalidConfig(format!(
                "input size {} is not divisible by 2^{depth}",
                self.input_size
            )));
        }
        Ok(())
    }

    /// Spatial side after all pooling stages.
    pub fn final_side(&self) -> usize {
        self.input_size >> self.conv_channels.len()
    }

    pub fn flatten_dim(&self) -> usize {
        let side = self.final_side();
        self.conv_channels.last().copied().unwrap_or(0) * side * side
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    arch: Architecture,
    convs: Vec<ConvLayer>,
    fc1: FcLayer,
    fc2: FcLayer,
}

/// Per-stage values the convolutional backward pass needs.
#[derive(Debug, Clone)]
struct ConvStages {
    inputs: Vec<Tensor3>,
    activations: Vec<Tensor3>,
    argmax: Vec<Vec<usize>>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    stages: ConvStages,
    flat: Vec<f64>,
    hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Gradients with the same layout as [`CnnModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct CnnGradients {
    pub tensors: Vec<Vec<f64>>,
}

impl CnnGradients {
    pub fn zeros_like(m: &CnnModel) -> Self {
        CnnGradients {
            tensors: m.params().iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn zero(&mut self) {
        self.tensors
            .iter_mut()
            .for_each(|t| t.iter_mut().for_each(|v| *v = 0.0));
    }

    pub fn fc2_bias(&self) -> &[f64] {
        self.tensors.last().expect("fc2 bias")
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl CnnModel {
    /// All-zero parameters.
    pub fn zeros(arch: Architecture) -> Result<Self, CnnError> {
        arch.validate()?;
        let mut convs = Vec::with_capacity(arch.conv_channels.len());
        let mut in_ch = 1;
        for &out_ch in &arch.conv_channels {
            convs.push(ConvLayer::zeros(in_ch, out_ch, KERNEL_SIZE, KERNEL_SIZE));
            in_ch = out_ch;
        }
        let fc1 = FcLayer::zeros(arch.flatten_dim(), arch.fc_hidden);
        let fc2 = FcLayer::zeros(arch.fc_hidden, NUM_CLASSES);
        Ok(CnnModel {
            arch,
            convs,
            fc1,
            fc2,
        })
    }

    /// He-normal weights, zero biases.
    pub fn he_init(arch: Architecture, rng: &mut impl Rng) -> Result<Self, CnnError> {
        let mut m = CnnModel::zeros(arch)?;
        let fill = |w: &mut [f64], fan_in: usize, rng: &mut dyn rand::RngCore| {
            let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            w.iter_mut().for_each(|v| *v = dist.sample(rng));
        };
        for conv in &mut m.convs {
            let fan_in = conv.in_ch * conv.kh * conv.kw;
            fill(&mut conv.kernels, fan_in, rng);
        }
        fill(&mut m.fc1.weights, m.fc1.in_dim, rng);
        fill(&mut m.fc2.weights, m.fc2.in_dim, rng);
        Ok(m)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn input_size(&self) -> usize {
        self.arch.input_size
    }

    pub fn convs(&self) -> &[ConvLayer] {
        &self.convs
    }

    pub fn fc1(&self) -> &FcLayer {
        &self.fc1
    }

    pub fn fc2(&self) -> &FcLayer {
        &self.fc2
    }

    /// Parameter tensors in declaration order: each conv's kernels then bias,
    /// then fc1 weights, fc1 bias, fc2 weights, fc2 bias.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(2 * self.convs.len() + 4);
        for c in &self.convs {
            out.push(&c.kernels);
            out.push(&c.bias);
        }
        out.extend([
            &self.fc1.weights[..],
            &self.fc1.bias,
            &self.fc2.weights,
            &self.fc2.bias,
        ]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * self.convs.len() + 4);
        for c in &mut self.convs {
            out.push(&mut c.kernels);
            out.push(&mut c.bias);
        }
        out.extend([
            &mut self.fc1.weights[..],
            &mut self.fc1.bias,
            &mut self.fc2.weights,
            &mut self.fc2.bias,
        ]);
        out
    }

    /// Human-readable name of parameter tensor `i`.
    pub fn param_name(&self, i: usize) -> String {
        let nconv = self.convs.len();
        if i < 2 * nconv {
            format!(
                "conv{}.{}",
                i / 2 + 1,
                if i.is_multiple_of(2) {
                    "kernels"
                } else {
                    "bias"
                }
            )
        } else {
            ["fc1.weights", "fc1.bias", "fc2.weights", "fc2.bias"][i - 2 * nconv].to_string()
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn input_tensor(&self, values: &[f64]) -> Result<Tensor3, CnnError> {
        let s = self.arch.input_size;
        if values.len() != s * s {
            return Err(CnnError::SizeMismatch(format!(
                "model expects {s}x{s} input, got {} values",
                values.len()
            )));
        }
        Tensor3::new(1, s, s, values.to_vec())
    }

    pub fn forward(&self, x: &GrayTensor) -> Result<ForwardCache, CnnError> {
        if x.width() != self.arch.input_size || x.height() != self.arch.input_size {
            return Err(CnnError::SizeMismatch(format!(
                "model expects {0}x{0} input, got {1}x{2}",
                self.arch.input_size,
                x.width(),
                x.height()
            )));
        }
        self.forward_values(x.values())
    }

    /// Runs every (conv, ReLU, pool) stage; returns the cached stage values
    /// and the flattened output of the last stage.
    fn conv_stages(&self, values: &[f64]) -> Result<(ConvStages, Vec<f64>), CnnError> {
        let mut t = self.input_tensor(values)?;
        let n = self.convs.len();
        let mut st = ConvStages {
            inputs: Vec::with_capacity(n),
            activations: Vec::with_capacity(n),
            argmax: Vec::with_capacity(n),
        };
        for conv in &self.convs {
            let mut a = conv2d_forward(&t, conv)?;
            a.values.iter_mut().for_each(|v| *v = v.max(0.0));
            let (pooled, arg) = maxpool2x2(&a)?;
            st.inputs.push(t);
            st.activations.push(a);
            st.argmax.push(arg);
            t = pooled;
        }
        Ok((st, t.values))
    }

    /// Back-propagates the gradient of the last stage's pooled output,
    /// accumulating into the conv entries `grads[..2 * depth]`.
    fn conv_backward(&self, st: &ConvStages, mut d_pooled: Tensor3, grads: &mut [Vec<f64>]) {
        for i in (0..self.convs.len()).rev() {
            let act = &st.activations[i];
            let mut d_act = maxpool2x2_backward(&d_pooled, &st.argmax[i], act.dims());
            relu_backward(&mut d_act.values, &act.values);
            let (dk, db) = grads[2 * i..2 * i + 2].split_at_mut(1);
            match conv2d_backward(
                &st.inputs[i],
                &self.convs[i],
                &d_act,
                &mut dk[0],
                &mut db[0],
                i > 0,
            ) {
                Some(d_in) => d_pooled = d_in,
                None => break,
            }
        }
    }

    /// Forward pass over a flattened `input_size`² pixel vector.
    pub fn forward_values(&self, values: &[f64]) -> Result<ForwardCache, CnnError> {
        let (stages, flat) = self.conv_stages(values)?;
        let hidden = relu(&fc_forward(&flat, &self.fc1)?);
        let logits = fc_forward(&hidden, &self.fc2)?;
        let probs = softmax(&logits);
        Ok(ForwardCache {
            stages,
            flat,
            hidden,
            logits,
            probs,
        })
    }

    /// Adds the gradient of `cross_entropy(softmax(logits), target)` with
    /// respect to every parameter into `grads`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        target: usize,
        grads: &mut CnnGradients,
    ) -> Result<(), CnnError> {
        if target >= NUM_CLASSES {
            return Err(CnnError::BadTarget {
                target,
                classes: NUM_CLASSES,
            });
        }
        let nconv = self.convs.len();
        let mut delta = cache.probs.clone();
        delta[target] -= 1.0;

        let (head, tail) = grads.tensors.split_at_mut(2 * nconv);
        let [fc1_w, fc1_b, fc2_w, fc2_b] = tail else {
            unreachable!("four dense parameter tensors");
        };
        let mut d_hidden = fc_backward(&cache.hidden, &self.fc2, &delta, fc2_w, fc2_b);
        relu_backward(&mut d_hidden, &cache.hidden);
        let d_flat = fc_backward(&cache.flat, &self.fc1, &d_hidden, fc1_w, fc1_b);

        let side = self.arch.final_side();
        let d_pooled = Tensor3::new(self.arch.conv_channels[nconv - 1], side, side, d_flat)?;
        self.conv_backward(&cache.stages, d_pooled, head);
        Ok(())
    }

    pub fn backward(&self, cache: &ForwardCache, target: usize) -> Result<CnnGradients, CnnError> {
        let mut g = CnnGradients::zeros_like(self);
        self.backward_into(cache, target, &mut g)?;
        Ok(g)
    }

    pub fn probabilities(&self, x: &GrayTensor) -> Result<Vec<f64>, CnnError> {
        Ok(self.forward(x)?.probs)
    }

    pub fn predict(&self, x: &GrayTensor) -> Result<Label, CnnError> {
        Ok(label_from_probs(&self.forward(x)?.probs))
    }

    /// Prediction from a flattened raw-pixel feature vector.
    pub fn predict_features(&self, x: &FeatureVector) -> Result<Label, CnnError> {
        if x.dim() != self.arch.input_size * self.arch.input_size {
            return Err(CnnError::DimMismatch {
                expected: self.arch.input_size.pow(2),
                got: x.dim(),
            });
        }
        Ok(label_from_probs(&self.forward_values(x.values())?.probs))
    }

    pub fn write_payload(&self, w: &mut ByteWriter) {
        w.u64(self.arch.input_size as u64);
        w.u64(self.arch.conv_channels.len() as u64);
        for &c in &self.arch.conv_channels {
            w.u64(c as u64);
        }
        w.u64(self.arch.fc_hidden as u64);
        for p in self.params() {
            w.f64s(p);
        }
    }

    pub fn read_payload(r: &mut ByteReader<'_>) -> Result<Self, CodecError> {
        let input_size = r.usize()?;
        let depth = r.usize()?;
        if depth > 16 {
            return Err(CodecError::Invalid(format!("{depth} conv stages")));
        }
        let conv_channels = (0..depth)
            .map(|_| r.usize())
            .collect::<Result<Vec<_>, _>>()?;
        let fc_hidden = r.usize()?;
        let arch = Architecture {
            input_size,
            conv_channels,
            fc_hidden,
        };
        let mut m = CnnModel::zeros(arch).map_err(|e| CodecError::Invalid(e.to_string()))?;
        for p in m.params_mut() {
            let vals = r.f64s(p.len())?;
            p.copy_from_slice(&vals);
        }
        Ok(m)
    }
}

/// Argmax with the first index winning ties.
pub fn label_from_probs(p: &[f64]) -> Label {
    if p[1] > p[0] {
        Label::Bird
    } else {
        Label::Drone
    }
}

pub fn cnn_forward(m: &CnnModel, x: &GrayTensor) -> Result<(Vec<f64>, ForwardCache), CnnError> {
    let cache = m.forward(x)?;
    Ok((cache.probs.clone(), cache))
}

pub fn cnn_backward(
    m: &CnnModel,
    cache: &ForwardCache,
    target: usize,
) -> Result<CnnGradients, CnnError> {
    m.backward(cache, target)
}

pub fn cnn_predict(m: &CnnModel, x: &GrayTensor) -> Result<Label, CnnError> {
    m.predict(x)
}
