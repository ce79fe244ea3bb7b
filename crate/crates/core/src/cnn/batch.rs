//! Minibatch forward and backward passes.
//!
//! The convolution stages run one sample at a time, which keeps their
//! unfolded inputs cache-sized. The dense layers see the batch as a
//! `B x in` matrix, so their weights are read once per batch rather than
//! once per sample.

use super::layers::gemm;
use super::{relu_backward, softmax, CnnError, CnnGradients, CnnModel, Tensor3, NUM_CLASSES};

impl CnnModel {
    /// Adds the summed cross-entropy gradient of every `(inputs[b],
    /// targets[b])` pair into `grads` and returns each sample's class
    /// probabilities. Equal, up to rounding, to calling
    /// [`CnnModel::backward_into`] once per sample.
    pub fn batch_gradients(
        &self,
        inputs: &[&[f64]],
        targets: &[usize],
        grads: &mut CnnGradients,
    ) -> Result<Vec<Vec<f64>>, CnnError> {
        let batch = inputs.len();
        if batch == 0 || targets.len() != batch {
            return Err(CnnError::SizeMismatch(format!(
                "{batch} inputs for {} targets",
                targets.len()
            )));
        }
        if let Some(&target) = targets.iter().find(|&&t| t >= NUM_CLASSES) {
            return Err(CnnError::BadTarget {
                target,
                classes: NUM_CLASSES,
            });
        }
        let nconv = self.convs.len();
        let (fc1, fc2) = (&self.fc1, &self.fc2);
        let mut stages = Vec::with_capacity(batch);
        let mut flat = Vec::with_capacity(batch * fc1.in_dim);
        for x in inputs {
            let (stage, out) = self.conv_stages(x)?;
            flat.extend_from_slice(&out);
            stages.push(stage);
        }

        let mut hidden = broadcast_bias(&fc1.bias, batch);
        gemm(
            batch,
            fc1.in_dim,
            fc1.out_dim,
            &flat,
            false,
            &fc1.weights,
            true,
            1.0,
            &mut hidden,
        );
        hidden.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut logits = broadcast_bias(&fc2.bias, batch);
        gemm(
            batch,
            fc2.in_dim,
            fc2.out_dim,
            &hidden,
            false,
            &fc2.weights,
            true,
            1.0,
            &mut logits,
        );
        let probs: Vec<Vec<f64>> = logits.chunks_exact(fc2.out_dim).map(softmax).collect();

        let mut delta: Vec<f64> = probs.iter().flatten().copied().collect();
        for (b, &t) in targets.iter().enumerate() {
            delta[b * NUM_CLASSES + t] -= 1.0;
        }

        let (head, tail) = grads.tensors.split_at_mut(2 * nconv);
        let [fc1_w, fc1_b, fc2_w, fc2_b] = tail else {
            unreachable!("four dense parameter tensors");
        };

        add_column_sums(&delta, fc2.out_dim, fc2_b);
        gemm(
            fc2.out_dim,
            batch,
            fc2.in_dim,
            &delta,
            true,
            &hidden,
            false,
            1.0,
            fc2_w,
        );
        let mut d_hidden = vec![0.0; batch * fc2.in_dim];
        gemm(
            batch,
            fc2.out_dim,
            fc2.in_dim,
            &delta,
            false,
            &fc2.weights,
            false,
            0.0,
            &mut d_hidden,
        );
        relu_backward(&mut d_hidden, &hidden);

        add_column_sums(&d_hidden, fc1.out_dim, fc1_b);
        gemm(
            fc1.out_dim,
            batch,
            fc1.in_dim,
            &d_hidden,
            true,
            &flat,
            false,
            1.0,
            fc1_w,
        );
        let mut d_flat = vec![0.0; batch * fc1.in_dim];
        gemm(
            batch,
            fc1.out_dim,
            fc1.in_dim,
            &d_hidden,
            false,
            &fc1.weights,
            false,
            0.0,
            &mut d_flat,
        );

        let side = self.arch.final_side();
        for (stage, d) in stages.iter().zip(d_flat.chunks_exact(fc1.in_dim)) {
            let d_pooled =
                Tensor3::new(self.arch.conv_channels[nconv - 1], side, side, d.to_vec())?;
            self.conv_backward(stage, d_pooled, head);
        }
        Ok(probs)
    }
}

fn broadcast_bias(bias: &[f64], rows: usize) -> Vec<f64> {
    bias.iter()
        .copied()
        .cycle()
        .take(rows * bias.len())
        .collect()
}

fn add_column_sums(m: &[f64], cols: usize, out: &mut [f64]) {
    for row in m.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::super::Architecture;
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn matches_per_sample_passes() {
        let mut rng = stream_rng(11, 0);
        let arch = Architecture {
            input_size: 16,
            conv_channels: vec![3, 5, 4],
            fc_hidden: 7,
        };
        let model = CnnModel::he_init(arch, &mut rng).unwrap();
        let inputs: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..256).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let targets = [0, 1, 1, 0, 1, 0];

        let mut expected = CnnGradients::zeros_like(&model);
        let mut expected_probs = Vec::new();
        for (x, &t) in inputs.iter().zip(&targets) {
            let cache = model.forward_values(x).unwrap();
            model.backward_into(&cache, t, &mut expected).unwrap();
            expected_probs.push(cache.probs);
        }

        let refs: Vec<&[f64]> = inputs.iter().map(|v| v.as_slice()).collect();
        let mut got = CnnGradients::zeros_like(&model);
        let probs = model.batch_gradients(&refs, &targets, &mut got).unwrap();

        for (p, q) in probs.iter().flatten().zip(expected_probs.iter().flatten()) {
            assert!((p - q).abs() < 1e-12, "{p} vs {q}");
        }
        for (i, (g, e)) in got.tensors.iter().zip(&expected.tensors).enumerate() {
            for (a, b) in g.iter().zip(e) {
                assert!(
                    (a - b).abs() <= 1e-10 * (1.0 + b.abs()),
                    "{}: {a} vs {b}",
                    model.param_name(i)
                );
            }
        }
    }

    #[test]
    fn rejects_bad_batches() {
        let model = CnnModel::zeros(Architecture {
            input_size: 8,
            conv_channels: vec![2],
            fc_hidden: 3,
        })
        .unwrap();
        let mut g = CnnGradients::zeros_like(&model);
        let x = vec![0.0; 64];
        assert!(matches!(
            model.batch_gradients(&[&x], &[2], &mut g),
            Err(CnnError::BadTarget { .. })
        ));
        assert!(matches!(
            model.batch_gradients(&[&x[..10]], &[0], &mut g),
            Err(CnnError::SizeMismatch(_))
        ));
        assert!(model.batch_gradients(&[], &[], &mut g).is_err());
    }
}
