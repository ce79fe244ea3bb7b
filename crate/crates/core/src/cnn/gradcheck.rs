//! Central-difference verification of the analytic backward pass.

use rand::Rng;

use super::{cross_entropy, Architecture, CnnError, CnnGradients, CnnModel};
use crate::rng::stream_rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor: gradients smaller than this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct WorstParam {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub params_checked: usize,
    pub worst: WorstParam,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn loss(m: &CnnModel, x: &[f64], target: usize) -> Result<f64, CnnError> {
    cross_entropy(&m.forward_values(x)?.probs, target)
}

/// Compares `analytic` against central differences for every parameter.
pub fn compare(
    model: &CnnModel,
    x: &[f64],
    target: usize,
    analytic: &CnnGradients,
) -> Result<GradcheckReport, CnnError> {
    let mut probe = model.clone();
    let mut worst = WorstParam {
        tensor: String::new(),
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut max_rel = -1.0;
    let mut count = 0;
    for (t, grad) in analytic.tensors.iter().enumerate() {
        for (i, &g) in grad.iter().enumerate() {
            let orig = probe.params()[t][i];
            probe.params_mut()[t][i] = orig + STEP;
            let plus = loss(&probe, x, target)?;
            probe.params_mut()[t][i] = orig - STEP;
            let minus = loss(&probe, x, target)?;
            probe.params_mut()[t][i] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let rel = relative_error(g, numeric);
            if rel > max_rel {
                max_rel = rel;
                worst = WorstParam {
                    tensor: model.param_name(t),
                    index: i,
                    analytic: g,
                    numeric,
                };
            }
            count += 1;
        }
    }
    Ok(GradcheckReport {
        max_rel_error: max_rel,
        params_checked: count,
        worst,
    })
}

/// The reference check: an 8x8 input, one conv stage with 2 maps and a
/// 4-unit hidden layer, seeded weights, small random biases and input.
/// `fault` is added to one analytic gradient entry (negative control).
pub fn run_gradcheck(seed: u64, fault: Option<f64>) -> Result<GradcheckReport, CnnError> {
    let arch = Architecture {
        input_size: 8,
        conv_channels: vec![2],
        fc_hidden: 4,
    };
    let mut rng = stream_rng(seed, 0x4752_4144);
    let mut model = CnnModel::he_init(arch, &mut rng)?;
    let nconv = model.convs().len();
    // every bias tensor sits at an odd position in the parameter list
    for (t, p) in model.params_mut().into_iter().enumerate() {
        if t % 2 == 1 {
            p.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
    }
    let x: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..1.0)).collect();
    let target = 0;
    let cache = model.forward_values(&x)?;
    let mut grads = model.backward(&cache, target)?;
    if let Some(delta) = fault {
        let fc1 = 2 * nconv;
        grads.tensors[fc1][0] += delta;
    }
    compare(&model, &x, target, &grads)
}
