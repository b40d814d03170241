use serde::{Deserialize, Serialize};

use super::net::{batch_pass, batch_view, forward_sample};
use super::{LossKind, NetworkConfig, NnError, ParameterSet};
use crate::data::FeatureTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(layer, tensor 0=weight/1=bias, element)` of the worst entry.
    pub worst: (usize, usize, usize),
    pub checked: usize,
}

/// Below this magnitude gradients are compared on an absolute scale; a
/// central difference at `eps = 1e-6` carries about 1e-10 of roundoff.
pub const GRAD_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, GRAD_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Compares backprop gradients with central differences
/// `(L(w + eps) - L(w - eps)) / 2 eps` for every parameter, frozen layers included.
/// Both sides are evaluated in double precision.
pub fn gradient_check(
    params: &ParameterSet,
    config: &NetworkConfig,
    batch: &FeatureTensor,
    targets: &[f32],
    kind: LossKind,
    epsilon: f64,
) -> Result<GradCheckReport, NnError> {
    let plans = config.resolve()?;
    params.check_against(config)?;
    let (n, data) = batch_view(config, batch)?;
    if targets.len() != n {
        return Err(NnError::ShapeMismatch { expected: vec![n], actual: vec![targets.len()] });
    }
    let inputs: Vec<f64> = data.iter().map(|&v| v as f64).collect();
    let ys: Vec<f64> = targets.iter().map(|&v| v as f64).collect();
    let mut p64: ParameterSet<f64> = params.cast();
    let analytic = batch_pass(&plans, &p64, &inputs, &ys, kind).grads;

    let len = config.input_len();
    let loss_at = |p: &ParameterSet<f64>| -> f64 {
        (0..n)
            .map(|i| kind.sample(forward_sample(&plans, p, &inputs[i * len..(i + 1) * len], false).0, ys[i]))
            .sum::<f64>()
            / n as f64
    };

    let mut report = GradCheckReport { max_relative_error: 0.0, worst: (0, 0, 0), checked: 0 };
    for layer in 0..p64.layers.len() {
        for which in 0..2 {
            let count = if which == 0 { p64.layers[layer].weight.len() } else { p64.layers[layer].bias.len() };
            for e in 0..count {
                let orig = *entry(&mut p64, layer, which, e);
                *entry(&mut p64, layer, which, e) = orig + epsilon;
                let up = loss_at(&p64);
                *entry(&mut p64, layer, which, e) = orig - epsilon;
                let down = loss_at(&p64);
                *entry(&mut p64, layer, which, e) = orig;
                let numeric = (up - down) / (2.0 * epsilon);
                let a = if which == 0 { analytic.layers[layer].weight.data[e] } else { analytic.layers[layer].bias.data[e] };
                let err = relative_error(a, numeric);
                report.checked += 1;
                if err > report.max_relative_error {
                    report.max_relative_error = err;
                    report.worst = (layer, which, e);
                }
            }
        }
    }
    Ok(report)
}

fn entry(p: &mut ParameterSet<f64>, layer: usize, which: usize, e: usize) -> &mut f64 {
    let l = &mut p.layers[layer];
    let t = if which == 0 { &mut l.weight } else { &mut l.bias };
    &mut t.data[e]
}
