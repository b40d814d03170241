//! Forward and backward passes over a resolved layer plan.

use super::{Gradients, LayerParams, LayerPlan, LayerSpec, LossKind, NetworkConfig, NnError, ParameterSet, Scalar, Shape};
use crate::data::FeatureTensor;

/// Activations recorded during a forward pass: `acts[i]` is the input of layer
/// `i` and the last entry is the network output.
pub(crate) struct Trace<T> {
    acts: Vec<Vec<T>>,
    pool_argmax: Vec<Vec<u32>>,
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    let one = T::one();
    if z >= T::zero() {
        one / (one + (-z).exp())
    } else {
        let e = z.exp();
        e / (one + e)
    }
}

fn spatial(s: Shape) -> (usize, usize, usize) {
    match s {
        Shape::Spatial { c, h, w } => (c, h, w),
        Shape::Flat(n) => (n, 1, 1),
    }
}

/// Range of output rows/cols `y` for which `y + k - 1` stays inside `[0, n)`.
#[inline]
fn valid(k: usize, n: usize) -> (usize, usize) {
    (1usize.saturating_sub(k), (n + 1 - k).min(n))
}

fn conv_forward<T: Scalar>(input: &[T], (c, h, w): (usize, usize, usize), p: &LayerParams<T>, out_c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); out_c * h * w];
    let wt = &p.weight.data;
    for o in 0..out_c {
        let plane = &mut out[o * h * w..(o + 1) * h * w];
        plane.iter_mut().for_each(|v| *v = p.bias.data[o]);
        for ci in 0..c {
            let src = &input[ci * h * w..(ci + 1) * h * w];
            for ky in 0..3 {
                let (y0, y1) = valid(ky, h);
                for kx in 0..3 {
                    let k = wt[((o * c + ci) * 3 + ky) * 3 + kx];
                    let (x0, x1) = valid(kx, w);
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let dst = &mut plane[y * w + x0..y * w + x1];
                        let s = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        for (d, &v) in dst.iter_mut().zip(s) {
                            *d = *d + k * v;
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Scalar>(
    input: &[T],
    (c, h, w): (usize, usize, usize),
    p: &LayerParams<T>,
    out_c: usize,
    dout: &[T],
    g: &mut LayerParams<T>,
    need_input_grad: bool,
) -> Vec<T> {
    let wt = &p.weight.data;
    let mut din = if need_input_grad { vec![T::zero(); c * h * w] } else { Vec::new() };
    for o in 0..out_c {
        let dplane = &dout[o * h * w..(o + 1) * h * w];
        g.bias.data[o] = g.bias.data[o] + dplane.iter().fold(T::zero(), |a, &b| a + b);
        for ci in 0..c {
            let src = &input[ci * h * w..(ci + 1) * h * w];
            for ky in 0..3 {
                let (y0, y1) = valid(ky, h);
                for kx in 0..3 {
                    let (x0, x1) = valid(kx, w);
                    let widx = ((o * c + ci) * 3 + ky) * 3 + kx;
                    let k = wt[widx];
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let d = &dplane[y * w + x0..y * w + x1];
                        let s = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        for (&dv, &sv) in d.iter().zip(s) {
                            acc = acc + dv * sv;
                        }
                        if need_input_grad {
                            let di = &mut din[ci * h * w + sy * w + x0 + kx - 1..ci * h * w + sy * w + x1 + kx - 1];
                            for (t, &dv) in di.iter_mut().zip(d) {
                                *t = *t + k * dv;
                            }
                        }
                    }
                    g.weight.data[widx] = g.weight.data[widx] + acc;
                }
            }
        }
    }
    din
}

fn dense_forward<T: Scalar>(input: &[T], p: &LayerParams<T>, out_n: usize) -> Vec<T> {
    let n = input.len();
    (0..out_n)
        .map(|o| {
            let row = &p.weight.data[o * n..(o + 1) * n];
            row.iter().zip(input).fold(p.bias.data[o], |a, (&w, &x)| a + w * x)
        })
        .collect()
}

fn dense_backward<T: Scalar>(input: &[T], p: &LayerParams<T>, out_n: usize, dout: &[T], g: &mut LayerParams<T>, need_input_grad: bool) -> Vec<T> {
    let n = input.len();
    let mut din = if need_input_grad { vec![T::zero(); n] } else { Vec::new() };
    for o in 0..out_n {
        let d = dout[o];
        g.bias.data[o] = g.bias.data[o] + d;
        if d == T::zero() {
            continue;
        }
        let grow = &mut g.weight.data[o * n..(o + 1) * n];
        for (gw, &x) in grow.iter_mut().zip(input) {
            *gw = *gw + d * x;
        }
        if need_input_grad {
            let row = &p.weight.data[o * n..(o + 1) * n];
            for (di, &wv) in din.iter_mut().zip(row) {
                *di = *di + d * wv;
            }
        }
    }
    din
}

fn maxpool_forward<T: Scalar>(input: &[T], (c, h, w): (usize, usize, usize)) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let base = ci * h * w;
                let cands = [
                    base + 2 * y * w + 2 * x,
                    base + 2 * y * w + 2 * x + 1,
                    base + (2 * y + 1) * w + 2 * x,
                    base + (2 * y + 1) * w + 2 * x + 1,
                ];
                let best = cands.iter().copied().fold(cands[0], |b, i| if input[i] > input[b] { i } else { b });
                out.push(input[best]);
                idx.push(best as u32);
            }
        }
    }
    (out, idx)
}

/// Runs one sample through the stack, optionally recording a trace.
pub(crate) fn forward_sample<T: Scalar>(plans: &[LayerPlan], params: &ParameterSet<T>, x: &[T], record: bool) -> (T, Option<Trace<T>>) {
    let mut trace = Trace { acts: Vec::new(), pool_argmax: Vec::new() };
    let mut cur = x.to_vec();
    for plan in plans {
        let next = match plan.spec {
            LayerSpec::Conv3x3 { out_channels } => {
                conv_forward(&cur, spatial(plan.input), &params.layers[plan.param.unwrap()], out_channels)
            }
            LayerSpec::Dense { out_units } => dense_forward(&cur, &params.layers[plan.param.unwrap()], out_units),
            LayerSpec::Relu => cur.iter().map(|&v| v.max(T::zero())).collect(),
            LayerSpec::Maxpool2x2 => {
                let (out, idx) = maxpool_forward(&cur, spatial(plan.input));
                if record {
                    trace.pool_argmax.push(idx);
                }
                out
            }
            LayerSpec::Flatten => cur.clone(),
            LayerSpec::Sigmoid => cur.iter().map(|&v| sigmoid(v)).collect(),
        };
        if record {
            trace.acts.push(std::mem::replace(&mut cur, next));
        } else {
            cur = next;
        }
    }
    let out = cur[0];
    if record {
        trace.acts.push(cur);
        (out, Some(trace))
    } else {
        (out, None)
    }
}

/// Accumulates `d loss / d params` for one sample into `grads`, given the
/// gradient at the sigmoid's input.
fn backward_sample<T: Scalar>(plans: &[LayerPlan], params: &ParameterSet<T>, trace: &Trace<T>, dlogit: T, grads: &mut Gradients<T>) {
    let mut grad = vec![dlogit];
    let mut pool_slot = trace.pool_argmax.len();
    // the final sigmoid is folded into dlogit
    for i in (0..plans.len() - 1).rev() {
        let plan = &plans[i];
        let input = &trace.acts[i];
        let need = i > 0;
        grad = match plan.spec {
            LayerSpec::Conv3x3 { out_channels } => {
                let k = plan.param.unwrap();
                conv_backward(input, spatial(plan.input), &params.layers[k], out_channels, &grad, &mut grads.layers[k], need)
            }
            LayerSpec::Dense { out_units } => {
                let k = plan.param.unwrap();
                dense_backward(input, &params.layers[k], out_units, &grad, &mut grads.layers[k], need)
            }
            LayerSpec::Relu => input.iter().zip(&grad).map(|(&x, &g)| if x > T::zero() { g } else { T::zero() }).collect(),
            LayerSpec::Maxpool2x2 => {
                pool_slot -= 1;
                let mut din = vec![T::zero(); input.len()];
                for (&src, &g) in trace.pool_argmax[pool_slot].iter().zip(&grad) {
                    din[src as usize] = din[src as usize] + g;
                }
                din
            }
            LayerSpec::Flatten => grad,
            LayerSpec::Sigmoid => unreachable!("sigmoid is only the final layer"),
        };
        if !need {
            break;
        }
    }
}

/// Output of a batch forward/backward pass.
pub(crate) struct BatchPass<T> {
    pub loss: T,
    pub preds: Vec<T>,
    pub grads: Gradients<T>,
}

/// Samples per work unit when a batch is split across threads. Fixed so that
/// gradient sums are reduced in the same order regardless of thread count.
const CHUNK: usize = 4;

pub(crate) fn batch_pass<T: Scalar>(
    plans: &[LayerPlan],
    params: &ParameterSet<T>,
    inputs: &[T],
    targets: &[T],
    kind: LossKind,
) -> BatchPass<T> {
    let n = targets.len();
    let sample_len = inputs.len() / n;
    let scale = T::one() / T::from_usize(n).unwrap();
    let run_chunk = |start: usize| {
        let mut g = params.zeros_like();
        let mut loss = T::zero();
        let mut preds = Vec::with_capacity(CHUNK);
        for s in start..(start + CHUNK).min(n) {
            let (p, trace) = forward_sample(plans, params, &inputs[s * sample_len..(s + 1) * sample_len], true);
            let y = targets[s];
            loss = loss + kind.sample(p, y);
            backward_sample(plans, params, &trace.unwrap(), kind.logit_grad(p, y) * scale, &mut g);
            preds.push(p);
        }
        (loss, preds, g)
    };
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    #[cfg(feature = "parallel")]
    let parts: Vec<_> = {
        use rayon::prelude::*;
        starts.par_iter().map(|&s| run_chunk(s)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<_> = starts.iter().map(|&s| run_chunk(s)).collect();

    let mut iter = parts.into_iter();
    let (mut loss, mut preds, mut grads) = iter.next().expect("batch is nonempty");
    for (l, p, g) in iter {
        loss = loss + l;
        preds.extend(p);
        grads.add_assign(&g);
    }
    BatchPass { loss: loss * scale, preds, grads }
}

/// Splits a `[N, C, H, W]` (or single `[C, H, W]`) tensor into `(n, flat data)`
/// after checking it against the configured input shape.
pub(crate) fn batch_view<'a>(config: &NetworkConfig, batch: &'a FeatureTensor) -> Result<(usize, &'a [f32]), NnError> {
    let shape = batch.shape();
    let per = &config.input_shape[..];
    let n = match shape.len() {
        3 if shape == per => 1,
        4 if &shape[1..] == per => shape[0],
        _ => return Err(NnError::ShapeMismatch { expected: config.input_shape.to_vec(), actual: shape.to_vec() }),
    };
    if n == 0 {
        return Err(NnError::ShapeMismatch { expected: config.input_shape.to_vec(), actual: shape.to_vec() });
    }
    Ok((n, batch.data()))
}

/// Malignant probability for each sample of a batch.
pub fn forward(params: &ParameterSet, config: &NetworkConfig, batch: &FeatureTensor) -> Result<Vec<f32>, NnError> {
    let plans = config.resolve()?;
    params.check_against(config)?;
    let (n, data) = batch_view(config, batch)?;
    let len = config.input_len();
    let run = |i: usize| forward_sample(&plans, params, &data[i * len..(i + 1) * len], false).0;
    #[cfg(feature = "parallel")]
    let out = {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let out = (0..n).map(run).collect();
    Ok(out)
}

/// Mean batch loss and its gradient for every parameterized layer, frozen or not.
pub fn backward(
    params: &ParameterSet,
    config: &NetworkConfig,
    batch: &FeatureTensor,
    targets: &[f32],
    kind: LossKind,
) -> Result<(f32, Gradients), NnError> {
    let plans = config.resolve()?;
    params.check_against(config)?;
    let (n, data) = batch_view(config, batch)?;
    if targets.len() != n {
        return Err(NnError::ShapeMismatch { expected: vec![n], actual: vec![targets.len()] });
    }
    let pass = batch_pass(&plans, params, data, targets, kind);
    Ok((pass.loss, pass.grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_network, LayerSpec, Tensor};

    fn scalar_net(w: f32, b: f32) -> (NetworkConfig, ParameterSet) {
        let cfg = NetworkConfig::new([1, 1, 1], vec![LayerSpec::Flatten, LayerSpec::Dense { out_units: 1 }, LayerSpec::Sigmoid]);
        let params = ParameterSet {
            layers: vec![LayerParams {
                name: "dense0".into(),
                weight: Tensor { shape: vec![1, 1], data: vec![w] },
                bias: Tensor { shape: vec![1], data: vec![b] },
            }],
        };
        (cfg, params)
    }

    #[test]
    fn zero_weights_give_half() {
        let cfg = crate::nn::compact_config([3, 8, 8], &[4], 5);
        let params = ParameterSet::zeros(&cfg).unwrap();
        let batch = FeatureTensor::new(vec![2, 3, 8, 8], (0..384).map(|i| (i % 7) as f32 / 7.0).collect()).unwrap();
        assert_eq!(forward(&params, &cfg, &batch).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn scalar_sigmoid() {
        let (cfg, params) = scalar_net(1.0, 0.0);
        let x = FeatureTensor::new(vec![1, 1, 1], vec![0.3]).unwrap();
        let p = forward(&params, &cfg, &x).unwrap()[0];
        assert!((p - 0.57444).abs() < 1e-5);
    }

    #[test]
    fn scalar_bce_gradient() {
        // dL/dz = p - 1 = -0.5 at z = 0, and dL/dw = (p - 1) x = 0 for x = 0
        let (cfg, params) = scalar_net(1.0, 0.0);
        let x = FeatureTensor::new(vec![1, 1, 1], vec![0.0]).unwrap();
        let (_, g) = backward(&params, &cfg, &x, &[1.0], LossKind::Bce).unwrap();
        assert_eq!(g.layers[0].weight.data[0], 0.0);
        assert_eq!(g.layers[0].bias.data[0], -0.5);
    }

    #[test]
    fn maxpool_picks_max() {
        let (out, idx) = maxpool_forward(&[1.0f32, 2.0, 3.0, 4.0], (1, 2, 2));
        assert_eq!(out, vec![4.0]);
        assert_eq!(idx, vec![3]);
    }

    #[test]
    fn zero_input_zero_conv_weight_grads() {
        let cfg = crate::nn::compact_config([1, 8, 8], &[3, 4], 0);
        let params = build_network(&cfg, 3).unwrap();
        let x = FeatureTensor::zeros(vec![1, 1, 8, 8]);
        let (_, g) = backward(&params, &cfg, &x, &[1.0], LossKind::Bce).unwrap();
        assert!(g.layers[0].weight.data.iter().all(|&v| v == 0.0));
        // the output bias always receives dL/dz
        assert!(g.layers.last().unwrap().bias.data[0] != 0.0);
    }

    #[test]
    fn shape_mismatch() {
        let (cfg, params) = scalar_net(1.0, 0.0);
        let x = FeatureTensor::new(vec![1, 2, 1], vec![0.0, 1.0]).unwrap();
        assert!(matches!(forward(&params, &cfg, &x), Err(NnError::ShapeMismatch { .. })));
        let x = FeatureTensor::new(vec![2, 1, 1, 1], vec![0.0, 1.0]).unwrap();
        assert!(matches!(backward(&params, &cfg, &x, &[1.0], LossKind::Bce), Err(NnError::ShapeMismatch { .. })));
    }

    #[test]
    fn forward_is_deterministic_and_bounded() {
        let cfg = crate::nn::compact_config([3, 16, 16], &[4, 8], 8);
        let params = build_network(&cfg, 5).unwrap();
        let batch = FeatureTensor::new(vec![3, 3, 16, 16], (0..3 * 768).map(|i| ((i * 37) % 255) as f32 / 255.0).collect()).unwrap();
        let a = forward(&params, &cfg, &batch).unwrap();
        let b = forward(&params, &cfg, &batch).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert!(a.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
}
