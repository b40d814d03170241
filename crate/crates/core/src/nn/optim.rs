use serde::{Deserialize, Serialize};

use super::{Gradients, ParameterSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd { lr: f32 },
    Adam { lr: f32, beta1: f32, beta2: f32, epsilon: f32 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::adam(1e-3)
    }
}

impl OptimizerKind {
    pub fn adam(lr: f32) -> Self {
        OptimizerKind::Adam { lr, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }

    pub fn lr(&self) -> f32 {
        match *self {
            OptimizerKind::Sgd { lr } | OptimizerKind::Adam { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let lr = self.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(format!("learning rate must be positive, got {lr}"));
        }
        if let OptimizerKind::Adam { beta1, beta2, epsilon, .. } = *self {
            for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
                if !(0.0..1.0).contains(&b) {
                    return Err(format!("{name} must lie in [0, 1), got {b}"));
                }
            }
            if epsilon <= 0.0 {
                return Err(format!("epsilon must be positive, got {epsilon}"));
            }
        }
        Ok(())
    }
}

/// Adam moment estimates, one buffer per tensor (weight, bias, weight, bias, ...).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl OptimizerState {
    pub fn new(params: &ParameterSet) -> Self {
        let zeros: Vec<Vec<f32>> = params.tensors().map(|t| vec![0.0; t.len()]).collect();
        Self { step: 0, m: zeros.clone(), v: zeros }
    }
}

/// Applies one update to the trainable layers. `trainable[i]` covers both
/// tensors of parameterized layer `i`; frozen tensors and their moments are untouched.
pub fn optimizer_step(
    params: &mut ParameterSet,
    grads: &Gradients,
    state: &mut OptimizerState,
    kind: &OptimizerKind,
    trainable: &[bool],
) {
    if state.m.is_empty() {
        *state = OptimizerState::new(params);
    }
    state.step += 1;
    let t = state.step as i32;
    for (ti, (p, g)) in params.tensors_mut().zip(grads.tensors()).enumerate() {
        if !trainable.get(ti / 2).copied().unwrap_or(true) {
            continue;
        }
        match *kind {
            OptimizerKind::Sgd { lr } => {
                for (w, &gv) in p.data.iter_mut().zip(&g.data) {
                    *w -= lr * gv;
                }
            }
            OptimizerKind::Adam { lr, beta1, beta2, epsilon } => {
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let (m, v) = (&mut state.m[ti], &mut state.v[ti]);
                for (((w, &gv), mi), vi) in p.data.iter_mut().zip(&g.data).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mi = beta1 * *mi + (1.0 - beta1) * gv;
                    *vi = beta2 * *vi + (1.0 - beta2) * gv * gv;
                    let mhat = *mi / c1;
                    let vhat = *vi / c2;
                    *w -= lr * mhat / (vhat.sqrt() + epsilon);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerParams, Tensor};

    fn single(w: f32) -> ParameterSet {
        ParameterSet {
            layers: vec![LayerParams {
                name: "dense0".into(),
                weight: Tensor { shape: vec![1, 1], data: vec![w] },
                bias: Tensor { shape: vec![1], data: vec![0.0] },
            }],
        }
    }

    #[test]
    fn sgd_step() {
        let mut p = single(1.0);
        let mut g = single(0.5);
        g.layers[0].bias.data[0] = 0.0;
        let mut st = OptimizerState::new(&p);
        optimizer_step(&mut p, &g, &mut st, &OptimizerKind::Sgd { lr: 0.1 }, &[true]);
        assert!((p.layers[0].weight.data[0] - 0.95).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = single(1.0);
        let g = single(0.0);
        let mut st = OptimizerState::new(&p);
        st.m[0][0] = 0.2;
        st.v[0][0] = 0.04;
        optimizer_step(&mut p, &g, &mut st, &OptimizerKind::adam(1e-3), &[true]);
        assert_eq!(st.m[0][0], 0.9 * 0.2);
        assert!((st.v[0][0] - 0.999 * 0.04).abs() < 1e-9);
        // moments only decay; the stale first moment still nudges the weight
        let mut fresh = single(1.0);
        let mut st = OptimizerState::new(&fresh);
        optimizer_step(&mut fresh, &g, &mut st, &OptimizerKind::adam(1e-3), &[true]);
        assert_eq!(fresh, single(1.0));
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        // at t = 1, mhat = g and vhat = g^2, so the step is lr * g / (|g| + eps)
        for g in [1e-3f32, 0.5, 40.0, -7.0] {
            let mut p = single(0.0);
            let grads = single(g);
            let mut st = OptimizerState::new(&p);
            optimizer_step(&mut p, &grads, &mut st, &OptimizerKind::adam(1e-2), &[true]);
            let dw = p.layers[0].weight.data[0];
            assert!((dw.abs() - 1e-2).abs() < 1e-6, "g={g}: {dw}");
            assert_eq!(dw.signum(), -g.signum());
        }
    }

    #[test]
    fn frozen_layers_untouched() {
        let mut p = single(1.0);
        let g = single(3.0);
        let mut st = OptimizerState::new(&p);
        optimizer_step(&mut p, &g, &mut st, &OptimizerKind::adam(0.1), &[false]);
        assert_eq!(p, single(1.0));
        assert!(st.m.iter().chain(&st.v).all(|b| b.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn validation() {
        assert!(OptimizerKind::Sgd { lr: 0.0 }.validate().is_err());
        assert!(OptimizerKind::Adam { lr: 0.1, beta1: 1.0, beta2: 0.9, epsilon: 1e-8 }.validate().is_err());
        assert!(OptimizerKind::default().validate().is_ok());
    }
}
