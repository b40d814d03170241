use serde::{Deserialize, Serialize};

use super::Scalar;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `-[y ln p + (1 - y) ln(1 - p)]`
    #[default]
    Bce,
    /// `(p - y)^2 / 2`
    HalfSquared,
}

impl LossKind {
    pub fn sample<T: Scalar>(self, p: T, y: T) -> T {
        let one = T::one();
        match self {
            LossKind::Bce => {
                let eps = T::from_f64(PROB_EPS).unwrap();
                let p = p.max(eps).min(one - eps);
                -(y * p.ln() + (one - y) * (one - p).ln())
            }
            LossKind::HalfSquared => {
                let d = p - y;
                d * d / T::from_f64(2.0).unwrap()
            }
        }
    }

    /// Derivative of the sample loss with respect to the sigmoid's input logit.
    pub fn logit_grad<T: Scalar>(self, p: T, y: T) -> T {
        match self {
            LossKind::Bce => p - y,
            LossKind::HalfSquared => (p - y) * p * (T::one() - p),
        }
    }
}

/// Mean loss over a batch.
pub fn loss(preds: &[f32], targets: &[f32], kind: LossKind) -> f32 {
    assert_eq!(preds.len(), targets.len(), "prediction/target length mismatch");
    if preds.is_empty() {
        return 0.0;
    }
    let total: f64 = preds.iter().zip(targets).map(|(&p, &y)| kind.sample(p as f64, y as f64)).sum();
    (total / preds.len() as f64) as f32
}
