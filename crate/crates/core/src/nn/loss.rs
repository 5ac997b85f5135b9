use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Predictions are clamped to `[CLAMP, 1 - CLAMP]` before taking logs.
pub const CLAMP: f64 = 1e-7;

/// Per-class loss weights for the binary ice (1) / water (0) target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub water: f64,
    pub ice: f64,
}

impl ClassWeights {
    pub const BALANCED: ClassWeights = ClassWeights { water: 1.0, ice: 1.0 };

    pub fn new(water: f64, ice: f64) -> Self {
        Self { water, ice }
    }
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self::BALANCED
    }
}

/// Mean weighted binary cross-entropy and its gradient with respect to `pred`.
///
/// `loss = mean(-(w_ice * t * ln p + w_water * (1 - t) * ln(1 - p)))`. The
/// gradient is zero where the clamp is active.
pub fn weighted_bce<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    weights: ClassWeights,
) -> Result<(f64, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len() as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut total = 0.0;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let t = t.as_f64();
        if t != 0.0 && t != 1.0 {
            return Err(Error::InvalidTarget(t));
        }
        let raw = p.as_f64();
        let p = raw.clamp(CLAMP, 1.0 - CLAMP);
        let inside = raw > CLAMP && raw < 1.0 - CLAMP;
        if t == 1.0 {
            total -= weights.ice * p.ln();
            if inside {
                *g = T::of(-weights.ice / p / n);
            }
        } else {
            total -= weights.water * (1.0 - p).ln();
            if inside {
                *g = T::of(weights.water / (1.0 - p) / n);
            }
        }
    }
    Ok((total / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Tensor<f64> {
        Tensor::from_vec([1, 1, 1, 1], vec![v]).unwrap()
    }

    #[test]
    fn ice_weighted_half() {
        let (l, _) = weighted_bce(&one(0.5), &one(1.0), ClassWeights::new(1.0, 10.0)).unwrap();
        assert!((l - 10.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((l - 6.9315).abs() < 1e-4);
    }

    #[test]
    fn confident_correct_is_near_zero() {
        let (l, _) = weighted_bce(&one(1.0 - 1e-7), &one(1.0), ClassWeights::BALANCED).unwrap();
        assert!(l < 1e-6);
        let (l, _) = weighted_bce(&one(1.0), &one(1.0), ClassWeights::BALANCED).unwrap();
        assert!((0.0..1e-6).contains(&l));
    }

    #[test]
    fn unit_weights_are_standard_bce() {
        let p = Tensor::from_vec([1, 1, 1, 3], vec![0.2, 0.7, 0.9]).unwrap();
        let t = Tensor::from_vec([1, 1, 1, 3], vec![0.0, 1.0, 1.0]).unwrap();
        let (l, _) = weighted_bce(&p, &t, ClassWeights::BALANCED).unwrap();
        let expect = -((0.8f64).ln() + (0.7f64).ln() + (0.9f64).ln()) / 3.0;
        assert!((l - expect).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_binary_target() {
        assert!(matches!(
            weighted_bce(&one(0.5), &one(0.5), ClassWeights::BALANCED),
            Err(Error::InvalidTarget(_))
        ));
    }

    #[test]
    fn gradient_matches_difference_quotient() {
        let w = ClassWeights::new(0.1, 10.0);
        for (p, t) in [(0.3, 1.0), (0.6, 0.0)] {
            let (_, g) = weighted_bce(&one(p), &one(t), w).unwrap();
            let h = 1e-6;
            let (lp, _) = weighted_bce(&one(p + h), &one(t), w).unwrap();
            let (lm, _) = weighted_bce(&one(p - h), &one(t), w).unwrap();
            assert!((g.data()[0] - (lp - lm) / (2.0 * h)).abs() < 1e-6);
        }
    }
}
