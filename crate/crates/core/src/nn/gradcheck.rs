//! Central finite differences for verifying hand-written backward passes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{BatchNorm2d, Concat, Conv2d, Layer, LayerKind, MaxPool3, Mode, Relu, Sigmoid, Upsample};
use super::tensor::Tensor;
use crate::error::Result;

/// Finite-difference step used by [`check_layer`].
pub const STEP: f64 = 1e-3;
/// Denominator floor for relative errors of near-zero gradients.
pub const FLOOR: f64 = 1e-6;

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise `|a - n| / max(|a|, |n|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Worst relative errors of one layer's analytic gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub input: f64,
    /// `None` for layers without parameters.
    pub params: Option<f64>,
}

impl GradCheck {
    pub fn worst(&self) -> f64 {
        self.input.max(self.params.unwrap_or(0.0))
    }
}

/// Distinct values at least 0.01 apart and 0.005 away from zero, shuffled,
/// so a step of 1e-3 never crosses a relu kink or reorders a max.
fn separated(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - (n / 2) as f64) * 0.01 + 0.005).collect();
    v.shuffle(rng);
    v
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Check `kind` on random 2x4x12x12 inputs (a second 2x3x12x12 operand for
/// concat) against central differences of `sum(r * layer(x))` for a random
/// `r`. Batchnorm is checked in train mode, where the batch statistics make
/// the gradient non-local.
pub fn check_layer(kind: LayerKind, seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [2, 4, 12, 12];
    let n: usize = shape.iter().product();
    let x = match kind {
        LayerKind::Relu | LayerKind::MaxPool3x3 => separated(&mut rng, n),
        _ => uniform(&mut rng, n),
    };
    let mut inputs = vec![Tensor::from_vec(shape, x)?];
    let layer: Layer<f64> = match kind {
        LayerKind::Conv3x3 => Layer::Conv(Conv2d::new(4, 3, 1, &mut rng)),
        LayerKind::Conv3x3Stride2 => Layer::Conv(Conv2d::new(4, 3, 2, &mut rng)),
        LayerKind::BatchNorm => {
            let mut bn = BatchNorm2d::new(4);
            bn.gamma.value = (0..4).map(|_| rng.random_range(0.5..1.5)).collect();
            bn.beta.value = uniform(&mut rng, 4);
            Layer::BatchNorm(bn)
        }
        LayerKind::MaxPool3x3 => Layer::MaxPool(MaxPool3::new()),
        LayerKind::Upsample => Layer::Upsample(Upsample::new(2 + (seed as usize % 2))),
        LayerKind::Relu => Layer::Relu(Relu::new()),
        LayerKind::Sigmoid => Layer::Sigmoid(Sigmoid::new()),
        LayerKind::Concat => {
            inputs.push(Tensor::from_vec([2, 3, 12, 12], uniform(&mut rng, 2 * 3 * 144))?);
            Layer::Concat(Concat::new())
        }
    };

    let probe = layer.clone();
    let eval = |l: &Layer<f64>, xs: &[Tensor<f64>]| -> Result<Tensor<f64>> {
        let mut l = l.clone();
        l.forward(&xs.iter().collect::<Vec<_>>(), Mode::Train)
    };
    let y = eval(&probe, &inputs)?;
    let r = Tensor::from_vec(y.shape(), uniform(&mut rng, y.len()))?;
    let dot = |y: &Tensor<f64>| y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>();

    let mut analytic_layer = layer.clone();
    analytic_layer.forward(&inputs.iter().collect::<Vec<_>>(), Mode::Train)?;
    let dxs = analytic_layer.backward(&r)?;

    let mut input_err: f64 = 0.0;
    for (k, dx) in dxs.iter().enumerate() {
        let numeric = numeric_gradient(
            |v| {
                let mut xs = inputs.clone();
                xs[k] = Tensor::from_vec(xs[k].shape(), v.to_vec()).expect("same shape");
                dot(&eval(&probe, &xs).expect("forward"))
            },
            inputs[k].data(),
            STEP,
        );
        input_err = input_err.max(max_relative_error(dx.data(), &numeric, FLOOR));
    }

    let params = analytic_layer.params();
    let params_err = if params.is_empty() {
        None
    } else {
        let mut worst: f64 = 0.0;
        for (pi, p) in params.iter().enumerate() {
            let numeric = numeric_gradient(
                |v| {
                    let mut l = probe.clone();
                    l.params_mut()[pi].value = v.to_vec();
                    dot(&eval(&l, &inputs).expect("forward"))
                },
                &p.value,
                STEP,
            );
            worst = worst.max(max_relative_error(&p.grad, &numeric, FLOOR));
        }
        Some(worst)
    };
    Ok(GradCheck {
        input: input_err,
        params: params_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let g = numeric_gradient(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, -1.0], 1e-3);
        assert!(max_relative_error(&g, &[4.0, 3.0], 1e-6) < 1e-9);
    }
}
