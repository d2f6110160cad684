//! Supervised segmentation losses on predicted probabilities, each returning
//! its value together with the gradient w.r.t. the probabilities.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Probability clamp used inside the cross-entropy.
pub const BCE_EPS: f64 = 1e-7;
/// Smoothing added to numerator and denominator of the soft dice ratio.
pub const DICE_SMOOTH: f64 = 1e-6;

/// Ground-truth mask `y` (values in {0,1}) and predicted probabilities `p`.
#[derive(Clone, Copy, Debug)]
pub struct MaskPair<'a, T> {
    y: &'a [T],
    p: &'a [T],
}

impl<'a, T: Real> MaskPair<'a, T> {
    pub fn new(y: &'a [T], p: &'a [T]) -> Result<Self> {
        if y.len() != p.len() {
            return Err(Error::Shape(format!(
                "mask has {} pixels, prediction has {}",
                y.len(),
                p.len()
            )));
        }
        if y.is_empty() {
            return Err(Error::Shape("empty mask".into()));
        }
        if let Some(v) = y.iter().find(|&&v| v != T::ZERO && v != T::ONE) {
            return Err(Error::Data(format!("mask value {v} is not binary")));
        }
        if let Some(v) = p.iter().find(|&&v| !(v >= T::ZERO && v <= T::ONE)) {
            return Err(Error::Data(format!("probability {v} outside [0,1]")));
        }
        Ok(MaskPair { y, p })
    }

    pub fn from_tensors(y: &'a Tensor<T>, p: &'a Tensor<T>) -> Result<Self> {
        if y.shape() != p.shape() {
            return Err(Error::Shape(format!(
                "mask {} vs prediction {}",
                y.shape(),
                p.shape()
            )));
        }
        Self::new(y.data(), p.data())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// A scalar loss and its gradient w.r.t. every predicted probability.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Mean per-pixel binary cross-entropy with `p` clamped to `[eps, 1-eps]`.
/// The gradient is evaluated at the clamped probability and passed straight
/// through the clamp.
pub fn bce_loss<T: Real>(mp: &MaskPair<T>) -> LossValue {
    let n = mp.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(mp.len());
    for (&y, &p) in mp.y.iter().zip(mp.p) {
        let (y, p) = (y.to_f64(), p.to_f64().clamp(BCE_EPS, 1.0 - BCE_EPS));
        value -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        grad.push((-y / p + (1.0 - y) / (1.0 - p)) / n);
    }
    LossValue {
        value: value / n,
        grad,
    }
}

/// `1 - (2 sum(y p) + s) / (sum(y^2) + sum(p^2) + s)`.
pub fn dice_loss<T: Real>(mp: &MaskPair<T>) -> LossValue {
    let (mut inter, mut denom) = (0.0, 0.0);
    for (&y, &p) in mp.y.iter().zip(mp.p) {
        let (y, p) = (y.to_f64(), p.to_f64());
        inter += y * p;
        denom += y * y + p * p;
    }
    let num = 2.0 * inter + DICE_SMOOTH;
    let den = denom + DICE_SMOOTH;
    let grad = mp
        .y
        .iter()
        .zip(mp.p)
        .map(|(&y, &p)| {
            let (y, p) = (y.to_f64(), p.to_f64());
            -(2.0 * y * den - num * 2.0 * p) / (den * den)
        })
        .collect();
    LossValue {
        value: 1.0 - num / den,
        grad,
    }
}

/// `0.5 * bce + 0.5 * dice`.
pub fn combined_loss<T: Real>(mp: &MaskPair<T>) -> LossValue {
    let b = bce_loss(mp);
    let d = dice_loss(mp);
    LossValue {
        value: 0.5 * b.value + 0.5 * d.value,
        grad: b
            .grad
            .iter()
            .zip(&d.grad)
            .map(|(gb, gd)| 0.5 * gb + 0.5 * gd)
            .collect(),
    }
}

/// Records `combined_loss(sigmoid(logits), mask)` on the graph and returns
/// the scalar loss node.
pub fn combined_loss_node<T: Real>(g: &mut Graph<T>, logits: Var, mask: &Tensor<T>) -> Result<Var> {
    let probs = g.tape.sigmoid(logits);
    let lv = {
        let p = g.value(probs);
        combined_loss(&MaskPair::from_tensors(mask, p)?)
    };
    let shape = g.shape(probs);
    let grad = Tensor::from_vec(shape, lv.grad.iter().map(|&v| T::from_f64(v)).collect())?;
    Ok(g.tape
        .scalar_with_grads(T::from_f64(lv.value), &[probs], vec![grad]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair<'a>(y: &'a [f64], p: &'a [f64]) -> MaskPair<'a, f64> {
        MaskPair::new(y, p).unwrap()
    }

    #[test]
    fn bce_examples() {
        assert!((bce_loss(&pair(&[1.0], &[0.5])).value - 0.693147).abs() < 1e-6);
        let v = bce_loss(&pair(&[1.0, 0.0], &[0.9, 0.2])).value;
        assert!((v - 0.164252).abs() < 1e-6, "{v}");
        let v = bce_loss(&pair(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0])).value;
        assert!(v >= 0.0 && v < 2e-7, "{v}");
    }

    #[test]
    fn dice_examples() {
        assert!(dice_loss(&pair(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0])).value.abs() < 1e-12);
        assert!((dice_loss(&pair(&[1.0; 4], &[0.0; 4])).value - 1.0).abs() < 1e-6);
        let v = dice_loss(&pair(&[1.0, 1.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0])).value;
        assert!((v - 0.333333).abs() < 1e-6);
        // Empty prediction on empty mask is a perfect match.
        assert!(dice_loss(&pair(&[0.0; 3], &[0.0; 3])).value.abs() < 1e-12);
    }

    #[test]
    fn combined_examples() {
        let v = combined_loss(&pair(&[1.0, 1.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0])).value;
        assert!((v - 2.1814).abs() < 1e-4, "{v}");
        let y = [1.0, 0.0, 0.0, 1.0];
        let p = [0.0, 1.0, 1.0, 0.0];
        let mp = pair(&y, &p);
        let c = combined_loss(&mp).value;
        assert!((c - (0.5 * bce_loss(&mp).value + 0.5)).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_pairs() {
        assert!(MaskPair::new(&[1.0f64, 0.0], &[0.5]).is_err());
        assert!(MaskPair::new(&[0.5f64], &[0.5]).is_err());
        assert!(MaskPair::new(&[1.0f64], &[1.5]).is_err());
        assert!(MaskPair::new(&[1.0f64], &[f64::NAN]).is_err());
    }
}
