//! Evaluation metrics on binary masks: precision, dice coefficient and
//! threshold-swept mean IoU.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Real;

/// Binarisation threshold used for precision and dice coefficient.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

fn is_binary<T: Real>(v: T) -> bool {
    v == T::ZERO || v == T::ONE
}

/// Exact confusion counts between a binary mask and a binarised prediction.
pub fn confusion<T: Real>(y: &[T], p_hat: &[T]) -> Result<ConfusionCounts> {
    if y.len() != p_hat.len() {
        return Err(Error::Shape(format!(
            "mask has {} pixels, prediction has {}",
            y.len(),
            p_hat.len()
        )));
    }
    let mut cc = ConfusionCounts::default();
    for (&a, &b) in y.iter().zip(p_hat) {
        if !is_binary(a) || !is_binary(b) {
            return Err(Error::Data(format!("non-binary values ({a}, {b})")));
        }
        match (a == T::ONE, b == T::ONE) {
            (true, true) => cc.tp += 1,
            (false, true) => cc.fp += 1,
            (true, false) => cc.fn_ += 1,
            (false, false) => cc.tn += 1,
        }
    }
    Ok(cc)
}

/// `p >= t` (inclusive), as 0/1 values.
pub fn binarize<T: Real>(p: &[T], threshold: f64) -> Vec<T> {
    let t = T::from_f64(threshold);
    p.iter()
        .map(|&v| if v >= t { T::ONE } else { T::ZERO })
        .collect()
}

/// `tp / (tp + fp)`, 0 when nothing is predicted positive.
pub fn precision(cc: &ConfusionCounts) -> f64 {
    let d = cc.tp + cc.fp;
    if d == 0 {
        0.0
    } else {
        cc.tp as f64 / d as f64
    }
}

/// `2tp / (2tp + fn + fp)`; 1 when mask and prediction are both empty.
pub fn dice_coefficient(cc: &ConfusionCounts) -> f64 {
    let d = 2 * cc.tp + cc.fn_ + cc.fp;
    if d == 0 {
        1.0
    } else {
        (2 * cc.tp) as f64 / d as f64
    }
}

/// `tp / (tp + fn + fp)`; 1 when mask and prediction are both empty.
pub fn iou(cc: &ConfusionCounts) -> f64 {
    let d = cc.tp + cc.fn_ + cc.fp;
    if d == 0 {
        1.0
    } else {
        cc.tp as f64 / d as f64
    }
}

/// The ten thresholds 0.50, 0.55, ..., 0.95.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdSweep {
    thresholds: [f64; 10],
}

impl Default for ThresholdSweep {
    fn default() -> Self {
        let mut thresholds = [0.0; 10];
        for (i, t) in thresholds.iter_mut().enumerate() {
            *t = (50 + 5 * i) as f64 / 100.0;
        }
        ThresholdSweep { thresholds }
    }
}

impl ThresholdSweep {
    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }
}

/// Confusion counts at every sweep threshold.
pub fn sweep_counts<T: Real>(
    y: &[T],
    p: &[T],
    sweep: &ThresholdSweep,
) -> Result<Vec<ConfusionCounts>> {
    sweep
        .thresholds()
        .iter()
        .map(|&t| confusion(y, &binarize(p, t)))
        .collect()
}

/// Average IoU over the threshold sweep.
pub fn mean_iou<T: Real>(y: &[T], p: &[T], sweep: &ThresholdSweep) -> Result<f64> {
    let counts = sweep_counts(y, p, sweep)?;
    Ok(mean_iou_from_counts(&counts))
}

pub fn mean_iou_from_counts(counts: &[ConfusionCounts]) -> f64 {
    counts.iter().map(iou).sum::<f64>() / counts.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_is_ten_steps_of_005() {
        let s = ThresholdSweep::default();
        assert_eq!(s.thresholds().len(), 10);
        assert_eq!(s.thresholds()[0], 0.5);
        assert_eq!(s.thresholds()[9], 0.95);
        for w in s.thresholds().windows(2) {
            assert!((w[1] - w[0] - 0.05).abs() < 1e-12);
        }
    }

    #[test]
    fn confusion_examples() {
        let cc = confusion(&[1.0f64, 1.0, 0.0, 0.0], &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(cc, ConfusionCounts { tp: 1, fp: 1, fn_: 1, tn: 1 });
        let y = [1.0f32, 0.0, 1.0];
        let cc = confusion(&y, &y).unwrap();
        assert_eq!((cc.fp, cc.fn_), (0, 0));
        assert!(confusion(&[0.5f64], &[1.0]).is_err());
    }

    #[test]
    fn ratio_examples() {
        let cc = |tp, fp, fn_| ConfusionCounts { tp, fp, fn_, tn: 0 };
        assert_eq!(precision(&cc(8, 2, 0)), 0.8);
        assert_eq!(precision(&cc(0, 0, 3)), 0.0);
        assert_eq!(precision(&cc(1, 3, 0)), 0.25);
        assert_eq!(dice_coefficient(&cc(8, 2, 2)), 0.8);
        assert_eq!(dice_coefficient(&cc(5, 0, 0)), 1.0);
        assert_eq!(dice_coefficient(&cc(0, 2, 1)), 0.0);
    }

    #[test]
    fn mean_iou_examples() {
        let s = ThresholdSweep::default();
        let y = [1.0f64, 0.0, 1.0, 1.0];
        assert_eq!(mean_iou(&y, &y, &s).unwrap(), 1.0);
        assert_eq!(mean_iou(&[1.0f64; 5], &[0.7; 5], &s).unwrap(), 0.5);
        assert_eq!(mean_iou(&[1.0f32; 5], &[0.7; 5], &s).unwrap(), 0.5);
        assert_eq!(mean_iou(&[0.0f64; 4], &[0.0; 4], &s).unwrap(), 1.0);
    }
}
