//! Segmentation quality metrics.
//!
//! Predictions are binarized at logit > 0 (equivalently, probability > 0.5)
//! and compared per sample. When both the prediction and the ground truth
//! are empty, both Dice and IoU are defined as 1.

use crate::error::{fmt_shape, Result};
use crate::scalar::Scalar;
use crate::shape_err;
use crate::tensor::Tensor;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegMetrics {
    pub dice: f64,
    pub iou: f64,
}

/// Dice and IoU from foreground indicator slices of equal length.
pub fn dice_iou(pred: &[bool], gt: &[bool]) -> SegMetrics {
    let mut inter = 0u64;
    let mut np = 0u64;
    let mut ng = 0u64;
    for (&p, &g) in pred.iter().zip(gt) {
        inter += (p && g) as u64;
        np += p as u64;
        ng += g as u64;
    }
    let dice = if np + ng == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (np + ng) as f64
    };
    let union = np + ng - inter;
    let iou = if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    };
    SegMetrics { dice, iou }
}

/// Per-sample metrics for batched logits/masks of shape `[B, 1, H, W]`.
pub fn per_sample<E: Scalar>(logits: &Tensor<E>, masks: &Tensor<E>) -> Result<Vec<SegMetrics>> {
    let (sl, sm) = (logits.shape(), masks.shape());
    if sl != sm || sl.len() != 4 || sl[1] != 1 {
        return Err(shape_err!(
            "metrics: expected matching [B, 1, H, W] logits and masks, got {} and {}",
            fmt_shape(sl),
            fmt_shape(sm)
        ));
    }
    let b = sl[0];
    let plane = sl[2] * sl[3];
    let half = E::from_f64(0.5);
    let mut out = Vec::with_capacity(b);
    for bi in 0..b {
        let lo = &logits.data()[bi * plane..(bi + 1) * plane];
        let mo = &masks.data()[bi * plane..(bi + 1) * plane];
        let pred: Vec<bool> = lo.iter().map(|&v| v > E::ZERO).collect();
        let gt: Vec<bool> = mo.iter().map(|&v| v > half).collect();
        out.push(dice_iou(&pred, &gt));
    }
    Ok(out)
}

/// Arithmetic mean of per-sample metrics.
pub fn mean(rows: &[SegMetrics]) -> SegMetrics {
    if rows.is_empty() {
        return SegMetrics { dice: 0.0, iou: 0.0 };
    }
    let n = rows.len() as f64;
    SegMetrics {
        dice: rows.iter().map(|m| m.dice).sum::<f64>() / n,
        iou: rows.iter().map(|m| m.iou).sum::<f64>() / n,
    }
}

/// Sample standard deviation (n−1 denominator; 0 when n < 2).
pub fn std_dev(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    libm::sqrt(ss / (n as f64 - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn hand_counted_masks() {
        // pred covers 3 cells, gt covers 2, overlap 1.
        let pred = [true, true, true, false];
        let gt = [true, false, false, true];
        let m = dice_iou(&pred, &gt);
        assert_eq!(m.dice, 2.0 / 5.0);
        assert_eq!(m.iou, 1.0 / 4.0);
    }

    #[test]
    fn empty_and_full_agreements() {
        let none = [false; 4];
        let m = dice_iou(&none, &none);
        assert_eq!(m.dice, 1.0);
        assert_eq!(m.iou, 1.0);
        let all = [true; 4];
        let m2 = dice_iou(&all, &all);
        assert_eq!(m2.dice, 1.0);
        assert_eq!(m2.iou, 1.0);
        let m3 = dice_iou(&none, &all);
        assert_eq!(m3.dice, 0.0);
        assert_eq!(m3.iou, 0.0);
    }

    #[test]
    fn iou_follows_from_dice_identity() {
        // IoU = Dice / (2 - Dice) for any pair of sets.
        let mut rng = crate::rng::Rng::seed_from(99);
        for _ in 0..200 {
            let pred: Vec<bool> = (0..64).map(|_| rng.bernoulli(0.4)).collect();
            let gt: Vec<bool> = (0..64).map(|_| rng.bernoulli(0.4)).collect();
            let m = dice_iou(&pred, &gt);
            assert!((m.iou - m.dice / (2.0 - m.dice)).abs() < 1e-12);
        }
    }

    #[test]
    fn per_sample_thresholds_logits_at_zero() {
        let logits =
            Tensor::from_vec(&[2, 1, 1, 2], vec![1.0f32, -1.0, -0.5, -0.5]).unwrap();
        let masks = Tensor::from_vec(&[2, 1, 1, 2], vec![1.0f32, 0.0, 0.0, 0.0]).unwrap();
        let rows = per_sample(&logits, &masks).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].dice, 1.0);
        assert_eq!(rows[1].dice, 1.0); // empty prediction vs empty mask
        let avg = mean(&rows);
        assert_eq!(avg.dice, 1.0);
    }

    #[test]
    fn std_dev_matches_hand_value() {
        assert_eq!(std_dev(&[1.0]), 0.0);
        let s = std_dev(&[1.0, 2.0, 3.0]);
        assert!((s - 1.0).abs() < 1e-12);
    }
}
