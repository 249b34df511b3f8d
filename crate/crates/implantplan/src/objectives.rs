//! Training objectives: soft Dice + cross-entropy for segmentation, L1 for
//! slope, and their unweighted sum.
//!
//! Losses consume probability volumes (post-sigmoid) and expose analytic
//! gradients w.r.t. those probabilities; the network chains them through its
//! own sigmoid backward. Everything is generic over the scalar type so the
//! whole loss surface can be gradient-checked in double precision.

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::nn::Scalar;
use crate::volume::{BinaryMask, SlopePair};

/// Knobs shared by the loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    /// Normalize cross-entropy by voxel count (`false` keeps the literal
    /// summed form).
    pub ce_normalize: bool,
    /// Weight on the slope term of the total loss.
    pub slope_weight: f64,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            ce_normalize: true,
            slope_weight: 1.0,
        }
    }
}

/// Smoothing constant defining the empty-target case of the Dice loss.
pub const DICE_SMOOTH: f64 = 1e-5;
/// Probability clamp for cross-entropy.
pub const CE_EPSILON: f64 = 1e-7;

/// Per-term values of one loss evaluation, in double precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub dice: f64,
    pub ce: f64,
    pub slope: f64,
    pub total: f64,
}

fn check_shapes<T: Scalar>(pred: &Array3<T>, target: &BinaryMask) -> Result<()> {
    let (d, h, w) = pred.dim();
    if [d, h, w] != target.shape() {
        return Err(Error::ShapeMismatch {
            left: [d, h, w],
            right: target.shape(),
        });
    }
    Ok(())
}

/// Soft Dice loss `1 − (2·Σ y·ŷ + s) / (Σ y² + Σ ŷ² + s)`.
pub fn dice_loss<T: Scalar>(pred: &Array3<T>, target: &BinaryMask) -> Result<T> {
    Ok(dice_parts(pred, target)?.0)
}

/// Loss plus `d loss / d pred`.
pub fn dice_loss_grad<T: Scalar>(
    pred: &Array3<T>,
    target: &BinaryMask,
) -> Result<(T, Array3<T>)> {
    let (loss, inter, denom) = dice_parts(pred, target)?;
    // loss = 1 − num/den with num = 2Σyŷ + s, den = Σy² + Σŷ² + s:
    // d/dŷ = −(2y·den − num·2ŷ) / den².
    let num = T::from_f64(2.0) * inter + T::from_f64(DICE_SMOOTH);
    let den2 = denom * denom;
    let two = T::from_f64(2.0);
    let mut grad = pred.clone();
    ndarray::Zip::from(&mut grad)
        .and(target.data())
        .for_each(|g, &t| {
            let y = T::from_f64(t as f64);
            let p = *g;
            *g = -(two * y * denom - num * two * p) / den2;
        });
    Ok((loss, grad))
}

fn dice_parts<T: Scalar>(pred: &Array3<T>, target: &BinaryMask) -> Result<(T, T, T)> {
    check_shapes(pred, target)?;
    let mut inter = T::zero();
    let mut sum_p2 = T::zero();
    let mut sum_t = T::zero();
    for (&p, &t) in pred.iter().zip(target.data().iter()) {
        sum_p2 += p * p;
        if t == 1 {
            inter += p;
            sum_t += T::one();
        }
    }
    let s = T::from_f64(DICE_SMOOTH);
    let denom = sum_t + sum_p2 + s;
    let loss = T::one() - (T::from_f64(2.0) * inter + s) / denom;
    Ok((loss, inter, denom))
}

/// Binary cross-entropy with predictions clamped to `[ε, 1−ε]`,
/// mean-per-voxel when `normalize` is set, otherwise the raw sum.
pub fn ce_loss<T: Scalar>(pred: &Array3<T>, target: &BinaryMask, normalize: bool) -> Result<T> {
    check_shapes(pred, target)?;
    let eps = T::from_f64(CE_EPSILON);
    let hi = T::one() - eps;
    let mut acc = T::zero();
    for (&p, &t) in pred.iter().zip(target.data().iter()) {
        let pc = p.max(eps).min(hi);
        acc -= if t == 1 {
            pc.ln()
        } else {
            (T::one() - pc).ln()
        };
    }
    if normalize {
        acc = acc / T::from_f64(pred.len() as f64);
    }
    Ok(acc)
}

/// Loss plus `d loss / d pred`; the gradient is zero where the clamp is
/// active.
pub fn ce_loss_grad<T: Scalar>(
    pred: &Array3<T>,
    target: &BinaryMask,
    normalize: bool,
) -> Result<(T, Array3<T>)> {
    let loss = ce_loss(pred, target, normalize)?;
    let eps = T::from_f64(CE_EPSILON);
    let hi = T::one() - eps;
    let scale = if normalize {
        T::from_f64(1.0 / pred.len() as f64)
    } else {
        T::one()
    };
    let mut grad = pred.clone();
    ndarray::Zip::from(&mut grad)
        .and(target.data())
        .for_each(|g, &t| {
            let p = *g;
            *g = if p < eps || p > hi {
                T::zero()
            } else if t == 1 {
                -scale / p
            } else {
                scale / (T::one() - p)
            };
        });
    Ok((loss, grad))
}

/// L1 slope loss `|k1 − k̂1| + |k2 − k̂2|`.
pub fn slope_loss(pred: SlopePair, target: SlopePair) -> f64 {
    (pred.k1 - target.k1).abs() + (pred.k2 - target.k2).abs()
}

/// Loss plus `d loss / d (k̂1, k̂2)` (subgradient 0 at equality).
pub fn slope_loss_grad(pred: SlopePair, target: SlopePair) -> (f64, [f64; 2]) {
    let g = |a: f64, b: f64| -> f64 {
        if a > b {
            1.0
        } else if a < b {
            -1.0
        } else {
            0.0
        }
    };
    (
        slope_loss(pred, target),
        [g(pred.k1, target.k1), g(pred.k2, target.k2)],
    )
}

/// Composite objective. The slope term participates only when `use_spb` is
/// set (ablation rows without the branch train on segmentation alone).
pub fn total_loss<T: Scalar>(
    seg_pred: &Array3<T>,
    seg_target: &BinaryMask,
    slope_pred: SlopePair,
    slope_target: SlopePair,
    use_spb: bool,
    opts: &LossOptions,
) -> Result<LossTerms> {
    let dice = dice_loss(seg_pred, seg_target)?.to_f64();
    let ce = ce_loss(seg_pred, seg_target, opts.ce_normalize)?.to_f64();
    let slope = if use_spb {
        slope_loss(slope_pred, slope_target)
    } else {
        0.0
    };
    Ok(LossTerms {
        dice,
        ce,
        slope,
        total: dice + ce + opts.slope_weight * slope,
    })
}

/// [`total_loss`] plus gradients w.r.t. the probability volume and the
/// predicted slopes.
pub fn total_loss_grad<T: Scalar>(
    seg_pred: &Array3<T>,
    seg_target: &BinaryMask,
    slope_pred: SlopePair,
    slope_target: SlopePair,
    use_spb: bool,
    opts: &LossOptions,
) -> Result<(LossTerms, Array3<T>, [f64; 2])> {
    let (dice, dice_g) = dice_loss_grad(seg_pred, seg_target)?;
    let (ce, ce_g) = ce_loss_grad(seg_pred, seg_target, opts.ce_normalize)?;
    let mut seg_grad = dice_g;
    seg_grad += &ce_g;

    let (slope, mut slope_grad) = if use_spb {
        slope_loss_grad(slope_pred, slope_target)
    } else {
        (0.0, [0.0, 0.0])
    };
    slope_grad[0] *= opts.slope_weight;
    slope_grad[1] *= opts.slope_weight;

    let terms = LossTerms {
        dice: dice.to_f64(),
        ce: ce.to_f64(),
        slope,
        total: dice.to_f64() + ce.to_f64() + opts.slope_weight * slope,
    };
    Ok((terms, seg_grad, slope_grad))
}
