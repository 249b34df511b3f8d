//! Overlap metrics between binary volumes.

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::volume::BinaryMask;

fn overlap_counts(pred: &BinaryMask, target: &BinaryMask) -> Result<(u64, u64, u64)> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            left: pred.shape(),
            right: target.shape(),
        });
    }
    let mut inter = 0u64;
    let mut np = 0u64;
    let mut nt = 0u64;
    for (&p, &t) in pred.data().iter().zip(target.data().iter()) {
        inter += u64::from(p & t);
        np += u64::from(p);
        nt += u64::from(t);
    }
    Ok((inter, np, nt))
}

/// Dice coefficient `2|P∩T| / (|P|+|T|)`; 1 when both masks are empty.
pub fn dice_score(pred: &BinaryMask, target: &BinaryMask) -> Result<f64> {
    let (inter, np, nt) = overlap_counts(pred, target)?;
    if np + nt == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (np + nt) as f64)
}

/// Intersection over union `|P∩T| / |P∪T|`; 1 when both masks are empty.
pub fn iou_score(pred: &BinaryMask, target: &BinaryMask) -> Result<f64> {
    let (inter, np, nt) = overlap_counts(pred, target)?;
    let union = np + nt - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Threshold a probability volume with a strict `>` comparison.
pub fn binarize(prob: &Array3<f32>, threshold: f32) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!(
            "binarization threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let data = prob.mapv(|p| u8::from(p > threshold));
    BinaryMask::new(data)
}
