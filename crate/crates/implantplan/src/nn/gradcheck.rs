//! Central-difference gradient probing.
//!
//! Used by the test suite to verify every hand-derived backward pass, and
//! available to callers who instantiate a double-precision network for the
//! same purpose.

use super::Scalar;

/// Central difference `(f(x+h) − f(x−h)) / 2h` of `f` w.r.t. `values[index]`.
///
/// `values` is restored before returning.
pub fn central_difference<T: Scalar>(
    values: &mut [T],
    index: usize,
    h: f64,
    mut f: impl FnMut(&[T]) -> f64,
) -> f64 {
    let saved = values[index];
    let hh = T::from_f64(h);
    values[index] = saved + hh;
    let plus = f(values);
    values[index] = saved - hh;
    let minus = f(values);
    values[index] = saved;
    (plus - minus) / (2.0 * h)
}

/// Relative mismatch `|a−b| / max(|a|, |b|, floor)` between an analytic and
/// a numeric derivative. The floor keeps near-zero gradients from inflating
/// the ratio with pure round-off noise.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / scale
}

/// Central difference with a smoothness guard.
///
/// Deep nets with ReLU/max-pool are only piecewise smooth: a probe whose
/// `±h` interval straddles an activation kink measures a useless mixture of
/// the two one-sided slopes. Such contamination is detected by comparing
/// estimates at `h` and `h/2` — they converge quadratically on smooth
/// stretches but disagree at the kink's own magnitude otherwise. Returns the
/// finer estimate, or `None` when the neighborhood is non-smooth at the
/// requested tolerance (callers should skip or re-sample those probes; any
/// kink small enough to slip past the guard also perturbs the estimate by
/// less than `tol`).
pub fn guarded_central_difference<T: Scalar>(
    values: &mut [T],
    index: usize,
    h: f64,
    floor: f64,
    tol: f64,
    mut f: impl FnMut(&[T]) -> f64,
) -> Option<f64> {
    let coarse = central_difference(values, index, h, &mut f);
    let fine = central_difference(values, index, h / 2.0, &mut f);
    if relative_error(coarse, fine, floor) < tol {
        Some(fine)
    } else {
        None
    }
}
