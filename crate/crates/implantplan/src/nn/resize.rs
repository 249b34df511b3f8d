//! Trilinear resampling (half-pixel-centered, matching the common
//! `align_corners = false` convention).

use ndarray::Array4;

use super::Scalar;

/// Per-axis interpolation taps: left index, right index, right weight.
fn axis_taps<T: Scalar>(in_len: usize, out_len: usize) -> Vec<(usize, usize, T)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, T::from_f64(src - i0 as f64))
        })
        .collect()
}

/// Resample every channel of `(C, D, H, W)` onto `target` spatial dims.
pub fn trilinear_resize<T: Scalar>(x: &Array4<T>, target: [usize; 3]) -> Array4<T> {
    let (c, d, h, w) = x.dim();
    let tz = axis_taps::<T>(d, target[0]);
    let ty = axis_taps::<T>(h, target[1]);
    let tx = axis_taps::<T>(w, target[2]);
    let one = T::one();
    Array4::from_shape_fn((c, target[0], target[1], target[2]), |(ci, oz, oy, ox)| {
        let (z0, z1, wz) = tz[oz];
        let (y0, y1, wy) = ty[oy];
        let (x0, x1, wx) = tx[ox];
        let c00 = x[(ci, z0, y0, x0)] * (one - wx) + x[(ci, z0, y0, x1)] * wx;
        let c01 = x[(ci, z0, y1, x0)] * (one - wx) + x[(ci, z0, y1, x1)] * wx;
        let c10 = x[(ci, z1, y0, x0)] * (one - wx) + x[(ci, z1, y0, x1)] * wx;
        let c11 = x[(ci, z1, y1, x0)] * (one - wx) + x[(ci, z1, y1, x1)] * wx;
        let c0 = c00 * (one - wy) + c01 * wy;
        let c1 = c10 * (one - wy) + c11 * wy;
        c0 * (one - wz) + c1 * wz
    })
}

/// Adjoint of [`trilinear_resize`]: scatter output gradients back through
/// the interpolation weights.
pub fn trilinear_resize_backward<T: Scalar>(
    in_dim: (usize, usize, usize, usize),
    gy: &Array4<T>,
) -> Array4<T> {
    let (c, d, h, w) = in_dim;
    let (gc, od, oh, ow) = gy.dim();
    debug_assert_eq!(c, gc);
    let tz = axis_taps::<T>(d, od);
    let ty = axis_taps::<T>(h, oh);
    let tx = axis_taps::<T>(w, ow);
    let one = T::one();
    let mut dx = Array4::<T>::zeros(in_dim);
    for ci in 0..c {
        for oz in 0..od {
            let (z0, z1, wz) = tz[oz];
            for oy in 0..oh {
                let (y0, y1, wy) = ty[oy];
                for ox in 0..ow {
                    let (x0, x1, wx) = tx[ox];
                    let g = gy[(ci, oz, oy, ox)];
                    let g0 = g * (one - wz);
                    let g1 = g * wz;
                    dx[(ci, z0, y0, x0)] += g0 * (one - wy) * (one - wx);
                    dx[(ci, z0, y0, x1)] += g0 * (one - wy) * wx;
                    dx[(ci, z0, y1, x0)] += g0 * wy * (one - wx);
                    dx[(ci, z0, y1, x1)] += g0 * wy * wx;
                    dx[(ci, z1, y0, x0)] += g1 * (one - wy) * (one - wx);
                    dx[(ci, z1, y0, x1)] += g1 * (one - wy) * wx;
                    dx[(ci, z1, y1, x0)] += g1 * wy * (one - wx);
                    dx[(ci, z1, y1, x1)] += g1 * wy * wx;
                }
            }
        }
    }
    dx
}
