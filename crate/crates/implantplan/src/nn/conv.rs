//! Dense 3-D convolution (cross-correlation) with 'same' padding.
//!
//! Kernels are 3×3×3 with arbitrary dilation (padding = dilation keeps the
//! spatial size), or 1×1×1 for channel mixing. Both directions are routed
//! through matrix multiplication: the forward pass lowers the input to a
//! patch matrix (im2col) and multiplies by the weight matrix; the backward
//! pass reuses the same lowering for the weight gradient and scatters the
//! transposed product back for the input gradient.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array4, ArrayView2, ArrayViewMut2};

use super::{Init, ParamLayout, ParamSlice, Scalar};

/// 3-D convolution layer handle; parameters live in the caller's arena.
///
/// Weight layout is `(out_ch, in_ch, kz, ky, kx)` flattened row-major, bias
/// is `(out_ch,)`.
#[derive(Debug, Clone)]
pub struct Conv3d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub weight: ParamSlice,
    pub bias: ParamSlice,
}

impl Conv3d {
    /// Allocate a `kernel³` convolution. `kernel` must be 1 or 3; dilation
    /// is only meaningful for kernel 3 (pad = dilation preserves shape).
    pub fn new(
        layout: &mut ParamLayout,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
    ) -> Self {
        assert!(kernel == 1 || kernel == 3, "kernel must be 1 or 3");
        assert!(dilation >= 1, "dilation must be >= 1");
        let taps = kernel * kernel * kernel;
        let weight = layout.alloc(
            &format!("{name}.weight"),
            out_channels * in_channels * taps,
            Init::HeNormal {
                fan_in: in_channels * taps,
            },
        );
        let bias = layout.alloc(&format!("{name}.bias"), out_channels, Init::Zeros);
        Self {
            in_channels,
            out_channels,
            kernel,
            dilation,
            weight,
            bias,
        }
    }

    fn weight_view<'a, T: Scalar>(&self, params: &'a [T]) -> ArrayView2<'a, T> {
        let taps = self.kernel * self.kernel * self.kernel;
        ArrayView2::from_shape(
            (self.out_channels, self.in_channels * taps),
            &params[self.weight.range()],
        )
        .expect("weight slice matches layer dims")
    }

    /// `y[co, o] = Σ_ci Σ_k w[co, ci, k] · x[ci, o + dilation·(k−1)] + b[co]`
    /// with out-of-range taps reading zero.
    pub fn forward<T: Scalar>(&self, params: &[T], x: &Array4<T>) -> Array4<T> {
        let (ci, d, h, w) = x.dim();
        assert_eq!(ci, self.in_channels, "input channel mismatch");
        let n = d * h * w;
        let weight = self.weight_view(params);
        let bias = &params[self.bias.range()];

        let mut out2 = Array2::<T>::zeros((self.out_channels, n));
        if self.kernel == 1 {
            let x2 = x
                .view()
                .into_shape_with_order((ci, n))
                .expect("contiguous input");
            general_mat_mul(T::one(), &weight, &x2, T::zero(), &mut out2);
        } else {
            let patches = im2col(x, self.dilation);
            general_mat_mul(T::one(), &weight, &patches, T::zero(), &mut out2);
        }
        for (mut row, &b) in out2.outer_iter_mut().zip(bias) {
            if b != T::zero() {
                row.mapv_inplace(|v| v + b);
            }
        }
        out2.into_shape_with_order((self.out_channels, d, h, w))
            .expect("row-major reshape")
    }

    /// Accumulate `d loss / d params` into `grads` and return `d loss / d x`.
    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        grads: &mut [T],
        x: &Array4<T>,
        gy: &Array4<T>,
    ) -> Array4<T> {
        let (ci, d, h, w) = x.dim();
        let n = d * h * w;
        assert_eq!(gy.dim(), (self.out_channels, d, h, w), "grad shape");
        let gy2 = gy
            .view()
            .into_shape_with_order((self.out_channels, n))
            .expect("contiguous grad");

        for (co, row) in gy2.outer_iter().enumerate() {
            grads[self.bias.offset + co] += row.sum();
        }

        let taps = self.kernel * self.kernel * self.kernel;
        let weight = self.weight_view(params);
        let (dw_rows, dw_cols) = (self.out_channels, self.in_channels * taps);
        if self.kernel == 1 {
            let x2 = x
                .view()
                .into_shape_with_order((ci, n))
                .expect("contiguous input");
            let mut dw = ArrayViewMut2::from_shape(
                (dw_rows, dw_cols),
                &mut grads[self.weight.range()],
            )
            .expect("weight grad slice");
            general_mat_mul(T::one(), &gy2, &x2.t(), T::one(), &mut dw);

            let mut dx2 = Array2::<T>::zeros((ci, n));
            general_mat_mul(T::one(), &weight.t(), &gy2, T::zero(), &mut dx2);
            dx2.into_shape_with_order((ci, d, h, w))
                .expect("row-major reshape")
        } else {
            let patches = im2col(x, self.dilation);
            let mut dw = ArrayViewMut2::from_shape(
                (dw_rows, dw_cols),
                &mut grads[self.weight.range()],
            )
            .expect("weight grad slice");
            general_mat_mul(T::one(), &gy2, &patches.t(), T::one(), &mut dw);

            let mut dpatches = Array2::<T>::zeros((ci * taps, n));
            general_mat_mul(T::one(), &weight.t(), &gy2, T::zero(), &mut dpatches);
            let mut dx = Array4::<T>::zeros((ci, d, h, w));
            col2im_add(&dpatches, self.dilation, &mut dx);
            dx
        }
    }
}

/// Per-tap source offset along one axis for a 3-tap kernel.
fn tap_offset(k: usize, dilation: usize) -> i64 {
    dilation as i64 * (k as i64 - 1)
}

/// Valid output range `[lo, hi)` along an axis of length `len` for a tap
/// reading at `o + off`.
fn valid_range(len: usize, off: i64) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (len as i64 - off).clamp(0, len as i64) as usize;
    (lo, hi.max(lo))
}

/// Lower `(C, D, H, W)` to the `(C·27, D·H·W)` patch matrix of a dilated
/// 3×3×3 kernel with 'same' zero padding.
fn im2col<T: Scalar>(x: &Array4<T>, dilation: usize) -> Array2<T> {
    let (c_in, d, h, w) = x.dim();
    let n = d * h * w;
    let mut out = Array2::<T>::zeros((c_in * 27, n));
    let xs = x.as_slice().expect("standard layout");
    let os = out.as_slice_mut().expect("standard layout");

    let mut row = 0usize;
    for c in 0..c_in {
        for kz in 0..3 {
            let dz = tap_offset(kz, dilation);
            for ky in 0..3 {
                let dy = tap_offset(ky, dilation);
                for kx in 0..3 {
                    let dxo = tap_offset(kx, dilation);
                    let (x_lo, x_hi) = valid_range(w, dxo);
                    let row_base = row * n;
                    row += 1;
                    if x_hi == x_lo {
                        continue;
                    }
                    for oz in 0..d {
                        let sz = oz as i64 + dz;
                        if sz < 0 || sz >= d as i64 {
                            continue;
                        }
                        for oy in 0..h {
                            let sy = oy as i64 + dy;
                            if sy < 0 || sy >= h as i64 {
                                continue;
                            }
                            let src = ((c * d + sz as usize) * h + sy as usize) * w;
                            let dst = row_base + (oz * h + oy) * w;
                            let s0 = src + (x_lo as i64 + dxo) as usize;
                            os[dst + x_lo..dst + x_hi]
                                .copy_from_slice(&xs[s0..s0 + (x_hi - x_lo)]);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Scatter-add the inverse of [`im2col`]: fold patch-matrix gradients back
/// onto the input grid.
fn col2im_add<T: Scalar>(cols: &Array2<T>, dilation: usize, dx: &mut Array4<T>) {
    let (c_in, d, h, w) = dx.dim();
    let n = d * h * w;
    debug_assert_eq!(cols.dim(), (c_in * 27, n));
    let cs = cols.as_slice().expect("standard layout");
    let ds = dx.as_slice_mut().expect("standard layout");

    let mut row = 0usize;
    for c in 0..c_in {
        for kz in 0..3 {
            let dz = tap_offset(kz, dilation);
            for ky in 0..3 {
                let dy = tap_offset(ky, dilation);
                for kx in 0..3 {
                    let dxo = tap_offset(kx, dilation);
                    let (x_lo, x_hi) = valid_range(w, dxo);
                    let row_base = row * n;
                    row += 1;
                    if x_hi == x_lo {
                        continue;
                    }
                    for oz in 0..d {
                        let sz = oz as i64 + dz;
                        if sz < 0 || sz >= d as i64 {
                            continue;
                        }
                        for oy in 0..h {
                            let sy = oy as i64 + dy;
                            if sy < 0 || sy >= h as i64 {
                                continue;
                            }
                            let dst = ((c * d + sz as usize) * h + sy as usize) * w;
                            let src = row_base + (oz * h + oy) * w;
                            let d0 = dst + (x_lo as i64 + dxo) as usize;
                            for i in 0..x_hi - x_lo {
                                ds[d0 + i] += cs[src + x_lo + i];
                            }
                        }
                    }
                }
            }
        }
    }
}
