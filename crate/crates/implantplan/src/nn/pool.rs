//! Spatial pooling: 2×2×2 max pooling and adaptive average pooling.

use ndarray::Array4;

use super::Scalar;

/// 2×2×2 max pooling with stride 2. Spatial dims must be even.
#[derive(Debug, Clone, Copy)]
pub struct MaxPool3d;

/// Flat input index of each pooled maximum, in output iteration order.
pub struct MaxPoolCache {
    argmax: Vec<usize>,
    in_dim: (usize, usize, usize, usize),
}

impl MaxPool3d {
    pub fn forward<T: Scalar>(&self, x: &Array4<T>) -> (Array4<T>, MaxPoolCache) {
        let (c, d, h, w) = x.dim();
        assert!(
            d % 2 == 0 && h % 2 == 0 && w % 2 == 0,
            "max pool needs even spatial dims, got ({d},{h},{w})"
        );
        let (od, oh, ow) = (d / 2, h / 2, w / 2);
        let xs = x.as_slice().expect("standard layout");
        let mut out = Array4::<T>::zeros((c, od, oh, ow));
        let mut argmax = vec![0usize; c * od * oh * ow];
        let os = out.as_slice_mut().expect("standard layout");

        let mut oi = 0usize;
        for ci in 0..c {
            for oz in 0..od {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = T::neg_infinity();
                        let mut best_i = 0usize;
                        for dz in 0..2 {
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    let i = ((ci * d + 2 * oz + dz) * h + 2 * oy + dy) * w
                                        + 2 * ox
                                        + dx;
                                    // Strict > keeps the first maximum on ties.
                                    if xs[i] > best {
                                        best = xs[i];
                                        best_i = i;
                                    }
                                }
                            }
                        }
                        os[oi] = best;
                        argmax[oi] = best_i;
                        oi += 1;
                    }
                }
            }
        }
        (
            out,
            MaxPoolCache {
                argmax,
                in_dim: (c, d, h, w),
            },
        )
    }

    /// Route each output gradient to the voxel that produced the maximum.
    pub fn backward<T: Scalar>(&self, cache: &MaxPoolCache, gy: &Array4<T>) -> Array4<T> {
        let mut dx = Array4::<T>::zeros(cache.in_dim);
        let ds = dx.as_slice_mut().expect("standard layout");
        for (&src, &g) in cache.argmax.iter().zip(gy.iter()) {
            ds[src] += g;
        }
        dx
    }
}

/// Bin boundaries for adaptive pooling: bin `i` of `bins` over an axis of
/// length `len` covers `[floor(i·len/bins), ceil((i+1)·len/bins))`.
fn bin_bounds(i: usize, bins: usize, len: usize) -> (usize, usize) {
    let start = i * len / bins;
    let end = ((i + 1) * len).div_ceil(bins);
    (start, end)
}

/// Average-pool each channel onto a fixed `grid`, whatever the input size
/// (input dims must be ≥ the grid dims).
pub fn adaptive_avg_pool<T: Scalar>(x: &Array4<T>, grid: [usize; 3]) -> Array4<T> {
    let (c, d, h, w) = x.dim();
    assert!(
        d >= grid[0] && h >= grid[1] && w >= grid[2],
        "input ({d},{h},{w}) smaller than pool grid {grid:?}"
    );
    let mut out = Array4::<T>::zeros((c, grid[0], grid[1], grid[2]));
    for ci in 0..c {
        for oz in 0..grid[0] {
            let (z0, z1) = bin_bounds(oz, grid[0], d);
            for oy in 0..grid[1] {
                let (y0, y1) = bin_bounds(oy, grid[1], h);
                for ox in 0..grid[2] {
                    let (x0, x1) = bin_bounds(ox, grid[2], w);
                    let mut acc = T::zero();
                    for z in z0..z1 {
                        for y in y0..y1 {
                            for xx in x0..x1 {
                                acc += x[(ci, z, y, xx)];
                            }
                        }
                    }
                    let count = (z1 - z0) * (y1 - y0) * (x1 - x0);
                    out[(ci, oz, oy, ox)] = acc / T::from_f64(count as f64);
                }
            }
        }
    }
    out
}

/// Spread each bin gradient uniformly over the voxels it averaged.
pub fn adaptive_avg_pool_backward<T: Scalar>(
    in_dim: (usize, usize, usize, usize),
    grid: [usize; 3],
    gy: &Array4<T>,
) -> Array4<T> {
    let (c, d, h, w) = in_dim;
    let mut dx = Array4::<T>::zeros(in_dim);
    for ci in 0..c {
        for oz in 0..grid[0] {
            let (z0, z1) = bin_bounds(oz, grid[0], d);
            for oy in 0..grid[1] {
                let (y0, y1) = bin_bounds(oy, grid[1], h);
                for ox in 0..grid[2] {
                    let (x0, x1) = bin_bounds(ox, grid[2], w);
                    let count = (z1 - z0) * (y1 - y0) * (x1 - x0);
                    let g = gy[(ci, oz, oy, ox)] / T::from_f64(count as f64);
                    for z in z0..z1 {
                        for y in y0..y1 {
                            for xx in x0..x1 {
                                dx[(ci, z, y, xx)] += g;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}
