//! Instance normalization over the spatial extent of each channel.

use ndarray::Array4;

use super::{Init, ParamLayout, ParamSlice, Scalar};

const EPS: f64 = 1e-5;

/// Per-channel affine normalization: `y = γ·(x − μ)/√(σ² + ε) + β` with the
/// statistics taken over the channel's own voxels (biased variance).
#[derive(Debug, Clone)]
pub struct InstanceNorm {
    pub channels: usize,
    pub gamma: ParamSlice,
    pub beta: ParamSlice,
}

/// Normalized activations and inverse standard deviations for backward.
pub struct InstanceNormCache<T> {
    xhat: Array4<T>,
    inv_std: Vec<T>,
}

impl InstanceNorm {
    pub fn new(layout: &mut ParamLayout, name: &str, channels: usize) -> Self {
        Self {
            channels,
            gamma: layout.alloc(&format!("{name}.gamma"), channels, Init::Ones),
            beta: layout.alloc(&format!("{name}.beta"), channels, Init::Zeros),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        params: &[T],
        x: &Array4<T>,
    ) -> (Array4<T>, InstanceNormCache<T>) {
        let (c, d, h, w) = x.dim();
        assert_eq!(c, self.channels, "channel mismatch");
        let n = T::from_f64((d * h * w) as f64);
        let gamma = &params[self.gamma.range()];
        let beta = &params[self.beta.range()];

        let mut xhat = Array4::<T>::zeros((c, d, h, w));
        let mut out = Array4::<T>::zeros((c, d, h, w));
        let mut inv_std = vec![T::zero(); c];
        for ci in 0..c {
            let xc = x.index_axis(ndarray::Axis(0), ci);
            let mean = xc.sum() / n;
            let mut var = T::zero();
            for &v in xc.iter() {
                let dv = v - mean;
                var += dv * dv;
            }
            var = var / n;
            let istd = T::one() / (var + T::from_f64(EPS)).sqrt();
            inv_std[ci] = istd;
            let (g, b) = (gamma[ci], beta[ci]);
            let mut xh = xhat.index_axis_mut(ndarray::Axis(0), ci);
            let mut oc = out.index_axis_mut(ndarray::Axis(0), ci);
            ndarray::Zip::from(&mut xh)
                .and(&mut oc)
                .and(&xc)
                .for_each(|xh, o, &v| {
                    let norm = (v - mean) * istd;
                    *xh = norm;
                    *o = g * norm + b;
                });
        }
        (out, InstanceNormCache { xhat, inv_std })
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        grads: &mut [T],
        cache: &InstanceNormCache<T>,
        gy: &Array4<T>,
    ) -> Array4<T> {
        let (c, d, h, w) = gy.dim();
        let n = T::from_f64((d * h * w) as f64);
        let gamma = &params[self.gamma.range()];
        let mut dx = Array4::<T>::zeros((c, d, h, w));
        for ci in 0..c {
            let gc = gy.index_axis(ndarray::Axis(0), ci);
            let xh = cache.xhat.index_axis(ndarray::Axis(0), ci);
            let sum_gy = gc.sum();
            let mut sum_gy_xhat = T::zero();
            for (&g, &x) in gc.iter().zip(xh.iter()) {
                sum_gy_xhat += g * x;
            }
            grads[self.gamma.offset + ci] += sum_gy_xhat;
            grads[self.beta.offset + ci] += sum_gy;

            // dx = γ/σ · (gy − mean(gy) − x̂·mean(gy·x̂))
            let scale = gamma[ci] * cache.inv_std[ci];
            let mean_gy = sum_gy / n;
            let mean_gy_xhat = sum_gy_xhat / n;
            let mut dc = dx.index_axis_mut(ndarray::Axis(0), ci);
            ndarray::Zip::from(&mut dc)
                .and(&gc)
                .and(&xh)
                .for_each(|d, &g, &x| {
                    *d = scale * (g - mean_gy - x * mean_gy_xhat);
                });
        }
        dx
    }
}
