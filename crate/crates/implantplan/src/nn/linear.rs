//! Fully connected layer on flat vectors.

use super::{Init, ParamLayout, ParamSlice, Scalar};

/// `y = W·x + b` with `W: (out, in)` row-major.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: ParamSlice,
    pub bias: ParamSlice,
}

impl Linear {
    pub fn new(layout: &mut ParamLayout, name: &str, in_features: usize, out_features: usize) -> Self {
        let weight = layout.alloc(
            &format!("{name}.weight"),
            out_features * in_features,
            Init::HeNormal { fan_in: in_features },
        );
        let bias = layout.alloc(&format!("{name}.bias"), out_features, Init::Zeros);
        Self {
            in_features,
            out_features,
            weight,
            bias,
        }
    }

    pub fn forward<T: Scalar>(&self, params: &[T], x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.in_features, "input length mismatch");
        let w = &params[self.weight.range()];
        let b = &params[self.bias.range()];
        (0..self.out_features)
            .map(|o| {
                let row = &w[o * self.in_features..(o + 1) * self.in_features];
                let mut acc = b[o];
                for (wi, xi) in row.iter().zip(x) {
                    acc += *wi * *xi;
                }
                acc
            })
            .collect()
    }

    /// Accumulate parameter gradients into `grads`, return `d loss / d x`.
    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        grads: &mut [T],
        x: &[T],
        gy: &[T],
    ) -> Vec<T> {
        assert_eq!(gy.len(), self.out_features, "grad length mismatch");
        let w = &params[self.weight.range()];
        let mut dx = vec![T::zero(); self.in_features];
        for o in 0..self.out_features {
            let g = gy[o];
            grads[self.bias.offset + o] += g;
            let row = &w[o * self.in_features..(o + 1) * self.in_features];
            let grow = &mut grads
                [self.weight.offset + o * self.in_features..self.weight.offset + (o + 1) * self.in_features];
            for i in 0..self.in_features {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{central_difference, relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn computes_affine_map() {
        let mut layout = ParamLayout::new();
        let lin = Linear::new(&mut layout, "fc", 3, 2);
        let mut params = vec![0.0f64; layout.len()];
        // W = [[1,2,3],[−1,0,1]], b = [0.5, −0.5]
        params[lin.weight.range()].copy_from_slice(&[1.0, 2.0, 3.0, -1.0, 0.0, 1.0]);
        params[lin.bias.range()].copy_from_slice(&[0.5, -0.5]);
        let y = lin.forward(&params, &[1.0, 1.0, 1.0]);
        assert_eq!(y, vec![6.5, -0.5]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layout = ParamLayout::new();
        let lin = Linear::new(&mut layout, "fc", 5, 3);
        let mut params: Vec<f64> = (0..layout.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let proj: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();

        let mut grads = vec![0.0f64; layout.len()];
        let dx = lin.backward(&params, &mut grads, &x, &proj);

        let loss = |p: &[f64], x: &[f64]| -> f64 {
            lin.forward(p, x).iter().zip(&proj).map(|(y, r)| y * r).sum()
        };
        for i in 0..layout.len() {
            let fd = central_difference(&mut params, i, 1e-6, |p| loss(p, &x));
            assert!(relative_error(grads[i], fd, 1e-8) < 1e-8);
        }
        let mut xv = x.clone();
        for i in 0..xv.len() {
            let fd = central_difference(&mut xv, i, 1e-6, |v| loss(&params, v));
            assert!(relative_error(dx[i], fd, 1e-8) < 1e-8);
        }
    }
}
