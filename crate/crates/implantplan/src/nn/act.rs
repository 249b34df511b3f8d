//! Elementwise activations and inverted dropout.

use ndarray::Array4;
use rand::Rng;

use super::Scalar;

pub fn relu<T: Scalar>(x: &Array4<T>) -> Array4<T> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

/// Uses the forward output: `x > 0 ⇔ y > 0`, and the subgradient at 0 is 0.
pub fn relu_backward<T: Scalar>(y: &Array4<T>, gy: &Array4<T>) -> Array4<T> {
    let mut dx = gy.clone();
    ndarray::Zip::from(&mut dx).and(y).for_each(|d, &v| {
        if v <= T::zero() {
            *d = T::zero();
        }
    });
    dx
}

pub fn sigmoid<T: Scalar>(x: &Array4<T>) -> Array4<T> {
    x.mapv(sigmoid_scalar)
}

fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    // Branch on sign so the exponential never overflows.
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Uses the forward output: `dσ/dx = y·(1−y)`.
pub fn sigmoid_backward<T: Scalar>(y: &Array4<T>, gy: &Array4<T>) -> Array4<T> {
    let mut dx = gy.clone();
    ndarray::Zip::from(&mut dx).and(y).for_each(|d, &v| {
        *d = *d * v * (T::one() - v);
    });
    dx
}

/// Inverted dropout on flat vectors: kept units are scaled by `1/(1−p)` at
/// training time so evaluation is the identity.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub p: f64,
}

/// Per-unit multipliers (0 or `1/(1−p)`) drawn in the forward pass.
pub struct DropoutCache<T> {
    mask: Vec<T>,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout probability in [0,1)");
        Self { p }
    }

    pub fn forward_train<T: Scalar>(&self, x: &[T], rng: &mut impl Rng) -> (Vec<T>, DropoutCache<T>) {
        if self.p == 0.0 {
            let mask = vec![T::one(); x.len()];
            return (x.to_vec(), DropoutCache { mask });
        }
        let scale = T::from_f64(1.0 / (1.0 - self.p));
        let mask: Vec<T> = x
            .iter()
            .map(|_| {
                if rng.random_bool(self.p) {
                    T::zero()
                } else {
                    scale
                }
            })
            .collect();
        let y = x.iter().zip(&mask).map(|(v, m)| *v * *m).collect();
        (y, DropoutCache { mask })
    }

    pub fn forward_eval<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        x.to_vec()
    }

    pub fn backward<T: Scalar>(&self, cache: &DropoutCache<T>, gy: &[T]) -> Vec<T> {
        gy.iter().zip(&cache.mask).map(|(g, m)| *g * *m).collect()
    }
}
