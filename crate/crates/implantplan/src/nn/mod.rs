//! Minimal dense neural-network kernels with hand-derived backward passes.
//!
//! Everything operates on single samples laid out as `(C, D, H, W)` arrays;
//! batching is a loop plus gradient accumulation in the caller (instance
//! normalization makes samples independent, so this is exact). Parameters
//! for a whole model live in one flat arena indexed by [`ParamSlice`]
//! handles, which keeps the optimizer, checkpointing and finite-difference
//! probing trivial.
//!
//! All kernels are generic over [`Scalar`] so a network can be instantiated
//! in `f64` for gradient verification and `f32` for training speed.

pub mod act;
pub mod conv;
pub mod gradcheck;
pub mod linear;
pub mod norm;
pub mod pool;
pub mod resize;

pub use act::{relu, relu_backward, sigmoid, sigmoid_backward, Dropout, DropoutCache};
pub use conv::Conv3d;
pub use linear::Linear;
pub use norm::{InstanceNorm, InstanceNormCache};
pub use pool::{adaptive_avg_pool, adaptive_avg_pool_backward, MaxPool3d, MaxPoolCache};
pub use resize::{trilinear_resize, trilinear_resize_backward};

use ndarray::ScalarOperand;
use num_traits::{Float, NumAssignOps};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Element type the kernels are generic over; implemented for `f32`/`f64`.
pub trait Scalar:
    Float
    + NumAssignOps
    + ScalarOperand
    + ndarray::LinalgScalar
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Contiguous region of the parameter arena owned by one tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSlice {
    pub offset: usize,
    pub len: usize,
}

impl ParamSlice {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Initialization rule for one parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Zero-mean normal with `sqrt(2 / fan_in)` standard deviation.
    HeNormal { fan_in: usize },
    Zeros,
    Ones,
}

/// One named tensor in the arena.
#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub slice: ParamSlice,
    pub init: Init,
}

/// Allocation plan for a model's flat parameter vector.
///
/// Layers request slices during construction; the layout then materializes
/// the initial values. Allocation order is the construction order, so the
/// same seed and architecture always produce the same initial vector.
#[derive(Debug, Default, Clone)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
    len: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(&mut self, name: &str, len: usize, init: Init) -> ParamSlice {
        let slice = ParamSlice {
            offset: self.len,
            len,
        };
        self.len += len;
        self.specs.push(ParamSpec {
            name: name.to_string(),
            slice,
            init,
        });
        slice
    }

    /// Total parameter count.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    /// Materialize initial values. Sampling is done in `f64` and cast, so
    /// `f32` and `f64` instantiations of the same layout agree bitwise up
    /// to rounding.
    pub fn init_values<T: Scalar>(&self, seed: u64) -> Vec<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![T::zero(); self.len];
        for spec in &self.specs {
            let out = &mut values[spec.slice.range()];
            match spec.init {
                Init::HeNormal { fan_in } => {
                    let std = (2.0 / fan_in as f64).sqrt();
                    let dist = Normal::new(0.0, std).expect("finite std");
                    for v in out.iter_mut() {
                        *v = T::from_f64(dist.sample(&mut rng));
                    }
                }
                Init::Zeros => {}
                Init::Ones => out.fill(T::one()),
            }
        }
        values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous_and_ordered() {
        let mut layout = ParamLayout::new();
        let a = layout.alloc("a", 5, Init::Zeros);
        let b = layout.alloc("b", 3, Init::Ones);
        let c = layout.alloc("c", 7, Init::HeNormal { fan_in: 4 });
        assert_eq!((a.offset, a.len), (0, 5));
        assert_eq!((b.offset, b.len), (5, 3));
        assert_eq!((c.offset, c.len), (8, 7));
        assert_eq!(layout.len(), 15);
        assert_eq!(b.range(), 5..8);
    }

    #[test]
    fn init_respects_rules_and_seed() {
        let mut layout = ParamLayout::new();
        layout.alloc("w", 64, Init::HeNormal { fan_in: 8 });
        layout.alloc("b", 4, Init::Zeros);
        layout.alloc("g", 4, Init::Ones);

        let v: Vec<f64> = layout.init_values(42);
        assert!(v[..64].iter().any(|&x| x != 0.0));
        assert!(v[64..68].iter().all(|&x| x == 0.0));
        assert!(v[68..].iter().all(|&x| x == 1.0));

        let again: Vec<f64> = layout.init_values(42);
        assert_eq!(v, again);
        let other: Vec<f64> = layout.init_values(43);
        assert_ne!(v, other);

        // f32 materialization is the rounded f64 stream.
        let single: Vec<f32> = layout.init_values(42);
        for (s, d) in single.iter().zip(&v) {
            assert_eq!(*s, *d as f32);
        }
    }

    #[test]
    fn he_std_tracks_fan_in() {
        let mut layout = ParamLayout::new();
        layout.alloc("w", 20000, Init::HeNormal { fan_in: 50 });
        let v: Vec<f64> = layout.init_values(7);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
        let expected = 2.0 / 50.0;
        assert!((var - expected).abs() < 0.1 * expected, "var {var}");
        assert!(mean.abs() < 0.01);
    }
}
