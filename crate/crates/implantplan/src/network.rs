//! The full position + slope network.
//!
//! An optional NDP front end feeds a four-stage 3D U-Net encoder whose
//! feature pyramid sits at 1/2 … 1/16 of the input resolution. Two heads
//! consume the pyramid: the implant-position branch (IPPB) decodes back to
//! full resolution and emits per-voxel probabilities through a sigmoid; the
//! slope branch (SPB) flattens the deepest map through a small MLP with
//! dropout and regresses the two plane slopes.
//!
//! Parameters live in one flat arena owned by the caller (see
//! [`crate::nn::ParamLayout`]); every forward returns the caches its
//! backward needs, so the network itself stays immutable and cheap to share
//! across threads for inference.

use ndarray::{Array4, Axis};
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::ndp::{Ndp, NdpCache, NdpConfig};
use crate::nn::{
    relu, relu_backward, sigmoid, sigmoid_backward, trilinear_resize, trilinear_resize_backward,
    Conv3d, Dropout, DropoutCache, InstanceNorm, InstanceNormCache, Linear, MaxPool3d,
    MaxPoolCache, ParamLayout, Scalar,
};

/// Everything that fixes the architecture. Two nets built from equal configs
/// have identical parameter layouts.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    /// Encoder channels per stage; strictly increasing.
    pub stem_channels: [usize; 4],
    /// Training crop size; each dim divisible by 16. Also fixes the SPB
    /// flatten width, so slopes are only predicted at exactly this size.
    pub input_size: [usize; 3],
    pub use_ndp: bool,
    pub use_spb: bool,
    pub ndp: NdpConfig,
    /// Hidden width of the slope head.
    pub spb_hidden: usize,
    /// Dropout probability in the slope head (training mode only).
    pub spb_dropout: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            stem_channels: [8, 16, 32, 64],
            input_size: [32, 32, 32],
            use_ndp: true,
            use_spb: true,
            ndp: NdpConfig::default(),
            spb_hidden: 256,
            spb_dropout: 0.5,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let c = &self.stem_channels;
        if c[0] == 0 || !(c[0] < c[1] && c[1] < c[2] && c[2] < c[3]) {
            return Err(Error::Config(format!(
                "stem channels must be strictly increasing and nonzero, got {c:?}"
            )));
        }
        for &d in &self.input_size {
            if d == 0 || d % 16 != 0 {
                return Err(Error::Config(format!(
                    "input size {:?} must be divisible by 16 on every axis",
                    self.input_size
                )));
            }
        }
        if self.spb_hidden == 0 {
            return Err(Error::Config("spb_hidden must be >= 1".to_string()));
        }
        if !(0.0..1.0).contains(&self.spb_dropout) {
            return Err(Error::Config(format!(
                "spb_dropout must lie in [0, 1), got {}",
                self.spb_dropout
            )));
        }
        self.ndp.validate()
    }

    /// Flattened length of the deepest encoder map at the configured size.
    pub fn spb_flatten_len(&self) -> usize {
        let s = self.input_size;
        self.stem_channels[3] * (s[0] / 16) * (s[1] / 16) * (s[2] / 16)
    }
}

/// Encoder outputs at 1/2, 1/4, 1/8 and 1/16 of the input resolution.
pub struct FeaturePyramid<T> {
    pub maps: [Array4<T>; 4],
}

impl<T: Scalar> FeaturePyramid<T> {
    /// Check channel counts and exact halving stage to stage.
    fn validate(&self, channels: [usize; 4]) -> Result<()> {
        for (i, m) in self.maps.iter().enumerate() {
            let (c, ..) = m.dim();
            if c != channels[i] {
                return Err(Error::Config(format!(
                    "pyramid level {} has {c} channels, config expects {}",
                    i + 1,
                    channels[i]
                )));
            }
        }
        for i in 0..3 {
            let (_, d0, h0, w0) = self.maps[i].dim();
            let (_, d1, h1, w1) = self.maps[i + 1].dim();
            if (d0, h0, w0) != (2 * d1, 2 * h1, 2 * w1) {
                return Err(Error::ShapeMismatch {
                    left: [d0, h0, w0],
                    right: [2 * d1, 2 * h1, 2 * w1],
                });
            }
        }
        Ok(())
    }
}

struct EncStage {
    conv1: Conv3d,
    norm1: InstanceNorm,
    conv2: Conv3d,
    norm2: InstanceNorm,
    pool: MaxPool3d,
}

pub struct EncStageCache<T> {
    n1: InstanceNormCache<T>,
    r1: Array4<T>,
    n2: InstanceNormCache<T>,
    r2: Array4<T>,
    pool: MaxPoolCache,
}

impl EncStage {
    fn forward<T: Scalar>(&self, params: &[T], x: &Array4<T>) -> (Array4<T>, EncStageCache<T>) {
        let (y, n1) = self.norm1.forward(params, &self.conv1.forward(params, x));
        let r1 = relu(&y);
        let (y, n2) = self.norm2.forward(params, &self.conv2.forward(params, &r1));
        let r2 = relu(&y);
        let (out, pool) = self.pool.forward(&r2);
        (out, EncStageCache { n1, r1, n2, r2, pool })
    }

    fn backward<T: Scalar>(
        &self,
        params: &[T],
        grads: &mut [T],
        x: &Array4<T>,
        cache: &EncStageCache<T>,
        gy: &Array4<T>,
    ) -> Array4<T> {
        let g = self.pool.backward(&cache.pool, gy);
        let g = relu_backward(&cache.r2, &g);
        let g = self.norm2.backward(params, grads, &cache.n2, &g);
        let g = self.conv2.backward(params, grads, &cache.r1, &g);
        let g = relu_backward(&cache.r1, &g);
        let g = self.norm1.backward(params, grads, &cache.n1, &g);
        self.conv1.backward(params, grads, x, &g)
    }
}

struct DecStage {
    up_conv: Conv3d,
    up_norm: InstanceNorm,
    fuse1: Conv3d,
    fuse_norm1: InstanceNorm,
    fuse2: Conv3d,
    fuse_norm2: InstanceNorm,
    has_skip: bool,
    out_channels: usize,
}

pub struct DecStageCache<T> {
    in_dim: (usize, usize, usize, usize),
    up: Array4<T>,
    n0: InstanceNormCache<T>,
    r0: Array4<T>,
    cat: Array4<T>,
    n1: InstanceNormCache<T>,
    r1: Array4<T>,
    n2: InstanceNormCache<T>,
    r2: Array4<T>,
}

impl DecStage {
    fn forward<T: Scalar>(
        &self,
        params: &[T],
        x: &Array4<T>,
        skip: Option<&Array4<T>>,
    ) -> (Array4<T>, DecStageCache<T>) {
        let (_, d, h, w) = x.dim();
        let up = trilinear_resize(x, [2 * d, 2 * h, 2 * w]);
        let (y, n0) = self.up_norm.forward(params, &self.up_conv.forward(params, &up));
        let r0 = relu(&y);
        let cat = match skip {
            Some(m) => ndarray::concatenate(Axis(0), &[r0.view(), m.view()])
                .expect("skip resolution matches"),
            None => r0.clone(),
        };
        let (y, n1) = self.fuse_norm1.forward(params, &self.fuse1.forward(params, &cat));
        let r1 = relu(&y);
        let (y, n2) = self.fuse_norm2.forward(params, &self.fuse2.forward(params, &r1));
        let r2 = relu(&y);
        let cache = DecStageCache {
            in_dim: x.dim(),
            up,
            n0,
            r0,
            cat,
            n1,
            r1,
            n2,
            r2: r2.clone(),
        };
        (r2, cache)
    }

    /// Returns gradients for the stage input and, when present, the skip map.
    fn backward<T: Scalar>(
        &self,
        params: &[T],
        grads: &mut [T],
        cache: &DecStageCache<T>,
        gy: &Array4<T>,
    ) -> (Array4<T>, Option<Array4<T>>) {
        let g = relu_backward(&cache.r2, gy);
        let g = self.fuse_norm2.backward(params, grads, &cache.n2, &g);
        let g = self.fuse2.backward(params, grads, &cache.r1, &g);
        let g = relu_backward(&cache.r1, &g);
        let g = self.fuse_norm1.backward(params, grads, &cache.n1, &g);
        let dcat = self.fuse1.backward(params, grads, &cache.cat, &g);

        let c = self.out_channels;
        let (dr0, dskip) = if self.has_skip {
            (
                dcat.slice(ndarray::s![..c, .., .., ..]).to_owned(),
                Some(dcat.slice(ndarray::s![c.., .., .., ..]).to_owned()),
            )
        } else {
            (dcat, None)
        };
        let g = relu_backward(&cache.r0, &dr0);
        let g = self.up_norm.backward(params, grads, &cache.n0, &g);
        let dup = self.up_conv.backward(params, grads, &cache.up, &g);
        (trilinear_resize_backward(cache.in_dim, &dup), dskip)
    }
}

struct Spb {
    fc1: Linear,
    dropout: Dropout,
    fc2: Linear,
}

pub struct SpbCache<T> {
    flat: Vec<T>,
    r1: Vec<T>,
    dropped: Vec<T>,
    mask: Option<DropoutCache<T>>,
}

impl Spb {
    fn forward<T: Scalar>(
        &self,
        params: &[T],
        m4: &Array4<T>,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<([T; 2], SpbCache<T>)> {
        let flat: Vec<T> = m4.iter().copied().collect();
        if flat.len() != self.fc1.in_features {
            return Err(Error::Config(format!(
                "SPB expects a flattened length of {}, got {} (shape {:?})",
                self.fc1.in_features,
                flat.len(),
                m4.dim()
            )));
        }
        let h = self.fc1.forward(params, &flat);
        let r1: Vec<T> = h
            .into_iter()
            .map(|v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let (dropped, mask) = if training {
            let (d, m) = self.dropout.forward_train(&r1, rng);
            (d, Some(m))
        } else {
            (self.dropout.forward_eval(&r1), None)
        };
        let out = self.fc2.forward(params, &dropped);
        Ok((
            [out[0], out[1]],
            SpbCache {
                flat,
                r1,
                dropped,
                mask,
            },
        ))
    }

    fn backward<T: Scalar>(
        &self,
        params: &[T],
        grads: &mut [T],
        cache: &SpbCache<T>,
        gy: [T; 2],
        m4_dim: (usize, usize, usize, usize),
    ) -> Array4<T> {
        let g = self.fc2.backward(params, grads, &cache.dropped, &gy);
        let g = match &cache.mask {
            Some(m) => self.dropout.backward(m, &g),
            None => g,
        };
        let g: Vec<T> = g
            .iter()
            .zip(cache.r1.iter())
            .map(|(&gi, &yi)| if yi > T::zero() { gi } else { T::zero() })
            .collect();
        let dflat = self.fc1.backward(params, grads, &cache.flat, &g);
        Array4::from_shape_vec(m4_dim, dflat).expect("flatten length matches")
    }
}

/// Segmentation probabilities plus slopes when the SPB ran.
pub struct NetOutput<T> {
    /// `(1, D, H, W)` per-voxel implant probability.
    pub probs: Array4<T>,
    /// `(k1, k2)`; `None` when `use_spb` is off or the input is not the
    /// configured crop size (the flatten width would not match).
    pub slopes: Option<[T; 2]>,
}

/// All intermediate state one backward pass needs.
pub struct ForwardCache<T> {
    front: Array4<T>,
    ndp: Option<NdpCache<T>>,
    enc: [EncStageCache<T>; 4],
    pyramid: FeaturePyramid<T>,
    dec: [DecStageCache<T>; 4],
    probs: Array4<T>,
    spb: Option<SpbCache<T>>,
}

/// The network: layer handles plus the parameter layout they were allocated
/// from. Parameter values themselves live in caller-owned slices.
pub struct ImplantNet {
    pub config: NetworkConfig,
    pub layout: ParamLayout,
    ndp: Option<Ndp>,
    enc: [EncStage; 4],
    dec: [DecStage; 4],
    head: Conv3d,
    spb: Option<Spb>,
}

impl ImplantNet {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut layout = ParamLayout::new();
        let c = config.stem_channels;

        let ndp = if config.use_ndp {
            Some(Ndp::new(&mut layout, "ndp", 1, c[0], config.ndp.clone())?)
        } else {
            None
        };

        let enc_in = if config.use_ndp { c[0] } else { 1 };
        let mut enc = Vec::with_capacity(4);
        for s in 0..4 {
            let cin = if s == 0 { enc_in } else { c[s - 1] };
            let name = format!("enc{s}");
            enc.push(EncStage {
                conv1: Conv3d::new(&mut layout, &format!("{name}.conv1"), cin, c[s], 3, 1),
                norm1: InstanceNorm::new(&mut layout, &format!("{name}.norm1"), c[s]),
                conv2: Conv3d::new(&mut layout, &format!("{name}.conv2"), c[s], c[s], 3, 1),
                norm2: InstanceNorm::new(&mut layout, &format!("{name}.norm2"), c[s]),
                pool: MaxPool3d,
            });
        }

        // Decoder stages walk 1/16 → 1/8 → 1/4 → 1/2 → full resolution;
        // the first three fuse the matching encoder map, the last has no
        // full-resolution partner.
        let mut dec = Vec::with_capacity(4);
        for s in 0..4 {
            let (cin, cout, has_skip) = match s {
                0 => (c[3], c[2], true),
                1 => (c[2], c[1], true),
                2 => (c[1], c[0], true),
                _ => (c[0], c[0], false),
            };
            let fuse_in = if has_skip { 2 * cout } else { cout };
            let name = format!("dec{s}");
            dec.push(DecStage {
                up_conv: Conv3d::new(&mut layout, &format!("{name}.up"), cin, cout, 3, 1),
                up_norm: InstanceNorm::new(&mut layout, &format!("{name}.up_norm"), cout),
                fuse1: Conv3d::new(&mut layout, &format!("{name}.fuse1"), fuse_in, cout, 3, 1),
                fuse_norm1: InstanceNorm::new(&mut layout, &format!("{name}.fuse_norm1"), cout),
                fuse2: Conv3d::new(&mut layout, &format!("{name}.fuse2"), cout, cout, 3, 1),
                fuse_norm2: InstanceNorm::new(&mut layout, &format!("{name}.fuse_norm2"), cout),
                has_skip,
                out_channels: cout,
            });
        }

        let head = Conv3d::new(&mut layout, "head", c[0], 1, 1, 1);

        let spb = if config.use_spb {
            Some(Spb {
                fc1: Linear::new(&mut layout, "spb.fc1", config.spb_flatten_len(), config.spb_hidden),
                dropout: Dropout::new(config.spb_dropout),
                fc2: Linear::new(&mut layout, "spb.fc2", config.spb_hidden, 2),
            })
        } else {
            None
        };

        Ok(Self {
            config,
            layout,
            ndp,
            enc: enc.try_into().ok().expect("four encoder stages"),
            dec: dec.try_into().ok().expect("four decoder stages"),
            head,
            spb,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layout.len()
    }

    /// Freshly initialized parameter arena (seeded, dtype-stable).
    pub fn init_params<T: Scalar>(&self, seed: u64) -> Vec<T> {
        self.layout.init_values(seed)
    }

    fn check_input<T: Scalar>(&self, x: &Array4<T>) -> Result<()> {
        let (c, d, h, w) = x.dim();
        if c != 1 {
            return Err(Error::Config(format!(
                "network input must have one channel, got {c}"
            )));
        }
        for dim in [d, h, w] {
            if dim == 0 || dim % 16 != 0 {
                return Err(Error::Config(format!(
                    "input spatial dims ({d},{h},{w}) must be divisible by 16"
                )));
            }
        }
        Ok(())
    }

    /// Four conv–norm–ReLU ×2 + max-pool stages.
    pub fn encoder_forward<T: Scalar>(
        &self,
        params: &[T],
        x: &Array4<T>,
    ) -> Result<(FeaturePyramid<T>, [EncStageCache<T>; 4])> {
        let (_, d, h, w) = x.dim();
        for dim in [d, h, w] {
            if dim % 16 != 0 {
                return Err(Error::Config(format!(
                    "encoder input ({d},{h},{w}) must be divisible by 16"
                )));
            }
        }
        let (m1, c1) = self.enc[0].forward(params, x);
        let (m2, c2) = self.enc[1].forward(params, &m1);
        let (m3, c3) = self.enc[2].forward(params, &m2);
        let (m4, c4) = self.enc[3].forward(params, &m3);
        Ok((
            FeaturePyramid {
                maps: [m1, m2, m3, m4],
            },
            [c1, c2, c3, c4],
        ))
    }

    /// Decode the pyramid to a full-resolution probability volume.
    pub fn ippb_forward<T: Scalar>(
        &self,
        params: &[T],
        pyramid: &FeaturePyramid<T>,
    ) -> Result<(Array4<T>, [DecStageCache<T>; 4])> {
        pyramid.validate(self.config.stem_channels)?;
        let [m1, m2, m3, m4] = &pyramid.maps;
        let (y, d0) = self.dec[0].forward(params, m4, Some(m3));
        let (y, d1) = self.dec[1].forward(params, &y, Some(m2));
        let (y, d2) = self.dec[2].forward(params, &y, Some(m1));
        let (y, d3) = self.dec[3].forward(params, &y, None);
        let probs = sigmoid(&self.head.forward(params, &y));
        Ok((probs, [d0, d1, d2, d3]))
    }

    /// Regress the two slopes from the deepest encoder map.
    pub fn spb_forward<T: Scalar>(
        &self,
        params: &[T],
        m4: &Array4<T>,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<([T; 2], SpbCache<T>)> {
        let spb = self
            .spb
            .as_ref()
            .ok_or_else(|| Error::Config("SPB is disabled in this config".to_string()))?;
        spb.forward(params, m4, training, rng)
    }

    /// Full forward pass. Slopes are produced only when the SPB is enabled
    /// and the input matches the configured crop size.
    pub fn forward<T: Scalar>(
        &self,
        params: &[T],
        x: &Array4<T>,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<(NetOutput<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let (front, ndp_cache) = match &self.ndp {
            Some(ndp) => {
                let (f, c) = ndp.forward(params, x)?;
                (f, Some(c))
            }
            None => (x.clone(), None),
        };
        let (pyramid, enc) = self.encoder_forward(params, &front)?;
        let (probs, dec) = self.ippb_forward(params, &pyramid)?;

        let (_, d, h, w) = x.dim();
        let spb_cache = if self.spb.is_some() && [d, h, w] == self.config.input_size {
            Some(self.spb_forward(params, &pyramid.maps[3], training, rng)?)
        } else {
            None
        };
        let (slopes, spb) = match spb_cache {
            Some((s, c)) => (Some(s), Some(c)),
            None => (None, None),
        };

        Ok((
            NetOutput {
                probs: probs.clone(),
                slopes,
            },
            ForwardCache {
                front,
                ndp: ndp_cache,
                enc,
                pyramid,
                dec,
                probs,
                spb,
            },
        ))
    }

    /// Evaluation-mode forward without cache bookkeeping at the call site.
    pub fn infer<T: Scalar>(&self, params: &[T], x: &Array4<T>) -> Result<NetOutput<T>> {
        // Evaluation mode never samples, so any rng works here.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(params, x, false, &mut rng)?.0)
    }

    /// Backward through decoder + head given `d loss / d probs`; returns the
    /// pyramid gradient.
    pub fn ippb_backward<T: Scalar>(
        &self,
        params: &[T],
        grads: &mut [T],
        dec: &[DecStageCache<T>; 4],
        probs: &Array4<T>,
        d_probs: &Array4<T>,
    ) -> FeaturePyramid<T> {
        let g = sigmoid_backward(probs, d_probs);
        let g = self.head.backward(params, grads, &dec[3].r2, &g);
        let (g, _) = self.dec[3].backward(params, grads, &dec[3], &g);
        let (g, dm1) = self.dec[2].backward(params, grads, &dec[2], &g);
        let (g, dm2) = self.dec[1].backward(params, grads, &dec[1], &g);
        let (dm4, dm3) = self.dec[0].backward(params, grads, &dec[0], &g);
        FeaturePyramid {
            maps: [
                dm1.expect("stage 2 has a skip"),
                dm2.expect("stage 1 has a skip"),
                dm3.expect("stage 0 has a skip"),
                dm4,
            ],
        }
    }

    /// Full backward pass. `d_slopes` must be `Some` exactly when the forward
    /// produced slopes. Returns `d loss / d input`.
    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        grads: &mut [T],
        x: &Array4<T>,
        cache: &ForwardCache<T>,
        d_probs: &Array4<T>,
        d_slopes: Option<[T; 2]>,
    ) -> Array4<T> {
        let mut d_pyr = self.ippb_backward(params, grads, &cache.dec, &cache.probs, d_probs);

        if let (Some(ds), Some(spb_cache), Some(spb)) = (d_slopes, &cache.spb, &self.spb) {
            let dm4 = spb.backward(
                params,
                grads,
                spb_cache,
                ds,
                cache.pyramid.maps[3].dim(),
            );
            d_pyr.maps[3] += &dm4;
        }

        // Encoder stages in reverse; each stage's input gradient adds to the
        // skip gradient already collected for that pyramid level.
        let mut g = d_pyr.maps[3].clone();
        for s in (0..4).rev() {
            let x_in = if s == 0 {
                &cache.front
            } else {
                &cache.pyramid.maps[s - 1]
            };
            let dx_in = self.enc[s].backward(params, grads, x_in, &cache.enc[s], &g);
            if s > 0 {
                g = &d_pyr.maps[s - 1] + &dx_in;
            } else {
                g = dx_in;
            }
        }

        match (&self.ndp, &cache.ndp) {
            (Some(ndp), Some(ndp_cache)) => ndp.backward(params, grads, x, ndp_cache, &g),
            _ => g,
        }
    }
}
