//! Neighboring-distance-perception front end.
//!
//! Three parallel dilated-convolution branches widen the receptive field at
//! full resolution; each branch is summarized into 64 graph nodes (a learned
//! 3×3×3 convolution followed by adaptive average pooling onto a 4×4×4
//! grid), passed through a two-layer graph network with dense uniform
//! adjacency, upsampled back to the branch's spatial size and fused
//! residually. A 1×1×1 convolution integrates the concatenated branches.
//!
//! With uniform `1/64` adjacency (self-inclusion on), every node aggregates
//! the same mean vector, so a graph layer's output rows are identical; the
//! implementation exploits this but keeps the node-matrix interface so the
//! adjacency could be swapped without touching callers.

use ndarray::{Array1, Array2, Array4, Axis};

use crate::error::{Error, Result};
use crate::nn::{
    adaptive_avg_pool, adaptive_avg_pool_backward, relu, relu_backward, trilinear_resize,
    trilinear_resize_backward, Conv3d, Linear, ParamLayout, Scalar,
};

/// Architecture of the NDP front end.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NdpConfig {
    /// Dilation rate per branch; strictly increasing, each ≥ 1.
    pub dilation_rates: [usize; 3],
    /// Channels carried by each branch.
    pub branch_channels: usize,
    /// Pooled node grid; the product must stay 64.
    pub node_grid: [usize; 3],
    /// Width of the first graph layer.
    pub gcn_hidden: usize,
}

impl Default for NdpConfig {
    fn default() -> Self {
        Self {
            dilation_rates: [2, 3, 4],
            branch_channels: 16,
            node_grid: [4, 4, 4],
            gcn_hidden: 16,
        }
    }
}

impl NdpConfig {
    pub fn validate(&self) -> Result<()> {
        let r = &self.dilation_rates;
        if r[0] < 1 || r[0] >= r[1] || r[1] >= r[2] {
            return Err(Error::Config(format!(
                "dilation rates must be strictly increasing and >= 1, got {r:?}"
            )));
        }
        let nodes: usize = self.node_grid.iter().product();
        if nodes != 64 {
            return Err(Error::Config(format!(
                "node grid {:?} must contain exactly 64 nodes, has {nodes}",
                self.node_grid
            )));
        }
        if self.branch_channels == 0 || self.gcn_hidden == 0 {
            return Err(Error::Config(
                "branch_channels and gcn_hidden must be >= 1".to_string(),
            ));
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        64
    }
}

/// One graph layer: uniform mean aggregation over all nodes (self included)
/// followed by a shared linear map and ReLU.
#[derive(Debug, Clone)]
struct GcnRound {
    lin: Linear,
}

struct GcnRoundCache<T> {
    mean: Array1<T>,
    pre: Array1<T>,
}

impl GcnRound {
    fn forward<T: Scalar>(&self, params: &[T], nodes: &Array2<T>) -> (Array2<T>, GcnRoundCache<T>) {
        let n = nodes.nrows();
        // Uniform adjacency: every node aggregates the same column mean.
        let inv_n = T::from_f64(1.0 / n as f64);
        let mean = nodes.sum_axis(Axis(0)) * inv_n;
        let pre = Array1::from(self.lin.forward(params, mean.as_slice().unwrap()));
        let row: Vec<T> = pre
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let out = Array2::from_shape_fn((n, row.len()), |(_, c)| row[c]);
        (out, GcnRoundCache { mean, pre })
    }

    fn backward<T: Scalar>(
        &self,
        params: &[T],
        grads: &mut [T],
        cache: &GcnRoundCache<T>,
        gy: &Array2<T>,
    ) -> Array2<T> {
        let n = gy.nrows();
        // All rows share one pre-activation, so their gradients sum.
        let summed = gy.sum_axis(Axis(0));
        let dpre: Vec<T> = summed
            .iter()
            .zip(cache.pre.iter())
            .map(|(&g, &p)| if p > T::zero() { g } else { T::zero() })
            .collect();
        let dmean = self
            .lin
            .backward(params, grads, cache.mean.as_slice().unwrap(), &dpre);
        let inv_n = T::from_f64(1.0 / n as f64);
        Array2::from_shape_fn((n, dmean.len()), |(_, c)| dmean[c] * inv_n)
    }
}

#[derive(Debug, Clone)]
struct Branch {
    rate: usize,
    dilate: Conv3d,
    knet: Conv3d,
    gcn1: GcnRound,
    gcn2: GcnRound,
}

/// The complete front end; parameters live in the caller's arena.
#[derive(Debug, Clone)]
pub struct Ndp {
    pub config: NdpConfig,
    pub in_channels: usize,
    pub out_channels: usize,
    branches: Vec<Branch>,
    integrate: Conv3d,
}

/// Intermediate activations of one forward pass.
pub struct NdpCache<T> {
    branch: Vec<BranchCache<T>>,
    concat: Array4<T>,
    out: Array4<T>,
}

struct BranchCache<T> {
    dilate_y: Array4<T>,
    knet_y: Array4<T>,
    gcn1: GcnRoundCache<T>,
    gcn2: GcnRoundCache<T>,
}

impl Ndp {
    pub fn new(
        layout: &mut ParamLayout,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        config: NdpConfig,
    ) -> Result<Self> {
        config.validate()?;
        let bc = config.branch_channels;
        let branches = config
            .dilation_rates
            .iter()
            .enumerate()
            .map(|(j, &rate)| Branch {
                rate,
                dilate: Conv3d::new(
                    layout,
                    &format!("{name}.branch{j}.dilate"),
                    in_channels,
                    bc,
                    3,
                    rate,
                ),
                knet: Conv3d::new(layout, &format!("{name}.branch{j}.knet"), bc, bc, 3, 1),
                gcn1: GcnRound {
                    lin: Linear::new(
                        layout,
                        &format!("{name}.branch{j}.gcn1"),
                        bc,
                        config.gcn_hidden,
                    ),
                },
                gcn2: GcnRound {
                    lin: Linear::new(
                        layout,
                        &format!("{name}.branch{j}.gcn2"),
                        config.gcn_hidden,
                        bc,
                    ),
                },
            })
            .collect();
        let integrate = Conv3d::new(
            layout,
            &format!("{name}.integrate"),
            3 * bc,
            out_channels,
            1,
            1,
        );
        Ok(Self {
            config,
            in_channels,
            out_channels,
            branches,
            integrate,
        })
    }

    fn check_spatial(&self, dims: (usize, usize, usize)) -> Result<()> {
        let max_rate = self.config.dilation_rates[2];
        let field = 2 * max_rate + 1;
        let min_dim = dims.0.min(dims.1).min(dims.2);
        if min_dim < field {
            return Err(Error::Config(format!(
                "NDP input {dims:?} smaller than the dilated receptive field {field}"
            )));
        }
        let g = self.config.node_grid;
        if dims.0 < g[0] || dims.1 < g[1] || dims.2 < g[2] {
            return Err(Error::Config(format!(
                "NDP input {dims:?} smaller than the node grid {g:?}"
            )));
        }
        Ok(())
    }

    /// Dilated convolution + ReLU of branch `j` at its configured rate.
    pub fn dilated_branch<T: Scalar>(
        &self,
        j: usize,
        params: &[T],
        x: &Array4<T>,
    ) -> Result<Array4<T>> {
        let (_, d, h, w) = x.dim();
        let rate = self.branches[j].rate;
        let field = 2 * rate + 1;
        if d.min(h).min(w) < field {
            return Err(Error::Config(format!(
                "input ({d},{h},{w}) smaller than the rate-{rate} receptive field {field}"
            )));
        }
        Ok(relu(&self.branches[j].dilate.forward(params, x)))
    }

    /// Learned 3×3×3 convolution + ReLU, then adaptive average pooling onto
    /// the node grid; rows are nodes in `(z, y, x)` grid order.
    pub fn knet_pool<T: Scalar>(
        &self,
        j: usize,
        params: &[T],
        d_j: &Array4<T>,
    ) -> Result<Array2<T>> {
        let (_, d, h, w) = d_j.dim();
        let g = self.config.node_grid;
        if d < g[0] || h < g[1] || w < g[2] {
            return Err(Error::Config(format!(
                "input ({d},{h},{w}) smaller than the node grid {g:?}"
            )));
        }
        let y = relu(&self.branches[j].knet.forward(params, d_j));
        Ok(grid_to_nodes(&adaptive_avg_pool(&y, g)))
    }

    /// Two rounds of message passing over the 64 nodes.
    pub fn gcn_forward<T: Scalar>(
        &self,
        j: usize,
        params: &[T],
        nodes: &Array2<T>,
    ) -> Result<Array2<T>> {
        if nodes.nrows() != self.config.node_count() {
            return Err(Error::Config(format!(
                "expected {} nodes, got {}",
                self.config.node_count(),
                nodes.nrows()
            )));
        }
        let b = &self.branches[j];
        let (h1, _) = b.gcn1.forward(params, nodes);
        let (h2, _) = b.gcn2.forward(params, &h1);
        Ok(h2)
    }

    /// Full front end: per-branch dilate → pool → graph → upsample →
    /// residual fusion, then 1×1×1 integration + ReLU.
    pub fn forward<T: Scalar>(
        &self,
        params: &[T],
        x: &Array4<T>,
    ) -> Result<(Array4<T>, NdpCache<T>)> {
        let (c, d, h, w) = x.dim();
        if c != self.in_channels {
            return Err(Error::Config(format!(
                "NDP expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        self.check_spatial((d, h, w))?;

        let g = self.config.node_grid;
        let mut fused = Vec::with_capacity(3);
        let mut caches = Vec::with_capacity(3);
        for b in &self.branches {
            let dilate_y = relu(&b.dilate.forward(params, x));
            let knet_y = relu(&b.knet.forward(params, &dilate_y));
            let nodes = grid_to_nodes(&adaptive_avg_pool(&knet_y, g));
            let (h1, gcn1) = b.gcn1.forward(params, &nodes);
            let (h2, gcn2) = b.gcn2.forward(params, &h1);
            let ghat = trilinear_resize(&nodes_to_grid(&h2, g), [d, h, w]);
            fused.push(&dilate_y + &ghat);
            caches.push(BranchCache {
                dilate_y,
                knet_y,
                gcn1,
                gcn2,
            });
        }
        let concat = ndarray::concatenate(
            Axis(0),
            &fused.iter().map(|f| f.view()).collect::<Vec<_>>(),
        )
        .expect("equal spatial dims");
        let out = relu(&self.integrate.forward(params, &concat));
        Ok((
            out.clone(),
            NdpCache {
                branch: caches,
                concat,
                out,
            },
        ))
    }

    /// Accumulate parameter gradients, return `d loss / d x`.
    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        grads: &mut [T],
        x: &Array4<T>,
        cache: &NdpCache<T>,
        gy: &Array4<T>,
    ) -> Array4<T> {
        let (_, d, h, w) = x.dim();
        let g = self.config.node_grid;
        let bc = self.config.branch_channels;

        let dpre = relu_backward(&cache.out, gy);
        let dconcat = self
            .integrate
            .backward(params, grads, &cache.concat, &dpre);

        let mut dx = Array4::<T>::zeros(x.dim());
        for (j, b) in self.branches.iter().enumerate() {
            let bc_cache = &cache.branch[j];
            let dfused = dconcat
                .slice(ndarray::s![j * bc..(j + 1) * bc, .., .., ..])
                .to_owned();

            // Graph path: residual gradient flows through the upsample.
            let dghat_grid =
                trilinear_resize_backward((bc, g[0], g[1], g[2]), &dfused);
            let dh2 = grid_to_nodes(&dghat_grid);
            let dh1 = b.gcn2.backward(params, grads, &bc_cache.gcn2, &dh2);
            let dnodes = b.gcn1.backward(params, grads, &bc_cache.gcn1, &dh1);
            let dpool = nodes_to_grid(&dnodes, g);
            let dknet_y =
                adaptive_avg_pool_backward(bc_cache.knet_y.dim(), g, &dpool);
            let dknet_pre = relu_backward(&bc_cache.knet_y, &dknet_y);
            let from_knet =
                b.knet
                    .backward(params, grads, &bc_cache.dilate_y, &dknet_pre);

            // Residual path adds directly.
            let ddilate_y = &dfused + &from_knet;
            let ddilate_pre = relu_backward(&bc_cache.dilate_y, &ddilate_y);
            dx += &b.dilate.backward(params, grads, x, &ddilate_pre);
        }
        debug_assert_eq!(dx.dim(), (self.in_channels, d, h, w));
        dx
    }
}

/// `(C, gz, gy, gx)` grid → `(nodes, C)` matrix, nodes in grid scan order.
fn grid_to_nodes<T: Scalar>(grid: &Array4<T>) -> Array2<T> {
    let (c, gz, gy, gx) = grid.dim();
    let n = gz * gy * gx;
    Array2::from_shape_fn((n, c), |(i, ch)| {
        let z = i / (gy * gx);
        let y = (i / gx) % gy;
        let x = i % gx;
        grid[(ch, z, y, x)]
    })
}

/// Inverse of [`grid_to_nodes`].
fn nodes_to_grid<T: Scalar>(nodes: &Array2<T>, g: [usize; 3]) -> Array4<T> {
    let c = nodes.ncols();
    Array4::from_shape_fn((c, g[0], g[1], g[2]), |(ch, z, y, x)| {
        nodes[((z * g[1] + y) * g[2] + x, ch)]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{central_difference, relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_ndp(layout: &mut ParamLayout, in_ch: usize, out_ch: usize) -> Ndp {
        let config = NdpConfig {
            dilation_rates: [1, 2, 3],
            branch_channels: 2,
            node_grid: [4, 4, 4],
            gcn_hidden: 3,
        };
        Ndp::new(layout, "ndp", in_ch, out_ch, config).unwrap()
    }

    fn random_params(layout: &ParamLayout, rng: &mut impl Rng) -> Vec<f64> {
        (0..layout.len()).map(|_| rng.random_range(-0.4..0.4)).collect()
    }

    #[test]
    fn config_validation() {
        assert!(NdpConfig::default().validate().is_ok());
        let bad = NdpConfig {
            dilation_rates: [2, 2, 4],
            ..NdpConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = NdpConfig {
            dilation_rates: [0, 1, 2],
            ..NdpConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = NdpConfig {
            node_grid: [4, 4, 2],
            ..NdpConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn dilated_branch_shape_and_bounds() {
        let mut layout = ParamLayout::new();
        let ndp = tiny_ndp(&mut layout, 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = random_params(&layout, &mut rng);

        let x = Array4::<f64>::zeros((1, 16, 16, 16));
        for j in 0..3 {
            let y = ndp.dilated_branch(j, &params, &x).unwrap();
            assert_eq!(y.dim(), (2, 16, 16, 16));
        }
        // Rate 3 needs at least 7 voxels per axis.
        let small = Array4::<f64>::zeros((1, 6, 16, 16));
        assert!(ndp.dilated_branch(2, &params, &small).is_err());
        assert!(ndp.dilated_branch(0, &params, &small).is_ok());
    }

    #[test]
    fn dilated_branch_zero_input_zero_bias() {
        let mut layout = ParamLayout::new();
        let ndp = tiny_ndp(&mut layout, 1, 2);
        let params: Vec<f64> = layout.init_values(3); // biases start at zero
        let x = Array4::<f64>::zeros((1, 8, 8, 8));
        for j in 0..3 {
            let y = ndp.dilated_branch(j, &params, &x).unwrap();
            assert!(y.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn dilated_branch_impulse_footprint() {
        let mut layout = ParamLayout::new();
        let ndp = tiny_ndp(&mut layout, 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = random_params(&layout, &mut rng);
        // Zero all biases so the footprint is exactly the kernel support.
        for spec in layout.specs() {
            if spec.name.ends_with(".bias") {
                params[spec.slice.range()].fill(0.0);
            }
        }
        let mut x = Array4::<f64>::zeros((1, 9, 9, 9));
        x[(0, 4, 4, 4)] = 1.0;
        let rate = 2; // branch index 1
        let y = ndp.dilated_branch(1, &params, &x).unwrap();
        for ((_, z, yy, xx), &v) in y.indexed_iter() {
            let on_grid = [z, yy, xx].iter().all(|&i| {
                let o = i as i64 - 4;
                o == 0 || o.abs() == rate
            });
            if !on_grid {
                assert_eq!(v, 0.0, "leak at ({z},{yy},{xx})");
            }
        }
    }

    #[test]
    fn knet_pool_always_yields_64_nodes() {
        let mut layout = ParamLayout::new();
        let ndp = tiny_ndp(&mut layout, 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = random_params(&layout, &mut rng);
        for size in [4usize, 8, 16, 32] {
            let d = Array4::from_shape_fn((2, size, size, size), |_| rng.random_range(0.0..1.0));
            let nodes = ndp.knet_pool(0, &params, &d).unwrap();
            assert_eq!(nodes.dim(), (64, 2), "size {size}");
        }
        let too_small = Array4::<f64>::zeros((2, 3, 8, 8));
        assert!(ndp.knet_pool(0, &params, &too_small).is_err());
    }

    #[test]
    fn knet_pool_identity_conv_preserves_constants() {
        let mut layout = ParamLayout::new();
        let ndp = tiny_ndp(&mut layout, 1, 2);
        let mut params = vec![0.0f64; layout.len()];
        // knet conv of branch 0: weights summing to 1 per output channel.
        let knet = &ndp.branches[0].knet;
        let per_tap = 1.0 / (knet.in_channels * 27) as f64;
        params[knet.weight.range()].fill(per_tap);

        let c = 0.75;
        let d = Array4::from_elem((2, 8, 8, 8), c);
        let nodes = ndp.knet_pool(0, &params, &d).unwrap();
        // Interior voxels keep the constant; border padding lowers sums, so
        // check the strict interior via the block-mean oracle instead of a
        // blanket equality: every node must stay within (0, c].
        for &v in nodes.iter() {
            assert!(v > 0.0 && v <= c + 1e-12, "node value {v}");
        }
        // The all-interior central nodes hit c exactly.
        let central = nodes[((1 * 4 + 1) * 4 + 1, 0)];
        assert!((central - c).abs() < 1e-12, "central node {central}");
    }

    #[test]
    fn knet_pool_matches_block_mean_oracle() {
        let mut layout = ParamLayout::new();
        let ndp = tiny_ndp(&mut layout, 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = random_params(&layout, &mut rng);
        let d = Array4::from_shape_fn((2, 8, 8, 8), |_| rng.random_range(-1.0..1.0));

        let nodes = ndp.knet_pool(1, &params, &d).unwrap();
        let conv_out = relu(&ndp.branches[1].knet.forward(&params, &d));
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    for ch in 0..2 {
                        let mut acc = 0.0;
                        for dz in 0..2 {
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    acc += conv_out[(ch, 2 * a + dz, 2 * b + dy, 2 * c + dx)];
                                }
                            }
                        }
                        let want = acc / 8.0;
                        let got = nodes[((a * 4 + b) * 4 + c, ch)];
                        assert!((got - want).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn gcn_maps_constant_fields_to_constant_fields() {
        let mut layout = ParamLayout::new();
        let ndp = tiny_ndp(&mut layout, 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = random_params(&layout, &mut rng);

        let row = [0.3f64, -0.8];
        let nodes = Array2::from_shape_fn((64, 2), |(_, c)| row[c]);
        let out = ndp.gcn_forward(0, &params, &nodes).unwrap();
        assert_eq!(out.dim(), (64, 2));
        let first = out.row(0).to_owned();
        for r in out.rows() {
            assert_eq!(r.to_owned(), first);
        }
        assert!(ndp
            .gcn_forward(0, &params, &Array2::<f64>::zeros((32, 2)))
            .is_err());
    }

    #[test]
    fn gcn_is_permutation_equivariant() {
        let mut layout = ParamLayout::new();
        let ndp = tiny_ndp(&mut layout, 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params = random_params(&layout, &mut rng);

        let nodes = Array2::from_shape_fn((64, 2), |_| rng.random_range(-1.0..1.0f64));
        let mut perm: Vec<usize> = (0..64).collect();
        for i in (1..64).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let permuted = Array2::from_shape_fn((64, 2), |(i, c)| nodes[(perm[i], c)]);

        let out = ndp.gcn_forward(0, &params, &nodes).unwrap();
        let out_p = ndp.gcn_forward(0, &params, &permuted).unwrap();
        for i in 0..64 {
            for c in 0..2 {
                assert!((out[(perm[i], c)] - out_p[(i, c)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gcn_zero_input_zero_bias_gives_zero() {
        let mut layout = ParamLayout::new();
        let ndp = tiny_ndp(&mut layout, 1, 2);
        let params: Vec<f64> = layout.init_values(7);
        let nodes = Array2::<f64>::zeros((64, 2));
        let out = ndp.gcn_forward(0, &params, &nodes).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_shape_contract_and_zero_params() {
        let mut layout = ParamLayout::new();
        let ndp = tiny_ndp(&mut layout, 1, 5);
        let zero = vec![0.0f64; layout.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Array4::from_shape_fn((1, 16, 16, 16), |_| rng.random_range(-1.0..1.0));
        let (y, _) = ndp.forward(&zero, &x).unwrap();
        assert_eq!(y.dim(), (5, 16, 16, 16));
        assert!(y.iter().all(|&v| v == 0.0));

        let params = random_params(&layout, &mut rng);
        let (y, _) = ndp.forward(&params, &x).unwrap();
        assert_eq!(y.dim(), (5, 16, 16, 16));
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zeroed_gcn_reduces_to_projected_dilation_branches() {
        // With all graph parameters zero, Ĝ_j ≡ 0 and the output must equal
        // the hand-composed pipeline: ReLU(integrate(concat(D_j))).
        let mut layout = ParamLayout::new();
        let ndp = tiny_ndp(&mut layout, 1, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut params = random_params(&layout, &mut rng);
        for spec in layout.specs() {
            if spec.name.contains(".gcn") {
                params[spec.slice.range()].fill(0.0);
            }
        }
        let x = Array4::from_shape_fn((1, 12, 12, 12), |_| rng.random_range(-1.0..1.0f64));
        let (got, _) = ndp.forward(&params, &x).unwrap();

        let d: Vec<Array4<f64>> = (0..3)
            .map(|j| ndp.dilated_branch(j, &params, &x).unwrap())
            .collect();
        let cat = ndarray::concatenate(
            Axis(0),
            &d.iter().map(|a| a.view()).collect::<Vec<_>>(),
        )
        .unwrap();
        let want = relu(&ndp.integrate.forward(&params, &cat));
        let max_err = (&got - &want).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_err < 1e-12, "{max_err}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut layout = ParamLayout::new();
        let ndp = tiny_ndp(&mut layout, 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut params = random_params(&layout, &mut rng);
        let x = Array4::from_shape_fn((1, 8, 8, 8), |_| rng.random_range(-1.0..1.0f64));
        let proj = Array4::from_shape_fn((2, 8, 8, 8), |_| rng.random_range(-1.0..1.0f64));

        let (_, cache) = ndp.forward(&params, &x).unwrap();
        let mut grads = vec![0.0f64; layout.len()];
        let dx = ndp.backward(&params, &mut grads, &x, &cache, &proj);

        let loss = |p: &[f64], x: &Array4<f64>| -> f64 {
            (&ndp.forward(p, x).unwrap().0 * &proj).sum()
        };
        // The loss sums ~10³ terms, so finite differences carry roundoff of
        // order 1e-7 in gradient units; compare with a matching floor.
        for i in 0..layout.len() {
            let fd = central_difference(&mut params, i, 1e-6, |p| loss(p, &x));
            assert!(
                relative_error(grads[i], fd, 1e-3) < 1e-4,
                "param {i}: {} vs {fd}",
                grads[i]
            );
        }
        let mut flat: Vec<f64> = x.iter().copied().collect();
        for i in (0..flat.len()).step_by(3) {
            let fd = central_difference(&mut flat, i, 1e-6, |v| {
                let xa = Array4::from_shape_vec(x.dim(), v.to_vec()).unwrap();
                loss(&params, &xa)
            });
            let a = dx.as_slice().unwrap()[i];
            assert!(relative_error(a, fd, 1e-3) < 1e-4, "input {i}: {a} vs {fd}");
        }
    }

    #[test]
    fn every_parameter_block_receives_gradient() {
        let mut layout = ParamLayout::new();
        let ndp = tiny_ndp(&mut layout, 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // Positive weights + positive input keep every ReLU gate open, so a
        // zero gradient can only come from a wiring bug, never a dead unit.
        let params: Vec<f64> = (0..layout.len())
            .map(|_| rng.random_range(0.05..0.4))
            .collect();
        let x = Array4::from_shape_fn((1, 8, 8, 8), |_| rng.random_range(0.1..1.0f64));
        let (y, cache) = ndp.forward(&params, &x).unwrap();
        let gy = Array4::from_elem(y.dim(), 1.0);
        let mut grads = vec![0.0f64; layout.len()];
        ndp.backward(&params, &mut grads, &x, &cache, &gy);

        for spec in layout.specs() {
            let norm: f64 = grads[spec.slice.range()].iter().map(|g| g * g).sum();
            assert!(norm > 0.0, "dead block {}", spec.name);
        }
    }
}
