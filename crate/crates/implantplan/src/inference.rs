//! Overlapped sliding-window inference over whole volumes.
//!
//! Large scans are tiled into fixed-size windows with a configurable overlap
//! fraction; every window runs through the model and overlapping predictions
//! are blended (uniform average by default, optionally Gaussian-weighted).
//! Volumes smaller than the window are zero-padded at the high end and
//! cropped back afterwards, so coordinates never shift.

use ndarray::{s, Array3, Array4};

use crate::error::{Error, Result};
use crate::network::ImplantNet;
use crate::nn::Scalar;
use crate::volume::{SlopePair, VoxelVolume};

/// Anything that maps a window-sized input `(1, d, h, w)` to a probability
/// volume of the same shape plus, when available, a slope prediction.
pub trait WindowModel<T: Scalar> {
    fn predict(&self, window: &Array4<T>) -> Result<(Array4<T>, Option<[T; 2]>)>;
}

impl<T: Scalar, F> WindowModel<T> for F
where
    F: Fn(&Array4<T>) -> Result<(Array4<T>, Option<[T; 2]>)>,
{
    fn predict(&self, window: &Array4<T>) -> Result<(Array4<T>, Option<[T; 2]>)> {
        self(window)
    }
}

/// A trained network plus its parameter arena, usable as a window model.
pub struct NetModel<'a, T> {
    pub net: &'a ImplantNet,
    pub params: &'a [T],
}

impl<T: Scalar> WindowModel<T> for NetModel<'_, T> {
    fn predict(&self, window: &Array4<T>) -> Result<(Array4<T>, Option<[T; 2]>)> {
        let out = self.net.infer(self.params, window)?;
        Ok((out.probs, out.slopes))
    }
}

/// How overlapping window predictions are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BlendMode {
    /// Every covering window contributes equally.
    #[default]
    Uniform,
    /// Windows are weighted by a Gaussian centered in the window (σ = w/8),
    /// down-weighting border predictions.
    Gaussian,
}

#[derive(Debug, Clone)]
pub struct InferenceOptions {
    /// Fractional overlap between adjacent windows.
    pub overlap: f64,
    pub blend: BlendMode,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            overlap: 0.25,
            blend: BlendMode::Uniform,
        }
    }
}

/// Window origins covering `volume_shape` with stride
/// `ceil(window · (1 − overlap))`; the last origin per axis is clamped so
/// the final window ends exactly at the boundary.
pub fn tile_plan(
    volume_shape: [usize; 3],
    window: [usize; 3],
    overlap: f64,
) -> Result<Vec<[usize; 3]>> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Config(format!(
            "overlap must lie in [0, 1), got {overlap}"
        )));
    }
    for a in 0..3 {
        if window[a] == 0 || window[a] > volume_shape[a] {
            return Err(Error::Config(format!(
                "window {window:?} does not fit volume {volume_shape:?}"
            )));
        }
    }
    let axis_origins = |len: usize, win: usize| -> Vec<usize> {
        let stride = ((win as f64) * (1.0 - overlap)).ceil() as usize;
        let stride = stride.max(1);
        let mut origins = Vec::new();
        for k in 0.. {
            let start = k * stride;
            if start + win >= len {
                origins.push(len - win);
                break;
            }
            origins.push(start);
        }
        origins.dedup();
        origins
    };
    let zs = axis_origins(volume_shape[0], window[0]);
    let ys = axis_origins(volume_shape[1], window[1]);
    let xs = axis_origins(volume_shape[2], window[2]);
    let mut plan = Vec::with_capacity(zs.len() * ys.len() * xs.len());
    for &z in &zs {
        for &y in &ys {
            for &x in &xs {
                plan.push([z, y, x]);
            }
        }
    }
    Ok(plan)
}

/// Blended whole-volume prediction.
pub struct InferenceResult<T> {
    /// Per-voxel implant probability at the input shape.
    pub probs: Array3<T>,
    /// Slopes from the window whose center lies nearest the predicted
    /// implant centroid; `None` when no window produced a slope estimate.
    pub slopes: Option<SlopePair>,
}

fn gaussian_window<T: Scalar>(window: [usize; 3]) -> Array3<T> {
    let sigma: Vec<f64> = window.iter().map(|&w| (w as f64 / 8.0).max(1.0)).collect();
    let center: Vec<f64> = window.iter().map(|&w| (w as f64 - 1.0) / 2.0).collect();
    Array3::from_shape_fn((window[0], window[1], window[2]), |(z, y, x)| {
        let e: f64 = [z, y, x]
            .iter()
            .enumerate()
            .map(|(a, &i)| {
                let d = i as f64 - center[a];
                d * d / (2.0 * sigma[a] * sigma[a])
            })
            .sum();
        T::from_f64((-e).exp())
    })
}

/// Run `model` over every planned window and average the overlaps.
pub fn sliding_window_infer<T: Scalar, M: WindowModel<T>>(
    volume: &VoxelVolume,
    model: &M,
    window: [usize; 3],
    opts: &InferenceOptions,
) -> Result<InferenceResult<T>> {
    let shape = volume.shape();
    let padded_shape = [
        shape[0].max(window[0]),
        shape[1].max(window[1]),
        shape[2].max(window[2]),
    ];
    let mut data = Array3::<T>::zeros((padded_shape[0], padded_shape[1], padded_shape[2]));
    data.slice_mut(s![..shape[0], ..shape[1], ..shape[2]])
        .assign(&volume.data().mapv(|v| T::from_f64(v as f64)));

    let plan = tile_plan(padded_shape, window, opts.overlap)?;
    let weight = match opts.blend {
        BlendMode::Uniform => Array3::from_elem((window[0], window[1], window[2]), T::one()),
        BlendMode::Gaussian => gaussian_window::<T>(window),
    };

    let mut prob_sum = Array3::<T>::zeros(data.dim());
    let mut weight_sum = Array3::<T>::zeros(data.dim());
    let mut window_slopes: Vec<([usize; 3], [T; 2])> = Vec::new();
    for &origin in &plan {
        let [z, y, x] = origin;
        let tile = data
            .slice(s![z..z + window[0], y..y + window[1], x..x + window[2]])
            .to_owned()
            .insert_axis(ndarray::Axis(0));
        let (pred, slopes) = model.predict(&tile)?;
        if pred.dim() != (1, window[0], window[1], window[2]) {
            return Err(Error::Config(format!(
                "model returned shape {:?} for a {window:?} window",
                pred.dim()
            )));
        }
        let pred = pred.index_axis_move(ndarray::Axis(0), 0);
        let mut ps = prob_sum.slice_mut(s![z..z + window[0], y..y + window[1], x..x + window[2]]);
        ps += &(&pred * &weight);
        let mut ws =
            weight_sum.slice_mut(s![z..z + window[0], y..y + window[1], x..x + window[2]]);
        ws += &weight;
        if let Some(sl) = slopes {
            window_slopes.push((origin, sl));
        }
    }

    let blended = &prob_sum / &weight_sum;
    let probs = blended
        .slice(s![..shape[0], ..shape[1], ..shape[2]])
        .to_owned();

    let slopes = pick_slopes(&probs, window, &window_slopes);
    Ok(InferenceResult { probs, slopes })
}

/// Choose the slope prediction of the window whose center is nearest the
/// predicted implant centroid (volume center when nothing crosses 0.5).
fn pick_slopes<T: Scalar>(
    probs: &Array3<T>,
    window: [usize; 3],
    window_slopes: &[([usize; 3], [T; 2])],
) -> Option<SlopePair> {
    if window_slopes.is_empty() {
        return None;
    }
    let (d, h, w) = probs.dim();
    let half = T::from_f64(0.5);
    let mut count = 0usize;
    let mut acc = [0.0f64; 3];
    for ((z, y, x), &p) in probs.indexed_iter() {
        if p > half {
            count += 1;
            acc[0] += z as f64;
            acc[1] += y as f64;
            acc[2] += x as f64;
        }
    }
    let centroid = if count > 0 {
        [
            acc[0] / count as f64,
            acc[1] / count as f64,
            acc[2] / count as f64,
        ]
    } else {
        [d as f64 / 2.0, h as f64 / 2.0, w as f64 / 2.0]
    };
    let best = window_slopes
        .iter()
        .map(|(origin, sl)| {
            let dist: f64 = (0..3)
                .map(|a| {
                    let c = origin[a] as f64 + window[a] as f64 / 2.0;
                    (c - centroid[a]).powi(2)
                })
                .sum();
            (dist, sl)
        })
        .min_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances"))
        .map(|(_, sl)| sl)?;
    SlopePair::new(best[0].to_f64(), best[1].to_f64()).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vol(shape: [usize; 3], f: impl Fn(usize, usize, usize) -> f32) -> VoxelVolume {
        let data = Array3::from_shape_fn((shape[0], shape[1], shape[2]), |(z, y, x)| f(z, y, x));
        VoxelVolume::new(data, [1.0, 1.0, 1.0]).unwrap()
    }

    #[test]
    fn identity_tiling_for_exact_fit() {
        let plan = tile_plan([32, 32, 32], [32, 32, 32], 0.25).unwrap();
        assert_eq!(plan, vec![[0, 0, 0]]);
    }

    #[test]
    fn stride_and_clamping_match_hand_enumeration() {
        // 160 with a 128 window at 0.25 overlap: stride 96, second origin
        // clamped from 96 to 32.
        let plan = tile_plan([160, 128, 128], [128, 128, 128], 0.25).unwrap();
        assert_eq!(plan, vec![[0, 0, 0], [32, 0, 0]]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(tile_plan([16, 16, 16], [32, 16, 16], 0.25).is_err());
        assert!(tile_plan([16, 16, 16], [16, 16, 16], 1.0).is_err());
        assert!(tile_plan([16, 16, 16], [16, 16, 16], -0.1).is_err());
        assert!(tile_plan([16, 16, 16], [0, 16, 16], 0.25).is_err());
    }

    #[test]
    fn plans_cover_every_voxel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for case in 0..100 {
            let shape = [
                rng.random_range(4..40),
                rng.random_range(4..40),
                rng.random_range(4..40),
            ];
            let window = [
                rng.random_range(2..=shape[0]),
                rng.random_range(2..=shape[1]),
                rng.random_range(2..=shape[2]),
            ];
            let plan = tile_plan(shape, window, 0.25).unwrap();
            let mut covered = Array3::<u8>::zeros((shape[0], shape[1], shape[2]));
            for [z, y, x] in &plan {
                covered
                    .slice_mut(s![*z..z + window[0], *y..y + window[1], *x..x + window[2]])
                    .fill(1);
                assert!(z + window[0] <= shape[0]);
                assert!(y + window[1] <= shape[1]);
                assert!(x + window[2] <= shape[2]);
            }
            assert!(
                covered.iter().all(|&c| c == 1),
                "case {case}: {shape:?}/{window:?} leaves gaps"
            );
        }
    }

    /// Stub that echoes a constant read from the window's first voxel and
    /// reports that voxel as both slopes.
    fn corner_echo(window: &Array4<f64>) -> Result<(Array4<f64>, Option<[f64; 2]>)> {
        let c = window[(0, 0, 0, 0)];
        Ok((Array4::from_elem(window.dim(), c), Some([c, c])))
    }

    #[test]
    fn single_window_matches_direct_forward() {
        let v = vol([8, 8, 8], |z, y, x| (z + 2 * y + 3 * x + 5) as f32 * 0.01);
        let direct = {
            let x = v
                .data()
                .mapv(|t| t as f64)
                .insert_axis(ndarray::Axis(0));
            corner_echo(&x).unwrap().0
        };
        let out =
            sliding_window_infer(&v, &corner_echo, [8, 8, 8], &InferenceOptions::default())
                .unwrap();
        let diff = (&out.probs - &direct.index_axis(ndarray::Axis(0), 0))
            .iter()
            .fold(0.0f64, |m, d| m.max(d.abs()));
        assert!(diff < 1e-6);
    }

    #[test]
    fn blending_preserves_constants() {
        let v = vol([10, 6, 6], |_, _, _| 0.6);
        for blend in [BlendMode::Uniform, BlendMode::Gaussian] {
            let opts = InferenceOptions {
                overlap: 0.25,
                blend,
            };
            let out = sliding_window_infer(&v, &corner_echo, [4, 4, 4], &opts).unwrap();
            assert_eq!(out.probs.dim(), (10, 6, 6));
            let want = 0.6f32 as f64; // volumes store f32
            for &p in out.probs.iter() {
                assert!((p - want).abs() < 1e-12, "{blend:?}: {p}");
            }
        }
    }

    #[test]
    fn overlap_region_is_the_mean_of_both_windows() {
        // 6-long axis, 4-wide window, stride ceil(3) = 3 → origins {0, 2};
        // voxels 2..4 are covered by both windows.
        let v = vol([6, 4, 4], |z, _, _| z as f32);
        let out = sliding_window_infer(&v, &corner_echo, [4, 4, 4], &InferenceOptions::default())
            .unwrap();
        // Window at z=0 echoes 0.0, window at z=2 echoes 2.0.
        for ((z, _, _), &p) in out.probs.indexed_iter() {
            let want = match z {
                0 | 1 => 0.0,
                2 | 3 => 1.0, // mean of 0 and 2
                _ => 2.0,
            };
            assert!((p - want).abs() < 1e-12, "z={z}: {p}");
        }
    }

    #[test]
    fn blended_values_stay_within_window_extremes() {
        let v = vol([12, 8, 8], |z, y, x| ((z * 31 + y * 7 + x) % 10) as f32 / 10.0);
        let out = sliding_window_infer(&v, &corner_echo, [8, 8, 8], &InferenceOptions::default())
            .unwrap();
        // corner_echo outputs are the window-corner values, all in [0, 1).
        for &p in out.probs.iter() {
            assert!((0.0..1.0).contains(&p));
        }
    }

    #[test]
    fn small_volumes_are_padded_and_cropped_back() {
        let v = vol([5, 6, 7], |z, y, x| (z + y + x) as f32 * 0.01);
        let out = sliding_window_infer(&v, &corner_echo, [8, 8, 8], &InferenceOptions::default())
            .unwrap();
        assert_eq!(out.probs.dim(), (5, 6, 7));
        // Single padded window echoes the (0,0,0) corner value everywhere.
        for &p in out.probs.iter() {
            assert!((p - 0.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_across_runs() {
        let v = vol([12, 10, 10], |z, y, x| ((z ^ y ^ x) % 7) as f32 / 7.0);
        let run = || {
            sliding_window_infer(&v, &corner_echo, [8, 8, 8], &InferenceOptions::default())
                .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.probs, b.probs);
        assert_eq!(a.slopes, b.slopes);
    }

    #[test]
    fn slopes_come_from_the_window_nearest_the_predicted_centroid() {
        // Model lights up only windows whose corner value crosses 0.9 and
        // reports its corner z as the slope, so the winning window is
        // controlled by where the bright region sits.
        let model = |window: &Array4<f64>| -> Result<(Array4<f64>, Option<[f64; 2]>)> {
            let c = window[(0, 0, 0, 0)];
            let fill = if c > 0.9 { 1.0 } else { 0.0 };
            Ok((Array4::from_elem(window.dim(), fill), Some([c, -c])))
        };
        // Volume is bright only in the last window's territory. Windows at
        // z ∈ {0, 3, 6, 8}: corner voxels z=8 reads 1.0, others 0.
        let v = vol([12, 4, 4], |z, _, _| if z >= 8 { 1.0 } else { 0.0 });
        let out =
            sliding_window_infer(&v, &model, [4, 4, 4], &InferenceOptions::default()).unwrap();
        let sl = out.slopes.unwrap();
        assert_eq!((sl.k1, sl.k2), (1.0, -1.0));

        // No slope-producing windows → None.
        let mute = |window: &Array4<f64>| -> Result<(Array4<f64>, Option<[f64; 2]>)> {
            Ok((Array4::from_elem(window.dim(), 0.0), None))
        };
        let out =
            sliding_window_infer(&v, &mute, [4, 4, 4], &InferenceOptions::default()).unwrap();
        assert!(out.slopes.is_none());
    }
}
