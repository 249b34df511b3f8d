//! Cylindrical implant labels from landmarks, and implant masking.
//!
//! A label is built by sweeping a fixed-radius disk along the implant axis
//! across axial slices; masking replaces the labeled region of a volume with
//! a constant fill so post-implantation scans can be used for training
//! without registration. During training the mask is translated by a random
//! per-axis offset so the network cannot key on the fill boundary.

use ndarray::Array3;
use rand::Rng;

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, LandmarkTriple, VoxelVolume};

/// Settings for implant masking and its training-time jitter.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskingConfig {
    /// Disk radius in voxels.
    pub radius: f64,
    /// Intensity written inside the masked region.
    pub fill_value: f32,
    /// Maximum absolute translation per axis for training-time jitter.
    pub max_offset: i64,
    /// Seed for the jitter stream.
    pub rng_seed: u64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self {
            radius: 14.0,
            fill_value: 0.0,
            max_offset: 5,
            rng_seed: 0,
        }
    }
}

impl MaskingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius >= 1.0) {
            return Err(Error::Config(format!(
                "masking radius must be >= 1, got {}",
                self.radius
            )));
        }
        if self.max_offset < 0 {
            return Err(Error::Config(format!(
                "max_offset must be >= 0, got {}",
                self.max_offset
            )));
        }
        Ok(())
    }
}

/// Rasterize the cylindrical implant label.
///
/// For every axial slice between the vertex and base slices inclusive, voxels
/// whose in-plane Euclidean distance to the axis center (linearly
/// interpolated between vertex and base) is `<= radius` are set.
pub fn rasterize_implant(
    landmarks: &LandmarkTriple,
    shape: [usize; 3],
    radius: f64,
) -> Result<BinaryMask> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::Config(format!(
            "rasterization radius must be positive, got {radius}"
        )));
    }
    landmarks.check_within(shape)?;
    let v = landmarks.vertex;
    let b = landmarks.base;
    if v.z == b.z {
        return Err(Error::Geometry(
            "implant axis has zero axial extent".to_string(),
        ));
    }

    let z0 = v.z.min(b.z);
    let z1 = v.z.max(b.z);
    let mut data = Array3::<u8>::zeros((shape[0], shape[1], shape[2]));
    let r2 = radius * radius;
    for z in z0..=z1 {
        let (cy, cx) = axis_center(landmarks, z);
        // Only scan the bounding box of the disk.
        let y_lo = ((cy - radius).floor().max(0.0)) as usize;
        let y_hi = ((cy + radius).ceil() as usize).min(shape[1] - 1);
        let x_lo = ((cx - radius).floor().max(0.0)) as usize;
        let x_hi = ((cx + radius).ceil() as usize).min(shape[2] - 1);
        for y in y_lo..=y_hi {
            let dy = y as f64 - cy;
            for x in x_lo..=x_hi {
                let dx = x as f64 - cx;
                if dy * dy + dx * dx <= r2 {
                    data[(z, y, x)] = 1;
                }
            }
        }
    }
    BinaryMask::new(data)
}

/// In-plane axis center at slice `z`, linearly interpolated between vertex
/// and base. Keeps tilted implants contiguous across slices.
pub fn axis_center(landmarks: &LandmarkTriple, z: usize) -> (f64, f64) {
    let v = landmarks.vertex;
    let b = landmarks.base;
    let t = (z as f64 - v.z as f64) / (b.z as f64 - v.z as f64);
    let cy = v.y as f64 + t * (b.y as f64 - v.y as f64);
    let cx = v.x as f64 + t * (b.x as f64 - v.x as f64);
    (cy, cx)
}

/// Replace the masked region of `volume` with `config.fill_value`.
pub fn mask_implant(
    volume: &VoxelVolume,
    implant_mask: &BinaryMask,
    config: &MaskingConfig,
) -> Result<VoxelVolume> {
    if volume.shape() != implant_mask.shape() {
        return Err(Error::ShapeMismatch {
            left: volume.shape(),
            right: implant_mask.shape(),
        });
    }
    let mut data = volume.data().clone();
    ndarray::Zip::from(&mut data)
        .and(implant_mask.data())
        .for_each(|v, &m| {
            if m == 1 {
                *v = config.fill_value;
            }
        });
    VoxelVolume::new(data, volume.spacing())
}

/// Translate a mask by an integer offset `(dz, dy, dx)`; voxels shifted
/// outside the bounds are dropped.
pub fn translate_mask(mask: &BinaryMask, offset: [i64; 3]) -> BinaryMask {
    let shape = mask.shape();
    let mut data = Array3::<u8>::zeros((shape[0], shape[1], shape[2]));
    for ((z, y, x), &v) in mask.data().indexed_iter() {
        if v == 0 {
            continue;
        }
        let tz = z as i64 + offset[0];
        let ty = y as i64 + offset[1];
        let tx = x as i64 + offset[2];
        if tz >= 0
            && ty >= 0
            && tx >= 0
            && (tz as usize) < shape[0]
            && (ty as usize) < shape[1]
            && (tx as usize) < shape[2]
        {
            data[(tz as usize, ty as usize, tx as usize)] = 1;
        }
    }
    BinaryMask::new(data).expect("translated mask stays binary")
}

/// Translate the mask by a uniform random offset in
/// `[-max_offset, +max_offset]` per axis, drawn from `rng`.
pub fn jitter_mask(
    implant_mask: &BinaryMask,
    config: &MaskingConfig,
    rng: &mut impl Rng,
) -> BinaryMask {
    if config.max_offset == 0 {
        return implant_mask.clone();
    }
    let m = config.max_offset;
    let offset = [
        rng.random_range(-m..=m),
        rng.random_range(-m..=m),
        rng.random_range(-m..=m),
    ];
    translate_mask(implant_mask, offset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::VoxelCoord;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn triple(v: [usize; 3], b: [usize; 3]) -> LandmarkTriple {
        let mid = [(v[0] + b[0]) / 2, (v[1] + b[1]) / 2, (v[2] + b[2]) / 2];
        LandmarkTriple::new(
            VoxelCoord::new(v[0], v[1], v[2]),
            VoxelCoord::new(mid[0], mid[1], mid[2]),
            VoxelCoord::new(b[0], b[1], b[2]),
        )
        .unwrap()
    }

    /// Reference rasterizer: test every voxel in the volume against the
    /// distance predicate, with no bounding-box shortcuts.
    fn rasterize_exhaustive(lm: &LandmarkTriple, shape: [usize; 3], radius: f64) -> BinaryMask {
        let z0 = lm.vertex.z.min(lm.base.z);
        let z1 = lm.vertex.z.max(lm.base.z);
        BinaryMask::from_fn(shape, |z, y, x| {
            if z < z0 || z > z1 {
                return false;
            }
            let (cy, cx) = axis_center(lm, z);
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            dy * dy + dx * dx <= radius * radius
        })
        .unwrap()
    }

    #[test]
    fn vertical_cylinder_voxel_count() {
        // Radius-2 disk on an integer center covers 13 voxels; 9 slices
        // between z=2 and z=10 inclusive give 117 total.
        let lm = triple([2, 8, 8], [10, 8, 8]);
        let label = rasterize_implant(&lm, [16, 16, 16], 2.0).unwrap();
        assert_eq!(label.popcount(), 117);
        for z in 2..=10 {
            let slice = label.crop([z, 0, 0], [1, 16, 16]).unwrap();
            assert_eq!(slice.popcount(), 13, "slice z={z}");
        }
        assert!(label.get(VoxelCoord::new(2, 8, 8)));
        assert!(label.get(VoxelCoord::new(6, 10, 8)));
        assert!(!label.get(VoxelCoord::new(6, 10, 9)));
        assert!(!label.get(VoxelCoord::new(1, 8, 8)));
        assert!(!label.get(VoxelCoord::new(11, 8, 8)));
    }

    #[test]
    fn rasterizer_matches_exhaustive_reference() {
        let cases = [
            (triple([2, 3, 4], [9, 10, 12]), [16, 16, 16], 2.5),
            (triple([10, 8, 8], [2, 8, 8]), [16, 16, 16], 2.0), // base above vertex
            (triple([0, 1, 1], [5, 14, 2]), [8, 16, 16], 3.2),  // clipped at borders
            (triple([1, 6, 6], [3, 6, 6]), [6, 13, 13], 5.9),   // disk wider than arm
        ];
        for (lm, shape, radius) in cases {
            let fast = rasterize_implant(&lm, shape, radius).unwrap();
            let slow = rasterize_exhaustive(&lm, shape, radius);
            assert_eq!(fast, slow, "landmarks {lm:?} radius {radius}");
        }
    }

    #[test]
    fn rasterizer_rejects_bad_inputs() {
        let lm = triple([2, 8, 8], [10, 8, 8]);
        assert!(rasterize_implant(&lm, [16, 16, 16], 0.0).is_err());
        assert!(rasterize_implant(&lm, [16, 16, 16], f64::NAN).is_err());
        assert!(rasterize_implant(&lm, [8, 16, 16], 2.0).is_err()); // base outside
    }

    #[test]
    fn masking_fills_label_region_only() {
        let lm = triple([2, 8, 8], [10, 8, 8]);
        let shape = [16, 16, 16];
        let label = rasterize_implant(&lm, shape, 2.0).unwrap();
        let vol = VoxelVolume::new(
            ndarray::Array3::from_elem((16, 16, 16), 0.75),
            [0.2, 0.2, 0.2],
        )
        .unwrap();
        let config = MaskingConfig {
            fill_value: -1.0,
            ..MaskingConfig::default()
        };
        let masked = mask_implant(&vol, &label, &config).unwrap();
        for ((z, y, x), &m) in label.data().indexed_iter() {
            let got = masked.get(VoxelCoord::new(z, y, x));
            let want = if m == 1 { -1.0 } else { 0.75 };
            assert_eq!(got, want);
        }
    }

    #[test]
    fn masking_rejects_shape_mismatch() {
        let lm = triple([2, 8, 8], [10, 8, 8]);
        let label = rasterize_implant(&lm, [16, 16, 16], 2.0).unwrap();
        let vol = VoxelVolume::zeros([8, 16, 16], [1.0; 3]).unwrap();
        assert!(mask_implant(&vol, &label, &MaskingConfig::default()).is_err());
    }

    #[test]
    fn translation_moves_and_clips() {
        let mask = BinaryMask::from_fn([4, 4, 4], |z, y, x| z == 1 && y == 1 && x == 1).unwrap();
        let moved = translate_mask(&mask, [1, 2, 0]);
        assert_eq!(moved.popcount(), 1);
        assert!(moved.get(VoxelCoord::new(2, 3, 1)));

        // Shifted past the border: the voxel is dropped.
        let gone = translate_mask(&mask, [0, 3, 0]);
        assert_eq!(gone.popcount(), 0);

        // Identity offset.
        assert_eq!(translate_mask(&mask, [0, 0, 0]), mask);
    }

    #[test]
    fn jitter_is_a_bounded_translation() {
        let lm = triple([2, 8, 8], [10, 8, 8]);
        let label = rasterize_implant(&lm, [16, 16, 16], 2.0).unwrap();
        let config = MaskingConfig {
            max_offset: 3,
            ..MaskingConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let jittered = jitter_mask(&label, &config, &mut rng);
            let m = config.max_offset;
            let mut explained = false;
            'search: for dz in -m..=m {
                for dy in -m..=m {
                    for dx in -m..=m {
                        if translate_mask(&label, [dz, dy, dx]) == jittered {
                            explained = true;
                            break 'search;
                        }
                    }
                }
            }
            assert!(explained, "jitter is not a translation within max_offset");
        }
    }

    #[test]
    fn jitter_is_seeded_and_zero_offset_is_identity() {
        let lm = triple([2, 8, 8], [10, 8, 8]);
        let label = rasterize_implant(&lm, [16, 16, 16], 2.0).unwrap();
        let config = MaskingConfig::default();

        let a = jitter_mask(&label, &config, &mut ChaCha8Rng::seed_from_u64(9));
        let b = jitter_mask(&label, &config, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);

        let frozen = MaskingConfig {
            max_offset: 0,
            ..config
        };
        let same = jitter_mask(&label, &frozen, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(same, label);
    }

    #[test]
    fn config_validation() {
        assert!(MaskingConfig::default().validate().is_ok());
        let bad_radius = MaskingConfig {
            radius: 0.5,
            ..MaskingConfig::default()
        };
        assert!(bad_radius.validate().is_err());
        let bad_offset = MaskingConfig {
            max_offset: -1,
            ..MaskingConfig::default()
        };
        assert!(bad_offset.validate().is_err());
    }
}
