//! Synthetic jaw phantoms for desk-scale fixtures.
//!
//! Each phantom is a normalized-intensity volume holding a bone plateau, a
//! parabolic arc of bright tooth cylinders, and — in place of one tooth — an
//! implant cylinder with known landmarks and tilt. The implant voxels are
//! painted from the exact label returned to the caller, so masking a phantom
//! with its own label always removes the implant completely.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::labelgen::rasterize_implant;
use crate::volume::{BinaryMask, LandmarkTriple, SlopePair, VoxelCoord, VoxelVolume};

/// Normalized intensities. Chosen far apart so masking is visually obvious
/// and thresholds in tests have slack.
pub const AIR: f32 = 0.0;
pub const BONE: f32 = 0.3;
pub const TOOTH: f32 = 0.8;
pub const IMPLANT: f32 = 1.0;

/// Geometry knobs beyond the required arguments.
#[derive(Debug, Clone)]
pub struct PhantomOptions {
    /// Implant cylinder radius in voxels (also the label radius).
    pub implant_radius: f64,
    /// Nominal tooth cylinder radius in voxels.
    pub tooth_radius: f64,
    /// Voxel spacing recorded on the generated volume.
    pub spacing: [f32; 3],
}

impl Default for PhantomOptions {
    fn default() -> Self {
        Self {
            implant_radius: 4.0,
            tooth_radius: 3.0,
            spacing: [1.0, 1.0, 1.0],
        }
    }
}

/// A generated fixture: the scan, its implant landmarks, and the
/// ground-truth cylindrical label.
pub struct Phantom {
    pub volume: VoxelVolume,
    pub landmarks: LandmarkTriple,
    pub label: BinaryMask,
}

/// Uniform tilt sample covering a configurable clinical range.
pub fn sample_tilt(rng: &mut impl Rng, lo: f64, hi: f64) -> SlopePair {
    SlopePair {
        k1: rng.random_range(lo..=hi),
        k2: rng.random_range(lo..=hi),
    }
}

/// Generate a phantom with default geometry options.
pub fn generate_phantom(
    seed: u64,
    shape: [usize; 3],
    n_teeth: usize,
    gap_index: usize,
    tilt: SlopePair,
) -> Result<Phantom> {
    generate_phantom_with(seed, shape, n_teeth, gap_index, tilt, &PhantomOptions::default())
}

pub fn generate_phantom_with(
    seed: u64,
    shape: [usize; 3],
    n_teeth: usize,
    gap_index: usize,
    tilt: SlopePair,
    opts: &PhantomOptions,
) -> Result<Phantom> {
    if shape.iter().any(|&d| d < 32) {
        return Err(Error::Geometry(format!(
            "phantom shape {shape:?} must be at least 32 per axis"
        )));
    }
    if n_teeth == 0 || gap_index >= n_teeth {
        return Err(Error::Geometry(format!(
            "gap index {gap_index} outside tooth row of {n_teeth}"
        )));
    }
    if !(opts.implant_radius > 0.0) || !(opts.tooth_radius > 0.0) {
        return Err(Error::Geometry("radii must be positive".to_string()));
    }
    let [d, h, w] = shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Axial layout: bone plateau below `z_bone`, crowns reaching `z_crown`,
    // implant rooted deeper than the teeth.
    let z_bone = d * 7 / 16;
    let z_crown = z_bone + d / 4;
    let z_root = z_bone.saturating_sub(2);
    let z_lo = z_bone - d / 8;
    let z_hi = z_crown - 1;

    // Tooth centers on a parabolic arc in the (y, x) plane.
    let margin = w as f64 / 6.0;
    let y0 = h as f64 / 3.0;
    let bend = (h as f64 / 4.0) / ((w as f64 / 2.0 - margin).powi(2));
    let arc = |t: usize| -> (f64, f64) {
        let x = if n_teeth == 1 {
            w as f64 / 2.0
        } else {
            margin + t as f64 * (w as f64 - 2.0 * margin) / (n_teeth - 1) as f64
        };
        let y = y0 + bend * (x - w as f64 / 2.0).powi(2);
        (y, x)
    };

    // Implant axis through the gap position: x(z) = cx + k1·(z − z_mid).
    let (cy, cx) = arc(gap_index);
    let z_mid = (z_lo + z_hi) as f64 / 2.0;
    let axis = |z: f64| -> (f64, f64) {
        (cy + tilt.k2 * (z - z_mid), cx + tilt.k1 * (z - z_mid))
    };
    let r = opts.implant_radius;
    for z in [z_lo, z_hi] {
        let (ay, ax) = axis(z as f64);
        if ay - r < 1.0 || ay + r > (h - 2) as f64 || ax - r < 1.0 || ax + r > (w - 2) as f64 {
            return Err(Error::Geometry(format!(
                "implant at z={z} (center {ay:.1},{ax:.1}, radius {r}) leaves the volume"
            )));
        }
    }

    let round_coord = |z: usize| -> Result<VoxelCoord> {
        let (ay, ax) = axis(z as f64);
        Ok(VoxelCoord::new(z, ay.round() as usize, ax.round() as usize))
    };
    let landmarks = LandmarkTriple::new(
        round_coord(z_lo)?,
        round_coord((z_lo + z_hi) / 2)?,
        round_coord(z_hi)?,
    )?;
    landmarks.check_within(shape)?;
    let label = rasterize_implant(&landmarks, shape, r)?;

    let mut data = ndarray::Array3::<f32>::from_elem((d, h, w), AIR);
    data.slice_mut(ndarray::s![..z_bone, .., ..]).fill(BONE);

    for t in 0..n_teeth {
        if t == gap_index {
            continue;
        }
        let (ty, tx) = arc(t);
        let ty = ty + rng.random_range(-0.75..0.75);
        let tx = tx + rng.random_range(-0.75..0.75);
        let tr = opts.tooth_radius * rng.random_range(0.9..1.1);
        // Teeth are scenery, not supervision targets: clamp jittered centers
        // back into the volume rather than failing near the minimum size.
        if 1.0 + tr > (h - 2) as f64 - tr || 1.0 + tr > (w - 2) as f64 - tr {
            return Err(Error::Geometry(format!(
                "tooth radius {tr:.1} cannot fit inside shape {shape:?}"
            )));
        }
        let ty = ty.clamp(1.0 + tr, (h - 2) as f64 - tr);
        let tx = tx.clamp(1.0 + tr, (w - 2) as f64 - tr);
        let r2 = tr * tr;
        for z in z_root..z_crown {
            for y in (ty - tr).floor() as usize..=(ty + tr).ceil() as usize {
                for x in (tx - tr).floor() as usize..=(tx + tr).ceil() as usize {
                    let dy = y as f64 - ty;
                    let dx = x as f64 - tx;
                    if dy * dy + dx * dx <= r2 {
                        data[(z, y, x)] = TOOTH;
                    }
                }
            }
        }
    }

    // Paint the implant from the exact label so label and volume agree.
    for ((z, y, x), &m) in label.data().indexed_iter() {
        if m == 1 {
            data[(z, y, x)] = IMPLANT;
        }
    }

    Ok(Phantom {
        volume: VoxelVolume::new(data, opts.spacing)?,
        landmarks,
        label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labelgen::{mask_implant, MaskingConfig};
    use crate::slope::slopes_from_label;

    fn flat() -> SlopePair {
        SlopePair { k1: 0.0, k2: 0.0 }
    }

    #[test]
    fn zero_tilt_label_recovers_zero_slopes_exactly() {
        let p = generate_phantom(0, [64, 64, 64], 5, 2, flat()).unwrap();
        let s = slopes_from_label(&p.label).unwrap();
        assert!(s.k1.abs() < 1e-9 && s.k2.abs() < 1e-9, "{s:?}");
    }

    #[test]
    fn tilt_is_recovered_within_quantization_bounds() {
        let tilt = SlopePair { k1: 0.3, k2: 0.0 };
        let p = generate_phantom(1, [64, 64, 64], 5, 2, tilt).unwrap();
        let s = slopes_from_label(&p.label).unwrap();
        assert!((s.k1 - 0.3).abs() <= 0.05, "k1 {}", s.k1);
        assert!(s.k2.abs() <= 0.05, "k2 {}", s.k2);

        let tilt = SlopePair { k1: 0.15, k2: 0.35 };
        let p = generate_phantom(2, [64, 64, 64], 4, 1, tilt).unwrap();
        let s = slopes_from_label(&p.label).unwrap();
        assert!((s.k1 - 0.15).abs() <= 0.05 && (s.k2 - 0.35).abs() <= 0.05, "{s:?}");
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_phantom(7, [64, 48, 56], 6, 3, flat()).unwrap();
        let b = generate_phantom(7, [64, 48, 56], 6, 3, flat()).unwrap();
        assert_eq!(a.volume.data(), b.volume.data());
        assert_eq!(a.label.data(), b.label.data());
        assert_eq!(a.landmarks, b.landmarks);
    }

    #[test]
    fn different_seeds_move_the_teeth_but_not_the_implant() {
        let a = generate_phantom(1, [64, 64, 64], 5, 2, flat()).unwrap();
        let b = generate_phantom(2, [64, 64, 64], 5, 2, flat()).unwrap();
        assert_ne!(a.volume.data(), b.volume.data());
        assert_eq!(a.label.data(), b.label.data());
        assert_eq!(a.landmarks, b.landmarks);
    }

    #[test]
    fn label_stays_strictly_inside_the_volume() {
        let tilt = SlopePair { k1: 0.4, k2: 0.4 };
        let p = generate_phantom(3, [64, 64, 64], 5, 0, tilt).unwrap();
        let [d, h, w] = [64, 64, 64];
        let mut any = false;
        for ((z, y, x), &m) in p.label.data().indexed_iter() {
            if m == 1 {
                any = true;
                assert!(z > 0 && z < d - 1);
                assert!(y > 0 && y < h - 1);
                assert!(x > 0 && x < w - 1);
            }
        }
        assert!(any);
    }

    #[test]
    fn volume_uses_exactly_the_four_intensities() {
        let p = generate_phantom(4, [64, 64, 64], 5, 2, flat()).unwrap();
        for &v in p.volume.data().iter() {
            assert!(
                v == AIR || v == BONE || v == TOOTH || v == IMPLANT,
                "unexpected intensity {v}"
            );
        }
        // All four actually occur.
        for want in [AIR, BONE, TOOTH, IMPLANT] {
            assert!(p.volume.data().iter().any(|&v| v == want), "missing {want}");
        }
    }

    #[test]
    fn implant_voxels_equal_label_voxels() {
        let p = generate_phantom(5, [64, 64, 64], 5, 2, flat()).unwrap();
        for ((z, y, x), &v) in p.volume.data().indexed_iter() {
            assert_eq!(v == IMPLANT, p.label.data()[(z, y, x)] == 1);
        }
    }

    #[test]
    fn masking_with_own_label_removes_implant_intensities() {
        let p = generate_phantom(6, [64, 64, 64], 5, 2, flat()).unwrap();
        let config = MaskingConfig::default();
        let masked = mask_implant(&p.volume, &p.label, &config).unwrap();
        for ((z, y, x), &m) in p.label.data().indexed_iter() {
            if m == 1 {
                assert!(masked.data()[(z, y, x)] <= BONE);
            }
        }
    }

    #[test]
    fn rejects_impossible_geometry() {
        assert!(generate_phantom(0, [16, 64, 64], 5, 2, flat()).is_err());
        assert!(generate_phantom(0, [64, 64, 64], 5, 5, flat()).is_err());
        assert!(generate_phantom(0, [64, 64, 64], 0, 0, flat()).is_err());
        // A wild tilt walks the implant out the side.
        let steep = SlopePair { k1: 5.0, k2: 0.0 };
        assert!(generate_phantom(0, [64, 64, 64], 5, 2, steep).is_err());
    }

    #[test]
    fn tilt_sampler_respects_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let t = sample_tilt(&mut rng, 0.0, 0.4);
            assert!((0.0..=0.4).contains(&t.k1));
            assert!((0.0..=0.4).contains(&t.k2));
        }
    }
}
