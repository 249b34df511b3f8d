//! Closed-form implant inclination from labeled voxels.
//!
//! Given the voxel coordinates of an implant, the slope of x against the
//! axial coordinate z (and likewise y against z) is the least-squares line
//! through the point cloud:
//!
//! `k1 = (N·Σxz − Σx·Σz) / (N·Σz² − (Σz)²)`
//!
//! Coordinates are voxel indices; summations run in double precision
//! regardless of the volume precision.

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, SlopePair, VoxelCoord};

/// Collect the coordinates of all set voxels in deterministic `(z, y, x)`
/// scan order.
pub fn implant_coordinates(label: &BinaryMask) -> Result<Vec<VoxelCoord>> {
    let coords: Vec<VoxelCoord> = label
        .data()
        .indexed_iter()
        .filter(|(_, &v)| v == 1)
        .map(|((z, y, x), _)| VoxelCoord::new(z, y, x))
        .collect();
    if coords.is_empty() {
        return Err(Error::EmptyLabel);
    }
    Ok(coords)
}

/// Closed-form slopes of x and y against z over a voxel point cloud.
pub fn compute_slopes(coords: &[VoxelCoord]) -> Result<SlopePair> {
    if coords.len() < 2 {
        return Err(Error::Geometry(format!(
            "slope fit needs at least 2 coordinates, got {}",
            coords.len()
        )));
    }
    let n = coords.len() as f64;
    let mut sx = 0.0f64;
    let mut sy = 0.0f64;
    let mut sz = 0.0f64;
    let mut sxz = 0.0f64;
    let mut syz = 0.0f64;
    let mut szz = 0.0f64;
    for c in coords {
        let x = c.x as f64;
        let y = c.y as f64;
        let z = c.z as f64;
        sx += x;
        sy += y;
        sz += z;
        sxz += x * z;
        syz += y * z;
        szz += z * z;
    }
    let denom = n * szz - sz * sz;
    if denom == 0.0 {
        return Err(Error::Geometry(
            "axial coordinate has zero variance; slope undefined".to_string(),
        ));
    }
    SlopePair::new((n * sxz - sx * sz) / denom, (n * syz - sy * sz) / denom)
}

/// Spacing-aware variant: coordinates are scaled to millimeters before the
/// fit. Ground-truth supervision uses the voxel-index fit; this exists for
/// reporting physical inclinations on anisotropic scans.
pub fn compute_slopes_mm(coords: &[VoxelCoord], spacing: [f32; 3]) -> Result<SlopePair> {
    if coords.len() < 2 {
        return Err(Error::Geometry(format!(
            "slope fit needs at least 2 coordinates, got {}",
            coords.len()
        )));
    }
    let (sz, sy, sx) = (spacing[0] as f64, spacing[1] as f64, spacing[2] as f64);
    let n = coords.len() as f64;
    let mut sum_x = 0.0f64;
    let mut sum_y = 0.0f64;
    let mut sum_z = 0.0f64;
    let mut sum_xz = 0.0f64;
    let mut sum_yz = 0.0f64;
    let mut sum_zz = 0.0f64;
    for c in coords {
        let x = c.x as f64 * sx;
        let y = c.y as f64 * sy;
        let z = c.z as f64 * sz;
        sum_x += x;
        sum_y += y;
        sum_z += z;
        sum_xz += x * z;
        sum_yz += y * z;
        sum_zz += z * z;
    }
    let denom = n * sum_zz - sum_z * sum_z;
    if denom == 0.0 {
        return Err(Error::Geometry(
            "axial coordinate has zero variance; slope undefined".to_string(),
        ));
    }
    SlopePair::new(
        (n * sum_xz - sum_x * sum_z) / denom,
        (n * sum_yz - sum_y * sum_z) / denom,
    )
}

/// Slopes of an implant label: coordinate extraction followed by the fit.
pub fn slopes_from_label(label: &BinaryMask) -> Result<SlopePair> {
    let coords = implant_coordinates(label)?;
    compute_slopes(&coords)
}
