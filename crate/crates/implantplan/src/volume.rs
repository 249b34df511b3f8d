//! Core volume and coordinate data model.
//!
//! Volumes are dense 3-D scalar grids indexed `(z, y, x)` with `z` the axial
//! slice. All types here are immutable after construction and safe to share
//! across concurrent readers.
//!
//! On-disk format: a flat little-endian binary payload at `<path>` plus a
//! sidecar text header at `<path>.meta` carrying shape, spacing and dtype.
//! Landmark files are plain text, one implant per line, nine integers:
//! `vz vy vx mz my mx bz by bx` (vertex, midpoint, base in `(z, y, x)`).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};
use ndarray::Array3;

use crate::error::{Error, Result};

/// Voxel index in `(z, y, x)` order, `z` being the axial slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VoxelCoord {
    pub z: usize,
    pub y: usize,
    pub x: usize,
}

impl VoxelCoord {
    pub fn new(z: usize, y: usize, x: usize) -> Self {
        Self { z, y, x }
    }

    pub fn within(&self, shape: [usize; 3]) -> bool {
        self.z < shape[0] && self.y < shape[1] && self.x < shape[2]
    }
}

fn check_shape(shape: [usize; 3]) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::Config(format!(
            "volume shape must be >= 1 per axis, got {shape:?}"
        )));
    }
    Ok(())
}

fn check_crop(origin: [usize; 3], size: [usize; 3], shape: [usize; 3]) -> Result<()> {
    check_shape(size)?;
    for axis in 0..3 {
        if origin[axis] + size[axis] > shape[axis] {
            return Err(Error::OutOfBounds {
                origin,
                size,
                shape,
            });
        }
    }
    Ok(())
}

/// Dense 3-D scalar volume with voxel spacing metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelVolume {
    data: Array3<f32>,
    spacing: [f32; 3],
}

impl VoxelVolume {
    /// Wrap an array, validating shape and spacing invariants.
    pub fn new(data: Array3<f32>, spacing: [f32; 3]) -> Result<Self> {
        let (d, h, w) = data.dim();
        check_shape([d, h, w])?;
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Config(format!(
                "voxel spacing must be positive and finite, got {spacing:?}"
            )));
        }
        Ok(Self { data, spacing })
    }

    pub fn zeros(shape: [usize; 3], spacing: [f32; 3]) -> Result<Self> {
        Self::new(Array3::zeros((shape[0], shape[1], shape[2])), spacing)
    }

    pub fn shape(&self) -> [usize; 3] {
        let (d, h, w) = self.data.dim();
        [d, h, w]
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn get(&self, c: VoxelCoord) -> f32 {
        self.data[(c.z, c.y, c.x)]
    }

    /// Copy out an axis-aligned sub-volume. Pure: `self` is unmodified.
    pub fn crop(&self, origin: [usize; 3], size: [usize; 3]) -> Result<VoxelVolume> {
        check_crop(origin, size, self.shape())?;
        let view = self.data.slice(ndarray::s![
            origin[0]..origin[0] + size[0],
            origin[1]..origin[1] + size[1],
            origin[2]..origin[2] + size[2]
        ]);
        Ok(VoxelVolume {
            data: view.to_owned(),
            spacing: self.spacing,
        })
    }

    /// Write payload at `path` and text header at `<path>.meta`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let slice = self.data.as_slice().expect("volume data is contiguous");
        let mut bytes = vec![0u8; slice.len() * 4];
        LittleEndian::write_f32_into(slice, &mut bytes);
        write_payload_and_meta(path, &bytes, self.shape(), self.spacing, "f32")
    }

    pub fn load(path: &Path) -> Result<VoxelVolume> {
        let raw = RawVolume::load(path)?;
        if raw.dtype != "f32" {
            return Err(Error::format(
                path,
                format!("expected dtype f32, found {}", raw.dtype),
            ));
        }
        let mut values = vec![0f32; raw.len()];
        LittleEndian::read_f32_into(&raw.bytes, &mut values);
        let data = Array3::from_shape_vec((raw.shape[0], raw.shape[1], raw.shape[2]), values)
            .expect("shape/payload consistency checked on load");
        VoxelVolume::new(data, raw.spacing)
    }
}

/// Dense 3-D mask over `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    data: Array3<u8>,
}

impl BinaryMask {
    /// Wrap an array, rejecting any element outside `{0, 1}`.
    pub fn new(data: Array3<u8>) -> Result<Self> {
        let (d, h, w) = data.dim();
        check_shape([d, h, w])?;
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Config(
                "mask elements must be 0 or 1".to_string(),
            ));
        }
        Ok(Self { data })
    }

    pub fn zeros(shape: [usize; 3]) -> Result<Self> {
        check_shape(shape)?;
        Ok(Self {
            data: Array3::zeros((shape[0], shape[1], shape[2])),
        })
    }

    /// Build from a predicate over `(z, y, x)`.
    pub fn from_fn(
        shape: [usize; 3],
        mut f: impl FnMut(usize, usize, usize) -> bool,
    ) -> Result<Self> {
        check_shape(shape)?;
        Ok(Self {
            data: Array3::from_shape_fn((shape[0], shape[1], shape[2]), |(z, y, x)| {
                u8::from(f(z, y, x))
            }),
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        let (d, h, w) = self.data.dim();
        [d, h, w]
    }

    pub fn data(&self) -> &Array3<u8> {
        &self.data
    }

    pub fn get(&self, c: VoxelCoord) -> bool {
        self.data[(c.z, c.y, c.x)] == 1
    }

    /// Number of set voxels.
    pub fn popcount(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn crop(&self, origin: [usize; 3], size: [usize; 3]) -> Result<BinaryMask> {
        check_crop(origin, size, self.shape())?;
        let view = self.data.slice(ndarray::s![
            origin[0]..origin[0] + size[0],
            origin[1]..origin[1] + size[1],
            origin[2]..origin[2] + size[2]
        ]);
        Ok(BinaryMask {
            data: view.to_owned(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.data.as_slice().expect("mask data is contiguous");
        write_payload_and_meta(path, bytes, self.shape(), [1.0, 1.0, 1.0], "u8")
    }

    pub fn load(path: &Path) -> Result<BinaryMask> {
        let raw = RawVolume::load(path)?;
        if raw.dtype != "u8" {
            return Err(Error::format(
                path,
                format!("expected dtype u8, found {}", raw.dtype),
            ));
        }
        let data = Array3::from_shape_vec((raw.shape[0], raw.shape[1], raw.shape[2]), raw.bytes)
            .expect("shape/payload consistency checked on load");
        BinaryMask::new(data)
    }
}

/// Implant annotation: vertex, midpoint and base along the implant axis.
///
/// The midpoint is stored for completeness but label generation only uses
/// vertex and base.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LandmarkTriple {
    pub vertex: VoxelCoord,
    pub midpoint: VoxelCoord,
    pub base: VoxelCoord,
}

impl LandmarkTriple {
    /// Vertex and base must sit on distinct axial slices.
    pub fn new(vertex: VoxelCoord, midpoint: VoxelCoord, base: VoxelCoord) -> Result<Self> {
        if vertex.z == base.z {
            return Err(Error::Geometry(format!(
                "vertex and base share axial slice z={}",
                vertex.z
            )));
        }
        Ok(Self {
            vertex,
            midpoint,
            base,
        })
    }

    pub fn check_within(&self, shape: [usize; 3]) -> Result<()> {
        for (name, c) in [
            ("vertex", self.vertex),
            ("midpoint", self.midpoint),
            ("base", self.base),
        ] {
            if !c.within(shape) {
                return Err(Error::Geometry(format!(
                    "{name} {c:?} outside volume shape {shape:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Implant inclination: slopes of x and y against the axial coordinate z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopePair {
    pub k1: f64,
    pub k2: f64,
}

impl SlopePair {
    pub fn new(k1: f64, k2: f64) -> Result<Self> {
        if !k1.is_finite() || !k2.is_finite() {
            return Err(Error::Geometry(format!(
                "slopes must be finite, got ({k1}, {k2})"
            )));
        }
        Ok(Self { k1, k2 })
    }
}

/// Read landmark records: one implant per line, nine whitespace-separated
/// integers, `#` starts a comment.
pub fn load_landmarks(path: &Path) -> Result<Vec<LandmarkTriple>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<usize> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>().map_err(|_| {
                    Error::format(
                        path,
                        format!("line {}: expected integer, got {t:?}", lineno + 1),
                    )
                })
            })
            .collect::<Result<_>>()?;
        if fields.len() != 9 {
            return Err(Error::format(
                path,
                format!(
                    "line {}: expected 9 coordinates (vz vy vx mz my mx bz by bx), got {}",
                    lineno + 1,
                    fields.len()
                ),
            ));
        }
        let triple = LandmarkTriple::new(
            VoxelCoord::new(fields[0], fields[1], fields[2]),
            VoxelCoord::new(fields[3], fields[4], fields[5]),
            VoxelCoord::new(fields[6], fields[7], fields[8]),
        )?;
        out.push(triple);
    }
    if out.is_empty() {
        return Err(Error::format(path, "no landmark records"));
    }
    Ok(out)
}

pub fn save_landmarks(path: &Path, landmarks: &[LandmarkTriple]) -> Result<()> {
    let mut file = BufWriter::new(fs::File::create(path)?);
    for lm in landmarks {
        writeln!(
            file,
            "{} {} {} {} {} {} {} {} {}",
            lm.vertex.z,
            lm.vertex.y,
            lm.vertex.x,
            lm.midpoint.z,
            lm.midpoint.y,
            lm.midpoint.x,
            lm.base.z,
            lm.base.y,
            lm.base.x
        )?;
    }
    Ok(())
}

fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn write_payload_and_meta(
    path: &Path,
    bytes: &[u8],
    shape: [usize; 3],
    spacing: [f32; 3],
    dtype: &str,
) -> Result<()> {
    fs::write(path, bytes)?;
    let meta = format!(
        "shape {} {} {}\nspacing {} {} {}\ndtype {}\n",
        shape[0], shape[1], shape[2], spacing[0], spacing[1], spacing[2], dtype
    );
    fs::write(meta_path(path), meta)?;
    Ok(())
}

struct RawVolume {
    shape: [usize; 3],
    spacing: [f32; 3],
    dtype: String,
    bytes: Vec<u8>,
}

impl RawVolume {
    fn len(&self) -> usize {
        self.shape[0] * self.shape[1] * self.shape[2]
    }

    fn load(path: &Path) -> Result<RawVolume> {
        let meta = meta_path(path);
        let text = fs::read_to_string(&meta)
            .map_err(|e| Error::format(&meta, format!("cannot read header: {e}")))?;
        let mut shape = None;
        let mut spacing = None;
        let mut dtype = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let rest: Vec<&str> = parts.collect();
            match key {
                "shape" => {
                    let dims: Vec<usize> = rest
                        .iter()
                        .map(|t| {
                            t.parse()
                                .map_err(|_| Error::format(&meta, format!("bad shape value {t:?}")))
                        })
                        .collect::<Result<_>>()?;
                    if dims.len() != 3 {
                        return Err(Error::format(&meta, "shape needs 3 values"));
                    }
                    shape = Some([dims[0], dims[1], dims[2]]);
                }
                "spacing" => {
                    let sp: Vec<f32> = rest
                        .iter()
                        .map(|t| {
                            t.parse().map_err(|_| {
                                Error::format(&meta, format!("bad spacing value {t:?}"))
                            })
                        })
                        .collect::<Result<_>>()?;
                    if sp.len() != 3 {
                        return Err(Error::format(&meta, "spacing needs 3 values"));
                    }
                    spacing = Some([sp[0], sp[1], sp[2]]);
                }
                "dtype" => {
                    dtype = rest.first().map(|s| s.to_string());
                }
                other => {
                    return Err(Error::format(&meta, format!("unknown header key {other:?}")));
                }
            }
        }
        let shape = shape.ok_or_else(|| Error::format(&meta, "missing shape"))?;
        let spacing = spacing.ok_or_else(|| Error::format(&meta, "missing spacing"))?;
        let dtype = dtype.ok_or_else(|| Error::format(&meta, "missing dtype"))?;
        let elem = match dtype.as_str() {
            "f32" => 4,
            "u8" => 1,
            other => {
                return Err(Error::format(&meta, format!("unsupported dtype {other:?}")));
            }
        };
        check_shape(shape).map_err(|_| Error::format(&meta, format!("bad shape {shape:?}")))?;
        let bytes = fs::read(path)?;
        let expected = shape[0] * shape[1] * shape[2] * elem;
        if bytes.len() != expected {
            return Err(Error::format(
                path,
                format!(
                    "payload is {} bytes but header shape {:?} ({dtype}) needs {}",
                    bytes.len(),
                    shape,
                    expected
                ),
            ));
        }
        Ok(RawVolume {
            shape,
            spacing,
            dtype,
            bytes,
        })
    }
}
