//! Labeled voxel volumes to triangle meshes, plus scan-side landmark snapping.
//!
//! Volume files are a JSON header `<name>.volhdr.json` next to a raw
//! little-endian voxel file `<name>.vol.raw` (x fastest, then y, then z):
//!
//! ```json
//! { "dims": [64, 64, 64], "spacing": [1.0, 1.0, 1.0], "origin": [0.0, 0.0, 0.0], "dtype": "uint8" }
//! ```
//!
//! An optional `"data_file"` entry names the raw file explicitly (relative to the header).

mod marching_cubes;
mod tables;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{Landmark, LandmarkBinding, LandmarkSet, MeshError, SpatialIndex, TriMesh};

pub use marching_cubes::{extract_isosurface, ExtractOptions, Isosurface};

/// Landmarks farther than this from the scan surface are rejected.
pub const DEFAULT_SNAP_TOLERANCE_MM: f64 = 10.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("voxel array has {actual} entries, dims imply {expected}")]
    VoxelCount { expected: usize, actual: usize },
    #[error("spacing components must be positive, got {0:?}")]
    BadSpacing([f64; 3]),
    #[error("label {0} does not occur in the volume")]
    LabelAbsent(i64),
    #[error("isosurface at level {iso} is empty (label {label} vanished after smoothing?)")]
    EmptySurface { label: i64, iso: f64 },
    #[error("landmark {name} is {distance:.3} mm from the surface (tolerance {tolerance} mm): {name} out of tolerance")]
    LandmarkOutOfTolerance {
        name: Landmark,
        distance: f64,
        tolerance: f64,
    },
    #[error("scan landmarks must be point-bound")]
    LandmarksNotPointBound,
    #[error("volume header {path}: {message}")]
    Header { path: String, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

pub type IngestResult<T> = Result<T, IngestError>;

/// Dense labeled voxel grid. Voxel `(i, j, k)` sits at `origin + (i·sx, j·sy, k·sz)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: Point3<f64>,
    voxels: Vec<i64>,
}

impl LabelVolume {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: Point3<f64>,
        voxels: Vec<i64>,
    ) -> IngestResult<Self> {
        let expected = dims[0] * dims[1] * dims[2];
        if voxels.len() != expected {
            return Err(IngestError::VoxelCount {
                expected,
                actual: voxels.len(),
            });
        }
        if spacing.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(IngestError::BadSpacing(spacing));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            voxels,
        })
    }

    /// Fill by evaluating `label_at(world_position)` at every voxel center.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: Point3<f64>,
        label_at: impl Fn(&Point3<f64>) -> i64,
    ) -> IngestResult<Self> {
        let mut voxels = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let p = origin
                        + Vector3::new(
                            i as f64 * spacing[0],
                            j as f64 * spacing[1],
                            k as f64 * spacing[2],
                        );
                    voxels.push(label_at(&p));
                }
            }
        }
        Self::new(dims, spacing, origin, voxels)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> Point3<f64> {
        self.origin
    }

    pub fn voxels(&self) -> &[i64] {
        &self.voxels
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> i64 {
        self.voxels[self.index(i, j, k)]
    }

    pub fn world(&self, i: usize, j: usize, k: usize) -> Point3<f64> {
        self.origin
            + Vector3::new(
                i as f64 * self.spacing[0],
                j as f64 * self.spacing[1],
                k as f64 * self.spacing[2],
            )
    }

    pub fn count_label(&self, label: i64) -> usize {
        self.voxels.iter().filter(|&&v| v == label).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoxelType {
    Uint8,
    Int8,
    Uint16,
    Int16,
    Uint32,
    Int32,
}

impl VoxelType {
    fn size(self) -> usize {
        match self {
            VoxelType::Uint8 | VoxelType::Int8 => 1,
            VoxelType::Uint16 | VoxelType::Int16 => 2,
            VoxelType::Uint32 | VoxelType::Int32 => 4,
        }
    }

    fn decode(self, b: &[u8]) -> i64 {
        match self {
            VoxelType::Uint8 => b[0] as i64,
            VoxelType::Int8 => b[0] as i8 as i64,
            VoxelType::Uint16 => u16::from_le_bytes([b[0], b[1]]) as i64,
            VoxelType::Int16 => i16::from_le_bytes([b[0], b[1]]) as i64,
            VoxelType::Uint32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as i64,
            VoxelType::Int32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as i64,
        }
    }

    fn encode(self, v: i64, out: &mut Vec<u8>) {
        match self {
            VoxelType::Uint8 => out.push(v as u8),
            VoxelType::Int8 => out.push(v as i8 as u8),
            VoxelType::Uint16 => out.extend_from_slice(&(v as u16).to_le_bytes()),
            VoxelType::Int16 => out.extend_from_slice(&(v as i16).to_le_bytes()),
            VoxelType::Uint32 => out.extend_from_slice(&(v as u32).to_le_bytes()),
            VoxelType::Int32 => out.extend_from_slice(&(v as i32).to_le_bytes()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub dtype: VoxelType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_file: Option<String>,
}

fn raw_path_for(header_path: &Path, header: &VolumeHeader) -> PathBuf {
    let dir = header_path.parent().unwrap_or(Path::new("."));
    if let Some(f) = &header.data_file {
        return dir.join(f);
    }
    let file = header_path
        .file_name()
        .and_then(|f| f.to_str())
        .unwrap_or("volume.volhdr.json");
    let stem = file.strip_suffix(".volhdr.json").unwrap_or(file);
    dir.join(format!("{stem}.vol.raw"))
}

pub fn load_volume(header_path: &Path) -> IngestResult<LabelVolume> {
    let hp = header_path.display().to_string();
    let text = std::fs::read_to_string(header_path).map_err(|source| IngestError::Io {
        path: hp.clone(),
        source,
    })?;
    let header: VolumeHeader = serde_json::from_str(&text).map_err(|e| IngestError::Header {
        path: hp.clone(),
        message: e.to_string(),
    })?;
    let raw_path = raw_path_for(header_path, &header);
    let raw = std::fs::read(&raw_path).map_err(|source| IngestError::Io {
        path: raw_path.display().to_string(),
        source,
    })?;
    let n = header.dims.iter().product::<usize>();
    let sz = header.dtype.size();
    if raw.len() != n * sz {
        return Err(IngestError::Header {
            path: hp,
            message: format!(
                "raw file has {} bytes, expected {} ({} voxels of {} bytes)",
                raw.len(),
                n * sz,
                n,
                sz
            ),
        });
    }
    let voxels = raw
        .chunks_exact(sz)
        .map(|c| header.dtype.decode(c))
        .collect();
    LabelVolume::new(
        header.dims,
        header.spacing,
        Point3::from(header.origin),
        voxels,
    )
}

/// Write `<dir>/<name>.volhdr.json` and `<dir>/<name>.vol.raw`; returns the header path.
pub fn save_volume(
    volume: &LabelVolume,
    dir: &Path,
    name: &str,
    dtype: VoxelType,
) -> IngestResult<PathBuf> {
    let header = VolumeHeader {
        dims: volume.dims,
        spacing: volume.spacing,
        origin: [volume.origin.x, volume.origin.y, volume.origin.z],
        dtype,
        data_file: None,
    };
    let hp = dir.join(format!("{name}.volhdr.json"));
    let rp = dir.join(format!("{name}.vol.raw"));
    let mut raw = Vec::with_capacity(volume.voxels.len() * dtype.size());
    for &v in &volume.voxels {
        dtype.encode(v, &mut raw);
    }
    let io = |path: &Path| {
        let p = path.display().to_string();
        move |source| IngestError::Io { path: p, source }
    };
    std::fs::write(
        &hp,
        serde_json::to_string_pretty(&header).expect("header serializes"),
    )
    .map_err(io(&hp))?;
    std::fs::write(&rp, raw).map_err(io(&rp))?;
    Ok(hp)
}

/// Snap distances recorded while attaching scan landmarks.
pub type SnapReport = BTreeMap<Landmark, f64>;

/// Snap point-bound landmarks onto the scan surface and attach them to the mesh.
pub fn attach_scan_landmarks(
    mesh: &TriMesh,
    landmarks: &LandmarkSet,
    tolerance_mm: f64,
) -> IngestResult<(TriMesh, SnapReport)> {
    if !landmarks.is_point_bound() {
        return Err(IngestError::LandmarksNotPointBound);
    }
    if mesh.triangle_count() == 0 {
        return Err(MeshError::NoTriangles.into());
    }
    let index = SpatialIndex::build(mesh);
    let mut snapped = Vec::new();
    let mut report = SnapReport::new();
    for (name, binding) in landmarks.iter() {
        let LandmarkBinding::Point(p) = binding else {
            unreachable!("checked point-bound above")
        };
        let sp = index.nearest(p);
        if sp.distance > tolerance_mm {
            return Err(IngestError::LandmarkOutOfTolerance {
                name,
                distance: sp.distance,
                tolerance: tolerance_mm,
            });
        }
        report.insert(name, sp.distance);
        snapped.push((name, sp.point));
    }
    let out = mesh
        .clone()
        .with_landmarks(LandmarkSet::point_bound(snapped))?;
    Ok((out, report))
}
