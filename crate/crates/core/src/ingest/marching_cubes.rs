use std::collections::HashMap;

use nalgebra::Point3;
use rayon::prelude::*;

use super::tables::{CORNER_OFFSETS, EDGE_CORNERS, TRI_TABLE};
use super::{IngestError, IngestResult, LabelVolume};
use crate::mesh::TriMesh;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractOptions {
    pub iso: f64,
    /// One pass of 6-neighbor box averaging on the indicator field before extraction.
    pub smooth: bool,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            iso: 0.5,
            smooth: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Isosurface {
    pub mesh: TriMesh,
    /// The label touches the volume boundary, so the mesh is open there.
    pub touches_boundary: bool,
}

/// Global id of the grid edge leaving lattice point `(i, j, k)` along `axis`.
type EdgeKey = u64;

fn indicator_field(volume: &LabelVolume, label: i64, smooth: bool) -> Vec<f64> {
    let raw: Vec<f64> = volume
        .voxels()
        .iter()
        .map(|&v| if v == label { 1.0 } else { 0.0 })
        .collect();
    if !smooth {
        return raw;
    }
    let [nx, ny, nz] = volume.dims();
    let mut out = vec![0.0; raw.len()];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = volume.index(i, j, k);
                let mut s = raw[idx];
                // out-of-volume neighbors count as background
                if i > 0 {
                    s += raw[idx - 1];
                }
                if i + 1 < nx {
                    s += raw[idx + 1];
                }
                if j > 0 {
                    s += raw[idx - nx];
                }
                if j + 1 < ny {
                    s += raw[idx + nx];
                }
                if k > 0 {
                    s += raw[idx - nx * ny];
                }
                if k + 1 < nz {
                    s += raw[idx + nx * ny];
                }
                out[idx] = s / 7.0;
            }
        }
    }
    out
}

/// Marching cubes over the indicator field of `label`, cells spanning adjacent voxel centers.
///
/// Slabs along z are processed in parallel; vertices are keyed by grid edge and
/// numbered in slab order, so output does not depend on the thread count.
pub fn extract_isosurface(
    volume: &LabelVolume,
    label: i64,
    options: ExtractOptions,
) -> IngestResult<Isosurface> {
    if volume.count_label(label) == 0 {
        return Err(IngestError::LabelAbsent(label));
    }
    let [nx, ny, nz] = volume.dims();
    let touches_boundary = (0..nz).any(|k| {
        (0..ny).any(|j| {
            (0..nx).any(|i| {
                (i == 0 || j == 0 || k == 0 || i + 1 == nx || j + 1 == ny || k + 1 == nz)
                    && volume.get(i, j, k) == label
            })
        })
    });
    if touches_boundary {
        log::warn!("label {label} touches the volume boundary; extracted mesh will be open");
    }
    let field = indicator_field(volume, label, options.smooth);
    let iso = options.iso;
    let edge_key = |i: usize, j: usize, k: usize, axis: usize| -> EdgeKey {
        ((((k * ny + j) * nx + i) * 3) + axis) as EdgeKey
    };

    let slabs: Vec<(Vec<[EdgeKey; 3]>, Vec<(EdgeKey, Point3<f64>)>)> = (0..nz.saturating_sub(1))
        .into_par_iter()
        .map(|k| {
            let mut tris = Vec::new();
            let mut points = Vec::new();
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    let mut values = [0.0; 8];
                    let mut case = 0usize;
                    for (c, off) in CORNER_OFFSETS.iter().enumerate() {
                        let v = field[volume.index(i + off[0], j + off[1], k + off[2])];
                        values[c] = v;
                        if v < iso {
                            case |= 1 << c;
                        }
                    }
                    if case == 0 || case == 255 {
                        continue;
                    }
                    let row = &TRI_TABLE[case];
                    let mut keys = [0 as EdgeKey; 12];
                    let mut have = [false; 12];
                    for t in row.chunks(3) {
                        if t[0] < 0 {
                            break;
                        }
                        let mut tri = [0 as EdgeKey; 3];
                        for (slot, &e) in tri.iter_mut().zip(t) {
                            let e = e as usize;
                            if !have[e] {
                                let [c0, c1] = EDGE_CORNERS[e];
                                // orient from the lower lattice point so shared edges interpolate identically
                                let (lo, hi) = if CORNER_OFFSETS[c0] <= CORNER_OFFSETS[c1] {
                                    (c0, c1)
                                } else {
                                    (c1, c0)
                                };
                                let ol = CORNER_OFFSETS[lo];
                                let oh = CORNER_OFFSETS[hi];
                                let axis = (0..3).find(|&a| ol[a] != oh[a]).unwrap();
                                let key = edge_key(i + ol[0], j + ol[1], k + ol[2], axis);
                                let pl = volume.world(i + ol[0], j + ol[1], k + ol[2]);
                                let ph = volume.world(i + oh[0], j + oh[1], k + oh[2]);
                                let (vl, vh) = (values[lo], values[hi]);
                                let t = ((iso - vl) / (vh - vl)).clamp(0.0, 1.0);
                                points.push((key, pl + (ph - pl) * t));
                                keys[e] = key;
                                have[e] = true;
                            }
                            *slot = keys[e];
                        }
                        tris.push(tri);
                    }
                }
            }
            (tris, points)
        })
        .collect();

    let mut ids: HashMap<EdgeKey, usize> = HashMap::new();
    let mut positions: HashMap<EdgeKey, Point3<f64>> = HashMap::new();
    for (_, pts) in &slabs {
        for (key, p) in pts {
            positions.entry(*key).or_insert(*p);
        }
    }
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (tris, _) in &slabs {
        for tri in tris {
            let mut out = [0usize; 3];
            for (o, key) in out.iter_mut().zip(tri) {
                *o = *ids.entry(*key).or_insert_with(|| {
                    vertices.push(positions[key]);
                    vertices.len() - 1
                });
            }
            triangles.push(out);
        }
    }
    if triangles.is_empty() {
        return Err(IngestError::EmptySurface { label, iso });
    }
    let mesh = TriMesh::new(vertices, triangles)?;
    Ok(Isosurface {
        mesh,
        touches_boundary,
    })
}
