use nalgebra::Point3;
use rayon::prelude::*;

use crate::mesh::{SpatialIndex, TriMesh};

/// Per-vertex distances are clipped here when exported for colour maps (mm).
pub const DISTANCE_CLIP_MM: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceDistance {
    /// Mean of the two directed mean distances.
    pub mean: f64,
    /// Largest distance in either direction.
    pub max: f64,
    /// Each fitted vertex's distance to the scan surface (unclipped).
    pub per_vertex: Vec<f64>,
}

fn directed(from: &[Point3<f64>], to: &SpatialIndex) -> Vec<f64> {
    from.par_iter().map(|p| to.nearest(p).distance).collect()
}

fn mean_of(d: &[f64]) -> f64 {
    d.iter().sum::<f64>() / d.len() as f64
}

/// Symmetric mean surface distance between two indexed meshes, the `mean` of
/// [`mesh_to_scan_distance`] without rebuilding either index.
pub fn symmetric_mean_distance(a: &SpatialIndex, b: &SpatialIndex) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::NAN;
    }
    0.5 * (mean_of(&directed(a.vertices(), b)) + mean_of(&directed(b.vertices(), a)))
}

/// Symmetric mean surface distance between a fitted mesh and a scan.
pub fn mesh_to_scan_distance(fitted: &TriMesh, scan: &TriMesh) -> SurfaceDistance {
    if fitted.triangle_count() == 0 || scan.triangle_count() == 0 {
        return SurfaceDistance {
            mean: f64::NAN,
            max: f64::NAN,
            per_vertex: vec![f64::NAN; fitted.vertex_count()],
        };
    }
    let a = directed(fitted.vertices(), &SpatialIndex::build(scan));
    let b = directed(scan.vertices(), &SpatialIndex::build(fitted));
    let max = a.iter().chain(&b).cloned().fold(0.0, f64::max);
    SurfaceDistance {
        mean: 0.5 * (mean_of(&a) + mean_of(&b)),
        max,
        per_vertex: a,
    }
}
