//! Triangle meshes and the geometric queries every other module builds on.
//!
//! All coordinates are millimeters.

mod bvh;
pub mod geometry;
pub(crate) mod intersect;
pub mod io;
mod landmarks;
pub mod primitives;

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{Point3, Vector3};
use thiserror::Error;

pub use bvh::{Aabb, RayHit, SpatialIndex, SurfacePoint};
pub use intersect::{detect_self_intersections, triangles_intersect};
pub use io::{load_mesh, save_mesh, save_mesh_with, MeshFormat, PlyEncoding};
pub use landmarks::{Landmark, LandmarkBinding, LandmarkSet};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("triangle {triangle} references vertex {index} but mesh has {vertex_count} vertices")]
    IndexOutOfRange {
        triangle: usize,
        index: usize,
        vertex_count: usize,
    },
    #[error("triangle {0} is degenerate (repeated vertex index)")]
    DegenerateTriangle(usize),
    #[error("mesh is not closed: {boundary_edges} boundary edges, {non_manifold_edges} non-manifold edges, {inconsistent_edges} inconsistently wound edges")]
    NotClosed {
        boundary_edges: usize,
        non_manifold_edges: usize,
        inconsistent_edges: usize,
    },
    #[error("mesh has no triangles")]
    NoTriangles,
    #[error("polyline needs at least 2 vertices, got {0}")]
    PolylineTooShort(usize),
    #[error("vertex index {index} out of range ({vertex_count} vertices)")]
    VertexOutOfRange { index: usize, vertex_count: usize },
    #[error("vertex count mismatch: expected {expected}, got {actual}")]
    VertexCountMismatch { expected: usize, actual: usize },
    #[error("region label count {labels} does not match vertex count {vertices}")]
    RegionLabelCount { labels: usize, vertices: usize },
    #[error("parse error in {path} at {location}: {message}")]
    Parse {
        path: String,
        location: String,
        message: String,
    },
    #[error("unsupported mesh format: {0}")]
    UnsupportedFormat(String),
    #[error("landmark error: {0}")]
    Landmark(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type MeshResult<T> = Result<T, MeshError>;

/// An indexed triangle mesh.
///
/// Connectivity is reference counted so that the many meshes sharing the
/// template topology do not each carry a copy of the triangle list.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Point3<f64>>,
    triangles: Arc<Vec<[usize; 3]>>,
    region_labels: Option<Vec<u8>>,
    landmarks: Option<LandmarkSet>,
}

impl TriMesh {
    /// Build a mesh, checking index range and degenerate triangles.
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[usize; 3]>) -> MeshResult<Self> {
        Self::with_shared_triangles(vertices, Arc::new(triangles))
    }

    pub fn with_shared_triangles(
        vertices: Vec<Point3<f64>>,
        triangles: Arc<Vec<[usize; 3]>>,
    ) -> MeshResult<Self> {
        let n = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            for &i in tri {
                if i >= n {
                    return Err(MeshError::IndexOutOfRange {
                        triangle: t,
                        index: i,
                        vertex_count: n,
                    });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(MeshError::DegenerateTriangle(t));
            }
        }
        Ok(Self {
            vertices,
            triangles,
            region_labels: None,
            landmarks: None,
        })
    }

    /// Same connectivity and annotations, new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Point3<f64>>) -> MeshResult<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(MeshError::VertexCountMismatch {
                expected: self.vertices.len(),
                actual: vertices.len(),
            });
        }
        Ok(Self {
            vertices,
            triangles: Arc::clone(&self.triangles),
            region_labels: self.region_labels.clone(),
            landmarks: self.landmarks.clone(),
        })
    }

    pub fn with_region_labels(mut self, labels: Vec<u8>) -> MeshResult<Self> {
        if labels.len() != self.vertices.len() {
            return Err(MeshError::RegionLabelCount {
                labels: labels.len(),
                vertices: self.vertices.len(),
            });
        }
        self.region_labels = Some(labels);
        Ok(self)
    }

    pub fn with_landmarks(mut self, landmarks: LandmarkSet) -> MeshResult<Self> {
        landmarks.validate_for(self.vertices.len())?;
        self.landmarks = Some(landmarks);
        Ok(self)
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn shared_triangles(&self) -> Arc<Vec<[usize; 3]>> {
        Arc::clone(&self.triangles)
    }

    pub fn region_labels(&self) -> Option<&[u8]> {
        self.region_labels.as_deref()
    }

    pub fn landmarks(&self) -> Option<&LandmarkSet> {
        self.landmarks.as_ref()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_points(&self, t: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Twice the area-weighted normal of triangle `t` (unnormalized cross product).
    pub fn triangle_cross(&self, t: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangle_points(t);
        (b - a).cross(&(c - a))
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter())
    }

    pub fn centroid(&self) -> Point3<f64> {
        if self.vertices.is_empty() {
            return Point3::origin();
        }
        let sum = self
            .vertices
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Point3::from(sum / self.vertices.len() as f64)
    }

    /// Flattened `[x0, y0, z0, x1, ...]` coordinates.
    pub fn flat_coords(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    pub fn transformed(&self, f: impl Fn(&Point3<f64>) -> Point3<f64>) -> Self {
        let mut out = self.clone();
        for p in &mut out.vertices {
            *p = f(p);
        }
        out
    }

    /// Edge manifoldness and orientation statistics.
    pub fn edge_report(&self) -> EdgeReport {
        // (min, max) -> (count, forward count where a < b)
        let mut edges: HashMap<(usize, usize), (u32, u32)> =
            HashMap::with_capacity(self.triangles.len() * 2);
        for tri in self.triangles.iter() {
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                let e = edges.entry(key).or_insert((0, 0));
                e.0 += 1;
                if a < b {
                    e.1 += 1;
                }
            }
        }
        let mut report = EdgeReport::default();
        for &(count, fwd) in edges.values() {
            match count {
                1 => report.boundary_edges += 1,
                2 => {
                    if fwd != 1 {
                        report.inconsistent_edges += 1;
                    }
                }
                _ => report.non_manifold_edges += 1,
            }
        }
        report.edge_count = edges.len();
        report
    }

    /// Error unless every edge is shared by exactly two oppositely wound triangles.
    pub fn check_closed(&self) -> MeshResult<()> {
        let r = self.edge_report();
        if r.is_closed() {
            Ok(())
        } else {
            Err(MeshError::NotClosed {
                boundary_edges: r.boundary_edges,
                non_manifold_edges: r.non_manifold_edges,
                inconsistent_edges: r.inconsistent_edges,
            })
        }
    }

    /// Vertex adjacency lists (sorted, deduplicated).
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nbrs = vec![Vec::new(); self.vertices.len()];
        for tri in self.triangles.iter() {
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                nbrs[a].push(b);
                nbrs[b].push(a);
            }
        }
        for n in &mut nbrs {
            n.sort_unstable();
            n.dedup();
        }
        nbrs
    }

    /// Triangles incident to each vertex.
    pub fn vertex_triangles(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.vertices.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                out[v].push(t);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeReport {
    pub edge_count: usize,
    pub boundary_edges: usize,
    pub non_manifold_edges: usize,
    pub inconsistent_edges: usize,
}

impl EdgeReport {
    pub fn is_closed(&self) -> bool {
        self.boundary_edges == 0 && self.non_manifold_edges == 0 && self.inconsistent_edges == 0
    }
}

/// Per-vertex unit normals. Vertices with no incident triangle get a zero
/// vector and are listed in `isolated`.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexNormals {
    pub normals: Vec<Vector3<f64>>,
    pub isolated: Vec<usize>,
}

/// Area-weighted vertex normals.
pub fn compute_vertex_normals(mesh: &TriMesh) -> MeshResult<VertexNormals> {
    if mesh.triangle_count() == 0 {
        return Err(MeshError::NoTriangles);
    }
    Ok(vertex_normals_unchecked(mesh.vertices(), mesh.triangles()))
}

pub(crate) fn vertex_normals_unchecked(
    vertices: &[Point3<f64>],
    triangles: &[[usize; 3]],
) -> VertexNormals {
    let mut acc = vec![Vector3::zeros(); vertices.len()];
    let mut touched = vec![false; vertices.len()];
    for tri in triangles {
        let [a, b, c] = *tri;
        // |cross| is twice the area, so the cross product already carries the weight.
        let n = (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a]));
        for &v in tri {
            acc[v] += n;
            touched[v] = true;
        }
    }
    let mut isolated = Vec::new();
    for (i, n) in acc.iter_mut().enumerate() {
        let len = n.norm();
        if !touched[i] || len == 0.0 {
            *n = Vector3::zeros();
            isolated.push(i);
        } else {
            *n /= len;
        }
    }
    VertexNormals {
        normals: acc,
        isolated,
    }
}

/// Volume of a closed mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Volume {
    /// Absolute enclosed volume in mm³.
    pub value: f64,
    /// True when the winding is counter-clockwise seen from outside (positive signed volume).
    pub outward: bool,
}

/// Enclosed volume by summing signed tetrahedra against the origin.
pub fn enclosed_volume(mesh: &TriMesh) -> MeshResult<Volume> {
    mesh.check_closed()?;
    let signed = signed_volume(mesh.vertices(), mesh.triangles());
    Ok(Volume {
        value: signed.abs(),
        outward: signed >= 0.0,
    })
}

pub(crate) fn signed_volume(vertices: &[Point3<f64>], triangles: &[[usize; 3]]) -> f64 {
    // Shift to the centroid to keep the tetrahedra small and the sum well conditioned.
    let origin = if vertices.is_empty() {
        Vector3::zeros()
    } else {
        vertices.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / vertices.len() as f64
    };
    let mut sum = 0.0;
    for tri in triangles {
        let a = vertices[tri[0]].coords - origin;
        let b = vertices[tri[1]].coords - origin;
        let c = vertices[tri[2]].coords - origin;
        sum += a.dot(&b.cross(&c));
    }
    sum / 6.0
}

/// Sum of segment lengths along an ordered vertex chain.
pub fn polyline_length(mesh: &TriMesh, chain: &[usize]) -> MeshResult<f64> {
    polyline_length_of(mesh.vertices(), chain)
}

pub(crate) fn polyline_length_of(vertices: &[Point3<f64>], chain: &[usize]) -> MeshResult<f64> {
    if chain.len() < 2 {
        return Err(MeshError::PolylineTooShort(chain.len()));
    }
    for &i in chain {
        if i >= vertices.len() {
            return Err(MeshError::VertexOutOfRange {
                index: i,
                vertex_count: vertices.len(),
            });
        }
    }
    Ok(chain
        .windows(2)
        .map(|w| (vertices[w[1]] - vertices[w[0]]).norm())
        .sum())
}

/// Build a spatial index for nearest-point and ray queries.
pub fn build_index(mesh: &TriMesh) -> SpatialIndex {
    SpatialIndex::build(mesh)
}

/// Closest point on the indexed surface.
pub fn nearest_surface_point(index: &SpatialIndex, query: &Point3<f64>) -> SurfacePoint {
    index.nearest(query)
}

#[cfg(test)]
mod tests {
    use super::primitives::{icosphere, unit_cube};
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{Rotation3, Unit};
    use proptest::prelude::*;

    #[test]
    fn cube_corner_normals_are_diagonal() {
        let cube = unit_cube();
        let n = compute_vertex_normals(&cube).unwrap();
        assert!(n.isolated.is_empty());
        let s = 1.0 / 3f64.sqrt();
        for (p, nv) in cube.vertices().iter().zip(&n.normals) {
            let expected = Vector3::new(
                if p.x > 0.5 { s } else { -s },
                if p.y > 0.5 { s } else { -s },
                if p.z > 0.5 { s } else { -s },
            );
            assert_abs_diff_eq!(nv, &expected, epsilon = 1e-12);
            assert_abs_diff_eq!(nv.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_triangle_normals_point_up() {
        let m = TriMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let n = compute_vertex_normals(&m).unwrap();
        for v in &n.normals {
            assert_eq!(*v, Vector3::new(0.0, 0.0, 1.0));
        }
    }

    #[test]
    fn isolated_vertex_is_flagged() {
        let m = TriMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(5.0, 5.0, 5.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let n = compute_vertex_normals(&m).unwrap();
        assert_eq!(n.isolated, vec![3]);
        assert_eq!(n.normals[3], Vector3::zeros());
        let empty = TriMesh::new(vec![Point3::origin()], vec![]).unwrap();
        assert!(matches!(
            compute_vertex_normals(&empty),
            Err(MeshError::NoTriangles)
        ));
    }

    #[test]
    fn icosphere_normals_are_radial() {
        let s = icosphere(10.0, 3);
        let n = compute_vertex_normals(&s).unwrap();
        let max_angle = s
            .vertices()
            .iter()
            .zip(&n.normals)
            .map(|(p, nv)| p.coords.normalize().dot(nv).clamp(-1.0, 1.0).acos())
            .fold(0.0, f64::max);
        assert!(max_angle < 1f64.to_radians(), "max angle {max_angle}");
    }

    #[test]
    fn cube_volume_and_open_cube_error() {
        let cube = unit_cube();
        let v = enclosed_volume(&cube).unwrap();
        assert_abs_diff_eq!(v.value, 1.0, epsilon = 1e-12);
        assert!(v.outward);

        // drop the two triangles of one face
        let tris: Vec<_> = cube.triangles()[2..].to_vec();
        let open = TriMesh::new(cube.vertices().to_vec(), tris).unwrap();
        match enclosed_volume(&open) {
            Err(MeshError::NotClosed { boundary_edges, .. }) => assert_eq!(boundary_edges, 4),
            other => panic!("expected NotClosed, got {other:?}"),
        }
    }

    #[test]
    fn icosphere_volume_matches_analytic() {
        let s = icosphere(10.0, 4);
        let v = enclosed_volume(&s).unwrap().value;
        let analytic = 4.0 / 3.0 * std::f64::consts::PI * 1000.0;
        assert!((v - analytic).abs() / analytic < 0.01, "{v} vs {analytic}");
    }

    #[test]
    fn polyline_lengths() {
        let m = TriMesh::new(
            vec![Point3::new(0.0, 0.0, 0.0), Point3::new(3.0, 4.0, 0.0)],
            vec![],
        )
        .unwrap();
        assert_abs_diff_eq!(polyline_length(&m, &[0, 1]).unwrap(), 5.0);
        assert!(matches!(
            polyline_length(&m, &[0]),
            Err(MeshError::PolylineTooShort(1))
        ));
        assert!(polyline_length(&m, &[0, 7]).is_err());

        let hex: Vec<_> = (0..6)
            .map(|k| {
                let a = k as f64 * std::f64::consts::PI / 3.0;
                Point3::new(a.cos(), a.sin(), 0.0)
            })
            .collect();
        let hm = TriMesh::new(hex, vec![]).unwrap();
        assert_abs_diff_eq!(
            polyline_length(&hm, &[0, 1, 2, 3, 4, 5, 0]).unwrap(),
            6.0,
            epsilon = 1e-12
        );

        // 100 points on a radius-10 semicircle
        let arc: Vec<_> = (0..100)
            .map(|k| {
                let a = k as f64 / 99.0 * std::f64::consts::PI;
                Point3::new(10.0 * a.cos(), 10.0 * a.sin(), 0.0)
            })
            .collect();
        let am = TriMesh::new(arc, vec![]).unwrap();
        let len = polyline_length(&am, &(0..100).collect::<Vec<_>>()).unwrap();
        assert!((len - 10.0 * std::f64::consts::PI).abs() / (10.0 * std::f64::consts::PI) < 0.005);
    }

    #[test]
    fn invalid_triangles_rejected() {
        let pts = vec![Point3::origin(); 3];
        assert!(matches!(
            TriMesh::new(pts.clone(), vec![[0, 1, 3]]),
            Err(MeshError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            TriMesh::new(pts, vec![[0, 1, 1]]),
            Err(MeshError::DegenerateTriangle(0))
        ));
    }

    fn arb_rotation() -> impl Strategy<Value = Rotation3<f64>> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -3.0f64..3.0)
            .prop_filter("non-zero axis", |(x, y, z, _)| x * x + y * y + z * z > 1e-3)
            .prop_map(|(x, y, z, a)| {
                Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(x, y, z)), a)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn volume_rigid_invariant_and_cubic_in_scale(
            rot in arb_rotation(),
            t in prop::array::uniform3(-50.0f64..50.0),
            s in 0.2f64..5.0,
        ) {
            let sphere = icosphere(7.0, 2);
            let base = enclosed_volume(&sphere).unwrap().value;
            let tv = Vector3::from(t);
            let moved = sphere.transformed(|p| rot * p + tv);
            let vm = enclosed_volume(&moved).unwrap().value;
            prop_assert!((vm - base).abs() / base < 1e-9);
            let scaled = sphere.transformed(|p| Point3::from(p.coords * s));
            let vs = enclosed_volume(&scaled).unwrap().value;
            prop_assert!((vs - base * s * s * s).abs() / (base * s * s * s) < 1e-9);
        }

        #[test]
        fn normals_rotate_with_mesh(rot in arb_rotation()) {
            let sphere = icosphere(3.0, 2);
            let n0 = compute_vertex_normals(&sphere).unwrap();
            let n1 = compute_vertex_normals(&sphere.transformed(|p| rot * p)).unwrap();
            for (a, b) in n0.normals.iter().zip(&n1.normals) {
                prop_assert!((rot * a - b).norm() < 1e-9);
            }
        }
    }
}
