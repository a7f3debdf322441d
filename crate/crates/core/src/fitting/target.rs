use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FitError, FitResult};
use crate::mesh::{vertex_normals_unchecked, Landmark, LandmarkSet, SpatialIndex, TriMesh};

/// A scan prepared for fitting: mesh, index, normals and the sample points of
/// the scan→model term.
#[derive(Debug, Clone)]
pub struct ScanTarget {
    mesh: TriMesh,
    index: SpatialIndex,
    face_normals: Vec<Vector3<f64>>,
    samples: Vec<Point3<f64>>,
    sample_normals: Vec<Vector3<f64>>,
    landmarks: BTreeMap<Landmark, Point3<f64>>,
}

impl ScanTarget {
    /// `landmarks` overrides any landmarks stored on the mesh; either may be point or vertex bound.
    pub fn new(mesh: TriMesh, landmarks: Option<&LandmarkSet>) -> FitResult<Self> {
        if mesh.vertex_count() == 0 || mesh.triangle_count() == 0 {
            return Err(FitError::EmptyScan);
        }
        let landmarks = landmarks
            .or(mesh.landmarks())
            .map(|l| l.positions(mesh.vertices()))
            .unwrap_or_default();
        let index = SpatialIndex::build(&mesh);
        let face_normals = (0..mesh.triangle_count())
            .map(|t| {
                mesh.triangle_cross(t)
                    .try_normalize(0.0)
                    .unwrap_or_else(Vector3::zeros)
            })
            .collect();
        let samples = mesh.vertices().to_vec();
        let sample_normals = vertex_normals_unchecked(mesh.vertices(), mesh.triangles()).normals;
        Ok(Self {
            mesh,
            index,
            face_normals,
            samples,
            sample_normals,
            landmarks,
        })
    }

    /// Replace the scan→model sample points by `n` area-uniform surface samples.
    pub fn resampled(mut self, n: usize, seed: u64) -> Self {
        let tris = self.mesh.triangles();
        let mut cumulative = Vec::with_capacity(tris.len());
        let mut total = 0.0;
        for t in 0..tris.len() {
            total += 0.5 * self.mesh.triangle_cross(t).norm();
            cumulative.push(total);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut samples = Vec::with_capacity(n);
        let mut normals = Vec::with_capacity(n);
        for _ in 0..n {
            let x = rng.gen::<f64>() * total;
            let t = cumulative.partition_point(|&c| c < x).min(tris.len() - 1);
            let (mut u, mut v): (f64, f64) = (rng.gen(), rng.gen());
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            let [a, b, c] = self.mesh.triangle_points(t);
            samples.push(a + (b - a) * u + (c - a) * v);
            normals.push(self.face_normals[t]);
        }
        self.samples = samples;
        self.sample_normals = normals;
        self
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn index(&self) -> &SpatialIndex {
        &self.index
    }

    pub fn landmarks(&self) -> &BTreeMap<Landmark, Point3<f64>> {
        &self.landmarks
    }

    pub(crate) fn face_normal(&self, t: usize) -> Vector3<f64> {
        self.face_normals[t]
    }

    pub(crate) fn samples(&self) -> &[Point3<f64>] {
        &self.samples
    }

    pub(crate) fn sample_normals(&self) -> &[Vector3<f64>] {
        &self.sample_normals
    }
}
