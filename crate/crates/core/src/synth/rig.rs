use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{Point3, Similarity3};
use serde::{Deserialize, Serialize};

use super::{SynthError, SynthResult};
use crate::mesh::TriMesh;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub rest_position: Point3<f64>,
    pub parent: Option<usize>,
}

/// Joint hierarchy plus a dense `V × K` row-major blend-weight matrix.
///
/// Each joint also has an anchor vertex set; the anchor centroid locates the
/// joint on any mesh that shares the template topology.
#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    joints: Vec<Joint>,
    weights: Vec<f64>,
    vertex_count: usize,
    anchors: Vec<Vec<usize>>,
}

impl Rig {
    pub fn new(
        joints: Vec<Joint>,
        weights: Vec<f64>,
        vertex_count: usize,
        anchors: Vec<Vec<usize>>,
    ) -> SynthResult<Self> {
        let k = joints.len();
        let bad = |m: String| Err(SynthError::InvalidAsset(m));
        if k == 0 {
            return bad("rig has no joints".into());
        }
        let roots = joints.iter().filter(|j| j.parent.is_none()).count();
        if roots != 1 {
            return bad(format!(
                "rig must have exactly one root joint, found {roots}"
            ));
        }
        for (i, j) in joints.iter().enumerate() {
            if let Some(p) = j.parent {
                if p >= i {
                    return bad(format!("joint {} has parent {p} not preceding it", j.name));
                }
            }
        }
        if weights.len() != vertex_count * k {
            return bad(format!(
                "weight matrix has {} entries, expected {}",
                weights.len(),
                vertex_count * k
            ));
        }
        for (v, row) in weights.chunks(k).enumerate() {
            if row.iter().any(|w| !(0.0..=1.0).contains(w)) {
                return bad(format!("vertex {v} has a weight outside [0, 1]"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return bad(format!("weights of vertex {v} sum to {s}"));
            }
        }
        if anchors.len() != k || anchors.iter().any(|a| a.is_empty()) {
            return bad("every joint needs a non-empty anchor set".into());
        }
        if anchors.iter().flatten().any(|&v| v >= vertex_count) {
            return bad("anchor vertex out of range".into());
        }
        Ok(Self {
            joints,
            weights,
            vertex_count,
            anchors,
        })
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    /// Row-major `V × K`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight_row(&self, v: usize) -> &[f64] {
        let k = self.joints.len();
        &self.weights[v * k..(v + 1) * k]
    }

    pub fn anchors(&self) -> &[Vec<usize>] {
        &self.anchors
    }

    pub fn joint_index(&self, name: &str) -> SynthResult<usize> {
        self.joints
            .iter()
            .position(|j| j.name == name)
            .ok_or_else(|| SynthError::UnknownJoint(name.to_string()))
    }

    /// Indices of `joint` and all of its descendants.
    pub fn subtree(&self, joint: usize) -> Vec<usize> {
        let mut inside = vec![false; self.joints.len()];
        inside[joint] = true;
        for (i, j) in self.joints.iter().enumerate().skip(joint + 1) {
            if let Some(p) = j.parent {
                inside[i] = inside[p];
            }
        }
        (0..self.joints.len()).filter(|&i| inside[i]).collect()
    }

    /// Joint locations on a mesh sharing the template topology (anchor centroids).
    pub fn joint_positions(&self, vertices: &[Point3<f64>]) -> Vec<Point3<f64>> {
        self.anchors
            .iter()
            .map(|a| {
                let sum = a
                    .iter()
                    .fold(nalgebra::Vector3::zeros(), |s, &v| s + vertices[v].coords);
                Point3::from(sum / a.len() as f64)
            })
            .collect()
    }

    /// Compose local transforms down the hierarchy: `G_k = G_parent · L_k`.
    pub fn compose_global(
        &self,
        locals: &[Similarity3<f64>],
    ) -> SynthResult<Vec<Similarity3<f64>>> {
        if locals.len() != self.joints.len() {
            return Err(SynthError::TransformCount {
                expected: self.joints.len(),
                actual: locals.len(),
            });
        }
        let mut globals: Vec<Similarity3<f64>> = Vec::with_capacity(locals.len());
        for (j, local) in self.joints.iter().zip(locals) {
            let g = match j.parent {
                Some(p) => globals[p] * local,
                None => *local,
            };
            globals.push(g);
        }
        Ok(globals)
    }

    /// Linear blend skinning of `rest` under global joint transforms.
    pub fn skin(
        &self,
        rest: &[Point3<f64>],
        globals: &[Similarity3<f64>],
    ) -> SynthResult<Vec<Point3<f64>>> {
        let k = self.joints.len();
        if globals.len() != k {
            return Err(SynthError::TransformCount {
                expected: k,
                actual: globals.len(),
            });
        }
        if rest.len() != self.vertex_count {
            return Err(crate::mesh::MeshError::VertexCountMismatch {
                expected: self.vertex_count,
                actual: rest.len(),
            }
            .into());
        }
        Ok(rest
            .iter()
            .enumerate()
            .map(|(v, p)| {
                // displacement form: identity transforms reproduce `rest` exactly
                let mut acc = nalgebra::Vector3::zeros();
                for (w, g) in self.weight_row(v).iter().zip(globals) {
                    if *w != 0.0 {
                        acc += (g.transform_point(p) - p) * *w;
                    }
                }
                p + acc
            })
            .collect())
    }
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Multi-source Dijkstra over mesh edges with Euclidean edge lengths.
pub(crate) fn geodesic_distances(
    vertices: &[Point3<f64>],
    neighbors: &[Vec<usize>],
    sources: &[usize],
) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; vertices.len()];
    let mut heap = BinaryHeap::new();
    for &s in sources {
        dist[s] = 0.0;
        heap.push(Entry(0.0, s));
    }
    while let Some(Entry(d, v)) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        for &n in &neighbors[v] {
            let nd = d + (vertices[n] - vertices[v]).norm();
            if nd < dist[n] {
                dist[n] = nd;
                heap.push(Entry(nd, n));
            }
        }
    }
    dist
}

/// Compact-support geodesic weights, smoothed by Laplacian passes and normalized per vertex.
pub(crate) fn compute_weights(
    mesh: &TriMesh,
    anchors: &[Vec<usize>],
    support: &[f64],
    smoothing_passes: usize,
) -> Vec<f64> {
    let n = mesh.vertex_count();
    let k = anchors.len();
    let neighbors = mesh.vertex_neighbors();
    let dists: Vec<Vec<f64>> = anchors
        .iter()
        .map(|a| geodesic_distances(mesh.vertices(), &neighbors, a))
        .collect();
    let mut w = vec![0.0; n * k];
    for v in 0..n {
        for j in 0..k {
            let x = dists[j][v] / support[j];
            if x < 1.0 {
                w[v * k + j] = (1.0 - x * x).powi(3);
            }
        }
        if w[v * k..(v + 1) * k].iter().all(|&x| x == 0.0) {
            let nearest = (0..k)
                .min_by(|&a, &b| dists[a][v].total_cmp(&dists[b][v]))
                .expect("at least one joint");
            w[v * k + nearest] = 1.0;
        }
    }
    for _ in 0..smoothing_passes {
        let mut next = w.clone();
        for v in 0..n {
            let nb = &neighbors[v];
            if nb.is_empty() {
                continue;
            }
            for j in 0..k {
                let mean = nb.iter().map(|&u| w[u * k + j]).sum::<f64>() / nb.len() as f64;
                next[v * k + j] = 0.5 * w[v * k + j] + 0.5 * mean;
            }
        }
        w = next;
    }
    for row in w.chunks_mut(k) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
        fix_row_sum(row);
    }
    w
}

// Absorb rounding into the largest entry so the row sums to 1 to the last bit.
fn fix_row_sum(row: &mut [f64]) {
    let rest: f64 = row.iter().sum::<f64>() - 1.0;
    if rest != 0.0 {
        let (imax, _) = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty row");
        row[imax] = (row[imax] - rest).clamp(0.0, 1.0);
    }
}

/// Overwrite joint `j`'s weight column with `column` (values in [0, 1]),
/// rescaling the other joints of each row to share the remainder.
pub(crate) fn prescribe_column(w: &mut [f64], k: usize, j: usize, column: &[f64]) {
    for (row, &c) in w.chunks_mut(k).zip(column) {
        let others: f64 = row
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != j)
            .map(|(_, x)| x)
            .sum();
        for (i, x) in row.iter_mut().enumerate() {
            if i == j {
                *x = c;
            } else if others > 0.0 {
                *x *= (1.0 - c) / others;
            }
        }
        if others == 0.0 {
            row[j] = 1.0;
        }
        fix_row_sum(row);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::icosphere;

    #[test]
    fn dijkstra_matches_edge_path_on_a_line() {
        let verts: Vec<_> = (0..5).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let nb = vec![vec![1], vec![0, 2], vec![1, 3], vec![2, 4], vec![3]];
        assert_eq!(
            geodesic_distances(&verts, &nb, &[0]),
            vec![0.0, 1.0, 2.0, 3.0, 4.0]
        );
        assert_eq!(
            geodesic_distances(&verts, &nb, &[0, 4]),
            vec![0.0, 1.0, 2.0, 1.0, 0.0]
        );
    }

    #[test]
    fn weights_are_partition_of_unity() {
        let s = icosphere(10.0, 2);
        let anchors = vec![vec![0], vec![3], vec![7]];
        let w = compute_weights(&s, &anchors, &[12.0, 12.0, 12.0], 3);
        for row in w.chunks(3) {
            assert!(row.iter().all(|x| (0.0..=1.0).contains(x)));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rig_validation() {
        let j = |name: &str, parent| Joint {
            name: name.into(),
            rest_position: Point3::origin(),
            parent,
        };
        let ok = Rig::new(
            vec![j("a", None), j("b", Some(0))],
            vec![1.0, 0.0, 0.5, 0.5],
            2,
            vec![vec![0], vec![1]],
        );
        assert!(ok.is_ok());
        assert_eq!(ok.unwrap().subtree(1), vec![1]);
        let two_roots = Rig::new(
            vec![j("a", None), j("b", None)],
            vec![1.0, 0.0],
            1,
            vec![vec![0], vec![0]],
        );
        assert!(two_roots.is_err());
        let bad_sum = Rig::new(
            vec![j("a", None), j("b", Some(0))],
            vec![0.7, 0.7],
            1,
            vec![vec![0], vec![0]],
        );
        assert!(bad_sum.is_err());
    }

    #[test]
    fn prescribed_column_keeps_partition_of_unity() {
        let mut w = vec![0.5, 0.5, 0.0, 0.2, 0.3, 0.5, 0.0, 0.0, 1.0];
        prescribe_column(&mut w, 3, 2, &[0.4, 1.0, 0.25]);
        assert_eq!(w[2], 0.4);
        assert!((w[0] - 0.3).abs() < 1e-15);
        assert_eq!(&w[3..6], &[0.0, 0.0, 1.0]);
        assert_eq!(w[8], 1.0);
        for row in w.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }
}
