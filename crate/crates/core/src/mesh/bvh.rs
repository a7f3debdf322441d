//! Bounding-volume hierarchy over mesh triangles.

use std::sync::Arc;

use nalgebra::{Point3, Vector3};

use super::geometry::{closest_point_on_triangle, ray_triangle};
use super::TriMesh;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Point3::from(Vector3::repeat(f64::INFINITY)),
            max: Point3::from(Vector3::repeat(f64::NEG_INFINITY)),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3<f64>>) -> Self {
        let mut b = Self::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Point3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] <= other.max[k] && other.min[k] <= self.max[k])
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }

    pub fn dist_sq(&self, p: &Point3<f64>) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let v = if p[k] < self.min[k] {
                self.min[k] - p[k]
            } else if p[k] > self.max[k] {
                p[k] - self.max[k]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }

    fn ray_entry(&self, origin: &Point3<f64>, inv_dir: &Vector3<f64>) -> Option<f64> {
        let mut tmin = 0.0f64;
        let mut tmax = f64::INFINITY;
        for k in 0..3 {
            if inv_dir[k].is_infinite() {
                // parallel to this slab: inside or never
                if origin[k] < self.min[k] || origin[k] > self.max[k] {
                    return None;
                }
                continue;
            }
            let t1 = (self.min[k] - origin[k]) * inv_dir[k];
            let t2 = (self.max[k] - origin[k]) * inv_dir[k];
            tmin = tmin.max(t1.min(t2));
            tmax = tmax.min(t1.max(t2));
        }
        (tmin <= tmax).then_some(tmin)
    }
}

/// Closest point on a surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub point: Point3<f64>,
    pub triangle: usize,
    pub distance: f64,
    pub barycentric: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub t: f64,
    pub point: Point3<f64>,
    pub triangle: usize,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        bounds: Aabb,
        start: usize,
        count: usize,
    },
    Inner {
        bounds: Aabb,
        left: usize,
        right: usize,
    },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

/// Median-split BVH. Owns a copy of the vertex positions so it can outlive the mesh.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    vertices: Vec<Point3<f64>>,
    triangles: Arc<Vec<[usize; 3]>>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl SpatialIndex {
    pub fn build(mesh: &TriMesh) -> Self {
        let vertices = mesh.vertices().to_vec();
        let triangles = mesh.shared_triangles();
        let boxes: Vec<Aabb> = triangles
            .iter()
            .map(|t| Aabb::from_points(t.iter().map(|&i| &vertices[i])))
            .collect();
        let centroids: Vec<Point3<f64>> = boxes
            .iter()
            .map(|b| Point3::from((b.min.coords + b.max.coords) * 0.5))
            .collect();
        let mut order: Vec<usize> = (0..triangles.len()).collect();
        let mut nodes = Vec::with_capacity(2 * triangles.len() / LEAF_SIZE + 1);
        if !order.is_empty() {
            let n = order.len();
            build_node(&mut nodes, &mut order, 0, n, &boxes, &centroids);
        }
        Self {
            vertices,
            triangles,
            order,
            nodes,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle_bounds(&self, t: usize) -> Aabb {
        Aabb::from_points(self.triangles[t].iter().map(|&i| &self.vertices[i]))
    }

    /// Closest surface point. Panics on an empty index.
    pub fn nearest(&self, query: &Point3<f64>) -> SurfacePoint {
        self.nearest_within_sq(query, f64::INFINITY)
            .expect("nearest() on an empty spatial index")
    }

    /// Closest surface point whose squared distance is below `max_dist_sq`.
    pub fn nearest_within_sq(&self, query: &Point3<f64>, max_dist_sq: f64) -> Option<SurfacePoint> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best_sq = max_dist_sq;
        let mut best: Option<(Point3<f64>, usize, [f64; 3])> = None;
        let mut stack: Vec<(usize, f64)> = Vec::with_capacity(64);
        stack.push((0, self.nodes[0].bounds().dist_sq(query)));
        while let Some((ni, lower)) = stack.pop() {
            if lower >= best_sq && best.is_some() || lower > best_sq {
                continue;
            }
            match &self.nodes[ni] {
                Node::Leaf { start, count, .. } => {
                    for &t in &self.order[*start..start + count] {
                        let [a, b, c] = self.triangles[t];
                        let (p, bc) = closest_point_on_triangle(
                            query,
                            &self.vertices[a],
                            &self.vertices[b],
                            &self.vertices[c],
                        );
                        let d = (p - query).norm_squared();
                        if d < best_sq || (best.is_none() && d <= best_sq) {
                            best_sq = d;
                            best = Some((p, t, bc));
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[*left].bounds().dist_sq(query);
                    let dr = self.nodes[*right].bounds().dist_sq(query);
                    // push the farther child first so the nearer one is explored first
                    if dl <= dr {
                        stack.push((*right, dr));
                        stack.push((*left, dl));
                    } else {
                        stack.push((*left, dl));
                        stack.push((*right, dr));
                    }
                }
            }
        }
        best.map(|(point, triangle, barycentric)| SurfacePoint {
            point,
            triangle,
            distance: best_sq.sqrt(),
            barycentric,
        })
    }

    /// First intersection along a ray with `t >= 0`.
    pub fn ray_cast(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<RayHit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = Vector3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<RayHit> = None;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            let Some(entry) = node.bounds().ray_entry(origin, &inv) else {
                continue;
            };
            if best.is_some_and(|h| entry > h.t) {
                continue;
            }
            match node {
                Node::Leaf { start, count, .. } => {
                    for &t in &self.order[*start..start + count] {
                        let [a, b, c] = self.triangles[t];
                        if let Some((tt, _, _)) = ray_triangle(
                            origin,
                            dir,
                            &self.vertices[a],
                            &self.vertices[b],
                            &self.vertices[c],
                        ) {
                            if best.map_or(true, |h| tt < h.t) {
                                best = Some(RayHit {
                                    t: tt,
                                    point: origin + dir * tt,
                                    triangle: t,
                                });
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(*left);
                    stack.push(*right);
                }
            }
        }
        best
    }

    /// Calls `f` for every triangle whose bounding box overlaps `query`.
    pub fn for_each_overlapping(&self, query: &Aabb, mut f: impl FnMut(usize)) {
        if self.nodes.is_empty() {
            return;
        }
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if !node.bounds().overlaps(query) {
                continue;
            }
            match node {
                Node::Leaf { start, count, .. } => {
                    for &t in &self.order[*start..start + count] {
                        if self.triangle_bounds(t).overlaps(query) {
                            f(t);
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(*left);
                    stack.push(*right);
                }
            }
        }
    }
}

fn build_node(
    nodes: &mut Vec<Node>,
    order: &mut [usize],
    start: usize,
    end: usize,
    boxes: &[Aabb],
    centroids: &[Point3<f64>],
) -> usize {
    let mut bounds = Aabb::empty();
    let mut cbounds = Aabb::empty();
    for &t in &order[start..end] {
        bounds = bounds.union(&boxes[t]);
        cbounds.grow(&centroids[t]);
    }
    let idx = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            bounds,
            start,
            count: end - start,
        });
        return idx;
    }
    let extent = cbounds.max - cbounds.min;
    let axis = if extent.x >= extent.y && extent.x >= extent.z {
        0
    } else if extent.y >= extent.z {
        1
    } else {
        2
    };
    let mid = (start + end) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        centroids[a][axis]
            .total_cmp(&centroids[b][axis])
            .then(a.cmp(&b))
    });
    nodes.push(Node::Leaf {
        bounds,
        start: 0,
        count: 0,
    });
    let left = build_node(nodes, order, start, mid, boxes, centroids);
    let right = build_node(nodes, order, mid, end, boxes, centroids);
    nodes[idx] = Node::Inner {
        bounds,
        left,
        right,
    };
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::{icosphere, unit_cube};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(mesh: &TriMesh, q: &Point3<f64>) -> f64 {
        (0..mesh.triangle_count())
            .map(|t| {
                let [a, b, c] = mesh.triangle_points(t);
                (closest_point_on_triangle(q, &a, &b, &c).0 - q).norm()
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn cube_center_is_half_unit_from_surface() {
        let idx = SpatialIndex::build(&unit_cube());
        let sp = idx.nearest(&Point3::new(0.5, 0.5, 0.5));
        assert_abs_diff_eq!(sp.distance, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn vertex_query_returns_vertex() {
        let m = icosphere(5.0, 2);
        let idx = SpatialIndex::build(&m);
        let v = m.vertices()[17];
        let sp = idx.nearest(&v);
        assert_eq!(sp.distance, 0.0);
        assert_eq!(sp.point, v);
    }

    #[test]
    fn matches_brute_force_on_random_queries() {
        // 5 subdivisions of 20 faces is too large; 2 gives 320 triangles plus a jittered copy.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = icosphere(10.0, 2);
        let jittered = base.transformed(|p| {
            Point3::from(p.coords * (1.0 + 0.2 * (p.x * 0.7).sin() * (p.y * 0.3).cos()))
        });
        let idx = SpatialIndex::build(&jittered);
        for _ in 0..1000 {
            let q = Point3::new(
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-20.0..20.0),
            );
            let sp = idx.nearest(&q);
            assert!((sp.distance - brute_force(&jittered, &q)).abs() < 1e-9);
            let [a, b, c] = jittered.triangle_points(sp.triangle);
            let on_tri = closest_point_on_triangle(&sp.point, &a, &b, &c).0;
            assert!((on_tri - sp.point).norm() < 1e-9);
        }
    }

    #[test]
    fn ray_cast_hits_sphere() {
        let m = icosphere(10.0, 3);
        let idx = SpatialIndex::build(&m);
        let hit = idx
            .ray_cast(&Point3::new(0.0, 0.0, -30.0), &Vector3::z())
            .unwrap();
        assert!((hit.t - 20.0).abs() < 0.1);
        assert!(idx
            .ray_cast(&Point3::new(0.0, 0.0, -30.0), &-Vector3::z())
            .is_none());
        let from_inside = idx.ray_cast(&Point3::origin(), &Vector3::x()).unwrap();
        assert!((from_inside.t - 10.0).abs() < 0.1);
    }
}
