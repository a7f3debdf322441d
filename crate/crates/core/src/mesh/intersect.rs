//! Triangle/triangle intersection on exact orientation predicates.
//!
//! Two non-coplanar triangles intersect iff an edge of one meets the other;
//! coplanar pairs fall back to 2-D edge crossing and containment tests in the
//! dominant projection plane.

use nalgebra::Point3;
use robust::{orient2d, orient3d, Coord, Coord3D};

use super::{SpatialIndex, TriMesh};

fn c3(p: &Point3<f64>) -> Coord3D<f64> {
    Coord3D {
        x: p.x,
        y: p.y,
        z: p.z,
    }
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

fn o3(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>, d: &Point3<f64>) -> i8 {
    sign(orient3d(c3(a), c3(b), c3(c), c3(d)))
}

#[derive(Clone, Copy)]
struct P2 {
    x: f64,
    y: f64,
}

fn o2(a: P2, b: P2, c: P2) -> i8 {
    sign(orient2d(
        Coord { x: a.x, y: a.y },
        Coord { x: b.x, y: b.y },
        Coord { x: c.x, y: c.y },
    ))
}

/// Drop the coordinate along which the triangle's normal is largest.
fn projector(tri: &[Point3<f64>; 3]) -> impl Fn(&Point3<f64>) -> P2 {
    let n = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
    let (ax, ay, az) = (n.x.abs(), n.y.abs(), n.z.abs());
    let drop = if ax >= ay && ax >= az {
        0
    } else if ay >= az {
        1
    } else {
        2
    };
    move |p: &Point3<f64>| match drop {
        0 => P2 { x: p.y, y: p.z },
        1 => P2 { x: p.z, y: p.x },
        _ => P2 { x: p.x, y: p.y },
    }
}

fn segments_intersect_2d(p: P2, q: P2, a: P2, b: P2) -> bool {
    let d1 = o2(p, q, a);
    let d2 = o2(p, q, b);
    let d3 = o2(a, b, p);
    let d4 = o2(a, b, q);
    if d1 * d2 < 0 && d3 * d4 < 0 {
        return true;
    }
    let on_segment = |s: P2, e: P2, r: P2| {
        r.x >= s.x.min(e.x) && r.x <= s.x.max(e.x) && r.y >= s.y.min(e.y) && r.y <= s.y.max(e.y)
    };
    (d1 == 0 && on_segment(p, q, a))
        || (d2 == 0 && on_segment(p, q, b))
        || (d3 == 0 && on_segment(a, b, p))
        || (d4 == 0 && on_segment(a, b, q))
}

fn point_in_triangle_2d(p: P2, t: [P2; 3]) -> bool {
    let s0 = o2(t[0], t[1], p);
    let s1 = o2(t[1], t[2], p);
    let s2 = o2(t[2], t[0], p);
    let has_neg = s0 < 0 || s1 < 0 || s2 < 0;
    let has_pos = s0 > 0 || s1 > 0 || s2 > 0;
    !(has_neg && has_pos)
}

fn segment_triangle_2d(p: P2, q: P2, t: [P2; 3]) -> bool {
    point_in_triangle_2d(p, t)
        || point_in_triangle_2d(q, t)
        || (0..3).any(|k| segments_intersect_2d(p, q, t[k], t[(k + 1) % 3]))
}

fn segment_triangle(p: &Point3<f64>, q: &Point3<f64>, tri: &[Point3<f64>; 3]) -> bool {
    let [a, b, c] = tri;
    let sp = o3(a, b, c, p);
    let sq = o3(a, b, c, q);
    if sp * sq > 0 {
        return false;
    }
    if sp == 0 && sq == 0 {
        let proj = projector(tri);
        return segment_triangle_2d(proj(p), proj(q), [proj(a), proj(b), proj(c)]);
    }
    let s1 = o3(p, q, a, b);
    let s2 = o3(p, q, b, c);
    let s3 = o3(p, q, c, a);
    (s1 >= 0 && s2 >= 0 && s3 >= 0) || (s1 <= 0 && s2 <= 0 && s3 <= 0)
}

/// Exact intersection test between two (closed) triangles.
pub fn triangles_intersect(t1: &[Point3<f64>; 3], t2: &[Point3<f64>; 3]) -> bool {
    let coplanar = t2.iter().all(|p| o3(&t1[0], &t1[1], &t1[2], p) == 0);
    if coplanar {
        let proj = projector(t1);
        let a = [proj(&t1[0]), proj(&t1[1]), proj(&t1[2])];
        let b = [proj(&t2[0]), proj(&t2[1]), proj(&t2[2])];
        return (0..3).any(|i| {
            (0..3).any(|j| segments_intersect_2d(a[i], a[(i + 1) % 3], b[j], b[(j + 1) % 3]))
        }) || point_in_triangle_2d(a[0], b)
            || point_in_triangle_2d(b[0], a);
    }
    (0..3).any(|k| segment_triangle(&t1[k], &t1[(k + 1) % 3], t2))
        || (0..3).any(|k| segment_triangle(&t2[k], &t2[(k + 1) % 3], t1))
}

fn share_vertex(a: &[usize; 3], b: &[usize; 3]) -> bool {
    a.iter().any(|i| b.contains(i))
}

/// All pairs `(i, j)`, `i < j`, of triangles that intersect and share no vertex.
pub fn detect_self_intersections(mesh: &TriMesh) -> Vec<(usize, usize)> {
    let index = SpatialIndex::build(mesh);
    self_intersections_with_index(mesh, &index)
}

pub(crate) fn self_intersections_with_index(
    mesh: &TriMesh,
    index: &SpatialIndex,
) -> Vec<(usize, usize)> {
    let tris = mesh.triangles();
    let mut pairs = Vec::new();
    for (i, ti) in tris.iter().enumerate() {
        let pi = mesh.triangle_points(i);
        let bounds = index.triangle_bounds(i);
        let mut hits = Vec::new();
        index.for_each_overlapping(&bounds, |j| {
            if j > i
                && !share_vertex(ti, &tris[j])
                && triangles_intersect(&pi, &mesh.triangle_points(j))
            {
                hits.push(j);
            }
        });
        hits.sort_unstable();
        pairs.extend(hits.into_iter().map(|j| (i, j)));
    }
    pairs
}
