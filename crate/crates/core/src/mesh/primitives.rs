//! Small reference meshes used in tests, oracles and examples.

use std::collections::HashMap;

use nalgebra::Point3;

use super::TriMesh;

/// Axis-aligned unit cube `[0,1]³`, 8 vertices, 12 outward-wound triangles.
///
/// The first two triangles form the `z = 0` face.
pub fn unit_cube() -> TriMesh {
    let v = vec![
        Point3::new(0.0, 0.0, 0.0),
        Point3::new(1.0, 0.0, 0.0),
        Point3::new(1.0, 1.0, 0.0),
        Point3::new(0.0, 1.0, 0.0),
        Point3::new(0.0, 0.0, 1.0),
        Point3::new(1.0, 0.0, 1.0),
        Point3::new(1.0, 1.0, 1.0),
        Point3::new(0.0, 1.0, 1.0),
    ];
    // Every face is split along the diagonal joining its even-parity corners
    // (0, 2, 5, 7) so all corners see symmetric incident areas.
    let t = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 7],
        [5, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [1, 2, 5],
        [2, 6, 5],
        [2, 3, 7],
        [2, 7, 6],
        [3, 0, 7],
        [0, 4, 7],
    ];
    TriMesh::new(v, t).expect("static cube is valid")
}

/// Subdivided icosahedron projected onto a sphere of the given radius centered at the origin.
pub fn icosphere(radius: f64, subdivisions: u32) -> TriMesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Point3<f64>> = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ]
    .iter()
    .map(|c| Point3::from(nalgebra::Vector3::from(*c).normalize()))
    .collect();
    let mut tris: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(tris.len() * 4);
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Point3<f64>>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let m = (verts[a].coords + verts[b].coords).normalize();
                verts.push(Point3::from(m));
                verts.len() - 1
            })
        };
        for [a, b, c] in tris {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.push([a, ab, ca]);
            next.push([b, bc, ab]);
            next.push([c, ca, bc]);
            next.push([ab, bc, ca]);
        }
        tris = next;
    }
    let verts = verts
        .into_iter()
        .map(|p| Point3::from(p.coords * radius))
        .collect();
    TriMesh::new(verts, tris).expect("icosphere construction is valid")
}

/// Regular grid of `n × n` quads in the plane `x = 0`, spanning `[-half, half]²` in (y, z).
pub fn plane_grid_x0(half: f64, n: usize) -> TriMesh {
    let mut verts = Vec::with_capacity((n + 1) * (n + 1));
    for i in 0..=n {
        for j in 0..=n {
            let y = -half + 2.0 * half * i as f64 / n as f64;
            let z = -half + 2.0 * half * j as f64 / n as f64;
            verts.push(Point3::new(0.0, y, z));
        }
    }
    let idx = |i: usize, j: usize| i * (n + 1) + j;
    let mut tris = Vec::with_capacity(2 * n * n);
    for i in 0..n {
        for j in 0..n {
            tris.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            tris.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    TriMesh::new(verts, tris).expect("grid construction is valid")
}
