use std::collections::BTreeSet;

use nalgebra::{Matrix3, Point3, Similarity3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{DimensionBounds, JitterRange};
use super::template::{about_point, TemplateAsset};
use super::{SynthError, SynthResult};
use crate::mesh::intersect::{self_intersections_with_index, triangles_intersect};
use crate::mesh::{
    polyline_length_of, signed_volume, vertex_normals_unchecked, Aabb, SpatialIndex, TriMesh,
};

/// Linear blend skinning of the template under one global transform per joint.
pub fn skin_deform(asset: &TemplateAsset, transforms: &[Similarity3<f64>]) -> SynthResult<TriMesh> {
    let v = asset.rig.skin(asset.mesh.vertices(), transforms)?;
    Ok(asset.mesh.with_vertices(v)?)
}

/// Vertex-wise barycentric blend of the four prototypes.
pub fn interpolate_shape_types(
    asset: &TemplateAsset,
    mix: [f64; 4],
) -> SynthResult<Vec<Point3<f64>>> {
    if mix.iter().any(|w| !w.is_finite() || *w < 0.0)
        || (mix.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(SynthError::InvalidShapeMix(mix));
    }
    let n = asset.vertex_count();
    let mut out = vec![Point3::origin(); n];
    for (w, proto) in mix.iter().zip(&asset.prototypes) {
        if *w == 0.0 {
            continue;
        }
        for (o, p) in out.iter_mut().zip(proto) {
            o.coords += p.coords * *w;
        }
    }
    Ok(out)
}

/// One joint perturbation: axis-angle rotation (radians) and uniform scale, both about the joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointJitter {
    pub joint: String,
    pub rotation: [f64; 3],
    pub scale: f64,
}

/// Draw concrete jitter values from configured ranges.
pub fn sample_jitter(ranges: &[JitterRange], seed: u64) -> Vec<JointJitter> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_jitter_with(ranges, &mut rng)
}

pub(crate) fn sample_jitter_with(ranges: &[JitterRange], rng: &mut impl Rng) -> Vec<JointJitter> {
    ranges
        .iter()
        .map(|r| {
            let angle = if r.max_angle_rad > 0.0 {
                rng.gen_range(-r.max_angle_rad..=r.max_angle_rad)
            } else {
                0.0
            };
            let scale = if r.scale.1 > r.scale.0 {
                rng.gen_range(r.scale.0..=r.scale.1)
            } else {
                r.scale.0
            };
            let axis = Vector3::from(r.axis).normalize() * angle;
            JointJitter {
                joint: r.joint.clone(),
                rotation: [axis.x, axis.y, axis.z],
                scale,
            }
        })
        .collect()
}

/// Apply joint jitter to a mesh sharing the template topology.
///
/// Joint centers are located on `mesh` itself through the rig anchors, so the
/// rotations pivot correctly on blended prototypes.
pub fn apply_jitter(
    asset: &TemplateAsset,
    mesh: &TriMesh,
    jitter: &[JointJitter],
) -> SynthResult<TriMesh> {
    let rig = &asset.rig;
    let mut locals = vec![Similarity3::identity(); rig.joint_count()];
    let centers = rig.joint_positions(mesh.vertices());
    for j in jitter {
        let k = rig.joint_index(&j.joint)?;
        if !(j.scale > 0.0 && j.scale.is_finite()) {
            return Err(SynthError::InvalidAsset(format!(
                "jitter scale {} for {}",
                j.scale, j.joint
            )));
        }
        let rot = UnitQuaternion::from_scaled_axis(Vector3::from(j.rotation));
        locals[k] *= about_point(&centers[k], rot, j.scale);
    }
    if jitter.is_empty() {
        return Ok(mesh.clone());
    }
    let globals = rig.compose_global(&locals)?;
    let v = rig.skin(mesh.vertices(), &globals)?;
    Ok(mesh.with_vertices(v)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InsufflateReport {
    /// Vertices whose displacement was shortened to avoid a collision.
    pub limited_vertices: usize,
    pub rounds: usize,
}

const NORMAL_SMOOTHING_PASSES: usize = 3;
const BISECTION_STEPS: usize = 20;
const MAX_COLLISION_ROUNDS: usize = 8;

/// Push vertices outward along smoothed normals by up to `offset_mm`, never creating self-intersections.
pub fn insufflate(mesh: &TriMesh, offset_mm: f64) -> SynthResult<TriMesh> {
    insufflate_with_report(mesh, offset_mm).map(|(m, _)| m)
}

pub fn insufflate_with_report(
    mesh: &TriMesh,
    offset_mm: f64,
) -> SynthResult<(TriMesh, InsufflateReport)> {
    if !(offset_mm >= 0.0 && offset_mm.is_finite()) {
        return Err(SynthError::BadOffset(offset_mm));
    }
    mesh.check_closed()?;
    if offset_mm == 0.0 {
        return Ok((mesh.clone(), InsufflateReport::default()));
    }
    let index = SpatialIndex::build(mesh);
    let existing = self_intersections_with_index(mesh, &index);
    if !existing.is_empty() {
        return Err(SynthError::AlreadySelfIntersecting(existing.len()));
    }
    let base = mesh.vertices();
    let tris = mesh.triangles();
    let neighbors = mesh.vertex_neighbors();
    let incident = mesh.vertex_triangles();
    let mut normals = vertex_normals_unchecked(base, tris).normals;
    for _ in 0..NORMAL_SMOOTHING_PASSES {
        normals = (0..base.len())
            .map(|v| {
                let nb = &neighbors[v];
                if nb.is_empty() {
                    return normals[v];
                }
                let mean =
                    nb.iter().fold(Vector3::zeros(), |a, &u| a + normals[u]) / nb.len() as f64;
                let n = normals[v] * 0.5 + mean * 0.5;
                let len = n.norm();
                if len > 0.0 {
                    n / len
                } else {
                    normals[v]
                }
            })
            .collect();
    }
    let disp: Vec<Vector3<f64>> = normals.iter().map(|n| n * offset_mm).collect();
    let mut t = vec![1.0f64; base.len()];
    let place = |t: &[f64]| -> Vec<Point3<f64>> {
        base.iter()
            .zip(&disp)
            .zip(t)
            .map(|((p, d), s)| p + d * *s)
            .collect()
    };
    let mut report = InsufflateReport::default();
    let mut limited = BTreeSet::new();
    loop {
        let current = mesh.with_vertices(place(&t))?;
        let idx = SpatialIndex::build(&current);
        let pairs = self_intersections_with_index(&current, &idx);
        if pairs.is_empty() {
            report.limited_vertices = limited.len();
            return Ok((current, report));
        }
        report.rounds += 1;
        let offenders: BTreeSet<usize> = pairs
            .iter()
            .flat_map(|&(a, b)| tris[a].iter().chain(tris[b].iter()).copied())
            .collect();
        if report.rounds > MAX_COLLISION_ROUNDS {
            for &v in &offenders {
                t[v] = 0.0;
                limited.insert(v);
            }
            continue;
        }
        let mut pos = current.vertices().to_vec();
        for &v in &offenders {
            // Positions in this round stay within `offset_mm` of the round start.
            let mut query = Aabb::empty();
            for &ti in &incident[v] {
                for &u in &tris[ti] {
                    query.grow(&pos[u]);
                    query.grow(&base[u]);
                }
            }
            let pad = Vector3::repeat(offset_mm);
            query.min -= pad;
            query.max += pad;
            let mut candidates = Vec::new();
            idx.for_each_overlapping(&query, |j| candidates.push(j));
            candidates.sort_unstable();
            let clean = |pos: &[Point3<f64>]| -> bool {
                incident[v].iter().all(|&ti| {
                    let a = tris[ti];
                    let pa = [pos[a[0]], pos[a[1]], pos[a[2]]];
                    candidates.iter().all(|&tj| {
                        let b = tris[tj];
                        tj == ti
                            || a.iter().any(|i| b.contains(i))
                            || !triangles_intersect(&pa, &[pos[b[0]], pos[b[1]], pos[b[2]]])
                    })
                })
            };
            if clean(&pos) {
                continue;
            }
            let (mut lo, mut hi) = (0.0, t[v]);
            for _ in 0..BISECTION_STEPS {
                let mid = 0.5 * (lo + hi);
                pos[v] = base[v] + disp[v] * mid;
                if clean(&pos) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            t[v] = lo;
            pos[v] = base[v] + disp[v] * lo;
            limited.insert(v);
        }
    }
}

/// Greater/lesser curvature lengths and enclosed volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dimensions {
    pub gc: f64,
    pub lc: f64,
    pub volume: f64,
}

pub fn measure_dimensions(
    asset: &TemplateAsset,
    vertices: &[Point3<f64>],
) -> SynthResult<Dimensions> {
    Ok(Dimensions {
        gc: polyline_length_of(vertices, &asset.gc_chain)?,
        lc: polyline_length_of(vertices, &asset.lc_chain)?,
        volume: signed_volume(vertices, asset.mesh.triangles()).abs(),
    })
}

/// Ring-local coordinates of a mesh with template topology: each vertex is
/// `center + α·e1 + β·e2 + γ·t`, where `t` follows the ring centers and `e1`
/// points from the center toward the ring's greater-curvature vertex.
pub(crate) struct RingFrames {
    centers: Vec<Point3<f64>>,
    frames: Vec<[Vector3<f64>; 3]>,
    local: Vec<(usize, Vector3<f64>)>,
    stomach_rings: (usize, usize),
}

impl RingFrames {
    pub(crate) fn new(asset: &TemplateAsset, vertices: &[Point3<f64>]) -> Self {
        let centers: Vec<Point3<f64>> = asset
            .rings
            .iter()
            .map(|r| {
                Point3::from(
                    r.iter()
                        .fold(Vector3::zeros(), |s, &v| s + vertices[v].coords)
                        / r.len() as f64,
                )
            })
            .collect();
        let n = centers.len();
        let frames: Vec<[Vector3<f64>; 3]> = (0..n)
            .map(|i| {
                let t = (centers[(i + 1).min(n - 1)] - centers[i.saturating_sub(1)]).normalize();
                let mut e1 = vertices[asset.rings[i][0]] - centers[i];
                e1 -= t * t.dot(&e1);
                if e1.norm() < 1e-12 {
                    e1 = t.cross(&Vector3::y());
                }
                let e1 = e1.normalize();
                [e1, t.cross(&e1), t]
            })
            .collect();
        let mut ring_of = vec![0; vertices.len()];
        for (i, r) in asset.rings.iter().enumerate() {
            for &v in r {
                ring_of[v] = i;
            }
        }
        ring_of[asset.caps[1]] = n - 1;
        let local = vertices
            .iter()
            .zip(ring_of)
            .map(|(p, i)| {
                let d = p - centers[i];
                let [e1, e2, t] = &frames[i];
                (i, Vector3::new(e1.dot(&d), e2.dot(&d), t.dot(&d)))
            })
            .collect();
        Self {
            centers,
            frames,
            local,
            stomach_rings: asset.stomach_rings,
        }
    }

    /// Scale every cross-section by `radial` within the curvature plane and by
    /// `thickness` across it, then stretch the stomach centerline by `axial`
    /// (rings past the stomach translate rigidly).
    pub(crate) fn deform(&self, axial: f64, radial: f64, thickness: f64) -> Vec<Point3<f64>> {
        let (r0, r1) = self.stomach_rings;
        let mut centers = self.centers.clone();
        for i in r0 + 1..=r1 {
            centers[i] = centers[i - 1] + (self.centers[i] - self.centers[i - 1]) * axial;
        }
        let shift = centers[r1] - self.centers[r1];
        for i in r1 + 1..centers.len() {
            centers[i] = self.centers[i] + shift;
        }
        self.local
            .iter()
            .map(|&(i, l)| {
                let [e1, e2, t] = &self.frames[i];
                centers[i] + e1 * (radial * l.x) + e2 * (thickness * l.y) + t * l.z
            })
            .collect()
    }
}

/// Smallest ratio, over all longitudinal ring-to-ring edges, between the edge's
/// advance along the local centerline and the centerline step. Values near zero
/// or negative mean the wall folds back on itself (typically on the inner arc).
pub(crate) fn fold_margin(asset: &TemplateAsset, vertices: &[Point3<f64>]) -> f64 {
    let centers: Vec<Vector3<f64>> = asset
        .rings
        .iter()
        .map(|r| {
            r.iter()
                .fold(Vector3::zeros(), |s, &v| s + vertices[v].coords)
                / r.len() as f64
        })
        .collect();
    let mut margin = f64::INFINITY;
    for (i, pair) in asset.rings.windows(2).enumerate() {
        let step = centers[i + 1] - centers[i];
        let len2 = step.norm_squared();
        for (&a, &b) in pair[0].iter().zip(&pair[1]) {
            margin = margin.min((vertices[b] - vertices[a]).dot(&step) / len2);
        }
    }
    margin
}

/// Scale factors found by [`enforce_dimensions_detailed`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleSolution {
    /// Stomach centerline stretch.
    pub axial: f64,
    /// Cross-section scale within the curvature plane.
    pub radial: f64,
    /// Cross-section scale across the curvature plane.
    pub thickness: f64,
    pub iterations: usize,
    pub achieved: Dimensions,
}

const DIMENSION_MAX_ITERATIONS: usize = 100;
const DIMENSION_TOLERANCE: f64 = 1e-10;
const MAX_LOG_SCALE: f64 = std::f64::consts::LN_10;

/// Scale the mesh so GC, LC and volume hit their targets.
pub fn enforce_dimensions(
    mesh: &TriMesh,
    asset: &TemplateAsset,
    target_gc: f64,
    target_lc: f64,
    target_volume: f64,
) -> SynthResult<TriMesh> {
    enforce_dimensions_detailed(mesh, asset, target_gc, target_lc, target_volume).map(|r| r.0)
}

pub fn enforce_dimensions_detailed(
    mesh: &TriMesh,
    asset: &TemplateAsset,
    target_gc: f64,
    target_lc: f64,
    target_volume: f64,
) -> SynthResult<(TriMesh, ScaleSolution)> {
    let (v, sol) = solve_dimensions(asset, mesh.vertices(), target_gc, target_lc, target_volume)?;
    Ok((mesh.with_vertices(v)?, sol))
}

fn infeasible(iterations: usize, d: &Dimensions, gc: f64, lc: f64, volume: f64) -> SynthError {
    SynthError::Infeasible {
        iterations,
        gc: d.gc,
        lc: d.lc,
        volume: d.volume,
        target_gc: gc,
        target_lc: lc,
        target_volume: volume,
    }
}

/// Damped Newton on `x = ln(axial, radial, thickness)` for
/// `ln(GC, LC, V)(x) = ln(targets)`, forward-difference Jacobian.
pub(crate) fn solve_dimensions(
    asset: &TemplateAsset,
    vertices: &[Point3<f64>],
    target_gc: f64,
    target_lc: f64,
    target_volume: f64,
) -> SynthResult<(Vec<Point3<f64>>, ScaleSolution)> {
    let targets = [target_gc, target_lc, target_volume];
    if targets.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(SynthError::BadTargets {
            gc: target_gc,
            lc: target_lc,
            volume: target_volume,
        });
    }
    let frames = RingFrames::new(asset, vertices);
    let goal = Vector3::from(targets.map(f64::ln));
    let eval = |x: &Vector3<f64>| -> SynthResult<(Vector3<f64>, Dimensions, Vec<Point3<f64>>)> {
        let v = frames.deform(x.x.exp(), x.y.exp(), x.z.exp());
        let d = measure_dimensions(asset, &v)?;
        Ok((
            Vector3::new(d.gc.ln(), d.lc.ln(), d.volume.ln()) - goal,
            d,
            v,
        ))
    };
    let fail = |it: usize, d: &Dimensions| infeasible(it, d, target_gc, target_lc, target_volume);

    let mut x = Vector3::zeros();
    let mut d = measure_dimensions(asset, vertices)?;
    let mut f = Vector3::new(d.gc.ln(), d.lc.ln(), d.volume.ln()) - goal;
    let mut v = vertices.to_vec();
    let mut iterations = 0;
    while f.amax() > DIMENSION_TOLERANCE {
        if iterations >= DIMENSION_MAX_ITERATIONS || !f.iter().all(|r| r.is_finite()) {
            return Err(fail(iterations, &d));
        }
        iterations += 1;
        let h = 1e-7;
        let mut jac = Matrix3::zeros();
        for k in 0..3 {
            let mut xk = x;
            xk[k] += h;
            jac.set_column(k, &((eval(&xk)?.0 - f) / h));
        }
        let Some(mut step) = jac.lu().solve(&-f) else {
            return Err(fail(iterations, &d));
        };
        if step.norm() > 0.5 {
            step *= 0.5 / step.norm();
        }
        let mut t = 1.0;
        loop {
            let xn = x + step * t;
            let (fn_, dn, vn) = eval(&xn)?;
            if fn_.norm() < f.norm() || t < 1e-4 {
                (x, f, d, v) = (xn, fn_, dn, vn);
                break;
            }
            t *= 0.5;
        }
        if x.amax() > MAX_LOG_SCALE {
            return Err(fail(iterations, &d));
        }
    }
    let sol = ScaleSolution {
        axial: x.x.exp(),
        radial: x.y.exp(),
        thickness: x.z.exp(),
        iterations,
        achieved: d,
    };
    Ok((v, sol))
}

/// Outcome of [`validate_mesh`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub failures: Vec<String>,
    pub self_intersections: Vec<(usize, usize)>,
    pub boundary_edges: usize,
    pub closed: bool,
    pub dimensions: Dimensions,
}

/// Self-collision, closure and dimension-bounds checks.
pub fn validate_mesh(
    mesh: &TriMesh,
    asset: &TemplateAsset,
    bounds: &DimensionBounds,
) -> ValidationReport {
    let index = SpatialIndex::build(mesh);
    let self_intersections = self_intersections_with_index(mesh, &index);
    let edges = mesh.edge_report();
    let mut failures = Vec::new();
    if !self_intersections.is_empty() {
        failures.push(format!(
            "self-intersection ({} triangle pairs)",
            self_intersections.len()
        ));
    }
    if !edges.is_closed() {
        failures.push(format!(
            "not closed ({} boundary edges)",
            edges.boundary_edges
        ));
    }
    let dimensions = match measure_dimensions(asset, mesh.vertices()) {
        Ok(d) => d,
        Err(e) => {
            failures.push(format!("cannot measure: {e}"));
            Dimensions {
                gc: f64::NAN,
                lc: f64::NAN,
                volume: f64::NAN,
            }
        }
    };
    for (name, value, (lo, hi)) in [
        ("gc", dimensions.gc, bounds.gc),
        ("lc", dimensions.lc, bounds.lc),
        ("volume", dimensions.volume, bounds.volume),
    ] {
        if !(value >= lo && value <= hi) {
            failures.push(format!(
                "{name} out of bounds: {value:.3} not in [{lo}, {hi}]"
            ));
        }
    }
    ValidationReport {
        passed: failures.is_empty(),
        failures,
        self_intersections,
        boundary_edges: edges.boundary_edges,
        closed: edges.is_closed(),
        dimensions,
    }
}
