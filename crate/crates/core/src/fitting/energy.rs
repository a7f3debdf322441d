//! Data, prior and coupling energies with their gradients.

use nalgebra::{DVector, Point3, Vector3};
use rayon::prelude::*;

use super::{EnergyWeights, FitError, FitResult, ScanTarget};
use crate::mesh::{vertex_normals_unchecked, LandmarkSet, SpatialIndex, TriMesh};
use crate::shape::{exp_map, left_jacobian, PoseParams, ShapeModel};

/// Model vertex → closest scan point.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Forward {
    pub q: Point3<f64>,
    /// Scan normal at `q`: the face normal inside a face, otherwise the
    /// normal-cone direction `(p − q)/‖p − q‖` of the edge or vertex.
    pub n: Vector3<f64>,
    /// Face normal of the scan triangle containing `q`.
    pub face_n: Vector3<f64>,
    pub dist: f64,
    pub w: f64,
}

/// Scan sample → closest point on the model surface.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Backward {
    pub s: Point3<f64>,
    pub tri: [usize; 3],
    pub bary: [f64; 3],
    pub dist: f64,
    pub w: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Correspondences {
    pub fwd: Vec<Forward>,
    pub bwd: Vec<Backward>,
    /// Model vertex index paired with a scan position.
    pub lm: Vec<(usize, Point3<f64>)>,
    pub rejected: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Rejection {
    pub median_factor: f64,
    pub min_distance: f64,
    pub min_cos: f64,
}

/// Pair model landmarks (vertex bound) with scan landmarks by name.
pub(crate) fn landmark_pairs(
    model: Option<&LandmarkSet>,
    target: &ScanTarget,
) -> Vec<(usize, Point3<f64>)> {
    let Some(model) = model else {
        if !target.landmarks().is_empty() {
            log::warn!("model has no landmarks; landmark term skipped");
        }
        return Vec::new();
    };
    let mut out = Vec::new();
    for (l, _) in model.iter() {
        let Some(i) = model.vertex_index(l) else {
            continue;
        };
        match target.landmarks().get(&l) {
            Some(p) => out.push((i, *p)),
            None => log::warn!("scan has no {l} landmark; term skipped"),
        }
    }
    for l in target.landmarks().keys() {
        if model.get(*l).is_none() {
            log::warn!("model has no {l} landmark; term skipped");
        }
    }
    out
}

fn median(mut d: Vec<f64>) -> f64 {
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

pub(crate) fn correspond(
    vertices: &[Point3<f64>],
    triangles: &[[usize; 3]],
    target: &ScanTarget,
    lm: &[(usize, Point3<f64>)],
    reject: Option<&Rejection>,
) -> Correspondences {
    let scan_index = target.index();
    let mut fwd: Vec<Forward> = vertices
        .par_iter()
        .map(|p| {
            let sp = scan_index.nearest(p);
            let face_n = target.face_normal(sp.triangle);
            let d = p - sp.point;
            let n = if sp.distance > 1e-9 {
                let u = d / sp.distance;
                if u.dot(&face_n) >= 0.0 {
                    u
                } else {
                    -u
                }
            } else {
                face_n
            };
            Forward {
                q: sp.point,
                n,
                face_n,
                dist: sp.distance,
                w: 1.0,
            }
        })
        .collect();

    let model_mesh = TriMesh::new(vertices.to_vec(), triangles.to_vec())
        .expect("model topology was validated when the model was built");
    let model_index = SpatialIndex::build(&model_mesh);
    let mut bwd: Vec<Backward> = target
        .samples()
        .par_iter()
        .map(|s| {
            let sp = model_index.nearest(s);
            Backward {
                s: *s,
                tri: triangles[sp.triangle],
                bary: sp.barycentric,
                dist: sp.distance,
                w: 1.0,
            }
        })
        .collect();

    let mut rejected = 0;
    if let Some(r) = reject {
        let normals = vertex_normals_unchecked(vertices, triangles).normals;
        let cut =
            (r.median_factor * median(fwd.iter().map(|f| f.dist).collect())).max(r.min_distance);
        for (f, n) in fwd.iter_mut().zip(&normals) {
            if f.dist > cut || n.dot(&f.face_n) < r.min_cos {
                f.w = 0.0;
                rejected += 1;
            }
        }
        let cut =
            (r.median_factor * median(bwd.iter().map(|b| b.dist).collect())).max(r.min_distance);
        for (b, n) in bwd.iter_mut().zip(target.sample_normals()) {
            let [i, j, k] = b.tri;
            let face = (vertices[j] - vertices[i])
                .cross(&(vertices[k] - vertices[i]))
                .try_normalize(0.0)
                .unwrap_or_else(Vector3::zeros);
            if b.dist > cut || face.dot(n) < r.min_cos {
                b.w = 0.0;
                rejected += 1;
            }
        }
    }
    Correspondences {
        fwd,
        bwd,
        lm: lm.to_vec(),
        rejected,
    }
}

pub(crate) fn bary_point(vertices: &[Point3<f64>], tri: [usize; 3], b: [f64; 3]) -> Point3<f64> {
    Point3::from(
        vertices[tri[0]].coords * b[0]
            + vertices[tri[1]].coords * b[1]
            + vertices[tri[2]].coords * b[2],
    )
}

/// Unweighted term sums at fixed correspondences.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Terms {
    pub fwd: f64,
    pub bwd: f64,
    pub normal_abs: f64,
    pub normal_sq: f64,
    pub lm: f64,
}

impl Terms {
    pub fn eval(vertices: &[Point3<f64>], c: &Correspondences) -> Self {
        let mut t = Terms::default();
        for (p, f) in vertices.iter().zip(&c.fwd) {
            if f.w == 0.0 {
                continue;
            }
            let d = p - f.q;
            t.fwd += f.w * d.norm_squared();
            let r = d.dot(&f.n);
            t.normal_abs += f.w * r.abs();
            t.normal_sq += f.w * r * r;
        }
        for b in &c.bwd {
            if b.w == 0.0 {
                continue;
            }
            t.bwd += b.w * (bary_point(vertices, b.tri, b.bary) - b.s).norm_squared();
        }
        for (i, l) in &c.lm {
            t.lm += (vertices[*i] - l).norm_squared();
        }
        t
    }

    /// Weighted data energy; `squared` selects the solver form of the normal term.
    pub fn data(&self, w: &EnergyWeights, squared: bool) -> f64 {
        let n = if squared {
            self.normal_sq
        } else {
            self.normal_abs
        };
        w.lambda_p2p * (self.fwd + self.bwd) + w.lambda_n * n + w.lambda_lm * self.lm
    }
}

/// `∂E_data/∂p` per model vertex at fixed correspondences.
pub(crate) fn data_gradient(
    vertices: &[Point3<f64>],
    c: &Correspondences,
    w: &EnergyWeights,
    squared: bool,
) -> Vec<Vector3<f64>> {
    let mut g: Vec<Vector3<f64>> = vertices
        .iter()
        .zip(&c.fwd)
        .map(|(p, f)| {
            if f.w == 0.0 {
                return Vector3::zeros();
            }
            let d = p - f.q;
            let r = d.dot(&f.n);
            let dn = if squared { 2.0 * r } else { sign(r) };
            (d * (2.0 * w.lambda_p2p) + f.n * (w.lambda_n * dn)) * f.w
        })
        .collect();
    for b in &c.bwd {
        if b.w == 0.0 {
            continue;
        }
        let d = (bary_point(vertices, b.tri, b.bary) - b.s) * (2.0 * w.lambda_p2p * b.w);
        for (k, &i) in b.tri.iter().enumerate() {
            g[i] += d * b.bary[k];
        }
    }
    for (i, l) in &c.lm {
        g[*i] += (vertices[*i] - l) * (2.0 * w.lambda_lm);
    }
    g
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Data energy of a model mesh against a scan, with fresh closest points.
#[derive(Debug, Clone)]
pub struct DataEnergy {
    pub value: f64,
    /// Σ over model vertices of the squared distance to the scan.
    pub model_to_scan: f64,
    /// Σ over scan samples of the squared distance to the model.
    pub scan_to_model: f64,
    /// Σ |(p − q*)·n|.
    pub normal: f64,
    pub landmarks: f64,
    /// `∂E/∂p` per model vertex.
    pub gradient: Vec<Vector3<f64>>,
}

/// `λ_p2p·(Σ_p d(p,S)² + Σ_q d(q,M)²) + λ_n·Σ_p |(p−q*)·n| + λ_lm·Σ_l ‖l_M − l_S‖²`.
///
/// `triangles` is the model connectivity; the gradient holds the closest
/// points fixed. No pairs are rejected.
pub fn energy_data(
    model_vertices: &[Point3<f64>],
    triangles: &[[usize; 3]],
    target: &ScanTarget,
    model_landmarks: Option<&LandmarkSet>,
    weights: &EnergyWeights,
) -> FitResult<DataEnergy> {
    weights.validate()?;
    if model_vertices.is_empty() || triangles.is_empty() {
        return Err(FitError::BadConfig("model mesh is empty".into()));
    }
    let lm = landmark_pairs(model_landmarks, target);
    let c = correspond(model_vertices, triangles, target, &lm, None);
    let t = Terms::eval(model_vertices, &c);
    Ok(DataEnergy {
        value: t.data(weights, false),
        model_to_scan: t.fwd,
        scan_to_model: t.bwd,
        normal: t.normal_abs,
        landmarks: t.lm,
        gradient: data_gradient(model_vertices, &c, weights, false),
    })
}

/// Data plus prior energy in model parameters.
#[derive(Debug, Clone)]
pub struct ModelEnergy {
    pub value: f64,
    pub data: DataEnergy,
    /// `λ_prior·Σ β_i²/λ_i`.
    pub prior: f64,
    pub grad_beta: Vec<f64>,
    /// With respect to the axis-angle vector.
    pub grad_rotation: Vector3<f64>,
    pub grad_translation: Vector3<f64>,
}

/// Energy of `decode(model, pose)` and its gradient through the decoder.
pub fn model_energy(
    model: &ShapeModel,
    pose: &PoseParams,
    target: &ScanTarget,
    weights: &EnergyWeights,
) -> FitResult<ModelEnergy> {
    let vertices = model.decode(pose)?;
    let data = energy_data(
        &vertices,
        model.triangles(),
        target,
        model.landmarks(),
        weights,
    )?;
    let r = exp_map(&pose.rotation);
    let mut torque = Vector3::zeros();
    let mut translation = Vector3::zeros();
    let mut local = DVector::zeros(3 * vertices.len());
    for (i, (p, g)) in vertices.iter().zip(&data.gradient).enumerate() {
        let a = p.coords - pose.translation;
        torque += a.cross(g);
        translation += g;
        local
            .fixed_rows_mut::<3>(3 * i)
            .copy_from(&(r.inverse() * g));
    }
    let eps = model.variance_floor();
    let mut grad_beta: Vec<f64> = model.basis().tr_mul(&local).as_slice().to_vec();
    let mut prior = 0.0;
    for ((gb, b), l) in grad_beta.iter_mut().zip(&pose.beta).zip(model.variances()) {
        let l = l.max(eps);
        prior += b * b / l;
        *gb += 2.0 * weights.lambda_prior * b / l;
    }
    prior *= weights.lambda_prior;
    Ok(ModelEnergy {
        value: data.value + prior,
        data,
        prior,
        grad_beta,
        grad_rotation: left_jacobian(&pose.rotation).transpose() * torque,
        grad_translation: translation,
    })
}

/// `λ·Σ_i ‖v0_i − (v_i + dv_i)‖` and its gradient with respect to `dv`.
pub fn coupling_energy(
    v0: &[Point3<f64>],
    v: &[Point3<f64>],
    dv: &[Vector3<f64>],
    lambda: f64,
) -> (f64, Vec<Vector3<f64>>) {
    let mut value = 0.0;
    let grad = v0
        .iter()
        .zip(v)
        .zip(dv)
        .map(|((a, b), d)| {
            let r = a - (b + d);
            let n = r.norm();
            value += n;
            if n > 0.0 {
                -r * (lambda / n)
            } else {
                Vector3::zeros()
            }
        })
        .collect();
    (lambda * value, grad)
}
