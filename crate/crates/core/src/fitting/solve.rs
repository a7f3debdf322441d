//! Alternating correspondence / Gauss-Newton fits and the free-form stage.

use nalgebra::{DMatrix, DVector, Matrix3, Point3, Rotation3, Vector3};

use super::energy::{correspond, data_gradient, landmark_pairs, Correspondences, Rejection, Terms};
use super::{EnergyRecord, EnergyWeights, FitConfig, FitError, FitResult, FitState, ScanTarget};
use crate::mesh::TriMesh;
use crate::shape::{exp_map, hat, log_map, PoseParams, ShapeError, ShapeModel};

const MAX_DAMPING: f64 = 1e10;
const LINE_SEARCH_HALVINGS: usize = 12;
const ARMIJO: f64 = 1e-4;
/// Mean squared residual (mm²) under which the fit is treated as exact.
const EXACT_FIT_MSQ: f64 = 1e-16;
const PROX_MAX_ITERATIONS: usize = 500;
const PROX_STEP_TOLERANCE: f64 = 1e-10;

/// Output of [`coregister`].
#[derive(Debug, Clone)]
pub struct Registration {
    pub state: FitState,
    /// Shape-space fit before the free-form stage.
    pub model_fit: TriMesh,
    /// `v + dv` with template connectivity.
    pub mesh: TriMesh,
}

/// Rotation and translation minimizing `Σ‖R·src + t − dst‖²` (no scale).
/// `None` with fewer than 3 pairs or collinear points.
pub fn rigid_landmark_alignment(
    src: &[Point3<f64>],
    dst: &[Point3<f64>],
) -> Option<(Rotation3<f64>, Vector3<f64>)> {
    if src.len() != dst.len() || src.len() < 3 {
        return None;
    }
    let n = src.len() as f64;
    let cs = src.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let cd = dst.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s.coords - cs) * (d.coords - cd).transpose();
    }
    let svd = h.svd(true, true);
    let mut sv = svd.singular_values;
    sv.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    if sv[1] <= 1e-12 * sv[0].max(f64::MIN_POSITIVE) {
        return None;
    }
    let (u, vt) = (svd.u?, svd.v_t?);
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let r = Rotation3::from_matrix_unchecked(r);
    Some((r, cd - r * cs))
}

fn scaled(w: &EnergyWeights, data: f64, prior: f64) -> EnergyWeights {
    EnergyWeights {
        lambda_p2p: w.lambda_p2p * data,
        lambda_n: w.lambda_n * data,
        lambda_lm: w.lambda_lm * data,
        lambda_prior: w.lambda_prior * prior,
        lambda_coup: w.lambda_coup,
    }
}

fn rejection(config: &FitConfig) -> Rejection {
    Rejection {
        median_factor: config.reject_median_factor,
        min_distance: config.reject_min_distance,
        min_cos: config.reject_angle_deg.to_radians().cos(),
    }
}

fn check_target(config: &FitConfig, target: &ScanTarget) -> FitResult<()> {
    config.validate()?;
    if config.weights.lambda_lm > 0.0 && target.landmarks().is_empty() {
        return Err(FitError::MissingLandmarks(config.weights.lambda_lm));
    }
    Ok(())
}

fn prepare_target(config: &FitConfig, target: &ScanTarget) -> ScanTarget {
    match config.scan_samples {
        Some(n) => target.clone().resampled(n, config.seed),
        None => target.clone(),
    }
}

/// Objective at fixed correspondences, solver form.
struct Problem<'a> {
    model: &'a ShapeModel,
    corr: &'a Correspondences,
    w: EnergyWeights,
    inv_var: Vec<f64>,
    basis_t: &'a DMatrix<f64>,
}

impl Problem<'_> {
    fn prior(&self, beta: &[f64]) -> f64 {
        self.w.lambda_prior
            * beta
                .iter()
                .zip(&self.inv_var)
                .map(|(b, iv)| b * b * iv)
                .sum::<f64>()
    }

    fn energy(&self, pose: &PoseParams, squared: bool) -> FitResult<f64> {
        let v = self.model.decode(pose)?;
        Ok(Terms::eval(&v, self.corr).data(&self.w, squared) + self.prior(&pose.beta))
    }

    /// Gauss-Newton system `(JᵀJ, Jᵀr)` in `(β, δθ, γ)` with a left rotation
    /// perturbation. `J` is assembled transposed so each residual is one column.
    fn normal_equations(&self, pose: &PoseParams) -> FitResult<(DMatrix<f64>, DVector<f64>)> {
        let m = self.model.component_count();
        let n = m + 6;
        let s = self.model.shape_vector(&pose.beta)?;
        let r = exp_map(&pose.rotation);
        let rm = *r.matrix();
        let vcount = self.model.vertex_count();
        let a: Vec<Vector3<f64>> = (0..vcount)
            .map(|i| r * Vector3::new(s[3 * i], s[3 * i + 1], s[3 * i + 2]))
            .collect();
        let p: Vec<Point3<f64>> = a
            .iter()
            .map(|a| Point3::from(a + pose.translation))
            .collect();
        // Column 3i+k holds ∂p_i[k]/∂β.
        let mut rbt = DMatrix::zeros(m, 3 * vcount);
        if m > 0 {
            for i in 0..vcount {
                let block = self.basis_t.columns(3 * i, 3) * rm.transpose();
                rbt.columns_mut(3 * i, 3).copy_from(&block);
            }
        }

        let c = self.corr;
        let fwd = c.fwd.iter().filter(|f| f.w > 0.0).count();
        let bwd = c.bwd.iter().filter(|b| b.w > 0.0).count();
        let use_n = self.w.lambda_n > 0.0;
        let use_p = self.w.lambda_p2p > 0.0;
        let use_lm = self.w.lambda_lm > 0.0;
        let cols = if use_p { 3 * fwd + 3 * bwd } else { 0 }
            + if use_n { fwd } else { 0 }
            + if use_lm { 3 * c.lm.len() } else { 0 }
            + if self.w.lambda_prior > 0.0 { m } else { 0 };
        let mut jt = DMatrix::zeros(n, cols);
        let mut res = DVector::zeros(cols);
        let mut col = 0;

        // Residual weight·(Σ_k b_k p_{v_k} − target), three columns.
        let mut point = |jt: &mut DMatrix<f64>,
                         col: &mut usize,
                         weight: f64,
                         verts: &[(usize, f64)],
                         target: Vector3<f64>| {
            let mut arm = Vector3::zeros();
            let mut pt = Vector3::zeros();
            for &(v, b) in verts {
                arm += a[v] * b;
                pt += p[v].coords * b;
            }
            let dr = -hat(&arm) * weight;
            for k in 0..3 {
                let cc = *col + k;
                let mut jc = jt.column_mut(cc);
                if m > 0 {
                    let mut head = jc.rows_mut(0, m);
                    for &(v, b) in verts {
                        head.axpy(weight * b, &rbt.column(3 * v + k), 1.0);
                    }
                }
                for q in 0..3 {
                    jc[m + q] = dr[(k, q)];
                }
                jc[m + 3 + k] = weight;
                res[cc] = weight * (pt[k] - target[k]);
            }
            *col += 3;
        };

        if use_p {
            let cw = self.w.lambda_p2p.sqrt();
            for (i, f) in c.fwd.iter().enumerate() {
                if f.w > 0.0 {
                    point(&mut jt, &mut col, cw * f.w.sqrt(), &[(i, 1.0)], f.q.coords);
                }
            }
            for b in &c.bwd {
                if b.w > 0.0 {
                    let verts = [
                        (b.tri[0], b.bary[0]),
                        (b.tri[1], b.bary[1]),
                        (b.tri[2], b.bary[2]),
                    ];
                    point(&mut jt, &mut col, cw * b.w.sqrt(), &verts, b.s.coords);
                }
            }
        }
        if use_lm {
            let cw = self.w.lambda_lm.sqrt();
            for (i, l) in &c.lm {
                point(&mut jt, &mut col, cw, &[(*i, 1.0)], l.coords);
            }
        }
        if use_n {
            let cn = self.w.lambda_n.sqrt();
            for (i, f) in c.fwd.iter().enumerate() {
                if f.w == 0.0 {
                    continue;
                }
                let wgt = cn * f.w.sqrt();
                let mut jc = jt.column_mut(col);
                if m > 0 {
                    let mut head = jc.rows_mut(0, m);
                    for k in 0..3 {
                        head.axpy(wgt * f.n[k], &rbt.column(3 * i + k), 1.0);
                    }
                }
                // nᵀ·(−[a]×) = (a × n)ᵀ
                let jr = a[i].cross(&f.n) * wgt;
                for q in 0..3 {
                    jc[m + q] = jr[q];
                    jc[m + 3 + q] = f.n[q] * wgt;
                }
                res[col] = wgt * (p[i] - f.q).dot(&f.n);
                col += 1;
            }
        }
        if self.w.lambda_prior > 0.0 {
            for (i, (b, iv)) in pose.beta.iter().zip(&self.inv_var).enumerate() {
                let c = (self.w.lambda_prior * iv).sqrt();
                jt[(i, col)] = c;
                res[col] = c * b;
                col += 1;
            }
        }
        debug_assert_eq!(col, cols);
        let h = &jt * jt.transpose();
        let g = &jt * &res;
        Ok((h, g))
    }
}

fn apply_step(pose: &PoseParams, step: &DVector<f64>, t: f64) -> PoseParams {
    let m = pose.beta.len();
    let beta = pose
        .beta
        .iter()
        .enumerate()
        .map(|(i, b)| b + t * step[i])
        .collect();
    let d = Vector3::new(step[m], step[m + 1], step[m + 2]) * t;
    let rotation = log_map(&(exp_map(&d) * exp_map(&pose.rotation)));
    let translation = pose.translation + Vector3::new(step[m + 3], step[m + 4], step[m + 5]) * t;
    PoseParams {
        beta,
        rotation,
        translation,
    }
}

struct InnerResult {
    pose: PoseParams,
    energy: f64,
    accepted: usize,
    stalled: bool,
}

/// Levenberg-damped Gauss-Newton with Armijo backtracking. Never increases the energy.
fn gauss_newton(
    problem: &Problem,
    mut pose: PoseParams,
    iterations: usize,
    damping: &mut f64,
) -> FitResult<InnerResult> {
    let mut energy = problem.energy(&pose, true)?;
    let mut accepted = 0;
    let mut stalled = false;
    for _ in 0..iterations {
        let (h, g) = problem.normal_equations(&pose)?;
        let scale = h.diagonal().amax().max(f64::MIN_POSITIVE);
        let mut step_taken = false;
        while *damping <= MAX_DAMPING {
            let mut a = h.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += *damping * h[(i, i)] + 1e-12 * scale;
            }
            let Some(chol) = a.cholesky() else {
                *damping = (*damping * 10.0).max(1e-6);
                continue;
            };
            let step = -chol.solve(&g);
            let slope = g.dot(&step);
            if !(slope < 0.0) {
                break;
            }
            let mut t = 1.0;
            for _ in 0..LINE_SEARCH_HALVINGS {
                let cand = apply_step(&pose, &step, t);
                let e = problem.energy(&cand, true)?;
                if e.is_finite() && e <= energy + ARMIJO * t * slope {
                    assert!(e <= energy, "accepted step increased the energy");
                    let gain = energy - e;
                    pose = cand;
                    energy = e;
                    accepted += 1;
                    step_taken = gain > 0.0;
                    break;
                }
                t *= 0.5;
            }
            if step_taken {
                *damping = (*damping / 3.0).max(1e-9);
                break;
            }
            *damping = (*damping * 10.0).max(1e-6);
        }
        if !step_taken {
            stalled = *damping > MAX_DAMPING;
            *damping = damping.min(1.0);
            break;
        }
    }
    Ok(InnerResult {
        pose,
        energy,
        accepted,
        stalled,
    })
}

fn non_finite(stage: usize, iteration: usize, detail: String) -> FitError {
    FitError::NonFinite {
        stage,
        iteration,
        detail,
    }
}

/// Fit `(β, θ, γ)` to a scan. Without `init`, the pose starts from a rigid
/// landmark alignment (or identity if fewer than 3 landmarks pair up).
pub fn fit_model(
    model: &ShapeModel,
    target: &ScanTarget,
    config: &FitConfig,
    init: Option<&PoseParams>,
) -> FitResult<FitState> {
    check_target(config, target)?;
    if model.triangles().is_empty() {
        return Err(ShapeError::Invalid("model has no connectivity".into()).into());
    }
    let target = prepare_target(config, target);
    let m = model.component_count();
    let lm = landmark_pairs(model.landmarks(), &target);
    let mut pose = match init {
        Some(p) => {
            if p.beta.len() != m {
                return Err(ShapeError::BetaLength {
                    expected: m,
                    actual: p.beta.len(),
                }
                .into());
            }
            p.clone()
        }
        None => {
            let template = model.template_points();
            let src: Vec<_> = lm.iter().map(|(i, _)| template[*i]).collect();
            let dst: Vec<_> = lm.iter().map(|(_, p)| *p).collect();
            match rigid_landmark_alignment(&src, &dst) {
                Some((r, t)) => PoseParams {
                    beta: vec![0.0; m],
                    rotation: log_map(&r),
                    translation: t,
                },
                None => PoseParams::zero(m),
            }
        }
    };

    let eps = model.variance_floor();
    let basis_t = model.basis().transpose();
    let inv_var: Vec<f64> = model.variances().iter().map(|l| 1.0 / l.max(eps)).collect();
    let reject = rejection(config);
    let pairs = model.vertex_count() + target.samples().len();
    let mut history = Vec::new();
    let mut outer = 0;
    let mut inner = 0;
    let mut converged = false;
    let mut damping = 1e-3;

    'stages: for (si, stage) in config.anneal.stages.iter().enumerate() {
        let w = scaled(&config.weights, stage.data, stage.prior);
        let last = si + 1 == config.anneal.stages.len();
        // The last stage may use whatever is left of the global budget.
        let cap = if last { usize::MAX } else { stage.iterations };
        let reject = if last {
            Rejection {
                min_distance: config.final_reject_min_distance,
                ..reject
            }
        } else {
            reject
        };
        let mut prev: Option<f64> = None;
        for it in 0..cap {
            if outer >= config.max_outer_iterations {
                break 'stages;
            }
            let vertices = model.decode(&pose)?;
            let corr = correspond(&vertices, model.triangles(), &target, &lm, Some(&reject));
            let problem = Problem {
                model,
                corr: &corr,
                w,
                inv_var: inv_var.clone(),
                basis_t: &basis_t,
            };
            let before = problem.energy(&pose, true)?;
            if !before.is_finite() {
                return Err(non_finite(
                    si,
                    it,
                    format!("energy {before} at pose {pose:?}"),
                ));
            }
            let res = gauss_newton(&problem, pose, config.inner_iterations, &mut damping)?;
            if !res.energy.is_finite() {
                return Err(non_finite(
                    si,
                    it,
                    format!("energy {} after inner solve", res.energy),
                ));
            }
            pose = res.pose;
            inner += res.accepted;
            outer += 1;
            let reported = problem.energy(&pose, false)?;
            history.push(EnergyRecord {
                stage: si,
                iteration: it,
                before,
                after: res.energy,
                reported,
                accepted_steps: res.accepted,
                rejected_pairs: corr.rejected,
            });
            log::debug!(
                "stage {si} iteration {it}: {before:.6e} -> {:.6e} ({} steps, {} rejected)",
                res.energy,
                res.accepted,
                corr.rejected
            );
            if before <= EXACT_FIT_MSQ * pairs as f64 {
                converged = true;
                break 'stages;
            }
            let settled = match prev {
                Some(p) => (p - res.energy).abs() <= config.tolerance * p.abs(),
                None => false,
            };
            prev = Some(res.energy);
            if settled || res.stalled {
                if last {
                    converged = settled;
                    break 'stages;
                }
                break;
            }
        }
    }
    if !converged {
        log::info!("fit stopped after {outer} outer iterations without converging");
    }
    Ok(FitState {
        pose,
        dv: Vec::new(),
        weights: config.weights,
        anneal: config.anneal.clone(),
        outer_iterations: outer,
        inner_iterations: inner,
        coupling_iterations: 0,
        converged,
        history,
    })
}

fn mesh_like(model: &ShapeModel, vertices: Vec<Point3<f64>>) -> FitResult<TriMesh> {
    let template = model.decode_mesh(&PoseParams::zero(model.component_count()))?;
    Ok(template.with_vertices(vertices)?)
}

/// Shape-space fit followed by a free-form displacement field held near it by
/// the group-sparse coupling `λ_coup·Σ‖dv_i‖`.
pub fn coregister(
    model: &ShapeModel,
    target: &ScanTarget,
    config: &FitConfig,
    init: Option<&PoseParams>,
) -> FitResult<Registration> {
    let mut state = fit_model(model, target, config, init)?;
    let target = prepare_target(config, target);
    let lm = landmark_pairs(model.landmarks(), &target);
    let v0 = model.decode(&state.pose)?;
    let last = config.anneal.stages.last().expect("validated schedule");
    let w = scaled(&config.weights, last.data, 0.0);
    let lambda = config.weights.lambda_coup;
    let reject = Rejection {
        min_distance: config.coupling_reject_min_distance,
        ..rejection(config)
    };
    let stage = config.anneal.stages.len();
    let tris = model.triangles();

    let mut dv = vec![Vector3::zeros(); v0.len()];
    let moved = |dv: &[Vector3<f64>]| -> Vec<Point3<f64>> {
        v0.iter().zip(dv).map(|(p, d)| p + d).collect()
    };
    let group = |dv: &[Vector3<f64>]| dv.iter().map(|d| d.norm()).sum::<f64>() * lambda;
    let mut prev: Option<f64> = None;
    for it in 0..config.coupling_iterations {
        let x = moved(&dv);
        let corr = correspond(&x, tris, &target, &lm, Some(&reject));
        let objective =
            |dv: &[Vector3<f64>]| Terms::eval(&moved(dv), &corr).data(&w, true) + group(dv);
        let before = objective(&dv);
        if !before.is_finite() {
            return Err(non_finite(stage, it, format!("coupled energy {before}")));
        }

        // Gershgorin bound on the Hessian of the smooth part.
        let mut diag = vec![0.0; v0.len()];
        for (d, f) in diag.iter_mut().zip(&corr.fwd) {
            *d += f.w * (w.lambda_p2p + w.lambda_n);
        }
        for b in &corr.bwd {
            for (k, &i) in b.tri.iter().enumerate() {
                diag[i] += b.w * w.lambda_p2p * b.bary[k];
            }
        }
        for (i, _) in &corr.lm {
            diag[*i] += w.lambda_lm;
        }
        let lip = 2.0 * diag.iter().cloned().fold(0.0, f64::max);

        let mut current = before;
        let mut steps = 0;
        if lip > 0.0 {
            let shrink = lambda / lip;
            for _ in 0..PROX_MAX_ITERATIONS {
                let g = data_gradient(&moved(&dv), &corr, &w, true);
                let mut change: f64 = 0.0;
                let next: Vec<Vector3<f64>> = dv
                    .iter()
                    .zip(&g)
                    .map(|(d, g)| {
                        let z = d - g / lip;
                        let n = z.norm();
                        let out = if n > shrink {
                            z * (1.0 - shrink / n)
                        } else {
                            Vector3::zeros()
                        };
                        change = change.max((out - d).amax());
                        out
                    })
                    .collect();
                let e = objective(&next);
                if !(e <= current) {
                    break;
                }
                dv = next;
                current = e;
                steps += 1;
                if change < PROX_STEP_TOLERANCE {
                    break;
                }
            }
        }
        state.inner_iterations += steps;
        state.coupling_iterations += 1;
        let reported = Terms::eval(&moved(&dv), &corr).data(&w, false) + group(&dv);
        state.history.push(EnergyRecord {
            stage,
            iteration: it,
            before,
            after: current,
            reported,
            accepted_steps: steps,
            rejected_pairs: corr.rejected,
        });
        let done = match prev {
            Some(p) => (p - current).abs() <= config.tolerance * p.abs(),
            None => steps == 0,
        };
        prev = Some(current);
        if done {
            break;
        }
    }
    let model_fit = mesh_like(model, v0.clone())?;
    let mesh = mesh_like(model, moved(&dv))?;
    state.dv = dv.iter().map(|d| [d.x, d.y, d.z]).collect();
    Ok(Registration {
        state,
        model_fit,
        mesh,
    })
}
