//! Linear statistical shape model: `v = R(θ)·(v_t + B·β) + γ`.
//!
//! Vertex arrays are flattened as `x0, y0, z0, x1, …` (length `3V`); the basis
//! is a `3V × m` matrix with orthonormal columns.

mod io;
pub mod rotation;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Point3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{LandmarkSet, MeshError, TriMesh};

pub use io::{load_model, model_paths, save_model};
pub use rotation::{canonical, exp_map, hat, left_jacobian, log_map};

#[derive(Debug, Error)]
pub enum ShapeError {
    #[error("PCA needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("sample {index} has {actual} vertices, expected {expected}")]
    LengthMismatch {
        index: usize,
        expected: usize,
        actual: usize,
    },
    #[error("invalid sample weights: {0}")]
    BadWeights(String),
    #[error("beta has {actual} coefficients, model has {expected} components")]
    BetaLength { expected: usize, actual: usize },
    #[error("component count {k} outside 1..={m}")]
    ComponentRange { k: usize, m: usize },
    #[error("invalid shape model: {0}")]
    Invalid(String),
    #[error("model file {path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

pub type ShapeResult<T> = Result<T, ShapeError>;

/// Where a model came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub sample_count: usize,
    pub synthetic_count: usize,
    pub real_count: usize,
    pub real_weight: f64,
    /// Per-sample weights as given (before normalization).
    pub weights: Vec<f64>,
    pub seed: Option<u64>,
}

/// Shape coefficients plus rigid pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    pub beta: Vec<f64>,
    /// Axis-angle, radians.
    pub rotation: Vector3<f64>,
    /// mm.
    pub translation: Vector3<f64>,
}

impl PoseParams {
    pub fn zero(m: usize) -> Self {
        Self {
            beta: vec![0.0; m],
            rotation: Vector3::zeros(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_beta(beta: Vec<f64>) -> Self {
        Self {
            beta,
            rotation: Vector3::zeros(),
            translation: Vector3::zeros(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeModel {
    template: DVector<f64>,
    basis: DMatrix<f64>,
    variances: Vec<f64>,
    total_variance: f64,
    triangles: Arc<Vec<[usize; 3]>>,
    region_labels: Option<Vec<u8>>,
    landmarks: Option<LandmarkSet>,
    provenance: Provenance,
}

const ORTHONORMAL_TOLERANCE: f64 = 1e-8;

pub fn flatten(points: &[Point3<f64>]) -> DVector<f64> {
    DVector::from_iterator(
        points.len() * 3,
        points.iter().flat_map(|p| [p.x, p.y, p.z]),
    )
}

pub fn unflatten(v: &DVector<f64>) -> Vec<Point3<f64>> {
    v.as_slice()
        .chunks_exact(3)
        .map(|c| Point3::new(c[0], c[1], c[2]))
        .collect()
}

impl ShapeModel {
    /// Assemble a model from its arrays, checking every invariant.
    pub fn new(
        template: DVector<f64>,
        basis: DMatrix<f64>,
        variances: Vec<f64>,
        total_variance: f64,
    ) -> ShapeResult<Self> {
        let bad = |m: String| Err(ShapeError::Invalid(m));
        let p = template.len();
        if p == 0 || p % 3 != 0 {
            return bad(format!(
                "template length {p} is not a positive multiple of 3"
            ));
        }
        if basis.nrows() != p || basis.ncols() != variances.len() {
            return bad(format!(
                "basis is {}x{}, expected {p}x{}",
                basis.nrows(),
                basis.ncols(),
                variances.len()
            ));
        }
        if variances.len() > p {
            return bad(format!("{} components exceed 3V = {p}", variances.len()));
        }
        if variances.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("variances must be finite and nonnegative".into());
        }
        if variances.windows(2).any(|w| w[1] > w[0]) {
            return bad("variances are not in descending order".into());
        }
        if !(total_variance.is_finite() && total_variance >= 0.0) {
            return bad(format!("total variance {total_variance}"));
        }
        let sum: f64 = variances.iter().sum();
        if sum > total_variance * (1.0 + 1e-12) {
            return bad(format!(
                "component variances sum to {sum}, more than the total {total_variance}"
            ));
        }
        if !variances.is_empty() {
            let gram = basis.transpose() * &basis;
            let err = (gram - DMatrix::identity(variances.len(), variances.len())).amax();
            if err > ORTHONORMAL_TOLERANCE {
                return bad(format!("basis is not orthonormal (Gram error {err:e})"));
            }
        }
        Ok(Self {
            template,
            basis,
            variances,
            total_variance,
            triangles: Arc::new(Vec::new()),
            region_labels: None,
            landmarks: None,
            provenance: Provenance::default(),
        })
    }

    /// Attach connectivity, region labels and vertex-bound landmarks from a
    /// mesh with the model's topology.
    pub fn with_topology(mut self, mesh: &TriMesh) -> ShapeResult<Self> {
        if mesh.vertex_count() != self.vertex_count() {
            return Err(MeshError::VertexCountMismatch {
                expected: self.vertex_count(),
                actual: mesh.vertex_count(),
            }
            .into());
        }
        self.triangles = mesh.shared_triangles();
        self.region_labels = mesh.region_labels().map(<[u8]>::to_vec);
        self.landmarks = mesh.landmarks().filter(|l| l.is_vertex_bound()).cloned();
        Ok(self)
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> ShapeResult<Self> {
        if provenance.sample_count > 0 && self.component_count() + 1 > provenance.sample_count {
            return Err(ShapeError::Invalid(format!(
                "{} components from {} samples",
                self.component_count(),
                provenance.sample_count
            )));
        }
        self.provenance = provenance;
        Ok(self)
    }

    pub fn vertex_count(&self) -> usize {
        self.template.len() / 3
    }

    pub fn component_count(&self) -> usize {
        self.variances.len()
    }

    pub fn template(&self) -> &DVector<f64> {
        &self.template
    }

    pub fn template_points(&self) -> Vec<Point3<f64>> {
        unflatten(&self.template)
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Total variance of the training set (all nonzero components, retained or not).
    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn region_labels(&self) -> Option<&[u8]> {
        self.region_labels.as_deref()
    }

    pub fn landmarks(&self) -> Option<&LandmarkSet> {
        self.landmarks.as_ref()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// The first `k` components (k ≤ m); total variance is kept.
    pub fn truncated(&self, k: usize) -> ShapeResult<Self> {
        if k > self.component_count() {
            return Err(ShapeError::ComponentRange {
                k,
                m: self.component_count(),
            });
        }
        let mut out = self.clone();
        out.basis = self.basis.columns(0, k).into_owned();
        out.variances.truncate(k);
        Ok(out)
    }

    fn check_beta(&self, beta: &[f64]) -> ShapeResult<()> {
        if beta.len() != self.component_count() {
            return Err(ShapeError::BetaLength {
                expected: self.component_count(),
                actual: beta.len(),
            });
        }
        Ok(())
    }

    /// `v_t + B·β`, flattened.
    pub fn shape_vector(&self, beta: &[f64]) -> ShapeResult<DVector<f64>> {
        self.check_beta(beta)?;
        let mut v = self.template.clone();
        if !beta.is_empty() {
            v.gemv(1.0, &self.basis, &DVector::from_column_slice(beta), 1.0);
        }
        Ok(v)
    }

    /// `R(θ)·(v_t + B·β) + γ`.
    pub fn decode(&self, pose: &PoseParams) -> ShapeResult<Vec<Point3<f64>>> {
        let v = self.shape_vector(&pose.beta)?;
        let r = exp_map(&pose.rotation);
        let identity = pose.rotation == Vector3::zeros();
        Ok(v.as_slice()
            .chunks_exact(3)
            .map(|c| {
                let p = Vector3::new(c[0], c[1], c[2]);
                let q = if identity { p } else { r * p };
                Point3::from(q + pose.translation)
            })
            .collect())
    }

    pub fn decode_mesh(&self, pose: &PoseParams) -> ShapeResult<TriMesh> {
        if self.triangles.is_empty() {
            return Err(ShapeError::Invalid("model has no connectivity".into()));
        }
        let mut m = TriMesh::with_shared_triangles(self.decode(pose)?, self.triangles.clone())?;
        if let Some(l) = &self.region_labels {
            m = m.with_region_labels(l.clone())?;
        }
        if let Some(l) = &self.landmarks {
            m = m.with_landmarks(l.clone())?;
        }
        Ok(m)
    }

    /// Least-squares coefficients `β = Bᵀ·(v − v_t)` at identity pose.
    pub fn project(&self, vertices: &[Point3<f64>]) -> ShapeResult<PoseParams> {
        if vertices.len() != self.vertex_count() {
            return Err(MeshError::VertexCountMismatch {
                expected: self.vertex_count(),
                actual: vertices.len(),
            }
            .into());
        }
        let d = flatten(vertices) - &self.template;
        let beta = self.basis.tr_mul(&d);
        Ok(PoseParams::from_beta(beta.as_slice().to_vec()))
    }

    /// Variance floor below which a component is treated as `ε = 1e-12·λ_1`.
    pub fn variance_floor(&self) -> f64 {
        let l1 = self.variances.first().copied().unwrap_or(0.0);
        (1e-12 * l1).max(f64::MIN_POSITIVE)
    }

    pub fn mahalanobis_sq(&self, beta: &[f64]) -> ShapeResult<f64> {
        self.check_beta(beta)?;
        let eps = self.variance_floor();
        Ok(beta
            .iter()
            .zip(&self.variances)
            .map(|(b, l)| b * b / l.max(eps))
            .sum())
    }

    /// `β_i ~ N(0, λ_i)` clipped to `±sigma_clip·√λ_i`; identity pose.
    pub fn sample(&self, rng: &mut impl Rng, sigma_clip: f64) -> PoseParams {
        let beta = self
            .variances
            .iter()
            .map(|l| {
                let z: f64 = rng.sample(StandardNormal);
                z.clamp(-sigma_clip, sigma_clip) * l.sqrt()
            })
            .collect();
        PoseParams::from_beta(beta)
    }

    /// Fraction of total variance explained by the first `k` components.
    pub fn cumulative_variance(&self, k: usize) -> ShapeResult<f64> {
        let m = self.component_count();
        if k == 0 || k > m {
            return Err(ShapeError::ComponentRange { k, m });
        }
        if self.total_variance == 0.0 {
            return Ok(1.0);
        }
        let s: f64 = self.variances[..k].iter().sum();
        Ok((s / self.total_variance).min(1.0))
    }
}

/// Weighted PCA over vertex arrays sharing one topology.
///
/// Weights are normalized to sum 1; the covariance is `Σ w_i (x_i − μ)(x_i − μ)ᵀ`.
/// Components come from a thin SVD of the weight-scaled centered data,
/// computed as QR followed by an SVD of the small triangular factor.
/// `components = None` keeps the full numerical rank.
pub fn fit_pca(
    samples: &[&[Point3<f64>]],
    weights: &[f64],
    components: Option<usize>,
) -> ShapeResult<ShapeModel> {
    let n = samples.len();
    if n < 2 {
        return Err(ShapeError::TooFewSamples(n));
    }
    let v = samples[0].len();
    if v == 0 {
        return Err(ShapeError::Invalid("samples have no vertices".into()));
    }
    for (i, s) in samples.iter().enumerate() {
        if s.len() != v {
            return Err(ShapeError::LengthMismatch {
                index: i,
                expected: v,
                actual: s.len(),
            });
        }
    }
    if weights.len() != n {
        return Err(ShapeError::BadWeights(format!(
            "{} weights for {n} samples",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(ShapeError::BadWeights(
            "weights must be finite and >= 0".into(),
        ));
    }
    let wsum: f64 = weights.iter().sum();
    if !(wsum > 0.0) {
        return Err(ShapeError::BadWeights("weights sum to zero".into()));
    }
    let w: Vec<f64> = weights.iter().map(|x| x / wsum).collect();
    let p = 3 * v;

    // Mean as an offset from the first sample, so identical samples give it exactly.
    let base = flatten(samples[0]);
    let mut mean = base.clone();
    for (s, wi) in samples.iter().zip(&w).skip(1) {
        if *wi != 0.0 {
            mean.axpy(*wi, &(flatten(s) - &base), 1.0);
        }
    }
    let mut a = DMatrix::zeros(p, n);
    for (j, (s, wi)) in samples.iter().zip(&w).enumerate() {
        if *wi != 0.0 {
            let col = (flatten(s) - &mean) * wi.sqrt();
            a.set_column(j, &col);
        }
    }
    let total_sq = a.norm_squared();

    let (u, sigma) = if total_sq == 0.0 {
        (DMatrix::zeros(p, 0), Vec::new())
    } else {
        thin_left_svd(a)
    };
    let tol = sigma.first().copied().unwrap_or(0.0) * p.max(n) as f64 * f64::EPSILON;
    let positive = w.iter().filter(|x| **x > 0.0).count();
    let rank = sigma
        .iter()
        .take_while(|s| **s > tol)
        .count()
        .min(positive.saturating_sub(1));
    let m = match components {
        Some(k) if k > rank => {
            log::warn!("requested {k} components but the data has rank {rank}; keeping {rank}");
            rank
        }
        Some(k) => k,
        None => rank,
    };
    let lambdas: Vec<f64> = sigma[..rank].iter().map(|s| s * s).collect();
    let total_variance: f64 = lambdas.iter().sum();
    let mut basis = u.columns(0, m).into_owned();
    for mut col in basis.column_iter_mut() {
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
    }
    let model = ShapeModel::new(mean, basis, lambdas[..m].to_vec(), total_variance)?;
    model.with_provenance(Provenance {
        sample_count: n,
        synthetic_count: n,
        real_count: 0,
        real_weight: 1.0,
        weights: weights.to_vec(),
        seed: None,
    })
}

/// Left singular vectors and singular values, sorted descending.
fn thin_left_svd(a: DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let (p, n) = a.shape();
    let (u, s) = if p >= n {
        let qr = a.qr();
        let q = qr.q();
        let svd = qr.r().svd(true, false);
        (q * svd.u.expect("requested"), svd.singular_values)
    } else {
        let svd = a.svd(true, false);
        (svd.u.expect("requested"), svd.singular_values)
    };
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]).then(i.cmp(&j)));
    let sorted_u = DMatrix::from_fn(p, order.len(), |r, c| u[(r, order[c])]);
    (sorted_u, order.iter().map(|&i| s[i]).collect())
}
