//! Model-quality metrics over a sweep of component counts: compactness,
//! generalization and specificity, plus JSON / CSV / SVG reports.

mod report;

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fitting::{
    fit_model, mesh_to_scan_distance, symmetric_mean_distance, FitConfig, FitError, ScanTarget,
};
use crate::mesh::{LandmarkSet, MeshError, SpatialIndex, TriMesh};
use crate::shape::{ShapeError, ShapeModel};

pub use report::{emit_report, load_report, render_svg, REPORT_SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation input: {0}")]
    BadInput(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("report {path}: {message}")]
    Report { path: String, message: String },
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

pub type EvalResult<T> = Result<T, EvalError>;

/// Mean and population standard deviation of one metric at one k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub k: usize,
    /// `None` when no value was included.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Values included in the mean.
    pub n: usize,
    /// Values left out (non-converged fits).
    pub excluded: usize,
}

impl MetricSummary {
    pub fn from_values(k: usize, values: &[f64], excluded: usize) -> Self {
        let n = values.len();
        let (mean, std) = if n == 0 {
            (None, None)
        } else {
            let mean = values.iter().sum::<f64>() / n as f64;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            (Some(mean), Some(var.sqrt()))
        };
        Self {
            k,
            mean,
            std,
            n,
            excluded,
        }
    }
}

/// One test-mesh fit at one k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDistance {
    pub k: usize,
    pub test_id: String,
    pub mean: f64,
    pub max: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetadata {
    pub seed: u64,
    pub sigma_clip: f64,
    pub specificity_samples: usize,
    pub shortlist: Option<usize>,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    /// sha256 over the train and test ids, see [`split_hash`].
    pub split_hash: String,
    /// No id appears in both sets.
    pub disjoint: bool,
    pub model_checksum: Option<String>,
}

impl EvalMetadata {
    pub fn new(
        seed: u64,
        spec: &SpecificityConfig,
        train_ids: Vec<String>,
        test_ids: Vec<String>,
    ) -> Self {
        let disjoint = test_ids.iter().all(|t| !train_ids.contains(t));
        Self {
            seed,
            sigma_clip: spec.sigma_clip,
            specificity_samples: spec.samples,
            shortlist: spec.shortlist,
            split_hash: split_hash(&train_ids, &test_ids),
            train_ids,
            test_ids,
            disjoint,
            model_checksum: None,
        }
    }
}

/// Hex sha256 of the sorted train ids and sorted test ids, one per line, the
/// two groups separated by a `--` line.
pub fn split_hash(train_ids: &[String], test_ids: &[String]) -> String {
    let sorted = |ids: &[String]| {
        let mut v = ids.to_vec();
        v.sort();
        v
    };
    let mut h = Sha256::new();
    for id in sorted(train_ids) {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    h.update(b"--\n");
    for id in sorted(test_ids) {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub component_counts: Vec<usize>,
    /// Cumulative variance per k.
    pub compactness: Vec<f64>,
    pub generalization: Vec<MetricSummary>,
    pub specificity: Vec<MetricSummary>,
    /// Every generalization fit, converged or not.
    pub fits: Vec<FitDistance>,
    pub metadata: EvalMetadata,
}

impl EvalReport {
    pub fn validate(&self) -> EvalResult<()> {
        let bad = |m: String| Err(EvalError::BadInput(m));
        let n = self.component_counts.len();
        if self.compactness.len() != n
            || self.generalization.len() != n
            || self.specificity.len() != n
        {
            return bad("metric lengths differ from component_counts".into());
        }
        if self.compactness.windows(2).any(|w| w[1] < w[0]) {
            return bad("compactness decreases".into());
        }
        let dists = self
            .generalization
            .iter()
            .chain(&self.specificity)
            .flat_map(|s| s.mean.into_iter().chain(s.std))
            .chain(self.fits.iter().flat_map(|f| [f.mean, f.max]));
        if dists.clone().any(|d| !(d >= 0.0)) {
            return bad("negative or NaN distance".into());
        }
        Ok(())
    }
}

/// Per-vertex distances of one fitted mesh, written as mesh attributes.
#[derive(Debug, Clone)]
pub struct DistanceMap {
    pub name: String,
    pub mesh: TriMesh,
    pub distances: Vec<f64>,
}

fn check_ks(ks: &[usize], m: usize, min: usize) -> EvalResult<()> {
    if ks.is_empty() {
        return Err(EvalError::BadInput("no component counts".into()));
    }
    match ks.iter().find(|&&k| k < min || k > m) {
        Some(k) => Err(ShapeError::ComponentRange { k: *k, m }.into()),
        None => Ok(()),
    }
}

pub fn eval_compactness(model: &ShapeModel, ks: &[usize]) -> EvalResult<Vec<f64>> {
    check_ks(ks, model.component_count(), 1)?;
    Ok(ks
        .iter()
        .map(|&k| model.cumulative_variance(k))
        .collect::<Result<_, _>>()?)
}

/// A held-out mesh and its optional scan-side landmarks.
#[derive(Debug, Clone)]
pub struct TestCase {
    pub id: String,
    pub mesh: TriMesh,
    pub landmarks: Option<LandmarkSet>,
}

#[derive(Debug, Clone)]
pub struct Generalization {
    pub summary: Vec<MetricSummary>,
    pub fits: Vec<FitDistance>,
    /// Distance maps of the fits at the largest k.
    pub maps: Vec<DistanceMap>,
}

/// Fit every test mesh with the model truncated to each k. Non-converged
/// fits are kept in `fits` but left out of the means.
pub fn eval_generalization(
    model: &ShapeModel,
    tests: &[TestCase],
    ks: &[usize],
    config: &FitConfig,
) -> EvalResult<Generalization> {
    check_ks(ks, model.component_count(), 1)?;
    if tests.is_empty() {
        return Err(EvalError::BadInput("no test meshes".into()));
    }
    config.validate()?;
    let targets = tests
        .iter()
        .map(|t| ScanTarget::new(t.mesh.clone(), t.landmarks.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    let models = ks
        .iter()
        .map(|&k| model.truncated(k))
        .collect::<Result<Vec<_>, _>>()?;
    let kmax = *ks.iter().max().unwrap_or(&0);
    let pairs: Vec<(usize, usize)> = (0..ks.len())
        .flat_map(|a| (0..tests.len()).map(move |b| (a, b)))
        .collect();
    let results = pairs
        .par_iter()
        .map(
            |&(a, b)| -> EvalResult<(FitDistance, Option<DistanceMap>)> {
                let state = fit_model(&models[a], &targets[b], config, None)?;
                let fitted = models[a].decode_mesh(&state.pose)?;
                let d = mesh_to_scan_distance(&fitted, &tests[b].mesh);
                log::info!("k={} {}: {:.4} mm", ks[a], tests[b].id, d.mean);
                let fit = FitDistance {
                    k: ks[a],
                    test_id: tests[b].id.clone(),
                    mean: d.mean,
                    max: d.max,
                    converged: state.converged,
                };
                let map = (ks[a] == kmax).then(|| DistanceMap {
                    name: format!("{}_k{}", tests[b].id, ks[a]),
                    mesh: fitted,
                    distances: d.per_vertex,
                });
                Ok((fit, map))
            },
        )
        .collect::<EvalResult<Vec<_>>>()?;
    let mut fits = Vec::with_capacity(results.len());
    let mut maps = Vec::new();
    for (f, m) in results {
        fits.push(f);
        maps.extend(m);
    }
    // Repeated ks yield one map set.
    maps.truncate(tests.len());
    let summary = ks
        .iter()
        .enumerate()
        .map(|(a, &k)| {
            let row = &fits[a * tests.len()..(a + 1) * tests.len()];
            let values: Vec<f64> = row.iter().filter(|f| f.converged).map(|f| f.mean).collect();
            let excluded = row.len() - values.len();
            if excluded > 0 {
                log::warn!(
                    "k={k}: {excluded} fits did not converge and are excluded from the mean"
                );
            }
            MetricSummary::from_values(k, &values, excluded)
        })
        .collect();
    Ok(Generalization {
        summary,
        fits,
        maps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecificityConfig {
    pub samples: usize,
    pub sigma_clip: f64,
    /// Exact surface distances are computed only for this many training
    /// meshes closest by mean vertex distance; `None` checks all of them.
    pub shortlist: Option<usize>,
}

impl Default for SpecificityConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            sigma_clip: 3.0,
            shortlist: Some(4),
        }
    }
}

/// Training meshes with their spatial indices, reused across samples and ks.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    indices: Vec<SpatialIndex>,
    flat: Vec<Vec<f64>>,
}

fn mean_vertex_distance(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a
        .chunks_exact(3)
        .zip(b.chunks_exact(3))
        .map(|(p, q)| {
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
        })
        .sum();
    s / (a.len() / 3) as f64
}

impl TrainingSet {
    pub fn new(meshes: &[TriMesh]) -> EvalResult<Self> {
        if meshes.is_empty() {
            return Err(EvalError::BadInput("training set is empty".into()));
        }
        if let Some(i) = meshes.iter().position(|m| m.triangle_count() == 0) {
            return Err(EvalError::BadInput(format!(
                "training mesh {i} has no triangles"
            )));
        }
        Ok(Self {
            indices: meshes.par_iter().map(SpatialIndex::build).collect(),
            flat: meshes.iter().map(|m| m.flat_coords()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    /// Candidate training meshes for a query, never including `skip`.
    fn candidates(
        &self,
        flat: &[f64],
        shortlist: Option<usize>,
        skip: Option<usize>,
    ) -> Vec<usize> {
        let (mut same, other): (Vec<usize>, Vec<usize>) = (0..self.len())
            .filter(|&i| Some(i) != skip)
            .partition(|&i| self.flat[i].len() == flat.len());
        if let Some(s) = shortlist {
            let mut ranked: Vec<(f64, usize)> = same
                .iter()
                .map(|&i| (mean_vertex_distance(flat, &self.flat[i]), i))
                .collect();
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            same = ranked.into_iter().take(s.max(1)).map(|(_, i)| i).collect();
        }
        same.into_iter().chain(other).collect()
    }

    fn nearest_indexed(
        &self,
        index: &SpatialIndex,
        flat: &[f64],
        shortlist: Option<usize>,
        skip: Option<usize>,
    ) -> f64 {
        self.candidates(flat, shortlist, skip)
            .into_iter()
            .map(|i| symmetric_mean_distance(index, &self.indices[i]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Symmetric mean surface distance from `mesh` to its nearest training mesh.
    pub fn nearest_distance(&self, mesh: &TriMesh, shortlist: Option<usize>) -> f64 {
        self.nearest_indexed(
            &SpatialIndex::build(mesh),
            &mesh.flat_coords(),
            shortlist,
            None,
        )
    }

    /// Mean over training meshes of the distance to their nearest other training mesh.
    pub fn mean_nearest_neighbor_distance(&self, shortlist: Option<usize>) -> EvalResult<f64> {
        if self.len() < 2 {
            return Err(EvalError::BadInput(
                "nearest-neighbour distance needs 2 training meshes".into(),
            ));
        }
        let d: Vec<f64> = (0..self.len())
            .into_par_iter()
            .map(|i| self.nearest_indexed(&self.indices[i], &self.flat[i], shortlist, Some(i)))
            .collect();
        Ok(d.iter().sum::<f64>() / d.len() as f64)
    }
}

/// Draw samples with `k` active components and measure each one's distance
/// to the nearest training mesh. `k = 0` samples the mean shape only.
pub fn eval_specificity(
    model: &ShapeModel,
    training: &TrainingSet,
    k: usize,
    config: &SpecificityConfig,
    rng: &mut impl Rng,
) -> EvalResult<MetricSummary> {
    check_ks(&[k], model.component_count(), 0)?;
    if config.samples == 0 || !(config.sigma_clip >= 0.0) {
        return Err(EvalError::BadInput(format!(
            "bad specificity config {config:?}"
        )));
    }
    let sub = model.truncated(k)?;
    // Coefficients are drawn serially so the result does not depend on threads.
    let poses: Vec<_> = (0..config.samples)
        .map(|_| sub.sample(rng, config.sigma_clip))
        .collect();
    let d = poses
        .par_iter()
        .map(|p| -> EvalResult<f64> {
            let mesh = sub.decode_mesh(p)?;
            Ok(training.nearest_distance(&mesh, config.shortlist))
        })
        .collect::<EvalResult<Vec<f64>>>()?;
    Ok(MetricSummary::from_values(k, &d, 0))
}

/// All three metrics for `ks`; one RNG seeded from `seed` feeds every
/// specificity draw in k order.
pub fn evaluate(
    model: &ShapeModel,
    training: &TrainingSet,
    tests: &[TestCase],
    ks: &[usize],
    fit_config: &FitConfig,
    spec: &SpecificityConfig,
    metadata: EvalMetadata,
) -> EvalResult<(EvalReport, Vec<DistanceMap>)> {
    let compactness = eval_compactness(model, ks)?;
    let g = eval_generalization(model, tests, ks, fit_config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(metadata.seed);
    let specificity = ks
        .iter()
        .map(|&k| eval_specificity(model, training, k, spec, &mut rng))
        .collect::<EvalResult<Vec<_>>>()?;
    let report = EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        component_counts: ks.to_vec(),
        compactness,
        generalization: g.summary,
        specificity,
        fits: g.fits,
        metadata,
    };
    report.validate()?;
    Ok((report, g.maps))
}

/// Sha256 of the model's vertex template and basis, for report metadata.
pub fn model_fingerprint(model: &ShapeModel) -> String {
    let mut h = Sha256::new();
    for x in model
        .template()
        .iter()
        .chain(model.basis().iter())
        .chain(model.variances())
    {
        h.update(x.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Files written by [`emit_report`], relative to its output directory.
pub fn report_files(maps: &[DistanceMap]) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = [
        "report.json",
        "compactness.csv",
        "generalization.csv",
        "specificity.csv",
        "report.svg",
    ]
    .iter()
    .map(PathBuf::from)
    .collect();
    v.extend(
        maps.iter()
            .map(|m| PathBuf::from("maps").join(format!("{}.distance.ply", m.name))),
    );
    v
}
