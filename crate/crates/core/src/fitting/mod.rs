//! Model fitting: shape-space fits and coupled free-form co-registration.
//!
//! Energy is `E_data + λ_prior·‖β‖²_Σ` for model fits and
//! `E_data(v + dv) + λ_coup·Σ‖dv_i‖` for the free-form stage.

mod distance;
mod energy;
mod solve;
mod target;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::MeshError;
use crate::shape::{PoseParams, ShapeError};

pub use distance::{
    mesh_to_scan_distance, symmetric_mean_distance, SurfaceDistance, DISTANCE_CLIP_MM,
};
pub use energy::{coupling_energy, energy_data, model_energy, DataEnergy, ModelEnergy};
pub use solve::{coregister, fit_model, rigid_landmark_alignment, Registration};
pub use target::ScanTarget;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("scan mesh is empty")]
    EmptyScan,
    #[error("invalid energy weights: {0}")]
    BadWeights(String),
    #[error("invalid anneal schedule: {0}")]
    BadSchedule(String),
    #[error("invalid fit configuration: {0}")]
    BadConfig(String),
    #[error("landmark weight is {0} but the scan has no landmarks")]
    MissingLandmarks(f64),
    #[error("non-finite energy at stage {stage}, iteration {iteration}: {detail}")]
    NonFinite {
        stage: usize,
        iteration: usize,
        detail: String,
    },
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

pub type FitResult<T> = Result<T, FitError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyWeights {
    pub lambda_p2p: f64,
    pub lambda_n: f64,
    pub lambda_lm: f64,
    pub lambda_prior: f64,
    pub lambda_coup: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        Self {
            lambda_p2p: 1.0,
            lambda_n: 10.0,
            lambda_lm: 10.0,
            lambda_prior: 1.0,
            lambda_coup: 2.0,
        }
    }
}

impl EnergyWeights {
    pub fn validate(&self) -> FitResult<()> {
        let all = [
            self.lambda_p2p,
            self.lambda_n,
            self.lambda_lm,
            self.lambda_prior,
            self.lambda_coup,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(FitError::BadWeights(format!(
                "weights must be finite and ≥ 0, got {all:?}"
            )));
        }
        if self.lambda_p2p == 0.0 && self.lambda_n == 0.0 && self.lambda_lm == 0.0 {
            return Err(FitError::BadWeights("all data weights are zero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealStage {
    /// Maximum outer iterations spent in this stage. The last stage runs
    /// on until it settles or the global iteration limit is reached.
    pub iterations: usize,
    pub prior: f64,
    pub data: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealSchedule {
    pub stages: Vec<AnnealStage>,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        let stage = |prior, data| AnnealStage {
            iterations: 25,
            prior,
            data,
        };
        Self {
            stages: vec![
                stage(10.0, 0.3),
                stage(3.0, 1.0),
                stage(1.0, 1.0),
                stage(0.3, 1.0),
            ],
        }
    }
}

impl AnnealSchedule {
    /// A single stage with unit multipliers.
    pub fn flat(iterations: usize) -> Self {
        Self {
            stages: vec![AnnealStage {
                iterations,
                prior: 1.0,
                data: 1.0,
            }],
        }
    }

    pub fn validate(&self) -> FitResult<()> {
        if self.stages.is_empty() {
            return Err(FitError::BadSchedule("no stages".into()));
        }
        for s in &self.stages {
            if s.iterations == 0
                || !(s.prior >= 0.0 && s.prior.is_finite())
                || !(s.data > 0.0 && s.data.is_finite())
            {
                return Err(FitError::BadSchedule(format!("bad stage {s:?}")));
            }
        }
        for w in self.stages.windows(2) {
            if w[1].prior > w[0].prior {
                return Err(FitError::BadSchedule(
                    "prior multipliers must not increase".into(),
                ));
            }
            if w[1].data < w[0].data {
                return Err(FitError::BadSchedule(
                    "data multipliers must not decrease".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Everything that controls a fit. Missing JSON fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub weights: EnergyWeights,
    pub anneal: AnnealSchedule,
    /// Pairs farther than this multiple of the median pair distance are dropped.
    pub reject_median_factor: f64,
    /// The distance cut of the shape-space fit never goes below this (mm).
    pub reject_min_distance: f64,
    /// Floor used in the last anneal stage, once the fit has settled; a small
    /// value keeps local deviations out of the shape coefficients.
    pub final_reject_min_distance: f64,
    /// Same floor for the free-form stage, which is meant to pick up local detail.
    pub coupling_reject_min_distance: f64,
    /// Pairs whose normals differ by more than this are dropped.
    pub reject_angle_deg: f64,
    /// Stop once the outer-iteration energy changes by less than this fraction.
    pub tolerance: f64,
    pub max_outer_iterations: usize,
    /// Gauss-Newton steps per correspondence update.
    pub inner_iterations: usize,
    /// Outer iterations of the free-form stage.
    pub coupling_iterations: usize,
    /// Sample the scan surface uniformly with this many points for the
    /// scan→model term instead of using its vertices.
    pub scan_samples: Option<usize>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            weights: EnergyWeights::default(),
            anneal: AnnealSchedule::default(),
            reject_median_factor: 5.0,
            reject_min_distance: 2.5,
            final_reject_min_distance: 0.25,
            coupling_reject_min_distance: 5.0,
            reject_angle_deg: 80.0,
            tolerance: 1e-6,
            max_outer_iterations: 200,
            inner_iterations: 1,
            coupling_iterations: 50,
            scan_samples: None,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> FitResult<()> {
        self.weights.validate()?;
        self.anneal.validate()?;
        let bad = |m: &str| Err(FitError::BadConfig(m.into()));
        if !(self.reject_median_factor > 0.0) {
            return bad("reject_median_factor must be > 0");
        }
        if ![
            self.reject_min_distance,
            self.final_reject_min_distance,
            self.coupling_reject_min_distance,
        ]
        .iter()
        .all(|d| *d >= 0.0)
        {
            return bad("rejection floors must be ≥ 0");
        }
        if !(self.reject_angle_deg > 0.0 && self.reject_angle_deg <= 180.0) {
            return bad("reject_angle_deg must be in (0, 180]");
        }
        if !(self.tolerance >= 0.0) {
            return bad("tolerance must be ≥ 0");
        }
        if self.max_outer_iterations == 0 || self.inner_iterations == 0 {
            return bad("iteration limits must be ≥ 1");
        }
        if self.scan_samples == Some(0) {
            return bad("scan_samples must be ≥ 1");
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> FitResult<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| FitError::BadConfig(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> FitResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MeshError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_json_str(&text)
    }
}

/// One outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    /// 0-based anneal stage; the free-form stage is numbered after the last one.
    pub stage: usize,
    pub iteration: usize,
    /// Solver objective (squared normal term) right after the correspondence update.
    pub before: f64,
    /// Solver objective after the inner solve, same correspondences.
    pub after: f64,
    /// Same point as `after`, with the normal term in its absolute form.
    pub reported: f64,
    pub accepted_steps: usize,
    pub rejected_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitState {
    pub pose: PoseParams,
    /// Per-vertex free-form displacement; empty for model-only fits.
    pub dv: Vec<[f64; 3]>,
    pub weights: EnergyWeights,
    pub anneal: AnnealSchedule,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub coupling_iterations: usize,
    pub converged: bool,
    pub history: Vec<EnergyRecord>,
}
