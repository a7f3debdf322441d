//! Procedural stomach template, skeletal rig and synthetic dataset generation.
//!
//! The generation pipeline runs shape-type interpolation and joint jitter,
//! then insufflation, then dimensional scaling, in that order.

mod asset_io;
mod dataset;
mod ops;
mod rig;
mod template;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::MeshError;

pub use asset_io::{load_template, save_template};
pub use dataset::{
    generate_dataset, load_dataset, realize_recipe, save_dataset, DatasetEntry, DimensionBounds,
    GenerationConfig, GenerationRecipe, JitterRange,
};
pub use ops::{
    apply_jitter, enforce_dimensions, enforce_dimensions_detailed, insufflate,
    insufflate_with_report, interpolate_shape_types, measure_dimensions, sample_jitter,
    skin_deform, validate_mesh, Dimensions, InsufflateReport, JointJitter, ScaleSolution,
    ValidationReport,
};
pub use rig::{Joint, Rig};
pub use template::{build_template, ShapeType, TemplateAsset, TemplateParams};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("template resolution too low: {0}")]
    ResolutionTooLow(String),
    #[error("expected {expected} joint transforms, got {actual}")]
    TransformCount { expected: usize, actual: usize },
    #[error("invalid shape mix {0:?}: weights must be nonnegative and sum to 1")]
    InvalidShapeMix([f64; 4]),
    #[error("unknown joint '{0}'")]
    UnknownJoint(String),
    #[error("insufflation offset must be finite and >= 0, got {0}")]
    BadOffset(f64),
    #[error("mesh already has {0} self-intersecting triangle pairs")]
    AlreadySelfIntersecting(usize),
    #[error("dimension targets must be positive: gc={gc}, lc={lc}, volume={volume}")]
    BadTargets { gc: f64, lc: f64, volume: f64 },
    #[error("dimension targets infeasible after {iterations} iterations: achieved gc={gc:.3} lc={lc:.3} volume={volume:.1} (targets gc={target_gc:.3} lc={target_lc:.3} volume={target_volume:.1})")]
    Infeasible {
        iterations: usize,
        gc: f64,
        lc: f64,
        volume: f64,
        target_gc: f64,
        target_lc: f64,
        target_volume: f64,
    },
    #[error(
        "{rejected} of {attempts} generated meshes failed validation (> 10%); revise the bounds"
    )]
    RejectionRate { rejected: usize, attempts: usize },
    #[error("invalid bounds: {0}")]
    BadBounds(String),
    #[error("invalid asset: {0}")]
    InvalidAsset(String),
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

pub type SynthResult<T> = Result<T, SynthError>;

/// Anatomical region of a template vertex. Stored as `u8` in PLY `region` properties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Region {
    Mouth = 0,
    Pharynx = 1,
    Esophagus = 2,
    Fundus = 3,
    Body = 4,
    Antrum = 5,
    Pylorus = 6,
    Duodenum = 7,
}

impl Region {
    pub const ALL: [Region; 8] = [
        Region::Mouth,
        Region::Pharynx,
        Region::Esophagus,
        Region::Fundus,
        Region::Body,
        Region::Antrum,
        Region::Pylorus,
        Region::Duodenum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Region::Mouth => "mouth",
            Region::Pharynx => "pharynx",
            Region::Esophagus => "esophagus",
            Region::Fundus => "fundus",
            Region::Body => "body",
            Region::Antrum => "antrum",
            Region::Pylorus => "pylorus",
            Region::Duodenum => "duodenum",
        }
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Region> {
        Region::ALL.get(id as usize).copied()
    }

    pub fn is_stomach(self) -> bool {
        matches!(
            self,
            Region::Fundus | Region::Body | Region::Antrum | Region::Pylorus
        )
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Region {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Region::ALL
            .iter()
            .copied()
            .find(|r| r.name() == s)
            .ok_or_else(|| format!("unknown region '{s}'"))
    }
}
