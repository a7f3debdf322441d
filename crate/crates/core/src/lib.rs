//! Statistical shape-model toolkit for tubular organ meshes.
//!
//! Procedural template and synthetic dataset generation, PCA shape spaces,
//! model fitting and co-registration, and compactness / generalization /
//! specificity evaluation. All lengths are millimeters.

pub mod cli;
pub mod eval;
pub mod fitting;
pub mod ingest;
pub mod mesh;
pub mod shape;
pub mod synth;
