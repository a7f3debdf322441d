//! Model files: `<name>.ssm.json` (manifest) next to `<name>.ssm.bin`.
//!
//! The binary file is little-endian: `3V` float64 template values, then the
//! `3V × m` basis column by column, then `m` float64 variances, then `3T`
//! uint32 triangle indices.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Provenance, ShapeError, ShapeModel, ShapeResult};
use crate::mesh::{LandmarkSet, MeshError, TriMesh};

const FORMAT: &str = "ssm-shape-model";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    vertex_count: usize,
    component_count: usize,
    triangle_count: usize,
    total_variance: f64,
    binary: String,
    binary_sha256: String,
    layout: String,
    region_labels: Option<Vec<u8>>,
    landmarks: Option<serde_json::Value>,
    provenance: Provenance,
}

/// `(json, bin)` paths for a model name; a trailing `.ssm`, `.ssm.json` or `.ssm.bin` is accepted.
pub fn model_paths(path: &Path) -> (PathBuf, PathBuf) {
    let s = path.to_string_lossy();
    let stem = s
        .strip_suffix(".ssm.json")
        .or_else(|| s.strip_suffix(".ssm.bin"))
        .or_else(|| s.strip_suffix(".ssm"))
        .unwrap_or(&s)
        .to_string();
    (
        PathBuf::from(format!("{stem}.ssm.json")),
        PathBuf::from(format!("{stem}.ssm.bin")),
    )
}

fn io_err(path: &Path, e: std::io::Error) -> ShapeError {
    MeshError::Io {
        path: path.display().to_string(),
        source: e,
    }
    .into()
}

fn format_err(path: &Path, message: impl ToString) -> ShapeError {
    ShapeError::Format {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

pub fn save_model(model: &ShapeModel, path: &Path) -> ShapeResult<()> {
    let (json_path, bin_path) = model_paths(path);
    if let Some(dir) = json_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let tris = model.triangles();
    let mut bin = Vec::with_capacity(
        8 * (model.template.len() + model.basis.len() + model.variances.len()) + 12 * tris.len(),
    );
    for x in model
        .template
        .iter()
        .chain(model.basis.iter())
        .chain(model.variances.iter())
    {
        bin.extend_from_slice(&x.to_le_bytes());
    }
    for &i in tris.iter().flatten() {
        let i = u32::try_from(i).map_err(|_| format_err(&bin_path, "vertex index exceeds u32"))?;
        bin.extend_from_slice(&i.to_le_bytes());
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        vertex_count: model.vertex_count(),
        component_count: model.component_count(),
        triangle_count: tris.len(),
        total_variance: model.total_variance,
        binary: bin_path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
        binary_sha256: hex::encode(Sha256::digest(&bin)),
        layout: "little-endian: f64 template[3V], f64 basis[3V*m] column-major, f64 variances[m], u32 triangles[3T]".into(),
        region_labels: model.region_labels.clone(),
        landmarks: model.landmarks.as_ref().map(LandmarkSet::to_json),
        provenance: model.provenance.clone(),
    };
    std::fs::write(&bin_path, &bin).map_err(|e| io_err(&bin_path, e))?;
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| format_err(&json_path, e))?;
    std::fs::write(&json_path, text).map_err(|e| io_err(&json_path, e))
}

pub fn load_model(path: &Path) -> ShapeResult<ShapeModel> {
    let (json_path, default_bin) = model_paths(path);
    let text = std::fs::read_to_string(&json_path).map_err(|e| io_err(&json_path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| format_err(&json_path, e))?;
    if m.format != FORMAT || m.version != VERSION {
        return Err(format_err(
            &json_path,
            format!("unsupported format {} v{}", m.format, m.version),
        ));
    }
    let bin_path = match json_path.parent() {
        Some(dir) if !m.binary.is_empty() => dir.join(&m.binary),
        _ => default_bin,
    };
    let bin = std::fs::read(&bin_path).map_err(|e| io_err(&bin_path, e))?;
    if hex::encode(Sha256::digest(&bin)) != m.binary_sha256 {
        return Err(format_err(&bin_path, "checksum does not match manifest"));
    }
    let p = 3 * m.vertex_count;
    let floats = p + p * m.component_count + m.component_count;
    let expected = 8 * floats + 12 * m.triangle_count;
    if bin.len() != expected {
        return Err(format_err(
            &bin_path,
            format!("{} bytes, expected {expected}", bin.len()),
        ));
    }
    let (fpart, tpart) = bin.split_at(8 * floats);
    let f: Vec<f64> = fpart
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let template = DVector::from_column_slice(&f[..p]);
    let basis = DMatrix::from_column_slice(p, m.component_count, &f[p..p + p * m.component_count]);
    let variances = f[p + p * m.component_count..].to_vec();
    let idx: Vec<usize> = tpart
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let triangles: Vec<[usize; 3]> = idx.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();

    let mut model = ShapeModel::new(template, basis, variances, m.total_variance)?
        .with_provenance(m.provenance)?;
    if !triangles.is_empty() {
        let mut mesh =
            TriMesh::with_shared_triangles(model.template_points(), Arc::new(triangles))?;
        if let Some(l) = m.region_labels {
            mesh = mesh.with_region_labels(l)?;
        }
        if let Some(l) = &m.landmarks {
            mesh = mesh.with_landmarks(LandmarkSet::from_json(l)?)?;
        }
        model = model.with_topology(&mesh)?;
    }
    Ok(model)
}
