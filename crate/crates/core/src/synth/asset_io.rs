//! Template directory layout:
//!
//! - `mesh.ply`: template mesh with a per-vertex `region` property
//! - `rig.json`: joints and the blend weights as a flat row-major `V × K` array
//! - `annotations.json`: regions, landmarks, curvature chains, ring layout, prototype file names
//! - `prototype_<type>.ply`: one mesh per shape prototype, template connectivity

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::rig::{Joint, Rig};
use super::template::{ShapeType, TemplateAsset, TemplateParams};
use super::{Region, SynthError, SynthResult};
use crate::mesh::{load_mesh, save_mesh, LandmarkSet, MeshError};

#[derive(Serialize, Deserialize)]
struct RigFile {
    vertex_count: usize,
    joint_count: usize,
    joints: Vec<Joint>,
    anchors: Vec<Vec<usize>>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct AnnotationsFile {
    regions: Vec<Region>,
    landmarks: serde_json::Value,
    gc_chain: Vec<usize>,
    lc_chain: Vec<usize>,
    rings: Vec<Vec<usize>>,
    caps: [usize; 2],
    stomach_rings: (usize, usize),
    params: TemplateParams,
    prototypes: BTreeMap<String, String>,
}

fn format_err(path: &Path, message: impl ToString) -> SynthError {
    SynthError::Format {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> SynthResult<()> {
    let text = serde_json::to_string(value).map_err(|e| format_err(path, e))?;
    std::fs::write(path, text).map_err(|e| {
        MeshError::Io {
            path: path.display().to_string(),
            source: e,
        }
        .into()
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> SynthResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| MeshError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e))
}

pub fn save_template(asset: &TemplateAsset, dir: &Path) -> SynthResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| MeshError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    save_mesh(&asset.mesh, &dir.join("mesh.ply"))?;
    let rig = RigFile {
        vertex_count: asset.rig.vertex_count(),
        joint_count: asset.rig.joint_count(),
        joints: asset.rig.joints().to_vec(),
        anchors: asset.rig.anchors().to_vec(),
        weights: asset.rig.weights().to_vec(),
    };
    write_json(&dir.join("rig.json"), &rig)?;
    let mut prototypes = BTreeMap::new();
    for (t, verts) in ShapeType::ALL.iter().zip(&asset.prototypes) {
        let file = format!("prototype_{}.ply", t.name());
        let m = asset.mesh.with_vertices(verts.clone())?;
        save_mesh(&m, &dir.join(&file))?;
        prototypes.insert(t.name().to_string(), file);
    }
    let ann = AnnotationsFile {
        regions: asset.regions.clone(),
        landmarks: asset.landmarks().to_json(),
        gc_chain: asset.gc_chain.clone(),
        lc_chain: asset.lc_chain.clone(),
        rings: asset.rings.clone(),
        caps: asset.caps,
        stomach_rings: asset.stomach_rings,
        params: asset.params,
        prototypes,
    };
    write_json(&dir.join("annotations.json"), &ann)
}

pub fn load_template(dir: &Path) -> SynthResult<TemplateAsset> {
    let mesh_path = dir.join("mesh.ply");
    let mesh = load_mesh(&mesh_path)?;
    let rig_path = dir.join("rig.json");
    let rf: RigFile = read_json(&rig_path)?;
    if rf.vertex_count != mesh.vertex_count() || rf.joint_count != rf.joints.len() {
        return Err(format_err(
            &rig_path,
            "vertex or joint count does not match",
        ));
    }
    let rig = Rig::new(rf.joints, rf.weights, rf.vertex_count, rf.anchors)?;
    let ann_path = dir.join("annotations.json");
    let ann: AnnotationsFile = read_json(&ann_path)?;
    let landmarks = LandmarkSet::from_json(&ann.landmarks)?;
    let labels: Vec<u8> = ann.regions.iter().map(|r| r.id()).collect();
    let mesh = mesh.with_region_labels(labels)?.with_landmarks(landmarks)?;
    let mut prototypes: [Vec<Point3<f64>>; 4] = Default::default();
    for (slot, t) in prototypes.iter_mut().zip(ShapeType::ALL) {
        let file = ann
            .prototypes
            .get(t.name())
            .ok_or_else(|| format_err(&ann_path, format!("missing prototype {t}")))?;
        let p = load_mesh(&dir.join(file))?;
        if p.triangles() != mesh.triangles() {
            return Err(format_err(
                &dir.join(file),
                "prototype connectivity differs from template",
            ));
        }
        *slot = p.vertices().to_vec();
    }
    let asset = TemplateAsset {
        mesh,
        rig,
        regions: ann.regions,
        gc_chain: ann.gc_chain,
        lc_chain: ann.lc_chain,
        rings: ann.rings,
        caps: ann.caps,
        stomach_rings: ann.stomach_rings,
        prototypes,
        params: ann.params,
    };
    asset.check()?;
    Ok(asset)
}
