use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use super::manifest::{sha256_file, RunManifest, MANIFEST_FILE};
use super::*;
use crate::eval::{self, EvalMetadata, SpecificityConfig, TestCase, TrainingSet};
use crate::fitting::{
    coregister, fit_model, mesh_to_scan_distance, FitConfig, ScanTarget, DISTANCE_CLIP_MM,
};
use crate::ingest::{attach_scan_landmarks, extract_isosurface, load_volume, ExtractOptions};
use crate::mesh::io::save_ply_with_attributes;
use crate::mesh::{enclosed_volume, load_mesh, save_mesh, LandmarkSet, TriMesh};
use crate::shape::{fit_pca, load_model, model_paths, save_model, ShapeModel};
use crate::synth::{
    build_template, generate_dataset, load_dataset, load_template, measure_dimensions,
    save_dataset, save_template, DimensionBounds, GenerationConfig, TemplateAsset, TemplateParams,
};

pub(super) fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::Template(a) => template(a),
        Command::Generate(a) => generate(a),
        Command::Ingest(a) => ingest(a),
        Command::Train(a) => train(a),
        Command::Fit(a) => fit(a),
        Command::Sample(a) => sample(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Measure(a) => measure(a),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid JSON in {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

/// Every file below `dir`, relative to it and sorted.
fn relative_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![PathBuf::new()];
    while let Some(rel) = stack.pop() {
        for e in std::fs::read_dir(dir.join(&rel))
            .with_context(|| format!("cannot list {}", dir.display()))?
        {
            let e = e?;
            let r = rel.join(e.file_name());
            if e.path().is_dir() {
                stack.push(r);
            } else if r != Path::new(MANIFEST_FILE) {
                out.push(r);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn to_value(v: &impl Serialize) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

/// Mesh files (.ply/.obj) directly in `dir`, sorted, skipping distance maps.
fn mesh_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|f| f.to_str()).unwrap_or("");
            (name.ends_with(".ply") || name.ends_with(".obj")) && !name.ends_with(".distance.ply")
        })
        .collect();
    v.sort();
    Ok(v)
}

fn landmark_sidecar(mesh_path: &Path) -> PathBuf {
    mesh_path.with_extension("landmarks.json")
}

fn load_landmarks_for(mesh_path: &Path, explicit: Option<&Path>) -> Result<Option<LandmarkSet>> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let s = landmark_sidecar(mesh_path);
            if !s.exists() {
                return Ok(None);
            }
            s
        }
    };
    Ok(Some(LandmarkSet::load(&path)?))
}

fn template(a: &TemplateArgs) -> Result<()> {
    let params = if a.coarse {
        TemplateParams::coarse()
    } else {
        TemplateParams::default()
    };
    let manifest = RunManifest::new("template", json!({ "params": to_value(&params) }), None);
    let asset = build_template(&params)?;
    save_template(&asset, &a.out)?;
    manifest.finish(&a.out, &relative_files(&a.out)?, &a.out.join(MANIFEST_FILE))
}

fn load_or_build_template(dir: Option<&Path>, manifest: &mut RunManifest) -> Result<TemplateAsset> {
    match dir {
        Some(d) => {
            manifest.input(d)?;
            Ok(load_template(d)?)
        }
        None => Ok(build_template(&TemplateParams::default())?),
    }
}

fn generate(a: &GenerateArgs) -> Result<()> {
    let mut config: GenerationConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => GenerationConfig::default(),
    };
    if let Some(b) = &a.bounds {
        config.bounds = read_json::<DimensionBounds>(b)?;
    }
    let mut manifest = RunManifest::new(
        "generate",
        json!({ "n": a.n, "template": a.template, "generation": to_value(&config) }),
        Some(a.seed),
    );
    for p in [&a.config, &a.bounds].into_iter().flatten() {
        manifest.input(p)?;
    }
    let asset = load_or_build_template(a.template.as_deref(), &mut manifest)?;
    let items = generate_dataset(&asset, a.n, &config, a.seed)?;
    create_dir(&a.out)?;
    let entries = save_dataset(&a.out, &asset, &items)?;
    write_json(&a.out.join("dataset.json"), &entries)?;
    save_template(&asset, &a.out.join("template"))?;
    manifest.finish(&a.out, &relative_files(&a.out)?, &a.out.join(MANIFEST_FILE))
}

/// `<dir>/<stem>.manifest.json` for commands whose output is a single file.
fn sibling_manifest(out: &Path) -> PathBuf {
    let name = out.file_name().and_then(|f| f.to_str()).unwrap_or("out");
    let stem = name.split('.').next().unwrap_or(name);
    out.with_file_name(format!("{stem}.manifest.json"))
}

fn parent_of(p: &Path) -> PathBuf {
    p.parent()
        .filter(|d| !d.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn file_name(p: &Path) -> PathBuf {
    PathBuf::from(p.file_name().unwrap_or_default())
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let options = ExtractOptions {
        iso: a.iso,
        smooth: !a.no_smooth,
    };
    let mut manifest = RunManifest::new(
        "ingest",
        json!({ "label": a.label, "iso": a.iso, "smooth": !a.no_smooth, "snap_tolerance": a.snap_tolerance }),
        None,
    );
    manifest.input(&a.volume)?;
    let volume = load_volume(&a.volume)?;
    let surf = extract_isosurface(&volume, a.label, options)?;
    if surf.touches_boundary {
        log::warn!(
            "label {} touches the volume boundary; the mesh is open there",
            a.label
        );
    }
    let dir = parent_of(&a.out);
    create_dir(&dir)?;
    let mut outputs = vec![file_name(&a.out)];
    let mut mesh = surf.mesh;
    let mut snaps = serde_json::Map::new();
    if let Some(lp) = &a.landmarks {
        manifest.input(lp)?;
        let (m, report) = attach_scan_landmarks(&mesh, &LandmarkSet::load(lp)?, a.snap_tolerance)?;
        for (name, d) in &report {
            snaps.insert(name.to_string(), json!(d));
        }
        let lm_path = landmark_sidecar(&a.out);
        m.landmarks().expect("attached above").save(&lm_path)?;
        outputs.push(file_name(&lm_path));
        mesh = m;
    }
    save_mesh(&mesh, &a.out)?;
    if let serde_json::Value::Object(c) = &mut manifest.config {
        c.insert("touches_boundary".into(), json!(surf.touches_boundary));
        c.insert("snap_distances".into(), serde_json::Value::Object(snaps));
    }
    outputs.sort();
    manifest.finish(&dir, &outputs, &sibling_manifest(&a.out))
}

fn train(a: &TrainArgs) -> Result<()> {
    if !(a.real_weight.is_finite() && a.real_weight >= 0.0) {
        bail!(
            "--real-weight must be finite and >= 0, got {}",
            a.real_weight
        );
    }
    let mut manifest = RunManifest::new(
        "train",
        json!({ "components": a.components, "real_weight": a.real_weight }),
        None,
    );
    manifest.input(&a.dataset)?;
    let synthetic: Vec<TriMesh> = load_dataset(&a.dataset)?
        .into_iter()
        .map(|(_, m)| m)
        .collect();
    if synthetic.is_empty() {
        bail!("no mesh_*.ply files in {}", a.dataset.display());
    }
    let mut real = Vec::new();
    if let Some(dir) = &a.real {
        manifest.input(dir)?;
        for p in mesh_files(dir)? {
            real.push(load_mesh(&p)?);
        }
        if real.is_empty() {
            bail!("no meshes in {}", dir.display());
        }
    }
    let template_dir = a
        .template
        .clone()
        .unwrap_or_else(|| a.dataset.join("template"));
    let topology = if template_dir.join("mesh.ply").exists() {
        load_template(&template_dir)?.mesh
    } else {
        log::warn!(
            "no template at {}; the model has no regions or landmarks",
            template_dir.display()
        );
        synthetic[0].clone()
    };
    let samples: Vec<&[nalgebra::Point3<f64>]> = synthetic
        .iter()
        .chain(&real)
        .map(|m| m.vertices())
        .collect();
    let weights: Vec<f64> = synthetic
        .iter()
        .map(|_| 1.0)
        .chain(real.iter().map(|_| a.real_weight))
        .collect();
    let provenance = crate::shape::Provenance {
        sample_count: samples.len(),
        synthetic_count: synthetic.len(),
        real_count: real.len(),
        real_weight: a.real_weight,
        weights: weights.clone(),
        seed: None,
    };
    let model = fit_pca(&samples, &weights, a.components)?
        .with_topology(&topology)?
        .with_provenance(provenance)?;
    save_model(&model, &a.out)?;
    let (jp, bp) = model_paths(&a.out);
    let dir = parent_of(&jp);
    manifest.finish(
        &dir,
        &[file_name(&jp), file_name(&bp)],
        &sibling_manifest(&jp),
    )
}

fn load_model_for(
    path: &Path,
    components: Option<usize>,
    manifest: &mut RunManifest,
) -> Result<ShapeModel> {
    let (jp, bp) = model_paths(path);
    let model = load_model(path)?;
    manifest.input(&jp)?;
    manifest.input(&bp)?;
    Ok(match components {
        Some(k) => model.truncated(k)?,
        None => model,
    })
}

fn fit_config(path: Option<&Path>) -> Result<FitConfig> {
    Ok(match path {
        Some(p) => FitConfig::load(p)?,
        None => FitConfig::default(),
    })
}

fn fit(a: &FitArgs) -> Result<()> {
    let mut config = fit_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(n) = a.max_outer_iterations {
        config.max_outer_iterations = n;
    }
    if let Some(l) = a.lambda_coup {
        config.weights.lambda_coup = l;
    }
    config.validate()?;
    let mut manifest = RunManifest::new(
        "fit",
        json!({ "coregister": a.coregister, "components": a.components, "fit": to_value(&config) }),
        Some(config.seed),
    );
    if let Some(c) = &a.config {
        manifest.input(c)?;
    }
    let model = load_model_for(&a.model, a.components, &mut manifest)?;
    manifest.input(&a.scan)?;
    let scan = load_mesh(&a.scan)?;
    let landmarks = load_landmarks_for(&a.scan, a.landmarks.as_deref())?;
    if let Some(p) = a
        .landmarks
        .clone()
        .or_else(|| Some(landmark_sidecar(&a.scan)).filter(|p| p.exists()))
    {
        manifest.input(&p)?;
    }
    let target = ScanTarget::new(scan.clone(), landmarks.as_ref())?;
    create_dir(&a.out)?;
    let mut outputs = Vec::new();
    let (state, fitted) = if a.coregister {
        let reg = coregister(&model, &target, &config, None)?;
        save_mesh(&reg.model_fit, &a.out.join("model_fit.ply"))?;
        outputs.push(PathBuf::from("model_fit.ply"));
        (reg.state, reg.mesh)
    } else {
        let state = fit_model(&model, &target, &config, None)?;
        let mesh = model.decode_mesh(&state.pose)?;
        (state, mesh)
    };
    if !state.converged {
        log::warn!("fit did not converge; see fit_state.json");
    }
    let d = mesh_to_scan_distance(&fitted, &scan);
    let clipped: Vec<f64> = d
        .per_vertex
        .iter()
        .map(|x| x.min(DISTANCE_CLIP_MM))
        .collect();
    let normalized: Vec<f64> = clipped.iter().map(|x| x / DISTANCE_CLIP_MM).collect();
    save_ply_with_attributes(
        &fitted,
        &a.out.join("fitted.ply"),
        &[("distance", &clipped), ("distance_normalized", &normalized)],
    )?;
    write_json(&a.out.join("fit_state.json"), &state)?;
    let mut csv = String::from("vertex,distance,distance_clipped\n");
    for (i, (x, c)) in d.per_vertex.iter().zip(&clipped).enumerate() {
        csv.push_str(&format!("{i},{x:.17e},{c:.17e}\n"));
    }
    std::fs::write(a.out.join("distances.csv"), csv).context("cannot write distances.csv")?;
    write_json(
        &a.out.join("summary.json"),
        &json!({ "mean_distance": d.mean, "max_distance": d.max, "converged": state.converged }),
    )?;
    outputs.extend(
        [
            "fitted.ply",
            "fit_state.json",
            "distances.csv",
            "summary.json",
        ]
        .map(PathBuf::from),
    );
    outputs.sort();
    println!(
        "mean distance {:.4} mm, max {:.4} mm, converged {}",
        d.mean, d.max, state.converged
    );
    manifest.finish(&a.out, &outputs, &a.out.join(MANIFEST_FILE))
}

fn sample(a: &SampleArgs) -> Result<()> {
    let mut manifest = RunManifest::new(
        "sample",
        json!({ "n": a.n, "sigma_clip": a.sigma_clip, "components": a.components }),
        Some(a.seed),
    );
    let model = load_model_for(&a.model, a.components, &mut manifest)?;
    if !(a.sigma_clip >= 0.0) {
        bail!("--sigma-clip must be >= 0");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    create_dir(&a.out)?;
    let mut outputs = Vec::new();
    let mut betas = Vec::new();
    for i in 0..a.n {
        let pose = model.sample(&mut rng, a.sigma_clip);
        let name = PathBuf::from(format!("sample_{i:04}.ply"));
        save_mesh(&model.decode_mesh(&pose)?, &a.out.join(&name))?;
        outputs.push(name);
        betas.push(pose.beta);
    }
    write_json(&a.out.join("samples.json"), &json!({ "beta": betas }))?;
    outputs.push(PathBuf::from("samples.json"));
    outputs.sort();
    manifest.finish(&a.out, &outputs, &a.out.join(MANIFEST_FILE))
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let config = fit_config(a.config.as_deref())?;
    let spec = SpecificityConfig {
        samples: a.samples,
        sigma_clip: a.sigma_clip,
        shortlist: (a.shortlist > 0).then_some(a.shortlist),
    };
    let mut manifest = RunManifest::new(
        "evaluate",
        json!({ "ks": a.ks, "fit": to_value(&config), "specificity": to_value(&spec) }),
        Some(a.seed),
    );
    if let Some(c) = &a.config {
        manifest.input(c)?;
    }
    let model = load_model_for(&a.model, None, &mut manifest)?;
    let m = model.component_count();
    let ks: Vec<usize> = a.ks.iter().copied().filter(|&k| k <= m).collect();
    if ks.len() < a.ks.len() {
        log::warn!("model has {m} components; dropping larger ks");
    }
    if ks.is_empty() {
        bail!("no requested component count fits a model with {m} components");
    }
    manifest.input(&a.train)?;
    manifest.input(&a.test)?;
    let mut train_meshes = Vec::new();
    let mut train_ids = Vec::new();
    for p in mesh_files(&a.train)? {
        train_ids.push(sha256_file(&p)?);
        train_meshes.push(load_mesh(&p)?);
    }
    let mut tests = Vec::new();
    for p in mesh_files(&a.test)? {
        let mesh = load_mesh(&p)?;
        let landmarks = load_landmarks_for(&p, None)?;
        tests.push(TestCase {
            id: sha256_file(&p)?,
            mesh,
            landmarks,
        });
    }
    if train_meshes.is_empty() || tests.is_empty() {
        bail!("training and test directories must both contain meshes");
    }
    let mut meta = EvalMetadata::new(
        a.seed,
        &spec,
        train_ids,
        tests.iter().map(|t| t.id.clone()).collect(),
    );
    if !meta.disjoint {
        log::warn!("some test meshes also occur in the training set");
    }
    meta.model_checksum = Some(eval::model_fingerprint(&model));
    let training = TrainingSet::new(&train_meshes)?;
    let (report, maps) = eval::evaluate(&model, &training, &tests, &ks, &config, &spec, meta)?;
    let outputs = eval::emit_report(&report, &maps, &a.out)?;
    for (k, g, s) in report
        .component_counts
        .iter()
        .zip(&report.generalization)
        .zip(&report.specificity)
        .map(|((k, g), s)| (k, g, s))
    {
        println!(
            "k={k}: generalization {} mm, specificity {} mm",
            g.mean.map_or("n/a".into(), |x| format!("{x:.4}")),
            s.mean.map_or("n/a".into(), |x| format!("{x:.4}"))
        );
    }
    manifest.finish(&a.out, &outputs, &a.out.join(MANIFEST_FILE))
}

fn measure(a: &MeasureArgs) -> Result<()> {
    let mesh = load_mesh(&a.mesh)?;
    let edges = mesh.edge_report();
    let closed = edges.is_closed() && mesh.triangle_count() > 0;
    let volume = if closed {
        Some(enclosed_volume(&mesh)?.value)
    } else {
        None
    };
    let area: f64 = (0..mesh.triangle_count())
        .map(|t| 0.5 * mesh.triangle_cross(t).norm())
        .sum();
    let bb = mesh.aabb();
    let mut out = json!({
        "vertices": mesh.vertex_count(),
        "triangles": mesh.triangle_count(),
        "closed": closed,
        "boundary_edges": edges.boundary_edges,
        "non_manifold_edges": edges.non_manifold_edges,
        "volume": volume,
        "area": area,
        "bbox_min": [bb.min.x, bb.min.y, bb.min.z],
        "bbox_max": [bb.max.x, bb.max.y, bb.max.z],
    });
    if let Some(t) = &a.template {
        let asset = load_template(t)?;
        if asset.vertex_count() != mesh.vertex_count() {
            bail!(
                "mesh has {} vertices, template {} has {}",
                mesh.vertex_count(),
                t.display(),
                asset.vertex_count()
            );
        }
        let d = measure_dimensions(&asset, mesh.vertices())?;
        out["greater_curvature"] = json!(d.gc);
        out["lesser_curvature"] = json!(d.lc);
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}
