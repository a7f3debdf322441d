//! End-to-end acceptance checks, run in order so each timing is measured
//! without other tests competing for cores. Every check prints a single
//! PASS/FAIL line; the process exits non-zero if any check fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::{Point3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssm_core::eval::*;
use ssm_core::fitting::*;
use ssm_core::ingest::{extract_isosurface, ExtractOptions, LabelVolume};
use ssm_core::mesh::geometry::closest_point_on_triangle;
use ssm_core::mesh::primitives::icosphere;
use ssm_core::mesh::{
    compute_vertex_normals, detect_self_intersections, enclosed_volume, LandmarkSet, SpatialIndex,
    TriMesh,
};
use ssm_core::shape::*;
use ssm_core::synth::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn asset() -> &'static TemplateAsset {
    static A: OnceLock<TemplateAsset> = OnceLock::new();
    A.get_or_init(|| build_template(&TemplateParams::default()).unwrap())
}

fn generate(n: usize, seed: u64) -> Vec<TriMesh> {
    generate_dataset(asset(), n, &GenerationConfig::default(), seed)
        .unwrap()
        .into_iter()
        .map(|(m, _)| m)
        .collect()
}

fn train(meshes: &[TriMesh]) -> ShapeModel {
    let refs: Vec<&[Point3<f64>]> = meshes.iter().map(|m| m.vertices()).collect();
    fit_pca(&refs, &vec![1.0; meshes.len()], None)
        .unwrap()
        .with_topology(&asset().mesh)
        .unwrap()
}

fn set100() -> &'static Vec<TriMesh> {
    static S: OnceLock<Vec<TriMesh>> = OnceLock::new();
    S.get_or_init(|| generate(100, 1))
}

fn set500() -> &'static Vec<TriMesh> {
    static S: OnceLock<Vec<TriMesh>> = OnceLock::new();
    S.get_or_init(|| generate(500, 2))
}

fn model500() -> &'static ShapeModel {
    static M: OnceLock<ShapeModel> = OnceLock::new();
    M.get_or_init(|| train(set500()))
}

/// The first 30 components of the 100-mesh model.
fn model30() -> &'static ShapeModel {
    static M: OnceLock<ShapeModel> = OnceLock::new();
    M.get_or_init(|| train(set100()).truncated(30).unwrap())
}

fn landmarks_of(mesh: &TriMesh) -> LandmarkSet {
    LandmarkSet::point_bound(asset().landmarks().positions(mesh.vertices()))
}

fn target_for(mesh: &TriMesh) -> ScanTarget {
    ScanTarget::new(mesh.clone(), Some(&landmarks_of(mesh))).unwrap()
}

fn pca_exactness() -> Outcome {
    let meshes = set100();
    let model = train(meshes);
    let m = model.component_count();
    let mut worst: f64 = 0.0;
    for mesh in meshes {
        let pose = model.project(mesh.vertices()).unwrap();
        let back = model.decode(&pose).unwrap();
        for (a, b) in back.iter().zip(mesh.vertices()) {
            worst = worst.max((a - b).norm());
        }
    }
    let cv = model.cumulative_variance(m).unwrap();
    outcome(
        worst < 1e-6 && (cv - 1.0).abs() < 1e-12,
        format!("components={m} max_vertex_error={worst:.3e} mm cumvar(full)={cv}"),
    )
}

fn compactness() -> Outcome {
    let model = model500();
    let ks: Vec<usize> = (1..=model.component_count()).collect();
    let c = eval_compactness(model, &ks).unwrap();
    let monotone = c.windows(2).all(|w| w[1] >= w[0]);
    outcome(
        c[9] >= 0.90 && monotone,
        format!(
            "samples=500 cumvar(10)={:.4} cumvar(5)={:.4} monotone={monotone}",
            c[9], c[4]
        ),
    )
}

fn generalization() -> Outcome {
    let model = model30();
    let full = model.component_count();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let tests: Vec<TestCase> = (0..20)
        .map(|i| {
            let mesh = model.decode_mesh(&model.sample(&mut rng, 2.0)).unwrap();
            TestCase {
                id: format!("held_out_{i:02}"),
                landmarks: Some(landmarks_of(&mesh)),
                mesh,
            }
        })
        .collect();
    let g = eval_generalization(model, &tests, &[1, full], &FitConfig::default()).unwrap();
    let at = |k: usize, id: &str| g.fits.iter().find(|f| f.k == k && f.test_id == id).unwrap();
    let mut worst: f64 = 0.0;
    let mut all_converged = true;
    let mut better = 0;
    for t in &tests {
        let (one, all) = (at(1, &t.id), at(full, &t.id));
        worst = worst.max(all.mean);
        all_converged &= all.converged;
        better += usize::from(one.mean > all.mean);
    }
    outcome(
        worst < 0.2 && all_converged && better >= 18,
        format!(
            "k={full} worst_mean={worst:.4} mm converged={all_converged} k1>kfull for {better}/20"
        ),
    )
}

fn rigid_recovery() -> Outcome {
    let model = model30();
    let axis = Unit::new_normalize(Vector3::new(0.2, -0.7, 0.4));
    let r = Rotation3::from_axis_angle(&axis, 20f64.to_radians());
    let t = Vector3::new(18.0, -20.0, 12.0).normalize() * 30.0;
    let mean = model
        .decode_mesh(&PoseParams::zero(model.component_count()))
        .unwrap();
    let scan = mean.transformed(|p| r * p + t);
    let state = fit_model(model, &target_for(&scan), &FitConfig::default(), None).unwrap();
    let angle = (exp_map(&state.pose.rotation) * r.inverse()).angle();
    let dt = (state.pose.translation - t).norm();
    let maha = model.mahalanobis_sq(&state.pose.beta).unwrap().sqrt();
    outcome(
        angle < 1e-2 && dt < 0.5 && maha < 0.1,
        format!("rotation_error={angle:.3e} rad translation_error={dt:.3e} mm beta_mahalanobis={maha:.3e}"),
    )
}

fn bump() -> Outcome {
    let model = model30();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let base = model.decode_mesh(&model.sample(&mut rng, 2.0)).unwrap();
    let normals = compute_vertex_normals(&base).unwrap().normals;
    let area: f64 = (0..base.triangle_count())
        .map(|t| 0.5 * base.triangle_cross(t).norm())
        .sum();
    // 2 mm raised cosine over 5% of the surface.
    let radius = (0.05 * area / std::f64::consts::PI).sqrt();
    let center = base.vertices()[base.vertex_count() / 2];
    let v = base
        .vertices()
        .iter()
        .zip(&normals)
        .map(|(p, n)| {
            let d = (p - center).norm();
            if d < radius {
                p + n * (1.0 + (std::f64::consts::PI * d / radius).cos())
            } else {
                *p
            }
        })
        .collect();
    let scan = base.with_vertices(v).unwrap();
    let target = target_for(&scan);
    let cfg = FitConfig::default();
    let reg = coregister(model, &target, &cfg, None).unwrap();
    let d = mesh_to_scan_distance(&reg.mesh, &scan);
    let near = |i: usize| (scan.vertices()[i] - center).norm();
    let region: Vec<usize> = (0..scan.vertex_count())
        .filter(|&i| near(i) < radius)
        .collect();
    let bump_mean = region.iter().map(|&i| d.per_vertex[i]).sum::<f64>() / region.len() as f64;
    let far_dv = (0..scan.vertex_count())
        .filter(|&i| near(i) > radius + 10.0)
        .map(|i| Vector3::from(reg.state.dv[i]).norm())
        .fold(0.0, f64::max);

    let stiff = FitConfig {
        weights: EnergyWeights {
            lambda_coup: 1e6,
            ..cfg.weights
        },
        ..cfg
    };
    let reg = coregister(model, &target, &stiff, None).unwrap();
    let stiff_dev = reg
        .mesh
        .vertices()
        .iter()
        .zip(reg.model_fit.vertices())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    outcome(
        bump_mean < 0.3 && far_dv < 0.1 && stiff_dev < 1e-3,
        format!(
            "bump_radius={radius:.1} mm bump_mean={bump_mean:.4} mm far_max_dv={far_dv:.2e} mm stiff_max_dev={stiff_dev:.2e} mm"
        ),
    )
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let den = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

fn gradients() -> Outcome {
    let model = model30().truncated(10).unwrap();
    let m = model.component_count();
    let w = EnergyWeights {
        lambda_p2p: 1.0,
        lambda_n: 0.7,
        lambda_lm: 2.0,
        lambda_prior: 1.5,
        lambda_coup: 1.0,
    };
    let mean = model.decode_mesh(&PoseParams::zero(m)).unwrap();
    let c0 = mean
        .vertices()
        .iter()
        .fold(Vector3::zeros(), |a, p| a + p.coords)
        / mean.vertex_count() as f64;
    let rms = (mean
        .vertices()
        .iter()
        .map(|p| (p.coords - c0).norm_squared())
        .sum::<f64>()
        / mean.vertex_count() as f64)
        .sqrt();
    let model_lm = asset().landmarks().clone();
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut worst_data, mut worst_model, mut worst_coup): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..20 {
        let scan = model.decode_mesh(&model.sample(&mut rng, 2.0)).unwrap();
        let target = target_for(&scan);

        // Data term in free vertex coordinates.
        let v: Vec<Point3<f64>> = scan
            .vertices()
            .iter()
            .map(|p| p + Vector3::from_fn(|_, _| rng.gen_range(-0.5..0.5)))
            .collect();
        let e = energy_data(&v, scan.triangles(), &target, Some(&model_lm), &w).unwrap();
        let (mut an, mut fd) = (Vec::new(), Vec::new());
        for _ in 0..10 {
            let i = rng.gen_range(0..v.len());
            for k in 0..3 {
                let at = |s: f64| {
                    let mut p = v.clone();
                    p[i][k] += s;
                    energy_data(&p, scan.triangles(), &target, Some(&model_lm), &w)
                        .unwrap()
                        .value
                };
                fd.push((at(h) - at(-h)) / (2.0 * h));
                an.push(e.gradient[i][k]);
            }
        }
        worst_data = worst_data.max(rel_err(&an, &fd));

        // Data, landmark and prior terms through the pose.
        let mut pose = model.sample(&mut rng, 2.0);
        pose.rotation = Vector3::from_fn(|_, _| rng.gen_range(-0.01..0.01));
        pose.translation = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let e = model_energy(&model, &pose, &target, &w).unwrap();
        let mut an = e.grad_beta.clone();
        an.extend(e.grad_rotation.iter());
        an.extend(e.grad_translation.iter());
        let fd: Vec<f64> = (0..m + 6)
            .map(|c| {
                // Rotation steps move vertices 1e-5 mm at the RMS radius.
                let step = if (m..m + 3).contains(&c) { h / rms } else { h };
                let at = |s: f64| {
                    let mut p = pose.clone();
                    match c {
                        c if c < m => p.beta[c] += s,
                        c if c < m + 3 => p.rotation[c - m] += s,
                        c => p.translation[c - m - 3] += s,
                    }
                    model_energy(&model, &p, &target, &w).unwrap().value
                };
                (at(step) - at(-step)) / (2.0 * step)
            })
            .collect();
        worst_model = worst_model.max(rel_err(&an, &fd));

        // Coupling term in the free-form displacements.
        let base = mean.vertices();
        let fitted: Vec<Point3<f64>> = base
            .iter()
            .map(|p| p + Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let dv: Vec<Vector3<f64>> = (0..base.len())
            .map(|_| Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let (_, g) = coupling_energy(base, &fitted, &dv, w.lambda_coup);
        let (mut an, mut fd) = (Vec::new(), Vec::new());
        for _ in 0..10 {
            let i = rng.gen_range(0..dv.len());
            for k in 0..3 {
                let at = |s: f64| {
                    let mut d = dv.clone();
                    d[i][k] += s;
                    coupling_energy(base, &fitted, &d, w.lambda_coup).0
                };
                fd.push((at(h) - at(-h)) / (2.0 * h));
                an.push(g[i][k]);
            }
        }
        worst_coup = worst_coup.max(rel_err(&an, &fd));
    }
    outcome(
        worst_data < 1e-4 && worst_model < 1e-4 && worst_coup < 1e-4,
        format!("configs=20 max_rel_err data={worst_data:.2e} pose={worst_model:.2e} coupling={worst_coup:.2e}"),
    )
}

fn brute_force_distance(mesh: &TriMesh, q: &Point3<f64>) -> f64 {
    (0..mesh.triangle_count())
        .map(|t| {
            let [a, b, c] = mesh.triangle_points(t);
            (closest_point_on_triangle(q, &a, &b, &c).0 - q).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

fn geometry() -> Outcome {
    let n = 64;
    let radius = 20.0;
    let c = (n as f64 - 1.0) / 2.0;
    let vol = LabelVolume::from_fn([n, n, n], [1.0; 3], Point3::origin(), |p| {
        i64::from((p - Point3::new(c, c, c)).norm() <= radius)
    })
    .unwrap();
    let iso = extract_isosurface(&vol, 1, ExtractOptions::default()).unwrap();
    let analytic = 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3);
    let mc_err = (enclosed_volume(&iso.mesh).unwrap().value - analytic).abs() / analytic;

    // 20 meshes × 5000 queries.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut meshes: Vec<TriMesh> = (0..10)
        .map(|i| {
            let (a, b) = (0.3 + 0.1 * i as f64, 0.2 + 0.05 * i as f64);
            icosphere(10.0, 3).transformed(|p| {
                Point3::from(p.coords * (1.0 + 0.2 * (p.x * a).sin() * (p.y * b).cos()))
            })
        })
        .collect();
    meshes.extend(set100().iter().take(10).cloned());
    let mut pairs = 0usize;
    let mut bvh_err: f64 = 0.0;
    for mesh in &meshes {
        let idx = SpatialIndex::build(mesh);
        let bb = ssm_core::mesh::Aabb::from_points(mesh.vertices());
        let pad = 0.2 * (bb.max - bb.min);
        for _ in 0..5000 {
            let q = Point3::from(Vector3::from_fn(|k, _| {
                rng.gen_range(bb.min[k] - pad[k]..bb.max[k] + pad[k])
            }));
            bvh_err =
                bvh_err.max((idx.nearest(&q).distance - brute_force_distance(mesh, &q)).abs());
            pairs += 1;
        }
    }

    let mut last = enclosed_volume(&asset().mesh).unwrap().value;
    let mut insufflation_ok = true;
    let mut volumes = Vec::new();
    for off in [1.0, 2.0, 5.0] {
        let m = insufflate(&asset().mesh, off).unwrap();
        let hits = detect_self_intersections(&m).len();
        let v = enclosed_volume(&m).unwrap().value;
        insufflation_ok &= hits == 0 && v > last;
        volumes.push(format!("{v:.0}"));
        last = v;
    }
    outcome(
        mc_err < 0.02 && bvh_err <= 1e-9 && pairs >= 100_000 && insufflation_ok,
        format!(
            "mc_volume_error={:.3}% bvh_pairs={pairs} bvh_max_diff={bvh_err:.1e} insufflated_volumes=[{}] mm3 clean={insufflation_ok}",
            100.0 * mc_err,
            volumes.join(", ")
        ),
    )
}

fn ssm(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_ssm"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "ssm {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn pipeline(root: &Path) {
    let p = |n: &str| root.join(n).to_str().unwrap().to_string();
    ssm(&["template", "--out", &p("template")]);
    ssm(&[
        "generate",
        "--template",
        &p("template"),
        "--n",
        "50",
        "--seed",
        "21",
        "--out",
        &p("train"),
    ]);
    ssm(&[
        "generate",
        "--template",
        &p("template"),
        "--n",
        "3",
        "--seed",
        "22",
        "--out",
        &p("test"),
    ]);
    ssm(&["train", "--dataset", &p("train"), "--out", &p("model/m")]);
    ssm(&[
        "fit",
        "--model",
        &p("model/m"),
        "--scan",
        &p("test/mesh_0000.ply"),
        "--coregister",
        "--seed",
        "5",
        "--out",
        &p("fit"),
    ]);
    ssm(&[
        "evaluate",
        "--model",
        &p("model/m"),
        "--train",
        &p("train"),
        "--test",
        &p("test"),
        "--samples",
        "200",
        "--seed",
        "6",
        "--out",
        &p("eval"),
    ]);
}

fn is_manifest(p: &Path) -> bool {
    p.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.ends_with("manifest.json"))
}

/// Every file below `dir`, run manifests aside (they carry timestamps).
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !is_manifest(&p) {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn manifest_outputs(dir: &Path) -> Vec<serde_json::Value> {
    let mut files: Vec<PathBuf> = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if is_manifest(&p) {
                files.push(p);
            }
        }
    }
    files.sort();
    files
        .iter()
        .map(|f| {
            serde_json::from_str::<serde_json::Value>(&std::fs::read_to_string(f).unwrap()).unwrap()
                ["outputs"]
                .clone()
        })
        .collect()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline(&a);
    pipeline(&b);
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    let differing: Vec<String> = sa
        .keys()
        .chain(sb.keys())
        .filter(|k| sa.get(*k) != sb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let meshes = sa
        .keys()
        .filter(|k| k.extension().is_some_and(|e| e == "ply"))
        .count();
    let report_a: EvalReport = load_report(&a.join("eval/report.json")).unwrap();
    let report_b: EvalReport = load_report(&b.join("eval/report.json")).unwrap();
    let manifests_equal = manifest_outputs(&a) == manifest_outputs(&b);
    outcome(
        differing.is_empty() && report_a == report_b && manifests_equal && meshes > 50,
        format!(
            "files={} meshes={meshes} differing={differing:?} reports_equal={} manifest_hashes_equal={manifests_equal}",
            sa.len(),
            report_a == report_b
        ),
    )
}

fn specificity() -> Outcome {
    let model = model500();
    let training = TrainingSet::new(set500()).unwrap();
    let config = SpecificityConfig::default();
    let nn = training
        .mean_nearest_neighbor_distance(config.shortlist)
        .unwrap();
    let full = model.component_count();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut pass = true;
    let mut parts = Vec::new();
    for k in [1, 5, 10, full] {
        let s = eval_specificity(model, &training, k, &config, &mut rng).unwrap();
        let mean = s.mean.unwrap_or(f64::INFINITY);
        pass &= s.n == 1000 && mean < 3.0 * nn;
        parts.push(format!("k{k}={mean:.3}"));
    }
    outcome(
        pass,
        format!(
            "samples=1000 clip=3 train_nn={nn:.3} mm bound={:.3} mm {}",
            3.0 * nn,
            parts.join(" ")
        ),
    )
}

fn main() {
    let checks: [(&str, u64, fn() -> Outcome); 9] = [
        ("pca_exactness", 30, pca_exactness),
        ("compactness", 120, compactness),
        ("generalization", 300, generalization),
        ("rigid_recovery", 30, rigid_recovery),
        ("coregistration_bump", 60, bump),
        ("gradients", 60, gradients),
        ("geometry", 120, geometry),
        ("determinism", 600, determinism),
        ("specificity", 300, specificity),
    ];
    let mut failed = Vec::new();
    for (i, (name, limit, check)) in checks.into_iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check));
        let took = start.elapsed();
        let in_time = took <= Duration::from_secs(limit);
        let (pass, detail) = match result {
            Ok(o) => (o.pass && in_time, o.detail),
            Err(p) => (
                false,
                p.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into()),
            ),
        };
        println!(
            "{} {}. {name}: {detail} [{:.1} s, limit {limit} s]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            took.as_secs_f64()
        );
        if !pass {
            failed.push(name);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed: {failed:?}");
        std::process::exit(1);
    }
}
