use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::Point3;
use ssm_core::cli::{sha256_file, RunManifest, MANIFEST_FILE};
use ssm_core::eval::{load_report, EvalReport};
use ssm_core::ingest::{save_volume, LabelVolume, VoxelType};
use ssm_core::mesh::{load_mesh, Landmark, LandmarkSet};

fn ssm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssm"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = ssm(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const CUBE: &str = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\nv 1 0 1\nv 1 1 1\nv 0 1 1\n\
f 1 4 3 2\nf 5 6 7 8\nf 1 2 6 5\nf 2 3 7 6\nf 3 4 8 7\nf 4 1 5 8\n";

#[test]
fn measure_unit_cube() {
    let dir = tempfile::tempdir().unwrap();
    let cube = dir.path().join("cube.obj");
    std::fs::write(&cube, CUBE).unwrap();
    let out = ok(&["measure", "--mesh", s(&cube)]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["closed"], true);
    assert!((v["volume"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((v["area"].as_f64().unwrap() - 6.0).abs() < 1e-12);
    assert_eq!(v["triangles"], 12);
}

#[test]
fn usage_errors_exit_2_and_domain_errors_exit_1() {
    let out = ssm(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = ssm(&["measure", "--mesh", "x.obj", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let out = ssm(&["fit", "--scan", "x.ply", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(ssm(&["fit", "--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let scan = dir.path().join("cube.obj");
    std::fs::write(&scan, CUBE).unwrap();
    let missing = dir.path().join("missing.ssm");
    let out = ssm(&[
        "fit",
        "--model",
        s(&missing),
        "--scan",
        s(&scan),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.ssm.json"));
    let out = ssm(&["measure", "--mesh", s(&dir.path().join("nope.ply"))]);
    assert_eq!(out.status.code(), Some(1));
}

/// Every file under `dir` except the manifest, relative path → bytes.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != MANIFEST_FILE {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn manifest(path: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// The manifest lists exactly the other files in `dir` with their hashes.
fn check_manifest(dir: &Path) -> RunManifest {
    let m = manifest(&dir.join(MANIFEST_FILE));
    let files = snapshot(dir);
    assert_eq!(m.outputs.len(), files.len(), "{:?}", m.outputs.keys());
    for (rel, hash) in &m.outputs {
        assert_eq!(&sha256_file(&dir.join(rel)).unwrap(), hash, "{rel}");
    }
    assert!(!m.started.is_empty() && !m.finished.is_empty());
    m
}

#[test]
fn generate_is_deterministic_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["generate", "--n", "5", "--seed", "7", "--out", s(&a)]);
    ok(&[
        "generate",
        "--n",
        "5",
        "--seed",
        "7",
        "--out",
        s(&b),
        "--threads",
        "1",
    ]);
    assert_eq!(snapshot(&a), snapshot(&b));
    let (ma, mb) = (check_manifest(&a), check_manifest(&b));
    assert_eq!(ma.outputs, mb.outputs);
    assert_eq!(ma.config, mb.config);
    assert_eq!(ma.seed, Some(7));
    let c = dir.path().join("c");
    ok(&["generate", "--n", "5", "--seed", "8", "--out", s(&c)]);
    assert_ne!(snapshot(&a), snapshot(&c));
}

#[test]
fn ingest_writes_mesh_and_snapped_landmarks() {
    let dir = tempfile::tempdir().unwrap();
    let vol = LabelVolume::from_fn([32, 32, 32], [1.0; 3], Point3::origin(), |p| {
        ((p - Point3::new(15.5, 15.5, 15.5)).norm() < 10.0) as i64 * 3
    })
    .unwrap();
    let hdr = save_volume(&vol, dir.path(), "ball", VoxelType::Uint8).unwrap();
    let lm = LandmarkSet::point_bound([(Landmark::Fundus, Point3::new(15.5, 15.5, 27.0))]);
    let lm_path = dir.path().join("lm.json");
    lm.save(&lm_path).unwrap();
    let out = dir.path().join("out/ball.ply");
    ok(&[
        "ingest",
        "--volume",
        s(&hdr),
        "--label",
        "3",
        "--landmarks",
        s(&lm_path),
        "--out",
        s(&out),
    ]);
    let mesh = load_mesh(&out).unwrap();
    assert!(mesh.edge_report().is_closed());
    let snapped = LandmarkSet::load(&dir.path().join("out/ball.landmarks.json")).unwrap();
    assert!(snapped.is_point_bound() && snapped.len() == 1);
    let m = manifest(&dir.path().join("out/ball.manifest.json"));
    assert_eq!(m.outputs.len(), 2);
    let d = m.config["snap_distances"]["fundus"].as_f64().unwrap();
    assert!(d > 1.0 && d < 2.0, "{d}");

    let far = LandmarkSet::point_bound([(Landmark::Fundus, Point3::new(15.5, 15.5, 80.0))]);
    far.save(&lm_path).unwrap();
    let bad = ssm(&[
        "ingest",
        "--volume",
        s(&hdr),
        "--label",
        "3",
        "--landmarks",
        s(&lm_path),
        "--out",
        s(&out),
    ]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("fundus out of tolerance"));
    let absent = ssm(&[
        "ingest",
        "--volume",
        s(&hdr),
        "--label",
        "9",
        "--out",
        s(&out),
    ]);
    assert_eq!(absent.status.code(), Some(1));
}

#[test]
fn pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    ok(&["template", "--out", s(&p("tpl"))]);
    check_manifest(&p("tpl"));
    ok(&[
        "generate",
        "--template",
        s(&p("tpl")),
        "--n",
        "14",
        "--seed",
        "3",
        "--out",
        s(&p("train")),
    ]);
    ok(&[
        "generate",
        "--template",
        s(&p("tpl")),
        "--n",
        "2",
        "--seed",
        "4",
        "--out",
        s(&p("test")),
    ]);
    ok(&[
        "train",
        "--dataset",
        s(&p("train")),
        "--components",
        "8",
        "--out",
        s(&p("models/m")),
    ]);
    let tm = manifest(&p("models/m.manifest.json"));
    assert_eq!(tm.outputs.len(), 2);
    ok(&[
        "sample",
        "--model",
        s(&p("models/m")),
        "--n",
        "2",
        "--seed",
        "1",
        "--out",
        s(&p("samples")),
    ]);
    check_manifest(&p("samples"));

    // Config file < flags.
    let cfg = p("fit.json");
    std::fs::write(&cfg, r#"{"weights": {"lambda_p2p": 1.0, "lambda_n": 10.0, "lambda_lm": 10.0, "lambda_prior": 1.0, "lambda_coup": 7.0}, "seed": 5}"#).unwrap();
    let scan = p("test/mesh_0000.ply");
    ok(&[
        "fit",
        "--model",
        s(&p("models/m")),
        "--scan",
        s(&scan),
        "--config",
        s(&cfg),
        "--lambda-coup",
        "3.5",
        "--coregister",
        "--out",
        s(&p("fit")),
    ]);
    let fm = check_manifest(&p("fit"));
    assert_eq!(fm.config["fit"]["weights"]["lambda_coup"], 3.5);
    assert_eq!(fm.config["fit"]["weights"]["lambda_n"], 10.0);
    assert_eq!(fm.seed, Some(5));
    let csv = std::fs::read_to_string(p("fit/distances.csv")).unwrap();
    let fitted = load_mesh(&p("fit/fitted.ply")).unwrap();
    assert_eq!(csv.lines().count(), 1 + fitted.vertex_count());
    assert!(csv
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap() <= 4.0));
    let state: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p("fit/fit_state.json")).unwrap()).unwrap();
    assert_eq!(state["dv"].as_array().unwrap().len(), fitted.vertex_count());
    assert!(!state["history"].as_array().unwrap().is_empty());

    ok(&[
        "evaluate",
        "--model",
        s(&p("models/m")),
        "--train",
        s(&p("train")),
        "--test",
        s(&p("test")),
        "--ks",
        "1,4,8,50",
        "--samples",
        "4",
        "--seed",
        "2",
        "--out",
        s(&p("eval")),
    ]);
    check_manifest(&p("eval"));
    let report: EvalReport = load_report(&p("eval/report.json")).unwrap();
    report.validate().unwrap();
    assert_eq!(report.component_counts, vec![1, 4, 8]);
    assert_eq!(report.fits.len(), 6);
    assert!(report.metadata.disjoint);
    assert_eq!(report.metadata.train_ids.len(), 14);
}
