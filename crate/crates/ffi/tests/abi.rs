use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;
use std::sync::OnceLock;

use nalgebra::Point3;
use ssm_core::mesh::LandmarkSet;
use ssm_core::shape::{fit_pca, save_model, PoseParams, ShapeModel};
use ssm_core::synth::{
    build_template, generate_dataset, GenerationConfig, TemplateAsset, TemplateParams,
};
use ssm_ffi::*;

struct Fixture {
    _dir: tempfile::TempDir,
    model_path: PathBuf,
    model: ShapeModel,
    asset: TemplateAsset,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let asset = build_template(&TemplateParams::coarse()).unwrap();
        let data = generate_dataset(&asset, 12, &GenerationConfig::default(), 11).unwrap();
        let verts: Vec<Vec<Point3<f64>>> =
            data.iter().map(|(m, _)| m.vertices().to_vec()).collect();
        let refs: Vec<&[Point3<f64>]> = verts.iter().map(|v| v.as_slice()).collect();
        let model = fit_pca(&refs, &[1.0; 12], Some(6))
            .unwrap()
            .with_topology(&asset.mesh)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let model_path = dir.path().join("m");
        save_model(&model, &model_path).unwrap();
        Fixture {
            _dir: dir,
            model_path,
            model,
            asset,
        }
    })
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(ssm_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

unsafe fn vertices(mesh: *const SsmMesh) -> Vec<f64> {
    let mut buf = vec![0.0; 3 * ssm_mesh_vertex_count(mesh)];
    assert_eq!(
        ssm_mesh_copy_vertices(mesh, buf.as_mut_ptr(), buf.len()),
        SsmStatus::Ok
    );
    buf
}

fn load_model_handle() -> *mut SsmModel {
    let mut model = ptr::null_mut();
    let path = cstr(&fixture().model_path);
    assert_eq!(
        unsafe { ssm_model_load(path.as_ptr(), &mut model) },
        SsmStatus::Ok,
        "{}",
        last_error()
    );
    model
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(ssm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn unit_cube_from_arrays() {
    let v: Vec<f64> = (0..8)
        .flat_map(|i| [(i & 1) as f64, (i >> 1 & 1) as f64, (i >> 2 & 1) as f64])
        .collect();
    let t: [u32; 36] = [
        0, 2, 3, 0, 3, 1, 4, 5, 7, 4, 7, 6, 0, 1, 5, 0, 5, 4, 2, 6, 7, 2, 7, 3, 0, 4, 6, 0, 6, 2,
        1, 3, 7, 1, 7, 5,
    ];
    unsafe {
        let mut mesh = ptr::null_mut();
        assert_eq!(
            ssm_mesh_from_arrays(v.as_ptr(), 8, t.as_ptr(), 12, &mut mesh),
            SsmStatus::Ok
        );
        assert_eq!(ssm_mesh_vertex_count(mesh), 8);
        assert_eq!(ssm_mesh_triangle_count(mesh), 12);
        let mut vol = 0.0;
        assert_eq!(ssm_mesh_volume(mesh, &mut vol), SsmStatus::Ok);
        assert!((vol.abs() - 1.0).abs() < 1e-12, "{vol}");
        assert_eq!(vertices(mesh), v);
        let mut small = [0.0; 3];
        assert_eq!(
            ssm_mesh_copy_vertices(mesh, small.as_mut_ptr(), 3),
            SsmStatus::InvalidArgument
        );
        let (mut mean, mut max) = (1.0, 1.0);
        assert_eq!(
            ssm_mesh_distance(mesh, mesh, &mut mean, &mut max),
            SsmStatus::Ok
        );
        assert_eq!((mean, max), (0.0, 0.0));

        let dir = tempfile::tempdir().unwrap();
        let path = cstr(&dir.path().join("cube.ply"));
        assert_eq!(ssm_mesh_save(mesh, path.as_ptr()), SsmStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(ssm_mesh_load(path.as_ptr(), &mut back), SsmStatus::Ok);
        assert_eq!(vertices(back), v);
        ssm_mesh_free(back);
        ssm_mesh_free(mesh);

        let bad = [0u32, 1, 99];
        let mut out = ptr::null_mut();
        assert_eq!(
            ssm_mesh_from_arrays(v.as_ptr(), 8, bad.as_ptr(), 1, &mut out),
            SsmStatus::Mesh
        );
        assert!(out.is_null());
        assert!(!last_error().is_empty());
    }
}

#[test]
fn errors_set_the_last_message() {
    unsafe {
        let mut mesh = ptr::null_mut();
        let missing = cstr(Path::new("/nonexistent/x.ply"));
        assert_eq!(ssm_mesh_load(missing.as_ptr(), &mut mesh), SsmStatus::Io);
        assert!(mesh.is_null());
        assert!(
            last_error().contains("/nonexistent/x.ply"),
            "{}",
            last_error()
        );
        assert_eq!(
            ssm_mesh_load(ptr::null(), &mut mesh),
            SsmStatus::NullPointer
        );
        assert!(last_error().contains("path"));
        assert_eq!(
            ssm_mesh_load(missing.as_ptr(), ptr::null_mut()),
            SsmStatus::NullPointer
        );
        let mut model = ptr::null_mut();
        assert_eq!(ssm_model_load(missing.as_ptr(), &mut model), SsmStatus::Io);
        assert_eq!(ssm_mesh_vertex_count(ptr::null()), 0);
        assert_eq!(ssm_fit_converged(ptr::null()), 0);
        assert!(ssm_fit_state_json(ptr::null()).is_null());
        ssm_mesh_free(ptr::null_mut());
        ssm_model_free(ptr::null_mut());
        ssm_fit_free(ptr::null_mut());
        ssm_string_free(ptr::null_mut());

        let m = load_model_handle();
        assert!(last_error().is_empty());
        ssm_model_free(m);
    }
}

#[test]
fn error_messages_are_per_thread() {
    unsafe {
        let mut mesh = ptr::null_mut();
        assert_eq!(
            ssm_mesh_load(ptr::null(), &mut mesh),
            SsmStatus::NullPointer
        );
    }
    let other = std::thread::spawn(last_error).join().unwrap();
    assert!(other.is_empty());
    assert!(!last_error().is_empty());
}

#[test]
fn decode_matches_the_core_model() {
    let f = fixture();
    let model = load_model_handle();
    unsafe {
        assert_eq!(ssm_model_component_count(model), 6);
        let beta = [1.0, -0.5, 0.25, 0.0, 0.0, 0.1];
        let mut mesh = ptr::null_mut();
        assert_eq!(
            ssm_model_decode(model, beta.as_ptr(), beta.len(), &mut mesh),
            SsmStatus::Ok
        );
        let expected = f
            .model
            .decode(&PoseParams::from_beta(beta.to_vec()))
            .unwrap();
        let got = vertices(mesh);
        let err = expected
            .iter()
            .flat_map(|p| [p.x, p.y, p.z])
            .zip(&got)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
        assert_eq!(ssm_mesh_triangle_count(mesh), f.model.triangles().len());
        ssm_mesh_free(mesh);

        let long = [0.0; 7];
        let mut out = ptr::null_mut();
        assert_eq!(
            ssm_model_decode(model, long.as_ptr(), 7, &mut out),
            SsmStatus::Model
        );
        assert!(out.is_null());
        ssm_model_free(model);
    }
}

#[test]
fn fit_recovers_a_model_instance() {
    let f = fixture();
    let model = load_model_handle();
    unsafe {
        let beta = [0.8, -0.6, 0.3, 0.0, 0.0, 0.0];
        let sd: Vec<f64> = f.model.variances().iter().map(|v| v.sqrt()).collect();
        let beta: Vec<f64> = beta.iter().zip(&sd).map(|(b, s)| b * s).collect();
        let mut scan = ptr::null_mut();
        assert_eq!(
            ssm_model_decode(model, beta.as_ptr(), 6, &mut scan),
            SsmStatus::Ok
        );
        let scan_points = f
            .model
            .decode(&PoseParams::from_beta(beta.clone()))
            .unwrap();
        let lm = LandmarkSet::point_bound(f.asset.landmarks().positions(&scan_points));
        let lm_json = CString::new(serde_json::to_string(&lm.to_json()).unwrap()).unwrap();

        let mut fit = ptr::null_mut();
        let status = ssm_fit(model, scan, lm_json.as_ptr(), ptr::null(), 0, &mut fit);
        assert_eq!(status, SsmStatus::Ok, "{}", last_error());
        assert_eq!(ssm_fit_converged(fit), 1);
        let mut count = 0usize;
        let mut got = vec![0.0; 6];
        let (mut rot, mut trans) = ([9.0; 3], [9.0; 3]);
        assert_eq!(
            ssm_fit_pose(
                fit,
                got.as_mut_ptr(),
                6,
                &mut count,
                rot.as_mut_ptr(),
                trans.as_mut_ptr()
            ),
            SsmStatus::Ok
        );
        assert_eq!(count, 6);
        for (g, b) in got.iter().zip(&beta) {
            assert!((g - b).abs() < 1e-3 * sd[0], "{got:?} vs {beta:?}");
        }
        assert!(
            rot.iter().chain(&trans).all(|x| x.abs() < 1e-3),
            "{rot:?} {trans:?}"
        );

        let mut fitted = ptr::null_mut();
        assert_eq!(ssm_fit_mesh(fit, &mut fitted), SsmStatus::Ok);
        let (mut mean, mut max) = (0.0, 0.0);
        assert_eq!(
            ssm_mesh_distance(fitted, scan, &mut mean, &mut max),
            SsmStatus::Ok
        );
        assert!(mean < 1e-3 && max < 1e-2, "{mean} {max}");

        let json = ssm_fit_state_json(fit);
        assert!(!json.is_null());
        let state: serde_json::Value =
            serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        assert!(state["converged"].as_bool().unwrap());
        ssm_string_free(json);

        let bad_cfg = CString::new("{not json").unwrap();
        let mut none = ptr::null_mut();
        assert_eq!(
            ssm_fit(model, scan, ptr::null(), bad_cfg.as_ptr(), 0, &mut none),
            SsmStatus::InvalidArgument
        );
        assert!(none.is_null());

        ssm_mesh_free(fitted);
        ssm_fit_free(fit);
        ssm_mesh_free(scan);
        ssm_model_free(model);
    }
}

#[test]
fn header_is_generated_and_compiles() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/ssm.h")).unwrap();
    for name in [
        "ssm_last_error_message",
        "ssm_version",
        "ssm_mesh_load",
        "ssm_mesh_from_arrays",
        "ssm_mesh_save",
        "ssm_mesh_copy_vertices",
        "ssm_mesh_volume",
        "ssm_mesh_distance",
        "ssm_mesh_free",
        "ssm_model_load",
        "ssm_model_decode",
        "ssm_model_free",
        "ssm_fit",
        "ssm_fit_pose",
        "ssm_fit_state_json",
        "ssm_fit_free",
        "ssm_string_free",
        "SSM_STATUS_OK = 0",
        "typedef struct SsmMesh SsmMesh",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"ssm.h\"\nint main(void) { SsmMesh *m = 0; SsmStatus s = ssm_mesh_load(\"x\", &m); \
         ssm_mesh_free(m); return s == SSM_STATUS_OK; }\n",
    )
    .unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    match std::process::Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(dir.join("include"))
        .arg(&src)
        .output()
    {
        Ok(out) => assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        ),
        Err(e) => eprintln!("skipping C compile check: {cc} unavailable ({e})"),
    }
}
