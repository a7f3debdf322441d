//! C interface to `ssm-core`.
//!
//! Objects cross the boundary as opaque handles (`SsmMesh`, `SsmModel`,
//! `SsmFit`), each released with its own `*_free`. Every fallible call
//! returns an [`SsmStatus`]; on failure [`ssm_last_error_message`] describes
//! the error on the calling thread. Lengths are in millimeters.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ssm_core::fitting::{
    coregister, fit_model, mesh_to_scan_distance, FitConfig, FitError, FitState, ScanTarget,
};
use ssm_core::mesh::{enclosed_volume, load_mesh, save_mesh, LandmarkSet, MeshError, TriMesh};
use ssm_core::shape::{load_model, PoseParams, ShapeError, ShapeModel};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Mesh = 4,
    Model = 5,
    Fit = 6,
    Panic = 7,
}

/// A triangle mesh.
pub struct SsmMesh(TriMesh);

/// A statistical shape model.
pub struct SsmModel(ShapeModel);

/// A finished fit: state plus fitted mesh.
pub struct SsmFit {
    state: FitState,
    mesh: TriMesh,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).unwrap_or_default());
}

struct Failure(SsmStatus, String);

impl From<MeshError> for Failure {
    fn from(e: MeshError) -> Self {
        let code = match e {
            MeshError::Io { .. } => SsmStatus::Io,
            _ => SsmStatus::Mesh,
        };
        Failure(code, e.to_string())
    }
}

impl From<ShapeError> for Failure {
    fn from(e: ShapeError) -> Self {
        let code = match e {
            ShapeError::Mesh(MeshError::Io { .. }) => SsmStatus::Io,
            _ => SsmStatus::Model,
        };
        Failure(code, e.to_string())
    }
}

impl From<FitError> for Failure {
    fn from(e: FitError) -> Self {
        let code = match e {
            FitError::Mesh(MeshError::Io { .. }) => SsmStatus::Io,
            FitError::BadConfig(_) | FitError::BadWeights(_) | FitError::BadSchedule(_) => {
                SsmStatus::InvalidArgument
            }
            _ => SsmStatus::Fit,
        };
        Failure(code, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(SsmStatus::InvalidArgument, msg.into())
}

/// Run `f`, turning errors and panics into a status plus the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SsmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SsmStatus::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            SsmStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(SsmStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(SsmStatus::NullPointer, format!("{name} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(SsmStatus::NullPointer, format!("{name} is null")))
}

/// Slice from a pointer that may be null only when `len` is 0.
unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(SsmStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ssm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ssm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load an OBJ or PLY mesh.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ssm_mesh_load(path: *const c_char, out: *mut *mut SsmMesh) -> SsmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = PathBuf::from(str_arg(path, "path")?);
        *out = boxed(SsmMesh(load_mesh(&path)?));
        Ok(())
    })
}

/// Build a mesh from `3·vertex_count` coordinates and `3·triangle_count` indices.
///
/// # Safety
/// The arrays hold at least the stated number of elements; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ssm_mesh_from_arrays(
    vertices: *const f64,
    vertex_count: usize,
    triangles: *const u32,
    triangle_count: usize,
    out: *mut *mut SsmMesh,
) -> SsmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let v = slice_arg(vertices, 3 * vertex_count, "vertices")?;
        let t = slice_arg(triangles, 3 * triangle_count, "triangles")?;
        let points = v
            .chunks_exact(3)
            .map(|c| nalgebra::Point3::new(c[0], c[1], c[2]))
            .collect();
        let tris = t
            .chunks_exact(3)
            .map(|c| [c[0] as usize, c[1] as usize, c[2] as usize])
            .collect();
        *out = boxed(SsmMesh(TriMesh::new(points, tris)?));
        Ok(())
    })
}

/// Save as OBJ or binary PLY, chosen by extension.
///
/// # Safety
/// `mesh` is a live handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ssm_mesh_save(mesh: *const SsmMesh, path: *const c_char) -> SsmStatus {
    guard(|| {
        let mesh = ref_arg(mesh, "mesh")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        save_mesh(&mesh.0, &path)?;
        Ok(())
    })
}

/// Vertex count, 0 for a null handle.
///
/// # Safety
/// `mesh` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ssm_mesh_vertex_count(mesh: *const SsmMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.vertex_count())
}

/// Triangle count, 0 for a null handle.
///
/// # Safety
/// `mesh` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ssm_mesh_triangle_count(mesh: *const SsmMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.triangle_count())
}

/// Copy `x0, y0, z0, x1, …` into `buffer`, which holds `len` doubles (at least 3·V).
///
/// # Safety
/// `mesh` is a live handle; `buffer` holds `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ssm_mesh_copy_vertices(
    mesh: *const SsmMesh,
    buffer: *mut f64,
    len: usize,
) -> SsmStatus {
    guard(|| {
        let mesh = ref_arg(mesh, "mesh")?;
        let coords = mesh.0.flat_coords();
        if len < coords.len() {
            return Err(invalid(format!(
                "buffer holds {len} values, need {}",
                coords.len()
            )));
        }
        if buffer.is_null() {
            return Err(Failure(SsmStatus::NullPointer, "buffer is null".into()));
        }
        std::slice::from_raw_parts_mut(buffer, coords.len()).copy_from_slice(&coords);
        Ok(())
    })
}

/// Enclosed volume (mm³) of a closed mesh.
///
/// # Safety
/// `mesh` is a live handle; `volume` is writable.
#[no_mangle]
pub unsafe extern "C" fn ssm_mesh_volume(mesh: *const SsmMesh, volume: *mut f64) -> SsmStatus {
    guard(|| {
        let mesh = ref_arg(mesh, "mesh")?;
        let out = out_arg(volume, "volume")?;
        *out = enclosed_volume(&mesh.0)?.value;
        Ok(())
    })
}

/// Symmetric mean and maximum surface distance between two meshes.
///
/// # Safety
/// Both handles are live; `mean` and `max` are writable.
#[no_mangle]
pub unsafe extern "C" fn ssm_mesh_distance(
    a: *const SsmMesh,
    b: *const SsmMesh,
    mean: *mut f64,
    max: *mut f64,
) -> SsmStatus {
    guard(|| {
        let (a, b) = (ref_arg(a, "a")?, ref_arg(b, "b")?);
        let (mean, max) = (out_arg(mean, "mean")?, out_arg(max, "max")?);
        if a.0.triangle_count() == 0 || b.0.triangle_count() == 0 {
            return Err(invalid("meshes must have triangles"));
        }
        let d = mesh_to_scan_distance(&a.0, &b.0);
        *mean = d.mean;
        *max = d.max;
        Ok(())
    })
}

/// # Safety
/// `mesh` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ssm_mesh_free(mesh: *mut SsmMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// Load a model written by `ssm train` (`<path>.ssm.json` + `.ssm.bin`).
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ssm_model_load(path: *const c_char, out: *mut *mut SsmModel) -> SsmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = PathBuf::from(str_arg(path, "path")?);
        *out = boxed(SsmModel(load_model(&path)?));
        Ok(())
    })
}

/// Number of components, 0 for a null handle.
///
/// # Safety
/// `model` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ssm_model_component_count(model: *const SsmModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.component_count())
}

/// Decode `beta` (length = component count) at identity pose.
///
/// # Safety
/// `model` is a live handle; `beta` holds `beta_len` doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ssm_model_decode(
    model: *const SsmModel,
    beta: *const f64,
    beta_len: usize,
    out: *mut *mut SsmMesh,
) -> SsmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let model = ref_arg(model, "model")?;
        let beta = slice_arg(beta, beta_len, "beta")?;
        *out = boxed(SsmMesh(
            model.0.decode_mesh(&PoseParams::from_beta(beta.to_vec()))?,
        ));
        Ok(())
    })
}

/// # Safety
/// `model` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ssm_model_free(model: *mut SsmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Fit `model` to `scan`. `landmarks_json` (landmark file contents) and
/// `config_json` (fit config) may be null; `coregister` non-zero adds the
/// free-form stage.
///
/// # Safety
/// Handles are live; strings are null or NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ssm_fit(
    model: *const SsmModel,
    scan: *const SsmMesh,
    landmarks_json: *const c_char,
    config_json: *const c_char,
    coregister_flag: c_int,
    out: *mut *mut SsmFit,
) -> SsmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let model = &ref_arg(model, "model")?.0;
        let scan = &ref_arg(scan, "scan")?.0;
        let landmarks = match opt_str_arg(landmarks_json, "landmarks_json")? {
            Some(text) => {
                let v: serde_json::Value =
                    serde_json::from_str(text).map_err(|e| invalid(format!("landmarks: {e}")))?;
                Some(LandmarkSet::from_json(&v)?)
            }
            None => None,
        };
        let config = match opt_str_arg(config_json, "config_json")? {
            Some(text) => FitConfig::from_json_str(text)?,
            None => FitConfig::default(),
        };
        let target = ScanTarget::new(scan.clone(), landmarks.as_ref())?;
        let fit = if coregister_flag != 0 {
            let r = coregister(model, &target, &config, None)?;
            SsmFit {
                state: r.state,
                mesh: r.mesh,
            }
        } else {
            let state = fit_model(model, &target, &config, None)?;
            let mesh = model.decode_mesh(&state.pose)?;
            SsmFit { state, mesh }
        };
        *out = boxed(fit);
        Ok(())
    })
}

/// Copy of the fitted mesh.
///
/// # Safety
/// `fit` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ssm_fit_mesh(fit: *const SsmFit, out: *mut *mut SsmMesh) -> SsmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        *out = boxed(SsmMesh(ref_arg(fit, "fit")?.mesh.clone()));
        Ok(())
    })
}

/// 1 when the fit converged, 0 otherwise or for a null handle.
///
/// # Safety
/// `fit` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ssm_fit_converged(fit: *const SsmFit) -> c_int {
    fit.as_ref().map_or(0, |f| f.state.converged as c_int)
}

/// Copy the pose: `beta` (up to `beta_len` values), rotation vector (3, radians)
/// and translation (3, mm). Any output pointer may be null to skip it.
/// `beta_count` receives the number of coefficients.
///
/// # Safety
/// `fit` is a live handle; non-null outputs hold the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn ssm_fit_pose(
    fit: *const SsmFit,
    beta: *mut f64,
    beta_len: usize,
    beta_count: *mut usize,
    rotation: *mut f64,
    translation: *mut f64,
) -> SsmStatus {
    guard(|| {
        let pose = &ref_arg(fit, "fit")?.state.pose;
        if let Some(c) = beta_count.as_mut() {
            *c = pose.beta.len();
        }
        if !beta.is_null() {
            let n = pose.beta.len().min(beta_len);
            std::slice::from_raw_parts_mut(beta, n).copy_from_slice(&pose.beta[..n]);
        }
        if !rotation.is_null() {
            std::slice::from_raw_parts_mut(rotation, 3).copy_from_slice(pose.rotation.as_slice());
        }
        if !translation.is_null() {
            std::slice::from_raw_parts_mut(translation, 3)
                .copy_from_slice(pose.translation.as_slice());
        }
        Ok(())
    })
}

/// Full fit state (pose, weights, energy history) as a JSON string, to be
/// released with [`ssm_string_free`]. Null on failure.
///
/// # Safety
/// `fit` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ssm_fit_state_json(fit: *const SsmFit) -> *mut c_char {
    let mut result = ptr::null_mut();
    let status = guard(|| {
        let fit = ref_arg(fit, "fit")?;
        let text = serde_json::to_string(&fit.state).map_err(|e| invalid(e.to_string()))?;
        result = CString::new(text)
            .map_err(|e| invalid(e.to_string()))?
            .into_raw();
        Ok(())
    });
    if status == SsmStatus::Ok {
        result
    } else {
        ptr::null_mut()
    }
}

/// # Safety
/// `fit` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ssm_fit_free(fit: *mut SsmFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// # Safety
/// `s` is null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ssm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
