//! C interface to voxfuse.
//!
//! Objects cross the boundary as opaque handles created by `vf_*_new` /
//! `vf_*_load` and released with the matching `vf_*_free`. Every fallible
//! call returns a [`VfStatus`]; the message for the most recent failure on
//! the calling thread is available from [`vf_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

use voxfuse::camera::{Fragment, FragmentAssembler, Frame, Intrinsics, Pose};
use voxfuse::meshing::{read_mesh, write_mesh, MeshFormat, TriangleMesh};
use voxfuse::metrics::{eval_3d, Eval3dParams};
use voxfuse::nnops::load_weights;
use voxfuse::pipeline::{reconstruct_fragment, FusionConfig, Model, ReconState};
use voxfuse::raster::{depth_feature_image, Raster};
use voxfuse::Error;

/// Result codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Weights = 5,
    EmptyMesh = 6,
    Internal = 7,
}

/// Learned model: config plus weights.
pub struct VfModel {
    model: Arc<Model>,
}

/// Running reconstruction fed frame by frame.
pub struct VfReconstruction {
    model: Arc<Model>,
    assembler: FragmentAssembler,
    state: ReconState,
}

/// Triangle mesh with `f32` vertices and `u32` indices.
pub struct VfMesh {
    mesh: TriangleMesh,
}

/// 3-D mesh comparison scores.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VfMetrics3D {
    pub acc: f64,
    pub comp: f64,
    pub prec: f64,
    pub recall: f64,
    pub fscore: f64,
}

/// Pinhole intrinsics in pixels.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VfIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> VfStatus {
    match e {
        Error::Io { .. } => VfStatus::Io,
        Error::Parse { .. } | Error::MeshFormat(_) | Error::Config(_) | Error::Scene(_) => VfStatus::Parse,
        Error::BadMagic { .. }
        | Error::Version(_)
        | Error::Truncated(_)
        | Error::MissingTensor(_)
        | Error::UnknownTensor(_)
        | Error::TensorShape { .. } => VfStatus::Weights,
        Error::EmptyMesh(_) => VfStatus::EmptyMesh,
        Error::Camera(_) | Error::Image { .. } | Error::Shape(_) => VfStatus::InvalidArgument,
        _ => VfStatus::Internal,
    }
}

fn fail(e: Error) -> VfStatus {
    set_error(e.to_string());
    status_of(&e)
}

/// Runs `f`, turning panics into [`VfStatus::Internal`].
fn guard(f: impl FnOnce() -> Result<(), VfStatus>) -> VfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VfStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            VfStatus::Internal
        }
    }
}

fn null_err(what: &str) -> VfStatus {
    set_error(format!("{what} is null"));
    VfStatus::NullPointer
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, VfStatus> {
    if p.is_null() {
        return Err(null_err(what));
    }
    match unsafe { CStr::from_ptr(p) }.to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => {
            set_error(format!("{what} is not valid UTF-8"));
            Err(VfStatus::InvalidArgument)
        }
    }
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn load_config(p: *const c_char) -> Result<FusionConfig, VfStatus> {
    if p.is_null() {
        return Ok(FusionConfig::default());
    }
    let path = unsafe { path_arg(p, "config path") }?;
    FusionConfig::load(&path).map_err(fail)
}

fn into_handle<T>(out: *mut *mut T, value: T) -> Result<(), VfStatus> {
    if out.is_null() {
        return Err(null_err("output handle"));
    }
    // SAFETY: checked non-null above; the caller provides writable storage.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Version string of the library; static, never freed.
#[no_mangle]
pub extern "C" fn vf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread (empty if none). Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn vf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a model with seeded weights. `config_path` may be null for the
/// default configuration.
///
/// # Safety
/// `config_path` must be null or a NUL-terminated string; `out` must point
/// to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn vf_model_new_seeded(config_path: *const c_char, seed: u64, out: *mut *mut VfModel) -> VfStatus {
    guard(|| {
        let cfg = unsafe { load_config(config_path) }?;
        let model = Model::seeded(&cfg, seed).map_err(fail)?;
        into_handle(out, VfModel { model: Arc::new(model) })
    })
}

/// Loads a model from a weight file written by the library.
///
/// # Safety
/// As for [`vf_model_new_seeded`]; `weights_path` must be non-null.
#[no_mangle]
pub unsafe extern "C" fn vf_model_load(
    config_path: *const c_char,
    weights_path: *const c_char,
    out: *mut *mut VfModel,
) -> VfStatus {
    guard(|| {
        let cfg = unsafe { load_config(config_path) }?;
        let path = unsafe { path_arg(weights_path, "weights path") }?;
        let set = load_weights(&path).map_err(fail)?;
        let model = Model::from_weights(&cfg, &set).map_err(fail)?;
        into_handle(out, VfModel { model: Arc::new(model) })
    })
}

/// # Safety
/// `model` must be null or a handle from `vf_model_*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vf_model_free(model: *mut VfModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Starts an empty reconstruction. The model may be freed afterwards.
///
/// # Safety
/// `model` must be a live model handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vf_recon_new(model: *const VfModel, out: *mut *mut VfReconstruction) -> VfStatus {
    guard(|| {
        let m = unsafe { model.as_ref() }.ok_or_else(|| null_err("model"))?;
        let cfg = &m.model.config;
        into_handle(
            out,
            VfReconstruction {
                assembler: FragmentAssembler::new(cfg.fragment_params()),
                state: ReconState::new(cfg.voxel_size),
                model: Arc::clone(&m.model),
            },
        )
    })
}

/// # Safety
/// `recon` must be null or a live reconstruction handle.
#[no_mangle]
pub unsafe extern "C" fn vf_recon_free(recon: *mut VfReconstruction) {
    if !recon.is_null() {
        drop(unsafe { Box::from_raw(recon) });
    }
}

fn run_fragment(r: &mut VfReconstruction, frag: Option<Fragment>) -> Result<(), VfStatus> {
    if let Some(f) = frag {
        reconstruct_fragment(&f, &mut r.state, &r.model).map_err(fail)?;
    }
    Ok(())
}

/// Adds one depth frame. `pose` is the row-major 4×4 camera-to-world
/// transform (OpenCV camera axes), `depth` holds `width * height` metric
/// depths row by row with 0 marking invalid pixels. A fragment is
/// reconstructed and fused whenever enough key frames have gathered.
///
/// # Safety
/// `recon` must be live; `pose` must point to 16 doubles and `depth` to
/// `width * height` floats.
#[no_mangle]
pub unsafe extern "C" fn vf_recon_add_depth_frame(
    recon: *mut VfReconstruction,
    index: u64,
    pose: *const f64,
    intrinsics: VfIntrinsics,
    depth: *const f32,
) -> VfStatus {
    guard(|| {
        let r = unsafe { recon.as_mut() }.ok_or_else(|| null_err("reconstruction"))?;
        if pose.is_null() {
            return Err(null_err("pose"));
        }
        if depth.is_null() {
            return Err(null_err("depth"));
        }
        let m = unsafe { std::slice::from_raw_parts(pose, 16) };
        let rotation = nalgebra::Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let translation = nalgebra::Vector3::new(m[3], m[7], m[11]);
        let pose = Pose::new(rotation, translation).map_err(fail)?;
        let k = Intrinsics::new(
            intrinsics.fx,
            intrinsics.fy,
            intrinsics.cx,
            intrinsics.cy,
            intrinsics.width,
            intrinsics.height,
        )
        .map_err(fail)?;
        let (w, h) = (intrinsics.width as usize, intrinsics.height as usize);
        let d = Raster::from_vec(w, h, 1, unsafe { std::slice::from_raw_parts(depth, w * h) }.to_vec());
        let frame = Frame::new(index as usize, pose, k, depth_feature_image(&d), Some(d)).map_err(fail)?;
        let frag = r.assembler.push(frame);
        run_fragment(r, frag)
    })
}

/// Reconstructs the trailing partial fragment, if any.
///
/// # Safety
/// `recon` must be live.
#[no_mangle]
pub unsafe extern "C" fn vf_recon_finish(recon: *mut VfReconstruction) -> VfStatus {
    guard(|| {
        let r = unsafe { recon.as_mut() }.ok_or_else(|| null_err("reconstruction"))?;
        let frag = r.assembler.finish();
        run_fragment(r, frag)
    })
}

/// Number of fragments fused so far, or 0 for a null handle.
///
/// # Safety
/// `recon` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn vf_recon_fragment_count(recon: *const VfReconstruction) -> u32 {
    unsafe { recon.as_ref() }.map_or(0, |r| r.state.fragments)
}

/// Extracts the current global surface.
///
/// # Safety
/// `recon` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vf_recon_extract_mesh(recon: *const VfReconstruction, out: *mut *mut VfMesh) -> VfStatus {
    guard(|| {
        let r = unsafe { recon.as_ref() }.ok_or_else(|| null_err("reconstruction"))?;
        let mesh = r.state.extract_mesh(r.model.config.theta);
        into_handle(out, VfMesh { mesh })
    })
}

/// Reads a PLY or OBJ mesh.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vf_mesh_read(path: *const c_char, out: *mut *mut VfMesh) -> VfStatus {
    guard(|| {
        let p = unsafe { path_arg(path, "mesh path") }?;
        let mesh = read_mesh(&p).map_err(fail)?;
        into_handle(out, VfMesh { mesh })
    })
}

/// Writes the mesh; the format follows the extension (.ply or .obj).
///
/// # Safety
/// `mesh` must be live; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vf_mesh_write(mesh: *const VfMesh, path: *const c_char) -> VfStatus {
    guard(|| {
        let m = unsafe { mesh.as_ref() }.ok_or_else(|| null_err("mesh"))?;
        let p = unsafe { path_arg(path, "mesh path") }?;
        let format = MeshFormat::from_path(&p).map_err(fail)?;
        write_mesh(&m.mesh, &p, format).map_err(fail)
    })
}

/// # Safety
/// `mesh` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn vf_mesh_vertex_count(mesh: *const VfMesh) -> usize {
    unsafe { mesh.as_ref() }.map_or(0, |m| m.mesh.vertices.len())
}

/// # Safety
/// `mesh` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn vf_mesh_triangle_count(mesh: *const VfMesh) -> usize {
    unsafe { mesh.as_ref() }.map_or(0, |m| m.mesh.triangles.len())
}

/// Pointer to `3 * vertex_count` floats, owned by the mesh.
///
/// # Safety
/// `mesh` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn vf_mesh_vertices(mesh: *const VfMesh) -> *const f32 {
    unsafe { mesh.as_ref() }.map_or(std::ptr::null(), |m| m.mesh.vertices.as_ptr().cast())
}

/// Pointer to `3 * triangle_count` vertex indices, owned by the mesh.
///
/// # Safety
/// `mesh` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn vf_mesh_triangles(mesh: *const VfMesh) -> *const u32 {
    unsafe { mesh.as_ref() }.map_or(std::ptr::null(), |m| m.mesh.triangles.as_ptr().cast())
}

/// # Safety
/// `mesh` must be null or a mesh handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vf_mesh_free(mesh: *mut VfMesh) {
    if !mesh.is_null() {
        drop(unsafe { Box::from_raw(mesh) });
    }
}

/// Accuracy, completeness and F-score of `pred` against `gt` at threshold
/// `tau` meters.
///
/// # Safety
/// Both meshes must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vf_eval_3d(
    pred: *const VfMesh,
    gt: *const VfMesh,
    tau: f64,
    seed: u64,
    out: *mut VfMetrics3D,
) -> VfStatus {
    guard(|| {
        let p = unsafe { pred.as_ref() }.ok_or_else(|| null_err("predicted mesh"))?;
        let g = unsafe { gt.as_ref() }.ok_or_else(|| null_err("ground-truth mesh"))?;
        let o = unsafe { out.as_mut() }.ok_or_else(|| null_err("output metrics"))?;
        if tau.is_nan() || tau <= 0.0 {
            set_error("tau must be positive");
            return Err(VfStatus::InvalidArgument);
        }
        let params = Eval3dParams {
            tau,
            seed,
            ..Eval3dParams::default()
        };
        let m = eval_3d(&p.mesh, &g.mesh, &params).map_err(fail)?;
        *o = VfMetrics3D {
            acc: m.acc,
            comp: m.comp,
            prec: m.prec,
            recall: m.recall,
            fscore: m.fscore,
        };
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_codes_map() {
        assert_eq!(status_of(&Error::UnknownTensor("x".into())), VfStatus::Weights);
        assert_eq!(status_of(&Error::EmptyMesh(voxfuse::error::MeshSide::Predicted)), VfStatus::EmptyMesh);
        assert_eq!(status_of(&Error::Diverged(3)), VfStatus::Internal);
    }

    #[test]
    fn version_is_terminated() {
        let v = unsafe { CStr::from_ptr(vf_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
