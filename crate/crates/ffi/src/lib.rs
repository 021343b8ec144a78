//! C ABI for `gpk-core`.
//!
//! Every fallible function returns a [`GpkStatus`]; on failure the message is
//! available from [`gpk_last_error`] on the same thread. Objects cross the
//! boundary as opaque handles created by `*_new`/producer functions and
//! released with the matching `*_free`. Output pointers are only written on
//! success.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use gpk_core::camera::{CameraModel, GeometryError, ObjectBox3D, Plane3D};
use gpk_core::depth_grid::{self, DepthGrid, FitConfig, GridError, GridShape};
use gpk_core::evaluation;
use gpk_core::inference::{self, DepthEstimate, InferenceError};
use gpk_core::sampler::{self, GroundSample};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Degenerate camera, ray parallel to or meeting the plane behind the camera.
    Geometry = 3,
    /// A query or sample lies outside the grid.
    OutOfGrid = 4,
    /// Malformed serialized grid.
    Format = 5,
    /// The fit produced a non-finite loss.
    Diverged = 6,
    /// Output buffer too small; the required size was reported.
    BufferTooSmall = 7,
    /// A Rust panic was caught at the boundary.
    Panic = 8,
}

/// Pinhole camera built from a 3x4 projection matrix.
pub struct GpkCamera(CameraModel);

/// Dense depth grid.
pub struct GpkDepthGrid(DepthGrid);

/// Owned list of grounded samples.
pub struct GpkSampleSet(Vec<GroundSample>);

/// 3D box: bottom-face center, (h, w, l) and yaw, in the camera frame.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GpkBox3D {
    pub location: [f64; 3],
    pub dims: [f64; 3],
    pub yaw: f64,
}

impl From<&GpkBox3D> for ObjectBox3D {
    fn from(b: &GpkBox3D) -> Self {
        ObjectBox3D::new(b.location, b.dims, b.yaw)
    }
}

/// Pixel coordinates and the depth at that pixel.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GpkSample {
    pub u: f64,
    pub v: f64,
    pub z: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GpkDepthEstimate {
    pub z: f64,
    pub sigma: f64,
}

/// Grid fitting parameters; see [`gpk_fit_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GpkFitConfig {
    pub iterations: usize,
    pub step: f64,
    pub max_step: f64,
    /// Constant initial value; NaN selects the mean sample depth.
    pub init: f64,
    pub smoothness: f64,
    pub curvature: f64,
    pub min_step: f64,
}

impl From<&GpkFitConfig> for FitConfig {
    fn from(c: &GpkFitConfig) -> Self {
        FitConfig {
            iterations: c.iterations,
            step: c.step,
            max_step: c.max_step,
            init: if c.init.is_nan() { None } else { Some(c.init) },
            smoothness: c.smoothness,
            curvature: c.curvature,
            min_step: c.min_step,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(GpkStatus, String);

impl Failure {
    fn null(what: &str) -> Self {
        Failure(GpkStatus::NullPointer, format!("{what} is null"))
    }

    fn invalid(msg: impl Into<String>) -> Self {
        Failure(GpkStatus::InvalidArgument, msg.into())
    }
}

impl From<GeometryError> for Failure {
    fn from(e: GeometryError) -> Self {
        Failure(GpkStatus::Geometry, e.to_string())
    }
}

impl From<GridError> for Failure {
    fn from(e: GridError) -> Self {
        let status = match e {
            GridError::OutOfBounds { .. } | GridError::SamplesOutOfBounds(_) => GpkStatus::OutOfGrid,
            GridError::BadMagic | GridError::Length { .. } | GridError::Io(_) => GpkStatus::Format,
            GridError::Diverged { .. } => GpkStatus::Diverged,
            _ => GpkStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<InferenceError> for Failure {
    fn from(e: InferenceError) -> Self {
        Failure(GpkStatus::InvalidArgument, e.to_string())
    }
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GpkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GpkStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GpkStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::null(what))
}

unsafe fn array<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gpk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn gpk_status_message(status: GpkStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        GpkStatus::Ok => b"ok\0",
        GpkStatus::NullPointer => b"null pointer argument\0",
        GpkStatus::InvalidArgument => b"invalid argument\0",
        GpkStatus::Geometry => b"geometry error\0",
        GpkStatus::OutOfGrid => b"outside the grid\0",
        GpkStatus::Format => b"malformed grid data\0",
        GpkStatus::Diverged => b"fit diverged\0",
        GpkStatus::BufferTooSmall => b"buffer too small\0",
        GpkStatus::Panic => b"internal panic\0",
    };
    s.as_ptr().cast()
}

/// Library version, NUL-terminated.
#[no_mangle]
pub extern "C" fn gpk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// Camera ----------------------------------------------------------------------

/// Create a camera from a row-major 3x4 projection matrix.
///
/// # Safety
/// `p` must point to 12 doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpk_camera_new(p: *const f64, out_cam: *mut *mut GpkCamera) -> GpkStatus {
    guard(|| {
        let values: &[f64; 12] = array(p, 12, "p")?.try_into().unwrap();
        let slot = out(out_cam, "out_cam")?;
        *slot = boxed(GpkCamera(CameraModel::from_row_major(values)?));
        Ok(())
    })
}

/// # Safety
/// `cam` must be null or a handle from [`gpk_camera_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gpk_camera_free(cam: *mut GpkCamera) {
    if !cam.is_null() {
        drop(Box::from_raw(cam));
    }
}

/// Project a camera-frame point to `(u, v, depth)`.
///
/// # Safety
/// `point` must point to 3 doubles and `uvz` to 3 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn gpk_camera_project(
    cam: *const GpkCamera,
    point: *const f64,
    uvz: *mut f64,
) -> GpkStatus {
    guard(|| {
        let cam = deref(cam, "cam")?;
        let p = array(point, 3, "point")?;
        if uvz.is_null() {
            return Err(Failure::null("uvz"));
        }
        let r = cam.0.project(&nalgebra::Vector3::new(p[0], p[1], p[2]))?;
        slice::from_raw_parts_mut(uvz, 3).copy_from_slice(&r);
        Ok(())
    })
}

/// Depth where the ray through pixel `(u, v)` meets the plane `y = y0`.
///
/// # Safety
/// `cam` must be a live handle; `depth` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpk_camera_ray_plane_depth(
    cam: *const GpkCamera,
    u: f64,
    v: f64,
    y0: f64,
    depth: *mut f64,
) -> GpkStatus {
    guard(|| {
        let cam = deref(cam, "cam")?;
        let d = cam.0.ray_plane_depth(u, v, &Plane3D::FixedHeight { y0 })?;
        *out(depth, "depth")? = d;
        Ok(())
    })
}

/// Like [`gpk_camera_ray_plane_depth`] for the plane `normal . p = offset`.
///
/// # Safety
/// `normal` must point to 3 doubles; `depth` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpk_camera_ray_general_plane_depth(
    cam: *const GpkCamera,
    u: f64,
    v: f64,
    normal: *const f64,
    offset: f64,
    depth: *mut f64,
) -> GpkStatus {
    guard(|| {
        let cam = deref(cam, "cam")?;
        let n = array(normal, 3, "normal")?;
        let plane = Plane3D::general([n[0], n[1], n[2]], offset)?;
        *out(depth, "depth")? = cam.0.ray_plane_depth(u, v, &plane)?;
        Ok(())
    })
}

// Boxes -----------------------------------------------------------------------

/// The 8 corners, bottom face first (k1..k4) then top (k5..k8), as 24 doubles.
///
/// # Safety
/// `bx` must be valid; `corners` must point to 24 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn gpk_box_corners(bx: *const GpkBox3D, corners: *mut f64) -> GpkStatus {
    guard(|| {
        let bx = ObjectBox3D::from(deref(bx, "box")?);
        if corners.is_null() {
            return Err(Failure::null("corners"));
        }
        let dst = slice::from_raw_parts_mut(corners, 24);
        for (i, c) in bx.corners().iter().enumerate() {
            dst[3 * i..3 * i + 3].copy_from_slice(&[c.x, c.y, c.z]);
        }
        Ok(())
    })
}

/// Bird's-eye-view IoU, or NaN if either pointer is null.
///
/// # Safety
/// Non-null pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gpk_bev_iou(a: *const GpkBox3D, b: *const GpkBox3D) -> f64 {
    match (a.as_ref(), b.as_ref()) {
        (Some(a), Some(b)) => evaluation::bev_iou(&a.into(), &b.into()),
        _ => f64::NAN,
    }
}

/// 3D IoU, or NaN if either pointer is null.
///
/// # Safety
/// Non-null pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gpk_iou_3d(a: *const GpkBox3D, b: *const GpkBox3D) -> f64 {
    match (a.as_ref(), b.as_ref()) {
        (Some(a), Some(b)) => evaluation::iou_3d(&a.into(), &b.into()),
        _ => f64::NAN,
    }
}

// Samples ---------------------------------------------------------------------

/// Seeded grounded samples of a box's bottom face.
///
/// # Safety
/// `cam` and `bx` must be valid; `out_set` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpk_grounded_samples(
    cam: *const GpkCamera,
    bx: *const GpkBox3D,
    seed: u64,
    out_set: *mut *mut GpkSampleSet,
) -> GpkStatus {
    guard(|| {
        let cam = deref(cam, "cam")?;
        let bx = ObjectBox3D::from(deref(bx, "box")?);
        if !bx.is_valid() {
            return Err(Failure::invalid("box dimensions must be positive and finite"));
        }
        let slot = out(out_set, "out_set")?;
        let set = sampler::grounded_samples(&cam.0, &bx, seed)?;
        *slot = boxed(GpkSampleSet(set.samples));
        Ok(())
    })
}

/// Copy `len` caller samples into a new set.
///
/// # Safety
/// `samples` must point to `len` elements; `out_set` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpk_samples_new(
    samples: *const GpkSample,
    len: usize,
    out_set: *mut *mut GpkSampleSet,
) -> GpkStatus {
    guard(|| {
        let src = array(samples, len, "samples")?;
        let slot = out(out_set, "out_set")?;
        let v = src.iter().map(|s| GroundSample { u: s.u, v: s.v, z: s.z }).collect();
        *slot = boxed(GpkSampleSet(v));
        Ok(())
    })
}

/// Number of samples, 0 for null.
///
/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gpk_samples_len(set: *const GpkSampleSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.len())
}

/// Copy the samples into `buf` (capacity `cap`). With a small or null buffer
/// returns `BufferTooSmall` and only sets `*needed`.
///
/// # Safety
/// `buf` must have room for `cap` elements; `needed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpk_samples_copy(
    set: *const GpkSampleSet,
    buf: *mut GpkSample,
    cap: usize,
    needed: *mut usize,
) -> GpkStatus {
    guard(|| {
        let set = deref(set, "set")?;
        *out(needed, "needed")? = set.0.len();
        if buf.is_null() || cap < set.0.len() {
            return Err(Failure(GpkStatus::BufferTooSmall, format!("need {} samples", set.0.len())));
        }
        let dst = slice::from_raw_parts_mut(buf, set.0.len());
        for (d, s) in dst.iter_mut().zip(&set.0) {
            *d = GpkSample { u: s.u, v: s.v, z: s.z };
        }
        Ok(())
    })
}

/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gpk_samples_free(set: *mut GpkSampleSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

// Grids -----------------------------------------------------------------------

/// Grid of `height x width` nodes, spaced `stride` pixels, from row-major
/// `values` (`len` must equal `height * width`).
///
/// # Safety
/// `values` must point to `len` doubles; `out_grid` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpk_grid_new(
    height: usize,
    width: usize,
    stride: f64,
    values: *const f64,
    len: usize,
    out_grid: *mut *mut GpkDepthGrid,
) -> GpkStatus {
    guard(|| {
        let v = array(values, len, "values")?.to_vec();
        let slot = out(out_grid, "out_grid")?;
        let grid = DepthGrid::from_values(GridShape::new(height, width, stride)?, v)?;
        *slot = boxed(GpkDepthGrid(grid));
        Ok(())
    })
}

/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gpk_grid_free(grid: *mut GpkDepthGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// # Safety
/// `grid` must be a live handle; any non-null output must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpk_grid_shape(
    grid: *const GpkDepthGrid,
    height: *mut usize,
    width: *mut usize,
    stride: *mut f64,
) -> GpkStatus {
    guard(|| {
        let g = &deref(grid, "grid")?.0;
        if let Some(h) = height.as_mut() {
            *h = g.height();
        }
        if let Some(w) = width.as_mut() {
            *w = g.width();
        }
        if let Some(s) = stride.as_mut() {
            *s = g.stride();
        }
        Ok(())
    })
}

/// Copy the row-major values into `buf` (capacity `cap`).
///
/// # Safety
/// `buf` must have room for `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn gpk_grid_values(
    grid: *const GpkDepthGrid,
    buf: *mut f64,
    cap: usize,
) -> GpkStatus {
    guard(|| {
        let g = &deref(grid, "grid")?.0;
        let n = g.values().len();
        if buf.is_null() || cap < n {
            return Err(Failure(GpkStatus::BufferTooSmall, format!("need {n} values")));
        }
        slice::from_raw_parts_mut(buf, n).copy_from_slice(g.values());
        Ok(())
    })
}

/// Bilinear read-out at grid coordinates.
///
/// # Safety
/// `grid` must be a live handle; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpk_grid_interpolate(
    grid: *const GpkDepthGrid,
    ug: f64,
    vg: f64,
    value: *mut f64,
) -> GpkStatus {
    guard(|| {
        let z = deref(grid, "grid")?.0.interpolate(ug, vg)?;
        *out(value, "value")? = z;
        Ok(())
    })
}

/// Bilinear read-out at pixel coordinates.
///
/// # Safety
/// `grid` must be a live handle; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpk_grid_interpolate_pixel(
    grid: *const GpkDepthGrid,
    u: f64,
    v: f64,
    value: *mut f64,
) -> GpkStatus {
    guard(|| {
        let z = deref(grid, "grid")?.0.interpolate_pixel(u, v)?;
        *out(value, "value")? = z;
        Ok(())
    })
}

/// Mean L1 depth-align loss; the gradient is written to `grad` when it is
/// non-null (`grad_len` must then equal the node count).
///
/// # Safety
/// `grid`, `set` must be live handles; `grad` must have `grad_len` slots.
#[no_mangle]
pub unsafe extern "C" fn gpk_depth_align_loss(
    grid: *const GpkDepthGrid,
    set: *const GpkSampleSet,
    loss: *mut f64,
    grad: *mut f64,
    grad_len: usize,
) -> GpkStatus {
    guard(|| {
        let g = &deref(grid, "grid")?.0;
        let s = &deref(set, "set")?.0;
        let loss = out(loss, "loss")?;
        if !grad.is_null() && grad_len != g.values().len() {
            return Err(Failure::invalid(format!(
                "gradient buffer has {grad_len} slots, grid has {}",
                g.values().len()
            )));
        }
        let report = depth_grid::depth_align_loss(g, s)?;
        *loss = report.loss;
        if !grad.is_null() {
            slice::from_raw_parts_mut(grad, grad_len).copy_from_slice(&report.grad);
        }
        Ok(())
    })
}

/// Default fitting parameters.
#[no_mangle]
pub extern "C" fn gpk_fit_config_default() -> GpkFitConfig {
    let d = FitConfig::default();
    GpkFitConfig {
        iterations: d.iterations,
        step: d.step,
        max_step: d.max_step,
        init: d.init.unwrap_or(f64::NAN),
        smoothness: d.smoothness,
        curvature: d.curvature,
        min_step: d.min_step,
    }
}

/// Fit a new grid to `nsets` sample sets. `config` may be null for defaults;
/// `final_loss` may be null.
///
/// # Safety
/// `sets` must point to `nsets` live handles; `out_grid` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpk_grid_fit(
    sets: *const *const GpkSampleSet,
    nsets: usize,
    height: usize,
    width: usize,
    stride: f64,
    config: *const GpkFitConfig,
    out_grid: *mut *mut GpkDepthGrid,
    final_loss: *mut f64,
) -> GpkStatus {
    guard(|| {
        let handles = array(sets, nsets, "sets")?;
        let mut refs = Vec::with_capacity(nsets);
        for h in handles {
            refs.push(deref(*h, "sets[i]")?.0.as_slice());
        }
        let cfg = config.as_ref().map_or_else(FitConfig::default, FitConfig::from);
        let slot = out(out_grid, "out_grid")?;
        let report = depth_grid::fit_grid(&refs, GridShape::new(height, width, stride)?, &cfg)?;
        if let Some(l) = final_loss.as_mut() {
            *l = report.final_loss();
        }
        *slot = boxed(GpkDepthGrid(report.grid));
        Ok(())
    })
}

/// Serialize in the DGRD layout. Always sets `*needed`; with a small or null
/// buffer returns `BufferTooSmall`.
///
/// # Safety
/// `buf` must have room for `cap` bytes; `needed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpk_grid_encode(
    grid: *const GpkDepthGrid,
    buf: *mut u8,
    cap: usize,
    needed: *mut usize,
) -> GpkStatus {
    guard(|| {
        let bytes = depth_grid::encode_grid(&deref(grid, "grid")?.0);
        *out(needed, "needed")? = bytes.len();
        if buf.is_null() || cap < bytes.len() {
            return Err(Failure(GpkStatus::BufferTooSmall, format!("need {} bytes", bytes.len())));
        }
        slice::from_raw_parts_mut(buf, bytes.len()).copy_from_slice(&bytes);
        Ok(())
    })
}

/// Parse a DGRD byte string.
///
/// # Safety
/// `bytes` must point to `len` bytes; `out_grid` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpk_grid_decode(
    bytes: *const u8,
    len: usize,
    out_grid: *mut *mut GpkDepthGrid,
) -> GpkStatus {
    guard(|| {
        let b = array(bytes, len, "bytes")?;
        let slot = out(out_grid, "out_grid")?;
        *slot = boxed(GpkDepthGrid(depth_grid::decode_grid(b)?));
        Ok(())
    })
}

// Depth estimates -------------------------------------------------------------

/// Pinhole depth `f * h / h2d`.
///
/// # Safety
/// `depth` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpk_geometry_depth(f: f64, h: f64, h2d: f64, depth: *mut f64) -> GpkStatus {
    guard(|| {
        let z = inference::geometry_depth(f, h, h2d)?;
        *out(depth, "depth")? = z;
        Ok(())
    })
}

/// Inverse-sigma weighted fusion of `n` estimates. `sigma` may be null.
///
/// # Safety
/// `estimates` must point to `n` elements; `z` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpk_fuse_depths(
    estimates: *const GpkDepthEstimate,
    n: usize,
    z: *mut f64,
    sigma: *mut f64,
) -> GpkStatus {
    guard(|| {
        let est: Vec<DepthEstimate> = array(estimates, n, "estimates")?
            .iter()
            .map(|e| DepthEstimate::new(e.z, e.sigma))
            .collect();
        let z = out(z, "z")?;
        let fused = inference::fuse_depths(&est)?;
        *z = fused.z;
        if let Some(s) = sigma.as_mut() {
            *s = fused.sigma;
        }
        Ok(())
    })
}

/// Mean absolute percentage error as a fraction.
///
/// # Safety
/// `preds` and `gts` must point to `n` doubles; `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpk_mpe(
    preds: *const f64,
    gts: *const f64,
    n: usize,
    result: *mut f64,
) -> GpkStatus {
    guard(|| {
        let p = array(preds, n, "preds")?;
        let g = array(gts, n, "gts")?;
        let r = out(result, "result")?;
        *r = evaluation::mpe(p, g).map_err(|e| Failure::invalid(e.to_string()))?;
        Ok(())
    })
}
