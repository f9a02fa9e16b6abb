//! C ABI for the fracflow toolkit.
//!
//! Every function returns an [`FfStatus`]; `FF_STATUS_OK` (0) means
//! success. On failure a thread-local message describes the problem —
//! fetch it with [`ff_last_error_message`]. Objects created by `ff_*_new`
//! / `ff_*_build` / `ff_*_load` functions are owned by the caller and must
//! be released with the matching `ff_*_free`.
//!
//! All array buffers are caller-allocated `double` arrays with explicit
//! lengths; matrices are row-major. Strings are NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use fracflow::experiment::{run_example, ExperimentConfig};
use fracflow::fine::{solve_fine, Mobility, Source};
use fracflow::mesh::{build_geometry, Geometry, GeometrySpec};
use fracflow::net::{load_model, SurrogateNet};
use fracflow::nlmc::CoarseModel;
use fracflow::FracError;

/// Result codes for every API call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FfStatus {
    Ok = 0,
    /// A pointer argument was NULL.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// JSON input could not be parsed.
    MalformedJson = 3,
    /// Configuration or argument values violate a precondition.
    InvalidArgument = 4,
    /// Geometry construction or validation failed.
    GeometryError = 5,
    /// A linear solve or basis construction failed.
    SolveError = 6,
    /// File input/output failed.
    IoError = 7,
    /// A buffer length does not match the expected size.
    SizeMismatch = 8,
    /// The callee panicked; state may be inconsistent.
    Panic = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap();
    });
}

fn status_of(err: &FracError) -> FfStatus {
    match err {
        FracError::InvalidGeometry(_) | FracError::MisalignedFracture { .. } => {
            FfStatus::GeometryError
        }
        FracError::SolveFailure { .. }
        | FracError::RankDeficientConstraints { .. }
        | FracError::ConstraintResidual { .. }
        | FracError::NonFinite { .. } => FfStatus::SolveError,
        FracError::DimensionMismatch { .. } => FfStatus::SizeMismatch,
        FracError::Io { .. } => FfStatus::IoError,
        FracError::MalformedFile { .. } => FfStatus::MalformedJson,
        FracError::InvalidConfig(_) | FracError::Other(_) => FfStatus::InvalidArgument,
    }
}

fn fail(err: &FracError) -> FfStatus {
    set_error(&err.to_string());
    status_of(err)
}

/// Run `f` with panics converted to `FfStatus::Panic`.
fn guarded(f: impl FnOnce() -> FfStatus) -> FfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&msg);
            FfStatus::Panic
        }
    }
}

/// Parse a required C string argument.
///
/// # Safety
/// `ptr` must be NULL or point to a NUL-terminated string.
unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, FfStatus> {
    if ptr.is_null() {
        set_error(&format!("{what} is NULL"));
        return Err(FfStatus::NullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(&format!("{what} is not valid UTF-8"));
        FfStatus::InvalidUtf8
    })
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T, FfStatus> {
    serde_json::from_str(text).map_err(|e| {
        set_error(&format!("{what}: {e}"));
        FfStatus::MalformedJson
    })
}

macro_rules! require_nonnull {
    ($ptr:expr, $what:literal) => {
        if $ptr.is_null() {
            set_error(concat!($what, " is NULL"));
            return FfStatus::NullPointer;
        }
    };
}

/// Copy the last error message into `buf` (NUL-terminated, truncated to
/// `len` bytes). Returns the full message length in bytes, excluding the
/// terminator, so callers can re-query with a larger buffer. Passing
/// `buf = NULL` or `len = 0` only queries the length.
#[no_mangle]
pub unsafe extern "C" fn ff_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ff_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

/// Opaque fractured-geometry handle.
pub struct FfGeometry {
    inner: Geometry,
}

/// Build a geometry from a JSON spec (domain extents, grid sizes, fracture
/// list). On success `*out` owns the new handle.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ff_geometry_from_json(
    spec_json: *const c_char,
    out: *mut *mut FfGeometry,
) -> FfStatus {
    guarded(|| {
        require_nonnull!(out, "out");
        let text = match read_str(spec_json, "spec_json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let spec: GeometrySpec = match parse_json(text, "geometry spec") {
            Ok(s) => s,
            Err(s) => return s,
        };
        match build_geometry(&spec) {
            Ok(geo) => {
                *out = Box::into_raw(Box::new(FfGeometry { inner: geo }));
                FfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release a geometry handle. NULL is ignored.
///
/// # Safety
/// `geo` must be a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ff_geometry_free(geo: *mut FfGeometry) {
    if !geo.is_null() {
        drop(Box::from_raw(geo));
    }
}

/// Number of coarse degrees of freedom (matrix blocks + fracture pieces).
///
/// # Safety
/// `geo` must be a live geometry handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ff_geometry_n_dofs(geo: *const FfGeometry, out: *mut usize) -> FfStatus {
    guarded(|| {
        require_nonnull!(geo, "geo");
        require_nonnull!(out, "out");
        *out = (*geo).inner.index.n;
        FfStatus::Ok
    })
}

/// Number of fine-grid vertices.
///
/// # Safety
/// `geo` must be a live geometry handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ff_geometry_n_vertices(
    geo: *const FfGeometry,
    out: *mut usize,
) -> FfStatus {
    guarded(|| {
        require_nonnull!(geo, "geo");
        require_nonnull!(out, "out");
        *out = (*geo).inner.n_vertices;
        FfStatus::Ok
    })
}

/// Number of coarse blocks.
///
/// # Safety
/// `geo` must be a live geometry handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ff_geometry_n_blocks(
    geo: *const FfGeometry,
    out: *mut usize,
) -> FfStatus {
    guarded(|| {
        require_nonnull!(geo, "geo");
        require_nonnull!(out, "out");
        *out = (*geo).inner.n_blocks();
        FfStatus::Ok
    })
}

/// Build a new geometry with fracture segment `segment` translated
/// vertically by `offset_blocks` coarse blocks (negative = down).
///
/// # Safety
/// `geo` must be a live geometry handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ff_geometry_shift_fracture(
    geo: *const FfGeometry,
    segment: usize,
    offset_blocks: i64,
    out: *mut *mut FfGeometry,
) -> FfStatus {
    guarded(|| {
        require_nonnull!(geo, "geo");
        require_nonnull!(out, "out");
        match (*geo).inner.shift_fracture(segment, offset_blocks) {
            Ok(shifted) => {
                *out = Box::into_raw(Box::new(FfGeometry { inner: shifted }));
                FfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

// ---------------------------------------------------------------------------
// Fine-scale solver
// ---------------------------------------------------------------------------

/// Solve the fine-scale problem from a zero initial state. Writes
/// `(n_steps + 1) × n_vertices` states row-major into `states_out`
/// (`states_len` must equal that product).
///
/// `mobility_json` example: `{"kind":"constant","value":1.0}`.
/// `source_json` example:
/// `{"kind":"two_well","block_plus":2,"block_minus":7,"magnitude":1.0}`.
///
/// # Safety
/// `geo` must be a live geometry handle, the strings NUL-terminated, and
/// `states_out` must point to at least `states_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ff_fine_solve(
    geo: *const FfGeometry,
    mobility_json: *const c_char,
    source_json: *const c_char,
    n_steps: usize,
    total_time: f64,
    states_out: *mut f64,
    states_len: usize,
) -> FfStatus {
    guarded(|| {
        require_nonnull!(geo, "geo");
        require_nonnull!(states_out, "states_out");
        let geo = &(*geo).inner;
        let mobility: Mobility = match read_str(mobility_json, "mobility_json")
            .and_then(|t| parse_json(t, "mobility"))
        {
            Ok(m) => m,
            Err(s) => return s,
        };
        if let Err(e) = mobility.validate() {
            return fail(&e);
        }
        let source: Source = match read_str(source_json, "source_json")
            .and_then(|t| parse_json(t, "source"))
        {
            Ok(s) => s,
            Err(s) => return s,
        };
        let expected = (n_steps + 1) * geo.n_vertices;
        if states_len != expected {
            set_error(&format!(
                "states_len must be (n_steps + 1) * n_vertices = {expected}, got {states_len}"
            ));
            return FfStatus::SizeMismatch;
        }
        match solve_fine(geo, &mobility, &source, None, n_steps, total_time) {
            Ok(states) => {
                let flat = std::slice::from_raw_parts_mut(states_out, states_len);
                for (row, state) in states.iter().enumerate() {
                    flat[row * geo.n_vertices..(row + 1) * geo.n_vertices]
                        .copy_from_slice(state);
                }
                FfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

// ---------------------------------------------------------------------------
// Coarse (upscaled) model
// ---------------------------------------------------------------------------

/// Opaque upscaled-model handle (basis, transmissibilities, steppers).
pub struct FfCoarseModel {
    geo: Geometry,
    model: CoarseModel,
}

/// Build the upscaled model for a geometry: constraint-minimizing basis
/// with oversampling width `k`, transmissibility operators, and time
/// steppers for `n_steps` implicit steps over `total_time`.
///
/// # Safety
/// `geo` must be a live geometry handle, `mobility_json` NUL-terminated,
/// and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ff_coarse_model_build(
    geo: *const FfGeometry,
    k: usize,
    mobility_json: *const c_char,
    n_steps: usize,
    total_time: f64,
    out: *mut *mut FfCoarseModel,
) -> FfStatus {
    guarded(|| {
        require_nonnull!(geo, "geo");
        require_nonnull!(out, "out");
        let geo = &(*geo).inner;
        let mobility: Mobility = match read_str(mobility_json, "mobility_json")
            .and_then(|t| parse_json(t, "mobility"))
        {
            Ok(m) => m,
            Err(s) => return s,
        };
        if let Err(e) = mobility.validate() {
            return fail(&e);
        }
        match CoarseModel::build(geo, k, &mobility, n_steps, total_time) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(FfCoarseModel {
                    geo: geo.clone(),
                    model,
                }));
                FfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release a coarse-model handle. NULL is ignored.
///
/// # Safety
/// `model` must be a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ff_coarse_model_free(model: *mut FfCoarseModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Coarse dimension of the model.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ff_coarse_model_n(
    model: *const FfCoarseModel,
    out: *mut usize,
) -> FfStatus {
    guarded(|| {
        require_nonnull!(model, "model");
        require_nonnull!(out, "out");
        *out = (*model).model.n;
        FfStatus::Ok
    })
}

/// Run the upscaled model for one source from a zero initial state.
/// Writes `(n_steps + 1) × n` coarse states into `states_out` and
/// `n_steps × n` coarse loads into `loads_out`, both row-major.
///
/// # Safety
/// `model` must be a live handle, `source_json` NUL-terminated, and the
/// buffers at least `states_len` / `loads_len` doubles long.
#[no_mangle]
pub unsafe extern "C" fn ff_coarse_model_run(
    model: *const FfCoarseModel,
    source_json: *const c_char,
    states_out: *mut f64,
    states_len: usize,
    loads_out: *mut f64,
    loads_len: usize,
) -> FfStatus {
    guarded(|| {
        require_nonnull!(model, "model");
        require_nonnull!(states_out, "states_out");
        require_nonnull!(loads_out, "loads_out");
        let handle = &*model;
        let source: Source = match read_str(source_json, "source_json")
            .and_then(|t| parse_json(t, "source"))
        {
            Ok(s) => s,
            Err(s) => return s,
        };
        let n = handle.model.n;
        let want_states = (handle.model.n_steps + 1) * n;
        let want_loads = handle.model.n_steps * n;
        if states_len != want_states || loads_len != want_loads {
            set_error(&format!(
                "need states_len = {want_states} and loads_len = {want_loads}, \
                 got {states_len} and {loads_len}"
            ));
            return FfStatus::SizeMismatch;
        }
        match handle.model.run(&handle.geo, &source, None) {
            Ok(traj) => {
                let states = std::slice::from_raw_parts_mut(states_out, states_len);
                for (row, s) in traj.states.iter().enumerate() {
                    states[row * n..(row + 1) * n].copy_from_slice(s);
                }
                let loads = std::slice::from_raw_parts_mut(loads_out, loads_len);
                for (row, l) in traj.loads.iter().enumerate() {
                    loads[row * n..(row + 1) * n].copy_from_slice(l);
                }
                FfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

// ---------------------------------------------------------------------------
// Surrogate networks
// ---------------------------------------------------------------------------

/// Opaque trained-network handle.
pub struct FfNet {
    inner: SurrogateNet,
}

/// Load a trained network from a model file written by the toolkit.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ff_net_load(path: *const c_char, out: *mut *mut FfNet) -> FfStatus {
    guarded(|| {
        require_nonnull!(out, "out");
        let path = match read_str(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_model(Path::new(path)) {
            Ok(net) => {
                *out = Box::into_raw(Box::new(FfNet { inner: net }));
                FfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release a network handle. NULL is ignored.
///
/// # Safety
/// `net` must be a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ff_net_free(net: *mut FfNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Input width of the network (state and source encoding concatenated).
///
/// # Safety
/// `net` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ff_net_d_in(net: *const FfNet, out: *mut usize) -> FfStatus {
    guarded(|| {
        require_nonnull!(net, "net");
        require_nonnull!(out, "out");
        *out = (*net).inner.d_in();
        FfStatus::Ok
    })
}

/// Output width of the network (the coarse dimension).
///
/// # Safety
/// `net` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ff_net_d_out(net: *const FfNet, out: *mut usize) -> FfStatus {
    guarded(|| {
        require_nonnull!(net, "net");
        require_nonnull!(out, "out");
        *out = (*net).inner.d_out();
        FfStatus::Ok
    })
}

/// One surrogate step: `y = N(x)` including the model's standardization.
///
/// # Safety
/// `net` must be a live handle; `x` / `y_out` must point to `x_len` /
/// `y_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ff_net_predict(
    net: *const FfNet,
    x: *const f64,
    x_len: usize,
    y_out: *mut f64,
    y_len: usize,
) -> FfStatus {
    guarded(|| {
        require_nonnull!(net, "net");
        require_nonnull!(x, "x");
        require_nonnull!(y_out, "y_out");
        let net = &(*net).inner;
        if x_len != net.d_in() || y_len != net.d_out() {
            set_error(&format!(
                "need x_len = {} and y_len = {}, got {x_len} and {y_len}",
                net.d_in(),
                net.d_out()
            ));
            return FfStatus::SizeMismatch;
        }
        let input = std::slice::from_raw_parts(x, x_len);
        match net.predict(input) {
            Ok(y) => {
                std::slice::from_raw_parts_mut(y_out, y_len).copy_from_slice(&y);
                FfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

/// Run a full experiment (generate → train → evaluate) from a JSON config.
/// On success writes all artifacts to the config's output directory and
/// stores the mean one-step test errors of the observation-, mixture-, and
/// simulation-trained networks into `means_out[0..3]` (pass NULL to skip).
///
/// # Safety
/// `config_json` must be NUL-terminated; `means_out` NULL or 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn ff_run_example(
    config_json: *const c_char,
    means_out: *mut f64,
) -> FfStatus {
    guarded(|| {
        let text = match read_str(config_json, "config_json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let config: ExperimentConfig = match parse_json(text, "experiment config") {
            Ok(c) => c,
            Err(s) => return s,
        };
        match run_example(&config) {
            Ok(report) => {
                if !means_out.is_null() {
                    let out = std::slice::from_raw_parts_mut(means_out, 3);
                    for (slot, name) in out.iter_mut().zip(["o", "m", "s"]) {
                        *slot = report.networks[name].mean;
                    }
                }
                FfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}
