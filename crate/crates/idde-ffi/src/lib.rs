//! C ABI over the idde toolkit. Handles are opaque pointers owned by the
//! library; every fallible call returns an [`IddeStatus`] and leaves a
//! human-readable message retrievable with [`idde_last_error`]. No call
//! unwinds across the boundary.
//!
//! Every exported function shares one safety contract: pointer arguments must
//! be valid for the stated length or come from a constructor here, and handles
//! must not be used after their destroy call.

// the module-level contract above covers all exported functions
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use idde::error::Error;
use idde::functional::LinearFunctionalSpec;
use idde::history::HistoryFunction;
use idde::models;
use idde::solver::{self, ModelSpec, SimulationTrace, Termination};
use idde::spectral::{self, ScanRegion, SpectralRoot};
use idde::stability;
use nalgebra::DVector;
use num_complex::Complex64;

/// Result of every fallible call. Values are stable across releases.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IddeStatus {
    Ok = 0,
    /// null pointer, non-UTF-8 string, or out-of-range index
    InvalidArgument = 1,
    InvalidHistory = 2,
    DimensionMismatch = 3,
    EtaMismatch = 4,
    InvalidSpec = 5,
    Domain = 6,
    NearSingular = 7,
    KernelPole = 8,
    ContourProximity = 9,
    WindingUnstable = 10,
    SubdivisionDepth = 11,
    NewtonDivergence = 12,
    PoleOrderAmbiguous = 13,
    LaurentResidual = 14,
    NotSimple = 15,
    UnsupportedPoleOrder = 16,
    MissingLinearization = 17,
    EquilibriumDivergence = 18,
    NonFiniteState = 19,
    BranchFailure = 20,
    HopfFailure = 21,
    Io = 22,
    Json = 23,
    CsvFormat = 24,
    /// a panic was caught at the boundary; state may be inconsistent
    Panic = 25,
}

/// Opaque linear history functional.
pub struct IddeFunctional {
    _private: (),
}

/// Opaque history function (initial data / projected output).
pub struct IddeHistory {
    _private: (),
}

/// Opaque nonlinear model.
pub struct IddeModel {
    _private: (),
}

/// Opaque simulation trace.
pub struct IddeTrace {
    _private: (),
}

/// Opaque set of characteristic roots.
pub struct IddeRootSet {
    _private: (),
}

/// Scalar data of one characteristic root.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct IddeRootInfo {
    pub re: f64,
    pub im: f64,
    pub multiplicity: usize,
    pub pole_order: usize,
    pub null_dim: usize,
    pub residual: f64,
    pub simple: bool,
}

/// Stability verdict for a functional.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct IddeStabilityInfo {
    pub stable: bool,
    /// certified decay rate; NaN when unstable
    pub decay: f64,
    /// rightmost root; NaN when no root lies in the scanned region
    pub rightmost_re: f64,
    pub rightmost_im: f64,
    pub root_count: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_last_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut e = e.borrow_mut();
        e.clear();
        e.push_str(msg);
    });
}

fn fail(e: &Error) -> IddeStatus {
    set_last_error(&e.to_string());
    match e {
        Error::InvalidHistory(_) => IddeStatus::InvalidHistory,
        Error::DimensionMismatch { .. } => IddeStatus::DimensionMismatch,
        Error::EtaMismatch { .. } => IddeStatus::EtaMismatch,
        Error::InvalidSpec(_) => IddeStatus::InvalidSpec,
        Error::Domain(_) => IddeStatus::Domain,
        Error::NearSingular { .. } => IddeStatus::NearSingular,
        Error::KernelPole { .. } => IddeStatus::KernelPole,
        Error::ContourProximity { .. } => IddeStatus::ContourProximity,
        Error::WindingUnstable(_) => IddeStatus::WindingUnstable,
        Error::SubdivisionDepth => IddeStatus::SubdivisionDepth,
        Error::NewtonDivergence(_) => IddeStatus::NewtonDivergence,
        Error::PoleOrderAmbiguous { .. } => IddeStatus::PoleOrderAmbiguous,
        Error::LaurentResidual { .. } => IddeStatus::LaurentResidual,
        Error::NotSimple { .. } => IddeStatus::NotSimple,
        Error::UnsupportedPoleOrder { .. } => IddeStatus::UnsupportedPoleOrder,
        Error::MissingLinearization(_) => IddeStatus::MissingLinearization,
        Error::EquilibriumDivergence(_) => IddeStatus::EquilibriumDivergence,
        Error::NonFiniteState { .. } => IddeStatus::NonFiniteState,
        Error::BranchFailure(_) => IddeStatus::BranchFailure,
        Error::HopfFailure(_) => IddeStatus::HopfFailure,
        Error::Io(_) => IddeStatus::Io,
        Error::Json(_) => IddeStatus::Json,
        Error::CsvFormat(_) => IddeStatus::CsvFormat,
    }
}

fn invalid(msg: &str) -> IddeStatus {
    set_last_error(msg);
    IddeStatus::InvalidArgument
}

fn guard(f: impl FnOnce() -> IddeStatus) -> IddeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_last_error("panic caught at the FFI boundary");
            IddeStatus::Panic
        }
    }
}

// Handles are boxes of the concrete types, cast to the opaque markers; the
// markers themselves are never instantiated.
fn into_handle<T, H>(value: T) -> *mut H {
    Box::into_raw(Box::new(value)) as *mut H
}

unsafe fn handle_ref<'a, T, H>(p: *const H) -> Option<&'a T> {
    (p as *const T).as_ref()
}

unsafe fn drop_handle<T, H>(p: *mut H) {
    if !p.is_null() {
        drop(Box::from_raw(p as *mut T));
    }
}

unsafe fn parse_cstr<'a>(p: *const c_char) -> Result<&'a str, IddeStatus> {
    if p.is_null() {
        return Err(invalid("null string pointer"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid("string is not valid UTF-8"))
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct PresetRef {
    name: String,
    #[serde(default)]
    params: BTreeMap<String, f64>,
}

/// Copies the message of the most recent failure on this thread into `buf`
/// (NUL-terminated, truncated to `capacity`). Returns the full message
/// length in bytes, excluding the NUL; call with a null `buf` to size the
/// buffer.
#[no_mangle]
pub unsafe extern "C" fn idde_last_error(buf: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && capacity > 0 {
            let n = bytes.len().min(capacity - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn idde_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Builds a linear functional from a JSON preset reference:
/// `{"name": "erlang2", "params": {"a": 2.0, "delta": 1.0, "eta": 0.5}}`.
/// Known names: one-exponential, erlang2, discrete, jordan, free.
#[no_mangle]
pub unsafe extern "C" fn idde_functional_from_json(
    json: *const c_char,
    out: *mut *mut IddeFunctional,
) -> IddeStatus {
    guard(|| {
        if out.is_null() {
            return invalid("null output pointer");
        }
        let text = match parse_cstr(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let preset: PresetRef = match serde_json::from_str(text) {
            Ok(p) => p,
            Err(e) => return fail(&Error::Json(e)),
        };
        match models::build_linear_named(&preset.name, &preset.params) {
            Ok(spec) => {
                *out = into_handle::<LinearFunctionalSpec, _>(spec);
                IddeStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn idde_functional_free(p: *mut IddeFunctional) {
    drop_handle::<LinearFunctionalSpec, _>(p);
}

#[no_mangle]
pub unsafe extern "C" fn idde_functional_dim(
    p: *const IddeFunctional,
    out: *mut usize,
) -> IddeStatus {
    guard(|| match (handle_ref::<LinearFunctionalSpec, _>(p), out.as_mut()) {
        (Some(spec), Some(out)) => {
            *out = spec.dim();
            IddeStatus::Ok
        }
        _ => invalid("null pointer"),
    })
}

#[no_mangle]
pub unsafe extern "C" fn idde_functional_eta(
    p: *const IddeFunctional,
    out: *mut f64,
) -> IddeStatus {
    guard(|| match (handle_ref::<LinearFunctionalSpec, _>(p), out.as_mut()) {
        (Some(spec), Some(out)) => {
            *out = spec.eta();
            IddeStatus::Ok
        }
        _ => invalid("null pointer"),
    })
}

/// Determinant of the characteristic matrix at lambda = re + i im.
#[no_mangle]
pub unsafe extern "C" fn idde_functional_char_det(
    p: *const IddeFunctional,
    re: f64,
    im: f64,
    out_re: *mut f64,
    out_im: *mut f64,
) -> IddeStatus {
    guard(|| {
        let (Some(spec), Some(out_re), Some(out_im)) =
            (handle_ref::<LinearFunctionalSpec, _>(p), out_re.as_mut(), out_im.as_mut())
        else {
            return invalid("null pointer");
        };
        match spec.char_matrix(Complex64::new(re, im)) {
            Ok(m) => {
                let d = m.determinant();
                *out_re = d.re;
                *out_im = d.im;
                IddeStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Finds all characteristic roots in the rectangle. The result handle owns
/// the full spectral data; scalar fields are read with
/// [`idde_rootset_get`].
#[no_mangle]
pub unsafe extern "C" fn idde_functional_find_roots(
    p: *const IddeFunctional,
    re_min: f64,
    re_max: f64,
    im_min: f64,
    im_max: f64,
    tol: f64,
    out: *mut *mut IddeRootSet,
) -> IddeStatus {
    guard(|| {
        let (Some(spec), false) = (handle_ref::<LinearFunctionalSpec, _>(p), out.is_null())
        else {
            return invalid("null pointer");
        };
        let region = match ScanRegion::new(re_min, re_max, im_min, im_max) {
            Ok(r) => r,
            Err(e) => return fail(&e),
        };
        match spectral::find_roots(spec, &region, tol) {
            Ok(roots) => {
                *out = into_handle::<Vec<SpectralRoot>, _>(roots);
                IddeStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Scans a default region (extended to the a-priori root bound) and reports
/// the verdict.
#[no_mangle]
pub unsafe extern "C" fn idde_functional_stability(
    p: *const IddeFunctional,
    out: *mut IddeStabilityInfo,
) -> IddeStatus {
    guard(|| {
        let (Some(spec), Some(out)) =
            (handle_ref::<LinearFunctionalSpec, _>(p), out.as_mut())
        else {
            return invalid("null pointer");
        };
        let mut floor = -spec.eta();
        if let Some(d) = spec.min_delta() {
            floor = floor.max(-d);
        }
        let region =
            match ScanRegion::new(floor + 2.0 * spectral::POLE_MARGIN, 0.5, -1.0, 1.0) {
                Ok(r) => r,
                Err(e) => return fail(&e),
            };
        match stability::assess_stability(spec, &region) {
            Ok(v) => {
                *out = IddeStabilityInfo {
                    stable: v.stable,
                    decay: v.decay_estimate.unwrap_or(f64::NAN),
                    rightmost_re: v.rightmost.as_ref().map_or(f64::NAN, |r| r.lambda0.re),
                    rightmost_im: v.rightmost.as_ref().map_or(f64::NAN, |r| r.lambda0.im),
                    root_count: v.roots.len(),
                };
                IddeStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn idde_rootset_len(
    p: *const IddeRootSet,
    out: *mut usize,
) -> IddeStatus {
    guard(|| match (handle_ref::<Vec<SpectralRoot>, _>(p), out.as_mut()) {
        (Some(roots), Some(out)) => {
            *out = roots.len();
            IddeStatus::Ok
        }
        _ => invalid("null pointer"),
    })
}

#[no_mangle]
pub unsafe extern "C" fn idde_rootset_get(
    p: *const IddeRootSet,
    index: usize,
    out: *mut IddeRootInfo,
) -> IddeStatus {
    guard(|| {
        let (Some(roots), Some(out)) = (handle_ref::<Vec<SpectralRoot>, _>(p), out.as_mut())
        else {
            return invalid("null pointer");
        };
        let Some(r) = roots.get(index) else {
            return invalid("root index out of range");
        };
        *out = IddeRootInfo {
            re: r.lambda0.re,
            im: r.lambda0.im,
            multiplicity: r.multiplicity,
            pole_order: r.pole_order,
            null_dim: r.null_dim,
            residual: r.residual,
            simple: r.is_simple,
        };
        IddeStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn idde_rootset_free(p: *mut IddeRootSet) {
    drop_handle::<Vec<SpectralRoot>, _>(p);
}

/// Constant history phi(theta) = value (length `dim`) sampled on `nodes`
/// geometric grid points.
#[no_mangle]
pub unsafe extern "C" fn idde_history_constant(
    eta: f64,
    dim: usize,
    value: *const f64,
    nodes: usize,
    out: *mut *mut IddeHistory,
) -> IddeStatus {
    guard(|| {
        if value.is_null() || out.is_null() || dim == 0 {
            return invalid("null pointer or zero dimension");
        }
        let v = DVector::from_column_slice(std::slice::from_raw_parts(value, dim));
        match HistoryFunction::constant(eta, v, nodes) {
            Ok(h) => {
                *out = into_handle::<HistoryFunction<f64>, _>(h);
                IddeStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Weighted sup norm of the history.
#[no_mangle]
pub unsafe extern "C" fn idde_history_eta_norm(
    p: *const IddeHistory,
    out: *mut f64,
) -> IddeStatus {
    guard(|| match (handle_ref::<HistoryFunction<f64>, _>(p), out.as_mut()) {
        (Some(h), Some(out)) => {
            *out = h.eta_norm();
            IddeStatus::Ok
        }
        _ => invalid("null pointer"),
    })
}

#[no_mangle]
pub unsafe extern "C" fn idde_history_free(p: *mut IddeHistory) {
    drop_handle::<HistoryFunction<f64>, _>(p);
}

/// Builds a model from a JSON preset reference. Known names: chemostat,
/// fishery, wright-erlang2, wright-discrete, plus every linear preset
/// (wrapped as a model).
#[no_mangle]
pub unsafe extern "C" fn idde_model_from_json(
    json: *const c_char,
    out: *mut *mut IddeModel,
) -> IddeStatus {
    guard(|| {
        if out.is_null() {
            return invalid("null output pointer");
        }
        let text = match parse_cstr(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let preset: PresetRef = match serde_json::from_str(text) {
            Ok(p) => p,
            Err(e) => return fail(&Error::Json(e)),
        };
        match models::build_named(&preset.name, &preset.params) {
            Ok(m) => {
                *out = into_handle::<ModelSpec, _>(m);
                IddeStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn idde_model_free(p: *mut IddeModel) {
    drop_handle::<ModelSpec, _>(p);
}

#[no_mangle]
pub unsafe extern "C" fn idde_model_dim(p: *const IddeModel, out: *mut usize) -> IddeStatus {
    guard(|| match (handle_ref::<ModelSpec, _>(p), out.as_mut()) {
        (Some(m), Some(out)) => {
            *out = m.dim();
            IddeStatus::Ok
        }
        _ => invalid("null pointer"),
    })
}

#[no_mangle]
pub unsafe extern "C" fn idde_model_eta(p: *const IddeModel, out: *mut f64) -> IddeStatus {
    guard(|| match (handle_ref::<ModelSpec, _>(p), out.as_mut()) {
        (Some(m), Some(out)) => {
            *out = m.eta();
            IddeStatus::Ok
        }
        _ => invalid("null pointer"),
    })
}

/// Newton search for an equilibrium from `guess`; writes `dim` values into
/// `out_x`.
#[no_mangle]
pub unsafe extern "C" fn idde_model_equilibrium(
    p: *const IddeModel,
    guess: *const f64,
    out_x: *mut f64,
) -> IddeStatus {
    guard(|| {
        let Some(m) = handle_ref::<ModelSpec, _>(p) else {
            return invalid("null model");
        };
        if guess.is_null() || out_x.is_null() {
            return invalid("null buffer");
        }
        let g = DVector::from_column_slice(std::slice::from_raw_parts(guess, m.dim()));
        match solver::find_equilibrium(m, &g) {
            Ok(x) => {
                std::ptr::copy_nonoverlapping(x.as_slice().as_ptr(), out_x, m.dim());
                IddeStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// First-order functional of the model at the given constant state.
#[no_mangle]
pub unsafe extern "C" fn idde_model_linearize(
    p: *const IddeModel,
    xbar: *const f64,
    out: *mut *mut IddeFunctional,
) -> IddeStatus {
    guard(|| {
        let Some(m) = handle_ref::<ModelSpec, _>(p) else {
            return invalid("null model");
        };
        if xbar.is_null() || out.is_null() {
            return invalid("null buffer");
        }
        let x = DVector::from_column_slice(std::slice::from_raw_parts(xbar, m.dim()));
        match solver::linearize(m, &x) {
            Ok(spec) => {
                *out = into_handle::<LinearFunctionalSpec, _>(spec);
                IddeStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Integrates the model from the history over [0, horizon] with fixed step.
/// A trajectory escaping to infinity yields `IDDE_STATUS_NON_FINITE_STATE`
/// but still produces the partial trace.
#[no_mangle]
pub unsafe extern "C" fn idde_model_simulate(
    model: *const IddeModel,
    history: *const IddeHistory,
    horizon: f64,
    step: f64,
    out: *mut *mut IddeTrace,
) -> IddeStatus {
    guard(|| {
        let (Some(m), Some(phi), false) = (
            handle_ref::<ModelSpec, _>(model),
            handle_ref::<HistoryFunction<f64>, _>(history),
            out.is_null(),
        ) else {
            return invalid("null pointer");
        };
        match solver::integrate(m, phi, horizon, step) {
            Ok(trace) => {
                let status = match trace.termination() {
                    Termination::Completed => IddeStatus::Ok,
                    Termination::BlowUp { t } => fail(&Error::NonFiniteState {
                        t,
                        detail: "trajectory escaped before the horizon".into(),
                    }),
                };
                *out = into_handle::<SimulationTrace, _>(trace);
                status
            }
            Err(e) => fail(&e),
        }
    })
}

/// Number of knots in the trace.
#[no_mangle]
pub unsafe extern "C" fn idde_trace_len(p: *const IddeTrace, out: *mut usize) -> IddeStatus {
    guard(|| match (handle_ref::<SimulationTrace, _>(p), out.as_mut()) {
        (Some(t), Some(out)) => {
            *out = t.times().len();
            IddeStatus::Ok
        }
        _ => invalid("null pointer"),
    })
}

#[no_mangle]
pub unsafe extern "C" fn idde_trace_dim(p: *const IddeTrace, out: *mut usize) -> IddeStatus {
    guard(|| match (handle_ref::<SimulationTrace, _>(p), out.as_mut()) {
        (Some(t), Some(out)) => {
            *out = t.states().first().map_or(0, |x| x.len());
            IddeStatus::Ok
        }
        _ => invalid("null pointer"),
    })
}

/// Copies knot times into `times` (len values) and states row-major into
/// `states` (len * dim values). Either buffer may be null to skip it.
#[no_mangle]
pub unsafe extern "C" fn idde_trace_copy(
    p: *const IddeTrace,
    times: *mut f64,
    states: *mut f64,
) -> IddeStatus {
    guard(|| {
        let Some(t) = handle_ref::<SimulationTrace, _>(p) else {
            return invalid("null trace");
        };
        if !times.is_null() {
            std::ptr::copy_nonoverlapping(t.times().as_ptr(), times, t.times().len());
        }
        if !states.is_null() {
            let dim = t.states().first().map_or(0, |x| x.len());
            for (i, x) in t.states().iter().enumerate() {
                std::ptr::copy_nonoverlapping(x.as_slice().as_ptr(), states.add(i * dim), dim);
            }
        }
        IddeStatus::Ok
    })
}

/// True when the integration reached the horizon.
#[no_mangle]
pub unsafe extern "C" fn idde_trace_completed(
    p: *const IddeTrace,
    out: *mut bool,
) -> IddeStatus {
    guard(|| match (handle_ref::<SimulationTrace, _>(p), out.as_mut()) {
        (Some(t), Some(out)) => {
            *out = t.termination() == Termination::Completed;
            IddeStatus::Ok
        }
        _ => invalid("null pointer"),
    })
}

#[no_mangle]
pub unsafe extern "C" fn idde_trace_free(p: *mut IddeTrace) {
    drop_handle::<SimulationTrace, _>(p);
}
