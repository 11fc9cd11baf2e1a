//! C interface to `igamorph`.
//!
//! Geometries and discretized models are opaque handles created by
//! `*_new`/`*_from_*` functions and released with the matching `*_free`.
//! Every fallible call returns an [`IgmStatus`]; on failure a message is kept
//! per thread and can be read with [`igm_last_error`] until the next failing
//! call on that thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use igamorph::analysis::{solve_modes, uniform_expectation, Discretization, TaylorModel};
use igamorph::assembly::assemble;
use igamorph::geometry::MorphGeometry;
use igamorph::quadrature::QuadratureRule;
use igamorph::sensitivity::{eigenpair_derivatives, DEFAULT_GAP_TOL};
use igamorph::shapes::{self, DiskParams};
use igamorph::space::{DiscreteSpace, SpaceKind};
use igamorph::Error;

/// Result codes. Values 1 to 5 follow the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IgmStatus {
    Ok = 0,
    Io = 1,
    /// Malformed input or an invalid geometry mapping.
    Geometry = 2,
    /// Assembly, factorization or eigen solver failure, or an out-of-range argument.
    Solver = 3,
    /// The requested eigenvalue is not simple.
    Multiplicity = 4,
    NoMatch = 5,
    NullPointer = 10,
    InvalidArgument = 11,
    Panic = 12,
}

/// Problem kinds accepted by [`igm_model_new`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IgmProblem {
    H1 = 0,
    Hcurl = 1,
}

/// Morphing geometry.
pub struct IgmGeometry {
    inner: MorphGeometry,
}

/// Geometry together with a discrete space and quadrature rule.
pub struct IgmModel {
    geom: MorphGeometry,
    space: DiscreteSpace,
    quad: QuadratureRule,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

enum Failure {
    Lib(Error),
    Null(&'static str),
    Arg(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IgmStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => return IgmStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            let status = match e.exit_code() {
                1 => IgmStatus::Io,
                2 => IgmStatus::Geometry,
                4 => IgmStatus::Multiplicity,
                5 => IgmStatus::NoMatch,
                _ => IgmStatus::Solver,
            };
            (status, e.to_string())
        }
        Ok(Err(Failure::Null(what))) => (IgmStatus::NullPointer, format!("{what} is null")),
        Ok(Err(Failure::Arg(m))) => (IgmStatus::InvalidArgument, m),
        Err(_) => (IgmStatus::Panic, "internal panic".to_string()),
    };
    set_last_error(msg);
    status
}

fn non_null<T>(p: *const T, what: &'static str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(())
    }
}

fn problem_kind(problem: i32) -> Result<SpaceKind, Failure> {
    match problem {
        x if x == IgmProblem::H1 as i32 => Ok(SpaceKind::H1),
        x if x == IgmProblem::Hcurl as i32 => Ok(SpaceKind::Hcurl),
        other => Err(Failure::Arg(format!("unknown problem kind {other}"))),
    }
}

/// Message of the last failing call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn igm_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn igm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a geometry from its JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn igm_geometry_from_json(json: *const c_char, out: *mut *mut IgmGeometry) -> IgmStatus {
    guard(|| {
        non_null(json, "json")?;
        non_null(out, "out")?;
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Failure::Arg(format!("json is not UTF-8: {e}")))?;
        let inner = MorphGeometry::from_json(text)?;
        *out = Box::into_raw(Box::new(IgmGeometry { inner }));
        Ok(())
    })
}

/// Five-patch disk morphing from `radius_start` to `radius_end`; the square
/// core has half-width `core · radius`.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn igm_geometry_disk(
    radius_start: f64,
    radius_end: f64,
    core_start: f64,
    core_end: f64,
    out: *mut *mut IgmGeometry,
) -> IgmStatus {
    guard(|| {
        non_null(out, "out")?;
        let inner = shapes::disk(&DiskParams {
            radius_start,
            radius_end,
            core_start,
            core_end,
        })?;
        *out = Box::into_raw(Box::new(IgmGeometry { inner }));
        Ok(())
    })
}

/// Spatial dimension, or 0 for a null handle.
///
/// # Safety
/// `geometry` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn igm_geometry_dim(geometry: *const IgmGeometry) -> usize {
    geometry.as_ref().map_or(0, |g| g.inner.dim())
}

/// Samples the Jacobian determinant at `t` with `samples` points per
/// direction per element.
///
/// # Safety
/// `geometry` must be a live handle; `min_det` and `valid` writable pointers.
#[no_mangle]
pub unsafe extern "C" fn igm_geometry_validate(
    geometry: *const IgmGeometry,
    t: f64,
    samples: usize,
    min_det: *mut f64,
    valid: *mut bool,
) -> IgmStatus {
    guard(|| {
        non_null(geometry, "geometry")?;
        non_null(min_det, "min_det")?;
        non_null(valid, "valid")?;
        let report = (*geometry).inner.validate_mapping(t, samples)?;
        *min_det = report.min_det;
        *valid = report.valid;
        Ok(())
    })
}

/// # Safety
/// `geometry` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn igm_geometry_free(geometry: *mut IgmGeometry) {
    if !geometry.is_null() {
        drop(Box::from_raw(geometry));
    }
}

/// Discretizes `geometry` with degree `degree` in every direction, each
/// geometry element split into `refine` parts. `problem` is an [`IgmProblem`].
/// The model keeps its own copy of the geometry.
///
/// # Safety
/// `geometry` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn igm_model_new(
    geometry: *const IgmGeometry,
    problem: i32,
    degree: usize,
    refine: usize,
    out: *mut *mut IgmModel,
) -> IgmStatus {
    guard(|| {
        non_null(geometry, "geometry")?;
        non_null(out, "out")?;
        let kind = problem_kind(problem)?;
        let geom = (*geometry).inner.clone();
        let (space, quad) = Discretization::new(kind, degree, refine).build(&geom)?;
        *out = Box::into_raw(Box::new(IgmModel { geom, space, quad }));
        Ok(())
    })
}

/// Number of free degrees of freedom, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn igm_model_n_dof(model: *const IgmModel) -> usize {
    model.as_ref().map_or(0, |m| m.space.n_dof())
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn igm_model_free(model: *mut IgmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the `count` smallest eigenvalues at `t` to `values` (the gradient
/// kernel is skipped for H(curl)).
///
/// # Safety
/// `model` must be a live handle and `values` must hold `count` doubles.
#[no_mangle]
pub unsafe extern "C" fn igm_eigenvalues(model: *const IgmModel, t: f64, count: usize, values: *mut f64) -> IgmStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(values, "values")?;
        let m = &*model;
        let system = assemble(&m.space, &m.geom, t, 0, &m.quad)?;
        let sol = solve_modes(&system, count)?;
        std::slice::from_raw_parts_mut(values, count).copy_from_slice(&sol.eigenvalues[..count]);
        Ok(())
    })
}

/// Writes λ, λ′, …, λ⁽ᵒʳᵈᵉʳ⁾ of mode `mode` (1-based) at `t0` to `derivs`.
///
/// # Safety
/// `model` must be a live handle and `derivs` must hold `order + 1` doubles.
#[no_mangle]
pub unsafe extern "C" fn igm_eigenvalue_derivatives(
    model: *const IgmModel,
    t0: f64,
    mode: usize,
    order: usize,
    derivs: *mut f64,
) -> IgmStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(derivs, "derivs")?;
        let m = &*model;
        let system = assemble(&m.space, &m.geom, t0, order, &m.quad)?;
        let sol = solve_modes(&system, mode.max(1))?;
        let jet = eigenpair_derivatives(&system, &sol, mode, order, DEFAULT_GAP_TOL)?;
        std::slice::from_raw_parts_mut(derivs, order + 1).copy_from_slice(&jet.lambda);
        Ok(())
    })
}

/// Mean of the order-`order` Taylor model of mode `mode` about `t0` when the
/// physical parameter `r = a + (b − a) t` is uniform on `[a, b]`.
///
/// # Safety
/// `model` must be a live handle and `mean` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn igm_uniform_expectation(
    model: *const IgmModel,
    mode: usize,
    t0: f64,
    order: usize,
    a: f64,
    b: f64,
    mean: *mut f64,
) -> IgmStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(mean, "mean")?;
        let m = &*model;
        let system = assemble(&m.space, &m.geom, t0, order, &m.quad)?;
        let sol = solve_modes(&system, mode.max(1))?;
        let jet = eigenpair_derivatives(&system, &sol, mode, order, DEFAULT_GAP_TOL)?;
        let physical = TaylorModel::from_jet(&jet).reparametrize(a, b)?;
        *mean = uniform_expectation(&physical, a, b)?;
        Ok(())
    })
}
