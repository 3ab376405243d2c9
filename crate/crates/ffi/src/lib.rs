//! C ABI over the `tmreach` engine.
//!
//! Objects cross the boundary as opaque handles created by `tm_*_new` /
//! `tm_*_load` style calls and released with the matching `tm_*_free`.
//! Every fallible call returns a [`TmStatus`]; the message of the most
//! recent failure on the calling thread is available from
//! [`tm_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tmreach::dt::{dt_reach, DTSystem, DtOptions};
use tmreach::flowpipe::{ct_reach, FlowpipeParams, VectorField};
use tmreach::interval::{set_outward_rounding, Radius};
use tmreach::neural::MLPNet;
use tmreach::systems::{ct_system, dt_system};
use tmreach::tube::ReachTube;
use tmreach::{Error, IntervalBox};

/// Result of every fallible call. Values 2..=7 match the command-line exit
/// codes for the same failure class.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TmStatus {
    Ok = 0,
    /// Bad argument, unknown name or invalid configuration.
    InvalidArgument = 2,
    DimensionMismatch = 3,
    StepFailure = 4,
    Diverged = 5,
    Io = 6,
    Soundness = 7,
    NullPointer = 10,
    InvalidUtf8 = 11,
    Panic = 12,
}

/// A neural network.
pub struct TmNet {
    net: MLPNet,
}

/// A reachable tube: one box per step.
pub struct TmTube {
    tube: ReachTube,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> TmStatus {
    match e.exit_code() {
        3 => TmStatus::DimensionMismatch,
        4 => TmStatus::StepFailure,
        5 => TmStatus::Diverged,
        6 => TmStatus::Io,
        7 => TmStatus::Soundness,
        _ => TmStatus::InvalidArgument,
    }
}

/// Internal failure carried to the boundary.
enum Fail {
    Null(&'static str),
    Utf8,
    Engine(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Engine(e)
    }
}

/// Runs `f`, converting errors and panics into a status.
fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> TmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TmStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            TmStatus::NullPointer
        }
        Ok(Err(Fail::Utf8)) => {
            set_error("string is not valid UTF-8".into());
            TmStatus::InvalidUtf8
        }
        Ok(Err(Fail::Engine(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            TmStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Utf8)
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

fn put<T>(out: *mut *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("output handle"));
    }
    // SAFETY: checked non-null; the caller provides writable storage
    unsafe { *out = Box::into_raw(Box::new(v)) };
    Ok(())
}

fn initial_box(center: &[f64], radius: &[f64]) -> Result<IntervalBox, Error> {
    let r = if radius.len() == 1 { Radius::Uniform(radius[0]) } else { Radius::PerDim(radius.to_vec()) };
    IntervalBox::from_center(center, &r)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Process-wide switch for outward rounding of interval endpoints.
#[no_mangle]
pub extern "C" fn tm_set_sound_rounding(on: c_int) {
    set_outward_rounding(on != 0);
}

/// Parses a network from its JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tm_net_from_json(json: *const c_char, out: *mut *mut TmNet) -> TmStatus {
    guard(|| {
        let net = MLPNet::from_json(str_arg(json, "json")?)?;
        put(out, TmNet { net })
    })
}

/// Loads a network from a JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tm_net_load(path: *const c_char, out: *mut *mut TmNet) -> TmStatus {
    guard(|| {
        let net = MLPNet::load(str_arg(path, "path")?)?;
        put(out, TmNet { net })
    })
}

/// # Safety
/// `net` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tm_net_free(net: *mut TmNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Input width of the network, or 0 for NULL.
///
/// # Safety
/// `net` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tm_net_input_dim(net: *const TmNet) -> usize {
    net.as_ref().map_or(0, |n| n.net.input_dim())
}

/// # Safety
/// `net` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tm_net_output_dim(net: *const TmNet) -> usize {
    net.as_ref().map_or(0, |n| n.net.output_dim())
}

/// Evaluates the network at a point; `y` receives `output_dim` values.
///
/// # Safety
/// `x` must hold `x_len` values and `y` room for the output.
#[no_mangle]
pub unsafe extern "C" fn tm_net_forward(net: *const TmNet, x: *const f64, x_len: usize, y: *mut f64) -> TmStatus {
    guard(|| {
        let net = &ref_arg(net, "net")?.net;
        let x = slice_arg(x, x_len, "x")?;
        tmreach::error::check_dim(net.input_dim(), x.len(), "network input")?;
        if y.is_null() {
            return Err(Fail::Null("y"));
        }
        let v = net.forward(x);
        std::slice::from_raw_parts_mut(y, v.len()).copy_from_slice(&v);
        Ok(())
    })
}

fn run_dt(sys: &DTSystem, center: &[f64], radius: &[f64], actions: &[f64], horizon: usize, window: usize) -> Result<ReachTube, Error> {
    let m = sys.input_dim();
    tmreach::error::check_dim(horizon * m, actions.len(), "flattened actions")?;
    let acts: Vec<Vec<f64>> = if m == 0 { vec![Vec::new(); horizon] } else { actions.chunks(m).map(|c| c.to_vec()).collect() };
    let x0 = initial_box(center, radius)?;
    dt_reach(sys, &x0, &acts, &DtOptions { window, rebuild_from_box: false })
}

/// Discrete-time tube of a one-step network (`residual != 0`: the network
/// predicts the increment). `radius` holds one value or `n`; `actions`
/// holds `horizon * input_dim` values, step-major.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn tm_dt_reach_net(
    net: *const TmNet,
    residual: c_int,
    center: *const f64,
    n: usize,
    radius: *const f64,
    radius_len: usize,
    actions: *const f64,
    horizon: usize,
    window: usize,
    out: *mut *mut TmTube,
) -> TmStatus {
    guard(|| {
        let net = ref_arg(net, "net")?.net.clone();
        let sys = if residual != 0 { DTSystem::residual(net)? } else { DTSystem::neural(net)? };
        let m = sys.input_dim();
        let tube = run_dt(
            &sys,
            slice_arg(center, n, "center")?,
            slice_arg(radius, radius_len, "radius")?,
            slice_arg(actions, horizon * m, "actions")?,
            horizon,
            window,
        )?;
        put(out, TmTube { tube })
    })
}

/// Discrete-time tube of a registered analytical map.
///
/// # Safety
/// `name` must be NUL-terminated; arrays as in [`tm_dt_reach_net`].
#[no_mangle]
pub unsafe extern "C" fn tm_dt_reach_system(
    name: *const c_char,
    center: *const f64,
    n: usize,
    radius: *const f64,
    radius_len: usize,
    actions: *const f64,
    horizon: usize,
    window: usize,
    out: *mut *mut TmTube,
) -> TmStatus {
    guard(|| {
        let sys = DTSystem::analytic(dt_system(str_arg(name, "name")?)?);
        let m = sys.input_dim();
        let tube = run_dt(
            &sys,
            slice_arg(center, n, "center")?,
            slice_arg(radius, radius_len, "radius")?,
            slice_arg(actions, horizon * m, "actions")?,
            horizon,
            window,
        )?;
        put(out, TmTube { tube })
    })
}

/// Continuous-time flowpipe of a registered system under a held input.
/// A tube that stops early is still returned; inspect
/// [`tm_tube_failure_step`].
///
/// # Safety
/// `name` must be NUL-terminated; arrays must have the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn tm_ct_reach_system(
    name: *const c_char,
    input: *const f64,
    input_len: usize,
    center: *const f64,
    n: usize,
    radius: *const f64,
    radius_len: usize,
    h: f64,
    steps: usize,
    order: usize,
    out: *mut *mut TmTube,
) -> TmStatus {
    guard(|| {
        let sys = ct_system(str_arg(name, "name")?)?;
        let field = VectorField::analytic(sys, slice_arg(input, input_len, "input")?.to_vec())?;
        let params = FlowpipeParams { h, steps, order, ..Default::default() };
        params.validate()?;
        let x0 = initial_box(slice_arg(center, n, "center")?, slice_arg(radius, radius_len, "radius")?)?;
        let tube = ct_reach(&field, &x0, &params)?;
        put(out, TmTube { tube })
    })
}

/// # Safety
/// `tube` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tm_tube_free(tube: *mut TmTube) {
    if !tube.is_null() {
        drop(Box::from_raw(tube));
    }
}

/// Number of boxes (steps including the initial one).
///
/// # Safety
/// `tube` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tm_tube_len(tube: *const TmTube) -> usize {
    tube.as_ref().map_or(0, |t| t.tube.len())
}

/// State dimension of the boxes.
///
/// # Safety
/// `tube` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tm_tube_dim(tube: *const TmTube) -> usize {
    tube.as_ref().and_then(|t| t.tube.steps.first()).map_or(0, |s| s.bx.dim())
}

/// First step that could not be certified, or -1 when the tube is complete.
///
/// # Safety
/// `tube` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tm_tube_failure_step(tube: *const TmTube) -> i64 {
    tube.as_ref().and_then(|t| t.tube.failure.as_ref()).map_or(-1, |f| f.step as i64)
}

/// Copies the bounds of box `step` into `lo` and `hi` (each `dim` long).
///
/// # Safety
/// `lo` and `hi` must have room for `dim` values.
#[no_mangle]
pub unsafe extern "C" fn tm_tube_bounds(tube: *const TmTube, step: usize, lo: *mut f64, hi: *mut f64, dim: usize) -> TmStatus {
    guard(|| {
        let t = &ref_arg(tube, "tube")?.tube;
        let s = t
            .steps
            .get(step)
            .ok_or_else(|| Error::Argument(format!("step {step} out of range for a tube of {}", t.len())))?;
        tmreach::error::check_dim(s.bx.dim(), dim, "bounds buffer")?;
        if lo.is_null() || hi.is_null() {
            return Err(Fail::Null("bounds buffer"));
        }
        let (lo, hi) = (std::slice::from_raw_parts_mut(lo, dim), std::slice::from_raw_parts_mut(hi, dim));
        for (i, iv) in s.bx.dims.iter().enumerate() {
            lo[i] = iv.lo;
            hi[i] = iv.hi;
        }
        Ok(())
    })
}

/// Sum of box volumes over all steps; fails on an incomplete tube.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tm_tube_volume(tube: *const TmTube, out: *mut f64) -> TmStatus {
    guard(|| {
        let t = &ref_arg(tube, "tube")?.tube;
        if let Some(f) = &t.failure {
            return Err(Error::Diverged(format!("tube stopped at step {}", f.step)).into());
        }
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = t.volume();
        Ok(())
    })
}

/// Tube as CSV text; release with [`tm_string_free`]. NULL on failure.
///
/// # Safety
/// `tube` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tm_tube_to_csv(tube: *const TmTube) -> *mut c_char {
    let mut s = ptr::null_mut();
    let status = guard(|| {
        let t = &ref_arg(tube, "tube")?.tube;
        s = CString::new(t.to_csv()).map_err(|_| Error::Argument("CSV contains NUL".into()))?.into_raw();
        Ok(())
    });
    if status == TmStatus::Ok {
        s
    } else {
        ptr::null_mut()
    }
}

/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
