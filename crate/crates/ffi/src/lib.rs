//! C ABI over the fractal-qos toolkit.
//!
//! Every function returns an [`FqStatus`]. On failure the message is kept
//! per thread and can be read with [`fq_last_error`]. Objects cross the
//! boundary as opaque handles and must be released with their `_free`
//! function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use fractal_qos::capacity::CalibrationTable;
use fractal_qos::estimator::signature;
use fractal_qos::generator::{compose_traffic, GeneratorSpec};
use fractal_qos::routing::update_cost;
use fractal_qos::trace::TrafficTrace;
use fractal_qos::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DegenerateInput = 3,
    Io = 4,
    Parse = 5,
    Internal = 6,
}

/// Opaque traffic trace.
pub struct FqTrace {
    inner: TrafficTrace,
}

/// Opaque calibration table.
pub struct FqTable {
    inner: CalibrationTable,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FqSignature {
    pub intensity_lambda: f64,
    pub hurst_h: f64,
    pub delta_h: f64,
    pub sigma_var: f64,
    pub window_len: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FqGeneratorSpec {
    pub target_h: f64,
    pub target_intensity: f64,
    pub length: usize,
    pub seed: u64,
    /// 0 disables the cascade.
    pub cascade_depth: u32,
    pub cascade_weight: f64,
    pub envelope_cv: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> FqStatus {
    match e {
        Error::InvalidParameter { .. }
        | Error::TraceTooShort { .. }
        | Error::MissingQ(_)
        | Error::Config { .. } => FqStatus::InvalidArgument,
        Error::DegenerateInput(_) | Error::EmbeddingNotPositive { .. } => FqStatus::DegenerateInput,
        Error::Io(_) => FqStatus::Io,
        Error::Parse { .. } | Error::Csv(_) | Error::Toml(_) | Error::Json(_) => FqStatus::Parse,
        _ => FqStatus::Internal,
    }
}

fn guard(f: impl FnOnce() -> Result<(), FqStatus>) -> FqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FqStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            FqStatus::Internal
        }
    }
}

fn lift<T>(r: fractal_qos::Result<T>) -> Result<T, FqStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        status_of(&e)
    })
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), FqStatus> {
    if p.is_null() {
        set_error(format!("{name} is null"));
        return Err(FqStatus::NullPointer);
    }
    Ok(())
}

unsafe fn path_arg<'a>(p: *const c_char, name: &str) -> Result<&'a Path, FqStatus> {
    non_null(p, name)?;
    let s = CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{name} is not UTF-8"));
        FqStatus::InvalidArgument
    })?;
    Ok(Path::new(s))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `spec` must point to a valid spec and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn fq_generate(
    spec: *const FqGeneratorSpec,
    out: *mut *mut FqTrace,
) -> FqStatus {
    guard(|| {
        non_null(spec, "spec")?;
        non_null(out, "out")?;
        let s = &*spec;
        let g = GeneratorSpec::new(s.target_h, s.target_intensity, s.length, s.seed)
            .with_cascade(s.cascade_depth, s.cascade_weight)
            .with_envelope_cv(s.envelope_cv);
        let trace = lift(compose_traffic(&g))?;
        *out = Box::into_raw(Box::new(FqTrace { inner: trace }));
        Ok(())
    })
}

/// Copies `len` nonnegative values into a new trace.
///
/// # Safety
/// `values` must point to `len` readable doubles and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn fq_trace_from_values(
    values: *const f64,
    len: usize,
    out: *mut *mut FqTrace,
) -> FqStatus {
    guard(|| {
        non_null(values, "values")?;
        non_null(out, "out")?;
        let v = std::slice::from_raw_parts(values, len).to_vec();
        let trace = lift(TrafficTrace::new(v))?;
        *out = Box::into_raw(Box::new(FqTrace { inner: trace }));
        Ok(())
    })
}

/// # Safety
/// `trace` must be a live handle and `len` writable.
#[no_mangle]
pub unsafe extern "C" fn fq_trace_len(trace: *const FqTrace, len: *mut usize) -> FqStatus {
    guard(|| {
        non_null(trace, "trace")?;
        non_null(len, "len")?;
        *len = (*trace).inner.len();
        Ok(())
    })
}

/// Copies up to `cap` values into `buf`; `written` receives the count.
///
/// # Safety
/// `buf` must have room for `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn fq_trace_values(
    trace: *const FqTrace,
    buf: *mut f64,
    cap: usize,
    written: *mut usize,
) -> FqStatus {
    guard(|| {
        non_null(trace, "trace")?;
        non_null(buf, "buf")?;
        non_null(written, "written")?;
        let v = (*trace).inner.values();
        let n = v.len().min(cap);
        ptr::copy_nonoverlapping(v.as_ptr(), buf, n);
        *written = n;
        Ok(())
    })
}

/// # Safety
/// `trace` must come from this library and not be used afterwards. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn fq_trace_free(trace: *mut FqTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// # Safety
/// `trace` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fq_analyze(trace: *const FqTrace, out: *mut FqSignature) -> FqStatus {
    guard(|| {
        non_null(trace, "trace")?;
        non_null(out, "out")?;
        let s = lift(signature(&(*trace).inner))?;
        *out = FqSignature {
            intensity_lambda: s.intensity_lambda,
            hurst_h: s.hurst_h,
            delta_h: s.delta_h,
            sigma_var: s.sigma_var,
            window_len: s.window_len,
        };
        Ok(())
    })
}

/// Link cost after an announcement with signature `(h, sigma_var)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fq_update_cost(
    c: f64,
    h: f64,
    sigma_var: f64,
    c0: f64,
    out: *mut f64,
) -> FqStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = lift(update_cost(c, h, sigma_var, c0))?;
        Ok(())
    })
}

/// Loads a calibration table (CSV plus its `.meta.json` sidecar).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fq_table_load(path: *const c_char, out: *mut *mut FqTable) -> FqStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        non_null(out, "out")?;
        let t = lift(CalibrationTable::load(p))?;
        *out = Box::into_raw(Box::new(FqTable { inner: t }));
        Ok(())
    })
}

/// Buffer needed at capacity `net` for traffic `(lambda, h, sigma_var)`.
/// `saturated` is set when no finite buffer meets the table's loss target.
///
/// # Safety
/// `table` must be a live handle; `buffer` and `saturated` writable.
#[no_mangle]
pub unsafe extern "C" fn fq_table_required_buffer(
    table: *const FqTable,
    net: f64,
    lambda: f64,
    h: f64,
    sigma_var: f64,
    buffer: *mut f64,
    saturated: *mut bool,
) -> FqStatus {
    guard(|| {
        non_null(table, "table")?;
        non_null(buffer, "buffer")?;
        non_null(saturated, "saturated")?;
        let q = (*table).inner.required_buffer(net, lambda, h, sigma_var);
        *buffer = q.buffer;
        *saturated = q.saturated;
        Ok(())
    })
}

/// Smallest capacity whose required buffer fits in `buffer`.
/// `clamped` is set when the answer sits on the table boundary.
///
/// # Safety
/// `table` must be a live handle; `capacity` and `clamped` writable.
#[no_mangle]
pub unsafe extern "C" fn fq_table_required_capacity(
    table: *const FqTable,
    buffer: f64,
    lambda: f64,
    h: f64,
    sigma_var: f64,
    capacity: *mut f64,
    clamped: *mut bool,
) -> FqStatus {
    guard(|| {
        non_null(table, "table")?;
        non_null(capacity, "capacity")?;
        non_null(clamped, "clamped")?;
        let q = (*table)
            .inner
            .required_capacity(buffer, lambda, h, sigma_var);
        *capacity = q.capacity;
        *clamped = q.clamped;
        Ok(())
    })
}

/// # Safety
/// `table` must come from this library and not be used afterwards. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn fq_table_free(table: *mut FqTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}
