//! C interface to `rqgmm`.
//!
//! Models are exposed as an opaque `RqModel *` created by `rq_fit_*`,
//! `rq_model_load` or `rq_model_from_bytes` and released with
//! `rq_model_free`. Every fallible function returns an [`RqStatus`]; on
//! failure `rq_last_error()` describes what went wrong on the calling
//! thread. Buffers are row-major and must be contiguous.
//!
//! A model handle is immutable once created and may be shared between
//! threads for encoding and evaluation.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use rqgmm::io::{model_from_bytes, model_to_bytes, read_model, write_model};
use rqgmm::{encode_rows_into, evaluate, fit, EmbeddingMatrix, Error, FitConfig, Method};

/// Opaque fitted model.
pub struct RqModel {
    inner: rqgmm::RqModel,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RqStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    /// Bad option value, shape, or more clusters than samples.
    InvalidArgument = 2,
    /// Input width or output buffer size does not match the model.
    DimensionMismatch = 3,
    /// Input contains NaN or infinity.
    NonFinite = 4,
    /// A fit failed on valid input (a mixture component collapsed).
    FitFailed = 5,
    /// A model file or byte buffer is malformed or has an unknown version.
    Format = 6,
    Io = 7,
    /// An internal panic was caught at the boundary.
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RqMethod {
    Gmm = 0,
    Kmeans = 1,
    FlatVq = 2,
}

impl From<RqMethod> for Method {
    fn from(m: RqMethod) -> Self {
        match m {
            RqMethod::Gmm => Method::RqGmm,
            RqMethod::Kmeans => Method::RqKmeans,
            RqMethod::FlatVq => Method::FlatVq,
        }
    }
}

impl From<Method> for RqMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::RqGmm => RqMethod::Gmm,
            Method::RqKmeans => RqMethod::Kmeans,
            Method::FlatVq => RqMethod::FlatVq,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RqFitOptions {
    pub method: RqMethod,
    pub levels: usize,
    pub k: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    /// Reseed empty clusters and starved mixture components.
    pub reseed_empty: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> RqStatus {
    match e.root() {
        Error::DimensionMismatch { .. } => RqStatus::DimensionMismatch,
        Error::NonFinite { .. } => RqStatus::NonFinite,
        Error::ComponentStarved { .. } | Error::ZeroDensity => RqStatus::FitFailed,
        Error::BadMagic { .. }
        | Error::UnsupportedVersion { .. }
        | Error::BadHeader { .. }
        | Error::SizeMismatch { .. }
        | Error::Truncated { .. }
        | Error::NonFinitePayload { .. }
        | Error::BadTable { .. }
        | Error::MissingKey(_) => RqStatus::Format,
        Error::Io(_) => RqStatus::Io,
        _ => RqStatus::InvalidArgument,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

/// Runs `f`, converting errors and panics into a status and the
/// thread-local message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RqStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RqStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("{what} is NULL"));
            RqStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            let status = status_of(&e);
            set_error(e.to_string());
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            RqStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &'static str) -> Result<*const T, Fail> {
    if p.is_null() {
        Err(Fail::Null(what))
    } else {
        Ok(p)
    }
}

/// Borrows `len` elements. A zero length never dereferences `p`.
unsafe fn view<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    Ok(slice::from_raw_parts(non_null(p, what)?, len))
}

unsafe fn view_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    non_null(p as *const T, what)?;
    Ok(slice::from_raw_parts_mut(p, len))
}

fn shape(n: usize, d: usize) -> Result<usize, Fail> {
    if n == 0 || d == 0 {
        return Err(Error::EmptyInput("buffer has no rows or no columns").into());
    }
    n.checked_mul(d)
        .ok_or_else(|| Error::InvalidArgument("n * d overflows".into()).into())
}

unsafe fn model_ref<'a>(model: *const RqModel) -> Result<&'a rqgmm::RqModel, Fail> {
    Ok(&(*non_null(model, "model")?).inner)
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn rq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Defaults: RQ-GMM, 2 levels of 128 codes, 30 iterations, tolerance 1e-6,
/// seed 0, reseeding on.
#[no_mangle]
pub extern "C" fn rq_fit_options_default() -> RqFitOptions {
    let cfg = FitConfig::default();
    RqFitOptions {
        method: RqMethod::Gmm,
        levels: 2,
        k: 128,
        max_iters: cfg.max_iters,
        tol: cfg.tol,
        seed: cfg.seed,
        reseed_empty: cfg.reseed_empty,
    }
}

fn fit_impl(data: Vec<f64>, n: usize, d: usize, opts: &RqFitOptions, out: *mut *mut RqModel) -> Result<(), Fail> {
    let matrix = EmbeddingMatrix::new(data, n, d)?;
    let cfg = FitConfig {
        max_iters: opts.max_iters,
        tol: opts.tol,
        seed: opts.seed,
        reseed_empty: opts.reseed_empty,
    };
    let inner = fit(&matrix, opts.method.into(), opts.levels, opts.k, &cfg)?;
    // SAFETY: checked non-null by the caller of fit_impl.
    unsafe { *out = Box::into_raw(Box::new(RqModel { inner })) };
    Ok(())
}

/// Fits a model to `n` x `d` row-major doubles. On success `*out` holds a
/// new handle; on failure it is left untouched.
///
/// # Safety
/// `data` must point to `n * d` readable doubles, `opts` to a valid options
/// struct and `out` to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn rq_fit_f64(
    data: *const f64,
    n: usize,
    d: usize,
    opts: *const RqFitOptions,
    out: *mut *mut RqModel,
) -> RqStatus {
    guard(|| {
        let opts = &*non_null(opts, "opts")?;
        non_null(out as *const *mut RqModel, "out")?;
        let len = shape(n, d)?;
        let data = view(data, len, "data")?;
        fit_impl(data.to_vec(), n, d, opts, out)
    })
}

/// As [`rq_fit_f64`] for single-precision input. Values are widened to
/// double before fitting; model parameters are always double.
///
/// # Safety
/// As [`rq_fit_f64`].
#[no_mangle]
pub unsafe extern "C" fn rq_fit_f32(
    data: *const f32,
    n: usize,
    d: usize,
    opts: *const RqFitOptions,
    out: *mut *mut RqModel,
) -> RqStatus {
    guard(|| {
        let opts = &*non_null(opts, "opts")?;
        non_null(out as *const *mut RqModel, "out")?;
        let len = shape(n, d)?;
        let data = view(data, len, "data")?;
        fit_impl(data.iter().map(|&v| f64::from(v)).collect(), n, d, opts, out)
    })
}

/// Encodes `n` rows of width `d` (which must equal the model dimension)
/// into `codes`, `L` zero-based codes per row. `codes_len` must be `n * L`.
///
/// # Safety
/// `model` must be a live handle, `data` must point to `n * d` doubles and
/// `codes` to `codes_len` writable `uint32_t`.
#[no_mangle]
pub unsafe extern "C" fn rq_encode_batch_f64(
    model: *const RqModel,
    data: *const f64,
    n: usize,
    d: usize,
    codes: *mut u32,
    codes_len: usize,
) -> RqStatus {
    guard(|| encode_impl(model_ref(model)?, view(data, shape(n, d)?, "data")?, d, view_mut(codes, codes_len, "codes")?))
}

/// # Safety
/// As [`rq_encode_batch_f64`] with `float` input.
#[no_mangle]
pub unsafe extern "C" fn rq_encode_batch_f32(
    model: *const RqModel,
    data: *const f32,
    n: usize,
    d: usize,
    codes: *mut u32,
    codes_len: usize,
) -> RqStatus {
    guard(|| encode_impl(model_ref(model)?, view(data, shape(n, d)?, "data")?, d, view_mut(codes, codes_len, "codes")?))
}

fn encode_impl<T: Copy + Into<f64> + Sync>(
    model: &rqgmm::RqModel,
    data: &[T],
    d: usize,
    codes: &mut [u32],
) -> Result<(), Fail> {
    if d != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: d,
        }
        .into());
    }
    encode_rows_into(data, model, codes)?;
    Ok(())
}

/// Sum of the code vectors selected by `n` semantic IDs (`L` codes each)
/// written to `out` (`n * D` doubles).
///
/// # Safety
/// `codes` must point to `n * L` values and `out` to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rq_reconstruct(
    model: *const RqModel,
    codes: *const u32,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> RqStatus {
    guard(|| {
        let model = model_ref(model)?;
        let (levels, d) = (model.num_levels(), model.dim());
        let codes = view(codes, n * levels, "codes")?;
        let out = view_mut(out, out_len, "out")?;
        if out.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: out.len(),
            }
            .into());
        }
        for (id, dst) in codes.chunks_exact(levels).zip(out.chunks_exact_mut(d)) {
            dst.copy_from_slice(&rqgmm::reconstruct(&rqgmm::SemanticId(id.to_vec()), model)?);
        }
        Ok(())
    })
}

/// Reconstruction RMSE over `n` rows and the fraction of codes used at
/// each level (`utilization` must hold `L` doubles; may be NULL).
///
/// # Safety
/// `data` must point to `n * d` doubles, `rmse` to one writable double and
/// `utilization`, if not NULL, to `utilization_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rq_evaluate_f64(
    model: *const RqModel,
    data: *const f64,
    n: usize,
    d: usize,
    rmse: *mut f64,
    utilization: *mut f64,
    utilization_len: usize,
) -> RqStatus {
    guard(|| {
        let model = model_ref(model)?;
        let data = view(data, shape(n, d)?, "data")?;
        non_null(rmse as *const f64, "rmse")?;
        let report = evaluate(&EmbeddingMatrix::new(data.to_vec(), n, d)?, model)?;
        if !utilization.is_null() {
            let util = view_mut(utilization, utilization_len, "utilization")?;
            if util.len() != report.utilization_per_level.len() {
                return Err(Error::DimensionMismatch {
                    expected: report.utilization_per_level.len(),
                    got: util.len(),
                }
                .into());
            }
            util.copy_from_slice(&report.utilization_per_level);
        }
        *rmse = report.rmse;
        Ok(())
    })
}

fn path_arg<'a>(path: *const c_char) -> Result<&'a str, Fail> {
    let c = unsafe { CStr::from_ptr(non_null(path, "path")?) };
    c.to_str()
        .map_err(|_| Error::InvalidArgument("path is not valid UTF-8".into()).into())
}

/// Writes the model in the `RQMDL` file format.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rq_model_save(model: *const RqModel, path: *const c_char) -> RqStatus {
    guard(|| {
        let model = model_ref(model)?;
        write_model(model, path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rq_model_load(path: *const c_char, out: *mut *mut RqModel) -> RqStatus {
    guard(|| {
        non_null(out as *const *mut RqModel, "out")?;
        let inner = read_model(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(RqModel { inner }));
        Ok(())
    })
}

/// Serializes the model in the `RQMDL` format. `*written` receives the
/// serialized size. With `buf` NULL only the size is reported; otherwise
/// `buf_len` must be at least that size.
///
/// # Safety
/// `buf`, if not NULL, must hold `buf_len` writable bytes; `written` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn rq_model_to_bytes(
    model: *const RqModel,
    buf: *mut u8,
    buf_len: usize,
    written: *mut usize,
) -> RqStatus {
    guard(|| {
        let model = model_ref(model)?;
        non_null(written as *const usize, "written")?;
        let bytes = model_to_bytes(model);
        *written = bytes.len();
        if buf.is_null() {
            return Ok(());
        }
        if buf_len < bytes.len() {
            return Err(Error::InvalidArgument(format!("buffer holds {buf_len} bytes, need {}", bytes.len())).into());
        }
        view_mut(buf, bytes.len(), "buf")?.copy_from_slice(&bytes);
        Ok(())
    })
}

/// # Safety
/// `bytes` must point to `len` readable bytes and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn rq_model_from_bytes(bytes: *const u8, len: usize, out: *mut *mut RqModel) -> RqStatus {
    guard(|| {
        non_null(out as *const *mut RqModel, "out")?;
        let inner = model_from_bytes(view(bytes, len, "bytes")?)?;
        *out = Box::into_raw(Box::new(RqModel { inner }));
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rq_model_free(model: *mut RqModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle or NULL (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn rq_model_levels(model: *const RqModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.num_levels())
}

/// # Safety
/// `model` must be a live handle or NULL (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn rq_model_k(model: *const RqModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.k())
}

/// # Safety
/// `model` must be a live handle or NULL (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn rq_model_dim(model: *const RqModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.dim())
}

/// # Safety
/// `model` must be a live handle or NULL (which yields `RQ_METHOD_GMM`).
#[no_mangle]
pub unsafe extern "C" fn rq_model_method(model: *const RqModel) -> RqMethod {
    model.as_ref().map_or(RqMethod::Gmm, |m| m.inner.method().into())
}
