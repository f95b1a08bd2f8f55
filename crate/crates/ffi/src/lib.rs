//! C ABI over the `smsrecon` library.
//!
//! Every entry point returns an `int32_t` status (`SMSR_OK` on success).
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `*_free` function. After a failed call the message is
//! available from `smsr_last_error_message` on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::Arc;

use smsrecon::baselines::{slice_grappa_reconstruct, zero_fill_reconstruct};
use smsrecon::bundle::{read_case, write_case, write_result, ResultBundle};
use smsrecon::inference::{reconstruct_all, InferenceConfig, DEFAULT_GUIDANCE_INTERVAL, DEFAULT_STEPS};
use smsrecon::metrics::evaluate_images;
use smsrecon::predictors::grappa::{KernelOptions, KernelSet, DEFAULT_RIDGE, DEFAULT_WINDOW};
use smsrecon::predictors::{OracleTruth, PredictorKind};
use smsrecon::simulation::{build_case, DatasetCase, PhantomSpec};
use smsrecon::Error;

pub const SMSR_OK: i32 = 0;
/// Null pointer, bad UTF-8, invalid argument or configuration.
pub const SMSR_ERR_ARGUMENT: i32 = 2;
/// Shape, data, evaluation and file errors.
pub const SMSR_ERR_DATA: i32 = 3;
pub const SMSR_ERR_TRANSPORT: i32 = 4;
/// Calibration or linear solver failure.
pub const SMSR_ERR_SOLVER: i32 = 5;
/// A panic was caught at the boundary.
pub const SMSR_ERR_INTERNAL: i32 = 6;

pub const SMSR_METHOD_ZERO_FILL: u32 = 0;
pub const SMSR_METHOD_SLICE_GRAPPA: u32 = 1;
pub const SMSR_METHOD_OCDI_ORACLE: u32 = 2;
pub const SMSR_METHOD_OCDI_GRAPPA: u32 = 3;

/// A simulated or loaded case: truth, scheme, mask and collapsed measurement.
pub struct SmsrCase(DatasetCase);

/// Calibrated slice-GRAPPA and in-plane kernels.
pub struct SmsrKernels(Arc<KernelSet>);

/// Reconstructed k-space and RSS images, one per slice.
pub struct SmsrResult(ResultBundle);

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SmsrPhantomParams {
    pub rows: usize,
    pub cols: usize,
    pub b: usize,
    pub coils: usize,
    pub r: usize,
    pub acs_lines: usize,
    pub variant_seed: u64,
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SmsrInferenceParams {
    pub t_m: usize,
    pub t_u: usize,
    pub guidance_interval: usize,
    /// Ignored unless kernels are passed.
    pub use_anchor: bool,
    pub dc_enabled: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SmsrMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub nmse: f64,
    pub scale: f64,
}

enum Failure {
    Lib(Error),
    Arg(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Arg(_) => SMSR_ERR_ARGUMENT,
            Failure::Lib(e) => match e.exit_code() {
                2 => SMSR_ERR_ARGUMENT,
                4 => SMSR_ERR_TRANSPORT,
                5 => SMSR_ERR_SOLVER,
                _ => SMSR_ERR_DATA,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Arg(m) => m.clone(),
            Failure::Lib(e) => e.to_string(),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SMSR_OK,
        Ok(Err(fail)) => {
            set_last_error(fail.message());
            fail.code()
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal error: {msg}"));
            SMSR_ERR_INTERNAL
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::Arg(format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::Arg(format!("{what} is null")))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Arg("path is null".into()));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Failure::Arg("path is not valid UTF-8".into()))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn smsr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// The standard phantom: 96x96, 3 slices, 4 coils, R = 2 with 32 ACS lines.
#[no_mangle]
pub extern "C" fn smsr_phantom_params_default() -> SmsrPhantomParams {
    let spec = PhantomSpec::default();
    SmsrPhantomParams {
        rows: spec.rows,
        cols: spec.cols,
        b: spec.b,
        coils: spec.coils,
        r: 2,
        acs_lines: 32,
        variant_seed: spec.variant_seed,
        noise_sigma: spec.noise_sigma,
        noise_seed: 0,
    }
}

#[no_mangle]
pub extern "C" fn smsr_inference_params_default() -> SmsrInferenceParams {
    SmsrInferenceParams {
        t_m: DEFAULT_STEPS,
        t_u: DEFAULT_STEPS,
        guidance_interval: DEFAULT_GUIDANCE_INTERVAL,
        use_anchor: true,
        dc_enabled: true,
    }
}

/// # Safety
/// `params` must point to a valid struct and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn smsr_case_simulate(params: *const SmsrPhantomParams, out: *mut *mut SmsrCase) -> i32 {
    guard(|| {
        let p = deref(params, "params")?;
        let out = out_ptr(out, "out")?;
        let spec = PhantomSpec {
            rows: p.rows,
            cols: p.cols,
            b: p.b,
            coils: p.coils,
            variant_seed: p.variant_seed,
            noise_sigma: p.noise_sigma,
        };
        let case = build_case(&spec, p.b, p.r, p.acs_lines, p.noise_seed)?;
        *out = Box::into_raw(Box::new(SmsrCase(case)));
        Ok(())
    })
}

/// Loads a case directory written by `smsr_case_write` or `smsrecon simulate`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn smsr_case_read(dir: *const c_char, out: *mut *mut SmsrCase) -> i32 {
    guard(|| {
        let dir = path_arg(dir)?;
        let out = out_ptr(out, "out")?;
        let c = read_case(&dir)?;
        let case = DatasetCase {
            truth: c.truth,
            sensitivities: c.sensitivities,
            scheme: c.scheme,
            mask: c.mask,
            measurement: c.measurement,
            provenance: c.provenance,
        };
        *out = Box::into_raw(Box::new(SmsrCase(case)));
        Ok(())
    })
}

/// # Safety
/// `case` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn smsr_case_write(case: *const SmsrCase, dir: *const c_char) -> i32 {
    guard(|| {
        let case = deref(case, "case")?;
        write_case(path_arg(dir)?, &case.0)?;
        Ok(())
    })
}

/// Slice count, coil count and grid shape of a case. Any output pointer may
/// be null.
///
/// # Safety
/// `case` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn smsr_case_shape(
    case: *const SmsrCase,
    b: *mut usize,
    coils: *mut usize,
    rows: *mut usize,
    cols: *mut usize,
) -> i32 {
    guard(|| {
        let case = deref(case, "case")?;
        let (c, r, n) = case.0.truth.dims();
        for (p, v) in [(b, case.0.truth.b()), (coils, c), (rows, r), (cols, n)] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// Accepts null; otherwise `case` must come from this library and not be
/// freed twice.
#[no_mangle]
pub unsafe extern "C" fn smsr_case_free(case: *mut SmsrCase) {
    if !case.is_null() {
        drop(Box::from_raw(case));
    }
}

/// Calibrates kernels from the ACS band of a case. Pass zero window sizes and
/// a negative ridge for the defaults.
///
/// # Safety
/// `case` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn smsr_kernels_calibrate(
    case: *const SmsrCase,
    window_rows: usize,
    window_cols: usize,
    ridge: f64,
    out: *mut *mut SmsrKernels,
) -> i32 {
    guard(|| {
        let case = &deref(case, "case")?.0;
        let out = out_ptr(out, "out")?;
        let options = KernelOptions {
            window: (
                if window_rows == 0 { DEFAULT_WINDOW.0 } else { window_rows },
                if window_cols == 0 { DEFAULT_WINDOW.1 } else { window_cols },
            ),
            col_stride: 1,
            ridge: if ridge < 0.0 { DEFAULT_RIDGE } else { ridge },
        };
        let kernels = KernelSet::calibrate(&case.measurement, &case.acs_reference()?, &case.scheme, &case.mask, options)?;
        *out = Box::into_raw(Box::new(SmsrKernels(Arc::new(kernels))));
        Ok(())
    })
}

/// Largest relative calibration residual over all kernels.
///
/// # Safety
/// `kernels` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn smsr_kernels_max_residual(kernels: *const SmsrKernels, out: *mut f64) -> i32 {
    guard(|| {
        let k = deref(kernels, "kernels")?;
        *out_ptr(out, "out")? = k.0.max_residual();
        Ok(())
    })
}

/// # Safety
/// Accepts null; otherwise the handle must not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn smsr_kernels_free(kernels: *mut SmsrKernels) {
    if !kernels.is_null() {
        drop(Box::from_raw(kernels));
    }
}

/// Reconstructs every slice of `case` with one of the `SMSR_METHOD_*` methods.
///
/// `kernels` is required for slice-GRAPPA and the calibrated pipeline and
/// optional for the oracle pipeline, where it only feeds the low-frequency
/// anchor. `params` may be null for the defaults; it is ignored by the
/// baseline methods.
///
/// # Safety
/// Non-null pointers must be live handles or valid structs; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn smsr_reconstruct(
    case: *const SmsrCase,
    method: u32,
    kernels: *const SmsrKernels,
    params: *const SmsrInferenceParams,
    out: *mut *mut SmsrResult,
) -> i32 {
    guard(|| {
        let case = &deref(case, "case")?.0;
        let out = out_ptr(out, "out")?;
        let kernels = kernels.as_ref().map(|k| k.0.clone());
        let params = params.as_ref().copied().unwrap_or_else(|| smsr_inference_params_default());
        let y = &case.measurement;
        let need_kernels = || kernels.clone().ok_or_else(|| Failure::Arg("method needs calibrated kernels".into()));
        let bundle = match method {
            SMSR_METHOD_ZERO_FILL => ResultBundle::from_slices(
                "zero-fill",
                (0..case.scheme.b())
                    .map(|s| zero_fill_reconstruct(y, &case.scheme, s))
                    .collect::<smsrecon::Result<_>>()?,
            )?,
            SMSR_METHOD_SLICE_GRAPPA => {
                let stack = slice_grappa_reconstruct(y, &case.scheme, &case.mask, &*need_kernels()?)?;
                ResultBundle::from_slices("slice-grappa", stack.into_slices())?
            }
            SMSR_METHOD_OCDI_ORACLE | SMSR_METHOD_OCDI_GRAPPA => {
                let kind = if method == SMSR_METHOD_OCDI_ORACLE {
                    PredictorKind::Oracle(Arc::new(OracleTruth::new(
                        case.truth.clone(),
                        case.scheme.clone(),
                        Some(case.mask.clone()),
                    )))
                } else {
                    PredictorKind::Calibrated(need_kernels()?)
                };
                let anchor = if params.use_anchor { kernels.clone() } else { None };
                let mut cfg = InferenceConfig::new(kind.clone(), kind, anchor);
                cfg.t_m = params.t_m;
                cfg.t_u = params.t_u;
                cfg.guidance_interval = params.guidance_interval;
                cfg.dc_enabled = params.dc_enabled;
                let result = reconstruct_all(y, &case.scheme, &case.mask, &cfg)?;
                ResultBundle::from_reconstruction("ocdi", &result)
            }
            other => return Err(Failure::Arg(format!("unknown method code {other}"))),
        };
        *out = Box::into_raw(Box::new(SmsrResult(bundle)));
        Ok(())
    })
}

/// Copies the RSS magnitude image of `slice` into `buf` (row-major,
/// `rows * cols` values).
///
/// # Safety
/// `result` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn smsr_result_image(result: *const SmsrResult, slice: usize, buf: *mut f64, len: usize) -> i32 {
    guard(|| {
        let result = &deref(result, "result")?.0;
        let img = result
            .images
            .get(slice)
            .ok_or_else(|| Failure::Arg(format!("slice {slice} out of range (b = {})", result.images.len())))?;
        let values = img.values();
        if buf.is_null() {
            return Err(Failure::Arg("buf is null".into()));
        }
        if len != values.len() {
            return Err(Failure::Arg(format!("buffer holds {len} values, image has {}", values.len())));
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(values);
        Ok(())
    })
}

/// # Safety
/// `result` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn smsr_result_write(result: *const SmsrResult, dir: *const c_char) -> i32 {
    guard(|| {
        let result = deref(result, "result")?;
        write_result(path_arg(dir)?, &result.0, None)?;
        Ok(())
    })
}

/// Per-slice metrics of `result` against the truth of `case`; `out` receives
/// one record per slice and `len` must equal the slice count.
///
/// # Safety
/// Handles must be live and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn smsr_evaluate(
    result: *const SmsrResult,
    case: *const SmsrCase,
    out: *mut SmsrMetrics,
    len: usize,
) -> i32 {
    guard(|| {
        let result = &deref(result, "result")?.0;
        let case = &deref(case, "case")?.0;
        let reports = evaluate_images(&result.images, &case.truth)?;
        if out.is_null() {
            return Err(Failure::Arg("out is null".into()));
        }
        if len != reports.len() {
            return Err(Failure::Arg(format!("out holds {len} records for {} slices", reports.len())));
        }
        let dst = std::slice::from_raw_parts_mut(out, len);
        for (d, r) in dst.iter_mut().zip(&reports) {
            *d = SmsrMetrics {
                psnr: r.psnr,
                ssim: r.ssim,
                nmse: r.nmse,
                scale: r.scale,
            };
        }
        Ok(())
    })
}

/// # Safety
/// Accepts null; otherwise the handle must not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn smsr_result_free(result: *mut SmsrResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}
