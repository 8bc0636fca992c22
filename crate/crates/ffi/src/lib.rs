//! C ABI over `opg-core`.
//!
//! Every fallible function returns an [`OpgStatus`]. On failure the message
//! is kept per thread and read back with [`opg_last_error_message`]. Models
//! are opaque [`OpgModel`] handles owned by the caller once loaded and
//! released with [`opg_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use ndarray::{Array4, ArrayView1};
use opg_core::data::compute_openness;
use opg_core::eval::{auroc_from_scores, detection_score, msp_score};
use opg_core::model::ModelState;
use opg_core::OpgError;

/// Result codes shared by every function in this library.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Format = 5,
    NonFinite = 6,
    Panic = 7,
}

/// Which score [`opg_model_score`] computes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpgScoreKind {
    /// Probability mass outside the seen classes. Higher means more likely unseen.
    Detection = 0,
    /// One minus the largest seen-class probability.
    MaxSoftmax = 1,
}

/// A trained model loaded from a checkpoint.
pub struct OpgModel {
    inner: ModelState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(OpgStatus, String);

impl From<OpgError> for Failure {
    fn from(e: OpgError) -> Self {
        let status = match &e {
            OpgError::Io { .. } => OpgStatus::Io,
            OpgError::Shape { .. } => OpgStatus::ShapeMismatch,
            OpgError::Serde(_) | OpgError::Decode { .. } => OpgStatus::Format,
            OpgError::NonFinite { .. } => OpgStatus::NonFinite,
            OpgError::Validation(_) | OpgError::Domain(_) | OpgError::Config { .. } => OpgStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(OpgStatus::NullPointer, format!("`{name}` is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(OpgStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OpgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            OpgStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            OpgStatus::Panic
        }
    }
}

unsafe fn input<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn model_ref<'a>(m: *const OpgModel) -> Result<&'a ModelState, Failure> {
    m.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

/// Message for the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn opg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn opg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a nul-terminated UTF-8 string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn opg_model_load(path: *const c_char, out: *mut *mut OpgModel) -> OpgStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not valid UTF-8"))?;
        let inner = ModelState::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(OpgModel { inner }));
        Ok(())
    })
}

/// Releases a handle from [`opg_model_load`]. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn opg_model_free(model: *mut OpgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of seen classes `r` and total head width `r + r'`.
///
/// # Safety
/// `model` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn opg_model_classes(model: *const OpgModel, r: *mut usize, head_width: *mut usize) -> OpgStatus {
    guard(|| {
        let m = model_ref(model)?;
        *out_ref(r, "r")? = m.spec.r;
        *out_ref(head_width, "head_width")? = m.spec.head_width();
        Ok(())
    })
}

/// Expected image height, width and channel count.
///
/// # Safety
/// `model` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn opg_model_input_shape(
    model: *const OpgModel,
    height: *mut usize,
    width: *mut usize,
    channels: *mut usize,
) -> OpgStatus {
    guard(|| {
        let (h, w, c) = model_ref(model)?.spec.input_shape;
        *out_ref(height, "height")? = h;
        *out_ref(width, "width")? = w;
        *out_ref(channels, "channels")? = c;
        Ok(())
    })
}

unsafe fn images(m: &ModelState, pixels: *const f32, n: usize) -> Result<Array4<f32>, Failure> {
    if n == 0 {
        return Err(invalid("need at least one image"));
    }
    let (h, w, c) = m.spec.input_shape;
    let data = input(pixels, n * h * w * c, "pixels")?;
    Ok(Array4::from_shape_vec((n, h, w, c), data.to_vec()).expect("length matches shape"))
}

/// Softmax probabilities over the full head for `n` images.
///
/// `pixels` holds `n * H * W * C` floats in `[0, 1]`, row-major NHWC.
/// `probs` receives `n * head_width` values.
///
/// # Safety
/// Buffers must hold at least the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn opg_model_probs(
    model: *const OpgModel,
    pixels: *const f32,
    n: usize,
    probs: *mut f64,
) -> OpgStatus {
    guard(|| {
        let m = model_ref(model)?;
        let p = m.forward_probs(&images(m, pixels, n)?)?;
        output(probs, p.len(), "probs")?.copy_from_slice(p.as_slice().expect("contiguous"));
        Ok(())
    })
}

/// Scores `n` images. `scores` receives `n` values in `[0, 1]`.
///
/// # Safety
/// `pixels` holds `n * H * W * C` floats; `scores` holds `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn opg_model_score(
    model: *const OpgModel,
    pixels: *const f32,
    n: usize,
    kind: OpgScoreKind,
    scores: *mut f64,
) -> OpgStatus {
    guard(|| {
        let m = model_ref(model)?;
        let p = m.forward_probs(&images(m, pixels, n)?)?;
        let out = output(scores, n, "scores")?;
        for (slot, row) in out.iter_mut().zip(p.rows()) {
            *slot = score_row(row, m.spec.r, kind)?;
        }
        Ok(())
    })
}

fn score_row(row: ArrayView1<'_, f64>, r: usize, kind: OpgScoreKind) -> Result<f64, Failure> {
    Ok(match kind {
        OpgScoreKind::Detection => detection_score(row, r)?,
        OpgScoreKind::MaxSoftmax => msp_score(row, r)?,
    })
}

/// Scores precomputed probability rows: `probs` is `n * width`, row-major,
/// with the first `r` columns the seen classes.
///
/// # Safety
/// `probs` holds `n * width` doubles; `scores` holds `n`.
#[no_mangle]
pub unsafe extern "C" fn opg_score_probs(
    probs: *const f64,
    n: usize,
    width: usize,
    r: usize,
    kind: OpgScoreKind,
    scores: *mut f64,
) -> OpgStatus {
    guard(|| {
        if width == 0 {
            return Err(invalid("width must be positive"));
        }
        let data = input(probs, n * width, "probs")?;
        let out = output(scores, n, "scores")?;
        for (slot, row) in out.iter_mut().zip(data.chunks_exact(width)) {
            *slot = score_row(ArrayView1::from(row), r, kind)?;
        }
        Ok(())
    })
}

/// Openness of a train/test/target class configuration, in percent.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn opg_compute_openness(n_train: u64, n_test: u64, n_target: u64, out: *mut f64) -> OpgStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = compute_openness(n_train, n_test, n_target)?;
        Ok(())
    })
}

/// Area under the ROC curve with `unseen` as the positive class. Ties
/// count one half.
///
/// # Safety
/// `seen` holds `n_seen` doubles, `unseen` holds `n_unseen`, `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn opg_auroc(
    seen: *const f64,
    n_seen: usize,
    unseen: *const f64,
    n_unseen: usize,
    out: *mut f64,
) -> OpgStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let neg = input(seen, n_seen, "seen")?;
        let pos = input(unseen, n_unseen, "unseen")?;
        *out = auroc_from_scores(pos, neg)?;
        Ok(())
    })
}
