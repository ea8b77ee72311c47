//! C interface over the transcription core.
//!
//! Two opaque handle types cross the boundary: `AmtModel` (a loaded
//! checkpoint) and `AmtLabels` (a frame-by-pitch activation grid). Every
//! handle returned through an out-pointer is owned by the caller and must be
//! released with the matching `*_free` function; all other pointer arguments
//! are borrowed only for the duration of the call.
//!
//! Fallible functions return [`AmtStatus`]. Zero means success; any other
//! value leaves a human-readable explanation in [`amt_last_error_message`].
//! No call unwinds across the boundary: a panic inside the library is caught
//! and surfaced as [`AmtStatus::AmtInternalError`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use amt_core::audio::{read_wav, AudioError, FrameSpec};
use amt_core::cqt::{build_kernels, cqt_matrix, CqtParams};
use amt_core::dataset::{read_labels, write_labels, DatasetError};
use amt_core::eval::{subset_accuracy, EvalError};
use amt_core::midi::LabelMatrix;
use amt_core::model::{load_model, predict, CheckpointError, ModelParams};

/// Samples per analysis frame; matches the geometry the models train with.
const FRAME_LEN: usize = 2756;

/// Result of every fallible call. `AmtOk` is zero; every other value leaves
/// an explanation in `amt_last_error_message`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmtStatus {
    AmtOk = 0,
    /// A required pointer argument was NULL.
    AmtNullArgument = 1,
    /// A string argument was not valid UTF-8.
    AmtInvalidUtf8 = 2,
    /// The operating system reported an I/O failure.
    AmtIoError = 3,
    /// A file or argument was readable but malformed or out of range.
    AmtBadData = 4,
    /// Two objects that must agree in shape did not.
    AmtShapeMismatch = 5,
    /// A defect inside the library; please report the error message.
    AmtInternalError = 6,
}

/// A loaded model checkpoint. Create with `amt_model_load`, release with
/// `amt_model_free`.
pub struct AmtModel {
    params: ModelParams<f32>,
}

/// A frame-by-pitch activation grid. Rows are analysis frames in time
/// order, columns are semitones from MIDI 36 upward.
pub struct AmtLabels {
    inner: LabelMatrix,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(text: String) {
    // NUL bytes cannot survive the C string; they only ever come from
    // hostile file content echoed into a message.
    let clean = text.replace('\0', "?");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::new(clean).unwrap());
}

/// Display text of an error followed by its full cause chain.
fn error_chain(err: &(dyn std::error::Error + 'static)) -> String {
    let mut text = err.to_string();
    let mut source = err.source();
    while let Some(cause) = source {
        text.push_str(": ");
        text.push_str(&cause.to_string());
        source = cause.source();
    }
    text
}

fn fail(status: AmtStatus, err: &(dyn std::error::Error + 'static)) -> AmtStatus {
    set_error(error_chain(err));
    status
}

/// Runs a fallible body, converting any panic into `AmtInternalError`
/// instead of unwinding into the caller.
fn guard(body: impl FnOnce() -> AmtStatus) -> AmtStatus {
    catch_unwind(AssertUnwindSafe(body)).unwrap_or_else(|payload| {
        let text = payload
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| payload.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".into());
        set_error(format!("internal panic: {text}"));
        AmtStatus::AmtInternalError
    })
}

/// Reads a NUL-terminated path argument.
///
/// # Safety
/// `ptr` must be NULL or point to a NUL-terminated string.
unsafe fn path_arg(ptr: *const c_char, what: &str) -> Result<PathBuf, AmtStatus> {
    if ptr.is_null() {
        set_error(format!("{what} is NULL"));
        return Err(AmtStatus::AmtNullArgument);
    }
    match unsafe { CStr::from_ptr(ptr) }.to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => {
            set_error(format!("{what} is not valid UTF-8"));
            Err(AmtStatus::AmtInvalidUtf8)
        }
    }
}

/// Library version as a static NUL-terminated string. Never NULL; do not
/// free it.
#[no_mangle]
pub extern "C" fn amt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Explanation of the most recent failure on the calling thread, or an
/// empty string before the first failure. The pointer stays valid until the
/// next failing call on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn amt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Loads a model checkpoint and writes a new handle to `out`. On failure
/// `out` is left untouched.
///
/// # Safety
/// `path` must be NULL or a NUL-terminated string; `out` must point to
/// writable storage for one pointer. On success the caller owns the handle
/// and must release it with `amt_model_free`.
#[no_mangle]
pub unsafe extern "C" fn amt_model_load(
    path: *const c_char,
    out: *mut *mut AmtModel,
) -> AmtStatus {
    guard(|| {
        if out.is_null() {
            set_error("out is NULL".into());
            return AmtStatus::AmtNullArgument;
        }
        let path = match unsafe { path_arg(path, "path") } {
            Ok(p) => p,
            Err(status) => return status,
        };
        match load_model::<f32>(&path) {
            Ok((params, _)) => {
                unsafe { *out = Box::into_raw(Box::new(AmtModel { params })) };
                AmtStatus::AmtOk
            }
            Err(e @ CheckpointError::Io(_)) => fail(AmtStatus::AmtIoError, &e),
            Err(e) => fail(AmtStatus::AmtBadData, &e),
        }
    })
}

/// Releases a handle from `amt_model_load`. NULL is a no-op.
///
/// # Safety
/// `model` must be NULL or a handle this library returned that has not been
/// freed already; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn amt_model_free(model: *mut AmtModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Transcribes a mono 16-bit PCM WAV file and writes a fresh labels handle
/// to `out`. Analysis uses the stock frame length and the stock constant-Q
/// layout sized to the model's input, at the file's own sample rate. A cell
/// is active when its predicted probability strictly exceeds `threshold`;
/// 0.5 is the usual operating point.
///
/// # Safety
/// `model` must be a live handle from `amt_model_load`, `wav_path` NULL or
/// a NUL-terminated string, and `out` writable storage for one pointer. On
/// success the caller owns the labels handle and must release it with
/// `amt_labels_free`.
#[no_mangle]
pub unsafe extern "C" fn amt_transcribe_wav(
    model: *const AmtModel,
    wav_path: *const c_char,
    threshold: f64,
    out: *mut *mut AmtLabels,
) -> AmtStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            set_error("model or out is NULL".into());
            return AmtStatus::AmtNullArgument;
        }
        if !(0.0..=1.0).contains(&threshold) {
            set_error(format!("threshold {threshold} is outside [0, 1]"));
            return AmtStatus::AmtBadData;
        }
        let path = match unsafe { path_arg(wav_path, "wav_path") } {
            Ok(p) => p,
            Err(status) => return status,
        };
        let model = unsafe { &*model };

        let buf = match read_wav(&path) {
            Ok(b) => b,
            Err(e @ AudioError::Io(_)) => return fail(AmtStatus::AmtIoError, &e),
            Err(e) => return fail(AmtStatus::AmtBadData, &e),
        };
        let n_bins = match u32::try_from(model.params.arch.input_bins) {
            Ok(n) => n,
            Err(_) => {
                set_error("model input width does not fit the transform".into());
                return AmtStatus::AmtBadData;
            }
        };
        let cqt = CqtParams {
            n_bins,
            sample_rate: buf.sample_rate,
            ..CqtParams::default()
        };
        let bank = match build_kernels(&cqt) {
            Ok(b) => b,
            Err(e) => return fail(AmtStatus::AmtBadData, &e),
        };
        let features = match cqt_matrix(&buf, &FrameSpec::new(FRAME_LEN, buf.sample_rate), &bank)
        {
            Ok(f) => f,
            Err(e) => return fail(AmtStatus::AmtBadData, &e),
        };
        match predict(&model.params, &features, threshold) {
            Ok(labels) => {
                unsafe { *out = Box::into_raw(Box::new(AmtLabels { inner: labels })) };
                AmtStatus::AmtOk
            }
            Err(e) => fail(AmtStatus::AmtInternalError, &e),
        }
    })
}

/// Number of frames (rows) in the grid; 0 when `labels` is NULL.
///
/// # Safety
/// `labels` must be NULL or a live handle this library returned.
#[no_mangle]
pub unsafe extern "C" fn amt_labels_frames(labels: *const AmtLabels) -> u32 {
    if labels.is_null() {
        return 0;
    }
    u32::try_from(unsafe { &*labels }.inner.frames()).unwrap_or(u32::MAX)
}

/// Number of pitch bins (columns) in the grid; 0 when `labels` is NULL.
///
/// # Safety
/// `labels` must be NULL or a live handle this library returned.
#[no_mangle]
pub unsafe extern "C" fn amt_labels_bins(labels: *const AmtLabels) -> u32 {
    if labels.is_null() {
        return 0;
    }
    u32::try_from(unsafe { &*labels }.inner.bins()).unwrap_or(u32::MAX)
}

/// Reads one cell: 1 when active, 0 when inactive, -1 when `labels` is NULL
/// or the coordinates fall outside the grid.
///
/// # Safety
/// `labels` must be NULL or a live handle this library returned.
#[no_mangle]
pub unsafe extern "C" fn amt_labels_get(labels: *const AmtLabels, frame: u32, bin: u32) -> i32 {
    if labels.is_null() {
        return -1;
    }
    let grid = &unsafe { &*labels }.inner;
    let (frame, bin) = (frame as usize, bin as usize);
    if frame >= grid.frames() || bin >= grid.bins() {
        return -1;
    }
    i32::from(grid.get(frame, bin))
}

/// Writes the grid to `path` in the binary label-file format.
///
/// # Safety
/// `labels` must be a live handle this library returned; `path` must be
/// NULL or a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn amt_labels_save(
    labels: *const AmtLabels,
    path: *const c_char,
) -> AmtStatus {
    guard(|| {
        if labels.is_null() {
            set_error("labels is NULL".into());
            return AmtStatus::AmtNullArgument;
        }
        let path = match unsafe { path_arg(path, "path") } {
            Ok(p) => p,
            Err(status) => return status,
        };
        match write_labels(&path, &unsafe { &*labels }.inner) {
            Ok(()) => AmtStatus::AmtOk,
            Err(e @ DatasetError::Io(_)) => fail(AmtStatus::AmtIoError, &e),
            Err(e) => fail(AmtStatus::AmtBadData, &e),
        }
    })
}

/// Reads a binary label file and writes a fresh handle to `out`.
///
/// # Safety
/// `path` must be NULL or a NUL-terminated string; `out` must point to
/// writable storage for one pointer. On success the caller owns the handle
/// and must release it with `amt_labels_free`.
#[no_mangle]
pub unsafe extern "C" fn amt_labels_load(
    path: *const c_char,
    out: *mut *mut AmtLabels,
) -> AmtStatus {
    guard(|| {
        if out.is_null() {
            set_error("out is NULL".into());
            return AmtStatus::AmtNullArgument;
        }
        let path = match unsafe { path_arg(path, "path") } {
            Ok(p) => p,
            Err(status) => return status,
        };
        match read_labels(&path) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(AmtLabels { inner })) };
                AmtStatus::AmtOk
            }
            Err(e @ DatasetError::Io(_)) => fail(AmtStatus::AmtIoError, &e),
            Err(e) => fail(AmtStatus::AmtBadData, &e),
        }
    })
}

/// Releases a handle from `amt_transcribe_wav` or `amt_labels_load`. NULL
/// is a no-op.
///
/// # Safety
/// `labels` must be NULL or a handle this library returned that has not
/// been freed already; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn amt_labels_free(labels: *mut AmtLabels) {
    if !labels.is_null() {
        drop(unsafe { Box::from_raw(labels) });
    }
}

/// Fraction of frames whose full activation row matches exactly between the
/// two grids, written to `out`. The grids must share both dimensions.
///
/// # Safety
/// `pred` and `truth` must be live handles this library returned; `out`
/// must point to writable storage for one double.
#[no_mangle]
pub unsafe extern "C" fn amt_subset_accuracy(
    pred: *const AmtLabels,
    truth: *const AmtLabels,
    out: *mut f64,
) -> AmtStatus {
    guard(|| {
        if pred.is_null() || truth.is_null() || out.is_null() {
            set_error("pred, truth, or out is NULL".into());
            return AmtStatus::AmtNullArgument;
        }
        let (pred, truth) = unsafe { (&(*pred).inner, &(*truth).inner) };
        match subset_accuracy(pred, truth) {
            Ok(acc) => {
                unsafe { *out = acc };
                AmtStatus::AmtOk
            }
            Err(e @ EvalError::DimensionMismatch { .. }) => {
                fail(AmtStatus::AmtShapeMismatch, &e)
            }
            Err(e) => fail(AmtStatus::AmtInternalError, &e),
        }
    })
}
