//! C ABI for loading trained models, extracting descriptors and scoring
//! ranked lists.
//!
//! Every fallible function returns a [`VnnStatus`]; on failure the message is
//! available from [`vnn_last_error_message`] on the same thread. Models are
//! opaque [`VnnModel`] handles released with [`vnn_model_free`]. View
//! features and outputs are `float` buffers in row-major order.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use vnn_core::metrics::{average_precision, f_measure_at, ndcg_at};
use vnn_core::trainer::{load_checkpoint, TrainConfig, Trainer};
use vnn_core::vnn::{Model, ViewEmbeddingMatrix, DESCRIPTOR_DIM};
use vnn_core::{Error, Real};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VnnStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Data = 3,
    Numeric = 4,
    Dimension = 5,
    UndefinedMetric = 6,
    Io = 7,
    Format = 8,
    BufferTooSmall = 9,
    Panic = 10,
    InvalidArgument = 11,
}

/// A loaded model. Opaque to C callers.
pub struct VnnModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> VnnStatus {
    match err {
        Error::Config(_) | Error::State(_) => VnnStatus::Config,
        Error::Data(_) => VnnStatus::Data,
        Error::Numeric(_) => VnnStatus::Numeric,
        Error::Dimension { .. } => VnnStatus::Dimension,
        Error::Index { .. } | Error::Domain { .. } => VnnStatus::InvalidArgument,
        Error::UndefinedMetric(_) => VnnStatus::UndefinedMetric,
        Error::Io { .. } => VnnStatus::Io,
        Error::Format { .. } | Error::Truncated { .. } => VnnStatus::Format,
    }
}

/// Run `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (VnnStatus, String)>) -> VnnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VnnStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            VnnStatus::Panic
        }
    }
}

fn core(err: Error) -> (VnnStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(what: &str) -> (VnnStatus, String) {
    (VnnStatus::NullPointer, format!("{what} is null"))
}

/// Message for the last failed call on this thread. Valid until the next
/// failing call on the same thread; empty if nothing has failed.
#[no_mangle]
pub extern "C" fn vnn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vnn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a `VNC1` checkpoint. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vnn_model_load(path: *const c_char, out: *mut *mut VnnModel) -> VnnStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (VnnStatus::Data, "path is not valid UTF-8".to_string()))?;
        let model = load_checkpoint(path).map_err(core)?.model;
        *out = Box::into_raw(Box::new(VnnModel { model }));
        Ok(())
    })
}

/// Create a freshly initialized model with default head settings and the
/// given branches, all of width `d_prime`.
///
/// # Safety
/// `branch_sizes` must point to `branch_count` values and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn vnn_model_init(
    input_dim: usize,
    num_classes: usize,
    branch_sizes: *const usize,
    branch_count: usize,
    d_prime: usize,
    seed: u64,
    out: *mut *mut VnnModel,
) -> VnnStatus {
    guard(|| {
        if branch_sizes.is_null() && branch_count > 0 {
            return Err(null("branch_sizes"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let sizes = if branch_count == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(branch_sizes, branch_count).to_vec()
        };
        let config = TrainConfig {
            branch_sizes: sizes,
            d_prime,
            seed,
            ..TrainConfig::default()
        };
        let model = Trainer::new(config, input_dim, num_classes).map_err(core)?.model;
        *out = Box::into_raw(Box::new(VnnModel { model }));
        Ok(())
    })
}

/// Release a handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn vnn_model_free(model: *mut VnnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Per-view feature width `D` the model expects; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vnn_model_input_dim(model: *const VnnModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config.input_dim)
}

/// Number of classes; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vnn_model_num_classes(model: *const VnnModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config.num_classes)
}

/// Descriptor width (512); 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vnn_model_descriptor_dim(model: *const VnnModel) -> usize {
    if model.is_null() {
        0
    } else {
        DESCRIPTOR_DIM
    }
}

/// Smallest view count every branch of the model accepts; 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vnn_model_min_views(model: *const VnnModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config.min_views())
}

unsafe fn forward_into(
    model: *const VnnModel,
    views: *const f32,
    view_count: usize,
    dim: usize,
    out: *mut f32,
    out_len: usize,
    pick: fn(&Model, &ViewEmbeddingMatrix) -> vnn_core::Result<Vec<Real>>,
) -> VnnStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if views.is_null() {
            return Err(null("views"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let len = view_count
            .checked_mul(dim)
            .ok_or_else(|| (VnnStatus::Dimension, "view buffer size overflows".to_string()))?;
        let data = std::slice::from_raw_parts(views, len).iter().map(|&x| x as Real).collect();
        let matrix = ViewEmbeddingMatrix::new(view_count, dim, data).map_err(core)?;
        let values = pick(&model.model, &matrix).map_err(core)?;
        if out_len < values.len() {
            return Err((
                VnnStatus::BufferTooSmall,
                format!("output needs {} floats, buffer holds {out_len}", values.len()),
            ));
        }
        let out = std::slice::from_raw_parts_mut(out, values.len());
        for (o, v) in out.iter_mut().zip(values) {
            *o = v as f32;
        }
        Ok(())
    })
}

/// Compute the 512-d descriptor of one shape.
///
/// # Safety
/// `views` must hold `view_count * dim` floats and `out` `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn vnn_model_descriptor(
    model: *const VnnModel,
    views: *const f32,
    view_count: usize,
    dim: usize,
    out: *mut f32,
    out_len: usize,
) -> VnnStatus {
    forward_into(model, views, view_count, dim, out, out_len, |m, v| {
        m.descriptor(v).map(|d| d.0)
    })
}

/// Compute the class logits of one shape.
///
/// # Safety
/// `views` must hold `view_count * dim` floats and `out` `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn vnn_model_logits(
    model: *const VnnModel,
    views: *const f32,
    view_count: usize,
    dim: usize,
    out: *mut f32,
    out_len: usize,
) -> VnnStatus {
    forward_into(model, views, view_count, dim, out, out_len, |m, v| {
        m.forward(v).map(|(logits, _)| logits)
    })
}

unsafe fn relevance(relevant: *const u8, len: usize) -> Result<Vec<bool>, (VnnStatus, String)> {
    if relevant.is_null() && len > 0 {
        return Err(null("relevant"));
    }
    if len == 0 {
        return Ok(Vec::new());
    }
    Ok(std::slice::from_raw_parts(relevant, len).iter().map(|&b| b != 0).collect())
}

/// Average precision of a ranked list given as 0/1 relevance bytes.
///
/// # Safety
/// `relevant` must hold `len` bytes and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn vnn_average_precision(relevant: *const u8, len: usize, out: *mut f64) -> VnnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = average_precision(&relevance(relevant, len)?).map_err(core)?;
        Ok(())
    })
}

/// F-measure over the first `k` items with `total_relevant` relevant items.
///
/// # Safety
/// `relevant` must hold `len` bytes and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn vnn_f_measure_at(
    relevant: *const u8,
    len: usize,
    k: usize,
    total_relevant: usize,
    out: *mut f64,
) -> VnnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = f_measure_at(&relevance(relevant, len)?, k, total_relevant).map_err(core)?;
        Ok(())
    })
}

/// NDCG over the first `k` graded gains.
///
/// # Safety
/// `gains` must hold `len` doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn vnn_ndcg_at(gains: *const f64, len: usize, k: usize, out: *mut f64) -> VnnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if gains.is_null() && len > 0 {
            return Err(null("gains"));
        }
        let gains = if len == 0 { &[][..] } else { std::slice::from_raw_parts(gains, len) };
        *out = ndcg_at(gains, k).map_err(core)?;
        Ok(())
    })
}
