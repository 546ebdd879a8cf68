//! C ABI for CAM models.
//!
//! Models are opaque [`CamModel`] handles. Every fallible call returns a
//! [`CamStatus`]; on failure the message is available from
//! [`cam_last_error_message`] on the same thread. Strings handed out by this
//! library must be released with [`cam_string_free`].

use std::cell::RefCell;
use std::collections::HashMap;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use cam_core::explainer::ExplainConfig;
use cam_core::service::{explain_record, predict_record};
use cam_core::CamError;

/// Opaque model handle.
pub struct CamModel {
    inner: cam_core::CamModel,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CamStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Schema = 4,
    InvalidModel = 5,
    NotFound = 6,
    Misaligned = 7,
    Other = 8,
    Panic = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &CamError) -> CamStatus {
    match e {
        CamError::Io { .. } => CamStatus::Io,
        CamError::Schema(_) | CamError::SchemaVersion { .. } | CamError::Json(_) => CamStatus::Schema,
        CamError::InvalidModel(_) => CamStatus::InvalidModel,
        CamError::NodeNotFound(_) => CamStatus::NotFound,
        CamError::Misaligned(_) => CamStatus::Misaligned,
        _ => CamStatus::Other,
    }
}

fn fail(e: CamError) -> CamStatus {
    let status = status_of(&e);
    set_error(e.to_string());
    status
}

/// Runs `f`, turning panics into [`CamStatus::Panic`].
fn guard(f: impl FnOnce() -> CamStatus + std::panic::UnwindSafe) -> CamStatus {
    std::panic::catch_unwind(f).unwrap_or_else(|_| {
        set_error("internal panic");
        CamStatus::Panic
    })
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, CamStatus> {
    if p.is_null() {
        set_error("null argument");
        return Err(CamStatus::NullArgument);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("argument is not valid UTF-8");
        CamStatus::InvalidUtf8
    })
}

fn give_string(s: String, out: *mut *mut c_char) -> CamStatus {
    match CString::new(s) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            CamStatus::Ok
        }
        Err(_) => {
            set_error("output contains a NUL byte");
            CamStatus::Other
        }
    }
}

fn record_from_json(text: &str) -> Result<HashMap<String, String>, CamError> {
    let v: serde_json::Value = serde_json::from_str(text)?;
    let obj = v
        .get("features")
        .and_then(|f| f.as_object())
        .or_else(|| v.as_object())
        .ok_or_else(|| CamError::Misaligned("expected a JSON object of features".into()))?;
    obj.iter()
        .map(|(k, v)| {
            let s = match v {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Number(n) => n.to_string(),
                serde_json::Value::Null => String::new(),
                other => return Err(CamError::Misaligned(format!("feature `{k}` has non-scalar value {other}"))),
            };
            Ok((k.clone(), s))
        })
        .collect()
}

/// Loads a model document from `path` into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cam_model_load(path: *const c_char, out: *mut *mut CamModel) -> CamStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return CamStatus::NullArgument;
        }
        let path = match str_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match cam_core::CamModel::load(Path::new(path)) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(CamModel { inner }));
                CamStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Parses a model document held in memory.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cam_model_from_json(json: *const c_char, out: *mut *mut CamModel) -> CamStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return CamStatus::NullArgument;
        }
        let text = match str_arg(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match cam_core::CamModel::from_json(text) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(CamModel { inner }));
                CamStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cam_model_free(model: *mut CamModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of input features the model expects.
///
/// # Safety
/// `model` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn cam_model_feature_count(model: *const CamModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.qaf.feature_order().len())
}

/// Scores a preprocessed instance (`len` values in feature order, each in [0,1]).
///
/// # Safety
/// `model` must be live, `x` must point to `len` doubles, `score` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cam_predict_instance(
    model: *const CamModel,
    x: *const f64,
    len: usize,
    score: *mut f64,
) -> CamStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            set_error("null model");
            return CamStatus::NullArgument;
        };
        if score.is_null() || (x.is_null() && len > 0) {
            set_error("null argument");
            return CamStatus::NullArgument;
        }
        let xs: &[f64] = if len == 0 { &[] } else { std::slice::from_raw_parts(x, len) };
        match cam_core::reasoner::predict(&m.inner.qaf, xs) {
            Ok(s) => {
                *score = s;
                CamStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Scores a raw record given as JSON (`{"features": {...}}` or a bare map).
/// Writes `{"strengths": {...}, "score": s}` to `*out`.
///
/// # Safety
/// `model` must be live, `record` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cam_predict_json(
    model: *const CamModel,
    record: *const c_char,
    out: *mut *mut c_char,
) -> CamStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            set_error("null model");
            return CamStatus::NullArgument;
        };
        if out.is_null() {
            set_error("null output pointer");
            return CamStatus::NullArgument;
        }
        let text = match str_arg(record) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let result = record_from_json(text)
            .and_then(|r| predict_record(&m.inner, &r))
            .and_then(|p| Ok(serde_json::to_string(&p)?));
        match result {
            Ok(s) => give_string(s, out),
            Err(e) => fail(e),
        }
    })
}

/// Explains `node` (id or label) for a raw JSON record. Writes the
/// explanation step as JSON to `*out`.
///
/// # Safety
/// `model` must be live, `record` and `node` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cam_explain_json(
    model: *const CamModel,
    record: *const c_char,
    node: *const c_char,
    out: *mut *mut c_char,
) -> CamStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            set_error("null model");
            return CamStatus::NullArgument;
        };
        if out.is_null() {
            set_error("null output pointer");
            return CamStatus::NullArgument;
        }
        let (text, node) = match (str_arg(record), str_arg(node)) {
            (Ok(t), Ok(n)) => (t, n),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let result = record_from_json(text)
            .and_then(|r| explain_record(&m.inner, &r, node, &ExplainConfig::default()))
            .and_then(|step| Ok(serde_json::to_string(&step)?));
        match result {
            Ok(s) => give_string(s, out),
            Err(e) => fail(e),
        }
    })
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cam_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failed call on this thread, or null. Owned by the
/// library and valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn cam_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}
