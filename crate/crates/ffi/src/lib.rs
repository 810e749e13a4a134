//! C interface to the negotiation library.
//!
//! Every function returns an [`SslaStatus`]. Strings handed out must be
//! released with [`ssla_string_free`]; knowledge bases with [`ssla_kb_free`].
//! On failure [`ssla_last_error_message`] describes the error for the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ssla::audit::{audit_document, compare_evidence};
use ssla::crypto::PublicKey;
use ssla::decision::{decide_one, Satisfaction};
use ssla::expression::{Dimension, ExpressionRole, ExpressionSet, SecurityExpression};
use ssla::protocol::SslaRecord;
use ssla::translation::{KnowledgeBase, Translator};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SslaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Io = 4,
    Translation = 5,
    /// The audited record is not valid evidence.
    Invalid = 6,
    Panic = 7,
}

/// Opaque knowledge base handle.
pub struct SslaKb {
    inner: KnowledgeBase,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

struct Failure(SslaStatus, String);

type Result<T> = std::result::Result<T, Failure>;

fn fail<E: std::fmt::Display>(status: SslaStatus) -> impl Fn(E) -> Failure {
    move |e| Failure(status, e.to_string())
}

fn guard(f: impl FnOnce() -> Result<SslaStatus>) -> SslaStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => status,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SslaStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str> {
    if p.is_null() {
        return Err(Failure(SslaStatus::NullPointer, "null string argument".into()));
    }
    CStr::from_ptr(p).to_str().map_err(fail(SslaStatus::InvalidUtf8))
}

unsafe fn bytes<'a>(p: *const u8, len: usize) -> Result<&'a [u8]> {
    if p.is_null() {
        return Err(Failure(SslaStatus::NullPointer, "null buffer argument".into()));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn kb_ref<'a>(kb: *const SslaKb) -> Result<&'a KnowledgeBase> {
    kb.as_ref()
        .map(|k| &k.inner)
        .ok_or_else(|| Failure(SslaStatus::NullPointer, "null knowledge base".into()))
}

unsafe fn put_string(out: *mut *mut c_char, value: String) -> Result<SslaStatus> {
    if out.is_null() {
        return Err(Failure(SslaStatus::NullPointer, "null output pointer".into()));
    }
    *out = CString::new(value).map_err(fail(SslaStatus::Parse))?.into_raw();
    Ok(SslaStatus::Ok)
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<()> {
    if out.is_null() {
        return Err(Failure(SslaStatus::NullPointer, "null output pointer".into()));
    }
    *out = value;
    Ok(())
}

/// Message for the last failure on this thread, or null. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn ssla_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ssla_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Load a knowledge base directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssla_kb_load_dir(dir: *const c_char, out: *mut *mut SslaKb) -> SslaStatus {
    guard(|| {
        let dir = text(dir)?;
        if !Path::new(dir).is_dir() {
            return Err(Failure(SslaStatus::Io, format!("{dir}: not a directory")));
        }
        let inner = KnowledgeBase::load_dir(Path::new(dir)).map_err(fail(SslaStatus::Parse))?;
        put(out, Box::into_raw(Box::new(SslaKb { inner })))?;
        Ok(SslaStatus::Ok)
    })
}

/// # Safety
/// `kb` must come from [`ssla_kb_load_dir`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ssla_kb_free(kb: *mut SslaKb) {
    if !kb.is_null() {
        drop(Box::from_raw(kb));
    }
}

/// Translate one expression toward `goal` (e.g. `"Function"`). Writes a
/// JSON array of expressions to `out`.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ssla_kb_translate(
    kb: *const SslaKb,
    expression: *const c_char,
    goal: *const c_char,
    out: *mut *mut c_char,
) -> SslaStatus {
    guard(|| {
        let kb = kb_ref(kb)?;
        let expr: SecurityExpression = text(expression)?.parse().map_err(fail(SslaStatus::Parse))?;
        let goal: Dimension = text(goal)?.parse().map_err(fail(SslaStatus::Parse))?;
        let result = kb.translate(&expr, goal).map_err(fail(SslaStatus::Translation))?;
        let items: Vec<String> = result.output.iter().map(ToString::to_string).collect();
        put_string(out, serde_json::to_string(&items).expect("strings serialize"))
    })
}

/// Decide one requirement against a JSON array of capabilities.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ssla_decide(
    kb: *const SslaKb,
    requirement: *const c_char,
    capabilities_json: *const c_char,
    satisfied: *mut bool,
) -> SslaStatus {
    guard(|| {
        let kb = kb_ref(kb)?;
        let req: SecurityExpression = text(requirement)?.parse().map_err(fail(SslaStatus::Parse))?;
        let caps: Vec<SecurityExpression> =
            serde_json::from_str(text(capabilities_json)?).map_err(fail(SslaStatus::Parse))?;
        let caps = ExpressionSet::from_items(ExpressionRole::Capability, caps).map_err(fail(SslaStatus::Parse))?;
        let verdict = decide_one(kb, &req, &caps).map_err(fail(SslaStatus::Translation))?;
        put(satisfied, verdict == Satisfaction::Satisfied)?;
        Ok(SslaStatus::Ok)
    })
}

/// Parse an expression and write its canonical text.
///
/// # Safety
/// `expression` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ssla_expression_normalize(expression: *const c_char, out: *mut *mut c_char) -> SslaStatus {
    guard(|| {
        let expr: SecurityExpression = text(expression)?.parse().map_err(fail(SslaStatus::Parse))?;
        put_string(out, expr.to_string())
    })
}

/// Audit a stored record against PEM public keys. Returns `Ok` for valid
/// evidence and `Invalid` otherwise; either way the JSON report is written
/// to `report`.
///
/// # Safety
/// `record` must point to `record_len` bytes; `keys` to `key_count`
/// NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ssla_audit_record(
    record: *const u8,
    record_len: usize,
    keys: *const *const c_char,
    key_count: usize,
    report: *mut *mut c_char,
) -> SslaStatus {
    guard(|| {
        let record = bytes(record, record_len)?;
        let keys: &[*const c_char] = match (key_count, keys.is_null()) {
            (0, _) => &[],
            (_, true) => return Err(Failure(SslaStatus::NullPointer, "null key array".into())),
            (n, false) => std::slice::from_raw_parts(keys, n),
        };
        let keys = keys
            .iter()
            .map(|k| PublicKey::from_pem(text(*k)?).map_err(fail(SslaStatus::Parse)))
            .collect::<Result<Vec<_>>>()?;
        let audit = audit_document(record, &keys);
        put_string(report, serde_json::to_string(&audit).expect("reports serialize"))?;
        Ok(if audit.is_valid() { SslaStatus::Ok } else { SslaStatus::Invalid })
    })
}

/// Whether two stored records are the same evidence.
///
/// # Safety
/// Each buffer must hold the stated number of bytes.
#[no_mangle]
pub unsafe extern "C" fn ssla_compare_evidence(
    a: *const u8,
    a_len: usize,
    b: *const u8,
    b_len: usize,
    identical: *mut bool,
) -> SslaStatus {
    guard(|| {
        let a = SslaRecord::decode(bytes(a, a_len)?).map_err(fail(SslaStatus::Parse))?;
        let b = SslaRecord::decode(bytes(b, b_len)?).map_err(fail(SslaStatus::Parse))?;
        put(identical, compare_evidence(&a, &b))?;
        Ok(SslaStatus::Ok)
    })
}
