//! C ABI over the sentence encoder and its metrics.
//!
//! Every function returns a [`PtStatus`]; results go through out-pointers.
//! On failure the message is kept per thread and read with
//! [`pt_last_error_message`]. Handles are opaque and must be released with the
//! matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pthought::metrics::{
    p_coherence_total, pair_score, pearson, read_embedding_rows, EmbeddingSet,
};
use pthought::model::checkpoint::Checkpoint;
use pthought::model::{SentenceEncoder, SentenceVector, TextEncoder};
use pthought::sts::{target_transform, BINS};
use pthought::Error;

/// Result of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PtStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    InvalidInput = 5,
    Config = 6,
    Numeric = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// A loaded checkpoint ready to encode text.
pub struct PtModel {
    encoder: TextEncoder,
}

/// Sentence vectors grouped by paraphrase group.
pub struct PtEmbeddingSet {
    set: EmbeddingSet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(PtStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => PtStatus::Io,
            Error::Parse { .. } | Error::Json(_) => PtStatus::Parse,
            Error::InvalidInput(_) => PtStatus::InvalidInput,
            Error::Config(_) => PtStatus::Config,
            Error::Num(_) | Error::NonFinite(_) => PtStatus::Numeric,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PtStatus::NullArgument, format!("{what} is null"))
}

/// Runs `f`, records any failure, and converts panics into `PtStatus::Panic`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PtStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PtStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PtStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint. With `allow_unk` false, encoding text that contains
/// words outside the vocabulary fails instead of using `<unk>`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pt_model_load(
    path: *const c_char,
    allow_unk: bool,
    out: *mut *mut PtModel,
) -> PtStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let ckpt = Checkpoint::load(Path::new(path))?;
        let encoder = TextEncoder::from_checkpoint(&ckpt, allow_unk)?;
        out.write(Box::into_raw(Box::new(PtModel { encoder })));
        Ok(())
    })
}

/// Releases a model; NULL is ignored.
///
/// # Safety
/// `model` must come from [`pt_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pt_model_free(model: *mut PtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Width of the sentence vectors the model produces; 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pt_model_width(model: *const PtModel) -> usize {
    model.as_ref().map_or(0, |m| m.encoder.width())
}

/// Encodes one sentence into `out[0..len]`; `len` must equal the model width.
///
/// # Safety
/// `model` must be a live handle, `text` a NUL-terminated string, and `out`
/// writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pt_model_embed(
    model: *const PtModel,
    text: *const c_char,
    out: *mut f64,
    len: usize,
) -> PtStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let text = str_arg(text, "text")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let width = model.encoder.width();
        if len != width {
            return Err(Failure(
                PtStatus::BufferTooSmall,
                format!("output buffer holds {len} values, model width is {width}"),
            ));
        }
        let v = model.encoder.encode_texts(&[text])?.remove(0);
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(v.values());
        Ok(())
    })
}

/// Loads a sentence-vector TSV; groups with a single sentence are dropped.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pt_embedding_set_load(
    path: *const c_char,
    out: *mut *mut PtEmbeddingSet,
) -> PtStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let file = File::open(path).map_err(|e| Failure(PtStatus::Io, format!("{path}: {e}")))?;
        let rows = read_embedding_rows(file, path)?;
        let (set, _skipped) = EmbeddingSet::from_rows(rows)?;
        out.write(Box::into_raw(Box::new(PtEmbeddingSet { set })));
        Ok(())
    })
}

/// Number of groups in the set; 0 for NULL.
///
/// # Safety
/// `set` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pt_embedding_set_group_count(set: *const PtEmbeddingSet) -> usize {
    set.as_ref().map_or(0, |s| s.set.len())
}

/// Mean over groups of the mean pairwise cosine within each group.
///
/// # Safety
/// `set` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pt_embedding_set_p_coherence_total(
    set: *const PtEmbeddingSet,
    out: *mut f64,
) -> PtStatus {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        write_out(out, p_coherence_total(&set.set)?, "out")
    })
}

/// Releases a set; NULL is ignored.
///
/// # Safety
/// `set` must come from [`pt_embedding_set_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pt_embedding_set_free(set: *mut PtEmbeddingSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Cosine similarity of two vectors of length `len`.
///
/// # Safety
/// `u` and `v` must be readable for `len` doubles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pt_pair_score(
    u: *const f64,
    v: *const f64,
    len: usize,
    out: *mut f64,
) -> PtStatus {
    guard(|| {
        let u = SentenceVector::new(slice_arg(u, len, "u")?.to_vec());
        let v = SentenceVector::new(slice_arg(v, len, "v")?.to_vec());
        write_out(out, pair_score(&u, &v)?, "out")
    })
}

/// Sample Pearson correlation of `x` and `y`.
///
/// # Safety
/// `x` and `y` must be readable for `len` doubles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pt_pearson(
    x: *const f64,
    y: *const f64,
    len: usize,
    out: *mut f64,
) -> PtStatus {
    guard(|| {
        let x = slice_arg(x, len, "x")?;
        let y = slice_arg(y, len, "y")?;
        write_out(out, pearson(x, y)?, "out")
    })
}

/// Five-bin target distribution for a similarity score in `[0, 5]`.
///
/// # Safety
/// `out` must be writable for 5 doubles.
#[no_mangle]
pub unsafe extern "C" fn pt_sts_target(score: f64, out: *mut f64) -> PtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let d = target_transform(score)?;
        std::slice::from_raw_parts_mut(out, BINS).copy_from_slice(&d.0);
        Ok(())
    })
}
