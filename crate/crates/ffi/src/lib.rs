//! C ABI over the rote library.
//!
//! Every function returns a [`RoteStatus`]. On failure a description is kept
//! per thread and can be read with [`rote_last_error`]. Models are opaque
//! heap handles released with [`rote_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rote::calendar::decompose_timestamp;
use rote::data::Event;
use rote::model::{EncodingMode, Model, ModelConfig};
use rote::rotary::{apply_rotary, fuse_levels, inverse_frequencies, RoteConfig};
use rote::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoteStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    PreEpoch = 4,
    Io = 5,
    Checkpoint = 6,
    Internal = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoteMode {
    Positional = 0,
    Timestamp = 1,
    Year = 2,
    YearMonth = 3,
    YearMonthDay = 4,
}

impl From<RoteMode> for EncodingMode {
    fn from(m: RoteMode) -> Self {
        match m {
            RoteMode::Positional => EncodingMode::PositionalEmbedding,
            RoteMode::Timestamp => EncodingMode::PureTimestamp,
            RoteMode::Year => EncodingMode::YearOnly,
            RoteMode::YearMonth => EncodingMode::YearMonth,
            RoteMode::YearMonthDay => EncodingMode::YearMonthDay,
        }
    }
}

/// Years, months and days elapsed since 1970-01-01 UTC.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RoteTriplet {
    pub year: u64,
    pub month: u64,
    pub day: u64,
}

/// Fusion bases and weights for [`rote_fuse_levels`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoteLevels {
    pub base_year: f64,
    pub base_month: f64,
    pub base_day: f64,
    pub alpha_year: f64,
    pub alpha_month: f64,
    pub alpha_day: f64,
}

/// Opaque model handle.
pub struct RoteModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: RoteStatus, msg: impl Into<String>) -> RoteStatus {
    set_error(msg.into());
    status
}

fn status_of(e: &Error) -> RoteStatus {
    match e {
        Error::PreEpoch(_) => RoteStatus::PreEpoch,
        Error::Io { .. } => RoteStatus::Io,
        Error::Checkpoint(_) => RoteStatus::Checkpoint,
        _ => RoteStatus::InvalidArgument,
    }
}

/// Run `f`, turning library errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), RoteStatus>) -> RoteStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RoteStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(RoteStatus::Internal, "panic inside rote"),
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, RoteStatus>;
}

impl<T> OrStatus<T> for rote::Result<T> {
    fn or_status(self) -> Result<T, RoteStatus> {
        self.map_err(|e| fail(status_of(&e), e.to_string()))
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], RoteStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(RoteStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out(out: *mut f64, out_len: usize, values: &[f64]) -> Result<(), RoteStatus> {
    if out.is_null() {
        return Err(fail(RoteStatus::NullPointer, "output buffer is null"));
    }
    if out_len < values.len() {
        return Err(fail(
            RoteStatus::BufferTooSmall,
            format!("output buffer holds {out_len} values, {} needed", values.len()),
        ));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rote_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rote_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must point to a writable `RoteTriplet`.
#[no_mangle]
pub unsafe extern "C" fn rote_decompose_timestamp(seconds: i64, out: *mut RoteTriplet) -> RoteStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(RoteStatus::NullPointer, "out is null"));
        }
        let t = decompose_timestamp(seconds).or_status()?;
        *out = RoteTriplet {
            year: t.year,
            month: t.month,
            day: t.day,
        };
        Ok(())
    })
}

/// Writes `head_dim / 2` inverse frequencies.
///
/// # Safety
/// `out` must point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rote_inverse_frequencies(
    base: f64,
    head_dim: usize,
    out: *mut f64,
    out_len: usize,
) -> RoteStatus {
    guard(|| {
        let w = inverse_frequencies(base, head_dim).or_status()?;
        write_out(out, out_len, w.as_slice())
    })
}

/// Rotates each pair of `x` by the matching angle; `n_angles` must be `len / 2`.
///
/// # Safety
/// `x` and `out` must hold `len` doubles and `angles` `n_angles` doubles.
#[no_mangle]
pub unsafe extern "C" fn rote_apply_rotary(
    x: *const f64,
    len: usize,
    angles: *const f64,
    n_angles: usize,
    out: *mut f64,
) -> RoteStatus {
    guard(|| {
        let x = slice(x, len, "x")?;
        let a = slice(angles, n_angles, "angles")?;
        let y = apply_rotary(x, a).or_status()?;
        write_out(out, len, &y)
    })
}

/// Weighted sum of year, month and day rotations of `x` (length = head_dim).
/// A null `levels` selects the default bases and weights.
///
/// # Safety
/// `x` and `out` must hold `len` doubles; `levels` is null or valid.
#[no_mangle]
pub unsafe extern "C" fn rote_fuse_levels(
    x: *const f64,
    len: usize,
    time: RoteTriplet,
    levels: *const RoteLevels,
    out: *mut f64,
) -> RoteStatus {
    guard(|| {
        let x = slice(x, len, "x")?;
        let mut cfg = RoteConfig::with_head_dim(len);
        if let Some(l) = levels.as_ref() {
            cfg.base_year = l.base_year;
            cfg.base_month = l.base_month;
            cfg.base_day = l.base_day;
            cfg.alpha_year = l.alpha_year;
            cfg.alpha_month = l.alpha_month;
            cfg.alpha_day = l.alpha_day;
        }
        let t = rote::calendar::TemporalTriplet::new(time.year, time.month, time.day);
        let y = fuse_levels(x, t, &cfg).or_status()?;
        write_out(out, len, &y)
    })
}

fn publish(model: Model, out: *mut *mut RoteModel) -> Result<(), RoteStatus> {
    if out.is_null() {
        return Err(fail(RoteStatus::NullPointer, "out is null"));
    }
    let handle = Box::into_raw(Box::new(RoteModel { inner: model }));
    // SAFETY: checked non-null above; the caller provides a writable slot.
    unsafe { *out = handle };
    Ok(())
}

/// Freshly initialized model with default sizes.
///
/// # Safety
/// `out` must point to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn rote_model_new(
    vocab_size: usize,
    mode: RoteMode,
    seed: u64,
    out: *mut *mut RoteModel,
) -> RoteStatus {
    guard(|| {
        let model = Model::init(ModelConfig::new(vocab_size, mode.into()), seed).or_status()?;
        publish(model, out)
    })
}

/// # Safety
/// `path` must be a NUL-terminated UTF-8 string, `out` a writable slot.
#[no_mangle]
pub unsafe extern "C" fn rote_model_load(path: *const c_char, out: *mut *mut RoteModel) -> RoteStatus {
    guard(|| {
        if path.is_null() {
            return Err(fail(RoteStatus::NullPointer, "path is null"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(RoteStatus::InvalidArgument, "path is not UTF-8"))?;
        publish(Model::load(p).or_status()?, out)
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn rote_model_save(model: *const RoteModel, path: *const c_char) -> RoteStatus {
    guard(|| {
        let m = model
            .as_ref()
            .ok_or_else(|| fail(RoteStatus::NullPointer, "model is null"))?;
        if path.is_null() {
            return Err(fail(RoteStatus::NullPointer, "path is null"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(RoteStatus::InvalidArgument, "path is not UTF-8"))?;
        m.inner.save(p).or_status()
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn rote_model_free(model: *mut RoteModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rote_model_param_count(model: *const RoteModel, out: *mut usize) -> RoteStatus {
    guard(|| {
        let m = model
            .as_ref()
            .ok_or_else(|| fail(RoteStatus::NullPointer, "model is null"))?;
        if out.is_null() {
            return Err(fail(RoteStatus::NullPointer, "out is null"));
        }
        *out = m.inner.num_params();
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rote_model_vocab_size(model: *const RoteModel, out: *mut usize) -> RoteStatus {
    guard(|| {
        let m = model
            .as_ref()
            .ok_or_else(|| fail(RoteStatus::NullPointer, "model is null"))?;
        if out.is_null() {
            return Err(fail(RoteStatus::NullPointer, "out is null"));
        }
        *out = m.inner.config().vocab_size;
        Ok(())
    })
}

/// Next-item scores for a history of `len` (item, unix seconds) pairs in
/// time order. `scores` receives `vocab_size` values; index 0 is `-inf`.
///
/// # Safety
/// `items` and `timestamps` must hold `len` values and `scores` `scores_len`.
#[no_mangle]
pub unsafe extern "C" fn rote_model_score_next(
    model: *const RoteModel,
    items: *const usize,
    timestamps: *const i64,
    len: usize,
    scores: *mut f64,
    scores_len: usize,
) -> RoteStatus {
    guard(|| {
        let m = model
            .as_ref()
            .ok_or_else(|| fail(RoteStatus::NullPointer, "model is null"))?;
        let items = slice(items, len, "items")?;
        let ts = slice(timestamps, len, "timestamps")?;
        let vocab = m.inner.config().vocab_size;
        let mut events = Vec::with_capacity(len);
        for (&item, &t) in items.iter().zip(ts) {
            if item == 0 || item >= vocab {
                return Err(fail(
                    RoteStatus::InvalidArgument,
                    format!("item {item} outside 1..{vocab}"),
                ));
            }
            events.push(Event::new(item, t).or_status()?);
        }
        let s = m.inner.score_next(&events).or_status()?;
        write_out(scores, scores_len, &s)
    })
}
