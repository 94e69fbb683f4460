//! C interface for running a trained somnoflow checkpoint.
//!
//! Every function returns an [`SfStatus`]; on failure a message for the
//! calling thread is available from [`sf_last_error`]. Models are opaque
//! handles created by [`sf_model_load`] and released by [`sf_model_free`].
//! A handle may be shared between threads for concurrent [`sf_predict`]
//! calls.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use somnoflow::data::{repair_hr, Stage, EPOCH_SECONDS};
use somnoflow::eval::argmax_stage;
use somnoflow::training::Checkpoint;
use somnoflow::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfStatus {
    Ok = 0,
    /// A required pointer was null or a string was not UTF-8.
    InvalidArgument = 1,
    /// The checkpoint could not be read.
    Io = 2,
    /// The checkpoint is truncated or inconsistent.
    Corrupt = 3,
    /// The signal cannot be staged, e.g. no good sample or under one epoch.
    BadInput = 4,
    /// The output buffers hold fewer entries than the record has epochs.
    BufferTooSmall = 5,
    /// Any other failure, including a caught panic.
    Internal = 6,
}

/// A loaded checkpoint: network, standardization and metadata.
pub struct SfModel {
    ckpt: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(err: &Error) -> SfStatus {
    match err {
        Error::Io { .. } => SfStatus::Io,
        Error::Corruption { .. } | Error::Json { .. } | Error::ConfigMismatch(_) => SfStatus::Corrupt,
        Error::Data(_) | Error::Dimension(_) => SfStatus::BadInput,
        _ => SfStatus::Internal,
    }
}

fn fail(status: SfStatus, msg: impl Into<String>) -> SfStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning errors and panics into status codes.
fn guarded(f: impl FnOnce() -> Result<(), (SfStatus, String)>) -> SfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SfStatus::Ok
        }
        Ok(Err((status, msg))) => fail(status, msg),
        Err(_) => fail(SfStatus::Internal, "internal panic"),
    }
}

fn core_err(e: Error) -> (SfStatus, String) {
    (status_of(&e), e.to_string())
}

/// Loads the checkpoint at `path` (a NUL-terminated UTF-8 path) into a
/// new handle stored in `*out`. `*out` is left untouched on failure.
///
/// # Safety
/// `path` must be a valid C string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_model_load(path: *const c_char, out: *mut *mut SfModel) -> SfStatus {
    if path.is_null() || out.is_null() {
        return fail(SfStatus::InvalidArgument, "null argument to sf_model_load");
    }
    // SAFETY: non-null and NUL-terminated per the contract
    let path = unsafe { CStr::from_ptr(path) };
    guarded(|| {
        let path = path
            .to_str()
            .map_err(|_| (SfStatus::InvalidArgument, "checkpoint path is not UTF-8".to_string()))?;
        let ckpt = Checkpoint::load(Path::new(path)).map_err(core_err)?;
        let handle = Box::into_raw(Box::new(SfModel { ckpt }));
        // SAFETY: `out` is non-null and writable per the contract
        unsafe { *out = handle };
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`sf_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sf_model_free(model: *mut SfModel) {
    if !model.is_null() {
        // SAFETY: allocated by `sf_model_load` and owned by the caller
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of 30-s epochs staged from `n_samples` samples at 1 Hz; a
/// trailing partial epoch is ignored.
#[no_mangle]
pub extern "C" fn sf_epoch_count(n_samples: usize) -> usize {
    n_samples / EPOCH_SECONDS
}

/// Stages one night of 1 Hz heart rate.
///
/// `hr` and `quality` hold `n_samples` values; quality 0 marks a good
/// sample and anything else a defective one, which is repaired by
/// interpolation before standardization with the checkpoint's statistics.
/// For each epoch `e`, `p_wake[e]` receives the wake probability and
/// `stages[e]` 1 for wake or 0 for sleep. Both buffers must hold
/// `capacity` entries; either may be null if not wanted. The epoch count
/// is written to `*n_epochs` when it is non-null, also on
/// [`SfStatus::BufferTooSmall`].
///
/// # Safety
/// `model` must be a live handle; `hr` and `quality` must point to
/// `n_samples` readable values; non-null output buffers must be writable
/// for `capacity` entries.
#[no_mangle]
pub unsafe extern "C" fn sf_predict(
    model: *const SfModel,
    hr: *const f64,
    quality: *const u8,
    n_samples: usize,
    p_wake: *mut f64,
    stages: *mut u8,
    capacity: usize,
    n_epochs: *mut usize,
) -> SfStatus {
    if model.is_null() || hr.is_null() || quality.is_null() {
        return fail(SfStatus::InvalidArgument, "null argument to sf_predict");
    }
    // SAFETY: pointers are non-null and sized per the contract
    let (model, hr, quality) = unsafe {
        (
            &*model,
            std::slice::from_raw_parts(hr, n_samples),
            std::slice::from_raw_parts(quality, n_samples),
        )
    };
    let epochs = sf_epoch_count(n_samples);
    if !n_epochs.is_null() {
        // SAFETY: non-null and writable per the contract
        unsafe { *n_epochs = epochs };
    }
    guarded(|| {
        if epochs == 0 {
            return Err((SfStatus::BadInput, format!("{n_samples} samples are less than one {EPOCH_SECONDS}-s epoch")));
        }
        if capacity < epochs && !(p_wake.is_null() && stages.is_null()) {
            return Err((SfStatus::BufferTooSmall, format!("{epochs} epochs but room for {capacity}")));
        }
        let used = epochs * EPOCH_SECONDS;
        let flags: Vec<u8> = quality[..used].iter().map(|&q| u8::from(q != 0) * 2).collect();
        let repaired = repair_hr(&hr[..used], &flags).map_err(core_err)?;
        let signal = model.ckpt.standardization.apply(&repaired).map_err(core_err)?;
        let probs = model.ckpt.model.predict(&signal).map_err(core_err)?;
        for (e, row) in probs.data().chunks(2).enumerate() {
            let (sleep, wake) = (row[Stage::Sleep.code()], row[Stage::Wake.code()]);
            // SAFETY: e < epochs <= capacity for non-null buffers
            unsafe {
                if !p_wake.is_null() {
                    *p_wake.add(e) = wake;
                }
                if !stages.is_null() {
                    *stages.add(e) = argmax_stage(sleep, wake).code() as u8;
                }
            }
        }
        Ok(())
    })
}

/// Training epoch and seed recorded in the checkpoint.
///
/// # Safety
/// `model` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_model_info(model: *const SfModel, epoch: *mut usize, seed: *mut u64) -> SfStatus {
    if model.is_null() {
        return fail(SfStatus::InvalidArgument, "null model");
    }
    // SAFETY: live handle; outputs checked for null
    unsafe {
        let meta = &(*model).ckpt.meta;
        if !epoch.is_null() {
            *epoch = meta.epoch;
        }
        if !seed.is_null() {
            *seed = meta.seed;
        }
    }
    SfStatus::Ok
}

/// Message of the last failed call on this thread, or an empty string.
/// Valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn sf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn sf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
