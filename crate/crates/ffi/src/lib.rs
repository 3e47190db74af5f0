//! C ABI for `micloc`.
//!
//! Conventions:
//! - every fallible function returns a [`MiclocStatus`] and writes its result
//!   through an out-pointer, which is left untouched on failure;
//! - handles are opaque and owned by the caller once returned; release them
//!   with the matching `*_free` function (passing NULL is a no-op);
//! - after a non-OK status, [`micloc_last_error`] returns a message for the
//!   calling thread, valid until that thread's next `micloc_*` call;
//! - panics never cross the boundary; they surface as `MICLOC_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use micloc::dsp::{self, Interpolation, Waveform};
use micloc::geometry::{quantization_floor, ArrayGeometry, Medium};
use micloc::locate::{self, localize_pipeline, MultilaterationProblem, PipelineInput, PipelineOptions};
use micloc::models::TrainedModel;
use micloc::simulate::TdoaPair;
use micloc::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiclocStatus {
    Ok = 0,
    NullPointer = 1,
    Domain = 2,
    OutOfRange = 3,
    NoPeak = 4,
    Parse = 5,
    Version = 6,
    Diverged = 7,
    Config = 8,
    Audio = 9,
    Io = 10,
    InvalidUtf8 = 11,
    Panic = 12,
}

/// Array geometry plus propagation medium.
pub struct MiclocArray {
    geometry: ArrayGeometry,
    medium: Medium,
}

/// A trained azimuth model loaded from disk.
pub struct MiclocModel {
    model: TrainedModel,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MiclocTdoa {
    /// Arrival time at microphone 1 minus microphone 0, seconds.
    pub tau21: f64,
    /// Arrival time at microphone 2 minus microphone 0, seconds.
    pub tau31: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MiclocLocation {
    pub x: f64,
    pub y: f64,
    /// Degrees in [0, 360), measured at the reference microphone.
    pub azimuth_deg: f64,
    pub residual: f64,
    pub converged: bool,
    pub range_unreliable: bool,
    pub iterations: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MiclocEstimate {
    pub tdoa: MiclocTdoa,
    pub location: MiclocLocation,
    /// Model azimuth when a model was given, else the geometric one.
    pub azimuth_deg: f64,
    pub model_applied: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MiclocDelay {
    /// Seconds; positive when the second signal lags the first.
    pub tau_hat: f64,
    pub peak_lag: i64,
    pub peak_value: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> MiclocStatus {
    match e {
        Error::Domain(_) => MiclocStatus::Domain,
        Error::OutOfRange { .. } => MiclocStatus::OutOfRange,
        Error::NoPeak(_) => MiclocStatus::NoPeak,
        Error::Parse { .. } => MiclocStatus::Parse,
        Error::Version { .. } => MiclocStatus::Version,
        Error::Diverged { .. } => MiclocStatus::Diverged,
        Error::Config { .. } => MiclocStatus::Config,
        Error::Audio(_) => MiclocStatus::Audio,
        Error::Io { .. } => MiclocStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Utf8,
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MiclocStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MiclocStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            MiclocStatus::NullPointer
        }
        Ok(Err(Failure::Utf8)) => {
            set_error("path is not valid UTF-8");
            MiclocStatus::InvalidUtf8
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal panic: {msg}"));
            MiclocStatus::Panic
        }
    }
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn in_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn samples<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn location(l: &locate::LocationEstimate) -> MiclocLocation {
    MiclocLocation {
        x: l.position.x,
        y: l.position.y,
        azimuth_deg: l.azimuth_deg,
        residual: l.residual,
        converged: l.converged,
        range_unreliable: l.range_unreliable,
        iterations: l.iterations as u64,
    }
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn micloc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread ("" if none).
#[no_mangle]
pub extern "C" fn micloc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Distance resolution `c / fs` in metres.
///
/// # Safety
/// `out` must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn micloc_quantization_floor(speed_of_sound: f64, sample_rate: f64, out: *mut f64) -> MiclocStatus {
    guard(|| {
        let o = unsafe { self::out(out, "out") }?;
        *o = quantization_floor(speed_of_sound, sample_rate)?;
        Ok(())
    })
}

/// Equilateral array with the given spacing (m) and speed of sound (m/s).
///
/// # Safety
/// `out` must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn micloc_array_new(spacing: f64, speed_of_sound: f64, out: *mut *mut MiclocArray) -> MiclocStatus {
    guard(|| {
        let o = unsafe { self::out(out, "out") }?;
        let a = MiclocArray {
            geometry: ArrayGeometry::equilateral(spacing)?,
            medium: Medium::new(speed_of_sound)?,
        };
        *o = Box::into_raw(Box::new(a));
        Ok(())
    })
}

/// # Safety
/// `array` must be NULL or a handle from [`micloc_array_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn micloc_array_free(array: *mut MiclocArray) {
    if !array.is_null() {
        drop(unsafe { Box::from_raw(array) });
    }
}

/// Geometric source fit for one TDOA pair.
///
/// # Safety
/// `array` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn micloc_multilaterate(
    array: *const MiclocArray,
    tdoa: MiclocTdoa,
    radius_bound: f64,
    out: *mut MiclocLocation,
) -> MiclocStatus {
    guard(|| {
        let a = unsafe { in_ref(array, "array") }?;
        let o = unsafe { self::out(out, "out") }?;
        let p = MultilaterationProblem::new(a.geometry, a.medium, TdoaPair::new(tdoa.tau21, tdoa.tau31), radius_bound)?;
        *o = location(&locate::multilaterate(&p)?);
        Ok(())
    })
}

/// Loads a model file written by `micloc train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn micloc_model_load(path: *const c_char, out: *mut *mut MiclocModel) -> MiclocStatus {
    guard(|| {
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        let o = unsafe { self::out(out, "out") }?;
        let p = unsafe { CStr::from_ptr(path) }.to_str().map_err(|_| Failure::Utf8)?;
        let model = TrainedModel::load(Path::new(p))?;
        *o = Box::into_raw(Box::new(MiclocModel { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle from [`micloc_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn micloc_model_free(model: *mut MiclocModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Model azimuth in degrees for one TDOA pair.
///
/// # Safety
/// `model` must be a live handle; `out_azimuth_deg` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn micloc_model_predict(
    model: *const MiclocModel,
    tdoa: MiclocTdoa,
    out_azimuth_deg: *mut f64,
) -> MiclocStatus {
    guard(|| {
        let m = unsafe { in_ref(model, "model") }?;
        let o = unsafe { self::out(out_azimuth_deg, "out_azimuth_deg") }?;
        *o = m.model.predict_azimuth(&TdoaPair::new(tdoa.tau21, tdoa.tau31))?;
        Ok(())
    })
}

/// Full pipeline on three synchronised channels of `len` samples each:
/// GCC-PHAT delays, geometric fit, then the model azimuth if `model` is not
/// NULL.
///
/// # Safety
/// `channels` must point to 3 pointers, each valid for `len` reads; `array`
/// must be a live handle; `model` may be NULL; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn micloc_localize(
    array: *const MiclocArray,
    channels: *const *const f64,
    len: usize,
    sample_rate: f64,
    model: *const MiclocModel,
    radius_bound: f64,
    out: *mut MiclocEstimate,
) -> MiclocStatus {
    guard(|| {
        let a = unsafe { in_ref(array, "array") }?;
        let o = unsafe { self::out(out, "out") }?;
        if channels.is_null() {
            return Err(Failure::Null("channels"));
        }
        let ptrs = unsafe { std::slice::from_raw_parts(channels, 3) };
        let mut waves = Vec::with_capacity(3);
        for &p in ptrs {
            waves.push(Waveform::new(unsafe { samples(p, len, "channel") }?.to_vec(), sample_rate)?);
        }
        let m = unsafe { model.as_ref() }.map(|m| &m.model);
        let opts = PipelineOptions {
            radius_bound,
            ..PipelineOptions::default()
        };
        let e = localize_pipeline(&a.geometry, &a.medium, PipelineInput::Waveforms(&waves), m, &opts)?;
        *o = MiclocEstimate {
            tdoa: MiclocTdoa {
                tau21: e.tdoa.tau21,
                tau31: e.tdoa.tau31,
            },
            location: location(&e.location),
            azimuth_deg: e.azimuth_deg,
            model_applied: e.model_applied,
        };
        Ok(())
    })
}

/// GCC-PHAT delay of `y` relative to `x` within `±max_lag` samples.
///
/// # Safety
/// `x` and `y` must be valid for `len` reads; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn micloc_gcc_phat(
    x: *const f64,
    y: *const f64,
    len: usize,
    sample_rate: f64,
    max_lag: usize,
    parabolic: bool,
    out: *mut MiclocDelay,
) -> MiclocStatus {
    guard(|| {
        let o = unsafe { self::out(out, "out") }?;
        let xi = Waveform::new(unsafe { samples(x, len, "x") }?.to_vec(), sample_rate)?;
        let xj = Waveform::new(unsafe { samples(y, len, "y") }?.to_vec(), sample_rate)?;
        let interp = if parabolic { Interpolation::Parabolic } else { Interpolation::None };
        let d = dsp::gcc_phat(&xi, &xj, max_lag, interp)?;
        *o = MiclocDelay {
            tau_hat: d.tau_hat,
            peak_lag: d.peak_lag,
            peak_value: d.peak_value,
        };
        Ok(())
    })
}
