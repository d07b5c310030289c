//! C ABI over `mtl-wavenet`.
//!
//! Models are opaque handles created by [`mtwn_model_load`] and released
//! with [`mtwn_model_free`]. Every fallible call returns an [`MtwnStatus`];
//! on failure [`mtwn_last_error`] gives a message for the calling thread.
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mtl_wavenet::codec;
use mtl_wavenet::error::Error;
use mtl_wavenet::inference::{self, SampleMode, SamplerConfig};
use mtl_wavenet::model::{ConditionMode, MtlWaveNet};
use mtl_wavenet::tensor::Tensor;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MtwnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Numeric = 4,
    Io = 5,
    Format = 6,
    BufferTooSmall = 7,
    Internal = 8,
}

/// Condition mode of a loaded model.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MtwnMode {
    Linguistic = 0,
    LinguisticPlusF0 = 1,
    Mtl = 2,
}

impl From<ConditionMode> for MtwnMode {
    fn from(m: ConditionMode) -> Self {
        match m {
            ConditionMode::Linguistic => Self::Linguistic,
            ConditionMode::LinguisticPlusF0 => Self::LinguisticPlusF0,
            ConditionMode::Mtl => Self::Mtl,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MtwnModelInfo {
    pub mode: MtwnMode,
    /// Rows of the linguistic feature matrix.
    pub linguistic_dim: usize,
    /// Output samples per frame.
    pub frame_shift: usize,
    pub receptive_field: usize,
}

/// `argmax` non-zero picks the most likely bin; otherwise bins are drawn at
/// `temperature` from a generator seeded with `seed`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MtwnSampler {
    pub argmax: i32,
    pub temperature: f64,
    pub seed: u64,
}

/// Opaque model handle.
pub struct MtwnModel {
    inner: MtlWaveNet,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).unwrap_or_default());
}

fn status_of(e: &Error) -> MtwnStatus {
    match e {
        Error::Argument(_) | Error::Config(_) | Error::Usage(_) => MtwnStatus::InvalidArgument,
        Error::Dimension(_) | Error::Index(_) => MtwnStatus::Dimension,
        Error::Numeric(_) => MtwnStatus::Numeric,
        Error::Io { .. } => MtwnStatus::Io,
        Error::Format { .. } => MtwnStatus::Format,
        Error::Contract(_) => MtwnStatus::Internal,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (MtwnStatus, String)>) -> MtwnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MtwnStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MtwnStatus::Internal
        }
    }
}

fn fail(e: Error) -> (MtwnStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (MtwnStatus, String) {
    (MtwnStatus::NullPointer, format!("{what} is null"))
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn mtwn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn mtwn_version() -> *const c_char {
    static V: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    V.as_ptr().cast()
}

/// Loads a checkpoint or model file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mtwn_model_load(path: *const c_char, out: *mut *mut MtwnModel) -> MtwnStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (MtwnStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let inner = MtlWaveNet::load(p).map_err(fail)?;
        *out = Box::into_raw(Box::new(MtwnModel { inner }));
        Ok(())
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `model` must come from [`mtwn_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mtwn_model_free(model: *mut MtwnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mtwn_model_info(model: *const MtwnModel, out: *mut MtwnModelInfo) -> MtwnStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = MtwnModelInfo {
            mode: m.mode.into(),
            linguistic_dim: m.linguistic_dim,
            frame_shift: m.frame_shift,
            receptive_field: m.receptive_field(),
        };
        Ok(())
    })
}

/// Synthesizes `n_frames · frame_shift` samples in [−1, 1].
///
/// `linguistic` is row-major `[linguistic_dim × n_frames]`. `logf0` (natural
/// log Hz) and `vuv` (0 or 1) hold `n_frames` values each; they are required
/// for linguistic+F0 models and ignored otherwise, so may be null. When
/// `out_capacity` is too small, nothing is generated, `*out_len` is set to
/// the required length and `BufferTooSmall` is returned.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mtwn_synthesize(
    model: *const MtwnModel,
    linguistic: *const f64,
    n_frames: usize,
    logf0: *const f64,
    vuv: *const f64,
    sampler: *const MtwnSampler,
    sample_rate: u32,
    out: *mut f64,
    out_capacity: usize,
    out_len: *mut usize,
) -> MtwnStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let s = sampler.as_ref().ok_or_else(|| null("sampler"))?;
        let out_len = out_len.as_mut().ok_or_else(|| null("out_len"))?;
        if linguistic.is_null() {
            return Err(null("linguistic"));
        }
        if n_frames == 0 {
            return Err((MtwnStatus::InvalidArgument, "n_frames must be at least 1".into()));
        }
        let needed = n_frames * m.frame_shift;
        *out_len = needed;
        if out_capacity < needed {
            return Err((
                MtwnStatus::BufferTooSmall,
                format!("output needs {needed} samples, capacity is {out_capacity}"),
            ));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let ling = Tensor::new(
            vec![m.linguistic_dim, n_frames],
            std::slice::from_raw_parts(linguistic, m.linguistic_dim * n_frames).to_vec(),
        )
        .map_err(fail)?;
        let row = |p: *const f64| Tensor::new(vec![1, n_frames], std::slice::from_raw_parts(p, n_frames).to_vec());
        let f0 = if m.mode.uses_f0() {
            if logf0.is_null() || vuv.is_null() {
                return Err((
                    MtwnStatus::InvalidArgument,
                    "this model is conditioned on F0; logf0 and vuv are required".into(),
                ));
            }
            Some((row(logf0).map_err(fail)?, row(vuv).map_err(fail)?))
        } else {
            None
        };
        let cond = m
            .condition_features(&ling, f0.as_ref().map(|(a, b)| (a, b)))
            .map_err(fail)?;
        let sampler = SamplerConfig {
            mode: if s.argmax != 0 {
                SampleMode::Argmax
            } else {
                SampleMode::Sample
            },
            temperature: s.temperature,
            seed: s.seed,
        };
        let g = inference::synthesize(m, &cond, &sampler, sample_rate).map_err(fail)?;
        std::slice::from_raw_parts_mut(out, needed).copy_from_slice(&g.waveform.samples);
        Ok(())
    })
}

/// μ-law bin of `x` in [−1, 1].
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mtwn_mulaw_encode(x: f64, out: *mut u8) -> MtwnStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = codec::mulaw_encode(x).map_err(fail)?;
        Ok(())
    })
}

/// Amplitude of μ-law bin `bin` (0..=255).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mtwn_mulaw_decode(bin: u32, out: *mut f64) -> MtwnStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = codec::mulaw_decode(bin as usize).map_err(fail)?;
        Ok(())
    })
}
