//! C ABI over the neurofuse core. Objects cross the boundary as opaque
//! handles owned by the caller and released with the matching `*_free`.
//! Every call returns an [`NfStatus`]; the message of the last failure on
//! the calling thread is available from [`nf_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use neurofuse::artifacts;
use neurofuse::datamodel::{EegRecording, FmriSeries, MarkerKind};
use neurofuse::error::Error;
use neurofuse::formats::{self, BinaryFormat, MarkerMap};
use neurofuse::fusion;
use neurofuse::phantom::{self, Condition, Phantom, PhantomConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NfStatus {
    Ok = 0,
    Config = 2,
    Io = 3,
    Data = 4,
    Markers = 5,
    NullArgument = 10,
    InvalidUtf8 = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NfCondition {
    Outside = 0,
    ScannerOff = 1,
    ScannerOn = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NfAlign {
    Volume = 0,
    Slice = 1,
}

/// Synthetic dataset with its ground truth.
pub struct NfPhantom(Phantom);
/// Multichannel EEG with markers.
pub struct NfRecording(EegRecording);
/// 4-D fMRI series.
pub struct NfFmri(FmriSeries);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> NfStatus {
    match err.exit_code() {
        2 => NfStatus::Config,
        3 => NfStatus::Io,
        5 => NfStatus::Markers,
        _ => NfStatus::Data,
    }
}

struct Fail(NfStatus, String);

impl<E: Into<Error>> From<E> for Fail {
    fn from(e: E) -> Self {
        let e = e.into();
        Fail(status_of(&e), e.to_string())
    }
}

fn null(name: &str) -> Fail {
    Fail(NfStatus::NullArgument, format!("{name} is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NfStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            NfStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(NfStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies `src` into a caller buffer of `cap` elements; `*len` always
/// receives the full length.
unsafe fn copy_out<T: Copy>(src: &[T], buf: *mut T, cap: usize, len: *mut usize) -> Result<(), Fail> {
    if !len.is_null() {
        *len = src.len();
    }
    if src.len() > cap {
        return Err(Fail(NfStatus::BufferTooSmall, format!("need {} elements, buffer holds {cap}", src.len())));
    }
    if !src.is_empty() {
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    }
    Ok(())
}

unsafe fn slice<'a, T>(p: *const T, n: usize, name: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Writes the last error message of this thread, NUL-terminated and
/// truncated to `cap` bytes. Returns the untruncated length without the NUL.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn nf_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

// ---------------------------------------------------------------- phantom

/// Generates the default phantom with `seed` and `duration_s` (0 keeps the
/// default duration).
///
/// # Safety
/// `out` must be a valid pointer; the handle is released with [`nf_phantom_free`].
#[no_mangle]
pub unsafe extern "C" fn nf_phantom_new(seed: u64, duration_s: f64, out: *mut *mut NfPhantom) -> NfStatus {
    guard(|| {
        let mut cfg = PhantomConfig { seed, ..Default::default() };
        if duration_s > 0.0 {
            cfg.duration_s = duration_s;
        }
        put(out, NfPhantom(phantom::gen_phantom(&cfg)?))
    })
}

/// Generates a phantom from a TOML document of phantom settings.
///
/// # Safety
/// `toml_text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nf_phantom_from_toml(toml_text: *const c_char, out: *mut *mut NfPhantom) -> NfStatus {
    guard(|| {
        let cfg: PhantomConfig = toml::from_str(text(toml_text, "toml_text")?).map_err(|e| Fail(NfStatus::Config, e.to_string()))?;
        put(out, NfPhantom(phantom::gen_phantom(&cfg)?))
    })
}

/// # Safety
/// `p` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nf_phantom_free(p: *mut NfPhantom) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// EEG of one recording condition.
///
/// # Safety
/// `p` must be a live phantom handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nf_phantom_emit(p: *const NfPhantom, condition: NfCondition, out: *mut *mut NfRecording) -> NfStatus {
    guard(|| {
        let p = handle(p, "phantom")?;
        let c = match condition {
            NfCondition::Outside => Condition::Outside,
            NfCondition::ScannerOff => Condition::ScannerOff,
            NfCondition::ScannerOn => Condition::ScannerOn,
        };
        put(out, NfRecording(p.0.emit(c)))
    })
}

/// # Safety
/// `p` must be a live phantom handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nf_phantom_fmri(p: *const NfPhantom, out: *mut *mut NfFmri) -> NfStatus {
    guard(|| put(out, NfFmri(handle(p, "phantom")?.0.fmri.clone())))
}

/// True R-peak sample indices.
///
/// # Safety
/// `buf` must hold `cap` elements; `len` may be null.
#[no_mangle]
pub unsafe extern "C" fn nf_phantom_r_peaks(p: *const NfPhantom, buf: *mut usize, cap: usize, len: *mut usize) -> NfStatus {
    guard(|| copy_out(&handle(p, "phantom")?.0.truth.r_peaks, buf, cap, len))
}

// ---------------------------------------------------------------- EEG

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nf_recording_load(path: *const c_char, out: *mut *mut NfRecording) -> NfStatus {
    guard(|| put(out, NfRecording(formats::parse_brainvision(text(path, "path")?)?)))
}

/// Writes `<stem>.vhdr/.vmrk/.eeg`; `float32` selects IEEE float samples,
/// otherwise int16 at 0.1 µV resolution.
///
/// # Safety
/// `rec` must be a live handle and `stem` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nf_recording_save(rec: *const NfRecording, stem: *const c_char, float32: bool) -> NfStatus {
    guard(|| {
        let rec = handle(rec, "recording")?;
        let format = if float32 { BinaryFormat::Float32 } else { BinaryFormat::Int16 };
        formats::write_brainvision(&rec.0, text(stem, "stem")?, format, 0.1, &MarkerMap::default())?;
        Ok(())
    })
}

/// # Safety
/// `rec` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nf_recording_free(rec: *mut NfRecording) {
    if !rec.is_null() {
        drop(Box::from_raw(rec));
    }
}

/// Channels, samples and rate of a recording. Null handles give zeros.
///
/// # Safety
/// `rec` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nf_recording_shape(rec: *const NfRecording, n_channels: *mut usize, n_samples: *mut usize, rate_hz: *mut f64) {
    let (c, s, r) = rec.as_ref().map(|r| (r.0.n_channels(), r.0.n_samples(), r.0.sampling_rate())).unwrap_or((0, 0, 0.0));
    if !n_channels.is_null() {
        *n_channels = c;
    }
    if !n_samples.is_null() {
        *n_samples = s;
    }
    if !rate_hz.is_null() {
        *rate_hz = r;
    }
}

/// Row index of a channel label.
///
/// # Safety
/// `rec` must be a live handle, `label` NUL-terminated, `index` valid.
#[no_mangle]
pub unsafe extern "C" fn nf_recording_channel_index(rec: *const NfRecording, label: *const c_char, index: *mut usize) -> NfStatus {
    guard(|| {
        let rec = handle(rec, "recording")?;
        let label = text(label, "label")?;
        let i = rec.0.channel_index(label).ok_or_else(|| Fail(NfStatus::Data, format!("unknown channel: {label}")))?;
        if index.is_null() {
            return Err(null("index"));
        }
        *index = i;
        Ok(())
    })
}

/// Copies one channel (µV).
///
/// # Safety
/// `buf` must hold `cap` doubles; `len` may be null.
#[no_mangle]
pub unsafe extern "C" fn nf_recording_channel(
    rec: *const NfRecording,
    channel: usize,
    buf: *mut f64,
    cap: usize,
    len: *mut usize,
) -> NfStatus {
    guard(|| {
        let rec = handle(rec, "recording")?;
        if channel >= rec.0.n_channels() {
            return Err(Fail(NfStatus::Data, format!("channel {channel} out of range")));
        }
        copy_out(&rec.0.data().row(channel).to_vec(), buf, cap, len)
    })
}

// ---------------------------------------------------------------- artifacts

/// Average artifact subtraction aligned to volume or slice triggers.
///
/// # Safety
/// `rec` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nf_aas_correct(
    rec: *const NfRecording,
    align: NfAlign,
    window_epochs: usize,
    out: *mut *mut NfRecording,
) -> NfStatus {
    guard(|| {
        let kind = match align {
            NfAlign::Volume => MarkerKind::VolumeTrigger,
            NfAlign::Slice => MarkerKind::SliceTrigger,
        };
        let res = artifacts::aas_correct(&handle(rec, "recording")?.0, kind, window_epochs)?;
        put(out, NfRecording(res.cleaned))
    })
}

/// R-peak sample indices detected on `channel`.
///
/// # Safety
/// `buf` must hold `cap` elements; `len` may be null.
#[no_mangle]
pub unsafe extern "C" fn nf_detect_r_peaks(
    rec: *const NfRecording,
    channel: *const c_char,
    buf: *mut usize,
    cap: usize,
    len: *mut usize,
) -> NfStatus {
    guard(|| {
        let rec = &handle(rec, "recording")?.0;
        let ecg = rec.channel(text(channel, "channel")?)?;
        let peaks = artifacts::detect_r_peaks(ecg, rec.sampling_rate())?.samples_of(MarkerKind::RPeak);
        copy_out(&peaks, buf, cap, len)
    })
}

/// Pulse-artifact template subtraction. `skip_channel` (nullable) is left
/// untouched, normally the ECG.
///
/// # Safety
/// `peaks` must hold `n_peaks` elements; strings NUL-terminated or null.
#[no_mangle]
pub unsafe extern "C" fn nf_bcg_correct(
    rec: *const NfRecording,
    peaks: *const usize,
    n_peaks: usize,
    delay_s: f64,
    window_epochs: usize,
    skip_channel: *const c_char,
    out: *mut *mut NfRecording,
) -> NfStatus {
    guard(|| {
        let rec = &handle(rec, "recording")?.0;
        let peaks = slice(peaks, n_peaks, "peaks")?;
        let skip: Vec<&str> = if skip_channel.is_null() { Vec::new() } else { vec![text(skip_channel, "skip_channel")?] };
        let res = artifacts::bcg_correct_except(rec, peaks, delay_s, window_epochs, &skip)?;
        put(out, NfRecording(res.cleaned))
    })
}

// ---------------------------------------------------------------- fMRI

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nf_fmri_load(path: *const c_char, out: *mut *mut NfFmri) -> NfStatus {
    guard(|| put(out, NfFmri(formats::read_nifti(text(path, "path")?)?)))
}

/// # Safety
/// `f` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nf_fmri_free(f: *mut NfFmri) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Voxel count, volume count and TR. Null handles give zeros.
///
/// # Safety
/// `f` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nf_fmri_shape(f: *const NfFmri, n_voxels: *mut usize, n_volumes: *mut usize, tr_s: *mut f64) {
    let (v, t, tr) = f.as_ref().map(|f| (f.0.n_voxels(), f.0.n_volumes(), f.0.tr())).unwrap_or((0, 0, 0.0));
    if !n_voxels.is_null() {
        *n_voxels = v;
    }
    if !n_volumes.is_null() {
        *n_volumes = t;
    }
    if !tr_s.is_null() {
        *tr_s = tr;
    }
}

// ---------------------------------------------------------------- fusion

/// Band-power envelope of `channel` on the TR grid, convolved with the
/// canonical HRF and z-scored. Writes `n_volumes` values.
///
/// # Safety
/// `buf` must hold `cap` doubles; `len` may be null.
#[no_mangle]
pub unsafe extern "C" fn nf_eeg_predictor(
    rec: *const NfRecording,
    channel: *const c_char,
    band_lo_hz: f64,
    band_hi_hz: f64,
    tr_s: f64,
    n_volumes: usize,
    buf: *mut f64,
    cap: usize,
    len: *mut usize,
) -> NfStatus {
    guard(|| {
        let rec = &handle(rec, "recording")?.0;
        let hrf = fusion::canonical_hrf(tr_s);
        let p = fusion::build_eeg_predictor(rec, text(channel, "channel")?, (band_lo_hz, band_hi_hz), tr_s, n_volumes, &hrf)?;
        copy_out(&p.values, buf, cap, len)
    })
}

/// Pearson r of two equal-length vectors.
///
/// # Safety
/// `x` and `y` must hold `n` doubles; `r` must be valid.
#[no_mangle]
pub unsafe extern "C" fn nf_pearson(x: *const f64, y: *const f64, n: usize, r: *mut f64) -> NfStatus {
    guard(|| {
        let x = slice(x, n, "x")?;
        let y = slice(y, n, "y")?;
        if r.is_null() {
            return Err(null("r"));
        }
        *r = fusion::pearson(x, y);
        Ok(())
    })
}

/// Per-voxel Pearson r against a predictor of `n` volumes.
///
/// # Safety
/// `predictor` must hold `n` doubles; `buf` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn nf_pearson_map(
    f: *const NfFmri,
    predictor: *const f64,
    n: usize,
    buf: *mut f64,
    cap: usize,
    len: *mut usize,
) -> NfStatus {
    guard(|| {
        let f = &handle(f, "fmri")?.0;
        let map = fusion::pearson_map(f, slice(predictor, n, "predictor")?)?;
        copy_out(map.r.values(), buf, cap, len)
    })
}
