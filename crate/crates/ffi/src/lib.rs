//! C interface to `wgqed`.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `_free` function. Every fallible call returns a
//! [`WgqedStatus`]; on failure the message is available from
//! [`wgqed_last_error`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use wgqed::analysis::{self, PipelineSettings};
use wgqed::config::{self, ExperimentConfig};
use wgqed::correlate::{self, Direction};
use wgqed::noise::diffusion_nodes;
use wgqed::trajectories::TagStream;
use wgqed::{tagstream, Error};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WgqedStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Numerics = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WgqedDirection {
    Forward = 0,
    Backward = 1,
}

fn direction_arg(d: i32) -> Result<Direction, (WgqedStatus, String)> {
    match d {
        x if x == WgqedDirection::Forward as i32 => Ok(Direction::Forward),
        x if x == WgqedDirection::Backward as i32 => Ok(Direction::Backward),
        x => Err((WgqedStatus::InvalidArgument, format!("unknown direction {x}"))),
    }
}

/// Resolved experiment configuration.
pub struct WgqedConfig {
    inner: ExperimentConfig,
}

/// Time-tag stream read from disk.
pub struct WgqedTags {
    inner: TagStream,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> WgqedStatus {
    match e {
        Error::Config(_) | Error::InvalidParameter { .. } | Error::UnknownRecipe(_) => WgqedStatus::Config,
        Error::Io { .. } | Error::Format { .. } => WgqedStatus::Io,
        Error::IndexOutOfRange { .. } | Error::DimensionMismatch { .. } | Error::GridMismatch(_) => {
            WgqedStatus::InvalidArgument
        }
        _ => WgqedStatus::Numerics,
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), (WgqedStatus, String)>) -> WgqedStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WgqedStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            WgqedStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (WgqedStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (WgqedStatus, String) {
    (WgqedStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (WgqedStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (WgqedStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn overrides_arg(list: *const *const c_char, n: usize) -> Result<Vec<String>, (WgqedStatus, String)> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if list.is_null() {
        return Err(null("overrides"));
    }
    (0..n).map(|i| str_arg(*list.add(i), "override").map(str::to_string)).collect()
}

unsafe fn config_ref<'a>(cfg: *const WgqedConfig) -> Result<&'a ExperimentConfig, (WgqedStatus, String)> {
    cfg.as_ref().map(|c| &c.inner).ok_or_else(|| null("config"))
}

unsafe fn out_slice<'a>(buf: *mut f64, len: usize, need: usize) -> Result<&'a mut [f64], (WgqedStatus, String)> {
    if buf.is_null() {
        return Err(null("output buffer"));
    }
    if len < need {
        return Err((
            WgqedStatus::BufferTooSmall,
            format!("buffer holds {len} values, {need} needed"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(buf, need))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn wgqed_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (truncated,
/// always NUL-terminated when `len > 0`) and returns the full message length
/// excluding the terminator. Returns 0 when no error was recorded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn wgqed_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            0
        }
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// Loads a configuration file, applying `n_overrides` `key=value` strings.
///
/// # Safety
/// `path` must be a NUL-terminated string, `overrides` must hold
/// `n_overrides` such strings (or be null when zero), `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wgqed_config_load(
    path: *const c_char,
    overrides: *const *const c_char,
    n_overrides: usize,
    out: *mut *mut WgqedConfig,
) -> WgqedStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let ov = overrides_arg(overrides, n_overrides)?;
        let inner = config::load(Path::new(path), &ov).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(WgqedConfig { inner }));
        Ok(())
    })
}

/// Parses configuration text.
///
/// # Safety
/// Same contract as [`wgqed_config_load`] with `text` in place of `path`.
#[no_mangle]
pub unsafe extern "C" fn wgqed_config_parse(
    text: *const c_char,
    overrides: *const *const c_char,
    n_overrides: usize,
    out: *mut *mut WgqedConfig,
) -> WgqedStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let text = str_arg(text, "text")?;
        let ov = overrides_arg(overrides, n_overrides)?;
        let inner = config::parse(text, &ov).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(WgqedConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle from `wgqed_config_load`/`_parse` that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn wgqed_config_free(cfg: *mut WgqedConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Number of emitters, 0 for a null handle.
///
/// # Safety
/// `cfg` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wgqed_config_emitter_count(cfg: *const WgqedConfig) -> usize {
    cfg.as_ref().map_or(0, |c| c.inner.system.m())
}

/// Number of points of the configured time grid, 0 for a null handle.
///
/// # Safety
/// `cfg` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wgqed_config_time_grid_len(cfg: *const WgqedConfig) -> usize {
    cfg.as_ref().map_or(0, |c| c.inner.system.time_grid.len())
}

/// `direction` takes a [`WgqedDirection`] value. Fills `times` (ns, may be null) and `g1` (photons/ns) with the
/// diffusion-averaged intensity on the configured time grid. Both buffers
/// need `wgqed_config_time_grid_len` entries.
///
/// # Safety
/// `cfg` must be a live handle; buffers must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn wgqed_g1(
    cfg: *const WgqedConfig,
    direction: i32,
    times: *mut f64,
    g1: *mut f64,
    len: usize,
) -> WgqedStatus {
    guard(|| {
        let exp = config_ref(cfg)?;
        let dir = direction_arg(direction)?;
        let sys = &exp.system;
        let axis = sys.time_grid.points();
        let out = out_slice(g1, len, axis.len())?;
        let mut acc = vec![0.0; axis.len()];
        for node in diffusion_nodes(&sys.emitters, &sys.diffusion.scheme) {
            let v = correlate::intensity_g1(sys, &node.offsets, dir, &axis).map_err(lib_err)?;
            for (a, x) in acc.iter_mut().zip(v) {
                *a += node.weight * x;
            }
        }
        out.copy_from_slice(&acc);
        if !times.is_null() {
            out_slice(times, len, axis.len())?.copy_from_slice(&axis);
        }
        Ok(())
    })
}

/// Zero-delay `g2` of the configured analysis chain for a
/// [`WgqedDirection`] value, with (`with_irf != 0`)
/// or without detector jitter.
///
/// # Safety
/// `cfg` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wgqed_g2_zero_delay(
    cfg: *const WgqedConfig,
    direction: i32,
    with_irf: i32,
    out: *mut f64,
) -> WgqedStatus {
    guard(|| {
        let exp = config_ref(cfg)?;
        let dir = direction_arg(direction)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let settings: PipelineSettings = exp.file.analysis.pipeline();
        let irf = if with_irf != 0 {
            exp.system.detection.sigma_irf_ps * 1e-3
        } else {
            0.0
        };
        let g = analysis::second_order_profile(&exp.system, dir, &settings, irf, exp.system.diffusion.mode)
            .map_err(lib_err)?;
        *out = g.zero_delay;
        Ok(())
    })
}

/// Forward transmission at `n` common laser detunings (GHz) under CW
/// driving, averaged over the configured diffusion ensemble.
///
/// # Safety
/// `cfg` must be a live handle; `delta_ghz` and `out` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn wgqed_transmission(
    cfg: *const WgqedConfig,
    delta_ghz: *const f64,
    n: usize,
    out: *mut f64,
) -> WgqedStatus {
    guard(|| {
        let exp = config_ref(cfg)?;
        if n == 0 {
            return Ok(());
        }
        if delta_ghz.is_null() {
            return Err(null("delta_ghz"));
        }
        let out = out_slice(out, n, n)?;
        let grid: Vec<f64> = std::slice::from_raw_parts(delta_ghz, n)
            .iter()
            .map(|d| d * std::f64::consts::TAU)
            .collect();
        let mut sys = exp.system.clone();
        sys.drive.shape = wgqed::model::PulseShape::Cw;
        let scan = correlate::transmission_scan_with(&sys, &grid, &sys.diffusion, exp.file.transmission.solver)
            .map_err(lib_err)?;
        out.copy_from_slice(&scan.total);
        Ok(())
    })
}

/// Reads a text or binary tag file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wgqed_tags_read(path: *const c_char, out: *mut *mut WgqedTags) -> WgqedStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let inner = tagstream::read_tags(Path::new(path)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(WgqedTags { inner }));
        Ok(())
    })
}

/// # Safety
/// `tags` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wgqed_tags_len(tags: *const WgqedTags) -> usize {
    tags.as_ref().map_or(0, |t| t.inner.records.len())
}

/// Copies record `index` into the output pointers.
///
/// # Safety
/// `tags` must be a live handle; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn wgqed_tags_get(
    tags: *const WgqedTags,
    index: usize,
    pulse_index: *mut u64,
    time_ps: *mut i64,
    channel: *mut u8,
) -> WgqedStatus {
    guard(|| {
        let t = tags.as_ref().ok_or_else(|| null("tags"))?;
        if pulse_index.is_null() || time_ps.is_null() || channel.is_null() {
            return Err(null("output pointer"));
        }
        let r = t.inner.records.get(index).ok_or_else(|| {
            (
                WgqedStatus::InvalidArgument,
                format!("record {index} out of range ({} records)", t.inner.records.len()),
            )
        })?;
        *pulse_index = r.pulse_index;
        *time_ps = r.time_ps;
        *channel = r.channel;
        Ok(())
    })
}

/// # Safety
/// `tags` must be null or a live handle that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn wgqed_tags_free(tags: *mut WgqedTags) {
    if !tags.is_null() {
        drop(Box::from_raw(tags));
    }
}
