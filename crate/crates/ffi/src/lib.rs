//! C ABI over `outfitsynth`.
//!
//! Objects cross the boundary as opaque handles created by `os_*_new` /
//! `os_*_load` and released by the matching `os_*_free`. Every fallible call
//! returns an [`OsStatus`]; the message of the most recent failure on the
//! calling thread is available from [`os_last_error`].

use outfitsynth::checkpoint::Checkpoint;
use outfitsynth::config::RunConfig;
use outfitsynth::data::Corpus;
use outfitsynth::domain::{BinaryMask, ItemImage};
use outfitsynth::eval::{fcts_from_scores, ssim};
use outfitsynth::generator::OutfitGenerator;
use outfitsynth::train::load_generator;
use outfitsynth::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Integrity = 4,
    HashMismatch = 5,
    Runtime = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Resolved run configuration.
pub struct OsConfig {
    inner: RunConfig,
}

/// Outfit generator with one item generator per target category.
pub struct OsGenerator {
    inner: OutfitGenerator<f32>,
    image_size: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).expect("interior NULs removed"));
}

fn status_of(e: &Error) -> OsStatus {
    match e {
        Error::Io(_) | Error::Png(_) | Error::Corpus(_) => OsStatus::Io,
        Error::Integrity(_) | Error::Version(_) => OsStatus::Integrity,
        Error::HashMismatch { .. } => OsStatus::HashMismatch,
        e if e.is_validation() => OsStatus::InvalidArgument,
        _ => OsStatus::Runtime,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (OsStatus, String)>) -> OsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            OsStatus::Panic
        }
    }
}

trait IntoFfi<T> {
    fn ffi(self) -> Result<T, (OsStatus, String)>;
}

impl<T> IntoFfi<T> for outfitsynth::Result<T> {
    fn ffi(self) -> Result<T, (OsStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (OsStatus, String) {
    (OsStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (OsStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (OsStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f32, len: usize, what: &str) -> Result<&'a [f32], (OsStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn os_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn os_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default configuration.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn os_config_default(out: *mut *mut OsConfig) -> OsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(OsConfig { inner: RunConfig::default() }));
        Ok(())
    })
}

/// Configuration from a flat JSON object with dotted keys, applied over
/// the defaults.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn os_config_from_json(json: *const c_char, out: *mut *mut OsConfig) -> OsStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = RunConfig::from_json_str(text).ffi()?;
        *out = Box::into_raw(Box::new(OsConfig { inner }));
        Ok(())
    })
}

/// Sets one dotted key; `value` is JSON or a bare string.
///
/// # Safety
/// `cfg` must come from this library; `key` and `value` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn os_config_set(cfg: *mut OsConfig, key: *const c_char, value: *const c_char) -> OsStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        let (k, v) = (str_arg(key, "key")?, str_arg(value, "value")?);
        cfg.inner = cfg.inner.set(k, v).ffi()?;
        Ok(())
    })
}

/// Writes the config hash (64 hex digits and a NUL) into `buf`.
///
/// # Safety
/// `cfg` must come from this library; `buf` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn os_config_hash(cfg: *const OsConfig, buf: *mut c_char, len: usize) -> OsStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let h = cfg.inner.hash();
        if len < h.len() + 1 {
            return Err((OsStatus::BufferTooSmall, format!("hash needs {} bytes", h.len() + 1)));
        }
        std::ptr::copy_nonoverlapping(h.as_ptr().cast::<c_char>(), buf, h.len());
        *buf.add(h.len()) = 0;
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from this library or be NULL; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn os_config_free(cfg: *mut OsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Freshly initialized generator for `cfg`.
///
/// # Safety
/// `cfg` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn os_generator_new(cfg: *const OsConfig, out: *mut *mut OsGenerator) -> OsStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        cfg.inner.validate().ffi()?;
        let inner = OutfitGenerator::new(&cfg.inner);
        *out = Box::into_raw(Box::new(OsGenerator { inner, image_size: cfg.inner.image_size }));
        Ok(())
    })
}

/// Generator restored from a training checkpoint. With a non-NULL `cfg`,
/// the checkpoint's config hash must match unless `force` is nonzero.
///
/// # Safety
/// `path` must be NUL-terminated; `cfg` NULL or from this library; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn os_generator_load(path: *const c_char, cfg: *const OsConfig, force: i32, out: *mut *mut OsGenerator) -> OsStatus {
    guard(|| {
        let p = str_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let ck = Checkpoint::load(Path::new(p), cfg.as_ref().map(|c| &c.inner), force != 0).ffi()?;
        let inner = load_generator(&ck).ffi()?;
        *out = Box::into_raw(Box::new(OsGenerator { inner, image_size: ck.config.image_size }));
        Ok(())
    })
}

/// Side length in pixels, or 0 for NULL.
///
/// # Safety
/// `g` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn os_generator_image_size(g: *const OsGenerator) -> usize {
    g.as_ref().map_or(0, |g| g.image_size)
}

/// Number of outfit positions (given item included), or 0 for NULL.
///
/// # Safety
/// `g` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn os_generator_num_items(g: *const OsGenerator) -> usize {
    g.as_ref().map_or(0, |g| g.inner.order.len())
}

/// Completes an outfit.
///
/// `given` is one `3×S×S` planar RGB image in `[-1, 1]`. `masks` holds one
/// `S×S` {0, 1} mask per target category in configured order. `out`
/// receives every outfit position (given item included) as `3×S×S` planes,
/// `num_items × 3 × S × S` floats in total.
///
/// # Safety
/// `g` must come from this library; the buffers must hold the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn os_generator_generate(
    g: *const OsGenerator,
    given: *const f32,
    given_len: usize,
    masks: *const f32,
    masks_len: usize,
    out: *mut f32,
    out_len: usize,
) -> OsStatus {
    guard(|| {
        let g = g.as_ref().ok_or_else(|| null("generator"))?;
        let s = g.image_size;
        let plane = s * s;
        let targets = g.inner.targets();
        let given = ItemImage::new(s, slice_arg(given, given_len, "given")?.to_vec()).ffi()?;
        let masks = slice_arg(masks, masks_len, "masks")?;
        if masks_len != targets.len() * plane {
            return Err((OsStatus::InvalidArgument, format!("masks hold {masks_len} values, expected {}", targets.len() * plane)));
        }
        let need = g.inner.order.len() * 3 * plane;
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len < need {
            return Err((OsStatus::BufferTooSmall, format!("output needs {need} floats")));
        }
        let refs = targets
            .iter()
            .zip(masks.chunks(plane))
            .map(|(&c, m)| BinaryMask::new(s, m.to_vec()).map(|m| (c, m)))
            .collect::<outfitsynth::Result<Vec<_>>>()
            .ffi()?;
        let (outfit, _) = g.inner.generate(&given, &refs).ffi()?;
        let dst = std::slice::from_raw_parts_mut(out, need);
        for (chunk, item) in dst.chunks_mut(3 * plane).zip(&outfit.items) {
            chunk.copy_from_slice(&item.data);
        }
        Ok(())
    })
}

/// # Safety
/// `g` must come from this library or be NULL; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn os_generator_free(g: *mut OsGenerator) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Renders a synthetic corpus of `n` outfits into `out_dir`.
///
/// # Safety
/// `out_dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn os_corpus_generate(n: usize, seed: u64, image_size: usize, out_dir: *const c_char) -> OsStatus {
    guard(|| {
        let dir = str_arg(out_dir, "out_dir")?;
        if n < 10 {
            return Err((OsStatus::InvalidArgument, format!("need at least 10 outfits, got {n}")));
        }
        Corpus::generate(n, seed, image_size, Path::new(dir)).ffi()?;
        Ok(())
    })
}

/// SSIM of two `3×S×S` planar images in `[-1, 1]`.
///
/// # Safety
/// `x` and `y` must each hold `3 * size * size` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn os_ssim(x: *const f32, y: *const f32, size: usize, out: *mut f64) -> OsStatus {
    guard(|| {
        let n = 3 * size * size;
        let a = ItemImage::new(size, slice_arg(x, n, "x")?.to_vec()).ffi()?;
        let b = ItemImage::new(size, slice_arg(y, n, "y")?.to_vec()).ffi()?;
        let v = ssim(&a, &b).ffi()?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Fraction of pairs where `pos[i] > neg[i]`.
///
/// # Safety
/// `pos` and `neg` must each hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn os_fcts(pos: *const f64, neg: *const f64, n: usize, out: *mut f64) -> OsStatus {
    guard(|| {
        if pos.is_null() || neg.is_null() {
            return Err(null("scores"));
        }
        let v = fcts_from_scores(std::slice::from_raw_parts(pos, n), std::slice::from_raw_parts(neg, n)).ffi()?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}
