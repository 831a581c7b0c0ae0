//! C ABI over the doorwatch engine.
//!
//! Every function returns a [`DwStatus`]. On failure the message is kept per
//! thread and read with [`dw_last_error`]. Strings handed out through `out`
//! parameters are owned by the caller and released with [`dw_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use doorwatch::attributes::SceneFacts;
use doorwatch::clock::SystemClock;
use doorwatch::config::{assemble, EngineConfig, Runtime};
use doorwatch::describe::render;
use doorwatch::orchestrate::{run_cameras, summarize_history, TimeRange};
use doorwatch::profile::{Chip, Demographics, ProfileStore};
use doorwatch::recognize::{chi_square, lbp_histogram, HISTOGRAM_LEN};
use doorwatch::Error;
use image::GrayImage;

/// Result codes. The non-zero values match the command-line exit codes
/// where a matching category exists.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DwStatus {
    Ok = 0,
    Storage = 1,
    InvalidInput = 2,
    Conflict = 3,
    NotFound = 4,
    Quality = 5,
    BackendUnavailable = 6,
    NullArgument = 7,
    Panic = 8,
}

impl From<&Error> for DwStatus {
    fn from(e: &Error) -> Self {
        match e.exit_code() {
            2 => DwStatus::InvalidInput,
            3 => DwStatus::Conflict,
            4 => DwStatus::NotFound,
            5 => DwStatus::Quality,
            6 => DwStatus::BackendUnavailable,
            _ => DwStatus::Storage,
        }
    }
}

/// Length of the histogram written by [`dw_lbp_histogram`].
pub const DW_HISTOGRAM_LEN: usize = 3776;
const _: () = assert!(DW_HISTOGRAM_LEN == HISTOGRAM_LEN);

/// Enrolled-person store.
pub struct DwProfileStore(ProfileStore);

/// A configured engine with its backend connection and notification queue.
pub struct DwEngine {
    cfg: EngineConfig,
    rt: Runtime,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(DwStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(DwStatus::from(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(DwStatus::InvalidInput, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DwStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DwStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            DwStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(DwStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn opt_text<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        Ok(None)
    } else {
        text(p, what).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail(DwStatus::NullArgument, format!("{what} is null")))
}

unsafe fn give_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail(DwStatus::NullArgument, "out is null".into()));
    }
    let c = CString::new(s).map_err(|_| invalid("result contains a nul byte"))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn check_out<T>(out: *mut T) -> Result<(), Fail> {
    if out.is_null() {
        Err(Fail(DwStatus::NullArgument, "out is null".into()))
    } else {
        Ok(())
    }
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn dw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned through an `out` parameter. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn dw_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Static version string.
#[no_mangle]
pub extern "C" fn dw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Opens (creating if needed) the profile store at `root`.
///
/// # Safety
/// `root` must be a valid C string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dw_profile_store_open(root: *const c_char, out: *mut *mut DwProfileStore) -> DwStatus {
    guard(|| {
        check_out(out)?;
        let root = PathBuf::from(text(root, "root")?);
        let store = ProfileStore::open(&root, Arc::new(SystemClock))?;
        *out = Box::into_raw(Box::new(DwProfileStore(store)));
        Ok(())
    })
}

/// # Safety
/// `store` must come from [`dw_profile_store_open`] or be null.
#[no_mangle]
pub unsafe extern "C" fn dw_profile_store_close(store: *mut DwProfileStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Enrolls a person from every image in `chips_dir`. `email` and `contact`
/// may be null. Writes the new person id to `out_person_id`.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dw_profile_add_person(
    store: *mut DwProfileStore,
    name: *const c_char,
    email: *const c_char,
    contact: *const c_char,
    chips_dir: *const c_char,
    out_person_id: *mut *mut c_char,
) -> DwStatus {
    guard(|| {
        let store = handle(store, "store")?;
        check_out(out_person_id)?;
        let demo = Demographics {
            name: text(name, "name")?.to_string(),
            email: opt_text(email, "email")?.unwrap_or_default().to_string(),
            contact: opt_text(contact, "contact")?.unwrap_or_default().to_string(),
        };
        let chips = Chip::load_dir(&PathBuf::from(text(chips_dir, "chips_dir")?))?;
        let rec = store.0.add_person(&demo, &chips)?;
        give_string(out_person_id, rec.person_id)
    })
}

/// Deletes by person id or name.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dw_profile_delete_person(store: *mut DwProfileStore, person: *const c_char) -> DwStatus {
    guard(|| {
        let store = handle(store, "store")?;
        let id = store.0.resolve(text(person, "person")?)?;
        store.0.delete_person(&id)?;
        Ok(())
    })
}

/// Number of enrolled persons.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dw_profile_count(store: *mut DwProfileStore, out: *mut usize) -> DwStatus {
    guard(|| {
        let store = handle(store, "store")?;
        check_out(out)?;
        *out = store.0.persons()?.len();
        Ok(())
    })
}

/// One line per person.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dw_profile_summary(store: *mut DwProfileStore, out: *mut *mut c_char) -> DwStatus {
    guard(|| {
        let store = handle(store, "store")?;
        give_string(out, store.0.readout_summary()?)
    })
}

/// Loads an engine config file and assembles the engine.
///
/// # Safety
/// `config_path` must be a valid C string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dw_engine_open(config_path: *const c_char, out: *mut *mut DwEngine) -> DwStatus {
    guard(|| {
        check_out(out)?;
        let cfg = EngineConfig::load(&PathBuf::from(text(config_path, "config_path")?))?;
        let rt = assemble(&cfg, Arc::new(SystemClock), None)?;
        *out = Box::into_raw(Box::new(DwEngine { cfg, rt }));
        Ok(())
    })
}

/// Processes every frame currently in the camera directories and writes
/// per-camera counts as a JSON object to `out_json`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dw_engine_process_pending(engine: *mut DwEngine, out_json: *mut *mut c_char) -> DwStatus {
    guard(|| {
        let e = handle(engine, "engine")?;
        check_out(out_json)?;
        let stats = run_cameras(
            e.rt.engine.clone(),
            &e.cfg.cameras,
            e.cfg.change,
            Arc::new(AtomicBool::new(false)),
            None,
        )?;
        let map: serde_json::Map<String, serde_json::Value> = stats
            .into_iter()
            .map(|(cam, s)| {
                let v = serde_json::json!({
                    "frames": s.frames,
                    "active_frames": s.active_frames,
                    "skipped_frames": s.skipped_frames,
                    "events": s.events,
                    "source_errors": s.source_errors,
                });
                (cam, v)
            })
            .collect();
        give_string(out_json, serde_json::Value::Object(map).to_string())
    })
}

/// Drains pending notifications and frees the engine.
///
/// # Safety
/// `engine` must come from [`dw_engine_open`] or be null.
#[no_mangle]
pub unsafe extern "C" fn dw_engine_close(engine: *mut DwEngine) {
    if !engine.is_null() {
        let e = Box::from_raw(engine);
        let _ = catch_unwind(AssertUnwindSafe(|| e.rt.shutdown()));
    }
}

/// Event-log summary as JSON. `since`/`until` are RFC 3339 or null.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dw_history_json(
    log_path: *const c_char,
    since: *const c_char,
    until: *const c_char,
    top: usize,
    out: *mut *mut c_char,
) -> DwStatus {
    guard(|| {
        let log = PathBuf::from(text(log_path, "log_path")?);
        let parse = |s: Option<&str>| -> Result<_, Fail> {
            s.map(|s| {
                chrono::DateTime::parse_from_rfc3339(s)
                    .map(|t| t.with_timezone(&chrono::Utc))
                    .map_err(|e| invalid(format!("bad time {s:?}: {e}")))
            })
            .transpose()
        };
        let range = TimeRange {
            since: parse(opt_text(since, "since")?)?,
            until: parse(opt_text(until, "until")?)?,
        };
        let summary = summarize_history(&log, &range, top)?;
        give_string(out, serde_json::to_string(&summary).map_err(Error::from)?)
    })
}

/// Renders a scene-facts JSON object as a one-sentence description.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dw_describe(facts_json: *const c_char, out: *mut *mut c_char) -> DwStatus {
    guard(|| {
        let facts: SceneFacts = serde_json::from_str(text(facts_json, "facts_json")?)
            .map_err(|e| invalid(format!("bad facts: {e}")))?;
        give_string(out, render(&facts))
    })
}

/// Uniform LBP histogram of a row-major 8-bit grayscale chip. `out` must
/// hold [`DW_HISTOGRAM_LEN`] values.
///
/// # Safety
/// `pixels` must point to `width * height` bytes and `out` to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dw_lbp_histogram(
    pixels: *const u8,
    width: u32,
    height: u32,
    out: *mut f64,
    out_len: usize,
) -> DwStatus {
    guard(|| {
        if pixels.is_null() || out.is_null() {
            return Err(Fail(DwStatus::NullArgument, "pixels or out is null".into()));
        }
        if out_len < HISTOGRAM_LEN {
            return Err(invalid(format!("out_len {out_len} < {HISTOGRAM_LEN}")));
        }
        let n = width as usize * height as usize;
        let raw = std::slice::from_raw_parts(pixels, n).to_vec();
        let chip = GrayImage::from_raw(width, height, raw).ok_or_else(|| invalid("bad dimensions"))?;
        let h = lbp_histogram(&chip)?;
        std::slice::from_raw_parts_mut(out, HISTOGRAM_LEN).copy_from_slice(h.values());
        Ok(())
    })
}

/// Chi-square distance between two histograms of length `len`.
///
/// # Safety
/// `a` and `b` must point to `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dw_chi_square(a: *const f64, b: *const f64, len: usize, out: *mut f64) -> DwStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return Err(Fail(DwStatus::NullArgument, "null argument".into()));
        }
        *out = chi_square(std::slice::from_raw_parts(a, len), std::slice::from_raw_parts(b, len))?;
        Ok(())
    })
}
