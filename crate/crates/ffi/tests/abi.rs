use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use doorwatch_ffi::*;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn c(s: impl AsRef<str>) -> CString {
    CString::new(s.as_ref()).unwrap()
}

unsafe fn take(p: *mut c_char) -> String {
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    dw_string_free(p);
    s
}

fn last_error() -> String {
    let p = dw_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn profile_store_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let root = c(dir.path().to_str().unwrap());
    let chips = c(fixtures().join("chips/genuine/alice").to_str().unwrap());
    unsafe {
        let mut store = ptr::null_mut();
        assert_eq!(dw_profile_store_open(root.as_ptr(), &mut store), DwStatus::Ok);
        assert!(dw_last_error().is_null());
        let mut id = ptr::null_mut();
        let name = c("Alice");
        assert_eq!(
            dw_profile_add_person(store, name.as_ptr(), ptr::null(), ptr::null(), chips.as_ptr(), &mut id),
            DwStatus::Ok
        );
        let id = take(id);
        assert!(!id.is_empty());

        let mut dup = ptr::null_mut();
        assert_eq!(
            dw_profile_add_person(store, name.as_ptr(), ptr::null(), ptr::null(), chips.as_ptr(), &mut dup),
            DwStatus::Conflict
        );
        assert!(last_error().contains("Alice"), "{}", last_error());

        let blurred = c(fixtures().join("chips/blurred/bob").to_str().unwrap());
        let bob = c("Bob");
        assert_eq!(
            dw_profile_add_person(store, bob.as_ptr(), ptr::null(), ptr::null(), blurred.as_ptr(), &mut dup),
            DwStatus::Quality
        );

        let mut n = 0usize;
        assert_eq!(dw_profile_count(store, &mut n), DwStatus::Ok);
        assert_eq!(n, 1);
        let mut summary = ptr::null_mut();
        assert_eq!(dw_profile_summary(store, &mut summary), DwStatus::Ok);
        assert!(take(summary).starts_with("Alice: 10 templates"));

        let nobody = c("nobody");
        assert_eq!(dw_profile_delete_person(store, nobody.as_ptr()), DwStatus::NotFound);
        let idc = c(&id);
        assert_eq!(dw_profile_delete_person(store, idc.as_ptr()), DwStatus::Ok);
        assert_eq!(dw_profile_count(store, &mut n), DwStatus::Ok);
        assert_eq!(n, 0);
        dw_profile_store_close(store);
        dw_profile_store_close(ptr::null_mut());
    }
}

#[test]
fn null_arguments_are_rejected() {
    unsafe {
        assert_eq!(dw_profile_store_open(ptr::null(), ptr::null_mut()), DwStatus::NullArgument);
        let mut out = ptr::null_mut();
        assert_eq!(dw_profile_store_open(ptr::null(), &mut out), DwStatus::NullArgument);
        assert!(last_error().contains("root"));
        assert_eq!(dw_profile_count(ptr::null_mut(), ptr::null_mut()), DwStatus::NullArgument);
        let mut s = ptr::null_mut();
        assert_eq!(dw_describe(ptr::null(), &mut s), DwStatus::NullArgument);
        dw_string_free(ptr::null_mut());
    }
}

#[test]
fn describe_renders_facts() {
    let facts = c(r#"{"identity": "John", "location_label": "entrance", "has_gun": false,
        "has_phone": true, "has_mask": false, "has_eyeglass": null, "has_beard": null,
        "has_mustache": null, "is_bald": null, "hair_color": null, "person_present_without_face": false}"#);
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(dw_describe(facts.as_ptr(), &mut out), DwStatus::Ok);
        assert_eq!(take(out), "John at the entrance talking over the phone");
        let bad = c("{");
        assert_eq!(dw_describe(bad.as_ptr(), &mut out), DwStatus::InvalidInput);
    }
}

#[test]
fn histogram_and_distance() {
    let pixels: Vec<u8> = (0..64u32 * 64).map(|i| ((i * 37) % 251) as u8).collect();
    let mut a = vec![0.0f64; DW_HISTOGRAM_LEN];
    let mut b = vec![0.0f64; DW_HISTOGRAM_LEN];
    unsafe {
        assert_eq!(dw_lbp_histogram(pixels.as_ptr(), 64, 64, a.as_mut_ptr(), a.len()), DwStatus::Ok);
        let flat = vec![9u8; 64 * 64];
        assert_eq!(dw_lbp_histogram(flat.as_ptr(), 64, 64, b.as_mut_ptr(), b.len()), DwStatus::Ok);
        assert_eq!(dw_lbp_histogram(flat.as_ptr(), 64, 64, b.as_mut_ptr(), 10), DwStatus::InvalidInput);
        let mut d = -1.0;
        assert_eq!(dw_chi_square(a.as_ptr(), a.as_ptr(), a.len(), &mut d), DwStatus::Ok);
        assert_eq!(d, 0.0);
        assert_eq!(dw_chi_square(a.as_ptr(), b.as_ptr(), a.len(), &mut d), DwStatus::Ok);
        assert!(d > 0.0);
    }
    let cell: f64 = a[..59].iter().sum();
    assert!((cell - 1.0).abs() < 1e-12);
}

#[test]
fn engine_processes_fixture_cameras() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixtures();
    let w = dir.path();
    let config = serde_json::json!({
        "cameras": [
            {"camera_id": "cam-driveway", "location_label": "driveway", "source": f.join("cameras/driveway")}
        ],
        "backend": {"kind": "stub", "annotations": f.join("annotations.json")},
        "recognition": {"mode": "lbp", "threshold": 4.9},
        "attributes": {"model": f.join("attributes/model.json")},
        "storage": {"profile_root": w.join("profiles"), "event_log": w.join("events.jsonl")}
    });
    let path = w.join("engine.json");
    std::fs::write(&path, config.to_string()).unwrap();
    let path = c(path.to_str().unwrap());
    unsafe {
        let mut engine = ptr::null_mut();
        assert_eq!(dw_engine_open(path.as_ptr(), &mut engine), DwStatus::Ok, "{}", last_error());
        let mut stats = ptr::null_mut();
        assert_eq!(dw_engine_process_pending(engine, &mut stats), DwStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(stats)).unwrap();
        assert_eq!(v["cam-driveway"]["frames"], 10);
        assert_eq!(v["cam-driveway"]["events"], 1);
        dw_engine_close(engine);

        let log = c(w.join("events.jsonl").to_str().unwrap());
        let mut out = ptr::null_mut();
        assert_eq!(dw_history_json(log.as_ptr(), ptr::null(), ptr::null(), 3, &mut out), DwStatus::Ok);
        let h: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(h["total"], 1);
        assert_eq!(h["recent"][0], "A person at the driveway");
        let bad = c("last week");
        assert_eq!(dw_history_json(log.as_ptr(), bad.as_ptr(), ptr::null(), 3, &mut out), DwStatus::InvalidInput);

        let missing = c(w.join("nope.json").to_str().unwrap());
        assert_eq!(dw_engine_open(missing.as_ptr(), &mut engine), DwStatus::InvalidInput);
    }
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(dw_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
