#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::TimeZone;
use doorwatch::clock::{Clock, FixedClock};
use doorwatch::config::{assemble, EngineConfig, Runtime};
use doorwatch::ingest::DirectorySource;
use doorwatch::orchestrate::{read_events, replay_source, CameraWorker, ThreatEvent};
use doorwatch::attributes::AttributeClass;
use doorwatch::notify::{ComposeContext, Recipient};
use doorwatch::profile::{Chip, Demographics, ProfileStore};

pub const IDENTITIES: [&str; 5] = ["alice", "bob", "carol", "dave", "john"];
pub const SAMPLE_1: &str = "John at the entrance talking over the phone";
pub const SAMPLE_2: &str = "An unknown person with a gun who has beard, mustache, hair, and no-eyeglass at the back door";
pub const DRIVEWAY: &str = "A person at the driveway";

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn calibration() -> serde_json::Value {
    let text = std::fs::read_to_string(fixtures().join("calibration.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn tau() -> f64 {
    calibration()["threshold"].as_f64().unwrap()
}

pub fn fixed_clock() -> Arc<dyn Clock> {
    Arc::new(FixedClock(chrono::Utc.with_ymd_and_hms(2026, 3, 1, 12, 0, 0).unwrap()))
}

pub fn display_name(id: &str) -> String {
    let mut c = id.chars();
    c.next().unwrap().to_uppercase().chain(c).collect()
}

/// Enrolls the five fixture identities with all ten chips each.
pub fn enroll_all(root: &Path) -> ProfileStore {
    let mut store = ProfileStore::open(root, fixed_clock()).unwrap();
    for id in IDENTITIES {
        let chips = Chip::load_dir(&fixtures().join("chips/genuine").join(id)).unwrap();
        let demo = Demographics {
            name: display_name(id),
            email: format!("{id}@example.org"),
            contact: "555-0100".into(),
        };
        store.add_person(&demo, &chips).unwrap();
    }
    store
}

pub fn config_json(work: &Path, extra: &str) -> String {
    let f = fixtures();
    format!(
        r#"{{
  "cameras": [
    {{"camera_id": "cam-entrance", "location_label": "entrance", "source": "{f}/cameras/entrance"}},
    {{"camera_id": "cam-backdoor", "location_label": "back door", "source": "{f}/cameras/backdoor"}},
    {{"camera_id": "cam-driveway", "location_label": "driveway", "source": "{f}/cameras/driveway"}}
  ],
  "backend": {{"kind": "stub", "annotations": "{f}/annotations.json"}},
  "recognition": {{"mode": "lbp", "threshold": {tau}}},
  "attributes": {{"model": "{f}/attributes/model.json"}},
  "describe": {{"refiner": "trigram"}},
  {extra}
  "storage": {{"profile_root": "{w}/profiles", "event_log": "{w}/var/events.jsonl"}}
}}"#,
        f = f.display(),
        w = work.display(),
        tau = tau(),
    )
}

pub fn write_config(work: &Path, extra: &str) -> PathBuf {
    let p = work.join("engine.json");
    std::fs::write(&p, config_json(work, extra)).unwrap();
    p
}

/// Enrolls, assembles and replays every camera in config order on this thread.
pub fn replay_sequential(work: &Path, extra: &str) -> (Runtime, Vec<ThreatEvent>) {
    enroll_all(&work.join("profiles"));
    let cfg = EngineConfig::load(&write_config(work, extra)).unwrap();
    let rt = assemble(&cfg, fixed_clock(), None).unwrap();
    for cam in &cfg.cameras {
        let mut src = DirectorySource::open(cam, fixed_clock()).unwrap();
        let mut worker = CameraWorker::new(rt.engine.clone(), cam.clone(), cfg.change).unwrap();
        replay_source(&mut worker, &mut src, None).unwrap();
    }
    rt.engine.log().flush().unwrap();
    let events = read_events(&cfg.storage.event_log).unwrap();
    (rt, events)
}

/// Event log lines with the per-run fields blanked.
pub fn normalized_log(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["event_id"] = serde_json::Value::Null;
            v["timestamp"] = serde_json::Value::Null;
            v.to_string()
        })
        .collect()
}

pub fn sample2_event() -> ThreatEvent {
    ThreatEvent {
        event_id: "00000000-0000-4000-8000-000000000002".into(),
        timestamp: chrono::Utc.with_ymd_and_hms(2026, 1, 2, 3, 4, 5).unwrap(),
        camera_id: "cam-backdoor".into(),
        location_label: "back door".into(),
        identity: "Unknown".into(),
        classes: vec![
            AttributeClass::Gun,
            AttributeClass::Beard,
            AttributeClass::Mustache,
            AttributeClass::Hair,
        ],
        description: SAMPLE_2.into(),
        image_ref: "images/cam-backdoor_000000.png".into(),
        notified: true,
    }
}

/// Must stay in step with the fixture generator.
pub fn golden_context() -> ComposeContext {
    ComposeContext {
        date: chrono::Utc.with_ymd_and_hms(2026, 1, 2, 3, 4, 6).unwrap(),
        boundary_seed: 7,
        sender: "doorwatch@example.org".into(),
    }
}

pub fn golden_recipient() -> Recipient {
    Recipient {
        name: "Owner".into(),
        email: Some("owner@example.org".into()),
        phone_number: Some("+1 (555) 010-0199".into()),
        carrier_gateway_domain: Some("mms.example.net".into()),
    }
}
