//! Per-frame pipeline: change gate, person and face detection, identification,
//! face-part attributes, description, event log and notification hand-off.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use chrono::{DateTime, Utc};
use image::{DynamicImage, GrayImage};
use serde::{Deserialize, Serialize};

use crate::attributes::{
    build_facts, hair_color, AttributeClass, AttributeClassifier, HairPalette, Region, SceneFacts,
};
use crate::backend::{BackendClient, BoundingBox, FaceSearch, Landmarks68, WireImage};
use crate::clock::Clock;
use crate::describe::{describe, Refiner};
use crate::error::{Error, Result};
use crate::faceparts::{crop_face_patches, PatchKind};
use crate::ingest::{CameraConfig, ChangeGate, ChangeParams, DirectorySource, Frame, FrameSource};
use crate::raster;
use crate::recognize::{identify, identify_chip, Gallery, MatchResult, Probe, RecognitionMode};

/// One persisted detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreatEvent {
    pub event_id: String,
    pub timestamp: DateTime<Utc>,
    pub camera_id: String,
    pub location_label: String,
    pub identity: String,
    pub classes: Vec<AttributeClass>,
    pub description: String,
    /// Scene image path, relative to the event log's directory when possible.
    pub image_ref: String,
    pub notified: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DebouncePolicy {
    #[serde(default = "default_cooldown")]
    pub cooldown_seconds: u64,
}

fn default_cooldown() -> u64 {
    60
}

impl Default for DebouncePolicy {
    fn default() -> Self {
        DebouncePolicy {
            cooldown_seconds: default_cooldown(),
        }
    }
}

/// True unless the same key was notified less than `cooldown_seconds` ago.
pub fn should_notify(last_notified: Option<DateTime<Utc>>, now: DateTime<Utc>, policy: &DebouncePolicy) -> bool {
    match last_notified {
        None => true,
        Some(t) => (now - t) >= chrono::Duration::seconds(policy.cooldown_seconds as i64),
    }
}

/// Last notification time per (camera, identity).
#[derive(Debug, Default)]
pub struct Debouncer {
    policy: DebouncePolicy,
    last: HashMap<(String, String), DateTime<Utc>>,
}

impl Debouncer {
    pub fn new(policy: DebouncePolicy) -> Self {
        Debouncer {
            policy,
            last: HashMap::new(),
        }
    }

    /// Decides for `event` at `now` and records the notification when allowed.
    pub fn check_and_record(&mut self, event: &ThreatEvent, now: DateTime<Utc>) -> bool {
        let key = (event.camera_id.clone(), event.identity.clone());
        let ok = should_notify(self.last.get(&key).copied(), now, &self.policy);
        if ok {
            self.last.insert(key, now);
        }
        ok
    }
}

/// Receives events that passed the notification filter and debounce.
pub trait EventSink: Send + Sync {
    fn submit(&self, event: &ThreatEvent);
}

/// Append-only JSONL event log plus the scene-image directory.
pub struct EventLog {
    path: PathBuf,
    image_dir: PathBuf,
    file: Mutex<File>,
}

impl EventLog {
    pub fn open(path: &Path, image_dir: &Path) -> Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::storage(parent, e))?;
        }
        fs::create_dir_all(image_dir).map_err(|e| Error::storage(image_dir, e))?;
        drop_torn_tail(path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::storage(path, e))?;
        Ok(EventLog {
            path: path.to_path_buf(),
            image_dir: image_dir.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, event: &ThreatEvent) -> Result<()> {
        let mut line = serde_json::to_string(event)?;
        line.push('\n');
        let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
        f.write_all(line.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| Error::storage(&self.path, e))
    }

    pub fn flush(&self) -> Result<()> {
        let f = self.file.lock().unwrap_or_else(|p| p.into_inner());
        f.sync_data().map_err(|e| Error::storage(&self.path, e))
    }

    /// Writes the scene PNG and returns its reference string.
    pub fn save_image(&self, name: &str, img: &DynamicImage) -> Result<String> {
        let path = self.image_dir.join(name);
        crate::storage::write_atomic(&path, &raster::encode_png(img)?)?;
        Ok(image_ref_for(&self.path, &path))
    }
}

/// Cuts a partial last line left by a crash mid-append.
fn drop_torn_tail(path: &Path) -> Result<()> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(Error::storage(path, e)),
    };
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    log::warn!("dropping {} bytes of torn tail from {}", bytes.len() - keep, path.display());
    let f = OpenOptions::new().write(true).open(path).map_err(|e| Error::storage(path, e))?;
    f.set_len(keep as u64).map_err(|e| Error::storage(path, e))
}

fn log_dir(log_path: &Path) -> &Path {
    log_path.parent().unwrap_or(Path::new(""))
}

fn image_ref_for(log_path: &Path, image: &Path) -> String {
    match image.strip_prefix(log_dir(log_path)) {
        Ok(rel) if !log_dir(log_path).as_os_str().is_empty() => rel.to_string_lossy().replace('\\', "/"),
        _ => image.to_string_lossy().to_string(),
    }
}

/// Absolute location of an event's `image_ref`.
pub fn resolve_image_ref(log_path: &Path, image_ref: &str) -> PathBuf {
    let p = Path::new(image_ref);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        log_dir(log_path).join(p)
    }
}

fn safe_name(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// All events in the log. A missing log reads as empty; a torn final line
/// (crash mid-append) is ignored.
pub fn read_events(log_path: &Path) -> Result<Vec<ThreatEvent>> {
    let file = match File::open(log_path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::storage(log_path, e)),
    };
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::storage(log_path, e))?;
    let mut out = Vec::new();
    let last = lines.len().saturating_sub(1);
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(ev) => out.push(ev),
            Err(e) if i == last => log::warn!("ignoring torn last line of {}: {e}", log_path.display()),
            Err(e) => {
                return Err(Error::storage(
                    log_path,
                    std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)),
                ))
            }
        }
    }
    Ok(out)
}

/// Half-open time window `[since, until)`; open ends are unbounded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TimeRange {
    pub since: Option<DateTime<Utc>>,
    pub until: Option<DateTime<Utc>>,
}

impl TimeRange {
    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.since.is_none_or(|s| t >= s) && self.until.is_none_or(|u| t < u)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Count {
    pub name: String,
    pub count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistorySummary {
    pub total: u64,
    pub by_identity: Vec<Count>,
    pub by_camera: Vec<Count>,
    pub by_class: Vec<Count>,
    /// Most recent descriptions first.
    pub recent: Vec<String>,
}

fn ranked(map: BTreeMap<String, u64>) -> Vec<Count> {
    let mut v: Vec<Count> = map.into_iter().map(|(name, count)| Count { name, count }).collect();
    v.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.name.cmp(&b.name)));
    v
}

/// Counts by identity, camera and class plus the `top` most recent descriptions.
pub fn summarize_events(events: &[ThreatEvent], range: &TimeRange, top: usize) -> HistorySummary {
    let mut by_identity = BTreeMap::new();
    let mut by_camera = BTreeMap::new();
    let mut by_class = BTreeMap::new();
    let mut picked: Vec<(usize, &ThreatEvent)> = Vec::new();
    for (i, e) in events.iter().enumerate().filter(|(_, e)| range.contains(e.timestamp)) {
        *by_identity.entry(e.identity.clone()).or_insert(0) += 1;
        *by_camera.entry(e.camera_id.clone()).or_insert(0) += 1;
        for c in &e.classes {
            *by_class.entry(c.name().to_string()).or_insert(0) += 1;
        }
        picked.push((i, e));
    }
    picked.sort_by(|a, b| b.1.timestamp.cmp(&a.1.timestamp).then(b.0.cmp(&a.0)));
    HistorySummary {
        total: picked.len() as u64,
        by_identity: ranked(by_identity),
        by_camera: ranked(by_camera),
        by_class: ranked(by_class),
        recent: picked.iter().take(top).map(|(_, e)| e.description.clone()).collect(),
    }
}

pub fn summarize_history(log_path: &Path, range: &TimeRange, top: usize) -> Result<HistorySummary> {
    Ok(summarize_events(&read_events(log_path)?, range, top))
}

impl std::fmt::Display for HistorySummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.total == 0 {
            return write!(f, "no events");
        }
        let join = |v: &[Count]| {
            v.iter()
                .map(|c| format!("{} {}", c.name, c.count))
                .collect::<Vec<_>>()
                .join(", ")
        };
        writeln!(f, "events: {}", self.total)?;
        writeln!(f, "by identity: {}", join(&self.by_identity))?;
        writeln!(f, "by camera: {}", join(&self.by_camera))?;
        writeln!(f, "by class: {}", join(&self.by_class))?;
        write!(f, "recent:")?;
        for d in &self.recent {
            write!(f, "\n  {d}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetentionPolicy {
    #[serde(default)]
    pub max_age_days: Option<u64>,
    #[serde(default)]
    pub max_events: Option<usize>,
}

/// Drops events older than the age limit and all but the newest `max_events`,
/// rewriting the log atomically and deleting images no longer referenced.
/// Returns the number of events removed.
pub fn prune(log_path: &Path, policy: &RetentionPolicy, now: DateTime<Utc>) -> Result<usize> {
    if policy.max_age_days.is_none() && policy.max_events.is_none() {
        return Ok(0);
    }
    let events = read_events(log_path)?;
    let mut keep: Vec<&ThreatEvent> = events
        .iter()
        .filter(|e| {
            policy
                .max_age_days
                .is_none_or(|d| now - e.timestamp <= chrono::Duration::days(d as i64))
        })
        .collect();
    if let Some(max) = policy.max_events {
        let drop = keep.len().saturating_sub(max);
        keep.drain(..drop);
    }
    let removed = events.len() - keep.len();
    if removed == 0 {
        return Ok(0);
    }
    let mut body = String::new();
    for e in &keep {
        body.push_str(&serde_json::to_string(e)?);
        body.push('\n');
    }
    crate::storage::write_atomic(log_path, body.as_bytes())?;
    let live: std::collections::HashSet<&str> = keep.iter().map(|e| e.image_ref.as_str()).collect();
    for e in &events {
        if !live.contains(e.image_ref.as_str()) {
            let _ = fs::remove_file(resolve_image_ref(log_path, &e.image_ref));
        }
    }
    Ok(removed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSettings {
    pub mode: RecognitionMode,
    pub threshold: f64,
    pub debounce: DebouncePolicy,
    /// Only events carrying one of these classes are notified; `None` notifies all.
    pub notify_classes: Option<Vec<AttributeClass>>,
    pub hair_palette: HairPalette,
    pub face_search: FaceSearch,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            mode: RecognitionMode::Lbp,
            threshold: 1.0,
            debounce: DebouncePolicy::default(),
            notify_classes: None,
            hair_palette: HairPalette::default(),
            face_search: FaceSearch::default(),
        }
    }
}

/// State shared by every camera worker.
pub struct Engine {
    backend: Arc<BackendClient>,
    gallery: RwLock<Arc<Gallery>>,
    classifier: Option<Arc<dyn AttributeClassifier>>,
    refiner: Arc<dyn Refiner>,
    log: EventLog,
    clock: Arc<dyn Clock>,
    settings: PipelineSettings,
    debouncer: Mutex<Debouncer>,
    sink: RwLock<Option<Arc<dyn EventSink>>>,
    backend_failures: AtomicU64,
}

/// What happened to one frame.
#[derive(Debug, Clone, Default)]
pub struct FrameOutcome {
    pub active: bool,
    /// Backend failed; frame skipped.
    pub skipped: bool,
    pub events: Vec<ThreatEvent>,
}

struct PersonFindings {
    facts: SceneFacts,
}

impl Engine {
    pub fn new(
        backend: Arc<BackendClient>,
        gallery: Gallery,
        classifier: Option<Arc<dyn AttributeClassifier>>,
        refiner: Arc<dyn Refiner>,
        log: EventLog,
        clock: Arc<dyn Clock>,
        settings: PipelineSettings,
    ) -> Result<Arc<Self>> {
        if settings.threshold.is_nan() || settings.threshold <= 0.0 {
            return Err(Error::Config("recognition.threshold must be > 0".into()));
        }
        settings.hair_palette.validate()?;
        Ok(Arc::new(Engine {
            backend,
            gallery: RwLock::new(Arc::new(gallery)),
            classifier,
            refiner,
            log,
            clock,
            debouncer: Mutex::new(Debouncer::new(settings.debounce)),
            settings,
            sink: RwLock::new(None),
            backend_failures: AtomicU64::new(0),
        }))
    }

    pub fn set_sink(&self, sink: Option<Arc<dyn EventSink>>) {
        *self.sink.write().unwrap_or_else(|p| p.into_inner()) = sink;
    }

    /// Swaps in a new recognition snapshot.
    pub fn set_gallery(&self, gallery: Gallery) {
        *self.gallery.write().unwrap_or_else(|p| p.into_inner()) = Arc::new(gallery);
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn backend_failures(&self) -> u64 {
        self.backend_failures.load(Ordering::Relaxed)
    }

    fn gallery(&self) -> Arc<Gallery> {
        self.gallery.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    /// Runs detection through description for a frame that passed the gate.
    pub fn process_active(&self, frame: &Frame, location_label: &str) -> Result<FrameOutcome> {
        let findings = match self.analyze(frame, location_label) {
            Ok(f) => f,
            Err(Error::BackendUnavailable(msg)) => {
                log::error!("camera {} frame {}: backend failure, frame skipped: {msg}", frame.camera_id, frame.seq);
                self.backend_failures.fetch_add(1, Ordering::Relaxed);
                return Ok(FrameOutcome {
                    active: true,
                    skipped: true,
                    events: Vec::new(),
                });
            }
            Err(e) => return Err(e),
        };
        let mut outcome = FrameOutcome {
            active: true,
            ..Default::default()
        };
        if findings.is_empty() {
            return Ok(outcome);
        }
        let image_ref = self.log.save_image(
            &format!("{}_{:06}.png", safe_name(&frame.camera_id), frame.seq),
            &DynamicImage::ImageRgb8(frame.rgb().clone()),
        )?;
        for p in findings {
            let seq = describe(&p.facts, self.refiner.as_ref())?;
            let now = self.clock.now();
            let mut event = ThreatEvent {
                event_id: uuid::Uuid::new_v4().to_string(),
                timestamp: now,
                camera_id: frame.camera_id.clone(),
                location_label: location_label.to_string(),
                identity: p.facts.identity.clone(),
                classes: p.facts.classes(),
                description: seq.rendered,
                image_ref: image_ref.clone(),
                notified: false,
            };
            let wanted = match &self.settings.notify_classes {
                None => true,
                Some(filter) => event.classes.iter().any(|c| filter.contains(c)),
            };
            let sink = self.sink.read().unwrap_or_else(|p| p.into_inner()).clone();
            if wanted && sink.is_some() {
                event.notified = self
                    .debouncer
                    .lock()
                    .unwrap_or_else(|p| p.into_inner())
                    .check_and_record(&event, now);
            }
            self.log.append(&event)?;
            if event.notified {
                if let Some(s) = sink {
                    s.submit(&event);
                }
            }
            outcome.events.push(event);
        }
        Ok(outcome)
    }

    fn analyze(&self, frame: &Frame, location: &str) -> Result<Vec<PersonFindings>> {
        let wire = WireImage::from_frame(frame)?;
        let persons = self.backend.detect_persons(&wire)?;
        let mut pairs: Vec<(BoundingBox, Option<(BoundingBox, Landmarks68)>)> = Vec::new();
        if persons.is_empty() {
            if self.settings.face_search == FaceSearch::WithinPerson {
                for face in self.backend.detect_faces(&wire, None)? {
                    pairs.push((face.0, Some(face)));
                }
            }
        } else {
            for person in persons {
                let face = self.backend.detect_faces(&wire, Some(&person))?.into_iter().next();
                pairs.push((person, face));
            }
        }
        let gallery = self.gallery();
        pairs
            .into_iter()
            .map(|(person, face)| self.analyze_person(frame, &gallery, &person, face.as_ref(), location))
            .collect()
    }

    fn identify_face(&self, frame: &Frame, gallery: &Gallery, face: &BoundingBox) -> Result<MatchResult> {
        let rect = face.to_rect();
        match self.settings.mode {
            RecognitionMode::Lbp => identify_chip(&raster::crop(frame.gray(), rect), gallery, self.settings.threshold),
            RecognitionMode::Embedding => {
                let chip = DynamicImage::ImageRgb8(raster::crop(frame.rgb(), rect));
                let emb = self.backend.embed_face(&chip)?;
                identify(Probe::Embedding(&emb), gallery, self.settings.threshold)
            }
        }
    }

    fn analyze_person(
        &self,
        frame: &Frame,
        gallery: &Gallery,
        person: &BoundingBox,
        face: Option<&(BoundingBox, Landmarks68)>,
        location: &str,
    ) -> Result<PersonFindings> {
        let identity = match face {
            Some((fb, _)) => Some(self.identify_face(frame, gallery, fb)?),
            None => None,
        };
        let mut labels: Vec<(Region, Option<AttributeClass>)> = Vec::new();
        let mut hair = None;
        if let Some(classifier) = &self.classifier {
            if let Some((fb, lm)) = face {
                match crop_face_patches(frame.gray(), fb, lm) {
                    Ok(patches) => {
                        for kind in PatchKind::ALL {
                            let Some(patch) = patches.get(kind) else { continue };
                            match classifier.classify(kind.into(), patch) {
                                Ok(Some(c)) => {
                                    if kind == PatchKind::Head && c.label == Some(AttributeClass::Hair) {
                                        hair = hair_color(patch, &self.settings.hair_palette);
                                    }
                                    labels.push((kind.into(), c.label));
                                }
                                Ok(None) => {}
                                Err(e) => log::warn!("{} patch left unknown: {e}", kind.short_name()),
                            }
                        }
                    }
                    Err(e) => log::warn!("face parts not cropped: {e}"),
                }
            }
            let crop: GrayImage = raster::crop(frame.gray(), person.to_rect());
            match classifier.person_labels(&crop) {
                Ok(Some(found)) if found.is_empty() => labels.push((Region::Person, None)),
                Ok(Some(found)) => labels.extend(found.into_iter().map(|c| (Region::Person, Some(c)))),
                Ok(None) => {}
                Err(e) => log::warn!("person crop left unknown: {e}"),
            }
        }
        Ok(PersonFindings {
            facts: build_facts(identity.as_ref(), &labels, hair, location, face.is_none()),
        })
    }
}

/// One camera's gate plus a handle on the shared engine.
pub struct CameraWorker {
    engine: Arc<Engine>,
    camera: CameraConfig,
    gate: ChangeGate,
}

impl CameraWorker {
    pub fn new(engine: Arc<Engine>, camera: CameraConfig, change: ChangeParams) -> Result<Self> {
        change.validate()?;
        Ok(CameraWorker {
            engine,
            camera,
            gate: ChangeGate::new(change),
        })
    }

    pub fn camera(&self) -> &CameraConfig {
        &self.camera
    }

    /// Events for this frame; none when the gate rejects it.
    pub fn process_frame(&mut self, frame: &Frame) -> Result<Vec<ThreatEvent>> {
        Ok(self.process_frame_outcome(frame)?.events)
    }

    pub fn process_frame_outcome(&mut self, frame: &Frame) -> Result<FrameOutcome> {
        if frame.camera_id != self.camera.camera_id {
            return Err(Error::InvalidInput(format!(
                "frame from {} given to worker for {}",
                frame.camera_id, self.camera.camera_id
            )));
        }
        if !self.gate.admit(frame) {
            return Ok(FrameOutcome::default());
        }
        self.engine.process_active(frame, &self.camera.location_label)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReplayStats {
    pub frames: u64,
    pub active_frames: u64,
    pub skipped_frames: u64,
    pub events: u64,
    pub source_errors: u64,
}

/// Feeds every frame of `source` through `worker`, stopping early when `stop` is set.
pub fn replay_source(worker: &mut CameraWorker, source: &mut dyn FrameSource, stop: Option<&AtomicBool>) -> Result<ReplayStats> {
    let mut stats = ReplayStats::default();
    while !stop.is_some_and(|s| s.load(Ordering::SeqCst)) {
        let Some(frame) = source.next_frame()? else { break };
        accumulate(&mut stats, &worker.process_frame_outcome(&frame)?);
    }
    stats.source_errors = source.errors().len() as u64;
    Ok(stats)
}

fn accumulate(stats: &mut ReplayStats, out: &FrameOutcome) {
    stats.frames += 1;
    stats.active_frames += u64::from(out.active);
    stats.skipped_frames += u64::from(out.skipped);
    stats.events += out.events.len() as u64;
}

/// Runs one worker thread per camera over directory sources. With `follow`,
/// exhausted directories are polled at that interval until `stop` is set;
/// otherwise each worker ends when its directory is drained.
pub fn run_cameras(
    engine: Arc<Engine>,
    cameras: &[CameraConfig],
    change: ChangeParams,
    stop: Arc<AtomicBool>,
    follow: Option<Duration>,
) -> Result<Vec<(String, ReplayStats)>> {
    let mut handles = Vec::new();
    for cam in cameras {
        let mut source = DirectorySource::open(cam, engine.clock.clone())?;
        let mut worker = CameraWorker::new(engine.clone(), cam.clone(), change)?;
        let stop = stop.clone();
        let name = cam.camera_id.clone();
        let handle = std::thread::Builder::new()
            .name(format!("camera-{name}"))
            .spawn(move || -> Result<ReplayStats> {
                let mut stats = ReplayStats::default();
                loop {
                    let part = replay_source(&mut worker, &mut source, Some(&stop))?;
                    stats.frames += part.frames;
                    stats.active_frames += part.active_frames;
                    stats.skipped_frames += part.skipped_frames;
                    stats.events += part.events;
                    stats.source_errors = part.source_errors;
                    let Some(interval) = follow else { break };
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    std::thread::sleep(interval);
                    source.rescan()?;
                }
                Ok(stats)
            })?;
        handles.push((name, handle));
    }
    let mut out = Vec::new();
    let mut first_err = None;
    for (name, h) in handles {
        match h.join() {
            Ok(Ok(stats)) => out.push((name, stats)),
            Ok(Err(e)) => {
                log::error!("camera {name} stopped: {e}");
                first_err.get_or_insert(e);
            }
            Err(_) => {
                first_err.get_or_insert(Error::InvalidInput(format!("camera {name} worker panicked")));
            }
        }
    }
    engine.log.flush()?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}
