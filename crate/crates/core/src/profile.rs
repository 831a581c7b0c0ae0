//! Enrolled-person store: demographics, face chips and recognition snapshots.
//!
//! Layout under the root:
//! `index.json`, `<person_id>/meta.json`, `<person_id>/chips/*.png`,
//! `snapshots/snapshot-NNNNNN.json`. Every file is replaced by
//! write-new-then-rename; directories are staged under a dot-name and renamed
//! into place. [`ProfileStore::open`] removes leftovers of interrupted updates.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use image::{DynamicImage, GrayImage};
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::error::{ChipRejection, Error, Result};
use crate::raster;
use crate::recognize::{lbp_histogram, FaceTemplate, Gallery};
use crate::storage;

pub const MIN_CHIP_SIDE: u32 = 20;
/// Laplacian-variance floor separating the bundled sharp chips from their
/// blurred copies.
pub const DEFAULT_BLUR_FLOOR: f64 = 100.0;
pub const DEFAULT_SNAPSHOTS_KEPT: usize = 3;

const INDEX: &str = "index.json";
const META: &str = "meta.json";
const CHIPS: &str = "chips";
const SNAPSHOTS: &str = "snapshots";
const STAGING_PREFIX: &str = ".staging-";
const TRASH_PREFIX: &str = ".trash-";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateEntry {
    /// File name under `chips/`.
    pub chip: String,
    /// Hex SHA-256 of the chip's PNG bytes.
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonRecord {
    pub person_id: String,
    pub name: String,
    pub email: String,
    pub contact: String,
    pub templates: Vec<TemplateEntry>,
    pub created: DateTime<Utc>,
    pub updated: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct IndexEntry {
    person_id: String,
    name: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct Index {
    version: u64,
    persons: Vec<IndexEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Snapshot {
    version: u64,
    names: BTreeMap<String, String>,
    templates: Vec<FaceTemplate>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Demographics {
    pub name: String,
    pub email: String,
    pub contact: String,
}

/// An enrollment image plus a label used in rejection messages.
#[derive(Debug, Clone)]
pub struct Chip {
    pub label: String,
    pub image: DynamicImage,
}

impl Chip {
    pub fn new(label: impl Into<String>, image: DynamicImage) -> Self {
        Chip {
            label: label.into(),
            image,
        }
    }

    /// Every image file in `dir`, in file-name order.
    pub fn load_dir(dir: &Path) -> Result<Vec<Chip>> {
        let files = raster::list_images(dir)?;
        if files.is_empty() {
            return Err(Error::InvalidInput(format!("no images in {}", dir.display())));
        }
        files
            .into_iter()
            .map(|p| {
                let label = p.file_name().unwrap().to_string_lossy().to_string();
                Ok(Chip::new(label, raster::load_image(&p)?))
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct AddViewsOutcome {
    pub record: PersonRecord,
    pub added: usize,
    pub duplicates: usize,
    pub rejected: Vec<ChipRejection>,
}

/// Simulated crash sites for consistency tests.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    BeforePersonDirRename,
    BeforeMetaRename,
    BeforeIndexRename,
    BeforeTrashRemoval,
}

/// Variance of the 4-neighbour Laplacian over interior pixels; 0 for images
/// without an interior.
pub fn laplacian_variance(gray: &GrayImage) -> f64 {
    let (w, h) = gray.dimensions();
    if w < 3 || h < 3 {
        return 0.0;
    }
    let px = |x: u32, y: u32| f64::from(gray.get_pixel(x, y)[0]);
    let (mut sum, mut sq, mut n) = (0.0, 0.0, 0.0);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let l = 4.0 * px(x, y) - px(x - 1, y) - px(x + 1, y) - px(x, y - 1) - px(x, y + 1);
            sum += l;
            sq += l * l;
            n += 1.0;
        }
    }
    let mean = sum / n;
    sq / n - mean * mean
}

/// Reasons a chip is unfit for enrollment; empty means it passes.
pub fn quality_check(chip: &DynamicImage, blur_floor: f64) -> Vec<String> {
    let mut reasons = Vec::new();
    if chip.width().min(chip.height()) < MIN_CHIP_SIDE {
        reasons.push("below 20x20".to_string());
    }
    if laplacian_variance(&raster::dynamic_to_gray(chip)) < blur_floor {
        reasons.push("blurry".to_string());
    }
    reasons
}

fn slug(name: &str) -> String {
    let mut out = String::new();
    for c in name.chars().flat_map(char::to_lowercase) {
        if c.is_ascii_alphanumeric() {
            out.push(c);
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    let s = out.trim_matches('-').to_string();
    if s.is_empty() {
        "person".into()
    } else {
        s
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::storage(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn crash(path: &Path) -> Error {
    Error::storage(path, std::io::Error::new(std::io::ErrorKind::Interrupted, "simulated crash"))
}

struct Accepted {
    png: Vec<u8>,
    digest: String,
}

pub struct ProfileStore {
    root: PathBuf,
    index: Index,
    gallery: Arc<Gallery>,
    clock: Arc<dyn Clock>,
    blur_floor: f64,
    snapshots_kept: usize,
    crash_at: Option<CrashPoint>,
}

impl ProfileStore {
    /// Opens (creating if needed) and repairs the store at `root`.
    pub fn open(root: &Path, clock: Arc<dyn Clock>) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::storage(root, e))?;
        let index_path = root.join(INDEX);
        let index: Index = if index_path.exists() {
            read_json(&index_path)?
        } else {
            Index::default()
        };
        let mut store = ProfileStore {
            root: root.to_path_buf(),
            index,
            gallery: Arc::new(Gallery::new()),
            clock,
            blur_floor: DEFAULT_BLUR_FLOOR,
            snapshots_kept: DEFAULT_SNAPSHOTS_KEPT,
            crash_at: None,
        };
        store.recover()?;
        store.refresh_snapshot()?;
        Ok(store)
    }

    pub fn with_blur_floor(mut self, floor: f64) -> Self {
        self.blur_floor = floor;
        self
    }

    pub fn with_snapshots_kept(mut self, k: usize) -> Self {
        self.snapshots_kept = k.max(1);
        self
    }

    #[doc(hidden)]
    pub fn crash_before(&mut self, point: Option<CrashPoint>) {
        self.crash_at = point;
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn blur_floor(&self) -> f64 {
        self.blur_floor
    }

    fn listed(&self, id: &str) -> bool {
        self.index.persons.iter().any(|p| p.person_id == id)
    }

    fn recover(&mut self) -> Result<()> {
        let entries: Vec<fs::DirEntry> = fs::read_dir(&self.root)
            .map_err(|e| Error::storage(&self.root, e))?
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::storage(&self.root, e))?;
        for entry in entries {
            let path = entry.path();
            let name = entry.file_name().to_string_lossy().to_string();
            let is_dir = path.is_dir();
            if storage::is_tmp_name(&name) {
                remove_any(&path)?;
            } else if let Some(id) = name.strip_prefix(TRASH_PREFIX) {
                if self.listed(id) && !self.root.join(id).exists() {
                    storage::rename(&path, &self.root.join(id))?;
                } else {
                    remove_any(&path)?;
                }
            } else if name.starts_with(STAGING_PREFIX) {
                remove_any(&path)?;
            } else if is_dir && name != SNAPSHOTS && !self.listed(&name) {
                log::warn!("removing orphan profile directory {}", path.display());
                remove_any(&path)?;
            }
        }
        for p in self.index.persons.clone() {
            let dir = self.root.join(&p.person_id);
            for f in read_names(&dir)? {
                if storage::is_tmp_name(&f) {
                    remove_any(&dir.join(&f))?;
                }
            }
            let rec: PersonRecord = read_json(&dir.join(META))?;
            let referenced: BTreeSet<&str> = rec.templates.iter().map(|t| t.chip.as_str()).collect();
            let chips = dir.join(CHIPS);
            for f in read_names(&chips)? {
                if !referenced.contains(f.as_str()) {
                    remove_any(&chips.join(&f))?;
                }
            }
            for t in &rec.templates {
                if !chips.join(&t.chip).exists() {
                    return Err(Error::storage(
                        chips.join(&t.chip),
                        std::io::Error::new(std::io::ErrorKind::NotFound, "template chip missing"),
                    ));
                }
            }
        }
        let snaps = self.root.join(SNAPSHOTS);
        for f in read_names(&snaps)? {
            if storage::is_tmp_name(&f) {
                remove_any(&snaps.join(&f))?;
            }
        }
        Ok(())
    }

    pub fn persons(&self) -> Result<Vec<PersonRecord>> {
        let mut out: Vec<PersonRecord> = self
            .index
            .persons
            .iter()
            .map(|p| read_json(&self.root.join(&p.person_id).join(META)))
            .collect::<Result<_>>()?;
        out.sort_by(|a, b| a.name.to_lowercase().cmp(&b.name.to_lowercase()).then(a.name.cmp(&b.name)));
        Ok(out)
    }

    pub fn get(&self, person_id: &str) -> Result<PersonRecord> {
        if !self.listed(person_id) {
            return Err(Error::NotFound(format!("no person with id {person_id:?}")));
        }
        read_json(&self.root.join(person_id).join(META))
    }

    /// Current recognition snapshot.
    pub fn gallery(&self) -> Arc<Gallery> {
        self.gallery.clone()
    }

    /// Current snapshot with every template also embedded by `backend`.
    pub fn embedded_gallery(&self, backend: &crate::backend::BackendClient) -> Result<Gallery> {
        let mut g = Gallery::new();
        for t in self.gallery.templates() {
            let img = raster::load_image(&self.root.join(&t.source_image_ref))?;
            let mut t = t.clone();
            t.embedding = Some(backend.embed_face(&img)?);
            let name = self.gallery.name_of(&t.person_id).unwrap_or(&t.person_id).to_string();
            g.add(&name, t);
        }
        Ok(g)
    }

    fn screen(&self, chips: &[Chip], known: &BTreeSet<String>) -> Result<(Vec<Accepted>, usize, Vec<ChipRejection>)> {
        let mut accepted: Vec<Accepted> = Vec::new();
        let mut seen = known.clone();
        let mut duplicates = 0;
        let mut rejected = Vec::new();
        for chip in chips {
            let reasons = quality_check(&chip.image, self.blur_floor);
            if !reasons.is_empty() {
                rejected.push(ChipRejection {
                    chip: chip.label.clone(),
                    reasons,
                });
                continue;
            }
            let png = raster::encode_png(&chip.image)?;
            let digest = raster::digest_hex(&png);
            if !seen.insert(digest.clone()) {
                duplicates += 1;
                continue;
            }
            accepted.push(Accepted { png, digest });
        }
        Ok((accepted, duplicates, rejected))
    }

    pub fn add_person(&mut self, demo: &Demographics, chips: &[Chip]) -> Result<PersonRecord> {
        let name = demo.name.trim();
        if name.is_empty() {
            return Err(Error::InvalidInput("name must not be empty".into()));
        }
        if self.index.persons.iter().any(|p| p.name.to_lowercase() == name.to_lowercase()) {
            return Err(Error::Conflict(format!("a person named {name:?} is already enrolled")));
        }
        let (accepted, _dups, rejected) = self.screen(chips, &BTreeSet::new())?;
        if accepted.is_empty() {
            return Err(Error::Quality(rejected));
        }
        for r in &rejected {
            log::warn!("chip {} rejected: {}", r.chip, r.reasons.join(", "));
        }
        let base = slug(name);
        let mut id = base.clone();
        let mut n = 2;
        while self.listed(&id) || self.root.join(&id).exists() {
            id = format!("{base}-{n}");
            n += 1;
        }
        let now = self.clock.now();
        let staging = self.root.join(format!("{STAGING_PREFIX}{id}"));
        if staging.exists() {
            remove_any(&staging)?;
        }
        let chips_dir = staging.join(CHIPS);
        fs::create_dir_all(&chips_dir).map_err(|e| Error::storage(&chips_dir, e))?;
        let templates = write_chips(&chips_dir, 0, &accepted)?;
        let record = PersonRecord {
            person_id: id.clone(),
            name: name.to_string(),
            email: demo.email.clone(),
            contact: demo.contact.clone(),
            templates,
            created: now,
            updated: now,
        };
        storage::write_atomic(&staging.join(META), serde_json::to_string_pretty(&record)?.as_bytes())?;
        if self.crash_at == Some(CrashPoint::BeforePersonDirRename) {
            return Err(crash(&staging));
        }
        storage::rename(&staging, &self.root.join(&id))?;

        let mut index = self.index.clone();
        index.version += 1;
        index.persons.push(IndexEntry {
            person_id: id,
            name: name.to_string(),
        });
        self.commit_index(index)?;
        Ok(record)
    }

    pub fn add_views(&mut self, person_id: &str, chips: &[Chip]) -> Result<AddViewsOutcome> {
        let mut record = self.get(person_id)?;
        let known: BTreeSet<String> = record.templates.iter().map(|t| t.digest.clone()).collect();
        let (accepted, duplicates, rejected) = self.screen(chips, &known)?;
        if accepted.is_empty() {
            return Ok(AddViewsOutcome {
                record,
                added: 0,
                duplicates,
                rejected,
            });
        }
        let dir = self.root.join(person_id);
        let next = record
            .templates
            .iter()
            .filter_map(|t| t.chip.strip_prefix("chip-")?.strip_suffix(".png")?.parse::<usize>().ok())
            .max()
            .map_or(0, |m| m + 1);
        let added = accepted.len();
        record.templates.extend(write_chips(&dir.join(CHIPS), next, &accepted)?);
        record.updated = self.clock.now();
        let tmp = storage::write_tmp(&dir.join(META), serde_json::to_string_pretty(&record)?.as_bytes())?;
        if self.crash_at == Some(CrashPoint::BeforeMetaRename) {
            return Err(crash(&tmp));
        }
        storage::rename(&tmp, &dir.join(META))?;
        let mut index = self.index.clone();
        index.version += 1;
        self.commit_index(index)?;
        Ok(AddViewsOutcome {
            record,
            added,
            duplicates,
            rejected,
        })
    }

    pub fn delete_person(&mut self, person_id: &str) -> Result<()> {
        if !self.listed(person_id) {
            return Err(Error::NotFound(format!("no person with id {person_id:?}")));
        }
        let dir = self.root.join(person_id);
        let trash = self.root.join(format!("{TRASH_PREFIX}{person_id}"));
        storage::rename(&dir, &trash)?;
        let mut index = self.index.clone();
        index.version += 1;
        index.persons.retain(|p| p.person_id != person_id);
        self.commit_index(index)?;
        if self.crash_at == Some(CrashPoint::BeforeTrashRemoval) {
            return Err(crash(&trash));
        }
        remove_any(&trash)
    }

    /// Resolves a person by id or (case-insensitive) name.
    pub fn resolve(&self, id_or_name: &str) -> Result<String> {
        if self.listed(id_or_name) {
            return Ok(id_or_name.to_string());
        }
        self.index
            .persons
            .iter()
            .find(|p| p.name.to_lowercase() == id_or_name.to_lowercase())
            .map(|p| p.person_id.clone())
            .ok_or_else(|| Error::NotFound(format!("no person {id_or_name:?}")))
    }

    pub fn readout_summary(&self) -> Result<String> {
        let persons = self.persons()?;
        if persons.is_empty() {
            return Ok("0 persons enrolled".into());
        }
        Ok(persons
            .iter()
            .map(|p| {
                format!(
                    "{}: {} templates, updated {}",
                    p.name,
                    p.templates.len(),
                    p.updated.format("%Y-%m-%d %H:%M:%S UTC")
                )
            })
            .collect::<Vec<_>>()
            .join("\n"))
    }

    fn commit_index(&mut self, index: Index) -> Result<()> {
        let path = self.root.join(INDEX);
        let tmp = storage::write_tmp(&path, serde_json::to_string_pretty(&index)?.as_bytes())?;
        if self.crash_at == Some(CrashPoint::BeforeIndexRename) {
            return Err(crash(&tmp));
        }
        storage::rename(&tmp, &path)?;
        self.index = index;
        self.refresh_snapshot()
    }

    fn build_snapshot(&self) -> Result<Snapshot> {
        let mut names = BTreeMap::new();
        let mut templates = Vec::new();
        for p in self.persons()? {
            names.insert(p.person_id.clone(), p.name.clone());
            for t in &p.templates {
                let rel = format!("{}/{CHIPS}/{}", p.person_id, t.chip);
                let img = raster::load_image(&self.root.join(&rel))?;
                templates.push(FaceTemplate {
                    person_id: p.person_id.clone(),
                    histogram: Some(lbp_histogram(&raster::dynamic_to_gray(&img))?),
                    embedding: None,
                    source_image_ref: rel,
                });
            }
        }
        Ok(Snapshot {
            version: self.index.version,
            names,
            templates,
        })
    }

    /// Rebuilds the in-memory gallery and keeps the newest snapshots on disk.
    fn refresh_snapshot(&mut self) -> Result<()> {
        let snap = self.build_snapshot()?;
        let dir = self.root.join(SNAPSHOTS);
        let path = dir.join(format!("snapshot-{:06}.json", snap.version));
        if !path.exists() {
            storage::write_atomic(&path, serde_json::to_string(&snap)?.as_bytes())?;
        }
        let mut existing: Vec<String> = read_names(&dir)?
            .into_iter()
            .filter(|n| n.starts_with("snapshot-") && n.ends_with(".json"))
            .collect();
        existing.sort();
        let excess = existing.len().saturating_sub(self.snapshots_kept);
        for old in &existing[..excess] {
            remove_any(&dir.join(old))?;
        }
        let mut g = Gallery::new();
        for t in snap.templates {
            let name = snap.names.get(&t.person_id).cloned().unwrap_or_default();
            g.add(&name, t);
        }
        self.gallery = Arc::new(g);
        Ok(())
    }

    pub fn snapshot_files(&self) -> Result<Vec<PathBuf>> {
        let dir = self.root.join(SNAPSHOTS);
        let mut v: Vec<PathBuf> = read_names(&dir)?.into_iter().map(|n| dir.join(n)).collect();
        v.sort();
        Ok(v)
    }
}

fn write_chips(dir: &Path, start: usize, accepted: &[Accepted]) -> Result<Vec<TemplateEntry>> {
    accepted
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let name = format!("chip-{:03}.png", start + i);
            storage::write_atomic(&dir.join(&name), &a.png)?;
            Ok(TemplateEntry {
                chip: name,
                digest: a.digest.clone(),
            })
        })
        .collect()
}

fn read_names(dir: &Path) -> Result<Vec<String>> {
    match fs::read_dir(dir) {
        Ok(rd) => rd
            .map(|e| e.map(|e| e.file_name().to_string_lossy().to_string()))
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::storage(dir, e)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(Error::storage(dir, e)),
    }
}

fn remove_any(path: &Path) -> Result<()> {
    let r = if path.is_dir() {
        fs::remove_dir_all(path)
    } else {
        fs::remove_file(path)
    };
    match r {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(Error::storage(path, e)),
    }
}
