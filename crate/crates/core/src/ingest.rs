//! Frame sources and the change-detection gate.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{DynamicImage, GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster;

/// One captured frame. Immutable after construction; cheap to clone.
#[derive(Debug, Clone)]
pub struct Frame {
    pub camera_id: String,
    pub seq: u64,
    /// UTC milliseconds.
    pub timestamp: i64,
    rgb: Arc<RgbImage>,
    gray: Arc<GrayImage>,
}

impl Frame {
    pub fn new(camera_id: impl Into<String>, seq: u64, timestamp: i64, rgb: RgbImage) -> Result<Self> {
        if rgb.width() == 0 || rgb.height() == 0 {
            return Err(Error::InvalidInput("frame must be at least 1x1".into()));
        }
        let gray = raster::rgb_to_gray(&rgb);
        Ok(Frame {
            camera_id: camera_id.into(),
            seq,
            timestamp,
            rgb: Arc::new(rgb),
            gray: Arc::new(gray),
        })
    }

    pub fn from_dynamic(camera_id: impl Into<String>, seq: u64, timestamp: i64, img: &DynamicImage) -> Result<Self> {
        Frame::new(camera_id, seq, timestamp, img.to_rgb8())
    }

    pub fn width(&self) -> u32 {
        self.rgb.width()
    }

    pub fn height(&self) -> u32 {
        self.rgb.height()
    }

    pub fn rgb(&self) -> &RgbImage {
        &self.rgb
    }

    pub fn gray(&self) -> &GrayImage {
        &self.gray
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub camera_id: String,
    pub location_label: String,
    /// Directory path for replay, or a stream URI.
    pub source: String,
}

impl CameraConfig {
    pub fn validate_all(cameras: &[CameraConfig]) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for c in cameras {
            if c.location_label.trim().is_empty() {
                return Err(Error::Config(format!("camera {:?}: location_label is empty", c.camera_id)));
            }
            if !seen.insert(c.camera_id.as_str()) {
                return Err(Error::Config(format!("duplicate camera_id {:?}", c.camera_id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangeParams {
    pub pixel_delta: u8,
    pub active_fraction: f64,
}

impl Default for ChangeParams {
    fn default() -> Self {
        ChangeParams {
            pixel_delta: 25,
            active_fraction: 0.01,
        }
    }
}

impl ChangeParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.active_fraction) {
            return Err(Error::Config(format!(
                "active_fraction {} outside [0,1]",
                self.active_fraction
            )));
        }
        Ok(())
    }
}

/// Fraction of pixel positions whose grayscale values differ by more than
/// `pixel_delta`.
pub fn change_score(prev: &Frame, cur: &Frame, params: &ChangeParams) -> Result<f64> {
    if prev.width() != cur.width() || prev.height() != cur.height() {
        return Err(Error::InvalidInput(format!(
            "frame size mismatch: {}x{} vs {}x{}",
            prev.width(),
            prev.height(),
            cur.width(),
            cur.height()
        )));
    }
    if prev.camera_id != cur.camera_id {
        return Err(Error::InvalidInput(format!(
            "frames from different cameras: {} vs {}",
            prev.camera_id, cur.camera_id
        )));
    }
    Ok(gray_change_fraction(prev.gray(), cur.gray(), params.pixel_delta))
}

/// Raw-buffer form of [`change_score`]; the buffers must have equal length.
pub fn gray_change_fraction(a: &[u8], b: &[u8], pixel_delta: u8) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    let changed = a
        .iter()
        .zip(b)
        .filter(|(&p, &q)| p.abs_diff(q) > pixel_delta)
        .count();
    changed as f64 / a.len() as f64
}

/// `true` when there is no previous frame, otherwise `change_score > active_fraction`.
pub fn is_active(prev: Option<&Frame>, cur: &Frame, params: &ChangeParams) -> Result<bool> {
    match prev {
        None => Ok(true),
        Some(p) => Ok(change_score(p, cur, params)? > params.active_fraction),
    }
}

/// Per-camera gate holding the previous frame.
#[derive(Debug, Default)]
pub struct ChangeGate {
    params: ChangeParams,
    prev: Option<Frame>,
}

impl ChangeGate {
    pub fn new(params: ChangeParams) -> Self {
        ChangeGate { params, prev: None }
    }

    /// Scores `frame` against the previous one and makes it the new baseline.
    /// A frame whose size differs from the baseline resets the gate and counts as active.
    pub fn admit(&mut self, frame: &Frame) -> bool {
        let active = is_active(self.prev.as_ref(), frame, &self.params).unwrap_or(true);
        self.prev = Some(frame.clone());
        active
    }
}

/// Something that yields frames in `seq` order.
pub trait FrameSource: Send {
    /// `Ok(None)` is end-of-stream. Undecodable inputs are recorded and skipped.
    fn next_frame(&mut self) -> Result<Option<Frame>>;

    /// Per-frame decode errors seen so far.
    fn errors(&self) -> &[SourceError];
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceError {
    pub path: PathBuf,
    pub message: String,
}

/// Replays image files from a directory in lexicographic file-name order.
pub struct DirectorySource {
    camera_id: String,
    dir: PathBuf,
    seen: std::collections::HashSet<PathBuf>,
    files: std::vec::IntoIter<PathBuf>,
    next_seq: u64,
    clock: Arc<dyn crate::clock::Clock>,
    errors: Vec<SourceError>,
}

impl DirectorySource {
    pub fn open(camera: &CameraConfig, clock: Arc<dyn crate::clock::Clock>) -> Result<Self> {
        Self::open_dir(&camera.camera_id, Path::new(&camera.source), clock)
    }

    pub fn open_dir(camera_id: &str, dir: &Path, clock: Arc<dyn crate::clock::Clock>) -> Result<Self> {
        let files = raster::list_images(dir)?;
        Ok(DirectorySource {
            camera_id: camera_id.to_string(),
            dir: dir.to_path_buf(),
            seen: files.iter().cloned().collect(),
            files: files.into_iter(),
            next_seq: 0,
            clock,
            errors: Vec::new(),
        })
    }
}

impl DirectorySource {
    /// Queues image files that appeared since the last scan; returns how many.
    pub fn rescan(&mut self) -> Result<usize> {
        let mut pending: Vec<PathBuf> = self.files.by_ref().collect();
        let fresh: Vec<PathBuf> = raster::list_images(&self.dir)?
            .into_iter()
            .filter(|p| !self.seen.contains(p))
            .collect();
        self.seen.extend(fresh.iter().cloned());
        let n = fresh.len();
        pending.extend(fresh);
        self.files = pending.into_iter();
        Ok(n)
    }
}

impl FrameSource for DirectorySource {
    fn next_frame(&mut self) -> Result<Option<Frame>> {
        for path in self.files.by_ref() {
            match raster::load_image(&path) {
                Ok(img) => {
                    let seq = self.next_seq;
                    self.next_seq += 1;
                    let ts = self.clock.now().timestamp_millis();
                    match Frame::from_dynamic(&self.camera_id, seq, ts, &img) {
                        Ok(f) => return Ok(Some(f)),
                        Err(e) => self.errors.push(SourceError {
                            path: path.clone(),
                            message: e.to_string(),
                        }),
                    }
                }
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    self.errors.push(SourceError {
                        path: path.clone(),
                        message: e.to_string(),
                    });
                }
            }
        }
        Ok(None)
    }

    fn errors(&self) -> &[SourceError] {
        &self.errors
    }
}
