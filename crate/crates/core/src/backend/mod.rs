//! Client for pluggable inference backends (person detection, face detection,
//! 68-point landmarks, face embeddings).
//!
//! The neural models live outside this crate. Every call goes through an
//! [`Exchange`] with a per-request timeout; any transport or protocol fault is
//! reported as [`Error::BackendUnavailable`] so the pipeline can skip the frame.

pub mod stub;
pub mod transport;
pub mod wire;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine as _;
use image::DynamicImage;
use serde::{Deserialize, Serialize};

pub use stub::{AnnotationSet, FaceAnnotation, ImageAnnotation, StubBackend};
pub use transport::{Exchange, HttpExchange, StdioExchange};
pub use wire::{BoundingBox, Embedding, Hello, Landmarks68, Request, Response, Task};

use crate::error::{Error, Result};
use crate::ingest::Frame;
use crate::raster;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);
pub const MIN_FACE_SIDE: i64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Stub,
    Subprocess,
    Http,
}

/// Where face detection looks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceSearch {
    /// Inside each person box, falling back to the whole frame when no person is found.
    #[default]
    WithinPerson,
    /// Inside each person box only.
    WithinPersonOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub cmd: Vec<String>,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub annotations: Option<PathBuf>,
    #[serde(default)]
    pub strict: bool,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub face_search: FaceSearch,
}

fn default_timeout_ms() -> u64 {
    DEFAULT_TIMEOUT.as_millis() as u64
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Stub,
            cmd: Vec::new(),
            endpoint: None,
            annotations: None,
            strict: false,
            timeout_ms: default_timeout_ms(),
            face_search: FaceSearch::default(),
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            BackendKind::Stub if self.annotations.is_none() => {
                Err(Error::Config("backend.annotations is required for the stub backend".into()))
            }
            BackendKind::Subprocess if self.cmd.is_empty() => {
                Err(Error::Config("backend.cmd is required for the subprocess backend".into()))
            }
            BackendKind::Http if self.endpoint.is_none() => {
                Err(Error::Config("backend.endpoint is required for the http backend".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn connect(&self) -> Result<BackendClient> {
        self.validate()?;
        let ex: Box<dyn Exchange> = match self.kind {
            BackendKind::Stub => {
                let path = self.annotations.as_ref().expect("validated");
                Box::new(StubBackend::new(stub::load_annotations(path)?, self.strict))
            }
            BackendKind::Subprocess => Box::new(StdioExchange::spawn(&self.cmd)?),
            BackendKind::Http => Box::new(HttpExchange::new(self.endpoint.as_deref().expect("validated"))),
        };
        BackendClient::connect(ex, Duration::from_millis(self.timeout_ms))
    }
}

/// An image already encoded for the wire.
#[derive(Debug, Clone)]
pub struct WireImage {
    pub base64_png: String,
    pub width: u32,
    pub height: u32,
}

impl WireImage {
    pub fn from_dynamic(img: &DynamicImage) -> Result<Self> {
        let png = raster::encode_png(img)?;
        Ok(WireImage {
            base64_png: base64::engine::general_purpose::STANDARD.encode(png),
            width: img.width(),
            height: img.height(),
        })
    }

    pub fn from_frame(frame: &Frame) -> Result<Self> {
        Self::from_dynamic(&DynamicImage::ImageRgb8(frame.rgb().clone()))
    }
}

/// Digest a backend would key this image under (hex SHA-256 of its PNG bytes).
pub fn image_id(img: &DynamicImage) -> Result<String> {
    Ok(raster::digest_hex(&raster::encode_png(img)?))
}

/// A connected backend. Safe to share between threads; calls are serialized.
pub struct BackendClient {
    exchange: Mutex<Box<dyn Exchange>>,
    hello: Hello,
    timeout: Duration,
    next_id: AtomicU64,
    min_face: i64,
}

impl BackendClient {
    /// Performs the `hello` handshake.
    pub fn connect(mut exchange: Box<dyn Exchange>, timeout: Duration) -> Result<Self> {
        let hello = exchange.hello(timeout)?;
        if !hello.ok {
            return Err(Error::BackendUnavailable("backend refused handshake".into()));
        }
        Ok(BackendClient {
            exchange: Mutex::new(exchange),
            hello,
            timeout,
            next_id: AtomicU64::new(1),
            min_face: MIN_FACE_SIDE,
        })
    }

    pub fn stub(stub: StubBackend) -> Self {
        Self::connect(Box::new(stub), DEFAULT_TIMEOUT).expect("stub handshake cannot fail")
    }

    pub fn hello(&self) -> &Hello {
        &self.hello
    }

    pub fn supports(&self, task: Task) -> bool {
        self.hello.tasks.contains(&task)
    }

    pub fn embed_dim(&self) -> usize {
        self.hello.embed_dim
    }

    fn call(&self, task: Task, image: &str, params: serde_json::Value) -> Result<Response> {
        let req = Request {
            id: self.next_id.fetch_add(1, Ordering::Relaxed).to_string(),
            task,
            image: image.to_string(),
            params,
        };
        let resp = {
            let mut ex = self.exchange.lock().unwrap_or_else(|p| p.into_inner());
            ex.call(&req, self.timeout)?
        };
        if resp.id.as_deref() != Some(req.id.as_str()) {
            return Err(Error::BackendUnavailable(format!(
                "reply id {:?} does not match request {}",
                resp.id, req.id
            )));
        }
        if !resp.ok {
            return Err(Error::BackendUnavailable(format!(
                "{} failed: {}",
                task.as_str(),
                resp.error.as_deref().unwrap_or("no error message")
            )));
        }
        Ok(resp)
    }

    /// Person boxes, clamped to the frame, highest score first.
    pub fn detect_persons(&self, image: &WireImage) -> Result<Vec<BoundingBox>> {
        let resp = self.call(Task::PersonDetect, &image.base64_png, serde_json::json!({}))?;
        let dets = resp
            .detections
            .ok_or_else(|| Error::BackendUnavailable("person_detect reply has no detections".into()))?;
        let mut out: Vec<BoundingBox> = dets.iter().filter_map(|b| b.clamped(image.width, image.height)).collect();
        out.sort_by(|a, b| b.score.total_cmp(&a.score));
        Ok(out)
    }

    /// Faces (with landmarks) whose boxes fall within `within`, or anywhere when
    /// `within` is `None`. Faces smaller than 20x20 are dropped.
    pub fn detect_faces(&self, image: &WireImage, within: Option<&BoundingBox>) -> Result<Vec<(BoundingBox, Landmarks68)>> {
        let params = match within {
            Some(b) => serde_json::json!({ "within": b.rect }),
            None => serde_json::json!({}),
        };
        let resp = self.call(Task::FaceDetect, &image.base64_png, params)?;
        let boxes = resp
            .detections
            .ok_or_else(|| Error::BackendUnavailable("face_detect reply has no detections".into()))?;
        let landmarks = match resp.landmarks {
            Some(l) => l,
            None if boxes.is_empty() => Vec::new(),
            None if self.supports(Task::Landmarks) => {
                let rects: Vec<[i64; 4]> = boxes.iter().map(|b| b.rect).collect();
                self.call(Task::Landmarks, &image.base64_png, serde_json::json!({ "boxes": rects }))?
                    .landmarks
                    .ok_or_else(|| Error::BackendUnavailable("landmarks reply has no landmarks".into()))?
            }
            None => return Err(Error::BackendUnavailable("face_detect reply has no landmarks".into())),
        };
        if landmarks.len() != boxes.len() {
            return Err(Error::BackendUnavailable(format!(
                "{} faces but {} landmark sets",
                boxes.len(),
                landmarks.len()
            )));
        }
        let mut out: Vec<(BoundingBox, Landmarks68)> = boxes
            .iter()
            .zip(landmarks)
            .filter_map(|(b, l)| {
                let b = b.clamped(image.width, image.height)?;
                (b.w() >= self.min_face && b.h() >= self.min_face).then(|| (b, l.clamped(image.width, image.height)))
            })
            .collect();
        out.sort_by(|a, b| b.0.score.total_cmp(&a.0.score));
        Ok(out)
    }

    pub fn embed_face(&self, chip: &DynamicImage) -> Result<Embedding> {
        if chip.width() == 0 || chip.height() == 0 {
            return Err(Error::InvalidInput("empty face chip".into()));
        }
        let image = WireImage::from_dynamic(chip)?;
        let resp = self.call(Task::Embed, &image.base64_png, serde_json::json!({}))?;
        let emb = resp
            .embedding
            .ok_or_else(|| Error::BackendUnavailable("embed reply has no embedding".into()))?;
        emb.validate(self.hello.embed_dim)?;
        Ok(emb)
    }

    /// Backend-side attribute classification for one region; returns the label
    /// (if any) and the decision margin.
    pub fn classify(&self, region: &str, patch: &DynamicImage) -> Result<(Option<String>, f64)> {
        let image = WireImage::from_dynamic(patch)?;
        let resp = self.call(Task::Classify, &image.base64_png, serde_json::json!({ "region": region }))?;
        Ok((resp.label, resp.margin.unwrap_or(0.0)))
    }
}
