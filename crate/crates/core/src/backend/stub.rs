//! Deterministic fixture-driven backend.
//!
//! Images are looked up by the lowercase hex SHA-256 of the PNG bytes carried
//! in the request, so the same annotation file works in-process, behind the
//! `serve-stub` subcommand, and for the reference sidecar.

use std::collections::BTreeMap;
use std::path::Path;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::wire::{BoundingBox, Embedding, Hello, Landmarks68, Request, Response, Task};
use crate::error::{Error, Result};
use crate::raster::digest_hex;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FaceAnnotation {
    #[serde(rename = "box")]
    pub rect: [i64; 4],
    #[serde(default = "full_score")]
    pub score: f64,
    pub landmarks: Landmarks68,
}

fn full_score() -> f64 {
    1.0
}

impl Default for Landmarks68 {
    fn default() -> Self {
        Landmarks68::new([[0, 0]; 68])
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageAnnotation {
    #[serde(default)]
    pub persons: Vec<BoundingBox>,
    #[serde(default)]
    pub faces: Vec<FaceAnnotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

/// `image_id -> annotation`. BTreeMap keeps the serialized file stable.
pub type AnnotationSet = BTreeMap<String, ImageAnnotation>;

pub fn load_annotations(path: &Path) -> Result<AnnotationSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::storage(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone)]
pub struct StubBackend {
    annotations: AnnotationSet,
    strict: bool,
    embed_dim: usize,
}

impl StubBackend {
    pub fn new(annotations: AnnotationSet, strict: bool) -> Self {
        let embed_dim = annotations
            .values()
            .find_map(|a| a.embedding.as_ref().map(Vec::len))
            .unwrap_or(128);
        StubBackend {
            annotations,
            strict,
            embed_dim,
        }
    }

    pub fn hello(&self) -> Hello {
        Hello {
            ok: true,
            tasks: vec![Task::PersonDetect, Task::FaceDetect, Task::Landmarks, Task::Embed],
            embed_dim: self.embed_dim,
        }
    }

    /// Handles one raw line; malformed input yields an error response with id `"?"`.
    pub fn handle_line(&self, line: &str) -> String {
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => return to_line(&Response::failure("?", format!("malformed request: {e}"))),
        };
        if value.get("task").and_then(|t| t.as_str()) == Some("hello") {
            return serde_json::to_string(&self.hello()).expect("hello serializes");
        }
        let id = value.get("id").and_then(|v| v.as_str()).unwrap_or("?").to_string();
        match serde_json::from_value::<Request>(value) {
            Ok(req) => to_line(&self.handle(&req)),
            Err(e) => to_line(&Response::failure(id, format!("bad request: {e}"))),
        }
    }

    pub fn handle(&self, req: &Request) -> Response {
        let bytes = match base64::engine::general_purpose::STANDARD.decode(&req.image) {
            Ok(b) => b,
            Err(e) => return Response::failure(&req.id, format!("image is not base64: {e}")),
        };
        let image_id = digest_hex(&bytes);
        let entry = match self.annotations.get(&image_id) {
            Some(e) => e,
            None if self.strict || req.task == Task::Embed => {
                return Response::failure(&req.id, format!("unknown image {image_id}"))
            }
            None => {
                return empty_for(&req.id, req.task);
            }
        };
        match req.task {
            Task::PersonDetect => {
                let mut dets = entry.persons.clone();
                sort_by_score(&mut dets);
                Response {
                    id: Some(req.id.clone()),
                    ok: true,
                    detections: Some(dets),
                    ..Default::default()
                }
            }
            Task::Landmarks if req.params.get("boxes").is_some() => {
                let boxes: Vec<[i64; 4]> = match serde_json::from_value(req.params["boxes"].clone()) {
                    Ok(b) => b,
                    Err(e) => return Response::failure(&req.id, format!("bad boxes: {e}")),
                };
                let mut out = Vec::with_capacity(boxes.len());
                for b in &boxes {
                    match entry.faces.iter().find(|f| &f.rect == b) {
                        Some(f) => out.push(f.landmarks.clone()),
                        None => return Response::failure(&req.id, format!("no landmarks for box {b:?}")),
                    }
                }
                Response {
                    id: Some(req.id.clone()),
                    ok: true,
                    landmarks: Some(out),
                    ..Default::default()
                }
            }
            Task::FaceDetect | Task::Landmarks => {
                let within = req
                    .params
                    .get("within")
                    .and_then(|w| serde_json::from_value::<[i64; 4]>(w.clone()).ok())
                    .map(|r| BoundingBox::new(r[0], r[1], r[2], r[3], 1.0));
                let mut faces: Vec<&FaceAnnotation> = entry
                    .faces
                    .iter()
                    .filter(|f| match &within {
                        Some(w) => w.contains_point(f.rect[0] + f.rect[2] / 2, f.rect[1] + f.rect[3] / 2),
                        None => true,
                    })
                    .collect();
                faces.sort_by(|a, b| b.score.total_cmp(&a.score));
                Response {
                    id: Some(req.id.clone()),
                    ok: true,
                    detections: Some(
                        faces
                            .iter()
                            .map(|f| BoundingBox {
                                rect: f.rect,
                                score: f.score,
                            })
                            .collect(),
                    ),
                    landmarks: Some(faces.iter().map(|f| f.landmarks.clone()).collect()),
                    ..Default::default()
                }
            }
            Task::Embed => match &entry.embedding {
                Some(v) => Response {
                    id: Some(req.id.clone()),
                    ok: true,
                    embedding: Some(Embedding(v.clone())),
                    ..Default::default()
                },
                None => Response::failure(&req.id, format!("no embedding for {image_id}")),
            },
            Task::Classify => Response::failure(&req.id, "classify is not served by the stub"),
        }
    }
}

fn empty_for(id: &str, task: Task) -> Response {
    let mut r = Response {
        id: Some(id.to_string()),
        ok: true,
        detections: Some(Vec::new()),
        ..Default::default()
    };
    if matches!(task, Task::FaceDetect | Task::Landmarks) {
        r.landmarks = Some(Vec::new());
    }
    r
}

fn sort_by_score(v: &mut [BoundingBox]) {
    v.sort_by(|a, b| b.score.total_cmp(&a.score));
}

fn to_line(r: &Response) -> String {
    serde_json::to_string(r).expect("response serializes")
}

/// Serves the stub over any line-oriented reader/writer pair until EOF.
pub fn serve_lines<R: std::io::BufRead, W: std::io::Write>(stub: &StubBackend, input: R, mut output: W) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        writeln!(output, "{}", stub.handle_line(&line))?;
        output.flush()?;
    }
    Ok(())
}

pub use tiny_http::Server as HttpServer;

/// Serves the stub as `POST /infer` until the listener fails.
pub fn serve_http(stub: &StubBackend, server: &tiny_http::Server) -> std::io::Result<()> {
    loop {
        let mut req = server.recv()?;
        let mut body = String::new();
        let reply = if req.method() != &tiny_http::Method::Post || !req.url().starts_with("/infer") {
            tiny_http::Response::from_string("not found").with_status_code(404)
        } else if let Err(e) = req.as_reader().read_to_string(&mut body) {
            tiny_http::Response::from_string(e.to_string()).with_status_code(400)
        } else {
            tiny_http::Response::from_string(stub.handle_line(body.trim())).with_header(
                "Content-Type: application/json"
                    .parse::<tiny_http::Header>()
                    .expect("static header"),
            )
        };
        let _ = req.respond(reply);
    }
}
