//! JSON wire format shared by every backend transport.
//!
//! One JSON object per line (stdio) or per HTTP body. Boxes travel as
//! `[x, y, w, h]` integer arrays, landmarks as 68 `[x, y]` pairs, images as
//! base64-encoded PNG.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    PersonDetect,
    FaceDetect,
    Landmarks,
    Embed,
    Classify,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::PersonDetect => "person_detect",
            Task::FaceDetect => "face_detect",
            Task::Landmarks => "landmarks",
            Task::Embed => "embed",
            Task::Classify => "classify",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: String,
    pub task: Task,
    pub image: String,
    #[serde(default)]
    pub params: Value,
}

/// Axis-aligned detection box with confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    #[serde(rename = "box")]
    pub rect: [i64; 4],
    #[serde(default = "one")]
    pub score: f64,
}

fn one() -> f64 {
    1.0
}

impl BoundingBox {
    pub fn new(x: i64, y: i64, w: i64, h: i64, score: f64) -> Self {
        BoundingBox {
            rect: [x, y, w, h],
            score,
        }
    }

    pub fn x(&self) -> i64 {
        self.rect[0]
    }
    pub fn y(&self) -> i64 {
        self.rect[1]
    }
    pub fn w(&self) -> i64 {
        self.rect[2]
    }
    pub fn h(&self) -> i64 {
        self.rect[3]
    }

    pub fn to_rect(&self) -> crate::raster::Rect {
        crate::raster::Rect::new(self.x(), self.y(), self.x() + self.w(), self.y() + self.h())
    }

    /// Clips to a `width x height` frame. Returns `None` if nothing of at least
    /// 1x1 remains.
    pub fn clamped(&self, width: u32, height: u32) -> Option<BoundingBox> {
        let r = self.to_rect().clamp_to(width, height);
        if r.is_empty() {
            return None;
        }
        Some(BoundingBox::new(r.x0, r.y0, r.width(), r.height(), self.score.clamp(0.0, 1.0)))
    }

    pub fn contains_point(&self, px: i64, py: i64) -> bool {
        px >= self.x() && py >= self.y() && px < self.x() + self.w() && py < self.y() + self.h()
    }
}

/// Exactly 68 face landmarks in the usual jaw/brow/nose/eye/mouth order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[i64; 2]>", into = "Vec<[i64; 2]>")]
pub struct Landmarks68([[i64; 2]; 68]);

impl Landmarks68 {
    pub fn new(points: [[i64; 2]; 68]) -> Self {
        Landmarks68(points)
    }

    pub fn point(&self, i: usize) -> (i64, i64) {
        let [x, y] = self.0[i];
        (x, y)
    }

    pub fn points(&self) -> &[[i64; 2]; 68] {
        &self.0
    }

    pub fn set(&mut self, i: usize, x: i64, y: i64) {
        self.0[i] = [x, y];
    }

    pub fn translate(&self, dx: i64, dy: i64) -> Self {
        let mut out = self.0;
        for p in out.iter_mut() {
            p[0] += dx;
            p[1] += dy;
        }
        Landmarks68(out)
    }

    pub fn clamped(&self, width: u32, height: u32) -> Self {
        let mut out = self.0;
        for p in out.iter_mut() {
            p[0] = p[0].clamp(0, i64::from(width.max(1)) - 1);
            p[1] = p[1].clamp(0, i64::from(height.max(1)) - 1);
        }
        Landmarks68(out)
    }
}

impl TryFrom<Vec<[i64; 2]>> for Landmarks68 {
    type Error = String;

    fn try_from(v: Vec<[i64; 2]>) -> std::result::Result<Self, Self::Error> {
        let n = v.len();
        let arr: [[i64; 2]; 68] = v
            .try_into()
            .map_err(|_| format!("expected 68 landmarks, got {n}"))?;
        Ok(Landmarks68(arr))
    }
}

impl From<Landmarks68> for Vec<[i64; 2]> {
    fn from(l: Landmarks68) -> Self {
        l.0.to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.0.len() != dim {
            return Err(Error::BackendUnavailable(format!(
                "embedding has {} values, handshake declared {dim}",
                self.0.len()
            )));
        }
        if self.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::BackendUnavailable("embedding contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn squared_distance(&self, other: &Embedding) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Response {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<Vec<BoundingBox>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<Vec<Landmarks68>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Embedding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    pub fn failure(id: impl Into<String>, error: impl Into<String>) -> Self {
        Response {
            id: Some(id.into()),
            ok: false,
            error: Some(error.into()),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub ok: bool,
    #[serde(default)]
    pub tasks: Vec<Task>,
    #[serde(default)]
    pub embed_dim: usize,
}

pub const HELLO_REQUEST: &str = r#"{"task":"hello"}"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_serializes_as_integer_array() {
        let b = BoundingBox::new(10, 20, 50, 120, 0.98);
        assert_eq!(serde_json::to_string(&b).unwrap(), r#"{"box":[10,20,50,120],"score":0.98}"#);
    }

    #[test]
    fn landmarks_require_exactly_68() {
        let ok: Vec<[i64; 2]> = (0..68).map(|i| [i, i]).collect();
        let l: Landmarks68 = serde_json::from_value(serde_json::json!(ok)).unwrap();
        assert_eq!(l.point(67), (67, 67));
        let bad: Vec<[i64; 2]> = (0..67).map(|i| [i, i]).collect();
        assert!(serde_json::from_value::<Landmarks68>(serde_json::json!(bad)).is_err());
    }

    #[test]
    fn response_omits_unset_fields() {
        let r = Response {
            id: Some("7".into()),
            ok: true,
            detections: Some(vec![]),
            ..Default::default()
        };
        assert_eq!(serde_json::to_string(&r).unwrap(), r#"{"id":"7","ok":true,"detections":[]}"#);
    }

    #[test]
    fn clamp_box_into_frame() {
        let b = BoundingBox::new(-5, 90, 30, 30, 1.5).clamped(100, 100).unwrap();
        assert_eq!(b.rect, [0, 90, 25, 10]);
        assert_eq!(b.score, 1.0);
        assert!(BoundingBox::new(200, 0, 5, 5, 1.0).clamped(100, 100).is_none());
    }
}
