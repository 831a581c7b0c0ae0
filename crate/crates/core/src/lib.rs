//! Premises camera monitoring engine.
//!
//! Frames pass a change gate, then person and face detection through a
//! pluggable inference backend, LBP identification against an enrolled
//! profile store, face-part cropping and attribute classification, and a
//! rule-based description grammar. Events are appended to a JSONL log and
//! fanned out to notification transports.

pub mod attributes;
pub mod calibrate;
pub mod backend;
pub mod clock;
pub mod config;
pub mod describe;
pub mod error;
pub mod faceparts;
pub mod ingest;
pub mod notify;
pub mod raster;
pub mod orchestrate;
pub mod profile;
pub mod recognize;
pub mod storage;

pub use error::{Error, Result};
