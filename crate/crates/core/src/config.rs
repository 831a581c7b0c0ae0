//! Engine configuration file and runtime assembly.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::attributes::{AttributeClass, AttributeClassifier, BackendClassifier, HairPalette, PatchClassifier};
use crate::backend::{BackendClient, BackendConfig};
use crate::clock::Clock;
use crate::describe::{IdentityRefiner, Refiner, TrigramRefiner};
use crate::error::{Error, Result};
use crate::ingest::{CameraConfig, ChangeParams};
use crate::notify::{make_transport, FeedbackConfig, NotifyQueue, Sleeper, ThreadSleeper, TransportConfig};
use crate::orchestrate::{DebouncePolicy, Engine, EventLog, EventSink, PipelineSettings, RetentionPolicy};
use crate::profile::{ProfileStore, DEFAULT_BLUR_FLOOR};
use crate::recognize::RecognitionMode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecognitionConfig {
    #[serde(default)]
    pub mode: RecognitionMode,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributesConfig {
    /// Trained patch classifier; absent means the backend classifies.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub hair_palette: HairPalette,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinerKind {
    #[default]
    Identity,
    Trigram,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescribeConfig {
    #[serde(default)]
    pub refiner: RefinerKind,
    /// Trained trigram model; without one the grammar-trained model is used.
    #[serde(default)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageConfig {
    pub profile_root: PathBuf,
    pub event_log: PathBuf,
    /// Defaults to `images/` next to the event log.
    #[serde(default)]
    pub image_dir: Option<PathBuf>,
    /// Defaults to `deliveries.jsonl` next to the event log.
    #[serde(default)]
    pub delivery_log: Option<PathBuf>,
    #[serde(default)]
    pub retention: RetentionPolicy,
    #[serde(default)]
    pub blur_floor: Option<f64>,
}

impl StorageConfig {
    fn log_dir(&self) -> PathBuf {
        self.event_log.parent().map(Path::to_path_buf).unwrap_or_default()
    }

    pub fn image_dir(&self) -> PathBuf {
        self.image_dir.clone().unwrap_or_else(|| self.log_dir().join("images"))
    }

    pub fn delivery_log(&self) -> PathBuf {
        self.delivery_log
            .clone()
            .unwrap_or_else(|| self.log_dir().join("deliveries.jsonl"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub cameras: Vec<CameraConfig>,
    pub backend: BackendConfig,
    pub recognition: RecognitionConfig,
    #[serde(default)]
    pub change: ChangeParams,
    #[serde(default)]
    pub debounce: DebouncePolicy,
    #[serde(default)]
    pub attributes: Option<AttributesConfig>,
    #[serde(default)]
    pub describe: DescribeConfig,
    #[serde(default)]
    pub notify_classes: Option<Vec<AttributeClass>>,
    #[serde(default)]
    pub feedback: Option<FeedbackConfig>,
    pub storage: StorageConfig,
}

fn is_uri(s: &str) -> bool {
    s.contains("://")
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl EngineConfig {
    /// Parses JSON; errors name the offending field and position.
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: EngineConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::Config(format!(
                "line {} column {}: {}: {}",
                inner.line(),
                inner.column(),
                if path.is_empty() || path == "." { "<root>" } else { &path },
                inner
            ))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for c in &mut self.cameras {
            if !is_uri(&c.source) && Path::new(&c.source).is_relative() {
                c.source = base.join(&c.source).to_string_lossy().into_owned();
            }
        }
        if let Some(a) = &mut self.backend.annotations {
            rebase(base, a);
        }
        if let Some(a) = &mut self.attributes {
            if let Some(m) = &mut a.model {
                rebase(base, m);
            }
        }
        if let Some(m) = &mut self.describe.model {
            rebase(base, m);
        }
        let s = &mut self.storage;
        rebase(base, &mut s.profile_root);
        rebase(base, &mut s.event_log);
        for p in [&mut s.image_dir, &mut s.delivery_log].into_iter().flatten() {
            rebase(base, p);
        }
        if let Some(FeedbackConfig {
            transport: TransportConfig::FileSink { outbox },
            ..
        }) = &mut self.feedback
        {
            rebase(base, outbox);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras.is_empty() {
            return Err(Error::Config("cameras: at least one camera is required".into()));
        }
        CameraConfig::validate_all(&self.cameras)?;
        self.backend.validate()?;
        if self.recognition.threshold.is_nan() || self.recognition.threshold <= 0.0 {
            return Err(Error::Config("recognition.threshold must be > 0".into()));
        }
        self.change.validate()?;
        if let Some(a) = &self.attributes {
            a.hair_palette.validate()?;
        }
        if let Some(f) = &self.feedback {
            f.validate()?;
        }
        if let Some(b) = self.storage.blur_floor {
            if b.is_nan() || b < 0.0 {
                return Err(Error::Config("storage.blur_floor must be >= 0".into()));
            }
        }
        Ok(())
    }

    /// Checks that secrets referenced by name are present in the environment.
    pub fn check_env(&self) -> Result<()> {
        let Some(f) = &self.feedback else { return Ok(()) };
        if matches!(f.transport, TransportConfig::FileSink { .. }) {
            return Ok(());
        }
        for var in f.env_refs() {
            if std::env::var_os(&var).is_none() {
                return Err(Error::Config(format!("environment variable {var} is not set")));
            }
        }
        Ok(())
    }

    pub fn blur_floor(&self) -> f64 {
        self.storage.blur_floor.unwrap_or(DEFAULT_BLUR_FLOOR)
    }

    pub fn settings(&self) -> PipelineSettings {
        PipelineSettings {
            mode: self.recognition.mode,
            threshold: self.recognition.threshold,
            debounce: self.debounce,
            notify_classes: self.notify_classes.clone(),
            hair_palette: self.attributes.as_ref().map(|a| a.hair_palette.clone()).unwrap_or_default(),
            face_search: self.backend.face_search,
        }
    }
}

/// Engine plus the pieces the caller must shut down.
pub struct Runtime {
    pub engine: Arc<Engine>,
    pub backend: Arc<BackendClient>,
    pub notify: Option<Arc<NotifyQueue>>,
}

impl Runtime {
    pub fn shutdown(&self) {
        if let Some(n) = &self.notify {
            n.shutdown();
        }
    }
}

/// Connects the backend, loads models and the profile snapshot, opens the
/// event log, and starts the notification queue.
pub fn assemble(cfg: &EngineConfig, clock: Arc<dyn Clock>, sleeper: Option<Arc<dyn Sleeper>>) -> Result<Runtime> {
    cfg.validate()?;
    cfg.check_env()?;
    let backend = Arc::new(cfg.backend.connect()?);
    if cfg.recognition.mode == RecognitionMode::Embedding && backend.embed_dim() == 0 {
        return Err(Error::Config("recognition.mode embedding needs a backend with embed_face".into()));
    }
    let profile = ProfileStore::open(&cfg.storage.profile_root, clock.clone())?.with_blur_floor(cfg.blur_floor());
    let gallery = match cfg.recognition.mode {
        RecognitionMode::Lbp => (*profile.gallery()).clone(),
        RecognitionMode::Embedding => profile.embedded_gallery(&backend)?,
    };
    let classifier: Option<Arc<dyn AttributeClassifier>> = match &cfg.attributes {
        Some(AttributesConfig { model: Some(m), .. }) => Some(Arc::new(PatchClassifier::load(m)?)),
        Some(_) => Some(Arc::new(BackendClassifier(backend.clone()))),
        None => None,
    };
    let refiner: Arc<dyn Refiner> = match (cfg.describe.refiner, &cfg.describe.model) {
        (RefinerKind::Identity, _) => Arc::new(IdentityRefiner),
        (RefinerKind::Trigram, Some(m)) => Arc::new(TrigramRefiner::load(m)?),
        (RefinerKind::Trigram, None) => Arc::new(TrigramRefiner::from_grammar()),
    };
    let log = EventLog::open(&cfg.storage.event_log, &cfg.storage.image_dir())?;
    let engine = Engine::new(backend.clone(), gallery, classifier, refiner, log, clock.clone(), cfg.settings())?;
    let notify = match &cfg.feedback {
        Some(f) => {
            let q = NotifyQueue::start(
                f.clone(),
                make_transport(f)?,
                sleeper.unwrap_or_else(|| Arc::new(ThreadSleeper)),
                clock,
                cfg.storage.event_log.clone(),
                cfg.storage.delivery_log(),
            )?;
            engine.set_sink(Some(q.clone() as Arc<dyn EventSink>));
            Some(q)
        }
        None => None,
    };
    Ok(Runtime { engine, backend, notify })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
  "cameras": [{"camera_id": "cam-1", "location_label": "entrance", "source": "frames/cam-1"}],
  "backend": {"kind": "stub", "annotations": "annotations.json"},
  "recognition": {"threshold": 1.5},
  "storage": {"profile_root": "profiles", "event_log": "var/events.jsonl"}
}"#;

    #[test]
    fn minimal_parses_with_defaults() {
        let cfg = EngineConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.change, ChangeParams::default());
        assert_eq!(cfg.debounce.cooldown_seconds, 60);
        assert_eq!(cfg.recognition.mode, RecognitionMode::Lbp);
        assert_eq!(cfg.storage.image_dir(), PathBuf::from("var/images"));
        assert_eq!(cfg.storage.delivery_log(), PathBuf::from("var/deliveries.jsonl"));
    }

    #[test]
    fn relative_paths_follow_config_dir() {
        let mut cfg = EngineConfig::parse(MINIMAL).unwrap();
        cfg.resolve_paths(Path::new("/etc/dw"));
        assert_eq!(cfg.cameras[0].source, "/etc/dw/frames/cam-1");
        assert_eq!(cfg.backend.annotations.as_deref(), Some(Path::new("/etc/dw/annotations.json")));
        assert_eq!(cfg.storage.event_log, PathBuf::from("/etc/dw/var/events.jsonl"));
    }

    #[test]
    fn unknown_field_is_located() {
        let text = MINIMAL.replace("\"threshold\": 1.5", "\"threshold\": 1.5, \"treshold\": 2");
        let Err(Error::Config(msg)) = EngineConfig::parse(&text) else { panic!("expected config error") };
        assert!(msg.contains("line 4"), "{msg}");
        assert!(msg.contains("recognition"), "{msg}");
        assert!(msg.contains("treshold"), "{msg}");
    }

    #[test]
    fn bad_values_rejected() {
        let t = MINIMAL.replace("1.5", "0");
        assert!(matches!(EngineConfig::parse(&t), Err(Error::Config(_))));
        let t = MINIMAL.replace("\"entrance\"", "\"\"");
        assert!(matches!(EngineConfig::parse(&t), Err(Error::Config(_))));
        let t = MINIMAL.replace(", \"annotations\": \"annotations.json\"", "");
        assert!(matches!(EngineConfig::parse(&t), Err(Error::Config(_))));
    }

    #[test]
    fn missing_secret_env_rejected() {
        let text = MINIMAL.replace(
            "\"storage\"",
            r#""feedback": {"modes": ["email"], "recipients": [{"name": "o", "email": "o@x.org"}],
               "smtp": {"host": "h", "sender": "s@x.org", "password_env": "DOORWATCH_TEST_UNSET_SECRET", "username_env": "DOORWATCH_TEST_UNSET_SECRET"}},
              "storage""#,
        );
        let cfg = EngineConfig::parse(&text).unwrap();
        assert!(matches!(cfg.check_env(), Err(Error::Config(m)) if m.contains("DOORWATCH_TEST_UNSET_SECRET")));
    }
}
