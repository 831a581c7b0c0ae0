//! Alert composition and delivery: MMS through a carrier email gateway,
//! high-importance alert mail, plain email, and a phone-call provider.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use base64::Engine as _;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::Clock;
use crate::error::{Error, Result};
use crate::orchestrate::{resolve_image_ref, EventSink, ThreatEvent};
use crate::raster;

pub const DEFAULT_ATTACHMENT_CAP: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Mms,
    Alert,
    Email,
    Call,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Mms => "mms",
            Mode::Alert => "alert",
            Mode::Email => "email",
            Mode::Call => "call",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recipient {
    pub name: String,
    #[serde(default)]
    pub email: Option<String>,
    #[serde(default)]
    pub phone_number: Option<String>,
    #[serde(default)]
    pub carrier_gateway_domain: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmtpConfig {
    pub host: String,
    #[serde(default = "default_smtp_port")]
    pub port: u16,
    pub sender: String,
    #[serde(default = "default_true")]
    pub starttls: bool,
    /// Environment variable holding the SMTP user name.
    #[serde(default)]
    pub username_env: Option<String>,
    /// Environment variable holding the SMTP password.
    #[serde(default)]
    pub password_env: Option<String>,
}

fn default_smtp_port() -> u16 {
    587
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallProviderConfig {
    pub endpoint: String,
    /// Environment variable holding a bearer token.
    #[serde(default)]
    pub auth_env: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TransportConfig {
    #[default]
    Real,
    FileSink {
        outbox: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_base_delay")]
    pub base_delay_ms: u64,
}

fn default_retries() -> u32 {
    3
}

fn default_base_delay() -> u64 {
    1000
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: default_retries(),
            base_delay_ms: default_base_delay(),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry `i` (0-based): base, 2*base, 4*base, ...
    pub fn backoff(&self, i: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(1u64 << i.min(30)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackConfig {
    pub modes: Vec<Mode>,
    pub recipients: Vec<Recipient>,
    #[serde(default)]
    pub smtp: Option<SmtpConfig>,
    #[serde(default)]
    pub call_provider: Option<CallProviderConfig>,
    #[serde(default)]
    pub transport: TransportConfig,
    #[serde(default = "default_cap")]
    pub attachment_cap_bytes: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_cap() -> usize {
    DEFAULT_ATTACHMENT_CAP
}

/// Strips common separators; the result must be digits only.
pub fn normalize_phone(raw: &str) -> Result<String> {
    let digits: String = raw
        .chars()
        .filter(|c| !matches!(c, ' ' | '-' | '(' | ')' | '.' | '+'))
        .collect();
    if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
        return Err(Error::Config(format!("phone number {raw:?} is not digits-only")));
    }
    Ok(digits)
}

impl FeedbackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.attachment_cap_bytes == 0 {
            return Err(Error::Config("feedback.attachment_cap_bytes must be > 0".into()));
        }
        for mode in &self.modes {
            if matches!(mode, Mode::Mms | Mode::Alert | Mode::Email) {
                match &self.smtp {
                    None => return Err(Error::Config(format!("feedback.smtp is required for mode {}", mode.name()))),
                    Some(s) if s.sender.trim().is_empty() || s.host.trim().is_empty() => {
                        return Err(Error::Config("feedback.smtp needs host and sender".into()))
                    }
                    _ => {}
                }
            }
            if *mode == Mode::Call && self.call_provider.is_none() {
                return Err(Error::Config("feedback.call_provider is required for mode call".into()));
            }
            for (i, r) in self.recipients.iter().enumerate() {
                let at = format!("feedback.recipients[{i}]");
                match mode {
                    Mode::Mms | Mode::Alert => {
                        normalize_phone(r.phone_number.as_deref().unwrap_or(""))
                            .map_err(|e| Error::Config(format!("{at}.phone_number: {e}")))?;
                        if r.carrier_gateway_domain.as_deref().is_none_or(|d| d.trim().is_empty()) {
                            return Err(Error::Config(format!(
                                "{at}.carrier_gateway_domain is required for mode {}",
                                mode.name()
                            )));
                        }
                    }
                    Mode::Email => {
                        if r.email.as_deref().is_none_or(|e| !e.contains('@')) {
                            return Err(Error::Config(format!("{at}.email is required for mode email")));
                        }
                    }
                    Mode::Call => {
                        normalize_phone(r.phone_number.as_deref().unwrap_or(""))
                            .map_err(|e| Error::Config(format!("{at}.phone_number: {e}")))?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Names of every environment variable the config refers to.
    pub fn env_refs(&self) -> Vec<String> {
        let mut v = Vec::new();
        if let Some(s) = &self.smtp {
            v.extend(s.username_env.clone());
            v.extend(s.password_env.clone());
        }
        if let Some(c) = &self.call_provider {
            v.extend(c.auth_env.clone());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attachment {
    pub bytes: Vec<u8>,
    pub media_type: String,
    pub filename: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Notification {
    pub event_id: String,
    pub subject: String,
    pub body: String,
    pub attachment: Option<Attachment>,
    pub mode: Mode,
}

/// Re-encodes `png` at decreasing sizes until it fits in `cap` bytes.
pub fn fit_attachment(bytes: &[u8], cap: usize) -> Result<Attachment> {
    let media = match image::guess_format(bytes) {
        Ok(image::ImageFormat::Jpeg) => "image/jpeg",
        _ => "image/png",
    };
    if bytes.len() <= cap {
        let filename = if media == "image/jpeg" { "scene.jpg" } else { "scene.png" };
        return Ok(Attachment {
            bytes: bytes.to_vec(),
            media_type: media.into(),
            filename: filename.into(),
        });
    }
    let mut img = raster::decode_image(bytes)?;
    let mut size = bytes.len();
    loop {
        let scale = ((cap as f64 / size as f64).sqrt() * 0.9).min(0.9);
        let w = ((f64::from(img.width()) * scale) as u32).max(1);
        let h = ((f64::from(img.height()) * scale) as u32).max(1);
        img = img.resize_exact(w, h, image::imageops::FilterType::Triangle);
        let out = raster::encode_png(&img)?;
        if out.len() <= cap || (w == 1 && h == 1) {
            return Ok(Attachment {
                bytes: out,
                media_type: "image/png".into(),
                filename: "scene.png".into(),
            });
        }
        size = out.len();
    }
}

impl Notification {
    pub fn for_event(event: &ThreatEvent, mode: Mode, image: Option<&[u8]>, cap: usize) -> Result<Self> {
        if event.description.trim().is_empty() {
            return Err(Error::InvalidInput("event has an empty description".into()));
        }
        let attachment = match (mode, image) {
            (Mode::Call, _) | (_, None) => None,
            (_, Some(bytes)) => Some(fit_attachment(bytes, cap)?),
        };
        Ok(Notification {
            event_id: event.event_id.clone(),
            subject: format!("Alert: {} at {}", event.identity, event.location_label),
            body: event.description.clone(),
            attachment,
            mode,
        })
    }
}

/// Inputs that would otherwise make composition nondeterministic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComposeContext {
    pub date: DateTime<Utc>,
    pub boundary_seed: u64,
    pub sender: String,
}

fn boundary(seed: u64, event_id: &str) -> String {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(event_id.as_bytes());
    format!("=_doorwatch_{}", &hex::encode(h.finalize())[..24])
}

fn header_text(s: &str) -> String {
    if s.is_ascii() {
        s.to_string()
    } else {
        format!("=?UTF-8?B?{}?=", base64::engine::general_purpose::STANDARD.encode(s))
    }
}

fn wrap76(data: &[u8]) -> String {
    let enc = base64::engine::general_purpose::STANDARD.encode(data);
    let mut out = String::with_capacity(enc.len() + enc.len() / 76 * 2 + 2);
    for chunk in enc.as_bytes().chunks(76) {
        out.push_str(std::str::from_utf8(chunk).unwrap());
        out.push_str("\r\n");
    }
    out
}

/// RFC 5322 message with CRLF line endings; multipart/mixed when an
/// attachment is present, plain text otherwise.
pub fn compose_message(n: &Notification, to: &str, ctx: &ComposeContext) -> Vec<u8> {
    let mut m = String::new();
    let mut header = |k: &str, v: &str| {
        m.push_str(k);
        m.push_str(": ");
        m.push_str(v);
        m.push_str("\r\n");
    };
    header("From", &ctx.sender);
    header("To", to);
    header("Subject", &header_text(&n.subject));
    header("Date", &ctx.date.to_rfc2822());
    header("Message-ID", &format!("<{}.{}@doorwatch.local>", n.event_id, n.mode.name()));
    header("MIME-Version", "1.0");
    if n.mode == Mode::Alert {
        header("Importance", "high");
        header("X-Priority", "1");
    }
    let cte = if n.body.is_ascii() { "7bit" } else { "8bit" };
    match &n.attachment {
        None => {
            header("Content-Type", "text/plain; charset=utf-8");
            header("Content-Transfer-Encoding", cte);
            m.push_str("\r\n");
            m.push_str(&n.body);
            m.push_str("\r\n");
        }
        Some(a) => {
            let b = boundary(ctx.boundary_seed, &n.event_id);
            header("Content-Type", &format!("multipart/mixed; boundary=\"{b}\""));
            m.push_str("\r\n");
            m.push_str(&format!("--{b}\r\n"));
            m.push_str("Content-Type: text/plain; charset=utf-8\r\n");
            m.push_str(&format!("Content-Transfer-Encoding: {cte}\r\n\r\n"));
            m.push_str(&n.body);
            m.push_str("\r\n");
            m.push_str(&format!("--{b}\r\n"));
            m.push_str(&format!("Content-Type: {}; name=\"{}\"\r\n", a.media_type, a.filename));
            m.push_str("Content-Transfer-Encoding: base64\r\n");
            m.push_str(&format!("Content-Disposition: attachment; filename=\"{}\"\r\n\r\n", a.filename));
            m.push_str(&wrap76(&a.bytes));
            m.push_str(&format!("--{b}--\r\n"));
        }
    }
    m.into_bytes()
}

/// `number@gateway` for a recipient.
pub fn gateway_address(r: &Recipient) -> Result<String> {
    let phone = normalize_phone(
        r.phone_number
            .as_deref()
            .ok_or_else(|| Error::Config(format!("recipient {} has no phone number", r.name)))?,
    )?;
    let gw = r
        .carrier_gateway_domain
        .as_deref()
        .filter(|d| !d.trim().is_empty())
        .ok_or_else(|| Error::Config(format!("recipient {} has no carrier gateway", r.name)))?;
    Ok(format!("{phone}@{}", gw.trim()))
}

pub fn compose_mms(
    event: &ThreatEvent,
    recipient: &Recipient,
    image: Option<&[u8]>,
    ctx: &ComposeContext,
    cap: usize,
) -> Result<Vec<u8>> {
    let to = gateway_address(recipient)?;
    let n = Notification::for_event(event, Mode::Mms, image, cap)?;
    Ok(compose_message(&n, &to, ctx))
}

/// "Alert. <description>. Recorded at <time>."
pub fn compose_call_script(event: &ThreatEvent) -> String {
    format!(
        "Alert. {}. Recorded at {}.",
        event.description.trim_end_matches('.'),
        event.timestamp.format("%-I:%M %p UTC on %A, %B %-d, %Y")
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallPayload {
    pub to: String,
    pub script_text: String,
}

/// One message ready for a transport.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    pub event_id: String,
    pub mode: Mode,
    /// Position of the recipient in the config list.
    pub recipient_index: usize,
    pub to: String,
    pub from: Option<String>,
    pub bytes: Vec<u8>,
}

impl Outgoing {
    pub fn file_name(&self) -> String {
        let ext = if self.mode == Mode::Call { "json" } else { "eml" };
        format!("{}-{}-{:02}.{ext}", self.event_id, self.mode.name(), self.recipient_index)
    }
}

pub trait Transport: Send {
    fn send(&mut self, msg: &Outgoing) -> std::result::Result<(), String>;
}

/// Writes each message to `outbox/<event>-<mode>-<recipient>.eml` (`.json` for calls).
pub struct FileSink {
    outbox: PathBuf,
}

impl FileSink {
    pub fn new(outbox: &Path) -> Result<Self> {
        std::fs::create_dir_all(outbox).map_err(|e| Error::storage(outbox, e))?;
        Ok(FileSink {
            outbox: outbox.to_path_buf(),
        })
    }
}

impl Transport for FileSink {
    fn send(&mut self, msg: &Outgoing) -> std::result::Result<(), String> {
        crate::storage::write_atomic(&self.outbox.join(msg.file_name()), &msg.bytes).map_err(|e| e.to_string())
    }
}

fn env_value(name: &Option<String>) -> std::result::Result<Option<String>, String> {
    match name {
        None => Ok(None),
        Some(n) => std::env::var(n).map(Some).map_err(|_| format!("environment variable {n} is not set")),
    }
}

/// SMTP for mail modes, HTTP POST for calls.
pub struct NetworkTransport {
    smtp: Option<SmtpConfig>,
    call: Option<CallProviderConfig>,
}

impl NetworkTransport {
    pub fn new(cfg: &FeedbackConfig) -> Self {
        NetworkTransport {
            smtp: cfg.smtp.clone(),
            call: cfg.call_provider.clone(),
        }
    }

    fn send_smtp(&self, msg: &Outgoing) -> std::result::Result<(), String> {
        use lettre::Transport as _;
        let cfg = self.smtp.as_ref().ok_or("no smtp configuration")?;
        let builder = if cfg.starttls {
            lettre::SmtpTransport::starttls_relay(&cfg.host).map_err(|e| e.to_string())?
        } else {
            lettre::SmtpTransport::builder_dangerous(&cfg.host)
        };
        let mut builder = builder.port(cfg.port).timeout(Some(Duration::from_secs(20)));
        if let (Some(u), Some(p)) = (env_value(&cfg.username_env)?, env_value(&cfg.password_env)?) {
            builder = builder.credentials(lettre::transport::smtp::authentication::Credentials::new(u, p));
        }
        let from: lettre::Address = msg.from.as_deref().unwrap_or(&cfg.sender).parse().map_err(|e| format!("{e}"))?;
        let to: lettre::Address = msg.to.parse().map_err(|e| format!("{e}"))?;
        let envelope = lettre::address::Envelope::new(Some(from), vec![to]).map_err(|e| e.to_string())?;
        builder.build().send_raw(&envelope, &msg.bytes).map(|_| ()).map_err(|e| e.to_string())
    }

    fn send_call(&self, msg: &Outgoing) -> std::result::Result<(), String> {
        let cfg = self.call.as_ref().ok_or("no call provider configuration")?;
        let mut req = ureq::post(&cfg.endpoint)
            .timeout(Duration::from_secs(20))
            .set("Content-Type", "application/json");
        if let Some(token) = env_value(&cfg.auth_env)? {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        let body = std::str::from_utf8(&msg.bytes).map_err(|e| e.to_string())?;
        match req.send_string(body) {
            Ok(r) if (200..300).contains(&r.status()) => Ok(()),
            Ok(r) => Err(format!("provider answered {}", r.status())),
            Err(e) => Err(e.to_string()),
        }
    }
}

impl Transport for NetworkTransport {
    fn send(&mut self, msg: &Outgoing) -> std::result::Result<(), String> {
        match msg.mode {
            Mode::Call => self.send_call(msg),
            _ => self.send_smtp(msg),
        }
    }
}

pub fn make_transport(cfg: &FeedbackConfig) -> Result<Box<dyn Transport>> {
    Ok(match &cfg.transport {
        TransportConfig::Real => Box::new(NetworkTransport::new(cfg)),
        TransportConfig::FileSink { outbox } => Box::new(FileSink::new(outbox)?),
    })
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Records requested sleeps instead of waiting; optionally advances a manual clock.
#[derive(Default)]
pub struct VirtualSleeper {
    slept: Mutex<Vec<Duration>>,
    clock: Option<Arc<crate::clock::ManualClock>>,
}

impl VirtualSleeper {
    pub fn new(clock: Option<Arc<crate::clock::ManualClock>>) -> Self {
        VirtualSleeper {
            slept: Mutex::new(Vec::new()),
            clock,
        }
    }

    pub fn slept(&self) -> Vec<Duration> {
        self.slept.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

impl Sleeper for VirtualSleeper {
    fn sleep(&self, d: Duration) {
        self.slept.lock().unwrap_or_else(|p| p.into_inner()).push(d);
        if let Some(c) = &self.clock {
            c.advance(d);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryResult {
    pub event_id: String,
    pub mode: Mode,
    pub recipient: String,
    pub ok: bool,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub backoff_ms: Vec<u64>,
}

/// One attempt plus up to `policy.retries` retries, sleeping the backoff
/// before each retry.
pub fn send_with_retry(
    transport: &mut dyn Transport,
    msg: &Outgoing,
    recipient: &str,
    policy: &RetryPolicy,
    sleeper: &dyn Sleeper,
) -> DeliveryResult {
    let mut result = DeliveryResult {
        event_id: msg.event_id.clone(),
        mode: msg.mode,
        recipient: recipient.to_string(),
        ok: false,
        attempts: 0,
        error: None,
        backoff_ms: Vec::new(),
    };
    loop {
        result.attempts += 1;
        match transport.send(msg) {
            Ok(()) => {
                result.ok = true;
                result.error = None;
                return result;
            }
            Err(e) => {
                log::warn!(
                    "{} delivery to {} failed (attempt {}): {e}",
                    msg.mode.name(),
                    recipient,
                    result.attempts
                );
                result.error = Some(e);
            }
        }
        let retry = result.attempts - 1;
        if retry >= policy.retries {
            return result;
        }
        let d = policy.backoff(retry);
        result.backoff_ms.push(d.as_millis() as u64);
        sleeper.sleep(d);
    }
}

fn build_outgoing(
    event: &ThreatEvent,
    mode: Mode,
    index: usize,
    r: &Recipient,
    cfg: &FeedbackConfig,
    image: Option<&[u8]>,
    ctx: &ComposeContext,
) -> Result<Outgoing> {
    let (to, bytes) = match mode {
        Mode::Mms => (gateway_address(r)?, compose_mms(event, r, image, ctx, cfg.attachment_cap_bytes)?),
        Mode::Alert => {
            let to = gateway_address(r)?;
            let n = Notification::for_event(event, Mode::Alert, image, cfg.attachment_cap_bytes)?;
            let bytes = compose_message(&n, &to, ctx);
            (to, bytes)
        }
        Mode::Email => {
            let to = r
                .email
                .clone()
                .ok_or_else(|| Error::Config(format!("recipient {} has no email", r.name)))?;
            let n = Notification::for_event(event, Mode::Email, image, cfg.attachment_cap_bytes)?;
            let bytes = compose_message(&n, &to, ctx);
            (to, bytes)
        }
        Mode::Call => {
            let to = normalize_phone(r.phone_number.as_deref().unwrap_or(""))?;
            let payload = CallPayload {
                to: to.clone(),
                script_text: compose_call_script(event),
            };
            (to, serde_json::to_vec(&payload)?)
        }
    };
    Ok(Outgoing {
        event_id: event.event_id.clone(),
        mode,
        recipient_index: index,
        to,
        from: cfg.smtp.as_ref().map(|s| s.sender.clone()),
        bytes,
    })
}

/// Sends one message per enabled mode per recipient. Never fails: problems
/// become unsuccessful [`DeliveryResult`]s.
pub fn dispatch(
    event: &ThreatEvent,
    cfg: &FeedbackConfig,
    image: Option<&[u8]>,
    ctx: &ComposeContext,
    transport: &mut dyn Transport,
    sleeper: &dyn Sleeper,
) -> Vec<DeliveryResult> {
    let mut out = Vec::new();
    for &mode in &cfg.modes {
        for (i, r) in cfg.recipients.iter().enumerate() {
            match build_outgoing(event, mode, i, r, cfg, image, ctx) {
                Ok(msg) => out.push(send_with_retry(transport, &msg, &r.name, &cfg.retry, sleeper)),
                Err(e) => out.push(DeliveryResult {
                    event_id: event.event_id.clone(),
                    mode,
                    recipient: r.name.clone(),
                    ok: false,
                    attempts: 0,
                    error: Some(e.to_string()),
                    backoff_ms: Vec::new(),
                }),
            }
        }
    }
    out
}

/// Single-worker dispatch queue; delivery results are appended as JSONL.
pub struct NotifyQueue {
    tx: Mutex<Option<Sender<ThreatEvent>>>,
    worker: Mutex<Option<JoinHandle<()>>>,
}

impl NotifyQueue {
    pub fn start(
        cfg: FeedbackConfig,
        mut transport: Box<dyn Transport>,
        sleeper: Arc<dyn Sleeper>,
        clock: Arc<dyn Clock>,
        event_log: PathBuf,
        delivery_log: PathBuf,
    ) -> Result<Arc<Self>> {
        cfg.validate()?;
        if let Some(parent) = delivery_log.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::storage(parent, e))?;
        }
        let (tx, rx) = mpsc::channel::<ThreatEvent>();
        let worker = std::thread::Builder::new().name("notify".into()).spawn(move || {
            for event in rx {
                let image = std::fs::read(resolve_image_ref(&event_log, &event.image_ref)).ok();
                let ctx = ComposeContext {
                    date: clock.now(),
                    boundary_seed: uuid::Uuid::new_v4().as_u128() as u64,
                    sender: cfg.smtp.as_ref().map(|s| s.sender.clone()).unwrap_or_default(),
                };
                let results = dispatch(&event, &cfg, image.as_deref(), &ctx, transport.as_mut(), sleeper.as_ref());
                if let Err(e) = append_results(&delivery_log, &results) {
                    log::error!("cannot record deliveries: {e}");
                }
            }
        })?;
        Ok(Arc::new(NotifyQueue {
            tx: Mutex::new(Some(tx)),
            worker: Mutex::new(Some(worker)),
        }))
    }

    /// Drains queued notifications and stops the worker.
    pub fn shutdown(&self) {
        self.tx.lock().unwrap_or_else(|p| p.into_inner()).take();
        if let Some(h) = self.worker.lock().unwrap_or_else(|p| p.into_inner()).take() {
            let _ = h.join();
        }
    }
}

impl EventSink for NotifyQueue {
    fn submit(&self, event: &ThreatEvent) {
        if let Some(tx) = self.tx.lock().unwrap_or_else(|p| p.into_inner()).as_ref() {
            let _ = tx.send(event.clone());
        }
    }
}

fn append_results(path: &Path, results: &[DeliveryResult]) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::storage(path, e))?;
    let mut buf = String::new();
    for r in results {
        buf.push_str(&serde_json::to_string(r)?);
        buf.push('\n');
    }
    f.write_all(buf.as_bytes()).map_err(|e| Error::storage(path, e))
}

pub fn read_deliveries(path: &Path) -> Result<Vec<DeliveryResult>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::storage(path, e)),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn event(desc: &str, secs: i64) -> ThreatEvent {
        ThreatEvent {
            event_id: "3f2a9c4e-0000-4000-8000-000000000001".into(),
            timestamp: Utc.timestamp_opt(1_760_000_000 + secs, 0).unwrap(),
            camera_id: "cam-entrance".into(),
            location_label: "entrance".into(),
            identity: "John".into(),
            classes: vec![],
            description: desc.into(),
            image_ref: "images/x.png".into(),
            notified: true,
        }
    }

    fn recipient() -> Recipient {
        Recipient {
            name: "Owner".into(),
            email: Some("owner@example.com".into()),
            phone_number: Some("+1 (555) 010-0199".into()),
            carrier_gateway_domain: Some("mms.example.net".into()),
        }
    }

    fn ctx() -> ComposeContext {
        ComposeContext {
            date: Utc.with_ymd_and_hms(2026, 1, 2, 3, 4, 5).unwrap(),
            boundary_seed: 42,
            sender: "doorwatch@example.com".into(),
        }
    }

    #[test]
    fn phone_normalization() {
        assert_eq!(normalize_phone("+1 (555) 010-0199").unwrap(), "15550100199");
        assert!(normalize_phone("555-CALL").is_err());
        assert!(normalize_phone("").is_err());
    }

    #[test]
    fn text_only_mms_when_no_image() {
        let bytes = compose_mms(&event("John at the entrance talking over the phone", 0), &recipient(), None, &ctx(), DEFAULT_ATTACHMENT_CAP).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.contains("To: 15550100199@mms.example.net\r\n"));
        assert!(text.contains("Content-Type: text/plain; charset=utf-8\r\n"));
        assert!(!text.contains("multipart"));
        assert!(text.ends_with("\r\n\r\nJohn at the entrance talking over the phone\r\n"));
    }

    #[test]
    fn missing_gateway_is_config_error() {
        let mut r = recipient();
        r.carrier_gateway_domain = None;
        assert!(matches!(compose_mms(&event("d", 0), &r, None, &ctx(), 10), Err(Error::Config(_))));
    }

    #[test]
    fn multipart_is_deterministic() {
        let png = raster::encode_png(&image::DynamicImage::new_rgb8(4, 4)).unwrap();
        let a = compose_mms(&event("d", 0), &recipient(), Some(&png), &ctx(), DEFAULT_ATTACHMENT_CAP).unwrap();
        let b = compose_mms(&event("d", 0), &recipient(), Some(&png), &ctx(), DEFAULT_ATTACHMENT_CAP).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        let bnd = boundary(42, "3f2a9c4e-0000-4000-8000-000000000001");
        assert!(text.contains(&format!("boundary=\"{bnd}\"")));
        assert!(text.ends_with(&format!("--{bnd}--\r\n")));
        let mut other = ctx();
        other.boundary_seed = 43;
        assert_ne!(compose_mms(&event("d", 0), &recipient(), Some(&png), &other, DEFAULT_ATTACHMENT_CAP).unwrap(), text.into_bytes());
    }

    #[test]
    fn non_ascii_subject_is_encoded() {
        let mut e = event("Zoë at the entrance", 0);
        e.identity = "Zoë".into();
        let text = String::from_utf8(compose_mms(&e, &recipient(), None, &ctx(), 10).unwrap()).unwrap();
        assert!(text.contains("Subject: =?UTF-8?B?"));
        assert!(text.contains("Content-Transfer-Encoding: 8bit"));
    }

    #[test]
    fn call_scripts() {
        let s = compose_call_script(&event("John at the entrance talking over the phone", 0));
        assert!(s.starts_with("Alert. John at the entrance talking over the phone. Recorded at "));
        assert!(s.ends_with('.'));
        let other = compose_call_script(&event("A person at the driveway", 3600));
        assert_ne!(s, other);
        assert!(other.starts_with("Alert. A person at the driveway. Recorded at "));
    }

    struct Scripted {
        fail_first: u32,
        calls: u32,
    }

    impl Transport for Scripted {
        fn send(&mut self, _msg: &Outgoing) -> std::result::Result<(), String> {
            self.calls += 1;
            if self.calls <= self.fail_first {
                Err("connection refused".into())
            } else {
                Ok(())
            }
        }
    }

    fn outgoing() -> Outgoing {
        Outgoing {
            event_id: "e".into(),
            mode: Mode::Email,
            recipient_index: 0,
            to: "a@b.c".into(),
            from: None,
            bytes: b"x".to_vec(),
        }
    }

    #[test]
    fn retry_succeeds_on_third_attempt() {
        let sleeper = VirtualSleeper::new(None);
        let mut t = Scripted { fail_first: 2, calls: 0 };
        let r = send_with_retry(&mut t, &outgoing(), "Owner", &RetryPolicy::default(), &sleeper);
        assert!(r.ok);
        assert_eq!(r.attempts, 3);
        assert_eq!(sleeper.slept(), vec![Duration::from_secs(1), Duration::from_secs(2)]);
    }

    #[test]
    fn retry_exhaustion_backoff_order() {
        let clock = Arc::new(crate::clock::ManualClock::new(Utc.timestamp_opt(0, 0).unwrap()));
        let sleeper = VirtualSleeper::new(Some(clock.clone()));
        let mut t = Scripted { fail_first: u32::MAX, calls: 0 };
        let r = send_with_retry(&mut t, &outgoing(), "Owner", &RetryPolicy::default(), &sleeper);
        assert!(!r.ok);
        assert_eq!(r.attempts, 4);
        assert_eq!(r.backoff_ms, vec![1000, 2000, 4000]);
        assert_eq!(clock.now(), Utc.timestamp_opt(7, 0).unwrap());
        assert_eq!(r.error.as_deref(), Some("connection refused"));
    }

    #[test]
    fn config_validation() {
        let mut cfg = FeedbackConfig {
            modes: vec![Mode::Mms],
            recipients: vec![recipient()],
            smtp: Some(SmtpConfig {
                host: "smtp.example.com".into(),
                port: 587,
                sender: "d@example.com".into(),
                starttls: true,
                username_env: Some("SMTP_USER".into()),
                password_env: Some("SMTP_PASS".into()),
            }),
            call_provider: None,
            transport: TransportConfig::Real,
            attachment_cap_bytes: DEFAULT_ATTACHMENT_CAP,
            retry: RetryPolicy::default(),
        };
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.env_refs(), vec!["SMTP_USER".to_string(), "SMTP_PASS".to_string()]);
        cfg.modes.push(Mode::Call);
        assert!(cfg.validate().is_err());
        cfg.modes.pop();
        cfg.recipients[0].phone_number = Some("call me".into());
        assert!(cfg.validate().is_err());
    }
}
