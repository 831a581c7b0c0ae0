//! Transports carrying the JSON wire format: in-process stub, child-process
//! stdio, and HTTP `POST /infer`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use super::stub::StubBackend;
use super::wire::{Hello, Request, Response, HELLO_REQUEST};
use crate::error::{Error, Result};

/// One strict request/response exchange with a backend.
pub trait Exchange: Send {
    fn hello(&mut self, timeout: Duration) -> Result<Hello>;
    fn call(&mut self, req: &Request, timeout: Duration) -> Result<Response>;
}

impl Exchange for StubBackend {
    fn hello(&mut self, _timeout: Duration) -> Result<Hello> {
        Ok(StubBackend::hello(self))
    }

    fn call(&mut self, req: &Request, _timeout: Duration) -> Result<Response> {
        // Round-trip through the text form so the in-process path sees exactly
        // what a sidecar would.
        let line = serde_json::to_string(req)?;
        parse_response(&self.handle_line(&line))
    }
}

fn parse_response(line: &str) -> Result<Response> {
    let value: serde_json::Value = serde_json::from_str(line)
        .map_err(|e| Error::BackendUnavailable(format!("unparseable reply: {e}")))?;
    if value.get("id").and_then(|v| v.as_str()).is_none() {
        return Err(Error::BackendUnavailable("reply is missing its id".into()));
    }
    serde_json::from_value(value).map_err(|e| Error::BackendUnavailable(format!("reply violates schema: {e}")))
}

/// Sidecar process speaking newline-delimited JSON on stdin/stdout.
pub struct StdioExchange {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
}

impl StdioExchange {
    pub fn spawn(cmd: &[String]) -> Result<Self> {
        let (program, args) = cmd
            .split_first()
            .ok_or_else(|| Error::Config("backend command is empty".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::BackendUnavailable(format!("cannot start {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::Builder::new()
            .name("backend-stdout".into())
            .spawn(move || {
                for line in BufReader::new(stdout).lines() {
                    let Ok(line) = line else { break };
                    if tx.send(line).is_err() {
                        break;
                    }
                }
            })?;
        Ok(StdioExchange {
            child,
            stdin,
            lines: rx,
        })
    }

    fn send_line(&mut self, line: &str) -> Result<()> {
        writeln!(self.stdin, "{line}")
            .and_then(|_| self.stdin.flush())
            .map_err(|e| Error::BackendUnavailable(format!("write to backend failed: {e}")))
    }

    fn recv_line(&mut self, deadline: Instant) -> Result<String> {
        let left = deadline.saturating_duration_since(Instant::now());
        match self.lines.recv_timeout(left) {
            Ok(l) => Ok(l),
            Err(RecvTimeoutError::Timeout) => Err(Error::BackendUnavailable("backend timed out".into())),
            Err(RecvTimeoutError::Disconnected) => Err(Error::BackendUnavailable("backend closed its output".into())),
        }
    }
}

impl Exchange for StdioExchange {
    fn hello(&mut self, timeout: Duration) -> Result<Hello> {
        let deadline = Instant::now() + timeout;
        self.send_line(HELLO_REQUEST)?;
        let line = self.recv_line(deadline)?;
        serde_json::from_str(&line).map_err(|e| Error::BackendUnavailable(format!("bad hello reply: {e}")))
    }

    fn call(&mut self, req: &Request, timeout: Duration) -> Result<Response> {
        let deadline = Instant::now() + timeout;
        self.send_line(&serde_json::to_string(req)?)?;
        loop {
            let line = self.recv_line(deadline)?;
            let resp = parse_response(&line)?;
            match resp.id.as_deref() {
                Some(id) if id == req.id => return Ok(resp),
                Some("?") => {
                    return Err(Error::BackendUnavailable(
                        resp.error.unwrap_or_else(|| "backend rejected request".into()),
                    ))
                }
                Some(other) => {
                    // Late reply to a request that already timed out.
                    log::debug!("dropping stale backend reply {other}");
                }
                None => unreachable!("parse_response checks id"),
            }
        }
    }
}

impl Drop for StdioExchange {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Backend reachable at `POST {endpoint}/infer`.
pub struct HttpExchange {
    url: String,
}

impl HttpExchange {
    pub fn new(endpoint: &str) -> Self {
        let base = endpoint.trim_end_matches('/');
        let url = if base.ends_with("/infer") {
            base.to_string()
        } else {
            format!("{base}/infer")
        };
        HttpExchange { url }
    }

    fn post(&self, body: &str, timeout: Duration) -> Result<String> {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        let resp = agent
            .post(&self.url)
            .set("Content-Type", "application/json")
            .send_string(body)
            .map_err(|e| Error::BackendUnavailable(format!("POST {}: {e}", self.url)))?;
        resp.into_string()
            .map_err(|e| Error::BackendUnavailable(format!("reading reply: {e}")))
    }
}

impl Exchange for HttpExchange {
    fn hello(&mut self, timeout: Duration) -> Result<Hello> {
        let text = self.post(HELLO_REQUEST, timeout)?;
        serde_json::from_str(&text).map_err(|e| Error::BackendUnavailable(format!("bad hello reply: {e}")))
    }

    fn call(&mut self, req: &Request, timeout: Duration) -> Result<Response> {
        let text = self.post(&serde_json::to_string(req)?, timeout)?;
        let resp = parse_response(text.trim())?;
        if resp.id.as_deref() != Some(req.id.as_str()) {
            return Err(Error::BackendUnavailable(format!(
                "reply id {:?} does not match request {}",
                resp.id, req.id
            )));
        }
        Ok(resp)
    }
}
